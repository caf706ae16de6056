use std::path::Path;

use crate::error::Result;
use crate::imgbuf::Image;
use crate::real::Real;

/// Reads an 8-bit PNG (any colour type is converted to RGB) as floats in [0, 1].
pub fn read_png<F: Real>(path: &Path) -> Result<Image<F>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_rgb8(w as usize, h as usize, img.as_raw()))
}

/// Writes an 8-bit RGB PNG after clamping to [0, 1].
pub fn write_png<F: Real>(img: &Image<F>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    image::save_buffer_with_format(
        path,
        &img.to_rgb8(),
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )?;
    Ok(())
}
