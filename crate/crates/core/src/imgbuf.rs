//! Row-major RGB float images.

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<F = f32> {
    pub width: usize,
    pub height: usize,
    /// `height × width × 3`, row-major.
    pub data: Vec<F>,
}

impl<F: Real> Image<F> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![F::zero(); width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [F; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [F; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [F; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn cast<G: Real>(&self) -> Image<G> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }

    /// Quantise to 8-bit with round-to-nearest after clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * 3);
        Self {
            width,
            height,
            data: bytes.iter().map(|&b| F::of(b as f64 / 255.0)).collect(),
        }
    }
}
