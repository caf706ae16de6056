/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_viewer_free: (a: number, b: number) => void;
export const viewer_boundary: (a: number) => number;
export const viewer_clear_forecast: (a: number) => void;
export const viewer_cluster_motion: (a: number, b: number, c: number) => [number, number, number];
export const viewer_forecast_error: (a: number, b: number) => number;
export const viewer_gaussians: (a: number) => number;
export const viewer_has_forecast: (a: number) => number;
export const viewer_height: (a: number) => number;
export const viewer_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const viewer_render: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const viewer_set_cluster_colors: (a: number, b: number) => void;
export const viewer_train_forecast: (a: number, b: number, c: number) => [number, number, number];
export const viewer_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
