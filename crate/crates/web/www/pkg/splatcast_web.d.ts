/* tslint:disable */
/* eslint-disable */

export class Viewer {
    free(): void;
    [Symbol.dispose](): void;
    boundary(): number;
    clear_forecast(): void;
    /**
     * Returns the number of clusters found.
     */
    cluster_motion(k: number, seed: number): number;
    forecast_error(t: number): number;
    gaussians(): number;
    has_forecast(): boolean;
    height(): number;
    constructor(generator: string, seed: number, size: number);
    /**
     * RGBA bytes for a canvas `ImageData`.
     */
    render(t: number, azimuth: number, elevation: number): Uint8Array;
    set_cluster_colors(on: boolean): void;
    train_forecast(iterations: number, seed: number): number;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_viewer_free: (a: number, b: number) => void;
    readonly viewer_boundary: (a: number) => number;
    readonly viewer_clear_forecast: (a: number) => void;
    readonly viewer_cluster_motion: (a: number, b: number, c: number) => [number, number, number];
    readonly viewer_forecast_error: (a: number, b: number) => number;
    readonly viewer_gaussians: (a: number) => number;
    readonly viewer_has_forecast: (a: number) => number;
    readonly viewer_height: (a: number) => number;
    readonly viewer_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly viewer_render: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly viewer_set_cluster_colors: (a: number, b: number) => void;
    readonly viewer_train_forecast: (a: number, b: number, c: number) => [number, number, number];
    readonly viewer_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
