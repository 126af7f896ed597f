/* tslint:disable */
/* eslint-disable */

/**
 * Phantoms generated once and reused by every call.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    depth(): number;
    /**
     * `n`: edge of the abdomen phantom in voxels; the sphere phantom is fixed at 20.
     */
    constructor(n: number, seed: bigint);
    /**
     * Runs the CRF on the sphere phantom and returns [`RefineView`].
     */
    refine(w_pos: number, w_bil: number, iterations: number): RefineView;
    render(width: number, height: number, yaw_deg: number, pitch_deg: number, level: number, window: number, brightness: number, clip: number): Uint8Array;
    side(): number;
    slice(z: number, level: number, window: number): Uint8Array;
    sphere_side(): number;
}

export class RefineView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    argmax_slice(): Uint8Array;
    refined_slice(): Uint8Array;
    truth_slice(): Uint8Array;
    readonly dice_after: number;
    readonly dice_before: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_refineview_free: (a: number, b: number) => void;
    readonly demo_depth: (a: number) => number;
    readonly demo_new: (a: number, b: bigint) => number;
    readonly demo_refine: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_render: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly demo_side: (a: number) => number;
    readonly demo_slice: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_sphere_side: (a: number) => number;
    readonly refineview_argmax_slice: (a: number) => [number, number];
    readonly refineview_dice_after: (a: number) => number;
    readonly refineview_dice_before: (a: number) => number;
    readonly refineview_refined_slice: (a: number) => [number, number];
    readonly refineview_truth_slice: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
