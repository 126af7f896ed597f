/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_refineview_free: (a: number, b: number) => void;
export const demo_depth: (a: number) => number;
export const demo_new: (a: number, b: bigint) => number;
export const demo_refine: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demo_render: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
export const demo_side: (a: number) => number;
export const demo_slice: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_sphere_side: (a: number) => number;
export const refineview_argmax_slice: (a: number) => [number, number];
export const refineview_dice_after: (a: number) => number;
export const refineview_dice_before: (a: number) => number;
export const refineview_refined_slice: (a: number) => [number, number];
export const refineview_truth_slice: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
