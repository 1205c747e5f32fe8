/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_access_point_count: (a: number) => number;
export const demo_access_points: (a: number) => [number, number, number, number];
export const demo_cells: (a: number) => [number, number];
export const demo_heatmap: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_height: (a: number) => number;
export const demo_new: (a: bigint, b: number) => [number, number, number];
export const demo_origin_x: (a: number) => number;
export const demo_origin_y: (a: number) => number;
export const demo_resolution: (a: number) => number;
export const demo_run: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const demo_scan: (a: number, b: number) => [number, number, number, number];
export const demo_slam_map: (a: number) => [number, number, number, number];
export const demo_width: (a: number) => number;
export const __wbindgen_export_0: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
