/* tslint:disable */
/* eslint-disable */
export class Demo {
  free(): void;
  resolution(): number;
  /**
   * `[[x, y], ...]` of the access points.
   */
  access_points(): string;
  access_point_count(): number;
  constructor(seed: bigint, floor: number);
  run(direction: string, shadowing_db: number, gyro_bias_deg_s: number, k: number): string;
  scan(index: number): string;
  /**
   * Cell codes row by row from the bottom: 0 free, 1 wall, 2 unknown.
   */
  cells(): Uint8Array;
  width(): number;
  height(): number;
  heatmap(ap: number, stride: number): Float32Array;
  origin_x(): number;
  origin_y(): number;
  /**
   * The last run's LiDAR map as cell codes, same layout as `cells`.
   */
  slam_map(): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
  readonly memory: WebAssembly.Memory;
  readonly __wbg_demo_free: (a: number, b: number) => void;
  readonly demo_access_point_count: (a: number) => number;
  readonly demo_access_points: (a: number) => [number, number, number, number];
  readonly demo_cells: (a: number) => [number, number];
  readonly demo_heatmap: (a: number, b: number, c: number) => [number, number, number, number];
  readonly demo_height: (a: number) => number;
  readonly demo_new: (a: bigint, b: number) => [number, number, number];
  readonly demo_origin_x: (a: number) => number;
  readonly demo_origin_y: (a: number) => number;
  readonly demo_resolution: (a: number) => number;
  readonly demo_run: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
  readonly demo_scan: (a: number, b: number) => [number, number, number, number];
  readonly demo_slam_map: (a: number) => [number, number, number, number];
  readonly demo_width: (a: number) => number;
  readonly __wbindgen_export_0: WebAssembly.Table;
  readonly __externref_table_dealloc: (a: number) => void;
  readonly __wbindgen_free: (a: number, b: number, c: number) => void;
  readonly __wbindgen_malloc: (a: number, b: number) => number;
  readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
