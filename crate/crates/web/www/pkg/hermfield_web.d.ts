/* tslint:disable */
/* eslint-disable */

/**
 * Regime verdict for an experiment config given as TOML text.
 */
export function classify_config(text: string): string;

/**
 * Exact fourth cumulant of `sum H_q(X_k)` for fGn over `n = 2^4..2^max_exp`,
 * next to the rate function where it applies. JSON rows `{n, kappa4, exact, g}`.
 */
export function kappa_curve(hurst: number, q: number, max_exp: number): string;

/**
 * One draw of a separable field on an `n x n` grid, row-major.
 */
export function sample_field(family1: string, param1: number, family2: string, param2: number, n: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly classify_config: (a: number, b: number) => [number, number, number, number];
    readonly kappa_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly sample_field: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
