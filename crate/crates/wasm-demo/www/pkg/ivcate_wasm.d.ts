/* tslint:disable */
/* eslint-disable */

/**
 * Interval coverage of DMLATEIV and DRIV over repeated samples of the
 * coverage design.
 */
export function coverage_experiment(n: number, replicates: number, seed: number): string;

/**
 * Final-stage displacement as each nuisance is perturbed, for every loss
 * and direction pair.
 */
export function orthogonality_curves(n: number, seed: number): string;

/**
 * Draws a synthetic sample, fits one estimator, and returns the report with
 * a thinned set of true and estimated effects for plotting.
 */
export function simulate_and_estimate(family: string, n: number, seed: number, variant: string, space: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly coverage_experiment: (a: number, b: number, c: number) => [number, number, number, number];
    readonly orthogonality_curves: (a: number, b: number) => [number, number, number, number];
    readonly simulate_and_estimate: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
