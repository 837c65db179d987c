/* tslint:disable */
/* eslint-disable */

/**
 * The four joint-measurement wavefunctions sampled on `[x_from, x_to]`:
 * first `points` x values, then four rows of `points` amplitudes, then the
 * eight joint eigenvalues `(λ1, λ2)` per outcome.
 */
export function joint_basis_wavefunctions(theta2: number, x_from: number, x_to: number, points: number): Float64Array;

/**
 * Rows of `[theta2, delta, kappa, gamma, beta, eta3, eta4]` over a separation grid.
 */
export function overlap_curve(from: number, to: number, steps: number): Float64Array;

/**
 * Three rows (direct imaging, SPADE, joint) of `[F11, F22, QFI11, QFI22, delta1, delta2]`.
 * The joint row is NaN where the SLDs admit no commuting gauge.
 */
export function regrets(theta2: number, pixel_width: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly joint_basis_wavefunctions: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly overlap_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly regrets: (a: number, b: number) => [number, number, number, number];
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
