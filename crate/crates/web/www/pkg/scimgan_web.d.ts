/* tslint:disable */
/* eslint-disable */

/**
 * Learning rate at the start of every epoch, plus the final value.
 */
export function lr_curve(base_lr: number, constant_epochs: number, decay_epochs: number): Float64Array;

/**
 * `[shared-latent networks, pairwise networks]` needed for `n` domains.
 */
export function pair_counts(n_domains: number): Uint32Array;

/**
 * Losses of a single quartet of 2-D embeddings `[x1, y1, .., x4, y4]`
 * (anchor, positive, first negative, second negative).
 *
 * Returns `[improved, quartet, triplet, d12, d13, d43]` followed by the
 * eight gradient components of the improved quartet loss.
 */
export function quartet_explorer(points: Float64Array, tau1: number, tau2: number, triplet_margin: number): Float64Array;

/**
 * RGBA pixels of one identity seen by every camera (rows) in every domain
 * (columns), noise-free with a neutral pose. The image is
 * `16·n_domains` wide and `16·cameras` high.
 */
export function render_identity_grid(seed: number, identity: number, n_identities: number, n_domains: number, cameras: number, camera_strength: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly lr_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly pair_counts: (a: number) => [number, number, number, number];
    readonly quartet_explorer: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly render_identity_grid: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
