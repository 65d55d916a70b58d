/* tslint:disable */
/* eslint-disable */

export class Simulation {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Advances `steps` steps; each call draws a fresh Wiener chunk.
     */
    advance(steps: number): void;
    /**
     * `|Φ|²`.
     */
    energy(): number;
    /**
     * `⟨𝒜Φ, Φ⟩`.
     */
    enstrophy(): number;
    constructor(config: string);
    /**
     * Vorticity of the first field (or the field itself when scalar) on
     * the collocation grid, row-major.
     */
    picture(): Float64Array;
    side(): number;
    time(): number;
}

/**
 * Runs every structural check on the configured model and noise.
 */
export function conditions(config: string, samples: number): string;

/**
 * Strong-order study; returns `[order, dt₀, err₀, dt₁, err₁, ...]`.
 */
export function strong_order(config: string, refinements: number, paths: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_simulation_free: (a: number, b: number) => void;
    readonly conditions: (a: number, b: number, c: number) => [number, number, number, number];
    readonly simulation_advance: (a: number, b: number) => [number, number];
    readonly simulation_energy: (a: number) => number;
    readonly simulation_enstrophy: (a: number) => number;
    readonly simulation_new: (a: number, b: number) => [number, number, number];
    readonly simulation_picture: (a: number) => [number, number, number, number];
    readonly simulation_side: (a: number) => number;
    readonly simulation_time: (a: number) => number;
    readonly strong_order: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
