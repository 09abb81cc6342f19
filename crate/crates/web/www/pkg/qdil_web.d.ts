/* tslint:disable */
/* eslint-disable */

export class Playground {
    free(): void;
    [Symbol.dispose](): void;
    best(): Float64Array;
    cells(): number;
    /**
     * Inserts a solution and returns the outcome as JSON.
     */
    insert(fitness: number, x: number, y: number): string;
    metrics(): string;
    constructor(cells: number, alpha: number);
    thresholds(): Float64Array;
}

/**
 * A small imitation run on PointFlyer, advanced one iteration at a time.
 */
export class Session {
    free(): void;
    [Symbol.dispose](): void;
    cells(): number;
    finished(): boolean;
    /**
     * True-reward fitness of the best policy found in each cell.
     */
    heatmap(): Float64Array;
    /**
     * `q` is the empty-cell bonus; 0 turns it off.
     */
    constructor(seed: number, q: number);
    /**
     * Runs one iteration and returns its metrics as JSON.
     */
    step(): string;
}

/**
 * Rolls out the scripted PointFlyer expert aimed at measure `(tx, ty)`.
 * Returns `{ path: [[x, y], ...], measure: [..], ret }` as JSON.
 */
export function expert_rollout(tx: number, ty: number, horizon: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_playground_free: (a: number, b: number) => void;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly expert_rollout: (a: number, b: number, c: number) => [number, number, number, number];
    readonly playground_best: (a: number) => [number, number];
    readonly playground_cells: (a: number) => number;
    readonly playground_insert: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly playground_metrics: (a: number) => [number, number];
    readonly playground_new: (a: number, b: number) => [number, number, number];
    readonly playground_thresholds: (a: number) => [number, number];
    readonly session_cells: (a: number) => number;
    readonly session_finished: (a: number) => number;
    readonly session_heatmap: (a: number) => [number, number];
    readonly session_new: (a: number, b: number) => [number, number, number];
    readonly session_step: (a: number) => [number, number, number, number];
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
