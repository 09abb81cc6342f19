/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_playground_free: (a: number, b: number) => void;
export const __wbg_session_free: (a: number, b: number) => void;
export const expert_rollout: (a: number, b: number, c: number) => [number, number, number, number];
export const playground_best: (a: number) => [number, number];
export const playground_cells: (a: number) => number;
export const playground_insert: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const playground_metrics: (a: number) => [number, number];
export const playground_new: (a: number, b: number) => [number, number, number];
export const playground_thresholds: (a: number) => [number, number];
export const session_cells: (a: number) => number;
export const session_finished: (a: number) => number;
export const session_heatmap: (a: number) => [number, number];
export const session_new: (a: number, b: number) => [number, number, number];
export const session_step: (a: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
