/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_simulation_free: (a: number, b: number) => void;
export const conditions: (a: number, b: number, c: number) => [number, number, number, number];
export const simulation_advance: (a: number, b: number) => [number, number];
export const simulation_energy: (a: number) => number;
export const simulation_enstrophy: (a: number) => number;
export const simulation_new: (a: number, b: number) => [number, number, number];
export const simulation_picture: (a: number) => [number, number, number, number];
export const simulation_side: (a: number) => number;
export const simulation_time: (a: number) => number;
export const strong_order: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
