/* tslint:disable */
/* eslint-disable */

/**
 * Truthfulness check over the grid `1/denom ..= n/denom`, plus a per-cell
 * count of profitable gateway misreports for a heat map.
 */
export function dsic_grid(rule: string, utility: string, n: number, denom: number): string;

/**
 * Reward after each round when both sides bid honestly from `rho_1` and the
 * gateway achieves the accuracies in `accs_json` (a JSON array of counts).
 */
export function reward_curve(rho_1: string, c: string, accs_json: string): string;

/**
 * Runs a bundled scenario by name, or a scenario given as TOML text, and
 * returns the JSON run report. A negative seed keeps the scenario's own.
 */
export function run_scenario(scenario: string, seed: number): string;

/**
 * Names of the bundled scenarios as a JSON array.
 */
export function scenario_names(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly dsic_grid: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly reward_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly run_scenario: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scenario_names: () => [number, number];
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
