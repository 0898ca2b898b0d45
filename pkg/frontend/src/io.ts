/**
 * Readers for the simulator's delimited-text outputs.
 *
 * Every file starts with `# key=value` header lines followed by one
 * tab-separated column-name row and data rows.  The `scenario_hash` header
 * identifies the producing sweep; figures refuse to mix files from
 * different scenarios.
 */

import * as fs from "node:fs";

export class InputError extends Error {}

export interface Table {
  path: string;
  header: Record<string, string>;
  columns: string[];
  rows: string[][];
}

export function readTsv(path: string): Table {
  if (!fs.existsSync(path)) {
    throw new InputError(`input file does not exist: ${path}`);
  }
  const text = fs.readFileSync(path, "utf-8");
  const header: Record<string, string> = {};
  const rows: string[][] = [];
  let columns: string[] | null = null;
  for (const line of text.split("\n")) {
    if (line === "") continue;
    if (line.startsWith("#")) {
      const body = line.slice(1).trim();
      const eq = body.indexOf("=");
      if (eq > 0) header[body.slice(0, eq)] = body.slice(eq + 1);
      continue;
    }
    if (columns === null) {
      columns = line.split("\t");
      continue;
    }
    rows.push(line.split("\t"));
  }
  if (columns === null) {
    throw new InputError(`no column header in ${path}`);
  }
  return { path, header, columns, rows };
}

export function numericColumn(table: Table, name: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new InputError(`file ${table.path}: missing column '${name}'`);
  }
  return table.rows.map((r, k) => {
    const v = Number(r[idx]);
    if (Number.isNaN(v)) {
      throw new InputError(`file ${table.path}: row ${k + 1}: bad number '${r[idx]}' in '${name}'`);
    }
    return v;
  });
}

export function checkSameScenario(tables: Table[]): string {
  const hashes = new Set(tables.map((t) => t.header["scenario_hash"] ?? ""));
  if (hashes.size > 1) {
    const detail = tables.map((t) => `${t.path}=${t.header["scenario_hash"]}`).join(", ");
    throw new InputError(`refusing to mix scenario hashes: ${detail}`);
  }
  const only = [...hashes][0];
  if (!only) {
    throw new InputError("inputs carry no scenario_hash header");
  }
  return only;
}

export function readJson(path: string): unknown {
  if (!fs.existsSync(path)) {
    throw new InputError(`input file does not exist: ${path}`);
  }
  try {
    return JSON.parse(fs.readFileSync(path, "utf-8"));
  } catch (err) {
    throw new InputError(`not valid JSON: ${path}: ${(err as Error).message}`);
  }
}
