/**
 * Figure builders: each returns a deterministic ECharts option object plus
 * the values needed for assertions (e.g. KS gaps of CDF overlays).
 */

import type { EChartsOption, SeriesOption } from "echarts";
import { analyticCdf, empiricalCdf, ksDistance, DistParams } from "./cdfmath";
import { InputError, Table, checkSameScenario, numericColumn, readJson, readTsv } from "./io";
import type { FigureSpec } from "./types";

const CONDITION_COLORS: Record<string, string> = {
  low: "#1f77b4",
  medium: "#ff7f0e",
  high: "#d62728",
};
const FALLBACK_COLORS = ["#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

function colorFor(label: string, index: number): string {
  return CONDITION_COLORS[label] ?? FALLBACK_COLORS[index % FALLBACK_COLORS.length];
}

function baseOption(title: string, xName: string, yName: string): EChartsOption {
  return {
    animation: false,
    backgroundColor: "#ffffff",
    title: { text: title, left: "center", textStyle: { fontSize: 14 } },
    legend: { bottom: 0, textStyle: { fontSize: 11 } },
    grid: { left: 70, right: 25, top: 45, bottom: 60 },
    xAxis: { type: "value", name: xName, nameLocation: "middle", nameGap: 28 },
    yAxis: { type: "value", name: yName, nameLocation: "middle", nameGap: 48 },
    series: [],
  };
}

export interface BuiltFigure {
  option: EChartsOption;
  scenarioHash: string;
  /** per-input KS gap of the analytic overlay; only set for cdf panels */
  ksGaps?: Record<string, number>;
}

function groupedByAnchor(table: Table, anchor?: number): Map<number, number[]> {
  const anchors = numericColumn(table, "anchor_t_s");
  const out = new Map<number, number[]>();
  anchors.forEach((a, i) => {
    if (anchor !== undefined && Math.abs(a - anchor) > 1e-12) return;
    if (!out.has(a)) out.set(a, []);
    out.get(a)!.push(i);
  });
  if (out.size === 0) {
    throw new InputError(`file ${table.path}: no rows at anchor ${anchor}`);
  }
  return out;
}

export function buildTacf(spec: Extract<FigureSpec, { kind: "tacf" }>): BuiltFigure {
  const tables = spec.inputs.map((i) => readTsv(i.path));
  const hash = checkSameScenario(tables);
  const option = baseOption("Time autocorrelation by traffic density",
    "time separation (ms)", "|TACF|");
  const series: SeriesOption[] = [];
  tables.forEach((table, idx) => {
    const lag = numericColumn(table, "lag_s");
    const mag = numericColumn(table, "abs");
    for (const [anchor, rows] of groupedByAnchor(table, spec.anchor_s)) {
      series.push({
        type: "line",
        name: `${spec.inputs[idx].label}, t=${anchor}s`,
        showSymbol: false,
        lineStyle: { width: 2, type: anchor === 0 ? "solid" : "dashed" },
        color: colorFor(spec.inputs[idx].label, idx),
        data: rows.map((r) => [lag[r] * 1e3, mag[r]]),
      });
    }
  });
  option.series = series;
  return { option, scenarioHash: hash };
}

export function buildDpsd(spec: Extract<FigureSpec, { kind: "dpsd" }>): BuiltFigure {
  const tables = spec.inputs.map((i) => readTsv(i.path));
  const hash = checkSameScenario(tables);
  const option = baseOption("Doppler power spectral density",
    "Doppler frequency (Hz)", "power (dB)");
  const series: SeriesOption[] = [];
  tables.forEach((table, idx) => {
    const freq = numericColumn(table, "doppler_hz");
    const power = numericColumn(table, "power");
    for (const [anchor, rows] of groupedByAnchor(table, spec.anchor_s)) {
      const peak = Math.max(...rows.map((r) => power[r]));
      if (peak <= 0) continue;
      series.push({
        type: "line",
        name: `${spec.inputs[idx].label}, t=${anchor}s`,
        showSymbol: false,
        lineStyle: { width: 1.5, type: anchor === 0 ? "solid" : "dashed" },
        color: colorFor(spec.inputs[idx].label, idx),
        data: rows.map((r) => [
          freq[r],
          Math.max(10 * Math.log10(power[r] / peak || 1e-300), spec.floor_db),
        ]),
      });
    }
  });
  option.series = series;
  return { option, scenarioHash: hash };
}

export function buildTsiCdf(spec: Extract<FigureSpec, { kind: "tsi-cdf" }>): BuiltFigure {
  const tables = spec.inputs.map((i) => readTsv(i.path));
  const hash = checkSameScenario(tables);
  const option = baseOption("Stationarity interval CDFs", "TSI (ms)", "CDF");
  const series: SeriesOption[] = [];
  tables.forEach((table, idx) => {
    const tsi = numericColumn(table, "tsi_s");
    const steps = empiricalCdf(tsi);
    const stride = Math.max(1, Math.floor(steps.length / 500));
    series.push({
      type: "line",
      name: spec.inputs[idx].label,
      showSymbol: false,
      step: "end",
      color: colorFor(spec.inputs[idx].label, idx),
      data: steps
        .filter((_, k) => k % stride === 0 || k === steps.length - 1)
        .map(([x, f]) => [x * 1e3, f]),
    });
  });
  option.series = series;
  return { option, scenarioHash: hash };
}

interface TableTree {
  schema_version: number;
  families: Record<string, Record<string, Record<string, Record<string, string> | null>>>;
}

function lookupParams(tree: TableTree, family: string, sclass: string,
                      condition: string): DistParams {
  const rec = tree.families?.[family]?.[sclass]?.[condition];
  if (!rec) {
    throw new InputError(`parameter table has no row (${family}, ${sclass}, ${condition})`);
  }
  const params: Record<string, number | string> = { distribution: rec.distribution };
  for (const key of ["mu", "gamma", "alpha", "beta", "sigma", "xi", "eta", "sigma_e"]) {
    if (key in rec) params[key] = Number(rec[key]);
  }
  return params as unknown as DistParams;
}

export function buildCdfPanel(spec: Extract<FigureSpec, { kind: "cdf-panel" }>): BuiltFigure {
  const tables = spec.inputs.map((i) => readTsv(i.path));
  const hash = checkSameScenario(tables);
  const tree = readJson(spec.table) as TableTree;
  const option = baseOption("Sampled parameter CDFs vs fitted distributions",
    "parameter value", "CDF");
  const series: SeriesOption[] = [];
  const ksGaps: Record<string, number> = {};
  tables.forEach((table, idx) => {
    for (const key of ["family", "sclass", "condition"]) {
      if (!(key in table.header)) {
        throw new InputError(`file ${table.path}: missing '${key}' header`);
      }
    }
    const samples = numericColumn(table, "value");
    const cdf = analyticCdf(lookupParams(
      tree, table.header.family, table.header.sclass, table.header.condition));
    const gap = ksDistance(samples, cdf);
    ksGaps[spec.inputs[idx].label] = gap;

    const steps = empiricalCdf(samples);
    const stride = Math.max(1, Math.floor(steps.length / spec.max_points));
    const drawn = steps.filter((_, k) => k % stride === 0 || k === steps.length - 1);
    const color = colorFor(spec.inputs[idx].label, idx);
    series.push({
      type: "line",
      name: `${spec.inputs[idx].label} (KS=${gap.toFixed(4)})`,
      showSymbol: false,
      step: "end",
      color,
      data: drawn.map(([x, f]) => [x, f]),
    });
    series.push({
      type: "line",
      name: `${spec.inputs[idx].label} fitted`,
      showSymbol: false,
      lineStyle: { type: "dashed", width: 1.5 },
      color,
      data: drawn.map(([x]) => [x, cdf(x)]),
    });
  });
  option.series = series;
  return { option, scenarioHash: hash, ksGaps };
}

export function buildFigure(spec: FigureSpec): BuiltFigure {
  switch (spec.kind) {
    case "tacf":
      return buildTacf(spec);
    case "dpsd":
      return buildDpsd(spec);
    case "tsi-cdf":
      return buildTsiCdf(spec);
    case "cdf-panel":
      return buildCdfPanel(spec);
  }
}
