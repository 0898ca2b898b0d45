"""Run/sweep orchestration and deterministic text outputs.

A *run* simulates one (scenario, condition, seed) cell and can dump CIR
taps, transfer functions, and delay-spread traces.  A *sweep* executes the
cross product of conditions and seeds in a process pool, aggregates the
correlation/TSI/DPSD statistics per condition, writes them as delimited
text with a manifest of file checksums, and emits machine-readable trend
verdicts.  Outputs are byte-identical across repeated executions and worker
counts: every cell is seeded independently and reductions run in fixed
order in the parent process.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import math
import os
import time as _walltime
from dataclasses import dataclass

import numpy as np

from . import __version__, stats
from .cir import GroundModel, PowerLawBank, WindowFunction, synthesize_link, transfer_function
from .config import Scenario
from .evolution import advance, init_environment
from .params import DensityCondition, ParameterTable, default_table

logger = logging.getLogger(__name__)

CONDITION_ORDER = [DensityCondition.LOW, DensityCondition.MEDIUM, DensityCondition.HIGH]
TREND_LAG_WINDOW_S = 5e-3      # lag window of the correlation trend comparison
TACF_MARGIN = 0.02             # required separation between adjacent conditions
TSI_SEPARATION = 0.10          # required relative separation of TSI medians
FLATNESS_FRACTION = 0.90       # anchors where high must beat low


def fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class RunTraces:
    """Per-snapshot channel summaries of one run."""

    times: np.ndarray
    links: list[tuple[int, int]]
    h_los: np.ndarray       # [links, snapshots], complex at the carrier
    h_gr: np.ndarray
    h_nlos: np.ndarray
    a2_joint: np.ndarray    # [snapshots], all-link delay spread
    a2_per_link: np.ndarray  # [links, snapshots]

    def h_total(self, link_index: int = 0) -> np.ndarray:
        return (self.h_los[link_index] + self.h_gr[link_index]
                + self.h_nlos[link_index])


class RunSinks:
    """Optional per-snapshot writers used by the single-run command."""

    def __init__(self, scenario: Scenario, out_dir: str):
        self.scenario = scenario
        self.out = out_dir
        self.cir_rows: list[str] = []
        self.tf_rows: list[str] = []
        self.cluster_rows: list[str] = []
        self.twin_rows: list[str] = []

    def wants_cir(self, k: int) -> bool:
        return k % self.scenario.outputs.cir_every == 0

    def wants_tf(self, k: int) -> bool:
        every = self.scenario.outputs.tf_every
        return every > 0 and k % every == 0

    def on_cir(self, t: float, key, link_cir) -> None:
        for tap in link_cir.taps:
            cls = tap.sclass.value if tap.sclass is not None else "-"
            self.cir_rows.append("\t".join([
                fmt(t), str(key[0]), str(key[1]), tap.kind, cls,
                fmt(tap.delay), fmt(tap.power), fmt(tap.doppler),
                fmt(tap.phase + tap.accumulated_phase),
            ]))

    def on_tf(self, t: float, key, tf) -> None:
        for f, v in zip(tf.freqs, tf.values):
            self.tf_rows.append("\t".join([
                fmt(t), str(key[0]), str(key[1]), fmt(f),
                fmt(v.real), fmt(v.imag),
            ]))

    def on_state(self, state) -> None:
        if not self.scenario.outputs.dump_snapshots:
            return
        st = state.store
        for row in np.nonzero(st.alive)[0]:
            self.cluster_rows.append("\t".join([
                fmt(state.time), str(int(st.ids[row])),
                ("static", "terrestrial_dynamic", "aerial_dynamic")[st.cls[row]],
                ("tx", "rx")[st.side[row]],
                fmt(st.cent[row, 0]), fmt(st.cent[row, 1]), fmt(st.cent[row, 2]),
                str(len(st.member_ids[row])),
            ]))
        for key in sorted(state.links):
            for twin in state.visible_twins(key):
                self.twin_rows.append("\t".join([
                    fmt(state.time), str(key[0]), str(key[1]),
                    str(twin.twin_id), str(twin.tx_cluster), str(twin.rx_cluster),
                    fmt(twin.virtual_delay), str(len(twin.rays)),
                ]))


def simulate_run(scenario: Scenario, table: ParameterTable | None = None,
                 seed: int | None = None, sinks: RunSinks | None = None) -> RunTraces:
    """Simulate every snapshot of one run; returns compact channel traces."""
    table = table if table is not None else default_table()
    seed = scenario.seed if seed is None else seed
    warmup = scenario.warmup_snapshots
    state = init_environment(scenario.uav_trajectories(), scenario.vehicle_trajectories(),
                             table, scenario.env_config(), seed,
                             t0=-warmup * scenario.dt_s)
    for _ in range(warmup):
        advance(state, scenario.dt_s)
    law = PowerLawBank.from_table(table, scenario.condition)
    window = scenario.window()
    ground = scenario.ground_model()
    ricean = scenario.ricean_linear
    keys = sorted(state.links)
    n_links = len(keys)
    n_snaps = scenario.snapshots
    dt = scenario.dt_s
    times = scenario.times()

    h_los = np.zeros((n_links, n_snaps), dtype=complex)
    h_gr = np.zeros((n_links, n_snaps), dtype=complex)
    h_nlos = np.zeros((n_links, n_snaps), dtype=complex)
    a2_joint = np.zeros(n_snaps)
    a2_link = np.zeros((n_links, n_snaps))

    freq_grid = scenario.freq_grid()
    for k in range(n_snaps):
        if k > 0:
            advance(state, dt)
        joint_delays: list[np.ndarray] = []
        joint_powers: list[np.ndarray] = []
        want_cir = sinks is not None and sinks.wants_cir(k)
        want_tf = sinks is not None and sinks.wants_tf(k)
        for li, key in enumerate(keys):
            snap = synthesize_link(state, key, scenario.fc_hz, ricean,
                                   scenario.eta_gr, ground, window, dt, law,
                                   collect_taps=want_cir or want_tf)
            h_los[li, k] = snap.h_los
            h_gr[li, k] = snap.h_gr
            h_nlos[li, k] = snap.h_nlos
            # delay spread uses the power-delay-law gains as printed, so
            # link weights follow the raw NLoS strengths
            a2_link[li, k] = stats.rms_delay_spread(snap.nlos_delays, snap.nlos_raw_powers)
            joint_delays.append(snap.nlos_delays)
            joint_powers.append(snap.nlos_raw_powers)
            if want_cir:
                sinks.on_cir(state.time, key, snap.cir)
            if want_tf:
                sinks.on_tf(state.time, key,
                            transfer_function(snap.cir, freq_grid, scenario.chi,
                                              scenario.fc_hz))
        a2_joint[k] = stats.rms_delay_spread(
            np.concatenate(joint_delays) if joint_delays else np.empty(0),
            np.concatenate(joint_powers) if joint_powers else np.empty(0))
        if sinks is not None:
            sinks.on_state(state)
    return RunTraces(times=times, links=keys, h_los=h_los, h_gr=h_gr,
                     h_nlos=h_nlos, a2_joint=a2_joint, a2_per_link=a2_link)


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------

def _write_tsv(path: str, header: dict[str, str], columns: list[str],
               rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write(row if isinstance(row, str) else "\t".join(row))
            fh.write("\n")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest(out_dir: str, scenario_hash: str, seeds: list[int],
              conditions: list[str], files: list[str], snapshots: int,
              wall_s: float) -> dict:
    entry = {
        "artifact_version": __version__,
        "scenario_hash": scenario_hash,
        "seeds": seeds,
        "conditions": conditions,
        "snapshots_per_run": snapshots,
        "files": {name: _sha256(os.path.join(out_dir, name)) for name in sorted(files)},
        "wall_clock_s": round(wall_s, 3),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entry, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return entry


def run_to_files(scenario: Scenario, out_dir: str,
                 table: ParameterTable | None = None) -> dict:
    """Single-run command: simulate and dump per-snapshot records."""
    os.makedirs(out_dir, exist_ok=True)
    t_start = _walltime.perf_counter()
    sinks = RunSinks(scenario, out_dir)
    traces = simulate_run(scenario, table, sinks=sinks)
    shash = scenario.scenario_hash()
    head = {
        "scenario_hash": shash,
        "condition": scenario.condition.value,
        "seed": str(scenario.seed),
        "dt_s": fmt(scenario.dt_s),
    }
    files = []

    def emit(name, columns, rows, extra=None):
        header = dict(head)
        if extra:
            header.update(extra)
        _write_tsv(os.path.join(out_dir, name), header, columns, rows)
        files.append(name)

    emit("cir_trace.tsv",
         ["t_s", "uav", "vehicle", "kind", "class", "delay_s", "power", "doppler_hz", "phase_rad"],
         sinks.cir_rows)
    if sinks.tf_rows:
        emit("transfer_function.tsv", ["t_s", "uav", "vehicle", "f_hz", "re", "im"],
             sinks.tf_rows)
    ds_rows = []
    for k, t in enumerate(traces.times):
        ds_rows.append("\t".join([fmt(t), "joint", fmt(traces.a2_joint[k])]))
        for li, key in enumerate(traces.links):
            ds_rows.append("\t".join([fmt(t), f"u{key[0]}v{key[1]}", fmt(traces.a2_per_link[li, k])]))
    emit("delay_spread.tsv", ["t_s", "scope", "a2_s"], ds_rows)
    if scenario.outputs.dump_snapshots:
        emit("clusters.tsv",
             ["t_s", "cluster", "class", "side", "cx_m", "cy_m", "cz_m", "members"],
             sinks.cluster_rows)
        emit("visible_twins.tsv",
             ["t_s", "uav", "vehicle", "twin", "tx_cluster", "rx_cluster", "virtual_delay_s", "rays"],
             sinks.twin_rows)
    wall = _walltime.perf_counter() - t_start
    return _manifest(out_dir, shash, [scenario.seed], [scenario.condition.value],
                     files, scenario.snapshots, wall)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def _sweep_cell(payload: tuple) -> tuple[np.ndarray, np.ndarray]:
    scen_dict, cond_value, seed, table_dict = payload
    scenario = Scenario.from_dict(scen_dict)
    scenario.condition = DensityCondition(cond_value)
    scenario.seed = seed
    table = ParameterTable.from_dict(table_dict)
    traces = simulate_run(scenario, table, seed=seed)
    return traces.h_total(0), traces.a2_joint


@dataclass
class ConditionStats:
    condition: DensityCondition
    tacf_curves: list[stats.CorrelationCurve]
    tsi_samples: list[tuple[int, stats.TsiSample]]      # (seed, sample)
    dpsd_arrays: list[stats.DpsdArray]                  # at the TACF anchors
    flatness: list[tuple[float, float]]                 # (anchor time, flatness)
    trend_tacf: dict[float, float]                      # anchor time -> mean |TACF|
    undefined_anchors: int


def _condition_stats(scenario: Scenario, cond: DensityCondition,
                     h: np.ndarray, a2: np.ndarray) -> ConditionStats:
    est = scenario.estimators
    times = scenario.times()
    k_max = scenario.snapshots
    dt = scenario.dt_s
    anchors_tacf = [int(round(a / dt)) for a in est.tacf_anchors_s]
    trend_lags = max(1, int(round(TREND_LAG_WINDOW_S / dt)))

    tacf_curves = []
    trend = {}
    for k0 in anchors_tacf:
        curve = stats.tacf(h, times, k0, est.tacf_max_lag)
        tacf_curves.append(curve)
        trend[float(times[k0])] = float(np.mean(np.abs(curve.values[1:trend_lags + 1])))

    anchor_hi = k_max - 1 - max(est.dpsd_max_lag, est.tacf_max_lag)
    tsi_anchor_idx = np.unique(np.round(
        np.linspace(0, anchor_hi, est.tsi_anchor_count)).astype(int))

    tsi_samples: list[tuple[int, stats.TsiSample]] = []
    undefined = 0
    for seed_idx in range(h.shape[0]):
        trace = stats.DelaySpreadTrace(times=times, a2=a2[seed_idx])
        for k0 in tsi_anchor_idx:
            try:
                tsi_samples.append((seed_idx, stats.tsi(trace, int(k0), est.tsi_threshold)))
            except stats.EstimatorError:
                undefined += 1

    flatness = []
    for k0 in tsi_anchor_idx:
        curve = stats.tacf(h, times, int(k0), est.dpsd_max_lag)
        spec = stats.dpsd(curve)
        flatness.append((float(times[k0]), stats.spectral_flatness(spec.power)))
    dpsd_arrays = [stats.dpsd(c) for c in tacf_curves]
    return ConditionStats(condition=cond, tacf_curves=tacf_curves,
                          tsi_samples=tsi_samples, dpsd_arrays=dpsd_arrays,
                          flatness=flatness, trend_tacf=trend,
                          undefined_anchors=undefined)


def _verdicts(per_condition: dict[str, ConditionStats]) -> dict:
    """Machine-readable trend checks over whichever conditions are present."""
    present = [c for c in CONDITION_ORDER if c.value in per_condition]
    out: dict = {"conditions": [c.value for c in present]}

    # correlation trend: mean |TACF| strictly increasing low > medium > high
    anchors = sorted({a for cs in per_condition.values() for a in cs.trend_tacf})
    tacf_table = {
        c.value: {fmt(a): per_condition[c.value].trend_tacf.get(a) for a in anchors}
        for c in present
    }
    ok = True
    margins = []
    for a in anchors:
        for denser, sparser in zip(present[1:], present[:-1]):
            hi = per_condition[denser.value].trend_tacf[a]
            lo = per_condition[sparser.value].trend_tacf[a]
            margins.append(lo - hi)
            if not lo - hi >= TACF_MARGIN:
                ok = False
    out["tacf"] = {"mean_abs": tacf_table,
                   "margin_required": TACF_MARGIN,
                   "min_margin": min(margins) if margins else None,
                   "ordered_high_below_low": ok if len(present) > 1 else None}

    # TSI trend: medians ordered with relative separation
    medians = {}
    for c in present:
        values = [s.tsi for _, s in per_condition[c.value].tsi_samples]
        medians[c.value] = float(np.median(values)) if values else math.nan
    ok = True
    seps = []
    for denser, sparser in zip(present[1:], present[:-1]):
        hi, lo = medians[denser.value], medians[sparser.value]
        sep = (lo - hi) / lo if lo > 0 else math.nan
        seps.append(sep)
        if not (math.isfinite(sep) and sep >= TSI_SEPARATION):
            ok = False
    out["tsi"] = {"medians_s": medians,
                  "separation_required": TSI_SEPARATION,
                  "min_separation": min(seps) if seps else None,
                  "ordered_high_below_low": ok if len(present) > 1 else None}

    # DPSD flatness: densest flatter than sparsest at most anchors
    flat = {c.value: dict(per_condition[c.value].flatness) for c in present}
    comparisons = {}
    if len(present) > 1:
        densest, sparsest = present[-1], present[0]
        shared = sorted(set(flat[densest.value]) & set(flat[sparsest.value]))
        wins = sum(1 for a in shared
                   if flat[densest.value][a] > flat[sparsest.value][a])
        frac = wins / len(shared) if shared else math.nan
        comparisons = {
            "pair": [densest.value, sparsest.value],
            "fraction_flatter": frac,
            "fraction_required": FLATNESS_FRACTION,
            "passed": bool(frac >= FLATNESS_FRACTION) if shared else None,
        }
    out["dpsd_flatness"] = comparisons
    return out


def sweep_to_files(scenario: Scenario, conditions: list[DensityCondition],
                   seeds: list[int], out_dir: str, threads: int = 1,
                   table: ParameterTable | None = None) -> dict:
    """Run the (condition x seed) grid and write aggregated statistics."""
    if not conditions:
        raise ValueError("conditions list must not be empty")
    if not seeds:
        raise ValueError("seeds list must not be empty")
    os.makedirs(out_dir, exist_ok=True)
    t_start = _walltime.perf_counter()
    table = table if table is not None else default_table()
    table_dict = table.to_dict()
    scen_dict = scenario.to_dict()
    shash = scenario.scenario_hash()
    k_max = scenario.snapshots

    per_condition: dict[str, ConditionStats] = {}
    files: list[str] = []
    for cond in conditions:
        payloads = [(scen_dict, cond.value, seed, table_dict) for seed in seeds]
        if threads > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_sweep_cell, payloads, chunksize=4))
        else:
            results = [_sweep_cell(p) for p in payloads]
        h = np.stack([r[0] for r in results])
        a2 = np.stack([r[1] for r in results])
        cs = _condition_stats(scenario, cond, h, a2)
        per_condition[cond.value] = cs
        logger.info("condition %s: %d runs aggregated", cond.value, len(seeds))

        head = {
            "scenario_hash": shash,
            "condition": cond.value,
            "seeds": f"{len(seeds)}",
            "estimator": (f"tacf_max_lag={scenario.estimators.tacf_max_lag} "
                          f"dpsd_max_lag={scenario.estimators.dpsd_max_lag} "
                          f"tsi_threshold={fmt(scenario.estimators.tsi_threshold)}"),
        }

        rows = []
        for curve in cs.tacf_curves:
            for lag, val in zip(curve.lags, curve.values):
                rows.append("\t".join([fmt(curve.anchor_time), fmt(lag),
                                       fmt(val.real), fmt(val.imag), fmt(abs(val))]))
        name = f"tacf_{cond.value}.tsv"
        _write_tsv(os.path.join(out_dir, name), head,
                   ["anchor_t_s", "lag_s", "re", "im", "abs"], rows)
        files.append(name)

        rows = ["\t".join([str(seed_idx), fmt(s.anchor_time), fmt(s.tsi),
                           "1" if s.censored else "0"])
                for seed_idx, s in cs.tsi_samples]
        name = f"tsi_{cond.value}.tsv"
        _write_tsv(os.path.join(out_dir, name), head,
                   ["seed_index", "anchor_t_s", "tsi_s", "censored"], rows)
        files.append(name)

        rows = []
        for spec in cs.dpsd_arrays:
            for f, p in zip(spec.doppler, spec.power):
                rows.append("\t".join([fmt(spec.anchor_time), fmt(f), fmt(p)]))
        name = f"dpsd_{cond.value}.tsv"
        _write_tsv(os.path.join(out_dir, name), head,
                   ["anchor_t_s", "doppler_hz", "power"], rows)
        files.append(name)

        rows = ["\t".join([fmt(a), fmt(v)]) for a, v in cs.flatness]
        name = f"flatness_{cond.value}.tsv"
        _write_tsv(os.path.join(out_dir, name), head,
                   ["anchor_t_s", "flatness"], rows)
        files.append(name)

    verdicts = _verdicts(per_condition)
    with open(os.path.join(out_dir, "verdicts.json"), "w", encoding="utf-8") as fh:
        json.dump(verdicts, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append("verdicts.json")

    wall = _walltime.perf_counter() - t_start
    manifest = _manifest(out_dir, shash, list(seeds),
                         [c.value for c in conditions], files, k_max, wall)
    manifest["verdicts"] = verdicts
    return manifest


def dump_parameter_samples(family: str, sclass: str, condition: str, n: int,
                           seed: int, path: str,
                           table: ParameterTable | None = None) -> None:
    """Write inverse-transform samples of one table row, for CDF figures."""
    from .params import Family, ScattererClass, sample
    from .rng import substream

    table = table if table is not None else default_table()
    fam = Family(family)
    cls = ScattererClass(sclass)
    cond = DensityCondition(condition)
    params = table.get(cls, cond, fam)
    rng = substream(seed, f"samples/{family}/{sclass}/{condition}")
    draws = sample(params, rng, n)
    table_hash = hashlib.sha256(
        json.dumps(table.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
    header = {
        "scenario_hash": table_hash,
        "family": family,
        "sclass": sclass,
        "condition": condition,
        "seed": str(seed),
        "n": str(n),
    }
    _write_tsv(path, header, ["value"], (fmt(v) for v in draws))
