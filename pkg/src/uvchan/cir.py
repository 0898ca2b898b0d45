"""Per-snapshot channel synthesis: LoS, ground-reflection, and NLoS taps.

Sign convention: Doppler is positive for closing geometry on every leg.
Departure legs project the transmitter velocity on the tx-to-scatterer
direction, arrival legs the receiver velocity on the rx-to-scatterer
direction.  Because the per-snapshot path phase is re-evaluated alongside
the accumulated Doppler integral, the transceiver-motion terms cancel
between the two and the net tap phase drifts with scatterer motion: static
clusters stay coherent while dynamic clusters decorrelate, which is what
couples traffic density to the channel statistics.

Power budget: with Ricean factor O and ground-reflection ratio e_gr, the
assembled tap powers are exactly O/(O+1) for LoS, e_gr/(O+1) for the ground
bounce, and (1-e_gr)/(O+1) split over the NLoS rays in proportion to the
exponential power-delay law, so total mean power is 1 per link per snapshot.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .evolution import CLASS_ORDER, EvolutionState, LinkState, TwinCluster
from .params import DensityCondition, Family, ParameterTable, ScattererClass

TWO_PI = 2.0 * math.pi


class TapKind:
    LOS = "los"
    GROUND_REFLECTION = "gr"
    NLOS = "nlos"


class SynthesisError(ValueError):
    """Degenerate geometry or invalid channel configuration."""


@dataclass(frozen=True)
class WindowFunction:
    """Rectangular observation window: gain 1 inside [t_start, t_end]."""

    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        if not self.t_start < self.t_end:
            raise ValueError(f"window must have t_start < t_end, got [{self.t_start}, {self.t_end}]")

    def gain(self, t: float) -> float:
        return 1.0 if self.t_start <= t <= self.t_end else 0.0


@dataclass(frozen=True)
class GroundModel:
    """Flat-earth reflection parameters."""

    rel_permittivity: float = 5.0
    polarization: str = "vertical"  # or "horizontal"

    def __post_init__(self) -> None:
        if self.rel_permittivity < 1.0:
            raise ValueError("relative permittivity must be >= 1")
        if self.polarization not in ("vertical", "horizontal"):
            raise ValueError(f"unknown polarization {self.polarization!r}")


@dataclass
class RayTap:
    """One resolvable path of a link at one snapshot."""

    kind: str
    delay: float
    power: float
    phase: float
    doppler: float
    accumulated_phase: float = 0.0
    twin_id: int | None = None
    ray_index: int | None = None
    sclass: ScattererClass | None = None

    @property
    def amplitude(self) -> float:
        return math.sqrt(self.power)

    @property
    def complex_gain(self) -> complex:
        return self.amplitude * cmath.exp(1j * (self.phase + self.accumulated_phase))


@dataclass
class LinkCir:
    """Assembled tapped-delay-line of one link at one snapshot."""

    link: tuple[int, int]
    time: float
    ricean: float
    eta_gr: float
    eta_nlos: float
    taps: list[RayTap]

    def __post_init__(self) -> None:
        if abs(self.eta_gr + self.eta_nlos - 1.0) > 1e-12:
            raise SynthesisError("ground-reflection and NLoS power ratios must sum to 1")
        n_los = sum(1 for t in self.taps if t.kind == TapKind.LOS)
        n_gr = sum(1 for t in self.taps if t.kind == TapKind.GROUND_REFLECTION)
        if n_los != 1 or n_gr > 1:
            raise SynthesisError(f"need exactly one LoS tap and at most one GR tap, got {n_los}/{n_gr}")

    def total_power(self) -> float:
        return sum(t.power for t in self.taps)


@dataclass
class CirMatrix:
    """Complete J x I grid of per-link CIRs at one snapshot."""

    time: float
    n_vehicles: int
    n_uavs: int
    grid: list[list[LinkCir]]

    def entry(self, j: int, i: int) -> LinkCir:
        return self.grid[j][i]


@dataclass
class TransferFunction:
    link: tuple[int, int]
    time: float
    freqs: np.ndarray
    values: np.ndarray


@dataclass
class LinkSnapshot:
    """Compact per-snapshot result used by the sweep estimators."""

    time: float
    h_los: complex
    h_gr: complex
    h_nlos: complex
    nlos_delays: np.ndarray
    nlos_powers: np.ndarray      # normalized to the link's NLoS budget
    nlos_raw_powers: np.ndarray  # power-delay-law gains, no normalization
    cir: LinkCir | None = None

    @property
    def h_total(self) -> complex:
        return self.h_los + self.h_gr + self.h_nlos


@dataclass(frozen=True)
class PowerLawBank:
    """Per-class power-delay coefficients for fast vectorised lookup."""

    xi: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_table(cls, table: ParameterTable, cond: DensityCondition) -> "PowerLawBank":
        xi = np.zeros(len(CLASS_ORDER))
        eta = np.zeros(len(CLASS_ORDER))
        for k, sclass in enumerate(CLASS_ORDER):
            if table.has(sclass, cond, Family.POWER_DELAY):
                p = table.get(sclass, cond, Family.POWER_DELAY)
                xi[k], eta[k] = p.xi, p.eta
            else:
                # class never produces rays under this condition
                xi[k], eta[k] = 1.0, math.inf
        return cls(xi=xi, eta=eta)


def fresnel_reflection(grazing_angle: float, ground: GroundModel) -> complex:
    """Reflection coefficient at a grazing angle (radians above the plane)."""
    s = math.sin(grazing_angle)
    root = cmath.sqrt(ground.rel_permittivity - math.cos(grazing_angle) ** 2)
    if ground.polarization == "horizontal":
        return (s - root) / (s + root)
    return (ground.rel_permittivity * s - root) / (ground.rel_permittivity * s + root)


# ---------------------------------------------------------------------------
# Single-tap constructors
# ---------------------------------------------------------------------------

def los_tap(tx, rx, v_tx, v_rx, wavelength: float, phi0: float,
            window: WindowFunction, t: float, accumulated_phase: float = 0.0) -> RayTap:
    """Direct-path tap; unit power before Ricean weighting."""
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    d_vec = rx - tx
    d = float(np.linalg.norm(d_vec))
    if d == 0.0:
        raise SynthesisError("coincident link endpoints")
    doppler = -float(d_vec @ (np.asarray(v_rx, float) - np.asarray(v_tx, float))) / (d * wavelength)
    return RayTap(
        kind=TapKind.LOS,
        delay=d / SPEED_OF_LIGHT,
        power=1.0 * window.gain(t),
        phase=phi0 + TWO_PI * d / wavelength,
        doppler=doppler,
        accumulated_phase=accumulated_phase,
    )


def gr_tap(tx, rx, v_tx, v_rx, wavelength: float, phi0: float,
           ground: GroundModel, window: WindowFunction, t: float,
           accumulated_phase: float = 0.0) -> RayTap:
    """Ground-bounce tap from the image of the transmitter in the z=0 plane."""
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    if tx[2] <= 0.0 or rx[2] <= 0.0:
        raise SynthesisError("ground reflection needs both endpoints above the plane")
    mirror = np.array([1.0, 1.0, -1.0])
    txm = tx * mirror
    path_vec = rx - txm
    length = float(np.linalg.norm(path_vec))
    v_rel = np.asarray(v_rx, float) - np.asarray(v_tx, float) * mirror
    doppler = -float(path_vec @ v_rel) / (length * wavelength)
    psi = math.asin((tx[2] + rx[2]) / length)
    gamma = fresnel_reflection(psi, ground)
    return RayTap(
        kind=TapKind.GROUND_REFLECTION,
        delay=length / SPEED_OF_LIGHT,
        power=abs(gamma) ** 2 * window.gain(t),
        phase=phi0 + TWO_PI * length / wavelength + cmath.phase(gamma),
        doppler=doppler,
        accumulated_phase=accumulated_phase,
    )


def nlos_tap(tx, rx, v_tx, v_rx, s_a, s_z, virtual_delay: float,
             wavelength: float, phi0: float, law_xi: float, law_eta: float,
             z_db: float, window: WindowFunction, t: float,
             sclass: ScattererClass | None = None,
             accumulated_phase: float = 0.0,
             los_delay: float | None = None) -> RayTap:
    """Twin-cluster ray via tx-side scatterer s_a and rx-side scatterer s_z.

    The tap delay sums the two visible legs plus the random virtual-link
    delay between the cluster sides, floored at the direct-path delay so a
    scattered path can never arrive before the line of sight.  With
    s_a = s_z and no virtual delay this reduces to the plain single-bounce
    geometry.
    """
    tx, rx = np.asarray(tx, float), np.asarray(rx, float)
    s_a, s_z = np.asarray(s_a, float), np.asarray(s_z, float)
    leg_a = s_a - tx
    leg_z = rx - s_z
    d_a = float(np.linalg.norm(leg_a))
    d_z = float(np.linalg.norm(leg_z))
    if d_a == 0.0 or d_z == 0.0:
        raise SynthesisError("scatterer coincides with a link endpoint")
    f_t = float(leg_a @ np.asarray(v_tx, float)) / (d_a * wavelength)
    f_r = -float(leg_z @ np.asarray(v_rx, float)) / (d_z * wavelength)
    geom = d_a + d_z
    delay = geom / SPEED_OF_LIGHT + virtual_delay
    if los_delay is None:
        los_delay = float(np.linalg.norm(rx - tx)) / SPEED_OF_LIGHT
    delay = max(delay, los_delay)
    power = math.exp(-law_xi * delay - law_eta) * 10.0 ** (-z_db / 10.0)
    return RayTap(
        kind=TapKind.NLOS,
        delay=delay,
        power=power * window.gain(t),
        phase=phi0 + TWO_PI / wavelength * (geom + SPEED_OF_LIGHT * virtual_delay),
        doppler=f_t + f_r,
        accumulated_phase=accumulated_phase,
        sclass=sclass,
    )


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def assemble_link_cir(taps: list[RayTap], ricean: float, eta_gr: float,
                      link: tuple[int, int] = (0, 0), time: float = 0.0) -> LinkCir:
    """Apply the Ricean power split; returns a LinkCir with unit mean power.

    Each component is normalised to unit power before its budget factor, so
    the sum of assembled tap powers is exactly 1 inside the window.  When a
    link has no NLoS rays its budget collapses into the ground reflection
    (and into LoS if the ground bounce is absent as well).
    """
    if not 0.0 <= eta_gr <= 1.0:
        raise SynthesisError(f"eta_gr must be within [0, 1], got {eta_gr}")
    if ricean < 0.0:
        raise SynthesisError(f"ricean factor must be nonnegative, got {ricean}")
    los = [t for t in taps if t.kind == TapKind.LOS]
    grs = [t for t in taps if t.kind == TapKind.GROUND_REFLECTION]
    rays = [t for t in taps if t.kind == TapKind.NLOS]
    if len(los) != 1:
        raise SynthesisError(f"need exactly one LoS tap, got {len(los)}")
    windowed = los[0].power > 0.0

    eta_nlos = 1.0 - eta_gr
    nlos_raw = sum(t.power for t in rays)
    if not rays or nlos_raw == 0.0:
        eta_gr_eff, eta_nlos_eff = (1.0, 0.0) if grs else (0.0, 0.0)
    else:
        eta_gr_eff, eta_nlos_eff = eta_gr, eta_nlos
    if not grs:
        eta_gr_eff = 0.0

    # budget fractions; a missing diffuse part folds into the LoS term
    denom = ricean + 1.0
    p_los = ricean / denom
    p_gr = eta_gr_eff / denom
    p_nlos = eta_nlos_eff / denom
    p_los += (1.0 - p_los - p_gr - p_nlos)

    out: list[RayTap] = []
    lt = los[0]
    out.append(RayTap(TapKind.LOS, lt.delay, p_los if windowed else 0.0, lt.phase,
                      lt.doppler, lt.accumulated_phase))
    for t in grs:
        out.append(RayTap(TapKind.GROUND_REFLECTION, t.delay,
                          p_gr if windowed else 0.0, t.phase, t.doppler,
                          t.accumulated_phase, t.twin_id, t.ray_index, t.sclass))
    if rays and nlos_raw > 0.0:
        for t in rays:
            out.append(RayTap(TapKind.NLOS, t.delay,
                              (t.power / nlos_raw) * p_nlos if windowed else 0.0,
                              t.phase, t.doppler, t.accumulated_phase,
                              t.twin_id, t.ray_index, t.sclass))
    return LinkCir(link=link, time=time, ricean=ricean, eta_gr=eta_gr,
                   eta_nlos=eta_nlos, taps=out)


def transfer_function(link_cir: LinkCir, freqs: np.ndarray, chi: float,
                      f_c: float) -> TransferFunction:
    """Frequency response over a band with the (f/f_c)^chi non-stationarity.

    The frequency-dependent factor applies to the ground-reflection and NLoS
    terms only; the LoS term is frequency-flat apart from its delay phase.
    """
    freqs = np.asarray(freqs, dtype=float)
    if freqs.size == 0:
        raise SynthesisError("empty frequency grid")
    values = np.zeros(freqs.shape, dtype=complex)
    scale = np.power(freqs / f_c, chi)
    for tap in link_cir.taps:
        g = tap.complex_gain * np.exp(-2j * math.pi * freqs * tap.delay)
        if tap.kind != TapKind.LOS:
            g = g * scale
        values += g
    return TransferFunction(link=link_cir.link, time=link_cir.time,
                            freqs=freqs, values=values)


def assemble_matrix(cirs: dict[tuple[int, int], LinkCir], n_uavs: int,
                    n_vehicles: int, time: float) -> CirMatrix:
    """Dense (vehicle, UAV) grid; every link must be present."""
    grid: list[list[LinkCir]] = []
    for j in range(n_vehicles):
        row = []
        for i in range(n_uavs):
            if (i, j) not in cirs:
                raise SynthesisError(f"missing link CIR for (vehicle {j}, uav {i})")
            row.append(cirs[(i, j)])
        grid.append(row)
    return CirMatrix(time=time, n_vehicles=n_vehicles, n_uavs=n_uavs, grid=grid)


# ---------------------------------------------------------------------------
# Engine: vectorised per-link synthesis with carried phase state
# ---------------------------------------------------------------------------

def synthesize_link(state: EvolutionState, key: tuple[int, int], f_c: float,
                    ricean: float, eta_gr: float, ground: GroundModel,
                    window: WindowFunction, dt: float, law: PowerLawBank,
                    collect_taps: bool = False) -> LinkSnapshot:
    """One link, one snapshot: update Doppler phase state, return the channel.

    Must be called exactly once per snapshot per link, in time order; the
    accumulated Doppler phases advance by trapezoidal integration between
    consecutive calls.
    """
    ls = state.links[key]
    t = state.time
    tx, rx, v_tx, v_rx = state.link_endpoints(key)
    wavelength = SPEED_OF_LIGHT / f_c
    q = window.gain(t)

    # --- LoS ---------------------------------------------------------------
    d_vec = rx - tx
    d = float(np.linalg.norm(d_vec))
    if d == 0.0:
        raise SynthesisError("coincident link endpoints")
    f_los = -float(d_vec @ (v_rx - v_tx)) / (d * wavelength)
    if not math.isnan(ls.prev_f_los):
        ls.acc_los += math.pi * (ls.prev_f_los + f_los) * dt
    ls.prev_f_los = f_los
    tau_los = d / SPEED_OF_LIGHT
    phase_los = ls.phi0_los + TWO_PI * d / wavelength

    # --- ground reflection ---------------------------------------------------
    mirror = np.array([1.0, 1.0, -1.0])
    txm = tx * mirror
    g_vec = rx - txm
    g_len = float(np.linalg.norm(g_vec))
    f_gr = -float(g_vec @ (v_rx - v_tx * mirror)) / (g_len * wavelength)
    if not math.isnan(ls.prev_f_gr):
        ls.acc_gr += math.pi * (ls.prev_f_gr + f_gr) * dt
    ls.prev_f_gr = f_gr
    psi = math.asin((tx[2] + rx[2]) / g_len)
    gamma = fresnel_reflection(psi, ground)
    tau_gr = g_len / SPEED_OF_LIGHT
    phase_gr = ls.phi0_gr + TWO_PI * g_len / wavelength + cmath.phase(gamma)

    # --- NLoS rays ------------------------------------------------------------
    n_rays = ls.ray_count()
    if n_rays:
        st = state.store
        pos_a = st.cent[ls.r_rowA] + ls.r_offA
        pos_z = st.cent[ls.r_rowZ] + ls.r_offZ
        leg_a = pos_a - tx
        leg_z = rx - pos_z
        d_a = np.linalg.norm(leg_a, axis=1)
        d_z = np.linalg.norm(leg_z, axis=1)
        f_ray = (leg_a @ v_tx) / (d_a * wavelength) - (leg_z @ v_rx) / (d_z * wavelength)
        seasoned = ~ls.r_fresh
        ls.r_acc[seasoned] += math.pi * (ls.r_prev_f[seasoned] + f_ray[seasoned]) * dt
        ls.r_prev_f = f_ray
        ls.r_fresh[:] = False
        geom = d_a + d_z
        tau = np.maximum(geom / SPEED_OF_LIGHT + ls.r_virt, tau_los)
        p_raw = np.exp(-law.xi[ls.r_class] * tau - law.eta[ls.r_class]
                       - math.log(10.0) / 10.0 * ls.r_zdb)
        phases = ls.r_phi0 + TWO_PI / wavelength * (geom + SPEED_OF_LIGHT * ls.r_virt)
        raw_sum = float(p_raw.sum())
    else:
        tau = np.empty(0)
        p_raw = np.empty(0)
        phases = np.empty(0)
        f_ray = np.empty(0)
        raw_sum = 0.0

    # --- power budget ----------------------------------------------------------
    denom = ricean + 1.0
    have_nlos = n_rays > 0 and raw_sum > 0.0
    p_gr_budget = (eta_gr if have_nlos else 1.0) / denom
    p_nlos_budget = ((1.0 - eta_gr) / denom) if have_nlos else 0.0
    p_los_budget = 1.0 - p_gr_budget - p_nlos_budget

    a_los = math.sqrt(p_los_budget) * q
    a_gr = math.sqrt(p_gr_budget) * q
    h_los = a_los * cmath.exp(1j * (phase_los + ls.acc_los - TWO_PI * f_c * tau_los))
    h_gr = a_gr * cmath.exp(1j * (phase_gr + ls.acc_gr - TWO_PI * f_c * tau_gr))
    if have_nlos:
        p_scaled = p_raw * (p_nlos_budget / raw_sum)
        amp = np.sqrt(p_scaled) * q
        h_nlos = complex(np.sum(amp * np.exp(1j * (phases + ls.r_acc - TWO_PI * f_c * tau))))
    else:
        p_scaled = np.zeros(0)
        h_nlos = 0.0 + 0.0j

    cir_obj = None
    if collect_taps:
        taps = [RayTap(TapKind.LOS, tau_los, p_los_budget * q * q, phase_los,
                       f_los, ls.acc_los),
                RayTap(TapKind.GROUND_REFLECTION, tau_gr, p_gr_budget * q * q,
                       phase_gr, f_gr, ls.acc_gr)]
        for r in range(n_rays):
            taps.append(RayTap(
                TapKind.NLOS, float(tau[r]),
                float(p_scaled[r]) * q * q if have_nlos else 0.0,
                float(phases[r]), float(f_ray[r]), float(ls.r_acc[r]),
                twin_id=int(ls.r_twin[r]), ray_index=r,
                sclass=CLASS_ORDER[ls.r_class[r]]))
        cir_obj = LinkCir(link=key, time=t, ricean=ricean, eta_gr=eta_gr,
                          eta_nlos=1.0 - eta_gr, taps=taps)

    return LinkSnapshot(
        time=t,
        h_los=h_los,
        h_gr=h_gr,
        h_nlos=h_nlos,
        nlos_delays=tau,
        nlos_powers=p_scaled if have_nlos else np.zeros(n_rays),
        nlos_raw_powers=p_raw * (q * q),
        cir=cir_obj,
    )


def nlos_rays(state: EvolutionState, key: tuple[int, int], twin: TwinCluster,
              f_c: float, law: PowerLawBank, window: WindowFunction) -> list[RayTap]:
    """Typed taps of one twin-cluster at the current snapshot (no state update)."""
    ls = state.links[key]
    tx, rx, v_tx, v_rx = state.link_endpoints(key)
    wavelength = SPEED_OF_LIGHT / f_c
    st = state.store
    out = []
    tau_los = float(np.linalg.norm(rx - tx)) / SPEED_OF_LIGHT
    for r in np.nonzero(ls.r_twin == twin.twin_id)[0]:
        s_a = st.cent[ls.r_rowA[r]] + ls.r_offA[r]
        s_z = st.cent[ls.r_rowZ[r]] + ls.r_offZ[r]
        cls_idx = int(ls.r_class[r])
        tap = nlos_tap(tx, rx, v_tx, v_rx, s_a, s_z, float(ls.r_virt[r]),
                       wavelength, float(ls.r_phi0[r]),
                       float(law.xi[cls_idx]), float(law.eta[cls_idx]),
                       float(ls.r_zdb[r]), window, state.time,
                       sclass=CLASS_ORDER[cls_idx],
                       accumulated_phase=float(ls.r_acc[r]),
                       los_delay=tau_los)
        tap.twin_id = twin.twin_id
        tap.ray_index = int(r)
        out.append(tap)
    return out
