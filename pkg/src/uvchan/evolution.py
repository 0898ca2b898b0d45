"""Shared scatterer/cluster environment and its birth/death dynamics.

The environment is one consistent population of clusters shared by every
link.  Each agent owns a frozen semi-spherical visibility region (VR); a
cluster contributes to a link only while it sits inside the relevant VR.
Per link and class the simulator tracks an *active* set that evolves by
survival (still inside the VR) plus birth (fresh clusters sampled whenever
the per-snapshot target count exceeds the survivor count).  Active tx-side
clusters (static tx-side and aerial-dynamic) are randomly matched with
active rx-side clusters (static rx-side and terrestrial-dynamic) into
twin-cluster pairs joined by a random virtual-link delay; matchings, ray
pairings, shadowing draws, and initial phases persist for the lifetime of
the pair, which is what keeps the channel consistent over time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import params as pr
from .geometry import (
    AgentKind,
    PlacementError,
    Side,
    Trajectory,
    heading_axes,
    link_distance,
    wrap_angles,
)
from .params import DensityCondition, Family, ParameterTable, ScattererClass
from .rng import substream

logger = logging.getLogger(__name__)

CLASS_ORDER = (ScattererClass.STATIC, ScattererClass.TERRESTRIAL_DYNAMIC,
               ScattererClass.AERIAL_DYNAMIC)
_CLS_INDEX = {c: k for k, c in enumerate(CLASS_ORDER)}


class ScenarioError(ValueError):
    """Scenario cannot produce a valid environment (e.g. no clusters for a VR)."""


def new_cluster_count(m_l: int, m_s: int) -> int:
    """Newly generated clusters given target and survivor counts."""
    return max(0, m_l - m_s)


@dataclass(frozen=True)
class EnvConfig:
    """Knobs of the environment model that are not fitted parameters."""

    condition: DensityCondition
    rays_per_twin: int = 5
    virtual_delay_law: str = "exponential"  # or "truncated-normal"
    virtual_delay_mean: float = 80e-9
    virtual_delay_std: float = 15e-9
    td_speed_max: float = 15.0
    ad_speed_max: float = 10.0
    td_height_max: float = 4.0
    road_axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    placement_retries: int = 16
    members_cap: int = 64
    gc_grace: float = 1.0


@dataclass(frozen=True)
class VisibilityRegion:
    """Semi-sphere around an agent; radius frozen at initialisation."""

    agent_id: str
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ScenarioError(f"VR radius for {self.agent_id} must be positive")


@dataclass(frozen=True)
class Cluster:
    """Read-only view of one cluster."""

    cluster_id: int
    sclass: ScattererClass
    member_ids: tuple[int, ...]
    centroid: np.ndarray
    birth_time: float
    side: Side


@dataclass(frozen=True)
class TwinCluster:
    """A matched tx-side/rx-side cluster pair with its persistent rays."""

    twin_id: int
    tx_cluster: int
    rx_cluster: int
    virtual_delay: float
    rays: tuple[tuple[int, int], ...]  # (tx scatterer id, rx scatterer id)


@dataclass
class Counters:
    m_s: int = 0
    m_l: int = 0
    m_new_target: int = 0
    m_new: int = 0


class ClusterStore:
    """Contiguous arrays for all clusters in the environment."""

    def __init__(self) -> None:
        self.ids: np.ndarray = np.empty(0, dtype=np.int64)
        self.cent: np.ndarray = np.empty((0, 3))
        self.vel: np.ndarray = np.empty((0, 3))
        self.cls: np.ndarray = np.empty(0, dtype=np.int8)
        self.side: np.ndarray = np.empty(0, dtype=np.int8)  # 0 tx, 1 rx
        self.birth: np.ndarray = np.empty(0)
        self.last_visible: np.ndarray = np.empty(0)
        self.alive: np.ndarray = np.empty(0, dtype=bool)
        self.member_offsets: list[np.ndarray] = []
        self.member_ids: list[np.ndarray] = []
        self._row_of: dict[int, int] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return int(self.alive.sum())

    def row(self, cluster_id: int) -> int:
        return self._row_of[cluster_id]

    def add(self, sclass: ScattererClass, side: Side, member_ids: np.ndarray,
            member_pos: np.ndarray, velocity: np.ndarray, t: float) -> int:
        cid = self._next_id
        self._next_id += 1
        centroid = member_pos.mean(axis=0)
        self.ids = np.append(self.ids, cid)
        self.cent = np.vstack([self.cent, centroid[None, :]])
        self.vel = np.vstack([self.vel, np.asarray(velocity, float)[None, :]])
        self.cls = np.append(self.cls, _CLS_INDEX[sclass])
        self.side = np.append(self.side, 0 if side is Side.TX_SIDE else 1)
        self.birth = np.append(self.birth, t)
        self.last_visible = np.append(self.last_visible, t)
        self.alive = np.append(self.alive, True)
        self.member_offsets.append(member_pos - centroid)
        self.member_ids.append(np.asarray(member_ids, dtype=np.int64))
        self._row_of[cid] = len(self.ids) - 1
        return cid

    def drop(self, rows: np.ndarray) -> None:
        for r in rows:
            self.alive[r] = False
            self._row_of.pop(int(self.ids[r]), None)

    def view(self, cluster_id: int) -> Cluster:
        r = self.row(cluster_id)
        side = Side.TX_SIDE if self.side[r] == 0 else Side.RX_SIDE
        return Cluster(
            cluster_id=cluster_id,
            sclass=CLASS_ORDER[self.cls[r]],
            member_ids=tuple(int(m) for m in self.member_ids[r]),
            centroid=self.cent[r].copy(),
            birth_time=float(self.birth[r]),
            side=side,
        )

    def member_positions(self, row: int) -> np.ndarray:
        return self.cent[row] + self.member_offsets[row]


@dataclass
class LinkState:
    """Per-link active sets, counters, and persistent twin/ray arrays."""

    uav_index: int
    vehicle_index: int
    active: dict[ScattererClass, list[int]] = field(default_factory=dict)
    counters: dict[ScattererClass, Counters] = field(default_factory=dict)
    twin_order: list[int] = field(default_factory=list)
    twin_tx: dict[int, int] = field(default_factory=dict)
    twin_rx: dict[int, int] = field(default_factory=dict)
    twin_virt: dict[int, float] = field(default_factory=dict)
    birth_failures: dict[ScattererClass, int] = field(default_factory=dict)
    birth_probe: dict[ScattererClass, int] = field(default_factory=dict)
    # flat per-ray arrays (persist across snapshots, rebuilt on churn)
    r_twin: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    r_rowA: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    r_rowZ: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    r_offA: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    r_offZ: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    r_idA: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    r_idZ: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    r_class: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))
    r_virt: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_zdb: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_phi0: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_acc: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_prev_f: np.ndarray = field(default_factory=lambda: np.empty(0))
    r_fresh: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    # LoS / ground-reflection phase state
    phi0_los: float = 0.0
    phi0_gr: float = 0.0
    acc_los: float = 0.0
    acc_gr: float = 0.0
    prev_f_los: float = math.nan
    prev_f_gr: float = math.nan

    @property
    def key(self) -> tuple[int, int]:
        return (self.uav_index, self.vehicle_index)

    def ray_count(self) -> int:
        return len(self.r_twin)


class EvolutionState:
    """The live environment at one snapshot plus per-link channel state."""

    def __init__(self, uavs: list[Trajectory], vehicles: list[Trajectory],
                 table: ParameterTable, cfg: EnvConfig, seed: int, t0: float = 0.0):
        if not uavs or not vehicles:
            raise ScenarioError("need at least one UAV and one vehicle")
        self.uavs = uavs
        self.vehicles = vehicles
        self.table = table
        self.cfg = cfg
        self.seed = int(seed)
        self.t0 = float(t0)
        self.time = float(t0)
        self.snapshot_index = 0
        self.store = ClusterStore()
        self.vrs: dict[str, VisibilityRegion] = {}
        self.links: dict[tuple[int, int], LinkState] = {
            (i, j): LinkState(i, j)
            for i in range(len(uavs)) for j in range(len(vehicles))
        }
        self._next_scatterer_id = 0
        self._next_twin_id = 0
        self._skipped_placements = 0
        self._skipped_births = 0
        self.uav_pos: list[np.ndarray] = []
        self.uav_vel: list[np.ndarray] = []
        self.veh_pos: list[np.ndarray] = []
        self.veh_vel: list[np.ndarray] = []
        self._incl: dict[str, np.ndarray] = {}
        self._refresh_agents()

    # -- agent kinematics ---------------------------------------------------

    def _refresh_agents(self) -> None:
        t = self.time
        self.uav_pos = [u.position(t) for u in self.uavs]
        self.uav_vel = [u.velocity(t) for u in self.uavs]
        self.veh_pos = [v.position(t) for v in self.vehicles]
        self.veh_vel = [v.velocity(t) for v in self.vehicles]

    def link_endpoints(self, key: tuple[int, int]):
        i, j = key
        return (self.uav_pos[i], self.veh_pos[j], self.uav_vel[i], self.veh_vel[j])

    # -- geometric visibility -----------------------------------------------

    def _agent_pos(self, agent_id: str) -> np.ndarray:
        for i, u in enumerate(self.uavs):
            if u.agent_id == agent_id:
                return self.uav_pos[i]
        for j, v in enumerate(self.vehicles):
            if v.agent_id == agent_id:
                return self.veh_pos[j]
        raise KeyError(f"unknown agent {agent_id!r}")

    def _refresh_inclusion_masks(self) -> None:
        """Vectorised per-agent VR inclusion over all cluster rows."""
        st = self.store
        n = len(st.cent)
        self._incl = {}
        for positions, agents in ((self.uav_pos, self.uavs), (self.veh_pos, self.vehicles)):
            for idx, agent in enumerate(agents):
                vr = self.vrs.get(agent.agent_id)
                if vr is None:
                    continue
                if n:
                    d = np.linalg.norm(st.cent - positions[idx], axis=1)
                    mask = (d <= vr.radius) & (st.cent[:, 2] >= 0.0) & st.alive
                else:
                    mask = np.zeros(0, dtype=bool)
                self._incl[agent.agent_id] = mask

    def _incl_value(self, agent_id: str, row: int) -> bool:
        mask = self._incl.get(agent_id)
        if mask is not None and row < len(mask):
            return bool(mask[row])
        vr = self.vrs[agent_id]
        st = self.store
        c = st.cent[row]
        return (bool(st.alive[row]) and c[2] >= 0.0
                and float(np.linalg.norm(c - self._agent_pos(agent_id))) <= vr.radius)

    def inside_vr(self, agent_id: str, cluster_id: int) -> bool:
        """Strict semi-sphere inclusion: distance <= radius and z >= 0."""
        return self._incl_value(agent_id, self.store.row(cluster_id))

    def clusters_within(self, agent_id: str) -> set[int]:
        """Ids of alive clusters inside an agent's VR (pure geometry)."""
        vr = self.vrs[agent_id]
        pos = self._agent_pos(agent_id)
        d = np.linalg.norm(self.store.cent - pos, axis=1)
        ok = self.store.alive & (d <= vr.radius) & (self.store.cent[:, 2] >= 0.0)
        return {int(i) for i in self.store.ids[ok]}

    def link_inclusion(self, key: tuple[int, int], sclass: ScattererClass,
                       cluster_id: int) -> bool:
        """Class-specific VR rule deciding whether a cluster can serve a link."""
        i, j = key
        uav_id = self.uavs[i].agent_id
        veh_id = self.vehicles[j].agent_id
        if sclass is ScattererClass.AERIAL_DYNAMIC:
            return self.inside_vr(uav_id, cluster_id)
        if sclass is ScattererClass.TERRESTRIAL_DYNAMIC:
            return self.inside_vr(veh_id, cluster_id)
        return self.inside_vr(uav_id, cluster_id) or self.inside_vr(veh_id, cluster_id)

    def visible_clusters(self, key: tuple[int, int]) -> dict[Side, list[int]]:
        """Matchable clusters per side for one link at the current snapshot."""
        if key not in self.links:
            raise KeyError(f"unknown link {key}")
        ls = self.links[key]
        i, j = key
        uav_id = self.uavs[i].agent_id
        veh_id = self.vehicles[j].agent_id
        tx = [c for c in ls.active.get(ScattererClass.AERIAL_DYNAMIC, [])]
        tx += [c for c in ls.active.get(ScattererClass.STATIC, [])
               if self.store.side[self.store.row(c)] == 0 and self.inside_vr(uav_id, c)]
        rx = [c for c in ls.active.get(ScattererClass.TERRESTRIAL_DYNAMIC, [])]
        rx += [c for c in ls.active.get(ScattererClass.STATIC, [])
               if self.store.side[self.store.row(c)] == 1 and self.inside_vr(veh_id, c)]
        return {Side.TX_SIDE: tx, Side.RX_SIDE: rx}

    def visible_twins(self, key: tuple[int, int]) -> list[TwinCluster]:
        """The matched twin-cluster set of a link at the current snapshot."""
        if key not in self.links:
            raise KeyError(f"unknown link {key}")
        ls = self.links[key]
        out = []
        for tid in ls.twin_order:
            mask = ls.r_twin == tid
            rays = tuple(
                (int(a), int(z))
                for a, z in zip(ls.r_idA[mask], ls.r_idZ[mask])
            )
            out.append(TwinCluster(
                twin_id=tid,
                tx_cluster=ls.twin_tx[tid],
                rx_cluster=ls.twin_rx[tid],
                virtual_delay=ls.twin_virt[tid],
                rays=rays,
            ))
        return out

    def audit_scatterers(self) -> None:
        """Debug pass asserting class/altitude invariants for all members."""
        for row in np.nonzero(self.store.alive)[0]:
            sclass = CLASS_ORDER[self.store.cls[row]]
            pos = self.store.member_positions(row)
            if np.any(pos[:, 2] < -1e-9):
                raise AssertionError(f"cluster {self.store.ids[row]}: member below ground")
            if sclass is ScattererClass.AERIAL_DYNAMIC and np.any(pos[:, 2] <= 0.0):
                raise AssertionError(f"cluster {self.store.ids[row]}: aerial member at ground")
            if sclass is ScattererClass.TERRESTRIAL_DYNAMIC and np.any(
                    pos[:, 2] > self.cfg.td_height_max + 1e-9):
                raise AssertionError(f"cluster {self.store.ids[row]}: terrestrial member too high")
            if sclass is ScattererClass.STATIC and np.any(self.store.vel[row] != 0.0):
                raise AssertionError(f"cluster {self.store.ids[row]}: static cluster moving")


# ---------------------------------------------------------------------------
# K-means (Lloyd) with farthest-point seeding
# ---------------------------------------------------------------------------

def lloyd_kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
                 max_iter: int = 50, tol: float = 1e-6) -> np.ndarray:
    """Cluster 3D points; returns per-point labels in [0, k').

    k is clamped to the population size; empty clusters are dropped, so the
    effective number of labels can be below k.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n == 0:
        raise ValueError("cannot cluster an empty population")
    k = max(1, min(int(k), n))
    # farthest-point seeding from a random start
    centers = np.empty((k, 3))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for m in range(1, k):
        centers[m] = points[int(np.argmax(d2))]
        d2 = np.minimum(d2, np.sum((points - centers[m]) ** 2, axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        labels = np.argmin(dist, axis=1)
        shift = 0.0
        for m in range(k):
            sel = labels == m
            if not np.any(sel):
                continue
            new = points[sel].mean(axis=0)
            shift = max(shift, float(np.linalg.norm(new - centers[m])))
            centers[m] = new
        if shift < tol:
            break
    # compact away empty clusters
    used = np.unique(labels)
    remap = {int(u): m for m, u in enumerate(used)}
    return np.array([remap[int(l)] for l in labels], dtype=np.int64)


# ---------------------------------------------------------------------------
# Scatterer placement
# ---------------------------------------------------------------------------

def _place_batch(state: EvolutionState, sclass: ScattererClass, side: Side,
                 key: tuple[int, int], n: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Sample up to n feasible scatterer positions for a link.

    Candidate (excess ratio, azimuth ratio, elevation ratio) triples are
    drawn in vectorised rounds; each member gets up to the configured number
    of resampling rounds before it is skipped.  Returns a (k, 3) array with
    k <= n; the shortfall is counted as skipped placements.
    """
    if n <= 0:
        return np.empty((0, 3))
    tx, rx, vtx, vrx = state.link_endpoints(key)
    d = link_distance(tx, rx)
    table, cfg = state.table, state.cfg
    cond = cfg.condition
    dist_p = table.get(sclass, cond, Family.DISTANCE)
    if side is Side.TX_SIDE:
        az_p = table.get(sclass, cond, Family.AAOD)
        el_p = table.get(sclass, cond, Family.EAOD)
        anchor, other, heading = tx, rx, vtx
    else:
        az_p = table.get(sclass, cond, Family.AAOA)
        el_p = table.get(sclass, cond, Family.EAOA)
        anchor, other, heading = rx, tx, vrx
    ex, ey = heading_axes(heading)
    baseline = other - anchor
    tries = cfg.placement_retries
    total = n * tries
    ratios = np.asarray(pr.sample_nonnegative(dist_p, rng, total))
    az = wrap_angles(np.asarray(pr.sample(az_p, rng, total)) * d)
    el = wrap_angles(np.asarray(pr.sample(el_p, rng, total)) * d)
    ce = np.cos(el)
    u = np.outer(ce * np.cos(az), ex) + np.outer(ce * np.sin(az), ey)
    u[:, 2] += np.sin(el)
    s_tot = (1.0 + ratios) * d
    cos_theta = (u @ baseline) / d
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (s_tot * s_tot - d * d) / (2.0 * (s_tot - d * cos_theta))
    pos = anchor + d1[:, None] * u
    good = np.isfinite(d1) & (d1 > 0.0) & (ratios > 0.0) & (pos[:, 2] >= 0.0)
    if sclass is ScattererClass.TERRESTRIAL_DYNAMIC:
        good &= pos[:, 2] <= cfg.td_height_max
    elif sclass is ScattererClass.AERIAL_DYNAMIC:
        good &= pos[:, 2] > 0.0
    grid = good.reshape(n, tries)
    hit = grid.any(axis=1)
    first = np.argmax(grid, axis=1)
    members = np.nonzero(hit)[0]
    state._skipped_placements += n - len(members)
    return pos[members * tries + first[members]]


def _sample_velocity(state: EvolutionState, sclass: ScattererClass,
                     rng: np.random.Generator) -> np.ndarray:
    cfg = state.cfg
    if sclass is ScattererClass.STATIC:
        return np.zeros(3)
    if sclass is ScattererClass.TERRESTRIAL_DYNAMIC:
        axis = np.array(cfg.road_axis, dtype=float)
        axis[2] = 0.0
        n = np.linalg.norm(axis)
        axis = axis / n if n > 0 else np.array([1.0, 0.0, 0.0])
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return sign * rng.uniform(0.0, cfg.td_speed_max) * axis
    # aerial dynamic: uniform direction, uniform speed
    v = rng.normal(size=3)
    n = np.linalg.norm(v)
    v = v / n if n > 0 else np.array([0.0, 0.0, 1.0])
    return rng.uniform(0.0, cfg.ad_speed_max) * v


def _members_per_cluster(table: ParameterTable, cond: DensityCondition,
                         sclass: ScattererClass, cap: int) -> int:
    mu_s = table.get(sclass, cond, Family.SCATTERER_NUMBER).mu
    mu_c = table.get(sclass, cond, Family.CLUSTER_NUMBER).mu
    return int(min(cap, max(1, round(mu_s / mu_c))))


def _sample_cluster(state: EvolutionState, sclass: ScattererClass, side: Side,
                    key: tuple[int, int], n_members: int,
                    rng: np.random.Generator):
    """Sample member positions/velocities for one cluster; None if all fail."""
    positions = _place_batch(state, sclass, side, key, n_members, rng)
    if not len(positions):
        return None
    velocities = np.asarray([_sample_velocity(state, sclass, rng)
                             for _ in range(len(positions))])
    vel = velocities.mean(axis=0)
    if sclass is ScattererClass.TERRESTRIAL_DYNAMIC:
        vel[2] = 0.0  # rigid cluster motion stays road-parallel
    return positions, vel


def _register_cluster(state: EvolutionState, sclass: ScattererClass, side: Side,
                      positions: np.ndarray, velocity: np.ndarray) -> int:
    ids = np.arange(state._next_scatterer_id,
                    state._next_scatterer_id + len(positions), dtype=np.int64)
    state._next_scatterer_id += len(positions)
    return state.store.add(sclass, side, ids, positions, velocity, state.time)


def _spawn_cluster(state: EvolutionState, sclass: ScattererClass, side: Side,
                   key: tuple[int, int], n_members: int,
                   rng: np.random.Generator) -> int | None:
    """Sample n scatterers for one link and register them as one cluster."""
    sampled = _sample_cluster(state, sclass, side, key, n_members, rng)
    if sampled is None:
        return None
    positions, vel = sampled
    return _register_cluster(state, sclass, side, positions, vel)


# ---------------------------------------------------------------------------
# Initialisation (environment snapshot at t0)
# ---------------------------------------------------------------------------

def init_environment(uavs: list[Trajectory], vehicles: list[Trajectory],
                     table: ParameterTable, cfg: EnvConfig, seed: int,
                     t0: float = 0.0) -> EvolutionState:
    """Build the t0 environment: sample, cluster, freeze VRs, match twins."""
    state = EvolutionState(uavs, vehicles, table, cfg, seed, t0)
    cond = cfg.condition
    classes = table.classes_present(cond)
    if ScattererClass.AERIAL_DYNAMIC not in classes:
        logger.info("condition %s has no aerial-dynamic rows; aerial population empty",
                    cond.value)

    # Step 1: per-link scatterer populations, pooled into one environment.
    raw: dict[ScattererClass, list[tuple[np.ndarray, np.ndarray, int, Side]]] = {
        c: [] for c in classes
    }
    for key in sorted(state.links):
        i, j = key
        rng = substream(seed, f"init/u{i}v{j}")
        tx, rx, _, _ = state.link_endpoints(key)
        d = link_distance(tx, rx)
        for sclass in classes:
            num_p = table.get(sclass, cond, Family.SCATTERER_NUMBER)
            count = pr.realize_count(num_p, d, rng,
                                     at_least_one=(sclass is ScattererClass.STATIC))
            if sclass is ScattererClass.STATIC:
                n_tx = int(np.sum(rng.random(count) < 0.5)) if count else 0
                groups = [(Side.TX_SIDE, n_tx), (Side.RX_SIDE, count - n_tx)]
            elif sclass is ScattererClass.AERIAL_DYNAMIC:
                groups = [(Side.TX_SIDE, count)]
            else:
                groups = [(Side.RX_SIDE, count)]
            for side, m in groups:
                for pos in _place_batch(state, sclass, side, key, m, rng):
                    vel = _sample_velocity(state, sclass, rng)
                    sid = state._next_scatterer_id
                    state._next_scatterer_id += 1
                    raw[sclass].append((pos, vel, sid, side))

    # Step 2: K-means per class over the shared population.
    d_mean = float(np.mean([
        link_distance(*state.link_endpoints(k)[:2]) for k in sorted(state.links)
    ]))
    for sclass in classes:
        entries = raw[sclass]
        if not entries:
            continue
        pts = np.asarray([e[0] for e in entries])
        k = int(round(d_mean * table.get(sclass, cond, Family.CLUSTER_NUMBER).mu))
        k = max(1, min(k, len(entries)))
        labels = lloyd_kmeans(pts, k, substream(seed, f"init/kmeans/{sclass.value}"))
        for m in range(labels.max() + 1):
            sel = np.nonzero(labels == m)[0]
            member_pos = pts[sel]
            member_vel = np.asarray([entries[int(s)][1] for s in sel])
            member_ids = np.asarray([entries[int(s)][2] for s in sel])
            if sclass is ScattererClass.STATIC:
                tx_votes = sum(1 for s in sel if entries[int(s)][3] is Side.TX_SIDE)
                side = Side.TX_SIDE if tx_votes * 2 >= len(sel) else Side.RX_SIDE
            elif sclass is ScattererClass.AERIAL_DYNAMIC:
                side = Side.TX_SIDE
            else:
                side = Side.RX_SIDE
            vel = member_vel.mean(axis=0)
            if sclass is ScattererClass.TERRESTRIAL_DYNAMIC:
                vel[2] = 0.0
            state.store.add(sclass, side, member_ids, member_pos, vel, t0)

    # Step 3: freeze visibility regions.
    for i, u in enumerate(state.uavs):
        state.vrs[u.agent_id] = compute_vr(state, u.agent_id)
    for j, v in enumerate(state.vehicles):
        state.vrs[v.agent_id] = compute_vr(state, v.agent_id)
    state._refresh_inclusion_masks()

    # Initial active sets are the VR-visible clusters; then match twins.
    for key in sorted(state.links):
        ls = state.links[key]
        for sclass in CLASS_ORDER:
            ids = [int(c) for c in state.store.ids[state.store.alive]
                   if CLASS_ORDER[state.store.cls[state.store.row(int(c))]] is sclass]
            act = [c for c in ids if state.link_inclusion(key, sclass, c)]
            ls.active[sclass] = act
            ls.counters[sclass] = Counters(m_s=len(act), m_l=len(act),
                                           m_new_target=0, m_new=0)
        rng = substream(seed, f"evolve/u{key[0]}v{key[1]}/0")
        ls.phi0_los = float(rng.uniform(0.0, 2.0 * math.pi))
        ls.phi0_gr = float(rng.uniform(0.0, 2.0 * math.pi))
        _match_link(state, key, rng)
    _touch_visibility(state)
    return state


def compute_vr(state: EvolutionState, agent_id: str) -> VisibilityRegion:
    """Frozen VR radius: farthest eligible cluster centroid at t0.

    UAVs consider static and aerial-dynamic clusters; vehicles consider
    static and terrestrial-dynamic clusters.
    """
    kind = None
    pos = None
    for i, u in enumerate(state.uavs):
        if u.agent_id == agent_id:
            kind, pos = AgentKind.UAV, state.uav_pos[i]
    for j, v in enumerate(state.vehicles):
        if v.agent_id == agent_id:
            kind, pos = AgentKind.VEHICLE, state.veh_pos[j]
    if kind is None:
        raise KeyError(f"unknown agent {agent_id!r}")
    if kind is AgentKind.UAV:
        eligible = (ScattererClass.STATIC, ScattererClass.AERIAL_DYNAMIC)
    else:
        eligible = (ScattererClass.STATIC, ScattererClass.TERRESTRIAL_DYNAMIC)
    mask = state.store.alive.copy()
    cls_ok = np.isin(state.store.cls, [_CLS_INDEX[c] for c in eligible])
    mask &= cls_ok
    if not np.any(mask):
        raise ScenarioError(f"no eligible clusters to size the VR of {agent_id!r}")
    d = np.linalg.norm(state.store.cent[mask] - pos, axis=1)
    return VisibilityRegion(agent_id=agent_id, radius=float(d.max()))


def _touch_visibility(state: EvolutionState) -> None:
    """Refresh last-visible stamps for clusters inside any agent's VR.

    Rows added after the inclusion masks were built already carry their
    birth time as the last-visible stamp, so the cached masks suffice.
    """
    st = state.store
    if not state._incl:
        return
    n = min(len(m) for m in state._incl.values())
    if n == 0:
        return
    seen = np.zeros(n, dtype=bool)
    for mask in state._incl.values():
        seen |= mask[:n]
    st.last_visible[:n][seen] = state.time


# ---------------------------------------------------------------------------
# Twin matching
# ---------------------------------------------------------------------------

def _draw_virtual_delay(cfg: EnvConfig, rng: np.random.Generator) -> float:
    if cfg.virtual_delay_law == "exponential":
        return pr.sample_exponential(cfg.virtual_delay_mean, rng)
    if cfg.virtual_delay_law == "truncated-normal":
        return pr.sample_truncated_normal(cfg.virtual_delay_mean, cfg.virtual_delay_std, rng)
    raise ValueError(f"unknown virtual delay law {cfg.virtual_delay_law!r}")


def _drop_rays(ls: LinkState, keep: np.ndarray) -> None:
    ls.r_twin = ls.r_twin[keep]
    ls.r_rowA = ls.r_rowA[keep]
    ls.r_rowZ = ls.r_rowZ[keep]
    ls.r_offA = ls.r_offA[keep]
    ls.r_offZ = ls.r_offZ[keep]
    ls.r_idA = ls.r_idA[keep]
    ls.r_idZ = ls.r_idZ[keep]
    ls.r_class = ls.r_class[keep]
    ls.r_virt = ls.r_virt[keep]
    ls.r_zdb = ls.r_zdb[keep]
    ls.r_phi0 = ls.r_phi0[keep]
    ls.r_acc = ls.r_acc[keep]
    ls.r_prev_f = ls.r_prev_f[keep]
    ls.r_fresh = ls.r_fresh[keep]


def _ray_class(cls_a: ScattererClass, cls_b: ScattererClass) -> ScattererClass:
    """Dominant dynamic class of a twin pair (static only if both static)."""
    if ScattererClass.AERIAL_DYNAMIC in (cls_a, cls_b):
        return ScattererClass.AERIAL_DYNAMIC
    if ScattererClass.TERRESTRIAL_DYNAMIC in (cls_a, cls_b):
        return ScattererClass.TERRESTRIAL_DYNAMIC
    return ScattererClass.STATIC


def _match_link(state: EvolutionState, key: tuple[int, int],
                rng: np.random.Generator) -> None:
    """Keep surviving twins, randomly pair the still-unmatched clusters."""
    ls = state.links[key]
    vis = state.visible_clusters(key)
    tx_list, rx_list = vis[Side.TX_SIDE], vis[Side.RX_SIDE]
    tx_set, rx_set = set(tx_list), set(rx_list)

    # kill twins whose sides are no longer matchable
    dead = [tid for tid in ls.twin_order
            if ls.twin_tx[tid] not in tx_set or ls.twin_rx[tid] not in rx_set]
    if dead:
        dead_set = set(dead)
        keep = ~np.isin(ls.r_twin, list(dead_set))
        _drop_rays(ls, keep)
        for tid in dead:
            ls.twin_order.remove(tid)
            del ls.twin_tx[tid], ls.twin_rx[tid], ls.twin_virt[tid]

    used_tx = set(ls.twin_tx.values())
    used_rx = set(ls.twin_rx.values())
    free_tx = [c for c in tx_list if c not in used_tx and c not in used_rx]
    free_rx = [c for c in rx_list if c not in used_rx and c not in used_tx and c not in free_tx]
    m = min(len(free_tx), len(free_rx))
    if m == 0:
        return
    pick_tx = list(rng.permutation(np.asarray(free_tx, dtype=np.int64))[:m])
    pick_rx = list(rng.permutation(np.asarray(free_rx, dtype=np.int64))[:m])

    new_rows = []
    for ca, cz in zip(pick_tx, pick_rx):
        ca, cz = int(ca), int(cz)
        tid = state._next_twin_id
        state._next_twin_id += 1
        virt = _draw_virtual_delay(state.cfg, rng)
        ls.twin_order.append(tid)
        ls.twin_tx[tid] = ca
        ls.twin_rx[tid] = cz
        ls.twin_virt[tid] = virt
        rowA = state.store.row(ca)
        rowZ = state.store.row(cz)
        na = len(state.store.member_ids[rowA])
        nz = len(state.store.member_ids[rowZ])
        g = min(state.cfg.rays_per_twin, na, nz)
        if g == 0:
            continue
        sel_a = rng.choice(na, size=g, replace=False)
        sel_z = rng.permutation(rng.choice(nz, size=g, replace=False))
        cls_pair = _ray_class(CLASS_ORDER[state.store.cls[rowA]],
                              CLASS_ORDER[state.store.cls[rowZ]])
        sigma_e = state.table.get(cls_pair, state.cfg.condition,
                                  Family.POWER_DELAY).sigma_e
        for a, z in zip(sel_a, sel_z):
            new_rows.append((
                tid, rowA, rowZ,
                state.store.member_offsets[rowA][a],
                state.store.member_offsets[rowZ][z],
                state.store.member_ids[rowA][a],
                state.store.member_ids[rowZ][z],
                _CLS_INDEX[cls_pair],
                virt,
                float(rng.normal(0.0, sigma_e)) if sigma_e > 0 else 0.0,
                float(rng.uniform(0.0, 2.0 * math.pi)),
            ))
    if not new_rows:
        return
    ls.r_twin = np.concatenate([ls.r_twin, np.asarray([r[0] for r in new_rows], dtype=np.int64)])
    ls.r_rowA = np.concatenate([ls.r_rowA, np.asarray([r[1] for r in new_rows], dtype=np.int64)])
    ls.r_rowZ = np.concatenate([ls.r_rowZ, np.asarray([r[2] for r in new_rows], dtype=np.int64)])
    ls.r_offA = np.vstack([ls.r_offA, np.asarray([r[3] for r in new_rows])])
    ls.r_offZ = np.vstack([ls.r_offZ, np.asarray([r[4] for r in new_rows])])
    ls.r_idA = np.concatenate([ls.r_idA, np.asarray([r[5] for r in new_rows], dtype=np.int64)])
    ls.r_idZ = np.concatenate([ls.r_idZ, np.asarray([r[6] for r in new_rows], dtype=np.int64)])
    ls.r_class = np.concatenate([ls.r_class, np.asarray([r[7] for r in new_rows], dtype=np.int8)])
    ls.r_virt = np.concatenate([ls.r_virt, np.asarray([r[8] for r in new_rows])])
    ls.r_zdb = np.concatenate([ls.r_zdb, np.asarray([r[9] for r in new_rows])])
    ls.r_phi0 = np.concatenate([ls.r_phi0, np.asarray([r[10] for r in new_rows])])
    ls.r_acc = np.concatenate([ls.r_acc, np.zeros(len(new_rows))])
    ls.r_prev_f = np.concatenate([ls.r_prev_f, np.full(len(new_rows), math.nan)])
    ls.r_fresh = np.concatenate([ls.r_fresh, np.ones(len(new_rows), dtype=bool)])


def match_twin_clusters(state: EvolutionState, key: tuple[int, int],
                        rng: np.random.Generator | None = None) -> list[TwinCluster]:
    """Re-run matching for one link (idempotent for surviving pairs)."""
    if rng is None:
        rng = substream(state.seed, f"evolve/u{key[0]}v{key[1]}/{state.snapshot_index}/rematch")
    _match_link(state, key, rng)
    return state.visible_twins(key)


# ---------------------------------------------------------------------------
# Snapshot advance
# ---------------------------------------------------------------------------

def advance(state: EvolutionState, dt: float) -> EvolutionState:
    """Move, survive, give birth, re-match; returns the mutated state."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    cfg = state.cfg
    table = state.table
    cond = cfg.condition
    k = state.snapshot_index + 1
    state.snapshot_index = k
    state.time = state.t0 + k * dt
    state._refresh_agents()

    # (a) advect clusters rigidly; bounce aerial clusters off the ground
    st = state.store
    if len(st.cent):
        st.cent += st.vel * dt
        ad_rows = np.nonzero(st.alive & (st.cls == _CLS_INDEX[ScattererClass.AERIAL_DYNAMIC]))[0]
        for r in ad_rows:
            min_z = st.cent[r, 2] + float(np.min(st.member_offsets[r][:, 2]))
            if min_z <= 0.0 and st.vel[r, 2] <= 0.0:
                st.vel[r, 2] = abs(st.vel[r, 2]) if st.vel[r, 2] != 0.0 else 0.5
                st.cent[r, 2] += 2.0 * (0.0 - min_z) + 1e-6
    state._refresh_inclusion_masks()

    # (b)-(d) per link: survive, draw targets, give birth
    for key in sorted(state.links):
        ls = state.links[key]
        rng = substream(state.seed, f"evolve/u{key[0]}v{key[1]}/{k}")
        tx, rx, _, _ = state.link_endpoints(key)
        d = link_distance(tx, rx)
        for sclass in CLASS_ORDER:
            prev = ls.active.get(sclass, [])
            survivors = [c for c in prev if state.link_inclusion(key, sclass, c)]
            m_s = len(survivors)
            if table.has(sclass, cond, Family.CLUSTER_NUMBER):
                m_l = pr.realize_count(
                    table.get(sclass, cond, Family.CLUSTER_NUMBER), d, rng,
                    at_least_one=(sclass is ScattererClass.STATIC))
            else:
                m_l = 0
            target = new_cluster_count(m_l, m_s)
            born: list[int] = []
            if target > 0:
                n_members = _members_per_cluster(table, cond, sclass, cfg.members_cap)
                for _ in range(target):
                    cid = _spawn_birth(state, sclass, key, n_members, rng)
                    if cid is not None:
                        born.append(cid)
                    else:
                        state._skipped_births += 1
            ls.active[sclass] = survivors + born
            ls.counters[sclass] = Counters(m_s=m_s, m_l=m_l,
                                           m_new_target=target, m_new=len(born))
        _match_link(state, key, rng)

    _touch_visibility(state)
    _collect_garbage(state)
    return state


_BACKOFF_AFTER = 200      # accumulated failure score that triggers probing mode
_BACKOFF_PROBE = 64       # snapshots between single-attempt probes
_BACKOFF_REBATE = 10      # failure score refunded by one success; backoff
                          # engages only when fewer than ~1 in 10 births land


def _spawn_birth(state: EvolutionState, sclass: ScattererClass,
                 key: tuple[int, int], n_members: int,
                 rng: np.random.Generator) -> int | None:
    """Birth one cluster for a link; retried until it lands inside the VR.

    A degenerate initial environment can freeze a VR too small to ever
    receive a birth; once the failure score saturates, attempts drop to a
    single probe every few snapshots so such runs stay cheap.
    """
    ls = state.links[key]
    failed = ls.birth_failures.get(sclass, 0)
    if failed >= _BACKOFF_AFTER:
        k = state.snapshot_index
        if k % _BACKOFF_PROBE or ls.birth_probe.get(sclass) == k:
            return None
        ls.birth_probe[sclass] = k
    i, j = key
    uav_id = state.uavs[i].agent_id
    veh_id = state.vehicles[j].agent_id
    for _ in range(state.cfg.placement_retries):
        if sclass is ScattererClass.STATIC:
            side = Side.TX_SIDE if rng.random() < 0.5 else Side.RX_SIDE
        elif sclass is ScattererClass.AERIAL_DYNAMIC:
            side = Side.TX_SIDE
        else:
            side = Side.RX_SIDE
        sampled = _sample_cluster(state, sclass, side, key, n_members, rng)
        if sampled is None:
            continue
        positions, vel = sampled
        centroid = positions.mean(axis=0)
        if sclass is ScattererClass.AERIAL_DYNAMIC:
            anchors = (uav_id,)
        elif sclass is ScattererClass.TERRESTRIAL_DYNAMIC:
            anchors = (veh_id,)
        else:
            anchors = (uav_id if side is Side.TX_SIDE else veh_id,)
        ok = all(
            centroid[2] >= 0.0
            and float(np.linalg.norm(centroid - state._agent_pos(a))) <= state.vrs[a].radius
            for a in anchors
        )
        if ok:
            ls.birth_failures[sclass] = max(0, failed - _BACKOFF_REBATE)
            return _register_cluster(state, sclass, side, positions, vel)
    state._skipped_births += 1
    ls.birth_failures[sclass] = failed + 1
    if failed + 1 == _BACKOFF_AFTER:
        logger.warning("births for %s on link %s keep missing the VR; backing off",
                       sclass.value, key)
    else:
        logger.debug("birth skipped: no in-VR placement for %s on link %s",
                     sclass.value, key)
    return None


def _collect_garbage(state: EvolutionState) -> None:
    """Drop clusters invisible to every agent for longer than the grace period."""
    st = state.store
    referenced: set[int] = set()
    for ls in state.links.values():
        for ids in ls.active.values():
            referenced.update(ids)
        referenced.update(ls.twin_tx.values())
        referenced.update(ls.twin_rx.values())
    stale = np.nonzero(st.alive & (state.time - st.last_visible > state.cfg.gc_grace))[0]
    drop = [r for r in stale if int(st.ids[r]) not in referenced]
    if drop:
        st.drop(np.asarray(drop, dtype=np.int64))
