"""Scenario description, validation, and canonical hashing.

A scenario file is JSON mirroring :class:`Scenario` one-to-one.  Validation
collects every violated field so a bad config is reported in full, not one
field at a time.  The scenario hash identifies the sweep template: it covers
everything except the seed and the density condition, so outputs of one
sweep share a hash across conditions and seeds.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cir import GroundModel, WindowFunction
from .evolution import EnvConfig
from .geometry import AgentKind, Trajectory
from .params import DensityCondition

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario configuration; carries one message per violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario: " + "; ".join(problems))


@dataclass
class AgentSpec:
    agent_id: str
    waypoints: list[list[float]]  # rows of (time s, x m, y m, z m)

    def trajectory(self, kind: AgentKind) -> Trajectory:
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 4:
            raise ValueError(f"agent {self.agent_id}: waypoints must be rows of (t, x, y, z)")
        return Trajectory(self.agent_id, kind, times=wp[:, 0], points=wp[:, 1:])


@dataclass
class VirtualDelaySpec:
    law: str = "exponential"          # or "truncated-normal"
    mean_s: float = 80e-9
    std_s: float = 15e-9


@dataclass
class MotionSpec:
    td_speed_max: float = 15.0
    ad_speed_max: float = 10.0
    td_height_max: float = 4.0
    road_axis: list[float] = field(default_factory=lambda: [1.0, 0.0, 0.0])


@dataclass
class GroundSpec:
    rel_permittivity: float = 5.0
    polarization: str = "vertical"


@dataclass
class OutputSpec:
    cir_every: int = 10               # snapshot decimation of the CIR dump
    tf_every: int = 500               # snapshot decimation of transfer dumps
    tf_points: int = 257              # frequency samples across the band
    dump_snapshots: bool = False


@dataclass
class EstimatorSpec:
    tacf_anchors_s: list[float] = field(default_factory=lambda: [0.0, 2.0])
    tacf_max_lag: int = 50
    tsi_anchor_count: int = 200
    tsi_threshold: float = 0.1
    dpsd_max_lag: int = 50


@dataclass
class Scenario:
    """Everything a run needs; defaults mirror the reference setup."""

    condition: DensityCondition = DensityCondition.HIGH
    fc_hz: float = 28e9
    bandwidth_hz: float = 2e9
    chi: float = 1.35
    dt_s: float = 1e-3
    duration_s: float = 2.1
    warmup_s: float = 0.3
    ricean_db: float = 5.0
    eta_gr: float = 0.3
    rays_per_twin: int = 5
    seed: int = 1
    uavs: list[AgentSpec] = field(default_factory=list)
    vehicles: list[AgentSpec] = field(default_factory=list)
    virtual_delay: VirtualDelaySpec = field(default_factory=VirtualDelaySpec)
    motion: MotionSpec = field(default_factory=MotionSpec)
    ground: GroundSpec = field(default_factory=GroundSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    estimators: EstimatorSpec = field(default_factory=EstimatorSpec)
    window_s: list[float] | None = None  # defaults to the whole run
    # how many of the listed agents participate per density condition;
    # None means the full fleet under every condition
    fleet_by_condition: dict[str, list[int]] | None = None

    # -- derived helpers ------------------------------------------------------

    @property
    def snapshots(self) -> int:
        return int(round(self.duration_s / self.dt_s))

    @property
    def warmup_snapshots(self) -> int:
        """Settling snapshots simulated before the recording window.

        The cold-start environment takes a while to reach its steady cluster
        population (the per-snapshot target count only adds clusters when it
        exceeds the survivor count, so the active set climbs like a running
        maximum).  Statistics anchored at t=0 would otherwise be dominated by
        that transient.
        """
        return int(round(self.warmup_s / self.dt_s))

    @property
    def ricean_linear(self) -> float:
        return 10.0 ** (self.ricean_db / 10.0)

    def times(self) -> np.ndarray:
        return np.arange(self.snapshots) * self.dt_s

    def fleet(self) -> tuple[int, int]:
        """Participating (UAV, vehicle) counts under the current condition."""
        if self.fleet_by_condition is None:
            return len(self.uavs), len(self.vehicles)
        n_u, n_v = self.fleet_by_condition[self.condition.value]
        return int(n_u), int(n_v)

    def uav_trajectories(self) -> list[Trajectory]:
        n_u, _ = self.fleet()
        return [a.trajectory(AgentKind.UAV) for a in self.uavs[:n_u]]

    def vehicle_trajectories(self) -> list[Trajectory]:
        _, n_v = self.fleet()
        return [a.trajectory(AgentKind.VEHICLE) for a in self.vehicles[:n_v]]

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            condition=self.condition,
            rays_per_twin=self.rays_per_twin,
            virtual_delay_law=self.virtual_delay.law,
            virtual_delay_mean=self.virtual_delay.mean_s,
            virtual_delay_std=self.virtual_delay.std_s,
            td_speed_max=self.motion.td_speed_max,
            ad_speed_max=self.motion.ad_speed_max,
            td_height_max=self.motion.td_height_max,
            road_axis=tuple(self.motion.road_axis),
        )

    def ground_model(self) -> GroundModel:
        return GroundModel(rel_permittivity=self.ground.rel_permittivity,
                           polarization=self.ground.polarization)

    def window(self) -> WindowFunction:
        if self.window_s is None:
            return WindowFunction(0.0, self.duration_s)
        return WindowFunction(self.window_s[0], self.window_s[1])

    def freq_grid(self) -> np.ndarray:
        n = self.outputs.tf_points
        return np.linspace(self.fc_hz - self.bandwidth_hz / 2,
                           self.fc_hz + self.bandwidth_hz / 2, n)

    # -- validation ------------------------------------------------------------

    def validate(self) -> None:
        problems: list[str] = []

        def numeric(value) -> bool:
            return isinstance(value, (int, float)) and math.isfinite(value)

        def positive(name, value):
            if not (numeric(value) and value > 0):
                problems.append(f"{name}: must be a positive number, got {value!r}")

        positive("fc_hz", self.fc_hz)
        positive("bandwidth_hz", self.bandwidth_hz)
        positive("dt_s", self.dt_s)
        positive("duration_s", self.duration_s)
        if numeric(self.duration_s) and numeric(self.dt_s) and self.duration_s < self.dt_s:
            problems.append(f"duration_s: must be at least dt_s, got {self.duration_s}")
        if not (numeric(self.warmup_s) and self.warmup_s >= 0):
            problems.append(f"warmup_s: must be nonnegative, got {self.warmup_s!r}")
        if not numeric(self.chi):
            problems.append(f"chi: must be finite, got {self.chi!r}")
        if not numeric(self.ricean_db):
            problems.append(f"ricean_db: must be finite, got {self.ricean_db!r}")
        if not (numeric(self.eta_gr) and 0.0 <= self.eta_gr <= 1.0):
            problems.append(f"eta_gr: must be within [0, 1], got {self.eta_gr}")
        if not (isinstance(self.rays_per_twin, int) and self.rays_per_twin >= 1):
            problems.append(f"rays_per_twin: must be a positive integer, got {self.rays_per_twin!r}")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            problems.append(f"seed: must be a nonnegative integer, got {self.seed!r}")
        if not self.uavs:
            problems.append("uavs: need at least one UAV")
        if not self.vehicles:
            problems.append("vehicles: need at least one vehicle")
        if self.fleet_by_condition is not None:
            for cond in DensityCondition:
                pair = self.fleet_by_condition.get(cond.value)
                if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                        or not 1 <= pair[0] <= max(len(self.uavs), 1)
                        or not 1 <= pair[1] <= max(len(self.vehicles), 1)):
                    problems.append(
                        f"fleet_by_condition.{cond.value}: need [n_uavs, n_vehicles] "
                        f"within the listed fleet, got {pair!r}")
        if self.virtual_delay.law not in ("exponential", "truncated-normal"):
            problems.append(f"virtual_delay.law: unknown law {self.virtual_delay.law!r}")
        if not self.virtual_delay.mean_s > 0:
            problems.append(f"virtual_delay.mean_s: must be positive, got {self.virtual_delay.mean_s}")
        if self.virtual_delay.std_s < 0:
            problems.append(f"virtual_delay.std_s: must be nonnegative, got {self.virtual_delay.std_s}")
        for name, value in (("motion.td_speed_max", self.motion.td_speed_max),
                            ("motion.ad_speed_max", self.motion.ad_speed_max),
                            ("motion.td_height_max", self.motion.td_height_max)):
            if value < 0:
                problems.append(f"{name}: must be nonnegative, got {value}")
        if self.ground.polarization not in ("vertical", "horizontal"):
            problems.append(f"ground.polarization: unknown value {self.ground.polarization!r}")
        if self.ground.rel_permittivity < 1.0:
            problems.append(f"ground.rel_permittivity: must be >= 1, got {self.ground.rel_permittivity}")
        if self.window_s is not None:
            if len(self.window_s) != 2 or not self.window_s[0] < self.window_s[1]:
                problems.append(f"window_s: need [start, end] with start < end, got {self.window_s}")
        if self.outputs.cir_every < 1 or self.outputs.tf_every < 0:
            problems.append("outputs: cir_every must be >= 1 and tf_every >= 0")
        if self.outputs.tf_points < 2:
            problems.append(f"outputs.tf_points: need at least 2, got {self.outputs.tf_points}")
        est = self.estimators
        if est.tacf_max_lag < 1 or est.dpsd_max_lag < 1:
            problems.append("estimators: correlation lags must be >= 1")
        if not 0 < est.tsi_threshold:
            problems.append(f"estimators.tsi_threshold: must be positive, got {est.tsi_threshold}")
        if est.tsi_anchor_count < 1:
            problems.append(f"estimators.tsi_anchor_count: must be >= 1, got {est.tsi_anchor_count}")
        if numeric(self.duration_s) and numeric(self.dt_s) and self.dt_s > 0:
            horizon = (self.snapshots - 1 - est.tacf_max_lag) * self.dt_s
            for anchor in est.tacf_anchors_s:
                if not 0 <= anchor <= max(horizon, 0):
                    problems.append(
                        f"estimators.tacf_anchors_s: anchor {anchor} + lag window exceeds the run")
        for agents, kind in ((self.uavs, AgentKind.UAV), (self.vehicles, AgentKind.VEHICLE)):
            for spec in agents:
                try:
                    tr = spec.trajectory(kind)
                except ValueError as exc:
                    problems.append(f"{kind.value} {spec.agent_id}: {exc}")
                    continue
                if kind is AgentKind.VEHICLE and np.any(tr.points[:, 2] <= 0.0):
                    problems.append(
                        f"vehicle {spec.agent_id}: antenna height must be positive for the ground bounce")
        if problems:
            raise ConfigError(problems)

    # -- serialisation ----------------------------------------------------------

    def to_dict(self) -> dict:
        data = asdict(self)
        data["condition"] = self.condition.value
        data["schema_version"] = SCHEMA_VERSION
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ConfigError(["scenario file must be a JSON object"])
        data = dict(data)
        data.pop("schema_version", None)
        problems = []
        try:
            condition = DensityCondition(data.pop("condition", "high"))
        except ValueError as exc:
            problems.append(f"condition: {exc}")
            condition = DensityCondition.HIGH

        def build(klass, key, default):
            raw = data.pop(key, None)
            if raw is None:
                return default()
            try:
                return klass(**raw)
            except TypeError as exc:
                problems.append(f"{key}: {exc}")
                return default()

        def agents(key):
            out = []
            for a in data.pop(key, []):
                try:
                    out.append(AgentSpec(**a))
                except TypeError as exc:
                    problems.append(f"{key}: {exc}")
            return out

        uavs = agents("uavs")
        vehicles = agents("vehicles")
        virtual_delay = build(VirtualDelaySpec, "virtual_delay", VirtualDelaySpec)
        motion = build(MotionSpec, "motion", MotionSpec)
        ground = build(GroundSpec, "ground", GroundSpec)
        outputs = build(OutputSpec, "outputs", OutputSpec)
        estimators = build(EstimatorSpec, "estimators", EstimatorSpec)
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        extra = set(data) - known
        if extra:
            problems.append(f"unknown fields: {sorted(extra)}")
        if problems:
            raise ConfigError(problems)
        kwargs = {k: v for k, v in data.items() if k in known}
        return cls(condition=condition, uavs=uavs, vehicles=vehicles,
                   virtual_delay=virtual_delay, motion=motion, ground=ground,
                   outputs=outputs, estimators=estimators, **kwargs)

    def scenario_hash(self) -> str:
        """Template hash: stable across seeds and density conditions."""
        data = self.to_dict()
        data.pop("seed", None)
        data.pop("condition", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from None
    scenario = Scenario.from_dict(data)
    scenario.validate()
    return scenario


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def reference_scenario(condition: DensityCondition = DensityCondition.HIGH,
                       seed: int = 1, duration_s: float = 2.1,
                       n_uavs: int = 1, n_vehicles: int = 1,
                       fleet_by_condition: dict[str, list[int]] | None = None) -> Scenario:
    """The shipped example: UAVs over a straight road with vehicles on it.

    The primary link's headings realise a 60 degree departure azimuth off
    the UAV heading, a 135 degree arrival azimuth off the vehicle heading,
    and 45 degree elevation magnitudes at t0.  Extra agents are laid out
    deterministically: UAVs at lateral/altitude offsets, vehicles spaced
    back along the road at 10-15 m/s.
    """
    span = max(duration_s, 3.0)
    uav_dir = [math.cos(-math.pi / 3), math.sin(-math.pi / 3), 0.0]
    veh_dir = [math.cos(math.pi / 4), math.sin(math.pi / 4), 0.0]
    uavs = []
    for i in range(n_uavs):
        az = -math.pi / 3 + i * math.pi / 5
        d = [math.cos(az), math.sin(az)]
        start = [-25.0 * i, 30.0 * i, 50.0 + 8.0 * i]
        uavs.append(AgentSpec(f"uav{i}", [
            [0.0, start[0], start[1], start[2]],
            [span, start[0] + 10.0 * span * d[0], start[1] + 10.0 * span * d[1], start[2]],
        ]))
    vehicles = []
    for j in range(n_vehicles):
        speed = 12.0 + (j % 4)
        start = [48.0 - 16.0 * j * veh_dir[0], -16.0 * j * veh_dir[1], 2.0]
        vehicles.append(AgentSpec(f"veh{j}", [
            [0.0, start[0], start[1], start[2]],
            [span, start[0] + speed * span * veh_dir[0], start[1] + speed * span * veh_dir[1], 2.0],
        ]))
    return Scenario(condition=condition, seed=seed, duration_s=duration_s,
                    uavs=uavs, vehicles=vehicles,
                    motion=MotionSpec(road_axis=[veh_dir[0], veh_dir[1], 0.0]),
                    fleet_by_condition=fleet_by_condition)


def reference_sweep_scenario(seed: int = 1, duration_s: float = 2.1) -> Scenario:
    """Sweep template with density-scaled fleets.

    Traffic density conditions differ both in the fitted parameters and in
    how many transceivers share the environment (scaled-down counterparts
    of the measured fleets): 1x1 under low, 1x2 under medium, 2x2 under
    high density.
    """
    return reference_scenario(
        DensityCondition.HIGH, seed=seed, duration_s=duration_s,
        n_uavs=2, n_vehicles=2,
        fleet_by_condition={"low": [1, 1], "medium": [1, 2], "high": [2, 2]})
