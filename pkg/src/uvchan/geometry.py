"""Trajectories, local frames, and scatterer placement.

Coordinates are world ENU with z up and the ground at z = 0.  Each agent's
local frame is its instantaneous heading (the horizontal projection of its
velocity, falling back to the world x-axis when stationary): azimuths are
measured in the horizontal plane from the heading axis, elevations from the
horizontal plane, positive up.

Scatterer positions are realised from sampled (angle, excess-distance-ratio)
pairs by intersecting the departure ray with the prolate ellipsoid whose foci
are the two link endpoints and whose total path length is
``(1 + ratio) * link_distance``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .params import ScattererClass


class AgentKind(Enum):
    UAV = "uav"
    VEHICLE = "vehicle"


class Side(Enum):
    TX_SIDE = "tx"
    RX_SIDE = "rx"
    SHARED = "shared"


class DegenerateLinkError(ValueError):
    """Coincident endpoints or zero-length directions."""


class PlacementError(ValueError):
    """Sampled (angle, ratio) pair admits no valid scatterer position."""


def vec3(x: float, y: float, z: float) -> np.ndarray:
    v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"position components must be finite, got {v}")
    return v


def link_distance(tx: np.ndarray, rx: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(rx, dtype=float) - np.asarray(tx, dtype=float)))


def wrap_angle(a: float) -> float:
    """Wrap an angle into the principal range (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi)
    w = np.where(w == 0.0, 2.0 * np.pi, w)
    return w - np.pi


def ratio_to_angle(angle_ratio: float, distance: float) -> float:
    """Angle-per-meter ratio times link distance, wrapped to (-pi, pi]."""
    if distance == 0.0:
        raise DegenerateLinkError("zero link distance")
    return wrap_angle(angle_ratio * distance)


def angle_to_ratio(angle: float, distance: float) -> float:
    if distance == 0.0:
        raise DegenerateLinkError("zero link distance")
    return wrap_angle(angle) / distance


@dataclass(frozen=True)
class RayAngles:
    """Departure/arrival azimuths and elevations in the endpoint frames."""

    aaod: float
    eaod: float
    aaoa: float
    eaoa: float

    def __post_init__(self) -> None:
        for name in ("aaod", "aaoa"):
            a = getattr(self, name)
            if not -math.pi < a <= math.pi:
                raise ValueError(f"{name} out of (-pi, pi]: {a}")
        for name in ("eaod", "eaoa"):
            e = getattr(self, name)
            if not -math.pi / 2 <= e <= math.pi / 2:
                raise ValueError(f"{name} out of [-pi/2, pi/2]: {e}")


def heading_axes(heading: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal frame axes (along-heading, left-of-heading) for an agent.

    ``heading`` is any velocity-like vector; only its horizontal part counts.
    A stationary (or purely vertical) agent falls back to the world x-axis.
    """
    ex = np.array([1.0, 0.0, 0.0])
    if heading is not None:
        h = np.array([heading[0], heading[1], 0.0], dtype=float)
        n = np.linalg.norm(h)
        if n > 1e-12:
            ex = h / n
    ey = np.array([-ex[1], ex[0], 0.0])
    return ex, ey


def direction_from_angles(azimuth: float, elevation: float,
                          heading: np.ndarray | None = None) -> np.ndarray:
    """Unit vector for (azimuth, elevation) in a heading-rotated frame."""
    ex, ey = heading_axes(heading)
    ce = math.cos(elevation)
    return (ce * math.cos(azimuth)) * ex + (ce * math.sin(azimuth)) * ey \
        + np.array([0.0, 0.0, math.sin(elevation)])


def angles_from_direction(d: np.ndarray, heading: np.ndarray | None = None) -> tuple[float, float]:
    """Canonical (azimuth in (-pi, pi], elevation in [-pi/2, pi/2]) of a direction."""
    d = np.asarray(d, dtype=float)
    n = np.linalg.norm(d)
    if n < 1e-15:
        raise DegenerateLinkError("zero-length direction")
    ex, ey = heading_axes(heading)
    x, y, z = float(d @ ex), float(d @ ey), float(d[2])
    elevation = math.atan2(z, math.hypot(x, y))
    azimuth = 0.0 if (x == 0.0 and y == 0.0) else math.atan2(y, x)
    if azimuth == -math.pi:
        azimuth = math.pi
    return azimuth, elevation


def excess_distance_ratio(tx: np.ndarray, rx: np.ndarray, s: np.ndarray) -> float:
    """Detour of the bounced path over the direct path, per meter of link."""
    d = link_distance(tx, rx)
    if d == 0.0:
        raise DegenerateLinkError("coincident link endpoints")
    detour = (np.linalg.norm(np.asarray(tx, float) - np.asarray(s, float))
              + np.linalg.norm(np.asarray(rx, float) - np.asarray(s, float)) - d)
    return float(detour) / d


def place_scatterer(anchor: np.ndarray, other: np.ndarray, azimuth: float,
                    elevation: float, excess_ratio: float,
                    heading: np.ndarray | None = None) -> np.ndarray:
    """Place a scatterer along a departure ray on the ellipsoid shell.

    ``anchor`` is the endpoint the ray leaves (Tx for departure angles, Rx
    for arrival angles); ``other`` is the opposite endpoint.  The returned
    point s satisfies |anchor-s| + |other-s| = (1 + excess_ratio) * |anchor-other|.
    """
    anchor = np.asarray(anchor, dtype=float)
    other = np.asarray(other, dtype=float)
    d = link_distance(anchor, other)
    if d == 0.0:
        raise DegenerateLinkError("coincident link endpoints")
    if not excess_ratio > 0.0:
        raise PlacementError(f"excess ratio must be positive, got {excess_ratio}")
    u = direction_from_angles(azimuth, elevation, heading)
    s_tot = (1.0 + excess_ratio) * d
    cos_theta = float(u @ (other - anchor)) / d
    denom = 2.0 * (s_tot - d * cos_theta)
    d1 = (s_tot * s_tot - d * d) / denom
    if not (math.isfinite(d1) and d1 > 0.0):
        raise PlacementError(f"infeasible placement: ray length {d1}")
    return anchor + d1 * u


def angles_of(tx: np.ndarray, rx: np.ndarray, s: np.ndarray,
              tx_heading: np.ndarray | None = None,
              rx_heading: np.ndarray | None = None) -> RayAngles:
    """Departure angles of s seen from Tx, arrival angles seen from Rx."""
    aaod, eaod = angles_from_direction(np.asarray(s, float) - np.asarray(tx, float), tx_heading)
    aaoa, eaoa = angles_from_direction(np.asarray(s, float) - np.asarray(rx, float), rx_heading)
    return RayAngles(aaod=aaod, eaod=eaod, aaoa=aaoa, eaoa=eaoa)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Piecewise-linear waypoint track of one agent.

    Velocity on each segment is the exact difference quotient of its
    endpoints; outside the waypoint span the agent holds the boundary
    position at zero velocity.
    """

    agent_id: str
    kind: AgentKind
    times: np.ndarray
    points: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.times.ndim != 1 or self.points.shape != (self.times.size, 3):
            raise ValueError(f"trajectory {self.agent_id}: need N times and Nx3 points")
        if self.times.size < 1 or not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.points)):
            raise ValueError(f"trajectory {self.agent_id}: non-finite or empty waypoints")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError(f"trajectory {self.agent_id}: waypoint times must be strictly increasing")
        z = self.points[:, 2]
        if self.kind is AgentKind.VEHICLE and np.ptp(z) != 0.0:
            raise ValueError(f"trajectory {self.agent_id}: vehicle antenna height must be constant")
        if self.kind is AgentKind.UAV and np.any(z <= 0.0):
            raise ValueError(f"trajectory {self.agent_id}: UAV altitude must stay positive")

    def _segment(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), max(self.times.size - 2, 0))

    def position(self, t: float) -> np.ndarray:
        if self.times.size == 1 or t <= self.times[0]:
            return self.points[0].copy()
        if t >= self.times[-1]:
            return self.points[-1].copy()
        k = self._segment(t)
        f = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return self.points[k] + f * (self.points[k + 1] - self.points[k])

    def velocity(self, t: float) -> np.ndarray:
        if self.times.size == 1 or t < self.times[0] or t >= self.times[-1]:
            return np.zeros(3)
        k = self._segment(t)
        return (self.points[k + 1] - self.points[k]) / (self.times[k + 1] - self.times[k])


@dataclass
class ScattererInstance:
    """One scatterer: class, kinematic state, and its link side."""

    scatterer_id: int
    sclass: ScattererClass
    position: np.ndarray
    velocity: np.ndarray
    side: Side = Side.SHARED


def validate_scatterer(s: ScattererInstance, td_height_max: float) -> None:
    """Class/altitude invariants; raises ValueError on violation."""
    if s.sclass is ScattererClass.STATIC and np.any(s.velocity != 0.0):
        raise ValueError(f"scatterer {s.scatterer_id}: static scatterers must not move")
    if s.sclass is ScattererClass.TERRESTRIAL_DYNAMIC and s.position[2] > td_height_max:
        raise ValueError(f"scatterer {s.scatterer_id}: terrestrial scatterer above height bound")
    if s.sclass is ScattererClass.AERIAL_DYNAMIC and s.position[2] <= 0.0:
        raise ValueError(f"scatterer {s.scatterer_id}: aerial scatterer must stay above ground")
    if s.position[2] < 0.0:
        raise ValueError(f"scatterer {s.scatterer_id}: below ground plane")
