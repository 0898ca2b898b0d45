"""Shared helpers for the test suite: KS distance, grids, small oracles."""

from __future__ import annotations

import math

import numpy as np


def make_trajectories(duration: float = 3.0):
    """Reference 1 UAV + 1 vehicle geometry used across the tests.

    UAV at 50 m altitude heading 60 degrees right of the LoS; vehicle at
    2 m driving 12 m/s at 45 degrees, starting 48 m downrange.
    """
    from uvchan.geometry import AgentKind, Trajectory

    t1 = duration
    uav_dir = np.array([math.cos(-math.pi / 3), math.sin(-math.pi / 3), 0.0])
    uav = Trajectory("uav0", AgentKind.UAV,
                     times=[0.0, t1],
                     points=[[0.0, 0.0, 50.0],
                             list(np.array([0.0, 0.0, 50.0]) + 10.0 * t1 * uav_dir)])
    veh_dir = np.array([math.cos(math.pi / 4), math.sin(math.pi / 4), 0.0])
    veh = Trajectory("veh0", AgentKind.VEHICLE,
                     times=[0.0, t1],
                     points=[[48.0, 0.0, 2.0],
                             list(np.array([48.0, 0.0, 2.0]) + 12.0 * t1 * veh_dir)])
    return [uav], [veh]


def ks_distance(samples, analytic_cdf) -> float:
    """Exact two-sided Kolmogorov-Smirnov distance of samples to a CDF."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = np.asarray(analytic_cdf(x), dtype=float)
    upper = np.max(np.arange(1, n + 1) / n - f)
    lower = np.max(f - np.arange(0, n) / n)
    return float(max(upper, lower))


def family_grid(p) -> np.ndarray:
    """1000-point grid spanning roughly +/- 6 sigma-equivalents of a family."""
    from uvchan import params as pr

    if isinstance(p, pr.LogisticParams):
        s = p.gamma * np.pi / np.sqrt(3.0)
        return np.linspace(p.mu - 6 * s, p.mu + 6 * s, 1000)
    if isinstance(p, pr.GaussianParams):
        return np.linspace(p.mu - 6 * p.sigma, p.mu + 6 * p.sigma, 1000)
    if isinstance(p, pr.GammaParams):
        mean, std = p.alpha / p.beta, np.sqrt(p.alpha) / p.beta
        return np.linspace(0.0, mean + 6 * std, 1000)
    if isinstance(p, pr.RayleighParams):
        mean = p.sigma * np.sqrt(np.pi / 2.0)
        std = p.sigma * np.sqrt(2.0 - np.pi / 2.0)
        return np.linspace(0.0, mean + 6 * std, 1000)
    raise TypeError(type(p))
