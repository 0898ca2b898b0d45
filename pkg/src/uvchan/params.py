"""Fitted distribution families and the built-in channel parameter table.

The table maps (scatterer class, traffic-density condition, parameter
family) to the fitted distribution parameters used everywhere else in the
simulator: Logistic number ratios, Gamma/Rayleigh excess-distance ratios,
Gaussian angle ratios, and the exponential power-delay law.  Aerial-dynamic
rows do not exist under the low-density condition; looking them up raises
:class:`AbsentParameterError` rather than silently substituting a default.

All sampling is inverse-transform from an explicit ``numpy.random.Generator``
so that runs are reproducible stream by stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy.special import erf, gammainc, gammaincinv, ndtri


class DensityCondition(Enum):
    """Traffic-density condition of the terrestrial and aerial environment."""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class ScattererClass(Enum):
    STATIC = "static"
    TERRESTRIAL_DYNAMIC = "terrestrial_dynamic"
    AERIAL_DYNAMIC = "aerial_dynamic"


class Family(Enum):
    """Parameter family of one table row."""

    SCATTERER_NUMBER = "scatterer-number"
    CLUSTER_NUMBER = "cluster-number"
    DISTANCE = "distance"
    AAOD = "aaod"
    AAOA = "aaoa"
    EAOD = "eaod"
    EAOA = "eaoa"
    POWER_DELAY = "power-delay"


ANGLE_FAMILIES = (Family.AAOD, Family.AAOA, Family.EAOD, Family.EAOA)
COUNT_FAMILIES = (Family.SCATTERER_NUMBER, Family.CLUSTER_NUMBER)


class AbsentParameterError(KeyError):
    """Raised when a (class, condition, family) combination has no table row."""


class TableFormatError(ValueError):
    """Raised when a parameter file is malformed or incomplete."""


class FitError(ValueError):
    """Raised when power-delay fitting is given degenerate input."""


@dataclass(frozen=True)
class LogisticParams:
    """Logistic distribution of a dimensionless count-per-meter ratio."""

    mu: float
    gamma: float

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"logistic scale must be positive, got {self.gamma}")


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution (shape/rate) of an excess-distance ratio."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"gamma shape/rate must be positive, got {self.alpha}, {self.beta}")


@dataclass(frozen=True)
class RayleighParams:
    """Rayleigh distribution of an excess-distance ratio."""

    sigma: float

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"rayleigh scale must be positive, got {self.sigma}")


@dataclass(frozen=True)
class GaussianParams:
    """Gaussian distribution of a signed angle-per-meter ratio."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"gaussian std dev must be positive, got {self.sigma}")


@dataclass(frozen=True)
class PowerDelayParams:
    """Exponential power-delay law: P = exp(-xi*tau - eta) * 10^(-Z/10).

    ``xi`` is the delay slope in 1/seconds, ``eta`` the dimensionless offset,
    and ``sigma_e`` the standard deviation in dB of the lognormal shadowing
    term Z.
    """

    xi: float
    eta: float
    sigma_e: float

    def __post_init__(self) -> None:
        if not self.xi > 0:
            raise ValueError(f"delay slope must be positive, got {self.xi}")
        if self.sigma_e < 0:
            raise ValueError(f"shadowing std dev must be nonnegative, got {self.sigma_e}")


FamilyParams = Union[LogisticParams, GammaParams, RayleighParams, GaussianParams, PowerDelayParams]

TableKey = tuple[ScattererClass, DensityCondition, Family]


# ---------------------------------------------------------------------------
# Analytic CDFs
# ---------------------------------------------------------------------------

def logistic_cdf(x, p: LogisticParams):
    return 1.0 / (1.0 + np.exp(-(np.asarray(x, dtype=float) - p.mu) / p.gamma))


def gamma_cdf(x, p: GammaParams):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("gamma CDF is only defined for x >= 0")
    return gammainc(p.alpha, p.beta * x)


def rayleigh_cdf(x, p: RayleighParams):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("rayleigh CDF is only defined for x >= 0")
    return 1.0 - np.exp(-(x * x) / (2.0 * p.sigma * p.sigma))


def gaussian_cdf(x, p: GaussianParams):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + erf((x - p.mu) / (p.sigma * math.sqrt(2.0))))


def cdf(x, p: FamilyParams):
    """Evaluate the analytic CDF of any sampling family."""
    if isinstance(p, LogisticParams):
        return logistic_cdf(x, p)
    if isinstance(p, GammaParams):
        return gamma_cdf(x, p)
    if isinstance(p, RayleighParams):
        return rayleigh_cdf(x, p)
    if isinstance(p, GaussianParams):
        return gaussian_cdf(x, p)
    raise TypeError(f"no CDF for {type(p).__name__}")


# ---------------------------------------------------------------------------
# Inverse-transform sampling
# ---------------------------------------------------------------------------

def sample(p: FamilyParams, rng: np.random.Generator, n: int | None = None):
    """Draw i.i.d. samples via inverse transform of the analytic CDF.

    Returns a scalar when ``n`` is None, else an array of length ``n``.
    The draw is untruncated; count realisation applies its own clamping
    (see :func:`realize_count`).
    """
    m = 1 if n is None else int(n)
    u = rng.random(m)
    if isinstance(p, LogisticParams):
        out = p.mu + p.gamma * np.log(u / (1.0 - u))
    elif isinstance(p, GammaParams):
        out = gammaincinv(p.alpha, u) / p.beta
    elif isinstance(p, RayleighParams):
        out = p.sigma * np.sqrt(-2.0 * np.log1p(-u))
    elif isinstance(p, GaussianParams):
        out = p.mu + p.sigma * ndtri(u)
    else:
        raise TypeError(f"cannot sample {type(p).__name__}")
    return float(out[0]) if n is None else out


def sample_nonnegative(p: FamilyParams, rng: np.random.Generator, n: int | None = None):
    """Sample with redraw-on-negative, for inherently nonnegative ratios."""
    m = 1 if n is None else int(n)
    out = np.asarray(sample(p, rng, m), dtype=float)
    for _ in range(64):
        bad = out < 0.0
        k = int(bad.sum())
        if k == 0:
            break
        out[bad] = sample(p, rng, k)
    else:
        raise RuntimeError("redraw-on-negative failed to converge after 64 rounds")
    return float(out[0]) if n is None else out


def sample_exponential(mean: float, rng: np.random.Generator, n: int | None = None):
    """Inverse-transform exponential draw with the given mean."""
    if not mean > 0:
        raise ValueError(f"exponential mean must be positive, got {mean}")
    m = 1 if n is None else int(n)
    out = -mean * np.log1p(-rng.random(m))
    return float(out[0]) if n is None else out


def sample_truncated_normal(mean: float, std: float, rng: np.random.Generator,
                            n: int | None = None):
    """Normal draw truncated to nonnegative values by redraw."""
    m = 1 if n is None else int(n)
    out = mean + std * ndtri(rng.random(m))
    for _ in range(64):
        bad = out < 0.0
        k = int(bad.sum())
        if k == 0:
            break
        out[bad] = mean + std * ndtri(rng.random(k))
    return float(out[0]) if n is None else out


def realize_count(p: LogisticParams, link_distance: float, rng: np.random.Generator,
                  at_least_one: bool = False) -> int:
    """Turn a number-ratio draw into an integer count.

    The ratio draw is clamped at zero, scaled by the link distance, and
    rounded to nearest.  ``at_least_one`` enforces the floor used for the
    static class so a link never loses its static environment entirely.
    """
    if not link_distance > 0:
        raise ValueError("link distance must be positive")
    draw = max(0.0, sample(p, rng))
    count = int(round(draw * link_distance))
    if at_least_one:
        count = max(1, count)
    return count


# ---------------------------------------------------------------------------
# Power-delay fitting
# ---------------------------------------------------------------------------

_DB_PER_NAT = 10.0 / math.log(10.0)


def power_delay_law(delays, p: PowerDelayParams, z_db=0.0):
    """Evaluate P = exp(-xi*tau - eta) * 10^(-Z/10) for delays in seconds."""
    delays = np.asarray(delays, dtype=float)
    return np.exp(-p.xi * delays - p.eta) * np.power(10.0, -np.asarray(z_db, dtype=float) / 10.0)


def fit_power_delay(pairs) -> PowerDelayParams:
    """Least-squares fit of the exponential power-delay law.

    ``pairs`` is a sequence of (delay seconds, power linear) with positive
    powers.  Ordinary least squares of -ln(P) on tau gives the slope xi and
    offset eta; the residual standard deviation, rescaled to dB, estimates
    the shadowing spread sigma_e.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise FitError("need at least 3 (delay, power) pairs")
    tau, power = arr[:, 0], arr[:, 1]
    if np.any(power <= 0):
        raise FitError("powers must be strictly positive")
    if np.any(tau < 0):
        raise FitError("delays must be nonnegative")
    if np.ptp(tau) == 0:
        raise FitError("degenerate fit: all delays equal")
    y = -np.log(power)
    design = np.column_stack([tau, np.ones_like(tau)])
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    xi, eta = float(coef[0]), float(coef[1])
    resid = y - design @ coef
    dof = max(1, len(tau) - 2)
    sigma_e = float(np.sqrt(resid @ resid / dof) * _DB_PER_NAT)
    return PowerDelayParams(xi=xi, eta=eta, sigma_e=sigma_e)


def fit_power_delay_exact(pairs) -> tuple[float, float]:
    """Exact noiseless line through two (delay, power) points, for oracles."""
    (t1, p1), (t2, p2) = pairs
    if t1 == t2:
        raise FitError("degenerate fit: all delays equal")
    xi = (math.log(p1) - math.log(p2)) / (t2 - t1)
    eta = -math.log(p1) - xi * t1
    return xi, eta


# ---------------------------------------------------------------------------
# The parameter table
# ---------------------------------------------------------------------------

_S = ScattererClass.STATIC
_TD = ScattererClass.TERRESTRIAL_DYNAMIC
_AD = ScattererClass.AERIAL_DYNAMIC
_HI = DensityCondition.HIGH
_ME = DensityCondition.MEDIUM
_LO = DensityCondition.LOW

_DEFAULT_ROWS: dict[TableKey, FamilyParams] = {
    # ---- number ratios (Logistic), clusters -------------------------------
    (_S, _HI, Family.CLUSTER_NUMBER): LogisticParams(0.1511, 0.0520),
    (_S, _ME, Family.CLUSTER_NUMBER): LogisticParams(0.0915, 0.0455),
    (_S, _LO, Family.CLUSTER_NUMBER): LogisticParams(0.0620, 0.0821),
    (_TD, _HI, Family.CLUSTER_NUMBER): LogisticParams(0.1126, 0.1015),
    (_TD, _ME, Family.CLUSTER_NUMBER): LogisticParams(0.1138, 0.0851),
    (_TD, _LO, Family.CLUSTER_NUMBER): LogisticParams(0.0842, 0.0289),
    (_AD, _HI, Family.CLUSTER_NUMBER): LogisticParams(0.2356, 0.0321),
    (_AD, _ME, Family.CLUSTER_NUMBER): LogisticParams(0.1825, 0.0528),
    # ---- number ratios (Logistic), scatterers -----------------------------
    (_S, _HI, Family.SCATTERER_NUMBER): LogisticParams(0.7534, 0.5236),
    (_S, _ME, Family.SCATTERER_NUMBER): LogisticParams(0.6024, 0.4726),
    (_S, _LO, Family.SCATTERER_NUMBER): LogisticParams(0.3425, 0.3855),
    (_TD, _HI, Family.SCATTERER_NUMBER): LogisticParams(0.4461, 0.3921),
    (_TD, _ME, Family.SCATTERER_NUMBER): LogisticParams(0.3928, 0.2511),
    (_TD, _LO, Family.SCATTERER_NUMBER): LogisticParams(0.3213, 0.1863),
    (_AD, _HI, Family.SCATTERER_NUMBER): LogisticParams(0.4232, 0.4261),
    (_AD, _ME, Family.SCATTERER_NUMBER): LogisticParams(0.3821, 0.3925),
    # ---- excess-distance ratios -------------------------------------------
    (_S, _HI, Family.DISTANCE): GammaParams(0.8223, 1.9232),
    (_S, _ME, Family.DISTANCE): GammaParams(0.6982, 2.0263),
    (_S, _LO, Family.DISTANCE): GammaParams(0.6241, 2.4581),
    (_TD, _HI, Family.DISTANCE): RayleighParams(0.3541),
    (_TD, _ME, Family.DISTANCE): RayleighParams(0.3026),
    (_TD, _LO, Family.DISTANCE): RayleighParams(0.2025),
    (_AD, _HI, Family.DISTANCE): RayleighParams(0.3356),
    (_AD, _ME, Family.DISTANCE): RayleighParams(0.2287),
    # ---- angle ratios (Gaussian) ------------------------------------------
    (_S, _HI, Family.AAOD): GaussianParams(0.8254, 0.9254),
    (_S, _ME, Family.AAOD): GaussianParams(0.7612, 0.8723),
    (_S, _LO, Family.AAOD): GaussianParams(0.7025, 0.7566),
    (_TD, _HI, Family.AAOD): GaussianParams(0.9213, 1.9253),
    (_TD, _ME, Family.AAOD): GaussianParams(0.8190, 1.7622),
    (_TD, _LO, Family.AAOD): GaussianParams(0.7623, 1.2101),
    (_AD, _HI, Family.AAOD): GaussianParams(0.3241, 1.0125),
    (_AD, _ME, Family.AAOD): GaussianParams(0.2015, 0.9215),
    (_S, _HI, Family.AAOA): GaussianParams(0.4521, 0.4834),
    (_S, _ME, Family.AAOA): GaussianParams(0.4025, 0.4512),
    (_S, _LO, Family.AAOA): GaussianParams(0.3816, 0.3266),
    (_TD, _HI, Family.AAOA): GaussianParams(-0.3215, 0.5124),
    (_TD, _ME, Family.AAOA): GaussianParams(-0.4156, 0.4266),
    (_TD, _LO, Family.AAOA): GaussianParams(-0.2511, 0.1756),
    (_AD, _HI, Family.AAOA): GaussianParams(0.5416, 0.6524),
    (_AD, _ME, Family.AAOA): GaussianParams(0.4211, 0.5815),
    (_S, _HI, Family.EAOD): GaussianParams(0.7514, 0.8512),
    (_S, _ME, Family.EAOD): GaussianParams(0.7142, 0.6215),
    (_S, _LO, Family.EAOD): GaussianParams(0.7836, 0.4315),
    (_TD, _HI, Family.EAOD): GaussianParams(0.1545, 0.7851),
    (_TD, _ME, Family.EAOD): GaussianParams(0.1951, 0.7011),
    (_TD, _LO, Family.EAOD): GaussianParams(0.1766, 0.6789),
    (_AD, _HI, Family.EAOD): GaussianParams(0.9511, 1.8251),
    (_AD, _ME, Family.EAOD): GaussianParams(0.9151, 1.6435),
    (_S, _HI, Family.EAOA): GaussianParams(0.8516, 0.7612),
    (_S, _ME, Family.EAOA): GaussianParams(0.8781, 0.6921),
    (_S, _LO, Family.EAOA): GaussianParams(0.8423, 0.5516),
    (_TD, _HI, Family.EAOA): GaussianParams(0.2511, 0.9218),
    (_TD, _ME, Family.EAOA): GaussianParams(0.1921, 0.9055),
    (_TD, _LO, Family.EAOA): GaussianParams(0.2249, 0.8127),
    (_AD, _HI, Family.EAOA): GaussianParams(0.8915, 1.9627),
    (_AD, _ME, Family.EAOA): GaussianParams(0.7812, 1.8541),
    # ---- power-delay law ---------------------------------------------------
    (_S, _HI, Family.POWER_DELAY): PowerDelayParams(2.6881e6, 31.9204, 19.9350),
    (_S, _ME, Family.POWER_DELAY): PowerDelayParams(4.8043e6, 30.4251, 22.3581),
    (_S, _LO, Family.POWER_DELAY): PowerDelayParams(2.2978e6, 30.0112, 16.1603),
    (_TD, _HI, Family.POWER_DELAY): PowerDelayParams(2.1931e6, 31.3934, 11.6472),
    (_TD, _ME, Family.POWER_DELAY): PowerDelayParams(3.6554e6, 30.5136, 13.6758),
    (_TD, _LO, Family.POWER_DELAY): PowerDelayParams(1.2030e6, 31.4610, 0.2222),
    (_AD, _HI, Family.POWER_DELAY): PowerDelayParams(3.9797e6, 29.2900, 12.0014),
    (_AD, _ME, Family.POWER_DELAY): PowerDelayParams(5.5346e6, 28.5798, 9.8293),
}

# The aerial-dynamic class has no fitted rows under the low-density condition.
ABSENT_KEYS: frozenset[tuple[ScattererClass, DensityCondition]] = frozenset(
    {(_AD, _LO)}
)

SCHEMA_VERSION = 1

_FAMILY_FIELDS = {
    "logistic": ("mu", "gamma"),
    "gamma": ("alpha", "beta"),
    "rayleigh": ("sigma",),
    "gaussian": ("mu", "sigma"),
    "power-delay": ("xi", "eta", "sigma_e"),
}

_PARAM_KINDS = {
    LogisticParams: "logistic",
    GammaParams: "gamma",
    RayleighParams: "rayleigh",
    GaussianParams: "gaussian",
    PowerDelayParams: "power-delay",
}

_KIND_TYPES = {v: k for k, v in _PARAM_KINDS.items()}


def _required_keys() -> list[TableKey]:
    keys = []
    for fam in Family:
        for cls in ScattererClass:
            for cond in DensityCondition:
                if (cls, cond) in ABSENT_KEYS:
                    continue
                keys.append((cls, cond, fam))
    return keys


class ParameterTable:
    """Immutable map from (class, condition, family) to fitted parameters."""

    def __init__(self, rows: dict[TableKey, FamilyParams]):
        missing = [k for k in _required_keys() if k not in rows]
        if missing:
            c, d, f = missing[0]
            raise TableFormatError(
                f"table incomplete: missing ({f.value}, {c.value}, {d.value})"
                + (f" and {len(missing) - 1} more" if len(missing) > 1 else "")
            )
        extra = [k for k in rows if (k[0], k[1]) in ABSENT_KEYS]
        if extra:
            c, d, f = extra[0]
            raise TableFormatError(
                f"table row ({f.value}, {c.value}, {d.value}) must be absent"
            )
        self._rows = dict(rows)

    def has(self, cls: ScattererClass, cond: DensityCondition, family: Family) -> bool:
        return (cls, cond, family) in self._rows

    def get(self, cls: ScattererClass, cond: DensityCondition, family: Family) -> FamilyParams:
        try:
            return self._rows[(cls, cond, family)]
        except KeyError:
            raise AbsentParameterError(
                f"no parameters for ({family.value}, {cls.value}, {cond.value})"
            ) from None

    def rows(self) -> dict[TableKey, FamilyParams]:
        return dict(self._rows)

    def classes_present(self, cond: DensityCondition) -> list[ScattererClass]:
        """Scatterer classes with fitted rows under a condition."""
        return [c for c in ScattererClass if (c, cond) not in ABSENT_KEYS]

    def __eq__(self, other) -> bool:
        return isinstance(other, ParameterTable) and self._rows == other._rows

    def to_dict(self) -> dict:
        families: dict[str, dict] = {}
        for fam in Family:
            fam_node: dict[str, dict] = {}
            for cls in ScattererClass:
                cls_node: dict[str, object] = {}
                for cond in DensityCondition:
                    if (cls, cond) in ABSENT_KEYS:
                        cls_node[cond.value] = None
                        continue
                    p = self._rows[(cls, cond, fam)]
                    kind = _PARAM_KINDS[type(p)]
                    rec: dict[str, str] = {"distribution": kind}
                    for field in _FAMILY_FIELDS[kind]:
                        rec[field] = repr(getattr(p, field))
                    cls_node[cond.value] = rec
                fam_node[cls.value] = cls_node
            families[fam.value] = fam_node
        return {"schema_version": SCHEMA_VERSION, "families": families}

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterTable":
        if not isinstance(data, dict):
            raise TableFormatError("parameter file must be a key tree")
        if data.get("schema_version") != SCHEMA_VERSION:
            raise TableFormatError(
                f"unsupported schema_version {data.get('schema_version')!r}, expected {SCHEMA_VERSION}"
            )
        families = data.get("families")
        if not isinstance(families, dict):
            raise TableFormatError("parameter file missing 'families' tree")
        rows: dict[TableKey, FamilyParams] = {}
        for fam_name, fam_node in families.items():
            try:
                fam = Family(fam_name)
            except ValueError:
                raise TableFormatError(f"unknown family {fam_name!r}") from None
            for cls_name, cls_node in fam_node.items():
                try:
                    sclass = ScattererClass(cls_name)
                except ValueError:
                    raise TableFormatError(f"unknown scatterer class {cls_name!r}") from None
                for cond_name, rec in cls_node.items():
                    try:
                        cond = DensityCondition(cond_name)
                    except ValueError:
                        raise TableFormatError(f"unknown condition {cond_name!r}") from None
                    keyname = f"({fam.value}, {sclass.value}, {cond.value})"
                    if rec is None:
                        if (sclass, cond) not in ABSENT_KEYS:
                            raise TableFormatError(f"row {keyname} may not be absent")
                        continue
                    kind = rec.get("distribution")
                    if kind not in _KIND_TYPES:
                        raise TableFormatError(f"row {keyname}: unknown distribution {kind!r}")
                    args = {}
                    for field in _FAMILY_FIELDS[kind]:
                        if field not in rec:
                            raise TableFormatError(f"row {keyname}: missing field {field!r}")
                        try:
                            args[field] = float(rec[field])
                        except (TypeError, ValueError):
                            raise TableFormatError(
                                f"row {keyname}: malformed number {rec[field]!r} for {field!r}"
                            ) from None
                    try:
                        rows[(sclass, cond, fam)] = _KIND_TYPES[kind](**args)
                    except ValueError as exc:
                        raise TableFormatError(f"row {keyname}: {exc}") from None
        return cls(rows)


def default_table() -> ParameterTable:
    """The built-in table with every fitted value."""
    return ParameterTable(dict(_DEFAULT_ROWS))


def save_table(table: ParameterTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_table(path) -> ParameterTable:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TableFormatError(f"not valid JSON: {exc}") from None
    return ParameterTable.from_dict(data)
