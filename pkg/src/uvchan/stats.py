"""Channel statistics: correlation functions, delay spread, stationarity
intervals, and Doppler spectra.

Expectations are sample means over Monte-Carlo realizations (same scenario,
different seeds) because the channel is non-stationary in time: lag structure
and anchor time must not be conflated by time averaging.  All estimators are
pure functions with fixed reduction order, so identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EstimatorError(ValueError):
    """Anchor/lag outside the trace, or malformed estimator input."""


@dataclass
class CorrelationCurve:
    kind: str                       # 'tacf' | 'space-ccf' | 'fcf' | 'tsf-slice'
    anchor_time: float
    lags: np.ndarray                # seconds (time lags) or Hz (frequency lags)
    values: np.ndarray              # complex correlations per lag
    normalized: bool
    anchor_freq: float | None = None


@dataclass
class DelaySpreadTrace:
    times: np.ndarray
    a2: np.ndarray                  # seconds; NaN marks undefined snapshots


@dataclass
class TsiSample:
    anchor_time: float
    tsi: float
    censored: bool


@dataclass
class DpsdArray:
    anchor_time: float
    doppler: np.ndarray             # Hz, symmetric around 0
    power: np.ndarray               # linear, nonnegative
    nfft: int
    window_dc_gain: float           # centre window weight, for Parseval checks


# ---------------------------------------------------------------------------
# Correlation functions
# ---------------------------------------------------------------------------

def _corr(h_a: np.ndarray, h_b: np.ndarray, normalize: bool) -> complex:
    """Conjugate-product mean over the realization axis."""
    h_a = np.asarray(h_a)
    h_b = np.asarray(h_b)
    if h_a.shape != h_b.shape or h_a.ndim != 1:
        raise EstimatorError("realization vectors must be 1-D and equally long")
    if h_a.size < 2:
        raise EstimatorError("need at least 2 Monte-Carlo realizations")
    r = complex(np.mean(np.conj(h_a) * h_b))
    if normalize:
        pa = float(np.mean(np.abs(h_a) ** 2))
        pb = float(np.mean(np.abs(h_b) ** 2))
        if pa == 0.0 or pb == 0.0:
            raise EstimatorError("zero power at an anchor; cannot normalize")
        r /= math.sqrt(pa * pb)
    return r


def tsf_cf(h_anchor: np.ndarray, h_lagged: np.ndarray, normalize: bool = True) -> complex:
    """Correlation between one (t, f) sample and one (t+dt, f+df) sample."""
    return _corr(h_anchor, h_lagged, normalize)


def tacf(h: np.ndarray, times: np.ndarray, anchor_index: int, max_lag: int,
         normalize: bool = True) -> CorrelationCurve:
    """Time autocorrelation at an anchor from traces h[realization, snapshot]."""
    h = np.asarray(h)
    times = np.asarray(times, dtype=float)
    if h.ndim != 2 or h.shape[1] != times.size:
        raise EstimatorError("need h with shape (realizations, snapshots)")
    if not 0 <= anchor_index < times.size:
        raise EstimatorError(f"anchor index {anchor_index} outside trace")
    if anchor_index + max_lag >= times.size:
        raise EstimatorError("anchor + lag outside the run")
    values = np.empty(max_lag + 1, dtype=complex)
    for m in range(max_lag + 1):
        values[m] = _corr(h[:, anchor_index], h[:, anchor_index + m], normalize)
    lags = times[anchor_index:anchor_index + max_lag + 1] - times[anchor_index]
    return CorrelationCurve(kind="tacf", anchor_time=float(times[anchor_index]),
                            lags=lags, values=values, normalized=normalize)


def space_ccf(h_link_a: np.ndarray, h_link_b: np.ndarray,
              anchor_time: float = 0.0, normalize: bool = True) -> CorrelationCurve:
    """Cross-correlation of two links at the same snapshot and frequency."""
    value = _corr(h_link_a, h_link_b, normalize)
    return CorrelationCurve(kind="space-ccf", anchor_time=anchor_time,
                            lags=np.zeros(1), values=np.array([value], dtype=complex),
                            normalized=normalize)


def fcf(h_grid: np.ndarray, freqs: np.ndarray, anchor_freq_index: int,
        max_lag: int, anchor_time: float = 0.0, normalize: bool = True) -> CorrelationCurve:
    """Frequency correlation at an anchor from H[realization, frequency]."""
    h_grid = np.asarray(h_grid)
    freqs = np.asarray(freqs, dtype=float)
    if h_grid.ndim != 2 or h_grid.shape[1] != freqs.size:
        raise EstimatorError("need H with shape (realizations, frequencies)")
    if anchor_freq_index + max_lag >= freqs.size:
        raise EstimatorError("anchor + lag outside the frequency grid")
    values = np.empty(max_lag + 1, dtype=complex)
    for m in range(max_lag + 1):
        values[m] = _corr(h_grid[:, anchor_freq_index], h_grid[:, anchor_freq_index + m],
                          normalize)
    lags = freqs[anchor_freq_index:anchor_freq_index + max_lag + 1] - freqs[anchor_freq_index]
    return CorrelationCurve(kind="fcf", anchor_time=anchor_time, lags=lags,
                            values=values, normalized=normalize,
                            anchor_freq=float(freqs[anchor_freq_index]))


# ---------------------------------------------------------------------------
# Delay spread / stationarity
# ---------------------------------------------------------------------------

def rms_delay_spread(delays, powers) -> float:
    """Power-weighted RMS delay spread; NaN when total power is zero."""
    delays = np.asarray(delays, dtype=float)
    powers = np.asarray(powers, dtype=float)
    total = float(powers.sum())
    if delays.size == 0 or total <= 0.0:
        return math.nan
    m1 = float((powers * delays).sum()) / total
    m2 = float((powers * delays * delays).sum()) / total
    return math.sqrt(max(0.0, m2 - m1 * m1))


def delay_spread_trace(times, per_snapshot_delays, per_snapshot_powers) -> DelaySpreadTrace:
    """A2(t) over snapshots; inputs are per-snapshot ray delay/power arrays."""
    times = np.asarray(times, dtype=float)
    a2 = np.array([
        rms_delay_spread(d, p)
        for d, p in zip(per_snapshot_delays, per_snapshot_powers)
    ])
    return DelaySpreadTrace(times=times, a2=a2)


def tsi(trace: DelaySpreadTrace, anchor_index: int, threshold: float = 0.1) -> TsiSample:
    """First-exceedance stationarity interval of the delay-spread trace.

    The interval ends at the first snapshot whose relative delay-spread
    deviation from the anchor exceeds the threshold; undefined (NaN)
    snapshots also terminate it.  If the run ends first the sample is
    right-censored at the remaining duration.
    """
    a2 = trace.a2
    times = trace.times
    if not 0 <= anchor_index < len(a2):
        raise EstimatorError(f"anchor index {anchor_index} outside trace")
    a0 = a2[anchor_index]
    if not np.isfinite(a0) or a0 <= 0.0:
        raise EstimatorError("delay spread undefined at the anchor")
    for k in range(anchor_index + 1, len(a2)):
        val = a2[k]
        if not np.isfinite(val) or abs(val - a0) / a0 > threshold:
            return TsiSample(anchor_time=float(times[anchor_index]),
                             tsi=float(times[k] - times[anchor_index]), censored=False)
    return TsiSample(anchor_time=float(times[anchor_index]),
                     tsi=float(times[-1] - times[anchor_index]), censored=True)


# ---------------------------------------------------------------------------
# Doppler power spectral density
# ---------------------------------------------------------------------------

def dpsd(curve: CorrelationCurve, pad_factor: int = 4) -> DpsdArray:
    """Blackman-windowed DFT of a one-sided TACF curve.

    The curve is extended to negative lags by Hermitian symmetry, windowed,
    and zero-padded for peak interpolation.  Negative leakage bins are
    floored at zero and the floored mass is redistributed so the total power
    identity (sum over bins = nfft * window gain * zero-lag value) stays
    exact.
    """
    lags = np.asarray(curve.lags, dtype=float)
    if lags.size < 2:
        raise EstimatorError("need at least two lags for a spectrum")
    steps = np.diff(lags)
    dt = float(steps[0])
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=1e-15):
        raise EstimatorError("lag grid must be uniform")
    zeta = np.asarray(curve.values, dtype=complex)
    n_lag = zeta.size - 1
    m = 2 * n_lag + 1
    window = np.blackman(m)
    nfft = pad_factor * m
    if nfft % 2 == 0:
        nfft += 1  # odd length keeps the frequency axis symmetric around 0
    buf = np.zeros(nfft, dtype=complex)
    center = n_lag
    for lag in range(n_lag + 1):
        buf[lag] = window[center + lag] * zeta[lag]
    for lag in range(1, n_lag + 1):
        buf[nfft - lag] = window[center - lag] * np.conj(zeta[lag])
    spectrum = np.fft.fft(buf)
    raw = spectrum.real
    raw_sum = float(raw.sum())
    power = np.maximum(raw, 0.0)
    clipped_sum = float(power.sum())
    if clipped_sum > 0.0 and raw_sum > 0.0:
        power *= raw_sum / clipped_sum
    freqs = np.fft.fftshift(np.fft.fftfreq(nfft, d=dt))
    power = np.fft.fftshift(power)
    return DpsdArray(anchor_time=curve.anchor_time, doppler=freqs, power=power,
                     nfft=nfft, window_dc_gain=float(window[center]))


def spectral_flatness(power: np.ndarray) -> float:
    """Wiener entropy (geometric over arithmetic mean) of a spectrum."""
    p = np.asarray(power, dtype=float)
    if p.size == 0:
        raise EstimatorError("empty spectrum")
    peak = float(p.max())
    if peak <= 0.0:
        return 1.0
    floor = peak * 1e-12
    q = p + floor
    return float(np.exp(np.mean(np.log(q))) / np.mean(q))
