"""Per-trace alignment and fusion of the H and V polarizations.

For each pair of A-scans the lag ``tau`` maximizing the unnormalized
cross-correlation

    chi(tau) = sum_t a_h(t) * a_v(t + tau)

is found by an exhaustive scan over ``[-max_lag, max_lag]``. A positive lag
means the V trace arrives later than the H trace. Fusion averages H with the
V trace moved back by that lag, ``(a_h(t) + a_v(t + tau)) / 2``, with
samples shifted in from outside the record taken as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ShapeError
from .volume import Polarization, Volume


@dataclass(frozen=True)
class AlignmentResult:
    tau_hat: int
    chi_max: float


def default_max_lag(n: int) -> int:
    return n // 4


def _check_pair(a_h, a_v):
    a_h = np.asarray(a_h, dtype=np.float64)
    a_v = np.asarray(a_v, dtype=np.float64)
    if a_h.shape != a_v.shape:
        raise ShapeError(f"trace shapes differ: {a_h.shape} vs {a_v.shape}")
    return a_h, a_v


def _check_max_lag(max_lag, n):
    if max_lag is None:
        return default_max_lag(n)
    max_lag = int(max_lag)
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    return max_lag


def _lag_order(max_lag):
    # candidate lags in tie-break priority: 0, -1, 1, -2, 2, ...
    lags = [0]
    for k in range(1, max_lag + 1):
        lags += [-k, k]
    return lags


def _xcorr(a_h, a_v, tau):
    """chi(tau) along the last axis, for any leading batch shape."""
    n = a_h.shape[-1]
    if tau >= 0:
        return np.einsum("...t,...t->...", a_h[..., : n - tau], a_v[..., tau:])
    return np.einsum("...t,...t->...", a_h[..., -tau:], a_v[..., : n + tau])


def _best_lags(a_h, a_v, max_lag):
    best_tau = np.zeros(a_h.shape[:-1], dtype=np.int64)
    best_chi = np.full(a_h.shape[:-1], -np.inf)
    # strict > keeps the earlier (higher priority) lag on exact ties
    for tau in _lag_order(max_lag):
        chi = _xcorr(a_h, a_v, tau)
        better = chi > best_chi
        best_tau[better] = tau
        best_chi[better] = chi[better]
    return best_tau, best_chi


def estimate_lag(a_h, a_v, max_lag: int | None = None) -> AlignmentResult:
    """Lag of ``a_v`` relative to ``a_h`` maximizing the cross-correlation.

    Ties go to the smallest ``|tau|``, then to the negative lag.
    """
    a_h, a_v = _check_pair(a_h, a_v)
    if a_h.ndim != 1 or len(a_h) < 2:
        raise ShapeError("estimate_lag expects 1D traces of length >= 2")
    max_lag = _check_max_lag(max_lag, len(a_h))
    tau, chi = _best_lags(a_h, a_v, max_lag)
    return AlignmentResult(int(tau), float(chi))


def _shift_back(a_v, tau):
    """``a_v(t + tau)`` along the last axis, zero outside the record."""
    out = np.zeros_like(a_v)
    n = a_v.shape[-1]
    if tau >= 0:
        out[..., : n - tau] = a_v[..., tau:]
    else:
        out[..., -tau:] = a_v[..., : n + tau]
    return out


def fuse_ascans(a_h, a_v, tau_hat: int) -> np.ndarray:
    a_h, a_v = _check_pair(a_h, a_v)
    tau_hat = int(tau_hat)
    if abs(tau_hat) >= max(len(a_v), 1):
        return a_h / 2
    return (a_h + _shift_back(a_v, tau_hat)) / 2


def fuse_volumes(v_h: Volume, v_v: Volume, max_lag: int | None = None) -> tuple[Volume, np.ndarray]:
    """Align and average every ``(x, y)`` trace pair.

    Returns the fused volume (tagged A) and the ``(X, Y)`` array of lags.
    """
    if not v_h.same_geometry(v_v):
        raise ShapeError(
            f"H and V volumes differ in geometry: {v_h.shape} vs {v_v.shape}"
        )
    T = v_h.shape[0]
    if T < 2:
        raise ShapeError("fusion needs at least 2 time samples")
    max_lag = _check_max_lag(max_lag, T)
    # traces along the last axis: (X, Y, T)
    h = np.moveaxis(v_h.data, 0, -1)
    v = np.moveaxis(v_v.data, 0, -1)
    lags, _ = _best_lags(h, v, max_lag)
    fused = h.copy()
    for tau in np.unique(lags):
        sel = lags == tau
        fused[sel] = (h[sel] + _shift_back(v[sel], int(tau))) / 2
    return v_h.with_data(np.moveaxis(fused, -1, 0), polarization=Polarization.A), lags
