"""Numerically stable modified Bessel functions of order 0 and 1.

Everything downstream (the Rician likelihood, the EM filter, the Fisher
information) needs ``I0``, ``I1`` only through three well-behaved
combinations that never overflow:

* ``bessel_i0_scaled(x)``  = exp(-x) * I0(x), in (0, 1]
* ``bessel_i1_scaled(x)``  = exp(-x) * I1(x), in [0, 1)
* ``bessel_ratio(x)``      = I1(x) / I0(x),   in [0, 1), non-decreasing
* ``log_bessel_i0(x)``     = log I0(x), safe up to x ~ 1e8

The implementation is dependency-free: the ascending power series (all
terms positive, no cancellation) below ``_SERIES_CUTOFF`` and the large-x
asymptotic expansion above it.  The cutoff sits at 25 rather than the
conventional ~7.75 because the plain asymptotic series only reaches
~3e-8 relative accuracy near 8, while the power series stays at machine
precision for any x whose exp(x) is representable.

``BesselRatioTable`` / ``LogBesselI0Table`` are drop-in interpolated
variants for hot loops (Monte Carlo detection); exact evaluation is the
default everywhere.
"""

import numpy as np

_SERIES_CUTOFF = 25.0
_NEG_CLAMP = -1e-15  # absorb rounding from upstream magnitude products


def _prepare(x):
    """Validate and clamp input; returns (1-d float array, was_scalar)."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError("bessel argument must be finite")
    neg = arr < 0.0
    if np.any(neg):
        if np.any(arr < _NEG_CLAMP):
            raise ValueError("bessel argument must be nonnegative")
        arr[neg] = 0.0
    return arr, scalar


def _ret(values, scalar):
    return float(values[0]) if scalar else values


def _i0e_series(x):
    """exp(-x) I0(x) by the ascending series; x below the cutoff."""
    q = 0.25 * x * x
    s = np.ones_like(x)
    t = np.ones_like(x)
    for m in range(1, 200):
        t = t * q / (m * m)
        s = s + t
        if not np.any(t > 1e-17 * s):
            break
    return s * np.exp(-x)


def _i1e_series(x):
    q = 0.25 * x * x
    s = np.ones_like(x)
    t = np.ones_like(x)
    for m in range(1, 200):
        t = t * q / (m * (m + 1))
        s = s + t
        if not np.any(t > 1e-17 * s):
            break
    return 0.5 * x * s * np.exp(-x)


def _ie_asymptotic(x, mu):
    """exp(-x) I_nu(x) for large x; mu = 4 nu^2 (0 for I0, 4 for I1).

    t_k = t_{k-1} * ((2k-1)^2 - mu) / (8 k x); safely convergent region
    only (terms shrink until k ~ 2x, we stop far earlier).
    """
    s = np.ones_like(x)
    t = np.ones_like(x)
    for k in range(1, 26):
        t = t * ((2 * k - 1) ** 2 - mu) / (8.0 * k * x)
        s = s + t
        if np.all(np.abs(t) < 1e-17 * np.abs(s)):
            break
    return s / np.sqrt(2.0 * np.pi * x)


def _split_eval(x, series_fn, asym_mu):
    out = np.empty_like(x)
    small = x < _SERIES_CUTOFF
    if np.any(small):
        out[small] = series_fn(x[small])
    large = ~small
    if np.any(large):
        out[large] = _ie_asymptotic(x[large], asym_mu)
    return out


def bessel_i0_scaled(x):
    """exp(-x) * I0(x) for x >= 0; relative error below 1e-12.

    Accepts a scalar or ndarray; result lies in (0, 1].
    """
    arr, scalar = _prepare(x)
    return _ret(_split_eval(arr, _i0e_series, 0), scalar)


def bessel_i1_scaled(x):
    """exp(-x) * I1(x) for x >= 0; result lies in [0, 1)."""
    arr, scalar = _prepare(x)
    return _ret(_split_eval(arr, _i1e_series, 4), scalar)


def bessel_ratio(x):
    """R(x) = I1(x)/I0(x): the EM high-pass filter.

    Non-decreasing, 0 <= R(x) < 1, with R(x) -> 1 - 1/(2x) as x grows.
    """
    arr, scalar = _prepare(x)
    out = np.empty_like(arr)
    small = arr < _SERIES_CUTOFF
    if np.any(small):
        xs = arr[small]
        out[small] = _i1e_series(xs) / _i0e_series(xs)
    large = ~small
    if np.any(large):
        xl = arr[large]
        out[large] = _ie_asymptotic(xl, 4) / _ie_asymptotic(xl, 0)
    return _ret(out, scalar)


def log_bessel_i0(x):
    """log I0(x) without overflow (x up to ~1e8 and beyond)."""
    arr, scalar = _prepare(x)
    out = np.empty_like(arr)
    small = arr < _SERIES_CUTOFF
    if np.any(small):
        xs = arr[small]
        out[small] = xs + np.log(_i0e_series(xs))
    large = ~small
    if np.any(large):
        xl = arr[large]
        out[large] = xl + np.log(_ie_asymptotic(xl, 0))
    return _ret(out, scalar)


class BesselRatioTable:
    """Uniform-grid linear interpolation of R(x) with an asymptotic tail.

    Fast path for Monte Carlo loops: one np.interp per call instead of a
    term-by-term series.  Agrees with bessel_ratio to ~1e-5 absolute
    (tested against 1e-4); use exact bessel_ratio wherever a monotone EM
    ascent at tight tolerance matters.

    Immutable after construction; safe to share across threads.
    """

    def __init__(self, x_max=40.0, step=1.0 / 64.0):
        self.x_max = float(x_max)
        self._grid = np.arange(0.0, self.x_max + step, step)
        self._vals = bessel_ratio(self._grid)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.maximum(x, 1.0)  # placeholder to keep the tail finite
        tail = 1.0 - 0.5 / xs - 0.125 / xs**2 - 0.125 / xs**3
        return np.where(x >= self.x_max, tail, np.interp(x, self._grid, self._vals))


class LogBesselI0Table:
    """Interpolated log I0(x): x + lerp of log(exp(-x) I0(x)) plus tail.

    Used only to keep per-iteration likelihood traces cheap; absolute
    error ~2e-5.
    """

    def __init__(self, x_max=40.0, step=1.0 / 64.0):
        self.x_max = float(x_max)
        self._grid = np.arange(0.0, self.x_max + step, step)
        self._vals = np.log(bessel_i0_scaled(self._grid))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.maximum(x, 1.0)
        tail = -0.5 * np.log(2.0 * np.pi * xs) + np.log1p(
            0.125 / xs + (9.0 / 128.0) / xs**2 + (75.0 / 1024.0) / xs**3
        )
        return x + np.where(x >= self.x_max, tail, np.interp(x, self._grid, self._vals))
