"""Forward observation model, Rician likelihood, and QAM constellations.

Conventions used across the package (all arrays are numpy):

* ``A``  -- effective channel, complex (K, N); column ``A[:, n]`` is the
  coupling vector ``a_n`` of receive element n to the K users.
* ``s``  -- complex (K,) symbol vector, one entry per user.
* ``b``  -- complex (N,) known reference field at each element.
* ``w``  -- complex (N,) noise, CN(0, sigma2 I); ``sigma2`` is the TOTAL
  variance of each complex entry (real/imag parts are N(0, sigma2/2)).
* ``z``  -- real nonnegative (N,) measured magnitudes |A^H s + b + w|.

Only the magnitude of the per-element field is observable, so each z_n
follows a Rician law with noncentrality |lambda_n|, lambda_n = a_n^H s + b_n.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bessel import log_bessel_i0
from .exceptions import ConfigError


# --------------------------------------------------------------------------- #
# constellations
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Constellation:
    """Square QAM constellation with unit average power and Gray labels.

    points: complex (M,) array; bit_labels: uint8 (M, log2 M) array where
    row p is the bit pattern of points[p].
    """

    order: int
    points: np.ndarray
    bit_labels: np.ndarray

    @property
    def bits_per_symbol(self):
        return self.bit_labels.shape[1]

    @property
    def name(self):
        return f"{self.order}qam"


def _gray_bits(idx, width):
    g = idx ^ (idx >> 1)
    return [(g >> (width - 1 - i)) & 1 for i in range(width)]


@lru_cache(maxsize=None)
def make_constellation(order):
    """Build a square Gray-labeled QAM constellation (order 4, 16 or 64).

    Points are the grid {+-1, +-3, ...}^2 scaled so the average symbol
    power is exactly 1 (4-QAM: (+-1 +- i)/sqrt(2); 16-QAM: grid/sqrt(10)).
    Instances are cached and shared; treat the arrays as read-only.
    """
    if order not in (4, 16, 64):
        raise ConfigError(f"unsupported constellation order {order}")
    m = int(round(np.sqrt(order)))
    axis_bits = m.bit_length() - 1
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    scale = 1.0 / np.sqrt(2.0 * (m * m - 1) / 3.0)
    points = np.empty(order, dtype=complex)
    labels = np.empty((order, 2 * axis_bits), dtype=np.uint8)
    for i in range(m):
        for q in range(m):
            p = i * m + q
            points[p] = scale * (levels[i] + 1j * levels[q])
            labels[p] = _gray_bits(i, axis_bits) + _gray_bits(q, axis_bits)
    return Constellation(order=order, points=points, bit_labels=labels)


def demap(s_tilde, constellation):
    """Project each soft symbol to the nearest constellation point.

    Ties break toward the lowest point index.  Returns (hard symbol
    vector, concatenated bit labels).
    """
    s_tilde = np.asarray(s_tilde, dtype=complex)
    d = np.abs(s_tilde[:, None] - constellation.points[None, :])
    idx = np.argmin(d, axis=1)
    return constellation.points[idx], constellation.bit_labels[idx].ravel()


# --------------------------------------------------------------------------- #
# forward model and objectives
# --------------------------------------------------------------------------- #

def _check_forward_dims(A, s, b, w=None, z=None):
    A = np.asarray(A)
    if A.ndim != 2:
        raise ConfigError(f"A must be 2-d (K, N), got shape {A.shape}")
    K, N = A.shape
    if s is not None and np.shape(s) != (K,):
        raise ConfigError(f"s must have shape ({K},), got {np.shape(s)}")
    if b is not None and np.shape(b) != (N,):
        raise ConfigError(f"b must have shape ({N},), got {np.shape(b)}")
    if w is not None and np.shape(w) != (N,):
        raise ConfigError(f"w must have shape ({N},), got {np.shape(w)}")
    if z is not None and np.shape(z) != (N,):
        raise ConfigError(f"z must have shape ({N},), got {np.shape(z)}")


def forward(A, s, b, w):
    """Noisy magnitude observation z = |A^H s + b + w|.

    Returns (z, y) where y is the complex pre-magnitude field, kept for
    oracle baselines that are allowed to see the true phase.
    """
    _check_forward_dims(A, s, b, w=w)
    A = np.asarray(A, dtype=complex)
    y = A.conj().T @ np.asarray(s, dtype=complex) + np.asarray(b, dtype=complex) \
        + np.asarray(w, dtype=complex)
    return np.abs(y), y


def augmented_channel(A, b):
    """Stack the reference under the channel: column n is [a_n; conj(b_n)].

    Satisfies A_bar^H @ [s; 1] == A^H s + b, which lets the spectral
    initializer treat the reference as a (K+1)-th known user.
    """
    _check_forward_dims(A, None, b)
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return np.vstack([A, b.conj()[None, :]])


def rician_logpdf(z, lam_abs, sigma2):
    """Log density of z = |lambda + w|, w ~ CN(0, sigma2).

    ln(2z/s2) - (z^2 + |lam|^2)/s2 + ln I0(2 z |lam| / s2); -inf at z = 0.
    Broadcasts over array arguments.
    """
    z = np.asarray(z, dtype=float)
    lam_abs = np.asarray(lam_abs, dtype=float)
    if np.any(z < 0) or np.any(lam_abs < 0):
        raise ValueError("z and lam_abs must be nonnegative")
    if not np.all(np.asarray(sigma2) > 0):
        raise ValueError("sigma2 must be positive")
    with np.errstate(divide="ignore"):
        logz = np.log(2.0 * z / sigma2)
    return logz - (z * z + lam_abs * lam_abs) / sigma2 \
        + log_bessel_i0(2.0 * z * lam_abs / sigma2)


def ls_objective(z, A, s, b):
    """Least-squares magnitude misfit ||z - |A^H s + b|||_2^2."""
    _check_forward_dims(A, s, b, z=z)
    A = np.asarray(A, dtype=complex)
    lam = A.conj().T @ np.asarray(s, dtype=complex) + np.asarray(b, dtype=complex)
    r = np.asarray(z, dtype=float) - np.abs(lam)
    return float(r @ r)


def ml_objective(z, A, s, b, sigma2, log_i0_fn=log_bessel_i0):
    """Rician log-likelihood of s, up to the s-independent additive constant.

    sum_n [ -|lam_n|^2/s2 + ln I0(2 z_n |lam_n| / s2) ].  ``log_i0_fn``
    may be swapped for an interpolated table in hot loops.
    """
    _check_forward_dims(A, s, b, z=z)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    A = np.asarray(A, dtype=complex)
    lam = A.conj().T @ np.asarray(s, dtype=complex) + np.asarray(b, dtype=complex)
    lam_abs = np.abs(lam)
    z = np.asarray(z, dtype=float)
    return float(np.sum(-lam_abs * lam_abs / sigma2
                        + log_i0_fn(2.0 * z * lam_abs / sigma2)))
