"""Symbol detectors for the biased magnitude-only observation model.

* ``spectral_init``     -- weighted-covariance spectral initializer on the
  reference-augmented channel, with the absolute phase pinned by the
  known reference entry.
* ``biased_gs``         -- alternating minimization of the least-squares
  magnitude misfit: phase step, then a linear solve.
* ``em_gs``             -- expectation-maximization over the latent
  measurement phases; the M-step is the same linear solve applied to
  magnitudes filtered by R(kappa) = I1(kappa)/I0(kappa).
* ``zf_known_phase``    -- genie baseline that sees the complex field.
* ``exhaustive_search`` -- global LS or ML minimizer over the finite
  constellation (cap-guarded).

All detectors are pure functions; the Gram matrix A A^H is factored once
per call and reused across iterations.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .bessel import bessel_ratio, log_bessel_i0
from .exceptions import ConfigError, SingularMatrixError
from .model import augmented_channel, demap

_CAND_CHUNK = 4096


@dataclass(frozen=True)
class DetectorConfig:
    t0: int = 50                      # fixed iteration count
    power_iter_max: int = 200
    power_iter_tol: float = 1e-10
    convergence_tol: Optional[float] = None  # early stop on ||s_t - s_{t-1}||

    def validate(self):
        if self.t0 < 1:
            raise ConfigError("t0 must be >= 1")


@dataclass
class SpectralInit:
    s0: np.ndarray
    converged: bool
    iterations: int


@dataclass
class DetectionResult:
    s_soft: np.ndarray         # estimate before constellation projection
    s_hard: np.ndarray         # projected symbols
    bits: np.ndarray           # concatenated labels of s_hard
    iterations_run: int
    objective_trace: np.ndarray  # length iterations_run + 1, incl. init


def _factor_gram(A):
    G = A @ A.conj().T
    try:
        return cho_factor(G, check_finite=False)
    except LinAlgError:
        raise SingularMatrixError("A A^H", np.linalg.cond(G)) from None


def _unit_phase(lam, mag):
    """exp(i angle(lam)) elementwise, 1 where lam == 0."""
    unit = np.ones_like(lam)
    np.divide(lam, mag, out=unit, where=mag > 0)
    return unit


def spectral_init(z, A_bar, cfg=None):
    """Initial estimate from the principal eigenvector of the weighted
    covariance M = sum_n z_n abar_n abar_n^H.

    Power iteration starts from the normalized all-ones vector; the
    magnitude is fitted to z and the global phase is anchored so the
    reference entry of the augmented vector has phase zero.  A degenerate
    all-zero z returns s0 = 0 with converged=False.
    """
    cfg = cfg or DetectorConfig()
    A_bar = np.asarray(A_bar, dtype=complex)
    z = np.asarray(z, dtype=float)
    dim = A_bar.shape[0]
    M = (A_bar * z[None, :]) @ A_bar.conj().T

    v = np.full(dim, 1.0 / np.sqrt(dim), dtype=complex)
    converged = False
    iterations = 0
    for iterations in range(1, cfg.power_iter_max + 1):
        Mv = M @ v
        nrm = np.linalg.norm(Mv)
        if nrm == 0.0:
            return SpectralInit(np.zeros(dim - 1, dtype=complex), False, iterations)
        ray = float(np.real(np.vdot(v, Mv)))
        resid = np.linalg.norm(Mv - ray * v)
        v = Mv / nrm
        if resid <= cfg.power_iter_tol * max(ray, np.finfo(float).tiny):
            converged = True
            break

    g = A_bar.conj().T @ v
    den = float(np.real(np.vdot(g, g)))
    r_bar = float(np.abs(g) @ z) / den if den > 0 else 0.0
    s_bar = r_bar * v
    anchor = s_bar[dim - 1]
    if anchor != 0:
        s_bar = (anchor.conjugate() / abs(anchor)) * s_bar
    return SpectralInit(s_bar[:dim - 1], converged, iterations)


def _resolve_s0(z, A, b, cfg, s0):
    if s0 is not None:
        return np.asarray(s0, dtype=complex)
    return spectral_init(z, augmented_channel(A, b), cfg).s0


def biased_gs(z, A, b, constellation, cfg=None, s0=None):
    """Alternating phase/LS minimization of ||z - |A^H s + b|||^2.

    The objective trace (length t0+1, starting at s0) is non-increasing.
    """
    cfg = cfg or DetectorConfig()
    cfg.validate()
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    z = np.asarray(z, dtype=float)
    cho = _factor_gram(A)
    Ah = A.conj().T
    s = _resolve_s0(z, A, b, cfg, s0)

    lam = Ah @ s + b
    trace = np.empty(cfg.t0 + 1)
    resid = z - np.abs(lam)
    trace[0] = resid @ resid
    t = 0
    for t in range(1, cfg.t0 + 1):
        mag = np.abs(lam)
        unit = _unit_phase(lam, mag)
        target = z * unit - b
        s_new = cho_solve(cho, A @ target, check_finite=False)
        lam = Ah @ s_new + b
        resid = z - np.abs(lam)
        trace[t] = resid @ resid
        if cfg.convergence_tol is not None \
                and np.linalg.norm(s_new - s) <= cfg.convergence_tol:
            s = s_new
            break
        s = s_new
    hard, bits = demap(s, constellation)
    return DetectionResult(s, hard, bits, t, trace[:t + 1])


def em_gs(z, A, b, sigma2, constellation, cfg=None, s0=None,
          ratio_fn=bessel_ratio, log_i0_fn=log_bessel_i0):
    """EM detection with the latent measurement phase marginalized out.

    Each iteration filters the measured magnitudes by R(kappa), kappa =
    (2/sigma2) z |A^H s + b|, then solves the same regression as
    biased_gs.  The recorded log-likelihood trace is non-decreasing.
    ``ratio_fn``/``log_i0_fn`` accept interpolated-table replacements for
    Monte Carlo hot loops.
    """
    cfg = cfg or DetectorConfig()
    cfg.validate()
    if sigma2 <= 0:
        raise ConfigError("em_gs requires sigma2 > 0")
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    z = np.asarray(z, dtype=float)
    cho = _factor_gram(A)
    Ah = A.conj().T
    s = _resolve_s0(z, A, b, cfg, s0)
    inv_s2 = 1.0 / sigma2

    lam = Ah @ s + b
    mag = np.abs(lam)
    zc = 2.0 * inv_s2 * z
    trace = np.empty(cfg.t0 + 1)
    trace[0] = np.sum(-mag * mag * inv_s2 + log_i0_fn(zc * mag))
    t = 0
    for t in range(1, cfg.t0 + 1):
        unit = _unit_phase(lam, mag)
        kappa = zc * mag
        target = (z * unit) * ratio_fn(kappa) - b
        s_new = cho_solve(cho, A @ target, check_finite=False)
        lam = Ah @ s_new + b
        mag = np.abs(lam)
        trace[t] = np.sum(-mag * mag * inv_s2 + log_i0_fn(zc * mag))
        if cfg.convergence_tol is not None \
                and np.linalg.norm(s_new - s) <= cfg.convergence_tol:
            s = s_new
            break
        s = s_new
    hard, bits = demap(s, constellation)
    return DetectionResult(s, hard, bits, t, trace[:t + 1])


def zf_known_phase(y_oracle, A, b, constellation):
    """Genie zero-forcing on the complex field: s = (A A^H)^{-1} A (y - b)."""
    A = np.asarray(A, dtype=complex)
    y = np.asarray(y_oracle, dtype=complex)
    b = np.asarray(b, dtype=complex)
    cho = _factor_gram(A)
    s = cho_solve(cho, A @ (y - b), check_finite=False)
    resid = y - (A.conj().T @ s + b)
    hard, bits = demap(s, constellation)
    return DetectionResult(s, hard, bits, 0, np.array([float(np.real(np.vdot(resid, resid)))]))


def exhaustive_search(z, A, b, sigma2, constellation, criterion="ls", cap=10_000_000):
    """Global search over all |S|^K candidate symbol vectors.

    criterion "ls" minimizes the magnitude misfit; "ml" maximizes the
    Rician log-likelihood.  Ties break toward the lowest candidate index
    in lexicographic order (user 0 most significant).  Refuses to run
    when |S|^K exceeds ``cap``.
    """
    if criterion not in ("ls", "ml"):
        raise ConfigError(f"unknown criterion {criterion!r}")
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    z = np.asarray(z, dtype=float)
    K = A.shape[0]
    M = constellation.order
    n_cand = M**K
    if n_cand > cap:
        raise ConfigError(
            f"exhaustive search needs {n_cand} candidate evaluations, "
            f"above the cap of {int(cap)}; raise the cap or shrink K/|S|")

    Ah = A.conj().T
    weights = M ** np.arange(K - 1, -1, -1)  # user 0 most significant
    best_obj = None
    best_idx = -1
    sign = 1.0 if criterion == "ls" else -1.0  # minimize sign*objective
    for start in range(0, n_cand, _CAND_CHUNK):
        stop = min(start + _CAND_CHUNK, n_cand)
        cand = np.arange(start, stop)
        digits = (cand[None, :] // weights[:, None]) % M
        S = constellation.points[digits]            # (K, chunk)
        mag = np.abs(Ah @ S + b[:, None])           # (N, chunk)
        if criterion == "ls":
            r = z[:, None] - mag
            obj = np.sum(r * r, axis=0)
        else:
            obj = -np.sum(-mag * mag / sigma2
                          + log_bessel_i0(2.0 * z[:, None] * mag / sigma2), axis=0)
        local = int(np.argmin(obj))
        if best_obj is None or obj[local] < best_obj:
            best_obj = float(obj[local])
            best_idx = start + local
    digits = (best_idx // weights) % M
    s = constellation.points[digits]
    hard, bits = demap(s, constellation)
    return DetectionResult(s, hard, bits, 0, np.array([sign * best_obj]))
