"""Monte Carlo experiment driver: paired-trial sweeps, NMSE/BER metrics,
deterministic parallel execution, CSV emission.

Every detector at a sweep point consumes the identical scenario stream
(common random numbers), so paired comparisons such as the EM-vs-GS gap
are low-variance.  Trials are split into fixed-size chunks whose
boundaries do not depend on the worker count; per-chunk sums and the
final chunk-ordered reduction use numpy's pairwise summation, which
makes the emitted CSV bit-identical across runs and across --jobs
settings.  (The wall_ms column measures real time; it is written empty
when record_timing is off, e.g. in the selftest golden files.)

Inside a chunk the iterative detectors run in lockstep across trials
(stacked (B, K, N) arrays, one batched linear solve per iteration) with
interpolated Bessel tables; this is the same arithmetic as the public
per-instance detectors and is cross-checked against them in the test
suite.  ``run_trial`` keeps the per-instance route, including objective
traces, for single-shot use and the `detect` CLI.

NMSE is computed on soft (pre-demapping) estimates; BER on hard
decisions.  The ``crlb`` pseudo-detector row carries the normalized
bound averaged over the first ``crlb_trials`` scenario draws of each
point.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bessel import BesselRatioTable, LogBesselI0Table, log_bessel_i0
from .crlb import beta_batch, normalized_crlb
from .detectors import (DetectorConfig, biased_gs, em_gs, exhaustive_search,
                        spectral_init, zf_known_phase)
from .exceptions import ConfigError, NumericalError
from .model import augmented_channel, demap, make_constellation
from .scenario import ScenarioConfig, generate

CSV_COLUMNS = ("detector", "snr_db", "rsr_db", "n", "k", "mod", "trials",
               "nmse", "nmse_db", "ber", "ber_ci95", "mean_iterations",
               "wall_ms", "seed")

DETECTOR_NAMES = ("biased-gs", "em-gs", "zf-known",
                  "exhaustive-ls", "exhaustive-ml", "crlb")
_BER_CAPABLE = tuple(d for d in DETECTOR_NAMES if d != "crlb")

_CHUNK = 512            # trials per work unit; independent of --jobs
_ADAPTIVE_BATCH = 4096  # adaptive-BER stop rule checked at these boundaries
_CAND_CHUNK = 256       # exhaustive candidates evaluated per slab

# partial-sum vector layout per detector
_SUM_SQ, _N_SQ, _BIT_ERR, _N_BITS, _SUM_ITER, _N_FAIL, _ELAPSED = range(7)

_tables = None


def _fast_bessel():
    """Shared interpolation tables for the hot EM loop (built once)."""
    global _tables
    if _tables is None:
        _tables = (BesselRatioTable(), LogBesselI0Table())
    return _tables


@dataclass(frozen=True)
class SweepSpec:
    axis: str                      # "snr_db" or "rsr_db"
    values: tuple
    n: int
    k: int
    constellation_order: int = 4
    snr_db: float = 0.0            # fixed value when sweeping rsr_db
    rsr_db: float = 12.0           # fixed value when sweeping snr_db
    trials: int = 20000
    detectors: tuple = ("biased-gs", "em-gs", "zf-known")
    seed: int = 0
    mode: str = "normalized"
    adaptive_ber: bool = False
    min_bit_errors: int = 200
    max_trials: int = 1_000_000
    crlb_trials: int = 512
    t0: int = 50
    jobs: int = 1
    exhaustive_cap: int = 10_000_000
    record_timing: bool = True
    engine: str = "batched"        # "batched" or "scalar" (must agree)

    def validate(self):
        if self.axis not in ("snr_db", "rsr_db"):
            raise ConfigError(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one axis value")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.engine not in ("batched", "scalar"):
            raise ConfigError(f"unknown engine {self.engine!r}")
        unknown = [d for d in self.detectors if d not in DETECTOR_NAMES]
        if unknown:
            raise ConfigError(f"unknown detectors {unknown}; "
                              f"choose from {list(DETECTOR_NAMES)}")
        if any(d.startswith("exhaustive") for d in self.detectors):
            if self.constellation_order**self.k > self.exhaustive_cap:
                raise ConfigError(
                    f"exhaustive search needs {self.constellation_order**self.k} "
                    f"candidates, above the cap of {self.exhaustive_cap}")


@dataclass
class SweepRow:
    detector: str
    snr_db: float
    rsr_db: float
    n: int
    k: int
    order: int
    trials: int
    nmse: Optional[float]
    nmse_db: Optional[float]
    ber: Optional[float]
    ber_ci95: Optional[float]
    mean_iterations: Optional[float]
    wall_ms: Optional[float]
    seed: int


@dataclass
class TrialResult:
    sq_err: Optional[float] = None
    bit_errors: int = 0
    n_bits: int = 0
    bits: Optional[np.ndarray] = None
    iterations: int = 0
    crlb: Optional[float] = None
    elapsed: float = 0.0
    error: Optional[str] = None


def run_trial(cfg, detectors, trial_index, det_cfg=None, exhaustive_cap=10_000_000):
    """Run every requested detector on one shared scenario draw.

    The spectral initializer is computed once and fed to both GS-family
    detectors.  Detector failures are annotated, not raised.  Returns a
    dict name -> TrialResult.
    """
    det_cfg = det_cfg or DetectorConfig()
    sc = generate(cfg, trial_index)
    constellation = make_constellation(cfg.constellation_order)
    _, bits_true = demap(sc.s_true, constellation)
    ratio_tab, log_i0_tab = _fast_bessel()

    out = {}
    gs_family = [d for d in detectors if d in ("biased-gs", "em-gs")]
    s0 = None
    init_elapsed = 0.0
    if gs_family:
        t_init = time.perf_counter()
        s0 = spectral_init(sc.z, augmented_channel(sc.A, sc.b), det_cfg).s0
        init_elapsed = (time.perf_counter() - t_init) / len(gs_family)

    for name in detectors:
        t_start = time.perf_counter()
        try:
            if name == "biased-gs":
                res = biased_gs(sc.z, sc.A, sc.b, constellation, det_cfg, s0=s0)
            elif name == "em-gs":
                res = em_gs(sc.z, sc.A, sc.b, sc.sigma2, constellation, det_cfg,
                            s0=s0, ratio_fn=ratio_tab, log_i0_fn=log_i0_tab)
            elif name == "zf-known":
                res = zf_known_phase(sc.y_oracle, sc.A, sc.b, constellation)
            elif name == "exhaustive-ls":
                res = exhaustive_search(sc.z, sc.A, sc.b, sc.sigma2, constellation,
                                        criterion="ls", cap=exhaustive_cap)
            elif name == "exhaustive-ml":
                res = exhaustive_search(sc.z, sc.A, sc.b, sc.sigma2, constellation,
                                        criterion="ml", cap=exhaustive_cap)
            elif name == "crlb":
                val = normalized_crlb(sc.A, sc.s_true, sc.b, sc.sigma2,
                                      beta_fn=beta_batch)
                out[name] = TrialResult(crlb=val,
                                        elapsed=time.perf_counter() - t_start)
                continue
            else:
                raise ConfigError(f"unknown detector {name!r}")
        except (ConfigError, NumericalError, ValueError) as exc:
            out[name] = TrialResult(error=str(exc),
                                    elapsed=time.perf_counter() - t_start)
            continue
        elapsed = time.perf_counter() - t_start
        if name in ("biased-gs", "em-gs"):
            elapsed += init_elapsed
        diff = sc.s_true - res.s_soft
        out[name] = TrialResult(
            sq_err=float(np.real(np.vdot(diff, diff))),
            bit_errors=int(np.count_nonzero(bits_true != res.bits)),
            n_bits=bits_true.size,
            bits=res.bits,
            iterations=res.iterations_run,
            elapsed=elapsed,
        )
    return out


# --------------------------------------------------------------------------- #
# batched chunk engine
# --------------------------------------------------------------------------- #

class _Batch:
    """Trials [start, stop) of one sweep point, stacked along axis 0."""

    def __init__(self, cfg, start, stop):
        scs = [generate(cfg, t) for t in range(start, stop)]
        self.start = start
        self.stop = stop
        self.A = np.stack([sc.A for sc in scs])            # (B, K, N)
        self.AhT = self.A.conj().transpose(0, 2, 1)        # (B, N, K)
        self.b = np.stack([sc.b for sc in scs])            # (B, N)
        self.z = np.stack([sc.z for sc in scs])            # (B, N)
        self.y = np.stack([sc.y_oracle for sc in scs])     # (B, N)
        self.s_true = np.stack([sc.s_true for sc in scs])  # (B, K)
        self.sigma2 = scs[0].sigma2
        self._ginv = None

    @property
    def size(self):
        return self.stop - self.start

    def ginv(self):
        if self._ginv is None:
            gram = self.A @ self.AhT
            self._ginv = np.linalg.inv(gram)
        return self._ginv

    def matvec_ah(self, s):
        """A^H s per trial: (B, N)."""
        return (self.AhT @ s[:, :, None])[:, :, 0]

    def solve(self, target):
        """(A A^H)^{-1} A target per trial: (B, K)."""
        rhs = self.A @ target[:, :, None]
        return (self.ginv() @ rhs)[:, :, 0]


def _unit_batch(lam, mag):
    unit = np.ones_like(lam)
    np.divide(lam, mag, out=unit, where=mag > 0)
    return unit


def _spectral_init_batch(batch, det_cfg):
    A_bar = np.concatenate([batch.A, batch.b.conj()[:, None, :]], axis=1)
    A_bar_H = A_bar.conj().transpose(0, 2, 1)              # (B, N, D)
    M = (A_bar * batch.z[:, None, :]) @ A_bar_H
    B, D = M.shape[0], M.shape[1]
    v = np.full((B, D), 1.0 / math.sqrt(D), dtype=complex)
    tiny = np.finfo(float).tiny
    converged = np.zeros(B, dtype=bool)
    for _ in range(det_cfg.power_iter_max):
        Mv = (M @ v[:, :, None])[:, :, 0]
        nrm = np.linalg.norm(Mv, axis=1)
        ray = np.real(np.sum(v.conj() * Mv, axis=1))
        resid = np.linalg.norm(Mv - ray[:, None] * v, axis=1)
        converged |= resid <= det_cfg.power_iter_tol * np.maximum(ray, tiny)
        nz = nrm > 0
        v[nz] = Mv[nz] / nrm[nz, None]
        if np.all(converged | ~nz):
            break
    g = (A_bar_H @ v[:, :, None])[:, :, 0]                 # (B, N)
    den = np.sum(g.real**2 + g.imag**2, axis=1)
    num = np.sum(np.abs(g) * batch.z, axis=1)
    r = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    s_bar = r[:, None] * v
    anchor = s_bar[:, D - 1]
    mag = np.abs(anchor)
    phase = np.ones_like(anchor)
    np.divide(anchor.conj(), mag, out=phase, where=mag > 0)
    return phase[:, None] * s_bar[:, :D - 1]


def _gs_iterations_batch(batch, s0, t0, em, ratio_tab):
    """Lockstep GS / EM-GS iterations over a whole chunk (no traces)."""
    s = s0
    lam = batch.matvec_ah(s) + batch.b
    zc = (2.0 / batch.sigma2) * batch.z if em else None
    for _ in range(t0):
        mag = np.abs(lam)
        unit = _unit_batch(lam, mag)
        if em:
            target = (batch.z * unit) * ratio_tab(zc * mag) - batch.b
        else:
            target = batch.z * unit - batch.b
        s = batch.solve(target)
        lam = batch.matvec_ah(s) + batch.b
    return s


def _demap_batch(soft, constellation):
    d = np.abs(soft[:, :, None] - constellation.points[None, None, :])
    idx = np.argmin(d, axis=2)
    bits = constellation.bit_labels[idx].reshape(soft.shape[0], -1)
    return idx, bits


def _exhaustive_batch(batch, constellation, criterion):
    K = batch.A.shape[1]
    M = constellation.order
    n_cand = M**K
    weights = M ** np.arange(K - 1, -1, -1)
    B = batch.size
    best_val = np.full(B, np.inf)
    best_idx = np.zeros(B, dtype=np.int64)
    for start in range(0, n_cand, _CAND_CHUNK):
        stop = min(start + _CAND_CHUNK, n_cand)
        cand = np.arange(start, stop)
        digits = (cand[None, :] // weights[:, None]) % M
        S = constellation.points[digits]                    # (K, C)
        lam = batch.AhT @ S + batch.b[:, :, None]           # (B, N, C)
        mag = np.abs(lam)
        if criterion == "ls":
            r = batch.z[:, :, None] - mag
            obj = np.sum(r * r, axis=1)                     # (B, C)
        else:
            kap = (2.0 / batch.sigma2) * batch.z[:, :, None] * mag
            obj = -np.sum(-mag * mag / batch.sigma2
                          + log_bessel_i0(kap.ravel()).reshape(kap.shape), axis=1)
        loc = np.argmin(obj, axis=1)
        val = obj[np.arange(B), loc]
        better = val < best_val
        best_val[better] = val[better]
        best_idx[better] = start + loc[better]
    digits = (best_idx[:, None] // weights[None, :]) % M
    return constellation.points[digits]                     # (B, K)


def _crlb_batch(batch, n_trials):
    """Normalized bound for the first n_trials trials of the chunk."""
    ratio_tab, log_i0_tab = _fast_bessel()
    A = batch.A[:n_trials]
    lam_abs = np.abs((batch.AhT[:n_trials] @ batch.s_true[:n_trials, :, None])[:, :, 0]
                     + batch.b[:n_trials])
    betas = beta_batch(lam_abs.ravel(), batch.sigma2,
                       ratio_fn=ratio_tab, log_i0_fn=log_i0_tab).reshape(lam_abs.shape)
    I = (A * betas[:, None, :]) @ A.conj().transpose(0, 2, 1)
    evals = np.linalg.eigvalsh(I)
    ok = evals[:, 0] > 1e-14 * np.maximum(evals[:, -1], np.finfo(float).tiny)
    vals = np.zeros(n_trials)
    vals[ok] = np.sum(1.0 / evals[ok], axis=1) / A.shape[1]
    return vals, ok


def _run_chunk_batched(spec, cfg, start, stop):
    det_cfg = DetectorConfig(t0=spec.t0)
    constellation = make_constellation(cfg.constellation_order)
    ratio_tab, _ = _fast_bessel()
    batch = _Batch(cfg, start, stop)
    B = batch.size
    _, bits_true = _demap_batch(batch.s_true, constellation)
    bits_true = bits_true.astype(np.uint8)

    partials = {}
    gs_family = [d for d in spec.detectors if d in ("biased-gs", "em-gs")]
    s0 = None
    init_elapsed = 0.0
    if gs_family:
        t_init = time.perf_counter()
        s0 = _spectral_init_batch(batch, det_cfg)
        init_elapsed = (time.perf_counter() - t_init) / len(gs_family)

    for name in spec.detectors:
        vec = np.zeros(7)
        t_start = time.perf_counter()
        if name == "crlb":
            n_trials = max(0, min(stop, spec.crlb_trials) - start)
            if n_trials > 0:
                vals, ok = _crlb_batch(batch, n_trials)
                vec[_SUM_SQ] = vals[ok].sum()
                vec[_N_SQ] = int(ok.sum())
                vec[_N_FAIL] = int(n_trials - ok.sum())
            vec[_ELAPSED] = time.perf_counter() - t_start
            partials[name] = vec
            continue
        if name == "biased-gs":
            soft = _gs_iterations_batch(batch, s0, spec.t0, False, ratio_tab)
            iters = spec.t0
        elif name == "em-gs":
            soft = _gs_iterations_batch(batch, s0, spec.t0, True, ratio_tab)
            iters = spec.t0
        elif name == "zf-known":
            soft = batch.solve(batch.y - batch.b)
            iters = 0
        elif name == "exhaustive-ls":
            soft = _exhaustive_batch(batch, constellation, "ls")
            iters = 0
        elif name == "exhaustive-ml":
            soft = _exhaustive_batch(batch, constellation, "ml")
            iters = 0
        else:
            raise ConfigError(f"unknown detector {name!r}")
        diff = batch.s_true - soft
        sq = np.sum(diff.real**2 + diff.imag**2, axis=1)
        _, bits = _demap_batch(soft, constellation)
        errs = np.count_nonzero(bits != bits_true, axis=1)
        elapsed = time.perf_counter() - t_start
        if name in ("biased-gs", "em-gs"):
            elapsed += init_elapsed
        vec[_SUM_SQ] = sq.sum()
        vec[_N_SQ] = B
        vec[_BIT_ERR] = errs.sum()
        vec[_N_BITS] = bits_true.size
        vec[_SUM_ITER] = iters * B
        vec[_ELAPSED] = elapsed
        partials[name] = vec
    return partials


def _run_chunk_scalar(spec, cfg, start, stop):
    det_cfg = DetectorConfig(t0=spec.t0)
    names = list(spec.detectors)
    per_trial = {name: np.zeros((stop - start, 7)) for name in names}
    for i, trial_index in enumerate(range(start, stop)):
        active = [d for d in names
                  if d != "crlb" or trial_index < spec.crlb_trials]
        results = run_trial(cfg, active, trial_index, det_cfg,
                            exhaustive_cap=spec.exhaustive_cap)
        for name, res in results.items():
            row = per_trial[name][i]
            row[_ELAPSED] = res.elapsed
            if res.error is not None:
                row[_N_FAIL] = 1.0
                continue
            if name == "crlb":
                row[_SUM_SQ] = res.crlb
                row[_N_SQ] = 1.0
            else:
                row[_SUM_SQ] = res.sq_err
                row[_N_SQ] = 1.0
                row[_BIT_ERR] = res.bit_errors
                row[_N_BITS] = res.n_bits
                row[_SUM_ITER] = res.iterations
    return {name: arr.sum(axis=0) for name, arr in per_trial.items()}


def _run_chunk(spec, cfg, start, stop):
    if spec.engine == "scalar":
        return _run_chunk_scalar(spec, cfg, start, stop)
    try:
        return _run_chunk_batched(spec, cfg, start, stop)
    except np.linalg.LinAlgError:
        # a singular Gram matrix in the batch; per-trial route annotates it
        return _run_chunk_scalar(spec, cfg, start, stop)


def _run_chunk_star(args):
    return _run_chunk(*args)


def _execute(pool, spec, cfg, chunks):
    args = [(spec, cfg, start, stop) for start, stop in chunks]
    if pool is None:
        return [_run_chunk(*a) for a in args]
    return list(pool.map(_run_chunk_star, args))


def _combine(partials, names):
    return {name: np.stack([p[name] for p in partials]).sum(axis=0)
            for name in names}


def _point_config(spec, value):
    snr = value if spec.axis == "snr_db" else spec.snr_db
    rsr = value if spec.axis == "rsr_db" else spec.rsr_db
    return ScenarioConfig(n=spec.n, k=spec.k,
                          constellation_order=spec.constellation_order,
                          snr_db=snr, rsr_db=rsr, seed=spec.seed, mode=spec.mode)


def run_sweep(spec):
    """Run the sweep; returns rows ordered axis value major, detector minor."""
    spec.validate()
    _fast_bessel()  # build tables before forking workers
    pool = ProcessPoolExecutor(max_workers=spec.jobs) if spec.jobs > 1 else None
    rows = []
    try:
        for value in spec.values:
            cfg = _point_config(spec, value)
            partials = []
            executed = 0
            if not spec.adaptive_ber:
                target = spec.trials
                chunks = [(s, min(s + _CHUNK, target))
                          for s in range(0, target, _CHUNK)]
                partials = _execute(pool, spec, cfg, chunks)
                executed = target
            else:
                while True:
                    batch_stop = min(executed + _ADAPTIVE_BATCH, spec.max_trials)
                    chunks = [(s, min(s + _CHUNK, batch_stop))
                              for s in range(executed, batch_stop, _CHUNK)]
                    partials.extend(_execute(pool, spec, cfg, chunks))
                    executed = batch_stop
                    totals = _combine(partials, spec.detectors)
                    done = all(totals[d][_BIT_ERR] >= spec.min_bit_errors
                               for d in spec.detectors if d in _BER_CAPABLE)
                    if done or executed >= spec.max_trials:
                        break
            totals = _combine(partials, spec.detectors)
            for name in sorted(spec.detectors):
                rows.append(_make_row(spec, cfg, name, totals[name], executed))
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def _make_row(spec, cfg, name, t, executed):
    wall = t[_ELAPSED] * 1000.0 if spec.record_timing else None
    if name == "crlb":
        n_val = int(t[_N_SQ])
        nmse = t[_SUM_SQ] / n_val if n_val else None
        return SweepRow(name, cfg.snr_db, cfg.rsr_db, cfg.n, cfg.k,
                        cfg.constellation_order, n_val, nmse, _to_db(nmse),
                        None, None, None, wall, spec.seed)
    n_ok = int(t[_N_SQ])
    nmse = t[_SUM_SQ] / (n_ok * cfg.k) if n_ok else None
    n_bits = int(t[_N_BITS])
    ber = t[_BIT_ERR] / n_bits if n_bits else None
    ci = 1.96 * math.sqrt(ber * (1.0 - ber) / n_bits) if n_bits else None
    mean_iter = t[_SUM_ITER] / n_ok if n_ok else None
    return SweepRow(name, cfg.snr_db, cfg.rsr_db, cfg.n, cfg.k,
                    cfg.constellation_order, executed, nmse, _to_db(nmse),
                    ber, ci, mean_iter, wall, spec.seed)


def _to_db(x):
    if x is None:
        return None
    if x == 0.0:
        return float("-inf")
    return 10.0 * math.log10(x)


# --------------------------------------------------------------------------- #
# CSV emission
# --------------------------------------------------------------------------- #

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.10g}"


def rows_to_csv(rows):
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in (
            r.detector, r.snr_db, r.rsr_db, r.n, r.k, f"{r.order}qam",
            r.trials, r.nmse, r.nmse_db, r.ber, r.ber_ci95,
            r.mean_iterations, r.wall_ms, r.seed)))
    return "\n".join(lines) + "\n"


def write_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rows_to_csv(rows))


def ber_low_confidence(row):
    """True when a BER estimate rests on fewer than 10 bit errors."""
    if row.ber is None:
        return True
    bits_per_symbol = int(math.log2(row.order))
    return row.ber * row.trials * row.k * bits_per_symbol < 10
