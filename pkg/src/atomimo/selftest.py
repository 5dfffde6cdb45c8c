"""Invariant suite behind the `selftest` CLI subcommand.

Each check prints one PASS/FAIL line; the suite exits nonzero when any
check fails.  The final check runs a small fixed-seed reference sweep
with 1 and with 8 workers and compares the emitted CSVs byte for byte;
those same reference ("golden") CSVs can be written out for the plotting
package's smoke tests.
"""

import math
import os
from dataclasses import replace

import numpy as np
from scipy import integrate

from .bessel import bessel_ratio, log_bessel_i0
from .crlb import beta_batch, fisher, score
from .detectors import DetectorConfig, biased_gs, em_gs
from .harness import SweepSpec, rows_to_csv, run_sweep, write_csv
from .model import make_constellation, rician_logpdf

_GS_TOL = 1e-9


def _random_instance(rng, model_consistent):
    k = int(rng.integers(2, 4))
    n = int(rng.integers(k + 3, 14))
    A = (rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))) / math.sqrt(2)
    b_scale = float(10.0 ** rng.uniform(-1.0, 1.0))
    b = b_scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
    sigma2 = float(10.0 ** rng.uniform(-2.0, 1.0))
    if model_consistent:
        s = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2)
        w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * math.sqrt(sigma2 / 2)
        z = np.abs(A.conj().T @ s + b + w)
    else:
        z = np.abs(rng.standard_normal(n)) * float(10.0 ** rng.uniform(-1.0, 1.0))
    s0 = (rng.standard_normal(k) + 1j * rng.standard_normal(k))
    return A, b, z, sigma2, s0


def check_gs_objective_monotone(n_instances=1000, seed=1234):
    """biased-GS LS objective never increases along the iteration."""
    rng = np.random.default_rng(seed)
    c = make_constellation(4)
    cfg = DetectorConfig(t0=15)
    worst = 0.0
    for i in range(n_instances):
        A, b, z, _, s0 = _random_instance(rng, model_consistent=(i % 2 == 0))
        tr = biased_gs(z, A, b, c, cfg, s0=s0).objective_trace
        rise = np.diff(tr) - _GS_TOL * np.abs(tr[:-1])
        worst = max(worst, float(rise.max(initial=-np.inf)))
        if worst > 0:
            return False, f"objective rose by {worst:.3e} on instance {i}"
    return True, f"{n_instances} instances, max slack {worst:.3e}"


def check_em_objective_monotone(n_instances=1000, seed=4321):
    """EM-GS log-likelihood never decreases along the iteration."""
    rng = np.random.default_rng(seed)
    c = make_constellation(4)
    cfg = DetectorConfig(t0=15)
    worst = 0.0
    for i in range(n_instances):
        A, b, z, sigma2, s0 = _random_instance(rng, model_consistent=(i % 2 == 0))
        tr = em_gs(z, A, b, sigma2, c, cfg, s0=s0).objective_trace
        drop = -np.diff(tr) - _GS_TOL * np.abs(tr[:-1])
        worst = max(worst, float(drop.max(initial=-np.inf)))
        if worst > 0:
            return False, f"log-likelihood fell by {worst:.3e} on instance {i}"
    return True, f"{n_instances} instances, max slack {worst:.3e}"


def check_rician_normalization():
    """The Rician density integrates to 1 (tolerance 1e-8)."""
    for lam, s2 in ((0.0, 1.0), (1.0, 1.0), (3.0, 0.5)):
        val, _ = integrate.quad(
            lambda zz: float(np.exp(rician_logpdf(zz, lam, s2))) if zz > 0 else 0.0,
            0.0, lam + 12.0 * math.sqrt(s2), epsrel=1e-10, limit=300)
        if abs(val - 1.0) > 1e-8:
            return False, f"integral {val} at (|lam|,s2)=({lam},{s2})"
    return True, "integrates to 1 at three (|lam|, sigma2) points"


def check_filtered_mean_identity():
    """E{z R(kappa)} equals |lambda| (tolerance 1e-6 relative)."""
    for lam, s2 in ((0.5, 1.0), (1.0, 1.0), (4.0, 0.25)):
        def f(zz):
            r = bessel_ratio(2.0 * zz * lam / s2)
            return zz * r * float(np.exp(rician_logpdf(zz, lam, s2)))
        val, _ = integrate.quad(f, 0.0, lam + 12.0 * math.sqrt(s2),
                                epsrel=1e-10, limit=300)
        if abs(val - lam) > 1e-6 * lam:
            return False, f"E(zR)={val} vs |lam|={lam}"
    return True, "holds at three (|lam|, sigma2) points"


def _score_fixture(seed=77):
    rng = np.random.default_rng(seed)
    K, N = 2, 8
    A = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / math.sqrt(2)
    b = 2.0 * (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / math.sqrt(2)
    s = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) / math.sqrt(2)
    return A, b, s, 0.8, rng


def check_score_mean_zero(n_samples=200_000):
    """Monte Carlo mean of the likelihood gradient is 0 (within 3 SE)."""
    A, b, s, sigma2, rng = _score_fixture()
    lam = A.conj().T @ s + b
    N = lam.size
    w = (rng.standard_normal((n_samples, N)) + 1j * rng.standard_normal((n_samples, N))) \
        * math.sqrt(sigma2 / 2)
    z = np.abs(lam[None, :] + w)
    mag = np.abs(lam)
    r = bessel_ratio((2.0 / sigma2) * z * mag[None, :])
    coef = (z * r / mag[None, :] - 1.0) / sigma2 * lam[None, :]
    scores = coef @ A.T                      # (S, K)
    mean = scores.mean(axis=0)
    se_re = scores.real.std(axis=0, ddof=1) / math.sqrt(n_samples)
    se_im = scores.imag.std(axis=0, ddof=1) / math.sqrt(n_samples)
    ok = np.all(np.abs(mean.real) <= 3 * se_re) and np.all(np.abs(mean.imag) <= 3 * se_im)
    return bool(ok), f"|mean| up to {np.abs(mean).max():.2e} at {n_samples} samples"


def check_score_finite_differences():
    """The closed-form gradient matches central differences (1e-5 rel)."""
    A, b, s, sigma2, rng = _score_fixture(seed=78)
    z = np.abs(A.conj().T @ s + b
               + (rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1]))
               * math.sqrt(sigma2 / 2))

    def loglik(sv):
        lam_abs = np.abs(A.conj().T @ sv + b)
        return float(np.sum(rician_logpdf(z, lam_abs, sigma2)))

    g, excluded = score(z, A, s, b, sigma2)
    if excluded.any():
        return False, "unexpected excluded terms"
    h = 1e-6
    fd = np.zeros_like(g)
    for kk in range(s.size):
        e = np.zeros_like(s)
        e[kk] = h
        d_re = (loglik(s + e) - loglik(s - e)) / (2 * h)
        e[kk] = 1j * h
        d_im = (loglik(s + e) - loglik(s - e)) / (2 * h)
        fd[kk] = 0.5 * (d_re + 1j * d_im)    # d/d conj(s_k) of a real function
    rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-12)
    return bool(np.all(rel <= 1e-5)), f"max rel dev {rel.max():.2e}"


def check_ratio_properties():
    """R bounds/monotonicity and d/dx log I0 = R."""
    x = np.linspace(0.0, 120.0, 24001)
    r = bessel_ratio(x)
    if not (r[0] == 0.0 and np.all(r >= 0.0) and np.all(r < 1.0)):
        return False, "bounds violated"
    if np.any(np.diff(r) < -1e-15):
        return False, "not monotone on the grid"
    for xx in (0.5, 2.0, 10.0, 100.0):
        h = 1e-6 * max(xx, 1.0)
        d = (log_bessel_i0(xx + h) - log_bessel_i0(xx - h)) / (2 * h)
        if abs(d - bessel_ratio(xx)) > 1e-6 * max(bessel_ratio(xx), 1e-12):
            return False, f"derivative identity fails at x={xx}"
    return True, "bounds, monotonicity, derivative identity"


def check_fisher_hermitian_psd(n_instances=20, seed=5150):
    """Fisher matrices are Hermitian and positive semi-definite."""
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        K, N = 3, 12
        A = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / math.sqrt(2)
        b = 2.0 * (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / math.sqrt(2)
        s = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) / math.sqrt(2)
        fm = fisher(A, s, b, 0.7, beta_fn=beta_batch)
        herm = np.abs(fm.I - fm.I.conj().T).max()
        if herm > 1e-12 * max(np.abs(fm.I).max(), 1.0):
            return False, f"not Hermitian ({herm:.2e})"
        evals = np.linalg.eigvalsh(fm.I)
        if evals[0] < -1e-10 * max(evals[-1], 1.0):
            return False, f"negative eigenvalue {evals[0]:.2e}"
    return True, f"{n_instances} random instances"


def check_em_reduces_to_gs(seed=99):
    """With R forced to 1, EM-GS reproduces biased-GS bit for bit."""
    rng = np.random.default_rng(seed)
    ones = lambda x: np.ones_like(np.asarray(x, dtype=float))
    c = make_constellation(4)
    for t0 in (1, 3, 7):
        A, b, z, sigma2, s0 = _random_instance(rng, model_consistent=True)
        cfg = DetectorConfig(t0=t0)
        r_gs = biased_gs(z, A, b, c, cfg, s0=s0)
        r_em = em_gs(z, A, b, sigma2, c, cfg, s0=s0, ratio_fn=ones)
        if r_gs.s_soft.tobytes() != r_em.s_soft.tobytes():
            return False, f"iterates diverge at t0={t0}"
    return True, "identical iterates at t0 in {1, 3, 7}"


def golden_specs(jobs=1):
    """Small fixed sweeps used for reproducibility checks and plot smoke tests."""
    base = SweepSpec(
        axis="snr_db", values=(0.0, 6.0), n=12, k=2, constellation_order=4,
        snr_db=3.0, rsr_db=10.0, trials=192,
        detectors=("biased-gs", "em-gs", "zf-known",
                   "exhaustive-ls", "exhaustive-ml", "crlb"),
        seed=20240501, crlb_trials=64, t0=25, jobs=jobs, record_timing=False)
    rsr = replace(base, axis="rsr_db", values=(0.0, 12.0))
    return base, rsr


def check_sweep_reproducible_across_workers():
    """A fixed-seed sweep emits byte-identical CSVs with 1 and 8 workers."""
    snr_spec, _ = golden_specs()
    csv1 = rows_to_csv(run_sweep(replace(snr_spec, jobs=1)))
    csv8 = rows_to_csv(run_sweep(replace(snr_spec, jobs=8)))
    if csv1 != csv8:
        return False, "CSV differs between 1 and 8 workers"
    return True, f"{len(csv1)} CSV bytes identical across worker counts"


CHECKS = (
    ("biased-gs objective non-increasing", check_gs_objective_monotone),
    ("em-gs log-likelihood non-decreasing", check_em_objective_monotone),
    ("rician pdf normalization", check_rician_normalization),
    ("E(z R(kappa)) = |lambda|", check_filtered_mean_identity),
    ("score Monte Carlo mean zero", check_score_mean_zero),
    ("score vs finite differences", check_score_finite_differences),
    ("bessel ratio properties", check_ratio_properties),
    ("fisher Hermitian PSD", check_fisher_hermitian_psd),
    ("em-gs == biased-gs when R==1", check_em_reduces_to_gs),
    ("sweep reproducible across workers", check_sweep_reproducible_across_workers),
)


def write_golden_csvs(csv_dir, jobs=1):
    """Write golden_snr.csv / golden_rsr.csv; returns their paths."""
    os.makedirs(csv_dir, exist_ok=True)
    snr_spec, rsr_spec = golden_specs(jobs=jobs)
    paths = []
    for name, spec in (("golden_snr.csv", snr_spec), ("golden_rsr.csv", rsr_spec)):
        path = os.path.join(csv_dir, name)
        write_csv(run_sweep(spec), path)
        paths.append(path)
    return paths


def run_selftest(csv_dir=None, golden_only=False, stream=None):
    """Run all checks (and optionally write the golden CSVs).

    Returns True when everything passed.
    """
    import sys
    out = stream or sys.stdout
    all_ok = True
    if not golden_only:
        for name, fn in CHECKS:
            ok, detail = fn()
            all_ok &= ok
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", file=out)
    if csv_dir is not None:
        for path in write_golden_csvs(csv_dir):
            print(f"[INFO] wrote {path}", file=out)
    return all_ok
