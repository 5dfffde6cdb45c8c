"""Command-line front end.

Subcommands: sweep (Monte Carlo curves to CSV), crlb (bound-only rows),
detect (run one detector on an instance file), selftest (invariant
suite).  Exit codes: 0 success, 2 configuration error, 3 numerical
failure (including failed selftest checks).
"""

import argparse
import sys

import numpy as np

from .detectors import (DetectorConfig, biased_gs, em_gs, exhaustive_search,
                        zf_known_phase)
from .exceptions import ConfigError, NumericalError
from .harness import (DETECTOR_NAMES, SweepSpec, rows_to_csv, run_sweep,
                      write_csv)
from .model import make_constellation
from .scenario import load_instance
from .selftest import run_selftest

_MODS = {"4qam": 4, "16qam": 16, "64qam": 64}


def _parse_values(text):
    """Either 'start:step:stop' (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad range {text!r}; expected start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("range step must be positive")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        if count < 1:
            raise ConfigError(f"empty range {text!r}")
        return tuple(start + i * step for i in range(count))
    return tuple(float(p) for p in text.split(",") if p.strip() != "")


def _add_common(p):
    p.add_argument("--n", type=int, required=True, help="receive elements")
    p.add_argument("--k", type=int, required=True, help="users")
    p.add_argument("--mod", choices=sorted(_MODS), default="4qam")
    p.add_argument("--trials", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    p.add_argument("--mode", choices=("normalized", "physical"), default="normalized")
    p.add_argument("--jobs", type=int, default=1)


def _build_parser():
    ap = argparse.ArgumentParser(prog="atomimo",
                                 description="Magnitude-only multi-user MIMO "
                                             "detection simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="run a Monte Carlo sweep")
    sw.add_argument("--axis", choices=("snr", "rsr"), required=True)
    sw.add_argument("--values", required=True,
                    help="axis values: start:step:stop or comma list")
    sw.add_argument("--snr-db", type=float, default=0.0)
    sw.add_argument("--rsr-db", type=float, default=12.0)
    sw.add_argument("--detectors", default="biased-gs,em-gs,zf-known",
                    help=f"comma list from {','.join(DETECTOR_NAMES)}")
    sw.add_argument("--adaptive-ber", action="store_true",
                    help="run until >=200 bit errors per detector (or --max-trials)")
    sw.add_argument("--min-bit-errors", type=int, default=200)
    sw.add_argument("--max-trials", type=int, default=1_000_000)
    sw.add_argument("--crlb-trials", type=int, default=512)
    sw.add_argument("--t0", type=int, default=50)
    _add_common(sw)

    cr = sub.add_parser("crlb", help="normalized bound at one operating point")
    cr.add_argument("--snr-db", type=float, required=True)
    cr.add_argument("--rsr-db", type=float, required=True)
    _add_common(cr)

    de = sub.add_parser("detect", help="run one detector on an instance file")
    de.add_argument("--input", required=True, help="JSON instance file")
    de.add_argument("--detector", required=True,
                    choices=("biased-gs", "em-gs", "zf-known",
                             "exhaustive-ls", "exhaustive-ml"))
    de.add_argument("--sigma2", type=float, default=None,
                    help="noise variance (overrides the instance file)")
    de.add_argument("--t0", type=int, default=50)
    de.add_argument("--mod", choices=sorted(_MODS), default=None,
                    help="constellation (overrides the instance file)")

    st = sub.add_parser("selftest", help="run the invariant suite")
    st.add_argument("--csv-dir", default=None,
                    help="also write golden_snr.csv / golden_rsr.csv here")
    st.add_argument("--golden-only", action="store_true",
                    help="only write the golden CSVs, skip the checks")
    return ap


def _cmd_sweep(args):
    spec = SweepSpec(
        axis=f"{args.axis}_db",
        values=_parse_values(args.values),
        n=args.n, k=args.k, constellation_order=_MODS[args.mod],
        snr_db=args.snr_db, rsr_db=args.rsr_db, trials=args.trials,
        detectors=tuple(d.strip() for d in args.detectors.split(",") if d.strip()),
        seed=args.seed, mode=args.mode, adaptive_ber=args.adaptive_ber,
        min_bit_errors=args.min_bit_errors, max_trials=args.max_trials,
        crlb_trials=args.crlb_trials, t0=args.t0, jobs=args.jobs)
    rows = run_sweep(spec)
    if args.out:
        write_csv(rows, args.out)
    else:
        sys.stdout.write(rows_to_csv(rows))
    return 0


def _cmd_crlb(args):
    spec = SweepSpec(
        axis="snr_db", values=(args.snr_db,), n=args.n, k=args.k,
        constellation_order=_MODS[args.mod], rsr_db=args.rsr_db,
        trials=args.trials, detectors=("crlb",), seed=args.seed,
        mode=args.mode, crlb_trials=args.trials, jobs=args.jobs)
    rows = run_sweep(spec)
    if args.out:
        write_csv(rows, args.out)
    else:
        sys.stdout.write(rows_to_csv(rows))
    return 0


def _fmt_complex_vec(v):
    return "[" + ", ".join(f"{x.real:+.6f}{x.imag:+.6f}j" for x in v) + "]"


def _cmd_detect(args):
    sc, file_order = load_instance(args.input)
    order = _MODS[args.mod] if args.mod else (file_order or 4)
    constellation = make_constellation(order)
    sigma2 = args.sigma2 if args.sigma2 is not None else sc.sigma2
    cfg = DetectorConfig(t0=args.t0)
    name = args.detector
    if name == "biased-gs":
        res = biased_gs(sc.z, sc.A, sc.b, constellation, cfg)
    elif name == "em-gs":
        if sigma2 <= 0:
            raise ConfigError("em-gs needs --sigma2 > 0 (or in the instance file)")
        res = em_gs(sc.z, sc.A, sc.b, sigma2, constellation, cfg)
    elif name == "zf-known":
        if sc.y_oracle is None:
            raise ConfigError("zf-known needs the y_oracle field in the instance")
        res = zf_known_phase(sc.y_oracle, sc.A, sc.b, constellation)
    else:
        if name == "exhaustive-ml" and sigma2 <= 0:
            raise ConfigError("exhaustive-ml needs --sigma2 > 0")
        res = exhaustive_search(sc.z, sc.A, sc.b, sigma2, constellation,
                                criterion=name.split("-")[1])
    print(f"detector:   {name} ({order}-QAM, t0={res.iterations_run})")
    print(f"s_soft:     {_fmt_complex_vec(res.s_soft)}")
    print(f"s_hard:     {_fmt_complex_vec(res.s_hard)}")
    print(f"bits:       {''.join(str(b) for b in res.bits)}")
    trace = ", ".join(f"{v:.6g}" for v in res.objective_trace)
    print(f"objective:  [{trace}]")
    if sc.s_true is not None:
        err = float(np.sum(np.abs(sc.s_true - res.s_soft) ** 2))
        print(f"sq_error:   {err:.6g}")
    return 0


def _cmd_selftest(args):
    ok = run_selftest(csv_dir=args.csv_dir, golden_only=args.golden_only)
    return 0 if ok else 3


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "crlb":
            return _cmd_crlb(args)
        if args.command == "detect":
            return _cmd_detect(args)
        return _cmd_selftest(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
