"""
Command-line entry point.

    bispec <subcommand> [options]

Subcommands: wigner, spectrum, simulate, bispectrum, estimate, asymptotics,
mc-clt, triples.  Values from ``--config`` (a flat TOML file) are overridden
by explicit flags.  Exit status: 0 success, 1 invalid input, 2 a numerical
divergence flag was raised.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__
from .asymptotics import asymptotic_report
from .bispectrum import BispectrumPlan, BispectrumTable, ell0_from_r, eta_weight, triple_array
from .estimator import fit_fnl
from .io import (RunManifest, config_hash, csv_text, dumps_json, load_alm, load_config, read_csv,
                 save_alm, write_csv, write_json)
from .montecarlo import ExperimentConfig, scaling_study
from .sphere import (RngStream, SphereGrid, alm_two_harmonic, alm_two_pixel, perturb_and_normalize,
                     sample_gaussian_alm)
from .spectrum import PowerSpectrumModel, c_gaussian, c_two
from .wigner import precompute_zero_table, save_zero_table, wigner3j

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2

CONFIG_KEYS = {f for f in ExperimentConfig.__dataclass_fields__} | {"out_dir", "lmax", "band", "seed", "stream"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _settings(args, keys):
    """Config-file values overlaid with explicitly given flags."""
    out = {}
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        unknown = set(cfg) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        out.update(cfg)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _model(s, band_limit=None):
    return PowerSpectrumModel(float(s.get("amplitude", 1.0)), float(s.get("alpha", 5.0)),
                              float(s.get("f_nl", 0.0)), band_limit)


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------

def cmd_wigner(args):
    if args.table_L is not None:
        if not args.cache:
            raise ValueError("--table-L needs --cache PATH")
        save_zero_table(precompute_zero_table(args.table_L), args.cache)
        if args.l1 is None:
            return EXIT_OK
    if args.l1 is None or args.l2 is None or args.l3 is None:
        raise ValueError("--l1, --l2 and --l3 are required")
    l1, l2, l3 = args.l1, args.l2, args.l3
    if min(l1, l2, l3) < 0:
        raise ValueError("multipoles must be non-negative")
    for m, l in ((args.m1, l1), (args.m2, l2)):
        if m is not None and abs(m) > l:
            raise ValueError(f"|m| = {abs(m)} exceeds l = {l}")
    rows = []
    for m1 in range(-l1, l1 + 1):
        if args.m1 is not None and m1 != args.m1:
            continue
        for m2 in range(-l2, l2 + 1):
            if args.m2 is not None and m2 != args.m2:
                continue
            m3 = -m1 - m2
            if abs(m3) <= l3:
                rows.append((l1, l2, l3, m1, m2, m3, wigner3j(l1, l2, l3, m1, m2, m3)))
    _emit(csv_text(["l1", "l2", "l3", "m1", "m2", "m3", "value"], rows), args.out)
    return EXIT_OK


def cmd_spectrum(args):
    s = _settings(args, ["amplitude", "alpha", "f_nl", "lmax", "band"])
    lmax = int(s.get("lmax", 32))
    band = int(s.get("band", 2 * lmax))
    model = _model(s, band)
    ell = np.arange(1, lmax + 1)
    cg = c_gaussian(ell, model)
    c2 = c_two(ell, model)
    rows = [(int(l), a, b, a + model.f_nl**2 * b) for l, a, b in zip(ell, cg, c2)]
    _emit(csv_text(["ell", "C_gauss", "C_two", "C_total"], rows), args.out)
    return EXIT_OK


def cmd_simulate(args):
    s = _settings(args, ["amplitude", "alpha", "f_nl", "band", "seed", "stream", "route", "band_factor"])
    band = int(s.get("band", 16))
    factor = int(s.get("band_factor", 2))
    model = _model(s, factor * band)
    seed, stream = int(s.get("seed", 0)), int(s.get("stream", 0))
    aG = sample_gaussian_alm(model, factor * band, RngStream(seed, stream))
    alm = aG.alm[: band + 1, : band + 1]
    if model.f_nl != 0:
        if s.get("route", "pixel") == "harmonic":
            a2 = alm_two_harmonic(aG, lmax_out=band)
        else:
            a2 = alm_two_pixel(aG, model, lmax_out=band, grid=SphereGrid.for_squared(aG.band_limit))
        alm = alm + model.f_nl * a2.alm
    if not args.out:
        raise ValueError("--out PATH is required for the binary coefficient file")
    save_alm(args.out, alm, seed, stream, model.f_nl)
    return EXIT_OK


def cmd_bispectrum(args):
    s = _settings(args, ["amplitude", "alpha", "r"])
    header, alms = load_alm(args.input)
    L = args.L if args.L is not None else header.band
    L0 = args.L0 if args.L0 is not None else ell0_from_r(L, float(s.get("r", 0.25)))
    model = _model(s)
    at = perturb_and_normalize(alms, None, model.with_fnl(0.0), L)
    t = triple_array(L, L0)
    if args.even_only:
        t = t[(t.sum(axis=1) % 2) == 0]
    table = BispectrumTable(t, eta_weight(t, model, args.eta_normalization), BispectrumPlan(t).apply(at))
    rows = [(int(a), int(b), int(c), "even" if p else "odd", e, v)
            for (a, b, c), p, e, v in zip(table.triples, table.parity_even, table.eta, table.b_hat)]
    _emit(csv_text(["l1", "l2", "l3", "parity", "eta", "b_hat"], rows), args.out)
    return EXIT_OK


def read_bispectrum_csv(path):
    header, rows = read_csv(path)
    need = ["l1", "l2", "l3", "parity", "eta", "b_hat"]
    if header != need:
        raise ValueError(f"bispectrum CSV header must be {','.join(need)}")
    t = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows], dtype=np.int64).reshape(-1, 3)
    for r, tt in zip(rows, t):
        if (r[3] == "even") != (tt.sum() % 2 == 0):
            raise ValueError(f"parity column disagrees with triple {tuple(tt)}")
    return BispectrumTable(t, [float(r[4]) for r in rows], [float(r[5]) for r in rows])


def cmd_estimate(args):
    report = fit_fnl(read_bispectrum_csv(args.input), exact_cum4=args.exact_cum4)
    _emit(dumps_json(report.to_dict()), args.out)
    return EXIT_OK


def cmd_asymptotics(args):
    s = _settings(args, ["alpha", "r", "amplitude"])
    rep = asymptotic_report(float(s.get("alpha", 5.0)), float(s.get("r", 0.25)), float(s.get("amplitude", 1.0)))
    _emit(dumps_json(rep.to_dict()), args.out)
    return EXIT_DIVERGED if rep.i_kappa_diverged else EXIT_OK


def cmd_triples(args):
    s = _settings(args, ["r"])
    L0 = args.L0 if args.L0 is not None else ell0_from_r(args.L, float(s.get("r", 0.25)))
    t = triple_array(args.L, L0)
    rows = [(int(a), int(b), int(c), "even" if (a + b + c) % 2 == 0 else "odd") for a, b, c in t]
    _emit(csv_text(["l1", "l2", "l3", "parity"], rows), args.out)
    return EXIT_OK


def cmd_mc_clt(args):
    s = _settings(args, ["replications", "base_seed", "f_nl", "route", "chunk_size"])
    if args.L_list:
        s["L_list"] = [int(x) for x in args.L_list.split(",")]
    out_dir = Path(args.out or s.pop("out_dir", "mc_out"))
    s.pop("out_dir", None)
    for key in ("lmax", "band", "seed", "stream"):
        s.pop(key, None)
    cfg = ExperimentConfig(**s)
    digest = config_hash(cfg.to_dict())
    manifest = RunManifest(__version__, digest)
    fits, rows, runs = scaling_study(cfg, n_threads=args.threads)

    out_dir.mkdir(parents=True, exist_ok=True)
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    written = []

    p = out_dir / "samples.csv"
    write_csv(p, ["L", "replication_index", "f_hat"],
              [(run.L, i, f) for run in runs for i, f in enumerate(run.f_hat)])
    written.append(p)

    p = out_dir / "cumulants.json"
    write_json(p, {"config_hash": digest, "config": cfg.to_dict(), "per_L": rows,
                   "failures": {str(run.L): run.failures for run in runs}})
    written.append(p)

    p = out_dir / "scaling_fits.csv"
    write_csv(p, ["quantity", "slope", "slope_se", "target", "n_points"],
              [(f.quantity, f.slope, f.slope_se, f.target, len(f.points)) for f in fits])
    written.append(p)

    for f in fits:
        p = plots / f"{f.quantity}_vs_L.csv"
        write_csv(p, ["x", "y"], f.points)
        written.append(p)
    p = plots / "ks_statistic_vs_L.csv"
    write_csv(p, ["x", "y"], [(row["L"], row["ks_statistic"]) for row in rows])
    written.append(p)
    for run in runs:
        z = np.sort((run.f_hat - run.f_nl) / math.sqrt(run.var_theory))
        q = norm.ppf((np.arange(z.size) + 0.5) / z.size)
        p = plots / f"qq_L{run.L}.csv"
        write_csv(p, ["x", "y"], zip(q, z))
        written.append(p)

    for path in written:
        manifest.add(path, out_dir)
    manifest.finish()
    write_json(out_dir / "manifest.json", manifest.to_dict())
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="bispec", description="Bispectrum f_NL estimation and CLT diagnostics")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def model_flags(p, f_nl=True):
        p.add_argument("--config")
        p.add_argument("--amplitude", type=float)
        p.add_argument("--alpha", type=float)
        if f_nl:
            p.add_argument("--f-nl", dest="f_nl", type=float)

    p = sub.add_parser("wigner", help="3j symbols as CSV, or the zero-order table cache")
    for name in ("l1", "l2", "l3", "m1", "m2"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--table-L", dest="table_L", type=int)
    p.add_argument("--cache")
    p.add_argument("--out")
    p.set_defaults(func=cmd_wigner)

    p = sub.add_parser("spectrum", help="C_gauss, C_two, C_total per multipole")
    model_flags(p)
    p.add_argument("--lmax", type=int)
    p.add_argument("--band", type=int, help="truncation band of the C_two sum (default 2*lmax)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate", help="simulate one perturbed coefficient set (binary)")
    model_flags(p)
    p.add_argument("--band", type=int)
    p.add_argument("--band-factor", dest="band_factor", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stream", type=int)
    p.add_argument("--route", choices=["pixel", "harmonic"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bispectrum", help="sample bispectrum table (CSV) of a coefficient file")
    model_flags(p, f_nl=False)
    p.add_argument("--input", required=True)
    p.add_argument("--L", type=int)
    p.add_argument("--L0", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--even-only", action="store_true")
    p.add_argument("--eta-normalization", choices=["gaunt", "cubic"], default="gaunt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bispectrum)

    p = sub.add_parser("estimate", help="f_NL estimate (JSON) from a bispectrum CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--exact-cum4", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("asymptotics", help="asymptotic constants (JSON)")
    p.add_argument("--config")
    p.add_argument("--alpha", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_asymptotics)

    p = sub.add_parser("mc-clt", help="Monte Carlo CLT study")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.add_argument("--f-nl", dest="f_nl", type=float)
    p.add_argument("--route", choices=["pixel", "harmonic"])
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--L-list", dest="L_list")
    p.set_defaults(func=cmd_mc_clt)

    p = sub.add_parser("triples", help="admissible multipole triples (CSV)")
    p.add_argument("--config")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--L0", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_triples)
    return parser


def dispatch(argv=None):
    """Run one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_INVALID
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, TypeError, OSError, KeyError, MemoryError) as exc:
        print(f"bispec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(dispatch())
