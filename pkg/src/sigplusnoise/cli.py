"""Command-line entry point: ``sigplusnoise <subcommand> [options]``."""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .clustercount import CRITERIA, Criterion, EigenvalueSeq, default_w
from .exceptions import SigPlusNoiseError
from .harness import (ScenarioConfig, limits_report, matching_setup, run_bbp_demo,
                      run_eigen_match, run_selection, write_csv)
from .speclust import SpectralMixtureClustering


def _common(parser):
    parser.add_argument("--config", type=Path, help="scenario file (TOML)")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    parser.add_argument("--reps", type=int, help="number of replications")
    parser.add_argument("--threads", type=int, help="worker threads")


def _scenario(args):
    if args.config is None:
        raise SigPlusNoiseError("this subcommand needs --config")
    config = ScenarioConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.threads is not None:
        overrides["threads"] = args.threads
    return replace(config, **overrides) if overrides else config


def cmd_limits(args):
    report = limits_report(_scenario(args))
    text = "\n".join(report.lines())
    print(text)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "limits.txt").write_text(text + "\n")


def cmd_simulate(args):
    config = _scenario(args)
    run = run_selection(config, strict=not args.lenient)
    run.table.write_csv(args.out / "selection.csv")
    run.write_replications(args.out / "replications.csv")
    print(f"scenario {run.scenario_hash}: {run.table.n_reps} replications, "
          f"declared K = {run.table.declared_K}")
    for name, fm, fs, fp in run.table.rows():
        print(f"{name:>5}  F-={fm:6.2f}  F*={fs:6.2f}  F+={fp:6.2f}")
    for rep, seed, err in run.failures:
        print(f"replication {rep} (seed {seed}) failed: {err}", file=sys.stderr)


def cmd_match(args):
    seed = 0 if args.seed is None else args.seed
    reps = 500 if args.reps is None else args.reps
    threads = 1 if args.threads is None else args.threads
    A, Sigma = matching_setup(args.p, args.n, seed)
    rows = []
    for kind in ("signal_plus_noise", "equivalent_wishart"):
        report = run_eigen_match(A, Sigma, kind, reps, seed, threads=threads)
        rows.extend((kind, *row) for row in report.rows())
        for name, mean, sd in report.statistics:
            print(f"{kind:>18}  {name:<10} mean={mean:.4f} sd={sd:.4f}")
    write_csv(args.out / "eigen_match.csv", ("model", "statistic", "mean", "sd", "n_reps"), rows)


def cmd_scree(args):
    seed = 0 if args.seed is None else args.seed
    demo = run_bbp_demo(args.d, args.ell, args.g, args.p, args.n, seed)
    demo.write_csv(args.out)
    print("top eigenvalues:", np.round(demo.eigenvalues[:4], 4).tolist())
    for label, gamma, kind, limit in demo.limits:
        print(f"{label}: gamma={gamma:.4f} ({kind}) -> limit {limit:.4f}")


def _read_numbers(path):
    """Numeric CSV, skipping a header row if the first line is not numeric."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",") if v.strip()]
        skip = 0
    except ValueError:
        skip = 1
    return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)


def cmd_estimate(args):
    values = _read_numbers(args.eigenvalues).ravel()
    p = args.p if args.p is not None else values.size
    lam = EigenvalueSeq(values, p, args.n)
    pseudo = p > args.n
    kinds = ("pEDA", "pEDB") if pseudo else ("EDA", "EDB")
    m = args.n if pseudo else p
    w = min(args.w if args.w is not None else default_w(args.n), m - 2)
    rows = []
    for name in kinds:
        result = CRITERIA[Criterion(name)](lam, w)
        rows.append((name, result.k_hat, w, *np.round(result.values, 10)))
        print(f"{name}: K_hat = {result.k_hat} (w = {w})")
    header = ("criterion", "k_hat", "w", *(f"value_k{k}" for k in range(1, w + 1)))
    write_csv(args.out / "estimate.csv", header, rows)


def cmd_cluster(args):
    X = _read_numbers(args.data)
    model = SpectralMixtureClustering(n_clusters=args.k, criterion=args.criterion,
                                      centered=args.centered, random_state=args.seed)
    labels = model.fit_predict(X)
    write_csv(args.out / "labels.csv", ("index", "label"), enumerate(labels.tolist()))
    print(f"K = {model.n_clusters_}; cluster sizes {np.bincount(labels).tolist()}")


def build_parser():
    parser = argparse.ArgumentParser(prog="sigplusnoise",
                                     description="Spectral limits and cluster-count tools "
                                                 "for signal-plus-noise matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("limits", help="population-side report for a scenario")
    _common(sp)
    sp.set_defaults(func=cmd_limits)

    sp = sub.add_parser("simulate", help="selection frequencies of the count criteria")
    _common(sp)
    sp.add_argument("--lenient", action="store_true",
                    help="record failing replications instead of aborting")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("match", help="eigenvalue/eigenvector matching experiment")
    _common(sp)
    sp.add_argument("--p", type=int, default=100)
    sp.add_argument("--n", type=int, default=200)
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("scree", help="spiked-covariance scree data and predicted limits")
    _common(sp)
    sp.add_argument("--d", type=float, default=2.0)
    sp.add_argument("--ell", type=float, default=2.0)
    sp.add_argument("--g", default="e1", help="e1, e2, or the first coordinate of g")
    sp.add_argument("--p", type=int, default=1000)
    sp.add_argument("--n", type=int, default=2000)
    sp.set_defaults(func=cmd_scree)

    sp = sub.add_parser("estimate", help="run the criteria on an eigenvalue CSV")
    _common(sp)
    sp.add_argument("eigenvalues", type=Path, help="one eigenvalue per line, descending")
    sp.add_argument("--n", type=int, required=True, help="sample size")
    sp.add_argument("--p", type=int, help="dimension (defaults to the number of values)")
    sp.add_argument("--w", type=int, help="largest candidate count")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("cluster", help="spectral clustering of a data CSV (rows = samples)")
    _common(sp)
    sp.add_argument("data", type=Path)
    sp.add_argument("--k", type=int, help="number of clusters (estimated when omitted)")
    sp.add_argument("--criterion", choices=("eda", "edb"), default="edb")
    sp.add_argument("--centered", action="store_true")
    sp.set_defaults(func=cmd_cluster)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (SigPlusNoiseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
