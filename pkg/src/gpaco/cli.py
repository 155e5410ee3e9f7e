"""Command line: theory checks, curve export, toy training and grad-norm probe.

Exit codes: 0 success, 1 usage or validation error, 2 verification failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import theory

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "GPACO_OUTPUT_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / name


def cmd_verify_theory(args) -> int:
    if not args.k:
        raise UsageError("--k needs at least one positive count")
    if any(k < 1 for k in args.k) or not 0 < args.alpha < 1:
        raise UsageError("K values must be >= 1 and alpha in (0, 1)")
    rows, worst, failed = [], 0.0, []
    for k in args.k:
        m = args.m_factor * k
        sc = theory.optimal_supcon_distribution(k, m, tol=args.solver_tol)
        pc = theory.optimal_paco_distribution(args.alpha, k, m, tol=args.solver_tol)
        center, pair = theory.paco_optimum(args.alpha, k)
        checks = [
            ("supcon_pair", 1.0 / k, sc.probabilities[:k], sc.converged),
            ("paco_center", center, pc.probabilities[:1], pc.converged),
            ("paco_pair", pair, pc.probabilities[1:k + 1], pc.converged),
        ]
        for name, closed, got, conv in checks:
            err = float(np.max(np.abs(got - closed)))
            worst = max(worst, err)
            if not conv:
                failed.append(f"{name} K={k}: solver did not converge")
            rows.append((k, name, closed, float(np.mean(got)), err))
    print(f"{'K':>4} {'quantity':<12} {'closed_form':>12} {'oracle':>12} {'max_abs_err':>12}")
    for k, name, closed, got, err in rows:
        print(f"{k:>4} {name:<12} {closed:>12.6f} {got:>12.6f} {err:>12.3e}")
    print(f"max error {worst:.3e} (tol {args.tol:.1e})")
    if failed:
        for msg in failed:
            print(msg, file=sys.stderr)
        return EXIT_VERIFY
    if not worst < args.tol:
        print(f"verification failed: max error {worst:.3e} >= tol {args.tol:.1e}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_curve(args) -> int:
    if args.points < 3:
        raise UsageError("--points must be >= 3")
    if args.which == "l_extra":
        curve = theory.l_extra_curve(args.alpha, args.k_star, args.points)
    else:
        curve = theory.eq8_curve(args.alpha, args.k_star, args.points)
    out = Path(args.out) if args.out else _default_out(f"{args.which}_curve.csv")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        theory.write_curve_csv(curve, out)
    except OSError as exc:
        print(f"cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.which == "l_extra":
        print(f"grid argmin {theory.curve_argmin(curve):.6f}")
        print(f"analytic argmin {theory.l_extra_argmin(args.alpha, args.k_star):.6f}")
    print(f"wrote {len(curve)} rows to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .synth import artifacts
    from .synth.data import dataset_to_json, make_longtailed_gaussians
    from .synth.train import TrainingDivergedError, fit

    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run = artifacts.parse_run_config(doc)
    except artifacts.ConfigError as exc:
        for p in exc.problems:
            print(f"invalid config: {p}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out) if args.out else _default_out("train")
    out.mkdir(parents=True, exist_ok=True)
    names = {"metrics": "metrics.csv", "summary": "summary.json", "dataset": "dataset.json", "state": "state.npz"}
    paths = {k: str(out / v) for k, v in names.items()}
    # outputs are recorded relative to the run directory so reruns are byte-identical
    artifacts.write_manifest(out / "manifest.json", "train", run.to_dict(), run.train.seed,
                             {"config": doc}, names)

    train, test = make_longtailed_gaussians(run.dataset)
    dataset_to_json(run.dataset, train, paths["dataset"])
    try:
        with artifacts.MetricsWriter(paths["metrics"]) as writer:
            net, result = fit(train, test, run.train, run.encoder, on_epoch=writer)
    except TrainingDivergedError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    artifacts.save_state(paths["state"], net, result.state, run, train.counts)
    summary = {
        "variant": run.train.loss.variant,
        "epochs": run.train.epochs,
        "seed": run.train.seed,
        "counts": train.counts.tolist(),
        "initial_loss": result.initial_loss,
        "final_loss": result.history[-1].loss,
        **{k: v for k, v in result.final.items()},
    }
    artifacts.write_json(paths["summary"], summary)
    print(json.dumps({k: summary[k] for k in ("acc_all", "acc_many", "acc_medium", "acc_few")}))
    return EXIT_OK


def cmd_grad_norms(args) -> int:
    from .synth import artifacts
    from .synth.data import dataset_from_json
    from .synth.encoder import Network
    from .synth.evaluate import classifier_grad_norm_probe, decile_ratio
    from .synth.train import TrainState

    try:
        loaded = artifacts.load_state(args.state)
        _, train, _ = dataset_from_json(args.data)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot load inputs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    net = Network(loaded.run.encoder)
    state = TrainState(loaded.params, loaded.centers, None, None, None, None, None)
    _, counts, norms = classifier_grad_norm_probe(
        net, state, train, train.counts, tau=loaded.meta["classifier_tau"],
        rebalanced=loaded.meta["classifier_rebalanced"])
    out = Path(args.out) if args.out else _default_out("grad_norms.csv")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(artifacts.GRAD_NORM_HEADER)
            for rank, (c, g) in enumerate(zip(counts, norms)):
                w.writerow([rank, int(c), repr(float(g))])
    except OSError as exc:
        print(f"cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"decile max/min ratio {decile_ratio(norms):.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gpaco", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify-theory", help="compare simplex solvers with the closed-form optima")
    v.add_argument("--alpha", type=float, default=0.05)
    v.add_argument("--k", type=int, nargs="*", default=[1, 2, 5, 8, 50])
    v.add_argument("--m-factor", type=int, default=4, help="contrast slots per positive (M = factor * K)")
    v.add_argument("--tol", type=float, default=1e-6, help="max allowed |oracle - closed form|")
    v.add_argument("--solver-tol", type=float, default=1e-11, help="KKT tolerance of the solver")
    v.set_defaults(func=cmd_verify_theory)

    c = sub.add_parser("curve", help="export the L_extra or fixed-P_sup SupCon curve as CSV")
    c.add_argument("which", choices=["l_extra", "eq8"])
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--k-star", type=float, default=8.192)
    c.add_argument("--points", type=int, default=999)
    c.add_argument("--out")
    c.set_defaults(func=cmd_curve)

    t = sub.add_parser("train", help="train on a synthetic long-tailed dataset")
    t.add_argument("config")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("grad-norms", help="per-class classifier gradient norms of a trained state")
    g.add_argument("state")
    g.add_argument("data")
    g.add_argument("--out")
    g.set_defaults(func=cmd_grad_norms)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gpaco: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
