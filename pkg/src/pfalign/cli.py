"""Command-line entry point: ``pfalign <command> [options]``."""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as dataio
from .errors import PfaError
from .feedback import PFA_O, FeedbackAlgorithm, init_feedback
from .netcore import build_network, one_hot
from .rng import make_rng
from .runner import ExperimentConfig, load_preset, preset_names, train
from .theory import (
    align_product_feedback,
    brain_connectivity_sim,
    empirical_spectrum,
    prop2_check,
    prop3_sweep,
)

DEFAULT_LAMBDAS = (1.0, 0.5, 0.25, 0.1, 0.04)
ANGLE_TOLERANCE_DEG = 1.0
PROP2_TOLERANCE = 1e-10


def _write_json(path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_train(args):
    if args.preset:
        config = load_preset(args.preset)
    else:
        config = ExperimentConfig.from_toml(args.config)
    if args.seed is not None:
        config.seeds = [args.seed]
    if args.data_root:
        config.dataset["root"] = args.data_root
    out = Path(args.out) / config.name if args.out else None
    summary = train(config, out)
    print(
        f"{config.name}: test accuracy {summary.mean_accuracy:.4f} "
        f"+/- {summary.std_accuracy:.4f} over {len(summary.seeds)} seed(s)"
    )
    return 0


def cmd_verify_theory(args):
    out = Path(args.out)
    lambdas = args.lam or list(DEFAULT_LAMBDAS)
    sweep = prop3_sweep(args.n, args.n, lambdas, args.trials, args.seed)
    ok = True
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "prop3_sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["lambda", "predicted_deg", "simulated_deg", "simulated_std", "within_tol"],
            lineterminator="\n",
        )
        writer.writeheader()
        for row in sweep.rows():
            row["within_tol"] = abs(row["simulated_deg"] - row["predicted_deg"]) <= ANGLE_TOLERANCE_DEG
            ok &= row["within_tol"]
            writer.writerow(row)
            print(
                f"lambda={row['lambda']:g}: predicted {row['predicted_deg']:.2f} deg, "
                f"simulated {row['simulated_deg']:.2f} deg"
            )

    rng = make_rng(args.seed, "verify-prop2")
    net = build_network((16,), [{"units": 32}, {"units": 24}, {"units": 10}], rng)
    state = align_product_feedback(net, init_feedback(net, FeedbackAlgorithm(PFA_O, 4.0), args.seed))
    x = rng.standard_normal((32, 16))
    y = one_hot(rng.integers(0, 10, 32), 10)
    report = prop2_check(net, state, x, y)
    prop2_ok = max(report.max_abs_diff) < PROP2_TOLERANCE and report.decreased
    ok &= prop2_ok
    _write_json(
        out / "prop2_check.json",
        {
            "max_abs_diff": report.max_abs_diff,
            "loss_before": report.loss_before,
            "loss_after": report.loss_after,
            "loss_decreased": report.decreased,
            "passed": prop2_ok,
        },
    )
    print(f"PFA-o vs BP errors: max |diff| {max(report.max_abs_diff):.2e}; descent {report.decreased}")
    if not ok:
        print("theory verification failed", file=sys.stderr)
    return 0 if ok else 1


def cmd_mp_spectrum(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = empirical_spectrum(args.n, args.lam, args.seed, orthogonal=args.orthogonal)
    np.savetxt(out / "eigenvalues.csv", rep.eigenvalues, header="eigenvalue", comments="")
    _write_json(
        out / "spectrum.json",
        {
            "lambda": rep.lam,
            "n_next": rep.n_next,
            "n_bar": rep.n_bar,
            "lower_edge": rep.lower,
            "upper_edge": rep.upper,
            "min_eigenvalue": float(rep.eigenvalues[0]),
            "max_eigenvalue": float(rep.eigenvalues[-1]),
            "mean_eigenvalue": float(rep.eigenvalues.mean()),
            "ks_distance": rep.ks_distance,
            "hist_edges": rep.hist_edges.tolist(),
            "hist_density": rep.hist_density.tolist(),
            "theory_density": rep.theory_density.tolist(),
        },
    )
    print(
        f"eigenvalues in [{rep.eigenvalues[0]:.4f}, {rep.eigenvalues[-1]:.4f}], "
        f"MP edges [{rep.lower:.4f}, {rep.upper:.4f}], KS {rep.ks_distance:.4f}"
    )
    return 0


def cmd_brain_sim(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r, angle = brain_connectivity_sim(args.pairs, args.p_bidirectional, args.r_bidirectional, args.seed)
    _write_json(
        out / "brain_sim.json",
        {
            "pairs": args.pairs,
            "p_bidirectional": args.p_bidirectional,
            "r_bidirectional": args.r_bidirectional,
            "correlation": r,
            "angle_deg": angle,
        },
    )
    print(f"overall r = {r:.4f}, alignment angle = {angle:.2f} deg")
    return 0


def cmd_fetch_data(args):
    target = dataio.fetch(args.dataset, args.root)
    print(f"{args.dataset} ready in {target}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="pfalign", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment config")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="path to a TOML experiment config")
    src.add_argument("--preset", choices=preset_names(), help="built-in config")
    p.add_argument("--out", help="output directory (a subdirectory per experiment)")
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--data-root", help=f"dataset root (default ${dataio.DATA_ROOT_ENV})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify-theory", help="path-angle sweep and PFA-o/BP equivalence")
    p.add_argument("--lambda", dest="lam", type=float, action="append")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("mp-spectrum", help="eigenvalues of B^T B vs Marchenko-Pastur")
    p.add_argument("--lambda", dest="lam", type=float, default=0.25)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--orthogonal", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_mp_spectrum)

    p = sub.add_parser("brain-sim", help="weight correlation under sparse reciprocity")
    p.add_argument("--pairs", type=int, default=1_000_000)
    p.add_argument("--p-bidirectional", type=float, default=0.31)
    p.add_argument("--r-bidirectional", type=float, default=0.36)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_brain_sim)

    p = sub.add_parser("fetch-data", help="download MNIST or CIFAR-10")
    p.add_argument("--dataset", choices=("mnist", "cifar10"), required=True)
    p.add_argument("--root", help=f"dataset root (default ${dataio.DATA_ROOT_ENV})")
    p.set_defaults(func=cmd_fetch_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except PfaError as exc:
        print(f"pfalign {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
