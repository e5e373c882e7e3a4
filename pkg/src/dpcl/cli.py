"""Command-line harness: run, attack, curve, calibrate, inspect."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .attack import GameConfig, run_game
from .datasets import load_embeddings, synth_mixture
from .errors import DpclError
from .harness import config_from_mapping, parse_config_text, run_experiment
from .label_space import LabelPolicy, class_loss_curve
from .mechanisms import (
    PrivacyBudget,
    calibrate_gaussian,
    classical_gaussian_sigma,
    gaussian_tradeoff_delta,
)


def _parse_epsilons(raw: str) -> list[float]:
    return [math.inf if p.strip().lower() == "inf" else float(p) for p in raw.split(",")]


def _cmd_run(args: argparse.Namespace) -> int:
    kv: dict[str, str] = {}
    if args.config:
        kv.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    for override in args.set or []:
        if "=" not in override:
            raise SystemExit(f"--set expects key=value, got {override!r}")
        key, _, value = override.partition("=")
        kv[key.strip()] = value.strip()
    if args.output_dir:
        kv["output_dir"] = args.output_dir
    cfg = config_from_mapping(kv)
    result = run_experiment(cfg)
    primary = result.primary
    print(f"wrote {result.output_dir / 'results.csv'} and {result.output_dir / 'summary.json'}")
    print(
        f"method={cfg.method} epsilon={primary.epsilon} "
        f"final_avg_acc(median repeat)={primary.final_average_accuracy:.4f}"
    )
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    data, universe = synth_mixture(
        classes=args.base_classes, per_class=args.per_class, dim=args.dim, separation=8.0, seed=args.seed
    )
    challenge_label = universe.size  # novel: one past the base universe
    if args.policy == "data":
        policy = LabelPolicy.from_data()
    elif args.policy == "prior":
        policy = LabelPolicy.from_prior(range(universe.size + 1))  # prior contains the novel label
    else:
        policy = LabelPolicy.learned(args.tau, args.release_epsilon)
    rng = np.random.default_rng(args.seed)
    challenge = rng.normal(size=args.dim).astype(np.float32)
    challenge /= np.linalg.norm(challenge)
    result = run_game(
        GameConfig(
            base_data=data,
            challenge_vector=challenge,
            challenge_label=challenge_label,
            policy=policy,
            trials=args.trials,
            seed=args.seed,
        )
    )
    report = {
        "policy": args.policy,
        "trials": result.trials,
        "advantage": result.advantage,
        "ci_low": result.ci_low,
        "ci_high": result.ci_high,
        "release_rate_world1": result.release_rate_world1,
        "non_private_policy": args.policy == "data",
    }
    print(json.dumps(report, indent=2))
    return 0


def _cmd_curve(args: argparse.Namespace) -> int:
    rows = class_loss_curve(_parse_epsilons(args.epsilon), args.delta, args.k_max)
    out = sys.stdout
    print("epsilon,k,drop_probability_lower_bound", file=out)
    for eps, k, bound in rows:
        print(f"{eps},{k},{bound:.12g}", file=out)
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    print("epsilon,delta,sigma,recovered_delta,abs_error,classical_sigma")
    for eps in _parse_epsilons(args.epsilon):
        for delta in [float(d) for d in args.delta.split(",")]:
            budget = PrivacyBudget(eps, delta)
            params = calibrate_gaussian(budget, args.sensitivity)
            recovered = gaussian_tradeoff_delta(eps, params.sigma, args.sensitivity)
            classical = classical_gaussian_sigma(budget, args.sensitivity)
            print(
                f"{eps},{delta},{params.sigma:.12g},{recovered:.12g},"
                f"{abs(recovered - delta):.3g},{classical:.12g}"
            )
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    dataset, universe = load_embeddings(args.path)
    labels, counts = np.unique(dataset.labels, return_counts=True)
    report = {
        "path": str(args.path),
        "dim": dataset.dim,
        "records": len(dataset),
        "universe_size": universe.size,
        "dummy_count": universe.dummy_count,
        "labels_present": int(labels.size),
        "per_label_counts": {universe.names[int(l)]: int(c) for l, c in zip(labels[:20], counts[:20])},
    }
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a key=value config file")
    p_run.add_argument("--config", help="config file (flat key=value lines)")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p_run.add_argument("--output-dir", help="where to write results")
    p_run.set_defaults(func=_cmd_run)

    p_attack = sub.add_parser("attack", help="play the label-space adjacency game")
    p_attack.add_argument("--policy", choices=["data", "prior", "learned"], required=True)
    p_attack.add_argument("--trials", type=int, default=1000)
    p_attack.add_argument("--tau", type=float, default=2.0)
    p_attack.add_argument("--release-epsilon", type=float, default=1.0)
    p_attack.add_argument("--base-classes", type=int, default=2)
    p_attack.add_argument("--per-class", type=int, default=5)
    p_attack.add_argument("--dim", type=int, default=8)
    p_attack.add_argument("--seed", type=int, default=0)
    p_attack.set_defaults(func=_cmd_attack)

    p_curve = sub.add_parser("curve", help="class-drop lower-bound table")
    p_curve.add_argument("--epsilon", default="0.5,1.0,2.0", help="comma-separated epsilons")
    p_curve.add_argument("--delta", type=float, default=1e-7)
    p_curve.add_argument("--k-max", type=int, default=32)
    p_curve.set_defaults(func=_cmd_curve)

    p_cal = sub.add_parser("calibrate", help="Gaussian calibration round-trip report")
    p_cal.add_argument("--epsilon", default="0.5,1,8")
    p_cal.add_argument("--delta", default="1e-5,1e-7")
    p_cal.add_argument("--sensitivity", type=float, default=1.0)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_inspect = sub.add_parser("inspect", help="summarise an EMB1 file")
    p_inspect.add_argument("path")
    p_inspect.set_defaults(func=_cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DpclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
