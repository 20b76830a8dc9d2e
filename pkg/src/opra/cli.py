"""Command-line interface: ``opra assess | sweep | make-bandit | fixtures``.

Exit codes: 0 success, 2 invalid configuration or input, 3 estimation error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .assessment import BehaviorSource, ConfigError, ModelConfig, OpraConfig, run_opra
from .core import AbsoluteContinuityError, UnknownContextError
from .estimators import EstimatorKind
from .io import (
    FormatError,
    build_manifest,
    dumps_json,
    read_classification_csv,
    read_dataset_csv,
    read_distortion_csv,
    read_policy_json,
    write_dataset_csv,
    write_manifest,
    write_policy_json,
)
from .policy import MixturePolicy, estimate_behavior_tabular
from .risk import parse_risks
from .simulation import (
    FIXTURES,
    SweepConfig,
    classification_to_bandit,
    fixture,
    population_env,
    run_sweep,
    sample_dataset,
    train_softmax_classifier,
)

EXIT_CONFIG = 2
EXIT_ESTIMATION = 3

_DEFAULT_BAND = {"is-clip": "hoeffding", "is": "hoeffding", "m-dr": "dr", "dr": "dr"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _csv_list(text: str, cast=str) -> list:
    try:
        return [cast(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def cmd_assess(args) -> int:
    data_path = Path(args.data)
    target = read_policy_json(args.target)
    behavior = read_policy_json(args.behavior) if args.behavior else None
    dataset = read_dataset_csv(data_path, args.reward_bound, target.n_actions)
    risks = parse_risks(args.risks, loader=read_distortion_csv)
    estimator = EstimatorKind(args.estimator)
    band = args.band
    if band is None:
        band = _DEFAULT_BAND.get(estimator.value)
    elif band == "none":
        band = None
    if args.estimate_behavior:
        source = BehaviorSource.ESTIMATED_TABULAR
    elif behavior is not None:
        source = BehaviorSource.KNOWN_POLICY
    elif dataset.propensities is not None:
        source = BehaviorSource.LOGGED_PROPENSITIES
    else:
        raise ConfigError("behavior source unresolved: no propensity column and no --behavior file")
    config = OpraConfig(
        estimator,
        band,
        args.delta,
        risks,
        model_config=ModelConfig(args.model) if estimator.value in ("dm", "dr", "m-dr") else None,
        crossfit=not args.no_crossfit,
        behavior_source=source,
        eps_beta=args.eps_beta,
        seed=args.seed,
    )
    estimated = None
    if source is BehaviorSource.ESTIMATED_TABULAR and args.behavior_data:
        aux = read_dataset_csv(args.behavior_data, args.reward_bound, target.n_actions)
        estimated = estimate_behavior_tabular(aux)
    try:
        report = run_opra(dataset, target, config, behavior=behavior, estimated_behavior=estimated)
    except (ConfigError, AbsoluteContinuityError, UnknownContextError):
        raise
    except ValueError as exc:
        raise CliError(f"estimation error: {exc}", EXIT_ESTIMATION) from None

    out = Path(args.out) if args.out else data_path.with_name(data_path.stem + ".report.json")
    table = out.with_suffix(".txt")
    manifest = _manifest_path(out)
    report.metadata["manifest"] = manifest.name
    out.write_text(report.to_json(), encoding="utf-8")
    table.write_text(report.to_table(), encoding="utf-8")
    inputs = [p for p in (args.data, args.target, args.behavior, args.behavior_data) if p]
    write_manifest(build_manifest("assess", config.to_dict(), args.seed, inputs, [out, table]), manifest)
    sys.stdout.write(report.to_table())
    return 0


def cmd_sweep(args) -> int:
    risks = parse_risks(args.risks, loader=read_distortion_csv)
    if args.env:
        env, target, behavior = fixture(args.env)
        inputs = []
    elif args.data:
        features, labels = read_classification_csv(args.data, args.label)
        if len(set(labels.tolist())) < 2:
            raise ConfigError("need at least two distinct classes")
        env = population_env(features, labels)
        target = train_softmax_classifier(features, labels, env.n_actions)
        behavior = None if args.alpha_grid else MixturePolicy(target, args.alpha)
        inputs = [args.data]
    else:
        raise ConfigError("sweep needs --env or --data")
    try:
        sweep = SweepConfig(
            n_grid=args.ns,
            replications=args.reps,
            seed=args.seed,
            estimators=args.estimators,
            alpha_grid=args.alpha_grid,
            model=args.model,
            crossfit=not args.no_crossfit,
            risks=risks,
            record_runtime=args.timing,
            workers=int(os.environ.get("OPRA_THREADS", "1") or 1),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = run_sweep(env, target, behavior, sweep, args.delta)
    out = Path(args.out)
    result.to_csv(out)
    config = {
        "env": args.env,
        "data": args.data,
        "ns": list(sweep.n_grid),
        "reps": sweep.replications,
        "estimators": list(sweep.estimators),
        "alpha_grid": sweep.alpha_grid,
        "alpha": None if args.alpha_grid else args.alpha,
        "delta": args.delta,
        "risks": [r.name for r in risks],
        "model": sweep.model,
        "crossfit": sweep.crossfit,
    }
    write_manifest(build_manifest("sweep", config, args.seed, inputs, [out]), _manifest_path(out))
    print(f"wrote {len(result.rows)} rows to {out}")
    return 0


def cmd_make_bandit(args) -> int:
    features, labels = read_classification_csv(args.data, args.label)
    data, target, behavior = classification_to_bandit(features, labels, args.alpha, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "dataset.csv", out_dir / "target.json", out_dir / "behavior.json"]
    write_dataset_csv(data, paths[0])
    write_policy_json(target, paths[1])
    write_policy_json(behavior, paths[2])
    config = {"alpha": args.alpha, "label": args.label}
    manifest = build_manifest("make-bandit", config, args.seed, [args.data], paths)
    write_manifest(manifest, out_dir / "manifest.json")
    print(f"wrote {data.n} logged rounds to {paths[0]}")
    return 0


def cmd_fixtures(args) -> int:
    if not args.export:
        for name in sorted(FIXTURES):
            env, target, behavior = fixture(name)
            doc = (FIXTURES[name].__doc__ or "").strip().splitlines()[0]
            print(f"{name}: {env.n_contexts} contexts, {env.n_actions} actions. {doc}")
        return 0
    env, target, behavior = fixture(args.export)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "data.csv", out_dir / "target.json", out_dir / "behavior.json"]
    write_dataset_csv(sample_dataset(env, behavior, args.n, args.seed), paths[0])
    write_policy_json(target, paths[1])
    write_policy_json(behavior, paths[2])
    config = {"fixture": args.export, "n": args.n}
    write_manifest(build_manifest("fixtures", config, args.seed, [], paths), out_dir / "manifest.json")
    print(f"wrote {args.export} sample of {args.n} rounds to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opra", description="Off-policy risk assessment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="estimate risks of a target policy from logged data")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--target", required=True, help="target policy JSON")
    p.add_argument("--behavior", help="behavior policy JSON")
    p.add_argument("--estimator", default="is-clip", choices=[k.value for k in EstimatorKind])
    p.add_argument("--band", choices=["hoeffding", "bernstein", "dr", "dkw", "none"])
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--risks", default="mean,cvar:0.5,variance")
    p.add_argument("--reward-bound", type=float, default=1.0)
    p.add_argument("--model", default="tabular", choices=["tabular", "logistic"])
    p.add_argument("--no-crossfit", action="store_true")
    p.add_argument("--estimate-behavior", action="store_true", help="fit a tabular behavior policy")
    p.add_argument("--behavior-data", help="auxiliary CSV for the behavior estimate")
    p.add_argument("--eps-beta", type=float, help="sup-norm error bound of the behavior estimate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report JSON path (table written alongside as .txt)")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("sweep", help="Monte Carlo error sweep over sample sizes")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--env", choices=sorted(FIXTURES))
    src.add_argument("--data", help="classification CSV (features f0.. and a label column)")
    p.add_argument("--label", default="label")
    p.add_argument("--ns", type=lambda s: _csv_list(s, int), required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--estimators", type=_csv_list, default=["is-clip", "wis", "dm", "dr"])
    p.add_argument("--alpha", type=float, default=0.1, help="behavior mixture weight for --data")
    p.add_argument("--alpha-grid", type=lambda s: _csv_list(s, float))
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--risks", default="mean,cvar:0.5,variance")
    p.add_argument("--model", default="tabular")
    p.add_argument("--no-crossfit", action="store_true")
    p.add_argument("--timing", action="store_true", help="record runtime_ms (breaks byte-identical reruns)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("make-bandit", help="turn a classification CSV into logged bandit data")
    p.add_argument("--data", required=True)
    p.add_argument("--label", default="label")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_make_bandit)

    p = sub.add_parser("fixtures", help="list or export the built-in environments")
    p.add_argument("--export", choices=sorted(FIXTURES))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except (AbsoluteContinuityError, UnknownContextError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ConfigError, FormatError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
