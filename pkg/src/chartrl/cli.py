"""Command-line entry point.

Subcommands: reward, eval, subset, stats, validate, train-sim, pipeline.
Machine-readable results go to stdout or, with --out, to a file (and
nothing else is printed); diagnostics go to stderr. Exit codes: 0
success, 1 usage error, 2 data error, 3 external failure. Every
randomized subcommand takes an explicit --seed so runs are reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .answers import MatchPolicy, parse_answer
from .datasets import (
    SubsetSpec,
    dataset_stats,
    load_records,
    sample_subset,
    serialize_records,
    subset_allocations,
    validate_record,
)
from .grpo import GrpoConfig, train_loop
from .pipeline import ClientError, ExecutorError, PipelineConfig, run_pipeline
from .rewards import evaluate, score_batch, total_reward
from .simlab import (
    CategoricalPolicy,
    CompareConfig,
    compare_reward_schemes,
    make_categorical_env,
    run_numeric_training,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_EXTERNAL = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        raise UsageError(message)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_records_strict(path: str):
    records, issues = load_records(path)
    if issues:
        first = issues[0]
        raise DataError(f"{path}:{first.line}: {first.code}: {first.message}")
    return records


def _cmd_reward(args) -> int:
    if args.batch:
        if args.response or args.gold:
            raise UsageError("--batch cannot be combined with --response/--gold")
        import io

        buf = io.StringIO()
        try:
            with open(args.batch, "r", encoding="utf-8") as fh:
                score_batch(fh, buf)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        _emit(buf.getvalue(), args.out)
        return EXIT_OK
    if args.response is None or args.gold is None:
        raise UsageError("reward requires --response and --gold (or --batch)")
    breakdown = total_reward(args.response, parse_answer(args.gold))
    _emit(json.dumps(breakdown.to_dict()) + "\n", args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    preds = Path(args.preds).read_text(encoding="utf-8").splitlines()
    gold_lines = Path(args.gold).read_text(encoding="utf-8").splitlines()
    if len(preds) != len(gold_lines):
        raise DataError(
            f"prediction/gold line counts differ: {len(preds)} vs {len(gold_lines)}"
        )
    if not preds:
        raise DataError("input files are empty")
    policy = MatchPolicy(
        numeric_tolerance=args.tolerance, case_sensitive=args.case_sensitive
    )
    report = evaluate(preds, [parse_answer(g) for g in gold_lines], policy)
    _emit(json.dumps(report.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_subset(args) -> int:
    records = _load_records_strict(args.records)
    spec = SubsetSpec(target_size=args.size, strata_key=args.strata, seed=args.seed)
    subset = sample_subset(records, spec)
    _emit(serialize_records(subset), args.out)
    manifest_path = args.manifest or (args.out + ".manifest.json" if args.out else None)
    if manifest_path:
        manifest = {
            "seed": spec.seed,
            "target_size": spec.target_size,
            "strata_key": spec.strata_key,
            "allocations": subset_allocations(records, spec),
        }
        Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_stats(args) -> int:
    records = _load_records_strict(args.records)
    if not records:
        raise DataError(f"{args.records}: no records")
    stats = dataset_stats(records)
    _emit(json.dumps(stats.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_validate(args) -> int:
    records, line_issues = load_records(args.records)
    record_issues = [issue for record in records for issue in validate_record(record)]
    report = {
        "n_records": len(records),
        "n_line_issues": len(line_issues),
        "n_record_issues": len(record_issues),
        "issues": [
            {"code": i.code, "message": i.message, "line": i.line, "record_id": i.record_id}
            for i in line_issues + record_issues
        ],
    }
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK


_TRAIN_SIM_DEFAULTS = {
    "env": "numeric",
    "scheme": "compare",
    "steps": 2000,
    "group_size": 8,
    "lr": 2.0,
    "beta": 0.04,
    "eval_interval": 100,
    "sigma": 10.0,
    "gold_lo": 50.0,
    "gold_hi": 150.0,
    "initial_mu": 60.0,
    "k": 4,
}


def _resolve_train_sim_args(args) -> None:
    """Fill unset flags from the declarative config file, then defaults."""
    file_values = {}
    if args.config:
        file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(file_values) - set(_TRAIN_SIM_DEFAULTS) - {"seed"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, default in _TRAIN_SIM_DEFAULTS.items():
        if getattr(args, key) is None:
            setattr(args, key, file_values.get(key, default))
    if args.seed is None:
        if "seed" not in file_values:
            raise UsageError("train-sim requires --seed (flag or config file)")
        args.seed = int(file_values["seed"])


def _cmd_train_sim(args) -> int:
    _resolve_train_sim_args(args)
    grpo = GrpoConfig(
        steps=args.steps,
        seed=args.seed,
        group_size=args.group_size,
        learning_rate=args.lr,
        kl_beta=args.beta,
        eval_interval=args.eval_interval,
    )
    if args.env == "categorical":
        env = make_categorical_env(args.k, reward=args.scheme, seed=args.seed)
        policy = CategoricalPolicy(logits=[0.0] * args.k)
        reference = policy.clone()
        trace = train_loop(policy, reference, env, grpo)
        if args.trace_out:
            trace.write_csv(args.trace_out)
        probs = policy.probs()
        summary = {
            "env": "categorical",
            "scheme": args.scheme,
            "k": args.k,
            "correct_option": int(env.gold.text_value),
            "p_correct": float(probs[int(env.gold.text_value)]),
            "final_kl": trace.final.mean_kl,
        }
        _emit(json.dumps(summary, indent=2) + "\n", args.out)
        return EXIT_OK

    config = CompareConfig(
        grpo=grpo,
        gold_range=(args.gold_lo, args.gold_hi),
        sigma=args.sigma,
        initial_mu=args.initial_mu,
    )
    if args.scheme == "compare":
        report = compare_reward_schemes(config)
        if args.trace_out:
            report.cerm.trace.write_csv(args.trace_out + ".cerm.csv")
            report.binary_exact.trace.write_csv(args.trace_out + ".binary_exact.csv")
        _emit(report.to_summary_json() + "\n", args.out)
        return EXIT_OK
    result = run_numeric_training(config, args.scheme)
    if args.trace_out:
        result.trace.write_csv(args.trace_out)
    _emit(json.dumps(result.to_summary(), indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    overrides = {
        "seed": args.seed,
        "fixtures_path": args.fixtures,
        "executor_path": args.executor,
        "parallelism": args.parallelism,
    }
    if args.config:
        config = PipelineConfig.from_file(args.config, **overrides)
    else:
        config = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    charts: list[Path] = []
    for entry in args.charts:
        p = Path(entry)
        if p.is_dir():
            charts.extend(sorted(p.glob("*.png")))
        else:
            charts.append(p)
    if not charts:
        raise DataError("no input charts found")
    manifest = run_pipeline(charts, config, args.out_dir)
    sys.stderr.write(
        f"pipeline: input={manifest.input} rendered={manifest.rendered} "
        f"excluded={manifest.excluded} qa_records={manifest.qa_records}\n"
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="chartrl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"chartrl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reward", help="score one response or a batch file")
    p.add_argument("--response", help="model response text")
    p.add_argument("--gold", help="gold answer string")
    p.add_argument("--batch", help="line-delimited {id, response, gold} file")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_reward)

    p = sub.add_parser("eval", help="exact/relaxed accuracy over paired files")
    p.add_argument("--preds", required=True, help="one prediction per line")
    p.add_argument("--gold", required=True, help="one gold answer per line")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--case-sensitive", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("subset", help="stratified subset of a record file")
    p.add_argument("--records", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--strata", default="question_type")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=_cmd_subset)

    p = sub.add_parser("stats", help="dataset statistics for a record file")
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("validate", help="report schema/consistency issues")
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("train-sim", help="toy-policy training experiments")
    p.add_argument("--config", help="JSON config file; explicit flags win")
    p.add_argument("--env", choices=["numeric", "categorical"])
    p.add_argument(
        "--scheme", choices=["cerm", "binary_exact", "cerm_plus_format", "compare"]
    )
    p.add_argument("--steps", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--seed", type=int, help="required, via flag or config file")
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--gold-lo", type=float)
    p.add_argument("--gold-hi", type=float)
    p.add_argument("--initial-mu", type=float)
    p.add_argument("--k", type=int, help="options for the categorical env")
    p.add_argument("--trace-out", help="learning-curve CSV path (or prefix for compare)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_train_sim)

    p = sub.add_parser("pipeline", help="run the replot/QA-generation pipeline")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--charts", nargs="+", required=True, help="chart images or directories")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--fixtures", help="mock-client fixtures file")
    p.add_argument("--executor", help="render executor command")
    p.add_argument("--parallelism", type=int)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def run_command(argv: list[str] | None = None) -> int:
    """Parse arguments, dispatch, and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except ValueError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except (FileNotFoundError, OSError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except (ClientError, ExecutorError) as exc:
        sys.stderr.write(f"external failure: {exc}\n")
        return EXIT_EXTERNAL


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
