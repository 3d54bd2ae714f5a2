"""
Command-line entry point: dataset generation, model fitting, experiments,
reports and trace replay.
"""

import sys
import argparse
import logging
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from .database import open_session, store_results, summary_rows
from .errors import ConfigError, InsertionError
from .hand import generate_dataset, load_dataset, save_dataset
from .harness import ablate, load_config, replay, report, run_experiment, write_trials_jsonl
from .inverse_model import fit_inverse_model, save_model
from .schemas import OutputConfig, ReportFormat, TrainingConfig
from .utils import get_config, handle_exceptions, setup_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    env = get_config()
    parser = argparse.ArgumentParser(prog="insertion", description="Vision-driven compliant insertion simulator")
    parser.add_argument("--log-level", default=env["log_level"])
    parser.add_argument("--database-url", default=env["database_url"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate hand transitions for the inverse model")
    p.add_argument("--triangles", type=int, default=TrainingConfig().n_triangles)
    p.add_argument("--transitions", type=int, default=TrainingConfig().n_transitions)
    p.add_argument("--seed", type=int, default=env["seed"])
    p.add_argument("--full-scale", action="store_true", help="50 triangles, 200k transitions")
    p.add_argument("--out", default="dataset.txt")

    p = sub.add_parser("fit-model", help="fit the inverse hand model on a dataset file")
    p.add_argument("dataset")
    p.add_argument("--epochs", type=int, default=TrainingConfig().epochs)
    p.add_argument("--seed", type=int, default=env["seed"])
    p.add_argument("--validation", type=float, default=0.1, help="held-out fraction")
    p.add_argument("--out", default="inverse_model.txt")

    for name, help_text in (("run", "run one experiment config"), ("ablate", "run the full ablation matrix")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", help="overrides output.out_dir (default: the INSERTION_OUT_DIR setting)")
        p.add_argument("--format", choices=[f.value for f in ReportFormat], help="overrides output.format")
        p.add_argument("--trace", action="store_true", default=None, help="write one trace file per trial")

    p = sub.add_parser("report", help="summarize stored trials")
    p.add_argument("--config", help="only this experiment name")
    p.add_argument("--format", choices=[f.value for f in ReportFormat], default=ReportFormat.CSV.value)

    p = sub.add_parser("replay", help="print the timeline of a trace file")
    p.add_argument("trace")
    return parser


@handle_exceptions
def cmd_gen_dataset(args) -> None:
    cfg = TrainingConfig.full_scale() if args.full_scale else TrainingConfig(n_triangles=args.triangles,
                                                                               n_transitions=args.transitions)
    buffer = generate_dataset(cfg.n_triangles, cfg.n_transitions, seed=args.seed)
    save_dataset(buffer, args.out)
    logger.info(f"wrote {len(buffer)} transitions to {args.out}")


@handle_exceptions
def cmd_fit_model(args) -> None:
    buffer = load_dataset(args.dataset)
    train, held_out = buffer.split(args.validation, seed=args.seed) if args.validation > 0 else (buffer, None)
    model = fit_inverse_model(train, TrainingConfig(epochs=args.epochs, seed=args.seed), validation=held_out)
    save_model(model, args.out)
    logger.info(f"wrote model to {args.out}")


def output_settings(output: OutputConfig, args) -> OutputConfig:
    """Report settings from the config file, with command-line flags on top"""
    data = output.model_dump()
    for name in ("out_dir", "format", "trace"):
        if getattr(args, name, None) is not None:
            data[name] = getattr(args, name)
    if data["out_dir"] is None:
        data["out_dir"] = get_config()["out_dir"]
    try:
        return OutputConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid output setting: {e.errors()[0]['msg']}", field="output") from e


@handle_exceptions
def cmd_experiment(args) -> None:
    cfg = load_config(args.config, seed=args.seed)
    out = output_settings(cfg.output, args)
    out_dir = Path(out.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_dir = out_dir / "traces" if out.trace else None

    if args.command == "ablate":
        runs = ablate(cfg, trace_dir=trace_dir)
        group_by = "setting"
    else:
        runs = [(cfg, run_experiment(cfg, trace_dir=trace_dir))]
        group_by = "object"

    db = open_session(args.database_url)
    try:
        for run_cfg, results in runs:
            store_results(db, run_cfg, results)
    finally:
        db.close()

    write_trials_jsonl(out_dir / "trials.jsonl", runs)
    text = report(runs, out.format.value, group_by=group_by, title=f"{cfg.name} ({args.command})")
    suffix = "csv" if out.format == ReportFormat.CSV else "md"
    (out_dir / f"{cfg.name}_{args.command}.{suffix}").write_text(text)
    print(text, end="")


@handle_exceptions
def cmd_report(args) -> None:
    db = open_session(args.database_url)
    try:
        rows = summary_rows(db, args.config)
    finally:
        db.close()
    print(report(rows, args.format), end="")


@handle_exceptions
def cmd_replay(args) -> None:
    print(replay(args.trace).render())


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "fit-model": cmd_fit_model,
    "run": cmd_experiment,
    "ablate": cmd_experiment,
    "report": cmd_report,
    "replay": cmd_replay,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("insertion", args.log_level)
    try:
        COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"configuration error ({e.field or 'config'}): {e}")
        return 2
    except InsertionError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
