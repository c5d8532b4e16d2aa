"""Command-line entry point: ``subretinal run | summarize | export-frames``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..control import ControlMode
from ..errors import ConfigError, MissingFramesError
from .config import ExperimentConfig, load_config
from .frames import export_frames, find_record
from .runner import format_table, read_raw, run_grid, summarize_records, summary_csv

log = logging.getLogger("subretinal")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subretinal",
        description="Simulated OCT-guided subretinal insertions: virtual target layer vs fixed point.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log every trial")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment grid")
    run.add_argument("--config", type=Path, help="YAML experiment config (defaults if omitted)")
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--mode", choices=[m.value for m in ControlMode], help="run one controller only")
    run.add_argument("--target-p", type=float, help="run one target depth only")
    run.add_argument("--v-max", type=float, help="run one maximum velocity only (mm/s)")
    run.add_argument("--trials", type=int, help="trials per cell")
    run.add_argument("--parallel", type=int, default=1, help="worker processes")
    run.add_argument("--dump-frames", action="store_true", help="keep every frame's label raster")
    run.add_argument("--dump-trajectories", action="store_true", help="write per-trial trajectory CSVs")

    summ = sub.add_parser("summarize", help="recompute cell summaries from raw records")
    summ.add_argument("--raw", type=Path, required=True, help="raw.jsonl from a run")
    summ.add_argument("--out", type=Path, help="write summary CSV here instead of stdout")

    exp = sub.add_parser("export-frames", help="write one trial's frames as PNG rasters")
    exp.add_argument("--run", type=Path, default=Path("."), help="run directory holding raw.jsonl")
    exp.add_argument("--trial", required=True, help="trial id, e.g. virtual_layer-p0.40-v0.30-t00")
    exp.add_argument("--out", type=Path, required=True, help="destination directory")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.restrict(
        mode=args.mode, target_p=args.target_p, v_max=args.v_max, trials=args.trials, seed=args.seed
    )
    log.info("running %d trials into %s", cfg.n_trials, args.out)

    def progress(record: dict) -> None:
        if record["status"] == "ok":
            log.debug(
                "%s  err %.1f um  p %.3f  bleb %s  (%s)",
                record["trial_id"],
                record["final_axial_error_um"],
                record["final_p"],
                record["bleb_success_proxy"],
                record["end_reason"],
            )
        else:
            log.warning("%s failed: %s", record["trial_id"], record["error"])

    result = run_grid(
        cfg,
        args.out,
        parallel=args.parallel,
        dump_frames=args.dump_frames,
        dump_trajectories=args.dump_trajectories,
        progress=progress,
    )
    print(result.table)
    return 1 if any(r["status"] != "ok" for r in result.records) else 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    summaries = summarize_records(read_raw(args.raw))
    text = summary_csv(summaries)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
        print(format_table(summaries))
    else:
        sys.stdout.write(text)
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    record = find_record(args.run, args.trial)
    index = export_frames(record, args.out, args.run)
    print(index)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    handlers = {"run": _cmd_run, "summarize": _cmd_summarize, "export-frames": _cmd_export}
    try:
        return handlers[args.command](args)
    except (ConfigError, MissingFramesError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
