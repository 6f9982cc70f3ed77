"""Command-line entry point: ``trajattr <subcommand> ...``.

Exit codes: 0 ok, 1 user error, 2 pipeline failure, 3 validation failure.
"""
from __future__ import annotations

import argparse
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .attribution import attribute, select_top_trajectories
from .config import RunConfig, load_config
from .data import read_dataset
from .errors import ConfigError, ContractViolation, LayoutError, TrajAttrError
from .gridworld import Action, CellKind
from .render import render_ascii, render_svg
from .validate import validate_run

EXIT_OK, EXIT_USER, EXIT_PIPELINE, EXIT_VALIDATION = 0, 1, 2, 3

log = logging.getLogger("trajattr")


class UserError(TrajAttrError):
    pass


def _config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
        cfg.validate()
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    if args.out:
        cfg = replace(cfg, out=args.out)
    return cfg


def _parse_state(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*\(?\s*(-?\d+)\s*,\s*(-?\d+)\s*\)?\s*", text)
    if not m:
        raise UserError(f"state must look like '(r,c)', got {text!r}")
    return int(m.group(1)), int(m.group(2))


def cmd_run(args) -> int:
    cfg = _config(args)
    run, ran = pipeline.run_pipeline(cfg)
    print(f"run directory: {run.root}")
    print(f"stages executed: {', '.join(ran)}")
    print(run.report.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_stage(args) -> int:
    cfg = _config(args)
    run = pipeline.Run(Path(cfg.out))
    run.root.mkdir(parents=True, exist_ok=True)
    run.config.write_text(cfg.to_text(), encoding="utf-8")
    ran = pipeline.run_stage(cfg, run, args.command, force=args.force)
    print(f"{args.command}: {'done' if ran else 'cached'}")
    if args.command == "report":
        if args.format == "csv":
            print(run.metrics.read_text(encoding="utf-8"), end="")
        else:
            print(run.report.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_explain(args) -> int:
    run = pipeline.Run(Path(args.out or "run"))
    if not (run.attributions.exists() and run.policy_path(None).exists()):
        raise UserError(f"{run.root} is not a completed run (run the pipeline first)")
    cfg = pipeline.load_run_config(run)
    layout = pipeline.load_layout(run)
    r, c = _parse_state(args.state)
    if not layout.in_bounds(r, c):
        raise UserError(f"unknown state {(r, c)}: outside the {layout.height}x{layout.width} grid")
    if layout.is_terminal_cell(r, c):
        raise UserError(f"state {(r, c)} is terminal; there is no decision to explain")
    if layout.kind(r, c) == CellKind.WALL:
        raise UserError(f"state {(r, c)} is a wall")
    s = layout.index(r, c)
    data = read_dataset(run.dataset)
    suite = pipeline.load_suite(run, cfg.distance)
    res = attribute(s, suite)
    print(f"state ({r},{c}): original action {Action(res.a_orig).name.lower()}")
    if res.c_final is None:
        print("c_final: none (no explanation policy changes this decision)")
        return EXIT_OK
    top_n = args.top_n or cfg.top_n
    exemplars = select_top_trajectories(suite.entry(res.c_final).members, data, layout, s, res.a_orig, top_n)
    print(f"candidate clusters K: {res.candidates}")
    print(f"c_final: cluster {res.c_final} (data distance {res.data_distances[res.c_final]:.6g})")
    out_dir = run.root / "explain"
    for tid, score in exemplars:
        traj = data.trajectories[tid]
        print(f"\ntrajectory {tid} (score {score})")
        print(render_ascii(layout, traj, highlight=s))
        if args.format == "svg":
            out_dir.mkdir(exist_ok=True)
            path = out_dir / f"state_{r}_{c}_traj_{tid}.svg"
            path.write_text(render_svg(layout, traj, highlight=s), encoding="utf-8")
            print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    run = pipeline.Run(Path(args.out or "run"))
    try:
        checks = validate_run(run)
    except FileNotFoundError as exc:
        raise UserError(str(exc)) from exc
    for ch in checks:
        print(f"[{'PASS' if ch.ok else 'FAIL'}] {ch.name}" + (f": {ch.detail}" if ch.detail else ""))
    failed = sum(not ch.ok for ch in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="run directory (overrides the config's 'out')")
    common.add_argument("--seed-override", type=int, help="use this seed for every stochastic stage")
    common.add_argument("--format", choices=("text", "svg", "csv", "json"), default="text")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trajattr", description="Trajectory attribution for offline RL.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the whole pipeline").set_defaults(fn=cmd_run)
    for stage in pipeline.STAGES:
        p = sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
        p.add_argument("--force", action="store_true", help="ignore the stage cache")
        p.set_defaults(fn=cmd_stage)
    p = sub.add_parser("explain", parents=[common], help="explain the action at one state")
    p.add_argument("state", help="cell as '(r,c)'")
    p.add_argument("--top-n", type=int)
    p.set_defaults(fn=cmd_explain)
    sub.add_parser("validate", parents=[common], help="check run invariants").set_defaults(fn=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UserError, ConfigError, LayoutError, ContractViolation, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except pipeline.StageError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except TrajAttrError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
