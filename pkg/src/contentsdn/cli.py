"""Command-line entry point.

Two commands: ``scenario`` replays the full request flow on a topology
and writes a JSON transcript; ``sweep`` runs the two-link backlog
experiment over a grid of Pareto shapes and writes a CSV report plus,
by default, a rendered figure next to it.

Exit codes are a stable contract: 0 success, 1 an assertion inside a
run failed, 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import simeval
from .controller import ConfigError, ControllerConfig
from .netmodel import TopologyError, load_topology_file
from .scenario import ScenarioEngine, ScenarioError

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contentsdn",
        description="Content-aware SDN simulator: request-flow scenario and the "
        "two-link size-aware allocation experiment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    scenario = sub.add_parser(
        "scenario", help="run the miss-then-hit request flow and write a JSON transcript"
    )
    scenario.add_argument("--topology", required=True, help="topology JSON file")
    scenario.add_argument("--config", required=True, help="controller config JSON file")
    scenario.add_argument("--out", required=True, help="transcript JSON output path")

    sweep = sub.add_parser(
        "sweep", help="run the two-link backlog experiment over a grid of alphas"
    )
    sweep.add_argument("--alpha-min", type=float, default=1.1)
    sweep.add_argument("--alpha-max", type=float, default=2.5)
    sweep.add_argument("--alpha-step", type=float, default=0.1)
    sweep.add_argument("--rho", type=float, default=0.95, help="offered load fraction in (0, 1]")
    sweep.add_argument("--horizon", type=int, default=10_000, help="seconds simulated per run")
    sweep.add_argument("--seeds", type=int, default=20, help="number of seeds per alpha")
    sweep.add_argument("--seed-base", type=int, default=1, help="first seed value")
    sweep.add_argument("--out", required=True, help="CSV output path")
    sweep.add_argument(
        "--fig", default=None, help="figure output path (default: CSV path with .png suffix)"
    )
    sweep.add_argument(
        "--no-fig", action="store_true", help="skip rendering the figure next to the CSV"
    )
    return parser


def _cmd_scenario(args) -> int:
    try:
        graph = load_topology_file(args.topology)
        config = ControllerConfig.from_file(args.config)
        engine = ScenarioEngine(graph, config)
    except (OSError, TopologyError, ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ok = engine.run()
    try:
        Path(args.out).write_text(engine.transcript_json() + "\n")
    except OSError as exc:
        print(f"error: cannot write transcript: {exc}", file=sys.stderr)
        return EXIT_USAGE
    checked = sum(1 for e in engine.transcript if e.message_type == "-")
    if not ok:
        print(f"FAILED: {engine.first_failure()}", file=sys.stderr)
        print(f"transcript: {args.out}", file=sys.stderr)
        return EXIT_ASSERTION
    print(f"scenario OK: {checked} assertions passed, transcript at {args.out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        alphas = simeval.alpha_range(args.alpha_min, args.alpha_max, args.alpha_step)
        if args.seeds < 1:
            raise ValueError("--seeds must be >= 1")
        if args.horizon < 1:
            raise ValueError("--horizon must be >= 1")
        seeds = list(range(args.seed_base, args.seed_base + args.seeds))
        # raises on a rho outside (0, 1] before any simulation starts
        simeval.scale_for_load(alphas[0], args.rho)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    cells, summaries = simeval.sweep_alpha(alphas, args.rho, args.horizon, seeds)
    try:
        simeval.write_sweep_csv(args.out, cells, summaries)
    except OSError as exc:
        print(f"error: cannot write CSV: {exc}", file=sys.stderr)
        return EXIT_USAGE

    fig_note = ""
    if not args.no_fig:
        from .figures import render_sweep_figure  # import cost only when needed

        fig_path = args.fig or str(Path(args.out).with_suffix(".png"))
        try:
            render_sweep_figure(cells, summaries, fig_path)
        except OSError as exc:
            print(f"error: cannot write figure: {exc}", file=sys.stderr)
            return EXIT_USAGE
        fig_note = f", figure at {fig_path}"

    overall = sum(s.mean_gain_pct for s in summaries) / len(summaries)
    peak = max(s.mean_gain_pct for s in summaries)
    print(
        f"sweep OK: {len(alphas)} alphas x {len(seeds)} seeds, "
        f"mean gain {overall:.1f}%, best per-alpha mean {peak:.1f}%, "
        f"CSV at {args.out}{fig_note}"
    )
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "scenario":
        return _cmd_scenario(args)
    return _cmd_sweep(args)


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
