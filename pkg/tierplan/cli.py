"""
Command-line entry point: plan | tile | simulate | oracle | verify-tiles | estimate.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from config.settings import settings
from tierplan import cases, documents, reports
from tierplan.conv_oracle import run_stack, run_tiled, tensor_equal
from tierplan.errors import (
    EXIT_OK,
    EXIT_UNEXPECTED,
    ConfigError,
    GuardError,
    TierPlanError,
    VerificationError,
)
from tierplan.graph_core import ShapeMode
from tierplan.hpa_planner import (
    HorizontalPartitioner,
    Thresholds,
    brute_force_optimal,
    gap_summary,
    hpa,
    incremental_update,
    is_valid,
    plan_gap,
)
from tierplan.latency_model import RegressionModel, WeightedGraph, fit, network_preset, weight_graph
from tierplan.pipeline_sim import EdgeParallel, Scenario, simulate, sweep
from tierplan.vsm_tiler import edge_plan, overlap_stats, plan_tiles
from utils.logging import setup_logging

logger = logging.getLogger(__name__)

ORACLE_TOLERANCE = 1e-12


@dataclass
class RunConfig:
    """Paths and flags shared by the subcommands."""

    graph: Optional[Path] = None
    profile: Optional[Path] = None
    model: Optional[Path] = None
    capabilities: Optional[Path] = None
    bandwidth: Optional[Path] = None
    network: Optional[str] = None
    thresholds: Optional[Path] = None
    perturbation: Optional[Path] = None
    plan: Optional[Path] = None
    stack: Optional[Path] = None
    samples: Optional[Path] = None
    grid: Optional[tuple[int, int]] = None
    output_dir: Path = Path(settings.OUTPUT_DIR)
    floor_mode: bool = False
    strict: bool = False
    escalate_gap: Optional[float] = None
    seed: int = settings.DEFAULT_SEED
    trials: Optional[int] = None
    vertices: int = settings.ORACLE_VERTICES
    fault_injection: bool = False
    sweep_link: Optional[str] = None
    sweep_values: tuple[float, ...] = ()

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        cfg = cls()
        for name in cls.__dataclass_fields__:
            value = getattr(args, name, None)
            if value is not None and value is not False:
                setattr(cfg, name, value)
        for name in ("graph", "profile", "model", "capabilities", "bandwidth", "thresholds",
                     "perturbation", "plan", "stack", "samples"):
            path = getattr(cfg, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"--{name} file not found: {path}")
        cfg.output_dir = Path(cfg.output_dir)
        return cfg

    @property
    def shape_mode(self) -> Optional[str]:
        return ShapeMode.FLOOR.value if self.floor_mode else None


def parse_grid(value: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in value.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"grid must look like AxB, got {value!r}") from e
    if a < 1 or b < 1:
        raise argparse.ArgumentTypeError(f"grid dimensions must be positive, got {value!r}")
    return a, b


def parse_values(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in value.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from e


# shared loaders

def load_weighted_graph(cfg: RunConfig) -> WeightedGraph:
    if cfg.graph is None:
        raise ConfigError("--graph is required")
    g = documents.load_graph(cfg.graph, cfg.shape_mode)
    if cfg.bandwidth is not None:
        bw = documents.bandwidth_from_document(documents.read_json(cfg.bandwidth))
    elif cfg.network is not None:
        bw = network_preset(cfg.network)
    else:
        raise ConfigError("--bandwidth or --network is required")
    profile = documents.profile_from_document(documents.read_json(cfg.profile)) if cfg.profile else None
    model = RegressionModel.from_document(documents.read_json(cfg.model)) if cfg.model else None
    caps = (documents.capabilities_from_document(documents.read_json(cfg.capabilities))
            if cfg.capabilities else None)
    return weight_graph(g, bw, profile=profile, model=model, caps=caps)


def load_thresholds(cfg: RunConfig) -> Thresholds:
    if cfg.thresholds is not None:
        return documents.thresholds_from_document(documents.read_json(cfg.thresholds))
    return Thresholds.from_dict(settings.DEFAULT_THRESHOLDS)


def load_or_plan(cfg: RunConfig, wg: WeightedGraph):
    if cfg.plan is not None:
        plan = documents.plan_from_document(documents.read_json(cfg.plan), wg)
        if not is_valid(plan.assignment, wg, cfg.strict):
            raise ConfigError(f"plan {cfg.plan} violates the potential-tier rule for this graph")
        return plan
    return hpa(wg, cfg.strict)


# commands

def cmd_plan(cfg: RunConfig) -> int:
    wg = load_weighted_graph(cfg)
    planner = HorizontalPartitioner(wg, cfg.strict)
    plan = planner.run()
    logger.info(f"✅ HPA placed {len(plan.assignment)} vertices, Θ={plan.theta * 1000:.6f} ms "
                f"({planner.sis_moves} SIS moves)")
    gap = None
    if cfg.perturbation is not None:
        wg_new, changed = documents.perturbation_from_document(documents.read_json(cfg.perturbation), wg)
        updated = incremental_update(plan, wg_new, changed, load_thresholds(cfg), cfg.strict, cfg.escalate_gap)
        gap = plan_gap(updated, hpa(wg_new, cfg.strict))
        logger.info(f"📊 Incremental update over {len(changed)} changed vertices, gap {gap:.4%}")
        plan = updated

    documents.write_json(cfg.output_dir / "plan.json", documents.plan_to_document(plan))
    (cfg.output_dir / "plan.md").write_text(reports.plan_markdown(plan, gap))
    reports.print_plan(plan)
    return EXIT_OK


def cmd_tile(cfg: RunConfig) -> int:
    if cfg.grid is None:
        raise ConfigError("--grid AxB is required")
    chain: tuple[str, ...] = ()
    if cfg.stack is not None:
        stack = documents.stack_from_document(documents.read_json(cfg.stack))
        tiles = plan_tiles(stack, cfg.grid)
    else:
        wg = load_weighted_graph(cfg)
        plan = load_or_plan(cfg, wg)
        chain, tiles = edge_plan(wg.graph, plan.assignment, cfg.grid)
        logger.info(f"🔍 Edge chain: {' -> '.join(chain)}")
    overlap = overlap_stats(tiles)
    documents.write_json(cfg.output_dir / "tiles.json", documents.tiles_to_document(tiles, overlap, chain))
    (cfg.output_dir / "tiles.md").write_text(reports.tiles_markdown(tiles, overlap))
    reports.print_tiles(tiles, overlap)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    wg = load_weighted_graph(cfg)
    if cfg.sweep_link is not None:
        if not cfg.sweep_values:
            raise ConfigError("--sweep-values is required with --sweep-link")
        rows = sweep(wg, cfg.sweep_link, cfg.sweep_values, cfg.strict)
        documents.write_csv(cfg.output_dir / "sweep.csv", [r.as_dict() for r in rows])
        reports.print_sweep(rows)
        return EXIT_OK

    plan = load_or_plan(cfg, wg)
    edge = None
    if cfg.grid is not None:
        chain, tiles = edge_plan(wg.graph, plan.assignment, cfg.grid)
        edge = EdgeParallel(chain, tiles)
    report = simulate(Scenario(wg, plan, edge))
    documents.write_json(cfg.output_dir / "report.json", documents.report_to_document(report.as_dict()))
    documents.write_csv(cfg.output_dir / "report.csv",
                        [{"scenario": "plan", "latency_ms": report.theta * 1e3, "speedup": 1.0}]
                        + [{"scenario": k, "latency_ms": v * 1e3, "speedup": report.speedups[k]}
                           for k, v in report.baselines.items()])
    (cfg.output_dir / "report.md").write_text(reports.report_markdown(report))
    reports.print_report(report)
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    limit = settings.ORACLE_MAX_VERTICES
    if cfg.graph is not None:
        instances = [load_weighted_graph(cfg)]
    else:
        if cfg.vertices > limit:
            raise GuardError(f"exhaustive search limited to {limit} vertices, requested {cfg.vertices}")
        rng = cases.rng_for(cfg.seed)
        trials = cfg.trials or settings.ORACLE_TRIALS
        instances = [cases.random_weighted_graph(rng, cfg.vertices) for _ in range(trials)]

    rows = []
    for i, wg in enumerate(instances):
        heuristic = hpa(wg, cfg.strict)
        optimum, theta_opt = brute_force_optimal(wg, cfg.strict, limit, incumbent=heuristic)
        if theta_opt > heuristic.theta + ORACLE_TOLERANCE * max(1.0, heuristic.theta):
            raise VerificationError(f"trial {i}: exhaustive Θ {theta_opt} exceeds HPA Θ {heuristic.theta}")
        diff = [v for v in wg.graph.vertices if heuristic.assignment[v] != optimum.assignment[v]]
        rows.append({
            "trial": i,
            "vertices": len(wg.graph),
            "theta_hpa": heuristic.theta,
            "theta_opt": theta_opt,
            "ratio": heuristic.theta / theta_opt if theta_opt > 0 else 1.0,
            "gap": plan_gap(heuristic, optimum),
            "differs": ",".join(diff),
        })

    summary = gap_summary([r["gap"] for r in rows], ORACLE_TOLERANCE)
    documents.write_json(cfg.output_dir / "oracle.json",
                         documents.report_to_document({"summary": summary, "trials": rows}, "oracle"))
    documents.write_csv(cfg.output_dir / "oracle.csv", rows)
    (cfg.output_dir / "oracle.md").write_text(reports.oracle_markdown(summary))
    reports.print_oracle(summary)
    return EXIT_OK


def cmd_verify_tiles(cfg: RunConfig) -> int:
    rng = cases.rng_for(cfg.seed)
    trials = cfg.trials or settings.VERIFY_TRIALS
    fixed = documents.stack_from_document(documents.read_json(cfg.stack)) if cfg.stack else None
    if fixed is not None and fixed and cfg.grid is None:
        raise ConfigError("--grid AxB is required with --stack")

    failures = []
    for i in range(trials):
        if fixed is None:
            stack, grid = cases.random_stack(rng)
        elif not fixed:
            continue  # nothing to tile
        else:
            stack, grid = [cases.random_parameters(rng, c) for c in fixed], cfg.grid
        plan = plan_tiles([layer.config for layer in stack], grid)
        x = cases.random_tensor(rng, plan.layer_dims(1))
        whole = run_stack(stack, x)
        tiled = run_tiled(plan, stack, x, interior_zero_padding=cfg.fault_injection)
        if not tensor_equal(whole, tiled):
            failures.append({"trial": i, "grid": list(grid), "layers": len(stack)})

    result = {"trials": trials, "failures": failures, "fault_injection": cfg.fault_injection, "seed": cfg.seed}
    documents.write_json(cfg.output_dir / "verify.json", documents.report_to_document(result, "verify"))
    if failures:
        raise VerificationError(f"{len(failures)} of {trials} trials differ between tiled and whole execution")
    logger.info(f"✅ {trials} trials: tiled execution matches whole-stack execution exactly")
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, action: str) -> int:
    if action == "fit":
        if cfg.samples is None:
            raise ConfigError("--samples is required for estimate fit")
        model = fit(documents.samples_from_document(documents.read_json(cfg.samples)))
        documents.write_json(cfg.output_dir / "model.json", model.to_document())
        for line in model.diagnostics:
            logger.warning(f"⚠️ {line}")
        return EXIT_OK
    if cfg.model is None or cfg.capabilities is None:
        raise ConfigError("estimate predict needs --model and --capabilities")
    wg = load_weighted_graph(cfg)
    documents.write_json(cfg.output_dir / "profile.json", documents.profile_to_document(wg))
    logger.info(f"✅ Predicted times for {len(wg.graph)} vertices")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tierplan", description="Three-tier DNN partition planning toolkit")
    parser.add_argument("--log-level", type=str, default=settings.LOG_LEVEL, help="Logging level")
    parser.add_argument("--output-dir", type=Path, default=None, help="Directory for output documents")
    sub = parser.add_subparsers(dest="command", required=True)

    def weights(p: argparse.ArgumentParser):
        p.add_argument("--graph", type=Path, help="Graph description document")
        p.add_argument("--profile", type=Path, help="Profiled per-tier times")
        p.add_argument("--model", type=Path, help="Fitted latency model")
        p.add_argument("--capabilities", type=Path, help="Per-tier capability records")
        p.add_argument("--bandwidth", type=Path, help="Bandwidth document")
        p.add_argument("--network", type=str, help="Network preset: wifi, 4g, 5g, optical")
        p.add_argument("--floor-mode", action="store_true", help="Truncate non-integral output sizes")
        p.add_argument("--strict", action="store_true", help="Never place a vertex before any predecessor")

    p = sub.add_parser("plan", help="Run HPA and write the plan document")
    weights(p)
    p.add_argument("--perturbation", type=Path, help="Changed weights for an incremental update")
    p.add_argument("--thresholds", type=Path, help="Threshold document")
    p.add_argument("--escalate-gap", type=float, help="Replan fully when the incremental gap exceeds this")

    p = sub.add_parser("tile", help="Plan fused tile stacks")
    weights(p)
    p.add_argument("--stack", type=Path, help="Stack document")
    p.add_argument("--plan", type=Path, help="Plan document (default: run HPA)")
    p.add_argument("--grid", type=parse_grid, help="Grid as AxB")

    p = sub.add_parser("simulate", help="Simulate a plan and compare with baselines")
    weights(p)
    p.add_argument("--plan", type=Path, help="Plan document (default: run HPA)")
    p.add_argument("--grid", type=parse_grid, help="Parallelize the edge chain over an AxB grid")
    p.add_argument("--sweep-link", type=str, choices=("device_edge", "edge_cloud", "device_cloud"))
    p.add_argument("--sweep-values", type=parse_values, help="Comma-separated Mbps values")

    p = sub.add_parser("oracle", help="Compare HPA with the exhaustive optimum")
    weights(p)
    p.add_argument("--random", dest="trials", type=int, help="Number of random instances")
    p.add_argument("--vertices", type=int, help="Vertices per random instance")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("verify-tiles", help="Check tiled execution against whole-stack execution")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stack", type=Path, help="Fixed stack document (random parameters per trial)")
    p.add_argument("--grid", type=parse_grid)
    p.add_argument("--fault-injection", action="store_true", help="Zero-pad interior crop edges")

    p = sub.add_parser("estimate", help="Fit or apply the latency model")
    p.add_argument("action", choices=("fit", "predict"))
    weights(p)
    p.add_argument("--samples", type=Path, help="Measured samples document")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = RunConfig.from_args(args)
        if args.command == "plan":
            return cmd_plan(cfg)
        if args.command == "tile":
            return cmd_tile(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "oracle":
            return cmd_oracle(cfg)
        if args.command == "verify-tiles":
            return cmd_verify_tiles(cfg)
        return cmd_estimate(cfg, args.action)
    except TierPlanError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"❌ Unexpected error: {e}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
