"""Command-line front end: design exchange layouts, run solvers, sweep
standard-vs-customized experiments, and validate layout files.

Everything is configured through JSON files; outputs are CSV traces (RFC
4180, header row, 17 significant digits), JSON summaries, and optional
gnuplot scripts. Identical config and seed produce byte-identical CSVs, so
wall-clock times are reported only in the JSON summaries.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .design import DesignCriterion, DesignInfeasible, design_layout
from .games import (
    GameError,
    build_gne_operators,
    gne_solve,
    ne_solve,
    preconditioner_positive,
    search_ne_step_size,
    solve_vgne_centralized,
)
from .graphs import Graph, GraphError
from .layout import ConnectivityMode, EndLayout, LayoutError, Partition, standard_layout
from .optim import (
    ConstraintCoupledProblem,
    OptimError,
    abc_solve,
    admm_solve,
    augdgm_matrices,
    augdgm_solve,
    constant_design_weights,
    constraint_coupled_solve,
    merit_v,
    power_step_schedule,
    pushsum_solve,
)
from .scenarios import (
    ScenarioError,
    SensorScenario,
    build_lasso,
    build_random_quadratic_game,
    build_random_separable,
    build_regression,
    build_unicast,
    reference_scheme_unicast,
    sample_unicast,
)
from .trace import DivergenceError, RunTrace

log = logging.getLogger("endnet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGENCE = 4

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


# -- output helpers ---------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _trace_table(trace: RunTrace) -> tuple[list[str], list[list]]:
    names = list(trace.columns)
    if "k" in names:
        names.remove("k")
        names.insert(0, "k")
    n = len(trace)
    rows = []
    for r in range(n):
        row = []
        for name in names:
            col = trace.columns[name]
            # columns that start late (e.g. ratios from the second step)
            # are front-padded so the tail lines up with the iterations
            idx = r - (n - len(col))
            row.append("" if idx < 0 else _fmt(col[idx]))
        rows.append(row)
    return names, rows


def write_trace_csv(path: str, trace: RunTrace) -> list[str]:
    header, rows = _trace_table(trace)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return header


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def emit_plot_script(csv_path: str, columns: list[str]) -> str:
    """Write a gnuplot script next to the CSV plotting every column vs. the
    first one (usually the iteration counter)."""
    gp_path = os.path.splitext(csv_path)[0] + ".gp"
    base = os.path.basename(csv_path)
    lines = [
        'set datafile separator ","',
        "set key autotitle columnhead",
        "set logscale y",
        f'set xlabel "{columns[0] if columns else "k"}"',
    ]
    plots = [
        f'"{base}" using 1:{idx + 2} with lines'
        for idx in range(len(columns) - 1)
    ]
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    lines.append("pause -1")
    with open(gp_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return gp_path


# -- scenario construction --------------------------------------------------

_SENSOR_FIELDS = (
    "num_sensors", "num_sources", "sensing_radius", "comm_radius_min",
    "comm_radius_width", "output_dim", "noise_var", "emit_fraction",
    "seed", "max_resample",
)


def _comm_graph(topology: str, n: int) -> Graph:
    nodes = range(1, n + 1)
    if topology == "complete":
        return Graph.complete(nodes)
    if topology == "ring":
        edges = sorted({(min(i, i % n + 1), max(i, i % n + 1)) for i in nodes})
        return Graph.undirected_graph(nodes, edges)
    raise ConfigError(f"unknown topology {topology!r} (expected ring or complete)")


def _undirected_arms(comm, interference, partition, scheme="metropolis"):
    std = standard_layout(comm, interference, partition, weight_scheme=scheme)
    cust = design_layout(
        comm, interference, partition,
        DesignCriterion(ConnectivityMode.undirected_connected(), objective="min_edges"),
        weight_scheme=scheme,
    )
    return std, cust


def _build_coupled_qp(cfg: dict, seed: int) -> dict:
    """Seeded quadratic resource-allocation problem with one coupling row
    per component and a closed-form multiplier for reference."""
    n = int(cfg.get("num_agents", 4))
    d = int(cfg.get("dim", 1))
    bound = float(cfg.get("box_bound", 10.0))
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1.0, 1.0, size=(n, d))
    y_star = rng.uniform(-0.2, 0.2, size=d)
    offset = centers.sum(axis=0) - n * y_star

    def oracle(i: int, blocks) -> np.ndarray:
        return np.clip(centers[i - 1] - blocks[1], -bound, bound)

    def cost(i: int, x: np.ndarray) -> float:
        return 0.5 * float(np.sum((x - centers[i - 1]) ** 2))

    ccp = ConstraintCoupledProblem(
        x_dims=(d,) * n,
        component_dims=(d,),
        footprints=((1,),) * n,
        con_blocks={(1, i): np.eye(d) for i in range(1, n + 1)},
        con_offsets={(1, i): offset / n for i in range(1, n + 1)},
        argmin_oracle=oracle,
        cost=cost,
    )
    comm = _comm_graph(cfg.get("topology", "ring"), n)
    interference = frozenset((1, i) for i in range(1, n + 1))
    std, cust = _undirected_arms(comm, interference, Partition((d,)))
    return {"kind": "coupled_qp", "problem": ccp, "reference_dual": y_star,
            "layouts": (std, cust), "mode": ConnectivityMode.undirected_connected()}


def build_scenario(cfg: dict, seed_override: int | None = None) -> dict:
    """Turn a scenario config block into problem objects plus both layout
    arms; returns a bundle dict keyed by scenario kind."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("scenario block must be an object with a 'kind' field")
    kind = cfg["kind"]
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    if kind == "unicast":
        if cfg.get("preset") == "reference":
            sc = reference_scheme_unicast(seed)
        else:
            sc = sample_unicast(
                int(cfg["num_users"]), seed,
                max_path_len=int(cfg.get("max_path_len", 4)),
                extra_edge_prob=float(cfg.get("extra_edge_prob", 0.25)),
                relay_prob=float(cfg.get("relay_prob", 0.1)),
                alpha=float(cfg.get("alpha", 0.1)),
                beta=float(cfg.get("beta", 1e-3)),
            )
        inst = build_unicast(sc)
        return {"kind": kind, "instance": inst,
                "layouts": (inst.standard[0], inst.customized[0]),
                "mode": ConnectivityMode.undirected_connected()}
    if kind in ("regression", "lasso"):
        fields = {k: cfg[k] for k in _SENSOR_FIELDS if k in cfg}
        fields["seed"] = seed
        sc = SensorScenario(**fields)
        inst = build_regression(sc) if kind == "regression" else build_lasso(sc)
        return {"kind": kind, "instance": inst,
                "layouts": (inst.standard, inst.customized),
                "mode": ConnectivityMode.strongly_connected()}
    if kind == "random_game":
        n = int(cfg.get("num_agents", 5))
        game, x_star = build_random_quadratic_game(
            n, float(cfg.get("sparsity", 0.4)), seed,
            shift=float(cfg.get("shift", 1.0)))
        comm = _comm_graph(cfg.get("topology", "ring"), n)
        std, cust = _undirected_arms(comm, game.interference, Partition((1,) * n))
        return {"kind": kind, "game": game, "reference": x_star,
                "layouts": (std, cust),
                "mode": ConnectivityMode.undirected_connected()}
    if kind == "random_separable":
        n = int(cfg.get("num_agents", 6))
        m = int(cfg.get("num_components", 8))
        problem, y_star = build_random_separable(
            n, m, float(cfg.get("sparsity", 0.5)), seed)
        comm = _comm_graph(cfg.get("topology", "ring"), n)
        interference = frozenset(
            (p, i) for i, fp in enumerate(problem.footprints, start=1) for p in fp
        )
        std, cust = _undirected_arms(comm, interference, Partition((1,) * m))
        return {"kind": kind, "problem": problem, "reference": y_star,
                "layouts": (std, cust),
                "mode": ConnectivityMode.undirected_connected()}
    if kind == "coupled_qp":
        return _build_coupled_qp(cfg, seed)
    raise ConfigError(f"unknown scenario kind {kind!r}")


_DEFAULT_ALGORITHM = {
    "unicast": "gne",
    "regression": "pushsum",
    "lasso": "pushsum",
    "random_game": "ne",
    "random_separable": "augdgm",
    "coupled_qp": "dual",
}


def _arm_layout(bundle: dict, arm: str):
    if arm not in ("standard", "customized"):
        raise ConfigError(f"unknown arm {arm!r}")
    return bundle["layouts"][0 if arm == "standard" else 1]


# -- solver dispatch --------------------------------------------------------


def run_solver(bundle: dict, run_cfg: dict, arm: str) -> dict:
    """Dispatch one (scenario, arm) cell to its solver and collect a
    uniform result record."""
    kind = bundle["kind"]
    algorithm = run_cfg.get("algorithm", _DEFAULT_ALGORITHM[kind])
    layout = _arm_layout(bundle, arm)
    result = {
        "kind": kind,
        "arm": arm,
        "algorithm": algorithm,
        "unicast_cost": layout.communication_cost("unicast"),
        "broadcast_cost": layout.communication_cost("broadcast"),
        "estimates_per_agent": layout.mean_estimate_count(),
    }

    if algorithm == "gne":
        if kind != "unicast":
            raise ConfigError("gne solver requires a unicast scenario")
        inst = bundle["instance"]
        pair = inst.standard if arm == "standard" else inst.customized
        ops = build_gne_operators(inst.game, pair[0], pair[1])
        sc = inst.scenario
        alpha = float(run_cfg.get("alpha", sc.alpha))
        beta = float(run_cfg.get("beta", sc.beta))
        x0 = np.zeros(inst.game.total_action_dim)
        reference = None
        if run_cfg.get("reference", True):
            reference, _ = solve_vgne_centralized(
                inst.game, x0,
                step=float(run_cfg.get("reference_step", 0.05)),
                max_iters=int(run_cfg.get("reference_max_iters", 500000)),
            )
        state, trace = gne_solve(
            ops, x0, alpha, beta,
            max_iters=int(run_cfg.get("max_iters", 200000)),
            tol=float(run_cfg.get("tol", 1e-2)),
            reference=reference,
            residual_tol=run_cfg.get("residual_tol"),
            check_every=int(run_cfg.get("check_every", 50)),
        )
        # both exchange layers talk every iteration
        result["unicast_cost"] = trace.meta["unicast_cost_per_iter"]
        result["broadcast_cost"] = (pair[0].communication_cost("broadcast")
                                    + pair[1].communication_cost("broadcast"))
        result["certified"] = {
            "alpha": alpha, "beta": beta,
            "preconditioner_positive": preconditioner_positive(ops, beta),
        }
        result["final_merit"] = trace.last("residual")
        result["solution"] = state.x
        result["trace"] = trace
    elif algorithm == "ne":
        if kind != "random_game":
            raise ConfigError("ne solver requires a random_game scenario")
        game = bundle["game"]
        if "alpha" in run_cfg:
            alpha = float(run_cfg["alpha"])
            cert = None
        else:
            # sparse designs can push the best certifiable rate close to 1;
            # loosen the target rather than fail outright
            target = float(run_cfg.get("rho_target", 0.999))
            cert = None
            for _ in range(4):
                try:
                    cert = search_ne_step_size(layout, game, target=target)
                    break
                except GameError:
                    target = 1.0 - 0.1 * (1.0 - target)
            if cert is None:
                raise GameError("no certifiable step size found for this design")
            alpha = cert.alpha
        hat, trace = ne_solve(
            layout, game, alpha,
            max_iters=int(run_cfg.get("max_iters", 10000)),
            tol=float(run_cfg.get("tol", 1e-10)),
            reference=bundle["reference"],
            certificate=cert,
        )
        result["certified"] = {"alpha": alpha}
        if cert is not None:
            result["certified"]["rho"] = cert.rho
        result["final_merit"] = trace.last("distance")
        result["solution"] = layout.component_means(hat)
        result["trace"] = trace
    elif algorithm in ("augdgm", "abc"):
        if kind != "random_separable":
            raise ConfigError(f"{algorithm} solver requires a random_separable scenario")
        problem = bundle["problem"]
        matrices = augdgm_matrices(layout)
        bound = matrices.gamma_bound(problem)
        gamma = float(run_cfg.get("gamma", 0.5 * bound))
        common = dict(
            gamma=gamma,
            max_iters=int(run_cfg.get("max_iters", 2000)),
            reference=bundle["reference"],
            merit_every=int(run_cfg.get("merit_every", 10)),
        )
        if algorithm == "augdgm":
            hat, trace = augdgm_solve(layout, problem, **common)
        else:
            hat, trace = abc_solve(layout, matrices, problem, **common)
        result["certified"] = {"gamma": gamma, "gamma_bound": bound}
        result["final_merit"] = trace.last("merit")
        result["solution"] = layout.component_means(hat)
        result["trace"] = trace
    elif algorithm == "admm":
        if kind != "random_separable":
            raise ConfigError("admm solver requires a random_separable scenario")
        problem = bundle["problem"]
        alpha = float(run_cfg.get("alpha", 0.5))
        hat, trace = admm_solve(
            layout, problem, alpha,
            max_iters=int(run_cfg.get("max_iters", 5000)),
            tol=float(run_cfg.get("tol", 1e-10)),
            reference=bundle["reference"],
        )
        result["certified"] = {"alpha": alpha}
        result["final_merit"] = trace.last("distance")
        result["solution"] = layout.component_means(hat)
        result["trace"] = trace
    elif algorithm == "pushsum":
        if kind not in ("regression", "lasso"):
            raise ConfigError("pushsum solver requires a regression or lasso scenario")
        inst = bundle["instance"]
        problem = inst.problem
        reference = problem.solve_reference()
        gamma = power_step_schedule(
            float(run_cfg.get("step_scale", 1.0)),
            float(run_cfg.get("step_exponent", 0.51)),
        )
        weights = constant_design_weights(layout)
        state, trace = pushsum_solve(
            layout, lambda k: weights, problem, gamma,
            max_iters=int(run_cfg.get("max_iters", 20000)),
            reference=reference,
            stop_tol=float(run_cfg.get("stop_tol", 1e-2)),
            merit=lambda hat: merit_v(layout, problem, hat, reference),
            check_every=int(run_cfg.get("check_every", 100)),
        )
        result["certified"] = {
            "step_scale": float(run_cfg.get("step_scale", 1.0)),
            "step_exponent": float(run_cfg.get("step_exponent", 0.51)),
        }
        result["final_merit"] = trace.last("merit")
        result["solution"] = layout.component_means(state.y)
        result["trace"] = trace
    elif algorithm == "dual":
        if kind != "coupled_qp":
            raise ConfigError("dual solver requires a coupled_qp scenario")
        ccp = bundle["problem"]
        gamma = power_step_schedule(
            float(run_cfg.get("step_scale", 1.0)),
            float(run_cfg.get("step_exponent", 0.51)),
        )
        weights = constant_design_weights(layout)
        y_mean, x_final, trace = constraint_coupled_solve(
            layout, ccp, lambda k: weights, gamma,
            max_iters=int(run_cfg.get("max_iters", 5000)),
            reference_dual=bundle["reference_dual"],
        )
        result["certified"] = {
            "step_scale": float(run_cfg.get("step_scale", 1.0)),
            "step_exponent": float(run_cfg.get("step_exponent", 0.51)),
        }
        result["final_merit"] = trace.last("dual_distance")
        result["solution"] = y_mean
        trace.meta.pop("x_ergodic", None)
        result["trace"] = trace
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")

    trace = result["trace"]
    if "k" in trace.columns:
        # the two-matrix solvers count iterations from 1, everything else
        # from 0
        offset = 0 if algorithm in ("augdgm", "abc") else 1
        result["iterations"] = int(trace.last("k")) + offset
    else:
        result["iterations"] = trace.iterations
    return result


# -- subcommands ------------------------------------------------------------


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top-level config must be a JSON object")
    return cfg


def _per_agent_counts(layout: EndLayout) -> dict[int, int]:
    counts = {i: 0 for i in layout.agents}
    for p in layout.partition.components:
        for i in layout.holders(p):
            counts[i] += 1
    return counts


def cmd_design(args) -> int:
    cfg = _load_config(args.config)
    bundle = build_scenario(cfg.get("scenario", cfg), args.seed)
    os.makedirs(args.out, exist_ok=True)
    report = {"kind": bundle["kind"], "arms": {}}
    for arm in ("standard", "customized"):
        layout = _arm_layout(bundle, arm)
        path = os.path.join(args.out, f"{arm}_layout.json")
        write_json(path, layout.to_json_dict())
        violations = layout.validate(bundle["mode"])
        report["arms"][arm] = {
            "layout_file": os.path.basename(path),
            "violations": violations,
            "unicast_cost": layout.communication_cost("unicast"),
            "broadcast_cost": layout.communication_cost("broadcast"),
            "mean_estimate_count": layout.mean_estimate_count(),
            "per_agent_estimate_counts": _per_agent_counts(layout),
        }
        print(f"{arm}: mean estimate size {layout.mean_estimate_count():g}, "
              f"unicast cost {layout.communication_cost('unicast'):g}, "
              f"broadcast cost {layout.communication_cost('broadcast'):g}")
    write_json(os.path.join(args.out, "design_report.json"), report)
    bad = [v for arm in report["arms"].values() for v in arm["violations"]]
    if bad:
        for v in bad:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    scenario_cfg = cfg.get("scenario")
    if scenario_cfg is None:
        raise ConfigError("run config needs a 'scenario' block")
    run_cfg = cfg.get("run", {})
    arm = cfg.get("arm", "customized")
    bundle = build_scenario(scenario_cfg, args.seed)
    if args.dry_run:
        print(f"config ok: kind={bundle['kind']}, arm={arm}, "
              f"algorithm={run_cfg.get('algorithm', _DEFAULT_ALGORITHM[bundle['kind']])}")
        return EXIT_OK
    start = time.perf_counter()
    result = run_solver(bundle, run_cfg, arm)
    wall = time.perf_counter() - start
    os.makedirs(args.out, exist_ok=True)
    trace = result.pop("trace")
    csv_path = os.path.join(args.out, "trace.csv")
    header = write_trace_csv(csv_path, trace)
    if args.emit_plots:
        emit_plot_script(csv_path, header)
    summary = dict(result)
    summary["final"] = {name: trace.last(name) for name in trace.columns
                        if trace.columns[name]}
    summary["trace_meta"] = trace.meta
    summary["wall_seconds"] = wall
    write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"{result['algorithm']} ({arm}): {result['iterations']} iterations, "
          f"final merit {result['final_merit']:.3e}")
    return EXIT_OK


def _experiment_cell(job: tuple[dict, dict, int, object]) -> dict:
    """One sweep cell: both arms on the same instance and seed."""
    scenario_cfg, run_cfg, seed, value = job
    bundle = build_scenario(scenario_cfg, seed)
    row = {"value": value, "seed": seed}
    for arm in ("standard", "customized"):
        start = time.perf_counter()
        res = run_solver(bundle, run_cfg, arm)
        wall = time.perf_counter() - start
        prefix = "std" if arm == "standard" else "cust"
        row[f"{prefix}_iterations"] = res["iterations"]
        row[f"{prefix}_unicast_cost"] = res["unicast_cost"]
        row[f"{prefix}_broadcast_cost"] = res["broadcast_cost"]
        row[f"{prefix}_estimates_per_agent"] = res["estimates_per_agent"]
        row[f"{prefix}_final_merit"] = res["final_merit"]
        row[f"{prefix}_wall_seconds"] = wall
    return row


_EXPERIMENT_COLUMNS = [
    "value", "seed",
    "std_iterations", "cust_iterations",
    "std_unicast_cost", "cust_unicast_cost",
    "std_broadcast_cost", "cust_broadcast_cost",
    "std_estimates_per_agent", "cust_estimates_per_agent",
    "std_final_merit", "cust_final_merit",
]


def cmd_experiment(args) -> int:
    cfg = _load_config(args.config)
    base = cfg.get("scenario")
    if base is None:
        raise ConfigError("experiment config needs a 'scenario' block")
    sweep = cfg.get("sweep", {})
    parameter = sweep.get("parameter")
    values = sweep.get("values", [None])
    seeds = cfg.get("seeds", [int(args.seed) if args.seed is not None else 0])
    run_cfg = cfg.get("run", {})
    jobs = []
    for value in values:
        scenario_cfg = dict(base)
        if parameter is not None:
            scenario_cfg[parameter] = value
        for seed in seeds:
            jobs.append((scenario_cfg, run_cfg, int(seed), value))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_experiment_cell, jobs))
    else:
        rows = [_experiment_cell(job) for job in jobs]
    os.makedirs(args.out, exist_ok=True)
    header = ([parameter or "value"] + _EXPERIMENT_COLUMNS[1:])
    table = [[row[c] for c in _EXPERIMENT_COLUMNS] for row in rows]
    csv_path = os.path.join(args.out, "experiment.csv")
    _write_csv(csv_path, header, table)
    if args.emit_plots:
        emit_plot_script(csv_path, header)
    summary = {
        "parameter": parameter,
        "values": values,
        "seeds": list(seeds),
        "wall_seconds": {
            f"{row['value']}/{row['seed']}": {
                "standard": row["std_wall_seconds"],
                "customized": row["cust_wall_seconds"],
            }
            for row in rows
        },
    }
    write_json(os.path.join(args.out, "experiment_summary.json"), summary)
    worse = sum(1 for row in rows
                if row["cust_unicast_cost"] > row["std_unicast_cost"])
    print(f"{len(rows)} cells; customized per-iteration unicast cost exceeds "
          f"standard on {worse} of them")
    return EXIT_OK


_MODES = {
    "undirected": ConnectivityMode.undirected_connected,
    "strong": ConnectivityMode.strongly_connected,
}


def cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    layout_file = cfg.get("layout_file")
    if layout_file is None:
        raise ConfigError("validate config needs a 'layout_file' field")
    path = layout_file
    if not os.path.isabs(path):
        path = os.path.join(os.path.dirname(os.path.abspath(args.config)), path)
    try:
        with open(path) as fh:
            layout = EndLayout.from_json_dict(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read layout {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"layout file {path} is malformed: {exc}") from exc
    mode_name = cfg.get("mode", "undirected")
    if mode_name == "rooted":
        roots = cfg.get("roots")
        if not isinstance(roots, dict):
            raise ConfigError("rooted mode needs a 'roots' mapping {component: root}")
        mode = ConnectivityMode.rooted({int(p): int(r) for p, r in roots.items()})
    elif mode_name in _MODES:
        mode = _MODES[mode_name]()
    else:
        raise ConfigError(f"unknown connectivity mode {mode_name!r}")
    violations = layout.validate(mode)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"layout ok: {len(layout.agents)} agents, "
          f"{len(layout.partition.components)} components, "
          f"mean estimate size {layout.mean_estimate_count():g}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------


def _setup_logging() -> None:
    name = os.environ.get("END_LOG_LEVEL", "warn").lower()
    if name not in _LOG_LEVELS:
        raise ConfigError(
            f"END_LOG_LEVEL must be one of {sorted(_LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=_LOG_LEVELS[name],
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="endnet",
        description="Design estimate-exchange layouts and run distributed solvers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "design": (cmd_design, "build both layout arms and report their costs"),
        "run": (cmd_run, "run one solver and write its trace"),
        "experiment": (cmd_experiment, "sweep standard vs customized arms"),
        "validate": (cmd_validate, "check a layout file against a connectivity mode"),
    }
    for name, (fn, help_text) in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for sweeps")
        p.add_argument("--emit-plots", action="store_true",
                       help="write a gnuplot script next to each CSV")
        if name == "run":
            p.add_argument("--dry-run", action="store_true",
                           help="validate the config and exit")
        p.set_defaults(handler=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.handler(args)
    except DesignInfeasible as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        if exc.components:
            print(f"affected components: {list(exc.components)}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ScenarioError, GameError, OptimError, LayoutError,
            GraphError, KeyError, TypeError) as exc:
        # scenario/game/optim errors at this level mean bad parameters
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
