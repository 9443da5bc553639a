"""Command-line entry point: ``dsmpc solve | simulate | bench``."""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any

import click
import numpy as np

from . import admm
from .assembly import AssemblyError, HorizonInputs, assemble, precheck, relax_to_reference
from .controllers import CONTROLLERS, MpcOptions, make_controller, run_experiment
from .network import (
    Network,
    NetworkError,
    Partition,
    builtin_network,
    default_partition,
    load_network,
    partition_network,
    per_junction_partition,
    single_partition,
)
from .scenario import ScenarioConfig, ScenarioError, builtin_scenario, controller_params, load_scenario
from .stochastic import ParamError

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("dsmpc")


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def _network(spec: str) -> Network:
    try:
        if Path(spec).is_file():
            return load_network(spec)
        return builtin_network(spec)
    except (NetworkError, OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"network {spec!r}: {exc}") from exc


def _partition(net: Network, spec: str) -> Partition:
    try:
        if spec == "default":
            return default_partition(net)
        if spec == "per-junction":
            return per_junction_partition(net)
        if spec == "single":
            return single_partition(net)
        with open(spec) as fh:
            doc = json.load(fh)
        return partition_network(net, doc.get("partition", doc))
    except (NetworkError, OSError, ValueError) as exc:
        raise ConfigError(f"partition {spec!r}: {exc}") from exc


def _scenario(spec: str, seed: int, steps: int | None) -> ScenarioConfig:
    over: dict[str, Any] = {"seed": seed}
    if steps is not None:
        over["steps"] = steps
    try:
        if Path(spec).is_file():
            scn = load_scenario(spec)
            return ScenarioConfig.from_dict({**scn.to_dict(), **over})
        return builtin_scenario(spec, **over)
    except (ScenarioError, OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"scenario {spec!r}: {exc}") from exc


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _jsonable(v: Any) -> Any:
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


common = [
    click.option("--network", default="fig1", show_default=True, help="Bundled name (fig1, grid:RxC) or JSON path."),
    click.option("--scenario", default="scenario1", show_default=True, help="scenario1|2|3 or JSON path."),
    click.option("--partition", default="default", show_default=True, help="default | per-junction | single | JSON path."),
    click.option("--rho", type=float, default=0.01, show_default=True),
    click.option("--tol", type=float, default=None, help="Residual tolerance [solve, bench: 1e-6; simulate: 1e-4]."),
    click.option("--max-iter", type=int, default=None, help="Iteration cap [solve, bench: 20000; simulate: 3000]."),
    click.option("--horizon", type=int, default=3, show_default=True),
    click.option("--epsilon", type=float, default=0.2, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


# one-shot solves are run to the reference accuracy; closed loops trade accuracy for time
SOLVE_DEFAULTS = (1e-6, 20_000)
LOOP_DEFAULTS = (1e-4, 3_000)


def _resolve(tol: float | None, max_iter: int | None, defaults: tuple[float, int]) -> tuple[float, int]:
    return (defaults[0] if tol is None else tol, defaults[1] if max_iter is None else max_iter)


def _check(horizon: int, epsilon: float, rho: float, tol: float, max_iter: int) -> None:
    if horizon < 1:
        raise ConfigError("--horizon must be at least 1")
    if not 0 < epsilon < 1:
        raise ConfigError("--epsilon must lie in (0, 1)")
    if rho <= 0 or tol <= 0 or max_iter < 1:
        raise ConfigError("--rho and --tol must be positive, --max-iter at least 1")


@click.group()
def main() -> None:
    """Distributed stochastic MPC for traffic signals."""
    level = os.environ.get("DSMPC_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


@main.command()
@with_common
@click.option("--controller", type=click.Choice(["stochastic-mpc", "nominal-mpc"]), default="stochastic-mpc")
@click.option("--minute", type=int, default=0, show_default=True, help="Scenario minute the moments refer to.")
@click.option("--guard/--no-guard", default=False, help="Loosen rows that make zero flow infeasible.")
@click.option("--trace/--no-trace", default=True, help="Write per-iteration JSON lines.")
@click.option("--counts", "counts_path", type=click.Path(), default=None, help="JSON {link: count}; default: network initial counts.")
def solve(
    network, scenario, partition, rho, tol, max_iter, horizon, epsilon, seed, out, controller, minute, guard, trace, counts_path
):
    """Assemble and solve one MPC step with the distributed solver."""
    tol, max_iter = _resolve(tol, max_iter, SOLVE_DEFAULTS)
    _check(horizon, epsilon, rho, tol, max_iter)
    net = _network(network)
    part = _partition(net, partition)
    scn = _scenario(scenario, seed, None)
    config = {
        "command": "solve",
        "network": network,
        "partition": partition,
        "scenario": scn.to_dict(),
        "controller": controller,
        "rho": rho,
        "tol": tol,
        "max_iter": max_iter,
        "horizon": horizon,
        "epsilon": epsilon,
        "seed": seed,
        "minute": minute,
        "guard": guard,
    }
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    counts = {z: lk.initial_count for z, lk in net.links.items()}
    if counts_path is not None:
        try:
            with open(counts_path) as fh:
                counts.update({str(z): float(v) for z, v in json.load(fh).items()})
        except (OSError, ValueError, AttributeError) as exc:
            raise ConfigError(f"counts {counts_path!r}: {exc}") from exc
        unknown = set(counts) - set(net.links)
        if unknown:
            raise ConfigError(f"counts for unknown links {sorted(unknown)}")
    config["counts"] = counts
    inputs = HorizonInputs(counts, epsilon=epsilon)
    issues = precheck(net, inputs)
    if issues:
        _write_json(outdir / "stats.json", {"config": config, "status": "infeasible", "issues": issues})
        click.echo("infeasible: " + "; ".join(json.dumps(i) for i in issues), err=True)
        sys.exit(EXIT_INFEASIBLE)
    try:
        params = controller_params(net, scn, minute, horizon, nominal=controller == "nominal-mpc")
        probs = assemble(net, part, params, inputs, rho=rho)
    except (AssemblyError, ParamError) as exc:
        raise ConfigError(str(exc)) from exc
    report = []
    if guard:
        probs, report = relax_to_reference(probs)
    trace_fh = None
    if trace:
        trace_fh = open(outdir / "trace.jsonl", "w")
        trace_fh.write(json.dumps({"config": config}, sort_keys=True) + "\n")
    try:
        res = admm.solve(probs, tol=tol, max_iter=max_iter, trace=trace_fh)
    except admm.AdmmError as exc:
        raise ConfigError(str(exc)) from exc
    finally:
        if trace_fh is not None:
            trace_fh.close()
    solution = {
        "config": config,
        "agents": {
            s: {"labels": [list(lab) for lab in probs[s].layout.labels], "x": res.x[s].tolist()} for s in probs
        },
    }
    _write_json(outdir / "solution.json", solution)
    stats = {"config": config, "status": "converged" if res.converged else "not_converged", **res.stats()}
    stats["residual_history"] = res.residual_history
    stats["relaxed"] = [{**r, "tag": list(r["tag"])} for r in report]
    _write_json(outdir / "stats.json", _jsonable(stats))
    click.echo(
        f"{'converged' if res.converged else 'NOT converged'} after {res.iterations} iterations; "
        f"residual {res.residual:.3e}; objective {res.objective:.6f}"
    )
    if not res.converged:
        click.echo(res.diagnosis or "", err=True)
        sys.exit(EXIT_NONCONVERGED)


@main.command()
@with_common
@click.option(
    "--controller",
    "controllers",
    multiple=True,
    type=click.Choice(list(CONTROLLERS) + ["all"]),
    default=["stochastic-mpc"],
    show_default=True,
)
@click.option("--steps", type=int, default=None, help="Control steps (minutes); default from the scenario.")
def simulate(network, scenario, partition, rho, tol, max_iter, horizon, epsilon, seed, out, controllers, steps):
    """Closed-loop run; writes metrics_<controller>.csv and summary_<controller>.json."""
    tol, max_iter = _resolve(tol, max_iter, LOOP_DEFAULTS)
    _check(horizon, epsilon, rho, tol, max_iter)
    if steps is not None and steps < 0:
        raise ConfigError("--steps must be nonnegative")
    net = _network(network)
    part = _partition(net, partition)
    scn = _scenario(scenario, seed, steps)
    kinds = list(CONTROLLERS) if "all" in controllers else list(dict.fromkeys(controllers))
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    mpc = MpcOptions(horizon=horizon, epsilon=epsilon, rho=rho, tol=tol, max_iter=max_iter)
    for kind in kinds:
        config = {
            "command": "simulate",
            "network": network,
            "partition": partition,
            "scenario": scn.to_dict(),
            "controller": kind,
            "mpc": {k: v for k, v in vars(mpc).items() if k != "stochastic"},
            "seed": seed,
            "steps": scn.steps,
        }
        ctrl = make_controller(kind, net, part, scn, mpc)
        res = run_experiment(net, scn, ctrl, config=config)
        csv_text = "# " + json.dumps(config, sort_keys=True) + "\n" + res.csv_text()
        (outdir / f"metrics_{kind}.csv").write_text(csv_text)
        (outdir / f"summary_{kind}.json").write_text(
            json.dumps(_jsonable({"config": config, "summary": res.summary}), indent=2, sort_keys=True) + "\n"
        )
        s = res.summary
        click.echo(
            f"{kind}: entered {s['entered']:.1f}, exited {s['exited']:.1f}, crossed {s['crossed']:.1f}, "
            f"mean wait {s['mean_wait_s']:.1f} s"
        )


@main.command()
@with_common
@click.option("--horizons", default="1,2,3", show_default=True, help="Comma-separated horizon lengths.")
@click.option("--instances", type=int, default=5, show_default=True, help="Random instances per horizon.")
def bench(network, scenario, partition, rho, tol, max_iter, horizon, epsilon, seed, out, horizons, instances):
    """Iteration counts and wall times over random instances, per horizon, nominal and stochastic."""
    tol, max_iter = _resolve(tol, max_iter, SOLVE_DEFAULTS)
    _check(horizon, epsilon, rho, tol, max_iter)
    try:
        ks = [int(k) for k in horizons.split(",") if k.strip()]
    except ValueError as exc:
        raise ConfigError(f"--horizons: {exc}") from exc
    if not ks or min(ks) < 1 or instances < 1:
        raise ConfigError("--horizons needs values >= 1 and --instances at least 1")
    net = _network(network)
    part = _partition(net, partition)
    scn = _scenario(scenario, seed, None)
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(instances):
        counts = {z: float(rng.uniform(0.05, 0.5) * lk.capacity) for z, lk in net.links.items()}
        cases.append((counts, int(rng.integers(0, max(scn.steps, 1)))))
    rows = []
    for K in ks:
        for mode in ("nominal", "stochastic"):
            its, dist_t, cent_t, conv = [], [], [], 0
            for counts, minute in cases:
                params = controller_params(net, scn, minute, K, nominal=mode == "nominal")
                probs = assemble(net, part, params, HorizonInputs(counts, epsilon=epsilon), rho=rho)
                probs, _ = relax_to_reference(probs)
                res = admm.solve(probs, tol=tol, max_iter=max_iter)
                its.append(res.iterations)
                dist_t.append(res.critical_path_time)
                cent_t.append(res.compute_time)
                conv += int(res.converged)
            rows.append(
                {
                    "K": K,
                    "mode": mode,
                    "avg_iterations": float(np.mean(its)),
                    "max_iterations": int(np.max(its)),
                    "avg_distributed_time_s": float(np.mean(dist_t)),
                    "max_distributed_time_s": float(np.max(dist_t)),
                    "avg_centralized_time_s": float(np.mean(cent_t)),
                    "converged": conv,
                    "instances": instances,
                }
            )
            click.echo(f"K={K} {mode}: avg {rows[-1]['avg_iterations']:.0f} it, max {rows[-1]['max_iterations']}")
    config = {
        "command": "bench",
        "network": network,
        "partition": partition,
        "scenario": scn.to_dict(),
        "rho": rho,
        "tol": tol,
        "max_iter": max_iter,
        "epsilon": epsilon,
        "horizons": ks,
        "instances": instances,
        "seed": seed,
    }
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    header = list(rows[0])
    lines = ["# " + json.dumps(config, sort_keys=True), ",".join(header)]
    lines += [",".join(repr(r[h]) if isinstance(r[h], float) else str(r[h]) for h in header) for r in rows]
    (outdir / "bench.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":  # pragma: no cover
    main()
