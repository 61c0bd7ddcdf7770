"""Command-line entry point: ``diftgame {mincut,simulate,verify,run}``."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from . import __version__, data_path
from .errors import (
    ConfigMismatch,
    CyclicGraph,
    DiftError,
    Disconnected,
    EmptyCut,
    InstanceTooLarge,
    InvalidTheta,
    NoAttackPath,
    NoFeasibleCut,
    NoQualifyingPath,
    ParseError,
    PathExplosion,
    StrategyError,
    ValidationError,
)
from .flownet import build_flow_network, enumerate_attack_paths, is_cut, min_cut, split_nodes
from .game import NoiseModel, PayoffParams, compile_model
from .graph import AcyclicMode, InfoFlowGraph, NodeId, ensure_acyclic, load_ifg, prune_to_attack_subgraph
from .oracle import verify_equilibrium
from .simulator import (
    ExperimentConfig,
    Row,
    compare_placements,
    cost_series,
    cost_sweep,
    plot_series,
    rows_to_csv,
    simulate,
    sweep_theta,
)
from .strategy import (
    AdversaryStrategy,
    DefenderStrategy,
    nash_adversary,
    placement_defender,
    theta_bound,
)

EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NO_PATH = 4
EXIT_MISMATCH = 5
EXIT_VIOLATION = 6
EXIT_TOO_LARGE = 7
EXIT_NOT_REPRODUCED = 8

_EXIT_CODES: list[tuple[type, int]] = [
    (ParseError, EXIT_PARSE),
    (ConfigMismatch, EXIT_MISMATCH),
    ((InstanceTooLarge, PathExplosion), EXIT_TOO_LARGE),
    ((NoAttackPath, Disconnected, NoQualifyingPath), EXIT_NO_PATH),
    (
        (ValidationError, CyclicGraph, InvalidTheta, EmptyCut, StrategyError, NoFeasibleCut),
        EXIT_VALIDATION,
    ),
]

DEFAULTS: dict[str, Any] = {
    "experiment": "single",
    "flows": 1,
    "seed": 0,
    "trials": 1000,
    "fn": 0.0,
    "fp": 0.0,
    "theta": None,
    "thetas": None,
    "cells": None,
    "placement": "mincut",
    "placements": None,
    "adversary": "qualifying",
    "payoffs": None,
    "cost_scales": None,
    "q": None,
    "label": "",
    "acyclic": "reject",
    "workers": 1,
}

EXPERIMENTS = ("single", "sweep", "placements", "cost")


def exit_code_for(exc: BaseException) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(exc, types):
            return code
    return 1


def _fail(exc: BaseException) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(exit_code_for(exc))


def resolve_path(name: str | os.PathLike, base: Path | None = None) -> Path:
    """Find ``name`` relative to ``base``, the cwd, or the bundled data."""
    p = Path(name)
    candidates = [p] if p.is_absolute() else ([base / p] if base else []) + [p]
    for c in candidates:
        if c.exists():
            return c.resolve()
    bundled = Path(data_path(p.name))
    if not p.is_absolute() and len(p.parts) == 1 and bundled.exists():
        return bundled
    raise ParseError(f"cannot find file {str(name)!r}")


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc


def _dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(data: str | bytes) -> str:
    raw = data.encode() if isinstance(data, str) else data
    return hashlib.sha256(raw).hexdigest()


def prepare_graph(path: Path, acyclic: str = "reject") -> InfoFlowGraph:
    """Load, make acyclic and prune to the attack subgraph."""
    return prune_to_attack_subgraph(ensure_acyclic(load_ifg(path), AcyclicMode(acyclic)))


def parse_ids(text: str, g: InfoFlowGraph) -> list[NodeId]:
    """Comma-separated node ids; digit strings become ints when the graph uses them."""
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        v: NodeId = int(tok) if tok.lstrip("-").isdigit() and int(tok) in g.nodes else tok
        if v not in g.nodes:
            raise ConfigMismatch(f"node {tok!r} is not in the graph")
        out.append(v)
    return out


def resolve_placement(choice: str, g: InfoFlowGraph, base: Path | None = None) -> list[NodeId]:
    """Node set named by ``mincut``, ``cut:<ids>``, ``noncut:<ids>`` or ``rules:<file>``."""
    kind, _, arg = choice.partition(":")
    if kind == "mincut" and not arg:
        return min_cut(split_nodes(build_flow_network(g), g.cost)).sorted_traps()
    if kind == "cut":
        nodes = parse_ids(arg, g)
        if not is_cut(g, nodes):
            raise ValidationError("placement cut:<ids> must disconnect entries from destinations", choice)
        return nodes
    if kind == "noncut":
        nodes = parse_ids(arg, g)
        if is_cut(g, nodes):
            raise ValidationError("placement noncut:<ids> must leave an attack path open", choice)
        return nodes
    if kind == "rules":
        raw = _read_json(resolve_path(arg, base))
        ids = raw.get("trap_nodes") if isinstance(raw, dict) else raw
        if not isinstance(ids, list):
            raise ParseError(f"rules file {arg!r} needs a trap_nodes list")
        return parse_ids(",".join(str(v) for v in ids), g)
    raise ValidationError("placement is one of mincut, cut:<ids>, noncut:<ids>, rules:<file>", choice)


def resolve_adversary(choice: Any, g: InfoFlowGraph, traps: list[NodeId]) -> AdversaryStrategy:
    paths = enumerate_attack_paths(build_flow_network(g))
    if choice == "qualifying":
        return nash_adversary(paths, traps)
    if choice == "all":
        return AdversaryStrategy.uniform(paths)
    if isinstance(choice, list):
        return AdversaryStrategy.pure(parse_ids(",".join(map(str, choice)), g))
    raise ValidationError("adversary is 'qualifying', 'all' or a node list", choice)


def _params(cfg: dict[str, Any]) -> PayoffParams:
    return PayoffParams(**cfg["payoffs"]) if cfg["payoffs"] else PayoffParams()


def _cells(cfg: dict[str, Any]) -> list[tuple[float, float]] | None:
    return [tuple(c) for c in cfg["cells"]] if cfg["cells"] is not None else None


def run_experiment(graph_path: Path, cfg: dict[str, Any], base: Path | None) -> dict[str, str]:
    """Execute a resolved simulate config; returns output file contents by name."""
    if cfg["experiment"] not in EXPERIMENTS:
        raise ValidationError(f"experiment is one of {', '.join(EXPERIMENTS)}", cfg["experiment"])
    g = prepare_graph(graph_path, cfg["acyclic"])
    W = int(cfg["flows"])
    traps = resolve_placement(cfg["placement"], g, base)
    defender = placement_defender(traps, W, cfg["theta"])
    config = ExperimentConfig(
        trials=int(cfg["trials"]),
        seed=int(cfg["seed"]),
        W=W,
        noise=NoiseModel(fn=cfg["fn"], fp=cfg["fp"]),
        params=_params(cfg),
        defender=defender,
        adversary=resolve_adversary(cfg["adversary"], g, traps),
        label=cfg["label"] or cfg["placement"],
    )
    workers = int(cfg["workers"])
    model = compile_model(g, W)
    exp = cfg["experiment"]
    placements = {
        name: resolve_placement(choice, g, base) for name, choice in (cfg["placements"] or {}).items()
    }
    if exp == "single":
        est = simulate(config, model, workers)
        rows = [Row(config.label, defender.theta or 0.0, config.noise.fp, config.noise.fn, est)]
        plot = plot_series(rows)
    elif exp == "sweep":
        thetas = cfg["thetas"] or [theta_bound(W, len(traps))]
        rows = sweep_theta(config, model, thetas, _cells(cfg), workers)
        plot = plot_series(rows)
    elif exp == "placements":
        if not placements:
            raise EmptyCut("placements experiment needs a non-empty placements map")
        rows = compare_placements(config, model, placements, _cells(cfg), workers)
        plot = plot_series(rows)
    else:
        if not placements or not cfg["cost_scales"] or cfg["q"] is None:
            raise ValidationError("cost experiment needs placements, cost_scales and q")
        q = _load_q(cfg["q"], g, base)
        scales = _scales(cfg["cost_scales"])
        rows = cost_sweep(config, g, q, scales, placements, workers)
        plot = cost_series(rows)
    return {"results.csv": rows_to_csv(rows), "plot.json": _dumps(plot)}


def _scales(choice: Any) -> list[float]:
    if isinstance(choice, dict):
        return [float(x) for x in np.logspace(choice["log10_min"], choice["log10_max"], int(choice["num"]))]
    return [float(x) for x in choice]


def _load_q(choice: Any, g: InfoFlowGraph, base: Path | None) -> dict[NodeId, float]:
    raw = _read_json(resolve_path(choice, base)) if isinstance(choice, str) else choice
    raw = raw.get("q", raw)
    out = {}
    for k, v in raw.items():
        (node,) = parse_ids(str(k), g)
        out[node] = float(v)
    return out


def resolve_config(flags: dict[str, Any], config_file: Path | None) -> dict[str, Any]:
    """Defaults, then flags, then the config file (the file wins)."""
    cfg = dict(DEFAULTS)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if config_file is not None:
        raw = _read_json(config_file)
        if not isinstance(raw, dict):
            raise ParseError("config file must hold a JSON object")
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ValidationError("config keys must be known settings", sorted(unknown))
        cfg.update(raw)
    return cfg


def write_outputs(
    out_dir: Path, outputs: dict[str, str], manifest_extra: dict[str, Any]
) -> dict[str, Any]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in sorted(outputs):
        (out_dir / name).write_text(outputs[name])
        files[name] = {"path": str(out_dir / name), "sha256": _sha256(outputs[name])}
    manifest = {"tool": "diftgame", "version": __version__, **manifest_extra, "outputs": files}
    (out_dir / "manifest.json").write_text(_dumps(manifest))
    return manifest


def _guard(fn: Callable[..., None]) -> Callable[..., None]:
    """Map package errors onto the documented exit codes."""

    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            fn(*args, **kwargs)
        except DiftError as exc:
            _fail(exc)
        except (ValueError, KeyError, TypeError) as exc:
            click.echo(f"error: invalid setting: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(__version__, prog_name="diftgame")
def main() -> None:
    """Min-cut DIFT defense strategies and stochastic-game simulation."""


acyclic_option = click.option(
    "--acyclic",
    type=click.Choice(["reject", "version"]),
    default=None,
    help="Reject cyclic graphs or split cycles into node versions.",
)


@main.command("mincut")
@click.argument("graph")
@click.option("--flows", "-W", type=int, default=1, show_default=True, help="Number of tagged flows W.")
@acyclic_option
@_guard
def cmd_mincut(graph: str, flows: int, acyclic: str | None) -> None:
    """Print the min-cut trap set, its capacity and theta as JSON."""
    g = prepare_graph(resolve_path(graph), acyclic or "reject")
    cut = min_cut(split_nodes(build_flow_network(g), g.cost))
    report = cut.to_dict()
    report["r"] = cut.r
    report["theta"] = theta_bound(flows, cut.r)
    click.echo(_dumps(report), nl=False)


@main.command("simulate")
@click.argument("graph")
@click.option("--config", "config_file", default=None, help="JSON config; its keys override flags.")
@click.option("--flows", "-W", type=int, default=None, help="Number of tagged flows W.")
@click.option("--seed", type=int, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--fn", type=float, default=None, help="False-negative rate.")
@click.option("--fp", type=float, default=None, help="False-positive rate.")
@click.option("--theta", type=float, default=None, help="Per-node trap probability.")
@click.option("--placement", default=None, help="mincut | cut:<ids> | noncut:<ids> | rules:<file>")
@click.option("--workers", type=int, default=None, help="Worker processes for trials.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@acyclic_option
@_guard
def cmd_simulate(graph: str, config_file: str | None, out_dir: str | None, **flags: Any) -> None:
    """Run an experiment and write results.csv, plot.json and manifest.json."""
    graph_path = resolve_path(graph)
    cfg_path = resolve_path(config_file) if config_file else None
    cfg = resolve_config(flags, cfg_path)
    base = cfg_path.parent if cfg_path else None
    outputs = run_experiment(graph_path, cfg, base)
    if out_dir is None:
        click.echo(outputs["results.csv"], nl=False)
        return
    write_outputs(
        Path(out_dir),
        outputs,
        {
            "command": "simulate",
            "input": str(graph_path),
            "input_sha256": _sha256(graph_path.read_bytes()),
            "config_base": str(base) if base else None,
            "config": cfg,
            "seed": cfg["seed"],
        },
    )
    click.echo(f"wrote {len(outputs) + 1} files to {out_dir}")


def _verify_report(graph_path: Path, cfg: dict[str, Any], base: Path | None) -> dict[str, Any]:
    g = prepare_graph(graph_path, cfg["acyclic"])
    defender = None
    if cfg["strategy"]:
        raw = _read_json(resolve_path(cfg["strategy"], base))
        probs = {}
        for k, p in raw["trap_prob"].items():
            (node,) = parse_ids(str(k), g)
            probs[node] = float(p)
        defender = DefenderStrategy(probs, raw.get("theta"))
    if cfg["theta_override"]:
        base_def = defender or placement_defender(resolve_placement("mincut", g), int(cfg["flows"]))
        probs = dict(base_def.trap_prob)
        for item in cfg["theta_override"]:
            key, _, val = item.partition("=")
            (node,) = parse_ids(key, g)
            probs[node] = float(val)
        defender = DefenderStrategy(probs, None)
    report = verify_equilibrium(
        g,
        int(cfg["flows"]),
        NoiseModel(fn=cfg["fn"], fp=cfg["fp"]),
        _params(cfg),
        defender=defender,
        step=cfg["step"],
        mixture=cfg["mixture"],
        defender_space=cfg["space"],
    )
    return report.to_dict()


@main.command("verify")
@click.argument("graph")
@click.option("--flows", "-W", type=int, default=1, show_default=True)
@click.option("--fn", type=float, default=0.0, show_default=True)
@click.option("--fp", type=float, default=0.0, show_default=True)
@click.option("--step", type=float, default=0.1, show_default=True, help="Defender grid resolution.")
@click.option("--mixture", type=click.Choice(["uniform", "equalizing"]), default="uniform", show_default=True)
@click.option(
    "--space",
    type=click.Choice(["full", "cut"]),
    default="full",
    show_default=True,
    help="Defender deviations over all analyzable nodes or only the min-cut nodes.",
)
@click.option("--strategy", default=None, help="JSON defender strategy to audit instead of the equilibrium.")
@click.option("--theta-override", multiple=True, help="NODE=P, replaces one trap probability.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@acyclic_option
@_guard
def cmd_verify(graph: str, out_dir: str | None, **flags: Any) -> None:
    """Check the equilibrium against both best-response oracles."""
    graph_path = resolve_path(graph)
    cfg = {**flags, "acyclic": flags["acyclic"] or "reject", "payoffs": None}
    cfg["theta_override"] = list(cfg["theta_override"])
    try:
        report = _verify_report(graph_path, cfg, None)
    except InstanceTooLarge as exc:
        click.echo(f"instance too large for exhaustive verification: {exc}", err=True)
        sys.exit(EXIT_TOO_LARGE)
    text = _dumps(report)
    if out_dir is not None:
        write_outputs(
            Path(out_dir),
            {"verify.json": text},
            {
                "command": "verify",
                "input": str(graph_path),
                "input_sha256": _sha256(graph_path.read_bytes()),
                "config_base": None,
                "config": cfg,
                "seed": None,
            },
        )
    click.echo(text, nl=False)
    for c in report["checks"]:
        if not c["ok"]:
            click.echo(f"FAIL {c['name']}: {c['detail']}", err=True)
    if not report["passed"]:
        sys.exit(EXIT_VIOLATION)


@main.command("run")
@click.option("--manifest", "manifest_file", required=True, help="manifest.json written by simulate or verify.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Defaults to the manifest's directory.")
@_guard
def cmd_run(manifest_file: str, out_dir: str | None) -> None:
    """Re-run a manifest and check the outputs reproduce byte for byte."""
    mpath = resolve_path(manifest_file)
    manifest = _read_json(mpath)
    graph_path = Path(manifest["input"])
    base = Path(manifest["config_base"]) if manifest.get("config_base") else None
    cfg = copy.deepcopy(manifest["config"])
    if manifest["command"] == "simulate":
        outputs = run_experiment(graph_path, cfg, base)
    elif manifest["command"] == "verify":
        outputs = {"verify.json": _dumps(_verify_report(graph_path, cfg, base))}
    else:
        raise ParseError(f"unknown manifest command {manifest['command']!r}")
    target = Path(out_dir) if out_dir else mpath.parent
    extra = {k: v for k, v in manifest.items() if k not in ("tool", "version", "outputs")}
    fresh = write_outputs(target, outputs, extra)
    same = all(
        fresh["outputs"][name]["sha256"] == entry["sha256"]
        for name, entry in manifest["outputs"].items()
    )
    click.echo(_dumps({"reproduced": same, "outputs": sorted(fresh["outputs"])}), nl=False)
    if not same:
        sys.exit(EXIT_NOT_REPRODUCED)


if __name__ == "__main__":
    main()
