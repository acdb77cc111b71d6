"""Command-line entry points: synth, features, graphs, train, backtest, ablate, report."""
from __future__ import annotations

import json
import os

import click
import numpy as np

from .features import assemble
from .graphs import build_channel_set, export_graph, export_stats_csv
from .losses import Task
from .marketdata import build_panel, filter_zero_liquidity, load_ticks
from .pipeline import (
    HORIZON_HOURS,
    desk_run,
    emit_report,
    paper_run,
    prepare,
    run_ablation,
    run_horizon,
)
from .synthgen import SynthConfig, generate, plant_predictability, write_ground_truth

TASKS = [Task.RETURN, Task.VOLATILITY, Task.VOLUME]


def _load_run(config, task, horizon, profile, seed):
    make = desk_run if profile == "desk" else paper_run
    overrides = {}
    if config:
        with open(config) as f:
            raw = json.load(f)
        overrides = {k: v for k, v in raw.items()
                     if k not in ("model", "features", "tradability", "task")}
        if "task" in raw and task is None:
            task = raw["task"]
    run = make(task or Task.RETURN, **overrides)
    if horizon:
        run = run.__class__(**{**run.__dict__, "horizon": horizon})
    if seed is not None:
        run = run.__class__(**{**run.__dict__, "seed": seed})
    return run


@click.group()
def main():
    """Term-structure forecasting engine."""


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None,
              help="JSON with SynthConfig field overrides.")
@click.option("--seed", type=int, default=0)
@click.option("--days", type=int, default=10)
@click.option("--out", type=click.Path(), required=True, help="Output tick CSV path.")
@click.option("--plant-beta", type=float, default=None,
              help="Plant a lagged cross-node dependence with this coefficient.")
def synth(config, seed, days, out, plant_beta):
    """Generate a synthetic tick stream plus ground-truth JSON."""
    overrides = {}
    if config:
        with open(config) as f:
            overrides = json.load(f)
    overrides.setdefault("n_days", days)
    overrides["seed"] = seed
    cfg = SynthConfig(**overrides)
    if plant_beta is not None:
        cfg = plant_predictability(cfg, beta=plant_beta)
    stream, truth = generate(cfg)
    stream.to_csv(out)
    write_ground_truth(truth, out + ".truth.json")
    click.echo(f"wrote {len(stream)} events to {out}")


@main.command()
@click.option("--ticks", type=click.Path(exists=True), required=True)
@click.option("--profile", type=click.Choice(["paper", "desk"]), default="paper")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
def features(ticks, profile, out):
    """Compute the hourly feature matrix and export per-instrument CSVs."""
    from .features import FeatureConfig, desk_feature_config

    stream, n_bad = load_ticks(ticks)
    filtered = filter_zero_liquidity(stream)
    panel = build_panel(filtered, list(stream.instruments))
    cfg = desk_feature_config() if profile == "desk" else FeatureConfig()
    matrix, _ = assemble(panel, filtered, cfg)
    matrix.export_csv(out)
    click.echo(f"{matrix.n_hours} hourly rows, {len(matrix.names)} features "
               f"({n_bad} malformed ticks skipped) -> {out}")


@main.command()
@click.option("--ticks", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Choice(TASKS), default=Task.RETURN)
@click.option("--profile", type=click.Choice(["paper", "desk"]), default="paper")
@click.option("--fmt", type=click.Choice(["DOT", "JSON", "CSV"]), default="JSON")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
def graphs(ticks, task, profile, fmt, out):
    """Build the channel graphs for a task and export them with a stats table."""
    from .features import FeatureConfig, desk_feature_config
    from .graphs import VARIANT_NAMES

    stream, _ = load_ticks(ticks)
    filtered = filter_zero_liquidity(stream)
    panel = build_panel(filtered, list(stream.instruments))
    cfg = desk_feature_config() if profile == "desk" else FeatureConfig()
    _, targets = assemble(panel, filtered, cfg)
    gs = build_channel_set(targets, task)
    os.makedirs(out, exist_ok=True)
    ext = fmt.lower()
    for g in gs:
        gc = g.meta["config"]
        name = f"{gc.pair[0]}-{gc.pair[1]}_{VARIANT_NAMES[(gc.lag, gc.variant)]}.{ext}"
        export_graph(g, fmt, os.path.join(out, name))
    export_stats_csv(gs, os.path.join(out, "graph_stats.csv"))
    click.echo(f"wrote {len(gs)} graphs to {out}")


def _backtest(ticks, config, task, horizon, profile, seed, out):
    stream, _ = load_ticks(ticks)
    run = _load_run(config, task, horizon, profile, seed)
    report = run_horizon(run, stream)
    files = emit_report(report, out)
    click.echo(f"fingerprint {report.fingerprint}; wrote {len(files)} files to {out}")
    return report


@main.command()
@click.option("--ticks", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--task", type=click.Choice(TASKS), default=None)
@click.option("--horizon", type=click.Choice(list(HORIZON_HOURS)), default=None)
@click.option("--profile", type=click.Choice(["paper", "desk"]), default="paper")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
def train(ticks, config, task, horizon, profile, seed, out):
    """Train the model walk-forward and write the backtest artifacts."""
    _backtest(ticks, config, task, horizon, profile, seed, out)


@main.command()
@click.option("--ticks", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--task", type=click.Choice(TASKS), default=None)
@click.option("--horizon", type=click.Choice(list(HORIZON_HOURS)), default=None)
@click.option("--profile", type=click.Choice(["paper", "desk"]), default="paper")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
def backtest(ticks, config, task, horizon, profile, seed, out):
    """Alias of train: the protocol is walk-forward, so training is the backtest."""
    _backtest(ticks, config, task, horizon, profile, seed, out)


@main.command()
@click.option("--ticks", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--task", type=click.Choice(TASKS), default=None)
@click.option("--horizon", type=click.Choice(list(HORIZON_HOURS)), default=None)
@click.option("--profile", type=click.Choice(["paper", "desk"]), default="desk")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True, help="Output CSV path.")
def ablate(ticks, config, task, horizon, profile, seed, out):
    """Run the 9-row ablation grid and write the comparison CSV."""
    stream, _ = load_ticks(ticks)
    run = _load_run(config, task, horizon, profile, seed)
    rows, _ = run_ablation(run, stream, out_csv=out)
    click.echo(f"wrote {len(rows)} ablation rows to {out}")


@main.command()
@click.option("--ticks", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--task", type=click.Choice(TASKS), default=None)
@click.option("--horizon", type=click.Choice(list(HORIZON_HOURS)), default=None)
@click.option("--profile", type=click.Choice(["paper", "desk"]), default="paper")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
def report(ticks, config, task, horizon, profile, seed, out):
    """Backtest and emit the full report bundle (metrics, P&L, config, graph stats)."""
    _backtest(ticks, config, task, horizon, profile, seed, out)


if __name__ == "__main__":
    main()
