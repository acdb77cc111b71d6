"""Rolling-window training, tradability filtering, backtest reports, ablations.

The sample stream is the sequence of hourly rows passing the liquidity
filter with fully populated feature windows; the model trains on the first
`lookback` samples, forecasts the next `roll` strictly out-of-sample,
rolls forward, and retrains warm-started. Graphs and feature/target
standardization statistics are fitted on the initial window and frozen by
default.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, adam_step, l1_penalty
from .features import (
    FeatureConfig,
    FeatureMatrix,
    TargetSet,
    assemble,
    desk_feature_config,
    fit_column_stats,
    standardize,
)
from .graphs import VARIANTS, build_channel_set, export_stats_csv
from .losses import (
    DEFAULT_TASK_LOSS,
    TRAIN_LOSSES,
    LossConfig,
    Task,
    daily_pnl,
    hmse,
    mae,
    mse,
    ppd,
    qlike,
    sharpe,
)
from .marketdata import (
    NS_PER_DAY,
    NS_PER_HOUR,
    DEFAULT_TZ_OFFSET_HOURS,
    InstrumentClass,
    PanelSeries,
    TickStream,
    build_panel,
    filter_zero_liquidity,
)
from .model import GcnLstm, ModelConfig, desk_model_config

HORIZON_HOURS = {"1h": 1, "3h": 3, "4h": 4, "6h": 6, "1d": 24}
LOW_POWER_SAMPLES = 100


@dataclass
class TradabilityConfig:
    es_spread_bp: float = 15.0
    vx_spread_bp: float = 25.0
    min_size: float = 1.0   # strict: size must exceed this

    def __post_init__(self):
        if self.es_spread_bp <= 0 or self.vx_spread_bp <= 0:
            raise ValueError("spread thresholds must be positive")


@dataclass
class RunConfig:
    task: str = Task.RETURN
    horizon: str = "1h"
    lookback: int = 20000
    roll: int = 1500
    epochs_initial: int = 120
    epochs_roll: int = 25
    seed: int = 0
    loss: str | None = None           # None -> task default
    graph_variants: list | None = None  # None -> all 4 constructions
    knn_k: int = 3
    batch_size: int = 256
    step_size: float = 5e-4
    l1_lambda: float = 1e-5
    freeze_graphs: bool = True
    standardize_targets: bool = True
    profile: str = "paper"
    tz_offset_hours: int = DEFAULT_TZ_OFFSET_HOURS
    tradability: TradabilityConfig = field(default_factory=TradabilityConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if not self.lookback > self.roll > 0:
            raise ValueError("need lookback > roll > 0")
        if self.horizon not in HORIZON_HOURS:
            raise ValueError(f"unknown horizon {self.horizon!r}")
        if self.task not in (Task.RETURN, Task.VOLATILITY, Task.VOLUME):
            raise ValueError(f"unknown task {self.task!r}")

    def loss_name(self) -> str:
        return self.loss or DEFAULT_TASK_LOSS[self.task]

    def variants(self) -> list:
        return list(self.graph_variants) if self.graph_variants is not None else list(VARIANTS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["features"] = dict(self.features.__dict__)
        d["graph_variants"] = [list(v) for v in self.variants()]
        return d


def paper_run(task: str = Task.RETURN, **overrides) -> RunConfig:
    return RunConfig(task=task, profile="paper", **overrides)


def desk_run(task: str = Task.RETURN, **overrides) -> RunConfig:
    """Shrunk profile sized so acceptance runs finish in minutes."""
    n_channels = overrides.pop("n_channels", 12)
    defaults = dict(
        lookback=2000, roll=250, epochs_initial=40, epochs_roll=10,
        batch_size=256, profile="desk",
        model=desk_model_config(n_channels=n_channels),
        features=desk_feature_config(),
    )
    defaults.update(overrides)
    return RunConfig(task=task, **defaults)


# -- tradability --------------------------------------------------------


def tradability_mask(panel: PanelSeries, rows: np.ndarray, cfg: TradabilityConfig):
    """Per hourly row: a global training mask and per-product evaluation masks.

    An hour qualifies for training if the front ES or front VX contract
    passes its class filter; a product is evaluated only in hours where it
    passes itself. Index nodes are never directly tradable.
    """
    n = len(panel.instruments)
    h = rows.size
    eval_mask = np.zeros((n, h), dtype=bool)
    front = {}
    for j, ins in enumerate(panel.instruments):
        if ins.is_index:
            continue
        thr = cfg.es_spread_bp if ins.klass is InstrumentClass.ES else cfg.vx_spread_bp
        ok = (panel.valid[rows, j]
              & (panel.spread[rows, j] < thr)
              & (panel.min_size[rows, j] > cfg.min_size))
        eval_mask[j] = ok
        if ins.tenor_rank == 1:
            front[ins.klass] = ok
    parts = [front[k] for k in (InstrumentClass.ES, InstrumentClass.VX) if k in front]
    if parts:
        train_mask = np.logical_or.reduce(parts)
    else:
        train_mask = np.zeros(h, dtype=bool)
    return train_mask, eval_mask


# -- horizon targets ----------------------------------------------------


def horizon_targets(panel: PanelSeries, rows: np.ndarray, task: str, n_hours: int):
    """Forward target over the n_hours after each hourly row: (y, ok) both (N, H)."""
    from .features import one_minute_returns

    n = len(panel.instruments)
    h = rows.size
    span = 60 * n_hours
    y = np.full((n, h), np.nan)
    ok = np.zeros((n, h), dtype=bool)
    ends = rows + span
    in_grid = ends < panel.n_minutes
    safe_ends = np.where(in_grid, ends, 0)

    for j, ins in enumerate(panel.instruments):
        if task == Task.RETURN:
            good = in_grid & panel.valid[rows, j] & panel.valid[safe_ends, j]
            with np.errstate(invalid="ignore", divide="ignore"):
                vals = panel.mid[safe_ends, j] / panel.mid[rows, j] - 1.0
            y[j, good] = vals[good]
            ok[j] = good
        elif task == Task.VOLATILITY:
            r, rok = one_minute_returns(panel, j)
            r_fill = np.where(rok, r, 0.0)
            cs = np.concatenate([[0.0], np.cumsum(r_fill * r_fill)])
            cb = np.concatenate([[0.0], np.cumsum(~rok)])
            rv = cs[safe_ends + 1] - cs[rows + 1]
            nbad = cb[safe_ends + 1] - cb[rows + 1]
            good = in_grid & (nbad == 0) & (rv > 0)
            y[j, good] = np.log(rv[good])
            ok[j] = good
        elif task == Task.VOLUME:
            if not ins.has_volume:
                continue
            tc = panel.trade_count[:, j].astype(np.float64)
            cs = np.concatenate([[0.0], np.cumsum(tc)])
            v_fwd = cs[safe_ends + 1] - cs[rows + 1]
            starts = rows - span + 1
            prev_ok = starts >= 0
            safe_starts = np.where(prev_ok, starts, 0)
            v_back = cs[rows + 1] - cs[safe_starts]
            good = in_grid & prev_ok & (v_fwd > 0) & (v_back > 0)
            y[j, good] = np.log(v_fwd[good] / v_back[good])
            ok[j] = good
        else:
            raise ValueError(f"unknown task {task!r}")
    return y, ok


# -- sample assembly ----------------------------------------------------


@dataclass
class Prepared:
    """Everything derivable from the stream before any training."""

    panel: PanelSeries
    matrix: FeatureMatrix           # standardized
    targets: TargetSet
    rows: np.ndarray                # hourly rows as minute indices
    y: np.ndarray                   # (N, H) horizon targets
    y_ok: np.ndarray                # (N, H)
    train_mask: np.ndarray          # (H,)
    eval_mask: np.ndarray           # (N, H)
    sample_rows: np.ndarray         # (S,) hour-row positions of usable samples
    xview: np.ndarray               # (N, H - T + 1, T, F) windowed feature view
    node_idx: np.ndarray            # nodes included in the loss
    data_hash: str


def stream_hash(stream: TickStream) -> str:
    h = hashlib.sha256()
    h.update(",".join(i.code for i in stream.instruments).encode())
    for arr in (stream.ts, stream.inst, stream.bid_px, stream.ask_px,
                stream.bid_sz, stream.ask_sz, stream.kind):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def _local_day(ts_ns, tz_offset_hours: int):
    return (np.asarray(ts_ns) + tz_offset_hours * NS_PER_HOUR) // NS_PER_DAY


def _local_hour(ts_ns, tz_offset_hours: int):
    return ((np.asarray(ts_ns) + tz_offset_hours * NS_PER_HOUR) // NS_PER_HOUR) % 24


def prepare(run: RunConfig, stream: TickStream) -> Prepared:
    """Panel, features, masks, and the usable sample stream for one run."""
    from .features import _hour_rows

    filtered = filter_zero_liquidity(stream)
    panel = build_panel(filtered, list(stream.instruments))
    matrix, targets = assemble(panel, filtered, run.features)
    rows = _hour_rows(panel)
    n_hours = HORIZON_HOURS[run.horizon]
    y, y_ok = horizon_targets(panel, rows, run.task, n_hours)
    train_mask, eval_mask = tradability_mask(panel, rows, run.tradability)

    t = run.model.seq_len
    h = matrix.n_hours
    if h < t:
        raise ValueError(f"only {h} hourly rows, need at least seq_len={t}")

    joint = matrix.mask.all(axis=0)
    cs = np.concatenate([[0], np.cumsum(joint)])
    win_ok = np.zeros(h, dtype=bool)
    win_ok[t - 1:] = (cs[t:] - cs[:-t]) == t

    node_idx = np.arange(len(panel.instruments))
    if run.task == Task.VOLUME:
        node_idx = np.array([j for j, ins in enumerate(panel.instruments) if ins.has_volume])

    usable = win_ok & train_mask & y_ok[node_idx].all(axis=0)
    if run.horizon == "1d":
        usable &= _local_hour(matrix.hour_ts, run.tz_offset_hours) == 23
    sample_rows = np.nonzero(usable)[0]

    # feature standardization is frozen on the initial training window
    init_rows = sample_rows[: min(run.lookback, sample_rows.size)]
    stats = fit_column_stats(matrix, init_rows)
    matrix_std = standardize(matrix, stats)
    sw = np.lib.stride_tricks.sliding_window_view(matrix_std.values, t, axis=1)
    xview = np.transpose(sw, (0, 1, 3, 2))   # (N, H - T + 1, T, F)

    return Prepared(panel, matrix_std, targets, rows, y, y_ok, train_mask, eval_mask,
                    sample_rows, xview, node_idx, stream_hash(stream))


def gather_windows(prep: Prepared, sample_rows: np.ndarray, seq_len: int) -> np.ndarray:
    """Materialize (N, S, T, F) input windows ending at the given hour rows."""
    return np.ascontiguousarray(prep.xview[:, sample_rows - seq_len + 1])


# -- trainer ------------------------------------------------------------


class Trainer:
    """Minibatch Adam with L1 on weights; per-node target scaling (frozen
    on the first fitted window) so every node's loss is comparable."""

    def __init__(self, model: GcnLstm, run: RunConfig, node_idx: np.ndarray):
        self.model = model
        self.run = run
        self.node_idx = np.asarray(node_idx)
        self.adam = AdamState(step_size=run.step_size)
        self.rng = np.random.default_rng(run.seed + 1)
        self.loss_cfg = LossConfig(task=run.task)
        self.loss_fn = TRAIN_LOSSES[run.loss_name()]
        self.y_mean = None
        self.y_sd = None

    def _fit_scale(self, y: np.ndarray):
        n = self.model.n_nodes
        self.y_mean = np.zeros((n, 1))
        self.y_sd = np.ones((n, 1))
        if self.run.standardize_targets:
            sub = y[self.node_idx]
            self.y_mean[self.node_idx, 0] = sub.mean(axis=1)
            sd = sub.std(axis=1)
            sd[sd < 1e-12] = 1.0
            self.y_sd[self.node_idx, 0] = sd

    def fit(self, prep: Prepared, sample_rows: np.ndarray, epochs: int):
        run = self.run
        y_all = prep.y[:, sample_rows]
        if self.y_mean is None:
            self._fit_scale(y_all)
        y_scaled = (y_all - self.y_mean) / self.y_sd
        s = sample_rows.size
        t = run.model.seq_len
        full = run.batch_size >= s
        params = self.model.params.all()
        weights = self.model.params.weights()
        for _ in range(epochs):
            order = np.arange(s) if full else self.rng.permutation(s)
            for lo in range(0, s, run.batch_size):
                idx = order[lo: lo + run.batch_size]
                xb = np.ascontiguousarray(prep.xview[:, sample_rows[idx] - t + 1])
                out = self.model.forward(xb)
                if self.node_idx.size != self.model.n_nodes:
                    out = out[self.node_idx]
                loss = self.loss_fn(out, y_scaled[self.node_idx][:, idx], self.loss_cfg)
                if run.l1_lambda > 0:
                    loss = ad.add(loss, l1_penalty(weights, run.l1_lambda))
                for p in params:
                    p.zero_grad()
                loss.backward()
                adam_step(self.adam, params)

    def predict(self, prep: Prepared, sample_rows: np.ndarray) -> np.ndarray:
        xb = gather_windows(prep, sample_rows, self.run.model.seq_len)
        out = self.model.predict(xb)
        if self.y_mean is None:
            return out
        return out * self.y_sd + self.y_mean


def rolling_train(run: RunConfig, model: GcnLstm, prep: Prepared):
    """Walk-forward protocol; returns (forecasts (N, S_eval), eval sample rows)."""
    s = prep.sample_rows.size
    needed = run.lookback + 1
    if s < needed:
        raise ValueError(
            f"insufficient data: {s} usable samples, need at least {needed} "
            f"(lookback {run.lookback} plus one evaluation sample)")
    trainer = Trainer(model, run, prep.node_idx)
    trainer.fit(prep, prep.sample_rows[: run.lookback], run.epochs_initial)

    preds = []
    pos = run.lookback
    while pos < s:
        end = min(pos + run.roll, s)
        preds.append(trainer.predict(prep, prep.sample_rows[pos:end]))
        if end < s and run.epochs_roll > 0:
            trainer.fit(prep, prep.sample_rows[end - run.lookback: end], run.epochs_roll)
        pos = end
    forecasts = np.concatenate(preds, axis=1)
    return forecasts, prep.sample_rows[run.lookback:]


# -- reporting ----------------------------------------------------------


@dataclass
class BacktestReport:
    task: str
    horizon: str
    products: list[str]
    metrics: dict                    # code -> {metric: value}
    n_tradable: dict                 # code -> evaluated sample count
    cum_pnl: dict                    # code -> (day ns array, daily pnl array)
    low_power: bool
    fingerprint: str
    config: dict
    graphs: list = field(default_factory=list)


def fingerprint(run: RunConfig, data_hash: str, graph_hashes: list[str]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(run.to_dict(), sort_keys=True, default=str).encode())
    h.update(data_hash.encode())
    for g in graph_hashes:
        h.update(g.encode())
    return h.hexdigest()[:12]


def _evaluate(run: RunConfig, prep: Prepared, forecasts: np.ndarray,
              eval_rows: np.ndarray) -> tuple[dict, dict, dict, bool]:
    metrics, counts, cum = {}, {}, {}
    low_power = eval_rows.size < LOW_POWER_SAMPLES
    target_ts = prep.matrix.hour_ts[eval_rows] + NS_PER_HOUR
    for pos, j in enumerate(prep.node_idx):
        ins = prep.panel.instruments[j]
        sel = prep.eval_mask[j, eval_rows] & prep.y_ok[j, eval_rows]
        counts[ins.code] = int(sel.sum())
        if sel.sum() < 2:
            continue
        y = prep.y[j, eval_rows][sel]
        yhat = forecasts[j][sel]
        m = {"MSE": mse(y, yhat), "MAE": mae(y, yhat)}
        if run.task == Task.VOLATILITY:
            m["QLIKE"] = qlike(y, yhat)
            m["HMSE"] = hmse(y, yhat)
        if run.task == Task.RETURN:
            days = _local_day(target_ts[sel], run.tz_offset_hours)
            uniq = np.unique(days)
            rets = [y[days == d] for d in uniq]
            sigs = [yhat[days == d] for d in uniq]
            pnl, _ = daily_pnl(rets, sigs)
            m["PPD"] = ppd(pnl)
            m["SR"] = sharpe(pnl) if pnl.size >= 2 else None
            cum[ins.code] = (uniq * NS_PER_DAY - run.tz_offset_hours * NS_PER_HOUR, pnl)
        metrics[ins.code] = m
    return metrics, counts, cum, low_power


def run_horizon(run: RunConfig, stream: TickStream,
                prep: Prepared | None = None) -> BacktestReport:
    """Full walk-forward backtest of one (task, horizon) configuration."""
    if prep is None:
        prep = prepare(run, stream)

    variants = run.variants()
    init_rows = prep.sample_rows[: run.lookback]
    graphs = build_channel_set(prep.targets, run.task, rows=init_rows,
                               knn_k=run.knn_k, variants=variants)
    n_channels = len(graphs)
    model_cfg = replace(run.model, n_channels=n_channels)
    n_nodes = len(prep.panel.instruments)
    input_dim = prep.matrix.values.shape[2]
    model = GcnLstm(model_cfg, n_nodes, input_dim, seed=run.seed,
                    graphs=graphs if model_cfg.use_gcn else None)

    forecasts, eval_rows = rolling_train(run, model, prep)
    metrics, counts, cum, low_power = _evaluate(run, prep, forecasts, eval_rows)

    fp = fingerprint(run, prep.data_hash, model.graph_hashes())
    return BacktestReport(
        task=run.task, horizon=run.horizon,
        products=[prep.panel.instruments[j].code for j in prep.node_idx],
        metrics=metrics, n_tradable=counts, cum_pnl=cum, low_power=low_power,
        fingerprint=fp, config=run.to_dict(), graphs=graphs,
    )


def _fmt(v) -> str:
    if v is None:
        return "NA"
    return f"{v:.10g}"


def emit_report(report: BacktestReport, out_dir) -> list[str]:
    """Write the metrics/P&L/config/graph-stats artifacts; byte-deterministic."""
    os.makedirs(out_dir, exist_ok=True)
    fp = report.fingerprint
    written = []

    if report.task == Task.RETURN:
        header = "product,SR,PPD,MSE,MAE,n_tradable,low_power"
        cols = ("SR", "PPD", "MSE", "MAE")
    elif report.task == Task.VOLATILITY:
        header = "product,QLIKE,HMSE,MSE,MAE,n_tradable,low_power"
        cols = ("QLIKE", "HMSE", "MSE", "MAE")
    else:
        header = "product,MAE,MSE,n_tradable,low_power"
        cols = ("MAE", "MSE")
    lines = [header]
    for code in report.products:
        m = report.metrics.get(code, {})
        vals = ",".join(_fmt(m.get(c)) for c in cols)
        lines.append(f"{code},{vals},{report.n_tradable.get(code, 0)},{int(report.low_power)}")
    path = os.path.join(out_dir, f"metrics_{report.task}_{fp}.csv")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    written.append(path)

    for code, (day_ts, pnl) in sorted(report.cum_pnl.items()):
        path = os.path.join(out_dir, f"cumpnl_{code}_{fp}.csv")
        cumulative = np.cumsum(pnl)
        lines = ["day_ts,pnl,cum_pnl"]
        lines += [f"{int(d)},{_fmt(p)},{_fmt(c)}" for d, p, c in zip(day_ts, pnl, cumulative)]
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
        written.append(path)

    path = os.path.join(out_dir, f"config_{fp}.json")
    with open(path, "w") as f:
        json.dump(report.config, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    written.append(path)

    if report.graphs:
        path = os.path.join(out_dir, f"graphstats_{fp}.csv")
        export_stats_csv(report.graphs, path)
        written.append(path)
    return written


# -- ablation grid ------------------------------------------------------


ABLATION_ROWS = [
    ("full_model", {}),
    ("graphs_contemporaneous_weighted", {"graph_variants": [VARIANTS[0]]}),
    ("graphs_contemporaneous_unweighted", {"graph_variants": [VARIANTS[1]]}),
    ("graphs_lagged_weighted", {"graph_variants": [VARIANTS[2]]}),
    ("graphs_lagged_unweighted", {"graph_variants": [VARIANTS[3]]}),
    ("loss_MSE", {"loss": "MSE"}),
    ("loss_MAE", {"loss": "MAE"}),
    ("loss_SR", {"loss": "SR"}),
    ("non_parallel_modules", {"share": True}),
]

HEADLINE_METRIC = {Task.RETURN: "SR", Task.VOLATILITY: "QLIKE", Task.VOLUME: "MAE"}


def _row_is_na(label: str, task: str) -> bool:
    if label == "loss_SR":
        return task != Task.RETURN
    if label == "loss_MAE":
        return task == Task.VOLUME
    return False


def run_ablation(base: RunConfig, stream: TickStream, out_csv=None):
    """The 9-configuration comparison grid; returns rows and optionally a CSV."""
    prep = prepare(base, stream)
    metric = HEADLINE_METRIC[base.task]
    rows = []
    products = None
    for label, mods in ABLATION_ROWS:
        if _row_is_na(label, base.task):
            rows.append((label, None))
            continue
        mods = dict(mods)
        share = mods.pop("share", False)
        run = replace(base, **mods)
        if share:
            run = replace(run, model=replace(run.model, share_node_weights=True))
        report = run_horizon(run, stream, prep=prep)
        if products is None:
            products = report.products
        rows.append((label, {c: report.metrics.get(c, {}).get(metric) for c in report.products}))
    if products is None:
        products = [prep.panel.instruments[j].code for j in prep.node_idx]

    lines = ["config," + ",".join(products)]
    for label, vals in rows:
        if vals is None:
            lines.append(label + "," + ",".join(["NA"] * len(products)))
        else:
            lines.append(label + "," + ",".join(_fmt(vals.get(c)) for c in products))
    csv_text = "\n".join(lines) + "\n"
    if out_csv is not None:
        with open(out_csv, "w") as f:
            f.write(csv_text)
    return rows, csv_text
