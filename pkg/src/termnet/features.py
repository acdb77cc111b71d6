"""Predictive features and forecast targets on the hourly grid.

All features at hourly row h are computed from minute windows ending at the
last minute of hour h; targets are the next hour's return, log realized
variance, and log volume change (strictly one-step-ahead).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .marketdata import (
    NS_PER_HOUR,
    NS_PER_MINUTE,
    DEFAULT_TZ_OFFSET_HOURS,
    EventKind,
    InstrumentId,
    PanelSeries,
    TickStream,
)

DAY_NAMES = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday"]
HOUR_NAMES = [f"Hour_{h:02d}" for h in range(23)]

POS = "POS"
NEG = "NEG"


def _fmt_weight(w: float) -> str:
    return f"{w:g}" if w != 1.0 else "1.0"


@dataclass
class FeatureConfig:
    return_windows: list[int] = field(default_factory=lambda: [5, 10, 30, 60, 90, 180, 240, 360, 1440])
    rv_windows: list[int] = field(default_factory=lambda: [5, 10, 30, 60, 90, 180, 390])
    semivol_windows: list[int] = field(default_factory=lambda: [5, 10, 30, 60, 90, 180, 391])
    ew_weights: list[float] = field(default_factory=lambda: [0.75, 0.9, 0.975, 0.99, 0.999, 1.0])
    ew_span: int = 1440
    ofi_windows: list[int] = field(default_factory=lambda: [5, 10, 30, 60, 90, 120, 180, 270, 360, 1440])
    volume_windows: list[int] = field(default_factory=lambda: [5, 10, 30, 60, 90, 180, 240, 360, 1440])
    include_calendar: bool = True
    tz_offset_hours: int = DEFAULT_TZ_OFFSET_HOURS

    def __post_init__(self):
        for w in (self.return_windows + self.rv_windows + self.semivol_windows
                  + self.ofi_windows + self.volume_windows):
            if w <= 0:
                raise ValueError("windows must be positive")
        for w in self.ew_weights:
            if not 0.0 < w <= 1.0:
                raise ValueError("exponential weights must be in (0, 1]")

    def feature_names(self) -> list[str]:
        names = [f"ofi_{k}" for k in self.ofi_windows]
        names += [f"ret_{k}" for k in self.return_windows]
        names += [f"rv_{k}" for k in self.rv_windows]
        names += [f"rv_pos{k}" for k in self.semivol_windows]
        names += [f"rv_neg{k}" for k in self.semivol_windows]
        names += [f"weigh_rets_{_fmt_weight(w)}" for w in self.ew_weights]
        names += [f"weigh_rv_{_fmt_weight(w)}" for w in self.ew_weights]
        names += [f"num_trades_{k}" for k in self.volume_windows]
        if self.include_calendar:
            names += DAY_NAMES + HOUR_NAMES
        return names

    def binary_names(self) -> set[str]:
        return set(DAY_NAMES + HOUR_NAMES) if self.include_calendar else set()


def desk_feature_config() -> FeatureConfig:
    """Reduced feature set for fast desk-scale runs."""
    return FeatureConfig(
        return_windows=[5, 30, 60],
        rv_windows=[30, 60],
        semivol_windows=[60],
        ew_weights=[0.9],
        ofi_windows=[30, 60],
        volume_windows=[60],
        include_calendar=False,
    )


# -- minute-level primitives --------------------------------------------


def one_minute_returns(panel: PanelSeries, col: int):
    """1-minute simple returns and their validity for one instrument column."""
    mid = panel.mid[:, col]
    valid = panel.valid[:, col]
    r = np.full(panel.n_minutes, np.nan)
    ok = np.zeros(panel.n_minutes, dtype=bool)
    ok[1:] = valid[1:] & valid[:-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        r[1:] = panel.mid[1:, col] / panel.mid[:-1, col] - 1.0
    r[~ok] = np.nan
    return r, ok


def _minute_index(panel: PanelSeries, t: int) -> int:
    idx = int((t - panel.minute_ts[0]) // NS_PER_MINUTE)
    if not 0 <= idx < panel.n_minutes or panel.minute_ts[idx] != t:
        raise ValueError("timestamp not on panel grid")
    return idx


def k_minute_return(panel: PanelSeries, instrument: InstrumentId, t: int, k: int) -> float:
    """(P_t - P_{t-k}) / P_{t-k} on mid-prices; NaN if either endpoint invalid."""
    col = panel.column(instrument)
    i = _minute_index(panel, t)
    j = i - k
    if j < 0 or not (panel.valid[i, col] and panel.valid[j, col]):
        return float("nan")
    return float(panel.mid[i, col] / panel.mid[j, col] - 1.0)


def _window_sq_returns(panel, instrument, t, k):
    col = panel.column(instrument)
    i = _minute_index(panel, t)
    if i - k < 0:
        return None
    r, ok = one_minute_returns(panel, col)
    win = slice(i - k + 1, i + 1)
    if not ok[win].all():
        return None
    return r[win]


def realized_variance(panel: PanelSeries, instrument: InstrumentId, t: int, k: int) -> float:
    """Sum of squared 1-minute returns over the k minutes ending at t."""
    r = _window_sq_returns(panel, instrument, t, k)
    if r is None:
        return float("nan")
    return float(np.sum(r * r))


def semivariance(panel: PanelSeries, instrument: InstrumentId, t: int, k: int, side: str) -> float:
    """One-sided realized variance; zero returns count toward both sides."""
    r = _window_sq_returns(panel, instrument, t, k)
    if r is None:
        return float("nan")
    sel = r >= 0 if side == POS else r <= 0
    return float(np.sum((r * r)[sel]))


def _ew_sum(x: np.ndarray, w: float) -> float:
    # x ordered oldest..newest over span+1 observations; weight w^j, j=0 newest
    n = x.size
    weights = w ** np.arange(n - 1, -1, -1, dtype=np.float64)
    raw = float(np.dot(weights, x))
    return raw if w == 1.0 else (1.0 - w) * raw


def ew_return(panel: PanelSeries, instrument: InstrumentId, t: int, w: float, span: int = 1440) -> float:
    col = panel.column(instrument)
    i = _minute_index(panel, t)
    if i - span < 0:
        return float("nan")
    r, ok = one_minute_returns(panel, col)
    win = slice(i - span, i + 1)
    if not ok[win].all():
        return float("nan")
    return _ew_sum(r[win], w)


def ew_rv(panel: PanelSeries, instrument: InstrumentId, t: int, w: float, span: int = 1440) -> float:
    col = panel.column(instrument)
    i = _minute_index(panel, t)
    if i - span < 0:
        return float("nan")
    r, ok = one_minute_returns(panel, col)
    win = slice(i - span, i + 1)
    if not ok[win].all():
        return float("nan")
    return _ew_sum(r[win] ** 4, w)


# -- order-flow imbalance -----------------------------------------------


def event_flow_contributions(stream: TickStream, instrument: InstrumentId):
    """Per-event signed size-change terms for one instrument's stream.

    The first event has no predecessor and is skipped (contribution 0).
    Returns (timestamps, contributions).
    """
    sub = stream.for_instrument(instrument)
    n = len(sub)
    e = np.zeros(n)
    if n >= 2:
        bp, ap = sub.bid_px, sub.ask_px
        bs, asz = sub.bid_sz.astype(np.float64), sub.ask_sz.astype(np.float64)
        e[1:] = (
            (bp[1:] >= bp[:-1]) * bs[1:]
            - (bp[1:] <= bp[:-1]) * bs[:-1]
            - (ap[1:] <= ap[:-1]) * asz[1:]
            + (ap[1:] >= ap[:-1]) * asz[:-1]
        )
    return sub.ts, e


def ofi(stream: TickStream, instrument: InstrumentId, t: int, k: int) -> float:
    """Order-flow imbalance over the k minutes ending at t (window (t-k, t])."""
    ts, e = event_flow_contributions(stream, instrument)
    lo = np.searchsorted(ts, t - k * NS_PER_MINUTE, side="right")
    hi = np.searchsorted(ts, t, side="right")
    return float(e[lo:hi].sum())


def delta_volume(panel: PanelSeries, instrument: InstrumentId, t: int, k: int) -> float:
    """log(V_t / V_{t-k}) on k-minute trade-count sums; NaN when a sum is zero."""
    col = panel.column(instrument)
    i = _minute_index(panel, t)
    if i - 2 * k + 1 < 0:
        return float("nan")
    tc = panel.trade_count[:, col]
    v_now = tc[i - k + 1: i + 1].sum()
    v_prev = tc[i - 2 * k + 1: i - k + 1].sum()
    if v_now <= 0 or v_prev <= 0:
        return float("nan")
    return float(np.log(v_now / v_prev))


# -- calendar -----------------------------------------------------------


def calendar_dummies(t: int, tz_offset_hours: int = DEFAULT_TZ_OFFSET_HOURS) -> np.ndarray:
    """6 day-of-week + 23 hour-of-day indicators in exchange-local time.

    Sunday and Hour_23 are the reference categories (all zeros).
    """
    local = t + tz_offset_hours * NS_PER_HOUR
    days = local // (24 * NS_PER_HOUR)
    # 1970-01-01 was a Thursday; map to Monday=0..Sunday=6
    dow = int((days + 3) % 7)
    hour = int((local // NS_PER_HOUR) % 24)
    out = np.zeros(29)
    if dow < 6:
        out[dow] = 1.0
    if hour < 23:
        out[6 + hour] = 1.0
    return out


# -- containers ---------------------------------------------------------


@dataclass
class FeatureMatrix:
    hour_ts: np.ndarray                 # (H,) ns, start of each hourly row's hour
    names: list[str]
    values: np.ndarray                  # (N, H, F)
    mask: np.ndarray                    # (N, H) bool, True = row fully populated
    instruments: list[InstrumentId]
    binary_names: set[str] = field(default_factory=set)

    @property
    def n_hours(self):
        return self.hour_ts.size

    def export_csv(self, out_dir) -> None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        for j, ins in enumerate(self.instruments):
            df = pd.DataFrame(self.values[j], columns=self.names)
            df.insert(0, "hour_ts", self.hour_ts)
            df.insert(1, "valid", self.mask[j].astype(int))
            df.to_csv(os.path.join(out_dir, f"features_{ins.code}.csv"), index=False)


@dataclass
class TargetSet:
    """Observed hourly series; targets are the next row's observation."""

    hour_ts: np.ndarray
    instruments: list[InstrumentId]
    obs_ret: np.ndarray                 # (N, H) hourly return, NaN invalid
    obs_log_rv: np.ndarray              # (N, H) log hourly realized variance
    obs_dvol: np.ndarray                # (N, H) hourly log volume change

    def observed(self, task: str) -> np.ndarray:
        from .losses import Task

        return {Task.RETURN: self.obs_ret, Task.VOLATILITY: self.obs_log_rv,
                Task.VOLUME: self.obs_dvol}[task]

    def target(self, task: str) -> np.ndarray:
        obs = self.observed(task)
        out = np.full_like(obs, np.nan)
        out[:, :-1] = obs[:, 1:]
        return out

    @property
    def ret(self):
        return self.target("RETURN")

    @property
    def log_rv(self):
        return self.target("VOLATILITY")

    @property
    def dvol(self):
        return self.target("VOLUME")


# -- vectorized assembly ------------------------------------------------


def _hour_rows(panel: PanelSeries) -> np.ndarray:
    """Indices of the last minute of each complete wall-clock hour on the grid."""
    abs_minute = panel.minute_ts // NS_PER_MINUTE
    is_hour_end = (abs_minute + 1) % 60 == 0
    rows = np.nonzero(is_hour_end)[0]
    return rows[rows >= 59]  # need the full hour on the grid


def _windowed_sum(x: np.ndarray, ends: np.ndarray, k: int):
    """Sums of x over windows of length k ending at each index in ends."""
    cs = np.concatenate([[0.0], np.cumsum(x)])
    lo = ends - k + 1
    ok = lo >= 0
    out = np.full(ends.size, np.nan)
    out[ok] = cs[ends[ok] + 1] - cs[lo[ok]]
    return out, ok


def _windowed_bad_count(bad: np.ndarray, ends: np.ndarray, k: int):
    s, ok = _windowed_sum(bad.astype(np.float64), ends, k)
    return s, ok


def assemble(panel: PanelSeries, stream: TickStream, cfg: FeatureConfig) -> tuple[FeatureMatrix, TargetSet]:
    """Build the hourly feature matrix and target set for every instrument."""
    rows = _hour_rows(panel)
    hour_ts = panel.minute_ts[rows] - 59 * NS_PER_MINUTE
    hour_close = panel.minute_ts[rows] + NS_PER_MINUTE
    names = cfg.feature_names()
    n = len(panel.instruments)
    h = rows.size
    f = len(names)
    values = np.full((n, h, f), np.nan)

    obs_ret = np.full((n, h), np.nan)
    obs_log_rv = np.full((n, h), np.nan)
    obs_dvol = np.full((n, h), np.nan)

    cal = None
    if cfg.include_calendar:
        cal = np.stack([calendar_dummies(int(t), cfg.tz_offset_hours) for t in hour_ts])

    for j, ins in enumerate(panel.instruments):
        r, ok = one_minute_returns(panel, j)
        r_fill = np.where(ok, r, 0.0)
        bad = (~ok).astype(np.float64)
        mid = panel.mid[:, j]
        valid = panel.valid[:, j]
        tc = panel.trade_count[:, j].astype(np.float64)

        c = 0
        # order-flow imbalance
        ts_ev, e_ev = event_flow_contributions(stream, ins)
        e_cum = np.concatenate([[0.0], np.cumsum(e_ev)])
        for k in cfg.ofi_windows:
            hi = np.searchsorted(ts_ev, hour_close, side="right")
            lo = np.searchsorted(ts_ev, hour_close - k * NS_PER_MINUTE, side="right")
            values[j, :, c] = e_cum[hi] - e_cum[lo]
            c += 1

        # k-minute returns (endpoints only need to be valid)
        for k in cfg.return_windows:
            lo = rows - k
            okk = lo >= 0
            col = np.full(h, np.nan)
            src = np.where(okk, lo, 0)
            both = okk & valid[rows] & valid[src]
            with np.errstate(invalid="ignore", divide="ignore"):
                col[both] = mid[rows[both]] / mid[src[both]] - 1.0
            values[j, :, c] = col
            c += 1

        # realized variance
        for k in cfg.rv_windows:
            s, okk = _windowed_sum(r_fill * r_fill, rows, k)
            nbad, _ = _windowed_bad_count(bad, rows, k)
            s[(nbad > 0) | ~okk] = np.nan
            values[j, :, c] = s
            c += 1

        # semivariances (zero returns count toward both sides)
        pos_sq = np.where(r_fill >= 0, r_fill * r_fill, 0.0)
        neg_sq = np.where(r_fill <= 0, r_fill * r_fill, 0.0)
        for sq in (pos_sq, neg_sq):
            for k in cfg.semivol_windows:
                s, okk = _windowed_sum(sq, rows, k)
                nbad, _ = _windowed_bad_count(bad, rows, k)
                s[(nbad > 0) | ~okk] = np.nan
                values[j, :, c] = s
                c += 1

        # exponentially weighted return / realized variance
        span = cfg.ew_span
        if cfg.ew_weights:
            win_ok = rows - span >= 0
            nbad, _ = _windowed_bad_count(bad, rows, span + 1)
            usable = win_ok & (nbad == 0)
            if usable.any():
                sw = np.lib.stride_tricks.sliding_window_view(r_fill, span + 1)
                sel = sw[rows[usable] - span]          # (n_usable, span+1) oldest..newest
                sel4 = sel ** 4
                for w in cfg.ew_weights:
                    weights = w ** np.arange(span, -1, -1, dtype=np.float64)
                    pref = 1.0 if w == 1.0 else (1.0 - w)
                    col = np.full(h, np.nan)
                    col[usable] = pref * (sel @ weights)
                    values[j, :, c] = col
                    col4 = np.full(h, np.nan)
                    col4[usable] = pref * (sel4 @ weights)
                    values[j, :, c + len(cfg.ew_weights)] = col4
                    c += 1
                c += len(cfg.ew_weights)
            else:
                c += 2 * len(cfg.ew_weights)

        # volume log-changes; instruments without trades carry constant zeros
        # so the row mask is not vacuously false for index nodes
        for k in cfg.volume_windows:
            if ins.has_volume:
                v_now, ok_now = _windowed_sum(tc, rows, k)
                v_prev, ok_prev = _windowed_sum(tc, rows - k, k)
                with np.errstate(invalid="ignore", divide="ignore"):
                    col = np.log(v_now / v_prev)
                col[~(ok_now & ok_prev & (v_now > 0) & (v_prev > 0))] = np.nan
            else:
                col = np.zeros(h)
            values[j, :, c] = col
            c += 1

        if cfg.include_calendar:
            values[j, :, c:c + 29] = cal
            c += 29
        assert c == f

        # observed hourly series for targets and graphs
        lo = rows - 60
        okk = (lo >= 0) & valid[rows] & valid[np.where(lo >= 0, lo, 0)]
        with np.errstate(invalid="ignore", divide="ignore"):
            obs_ret[j, okk] = mid[rows[okk]] / mid[lo[okk]] - 1.0
        rv60, okk2 = _windowed_sum(r_fill * r_fill, rows, 60)
        nbad, _ = _windowed_bad_count(bad, rows, 60)
        rv60[(nbad > 0) | ~okk2] = np.nan
        with np.errstate(invalid="ignore", divide="ignore"):
            obs_log_rv[j] = np.where(rv60 > 0, np.log(rv60), np.nan)
        if ins.has_volume:
            v_now, ok_now = _windowed_sum(tc, rows, 60)
            v_prev, ok_prev = _windowed_sum(tc, rows - 60, 60)
            with np.errstate(invalid="ignore", divide="ignore"):
                dv = np.log(v_now / v_prev)
            dv[~(ok_now & ok_prev & (v_now > 0) & (v_prev > 0))] = np.nan
            obs_dvol[j] = dv

    mask = np.isfinite(values).all(axis=2)
    matrix = FeatureMatrix(hour_ts, names, values, mask, list(panel.instruments),
                           cfg.binary_names())
    targets = TargetSet(hour_ts, list(panel.instruments), obs_ret, obs_log_rv, obs_dvol)
    return matrix, targets


# -- standardization ----------------------------------------------------


@dataclass
class ColumnStats:
    mean: np.ndarray   # (N, F)
    sd: np.ndarray     # (N, F)
    binary: np.ndarray  # (F,) bool


def fit_column_stats(matrix: FeatureMatrix, train_rows: np.ndarray) -> ColumnStats:
    """Per-instrument column means/sds over the given (training) rows only."""
    n, _, f = matrix.values.shape
    mean = np.zeros((n, f))
    sd = np.ones((n, f))
    binary = np.array([name in matrix.binary_names for name in matrix.names])
    for j in range(n):
        rows = train_rows[matrix.mask[j, train_rows]]
        if rows.size == 0:
            continue
        x = matrix.values[j, rows]
        mean[j] = x.mean(axis=0)
        sd[j] = x.std(axis=0)
    return ColumnStats(mean, sd, binary)


def standardize(matrix: FeatureMatrix, stats: ColumnStats) -> FeatureMatrix:
    """Z-score with training stats; binary dummies exempt, tiny-sd columns centered."""
    values = matrix.values.copy()
    for j in range(values.shape[0]):
        mean = stats.mean[j].copy()
        sd = stats.sd[j].copy()
        mean[stats.binary] = 0.0
        sd[stats.binary] = 1.0
        sd[sd < 1e-12] = 1.0
        values[j] = (values[j] - mean) / sd
    return FeatureMatrix(matrix.hour_ts, list(matrix.names), values, matrix.mask.copy(),
                         list(matrix.instruments), set(matrix.binary_names))
