"""Level-1 tick ingestion, liquidity filtering, and minute-panel construction.

The tick stream is stored columnar (one numpy array per field) so that
filtering, order-flow aggregation, and panel building stay vectorized.
``TickEvent`` is the per-row view used at the edges (parsing, tests).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

NS_PER_MINUTE = 60_000_000_000
NS_PER_HOUR = 60 * NS_PER_MINUTE
NS_PER_DAY = 24 * NS_PER_HOUR

# Exchange-local clock = UTC + this offset (hour-of-day dummies, day grouping).
DEFAULT_TZ_OFFSET_HOURS = -6


class InstrumentClass(enum.Enum):
    ES = "ES"
    VX = "VX"
    INDEX_SPX = "INDEX_SPX"
    INDEX_VIX = "INDEX_VIX"


_TENOR_RANGE = {
    InstrumentClass.ES: (1, 4),
    InstrumentClass.VX: (1, 8),
    InstrumentClass.INDEX_SPX: (0, 0),
    InstrumentClass.INDEX_VIX: (0, 0),
}


@dataclass(frozen=True)
class InstrumentId:
    klass: InstrumentClass
    tenor_rank: int

    def __post_init__(self):
        lo, hi = _TENOR_RANGE[self.klass]
        if not lo <= self.tenor_rank <= hi:
            raise ValueError(f"tenor rank {self.tenor_rank} out of range for {self.klass}")

    @property
    def code(self) -> str:
        if self.klass is InstrumentClass.ES:
            return f"ES_{self.tenor_rank}"
        if self.klass is InstrumentClass.VX:
            return f"VX_{self.tenor_rank}"
        return "SPX" if self.klass is InstrumentClass.INDEX_SPX else "VIX"

    @property
    def is_index(self) -> bool:
        return self.klass in (InstrumentClass.INDEX_SPX, InstrumentClass.INDEX_VIX)

    @property
    def has_volume(self) -> bool:
        return not self.is_index


def parse_instrument(code: str) -> InstrumentId:
    if code == "SPX":
        return InstrumentId(InstrumentClass.INDEX_SPX, 0)
    if code == "VIX":
        return InstrumentId(InstrumentClass.INDEX_VIX, 0)
    try:
        prefix, rank = code.split("_")
        return InstrumentId(InstrumentClass[prefix], int(rank))
    except (ValueError, KeyError) as exc:
        raise ValueError(f"unknown instrument code {code!r}") from exc


def canonical_universe() -> list[InstrumentId]:
    """The 14-node universe: 4 ES + 8 VX futures plus the two indices."""
    out = [InstrumentId(InstrumentClass.ES, r) for r in range(1, 5)]
    out += [InstrumentId(InstrumentClass.VX, r) for r in range(1, 9)]
    out += [InstrumentId(InstrumentClass.INDEX_SPX, 0), InstrumentId(InstrumentClass.INDEX_VIX, 0)]
    return out


class EventKind(enum.IntEnum):
    TRADE = 0
    QUOTE = 1
    CANCEL = 2


_KIND_FROM_CODE = {"T": EventKind.TRADE, "Q": EventKind.QUOTE, "C": EventKind.CANCEL}
_CODE_FROM_KIND = {v: k for k, v in _KIND_FROM_CODE.items()}


@dataclass(frozen=True)
class TickEvent:
    timestamp: int
    instrument: InstrumentId
    bid_price: float
    ask_price: float
    bid_size: int
    ask_size: int
    kind: EventKind

    @property
    def zero_liquidity(self) -> bool:
        return self.bid_size <= 0 or self.ask_size <= 0


@dataclass
class TickStream:
    """Columnar, time-sorted tick stream over a fixed instrument list."""

    instruments: list[InstrumentId]
    ts: np.ndarray          # int64 ns UTC
    inst: np.ndarray        # int16 index into instruments
    bid_px: np.ndarray      # float64
    ask_px: np.ndarray      # float64
    bid_sz: np.ndarray      # int64
    ask_sz: np.ndarray      # int64
    kind: np.ndarray        # int8 EventKind

    def __len__(self):
        return self.ts.size

    def __getitem__(self, i: int) -> TickEvent:
        return TickEvent(
            int(self.ts[i]), self.instruments[self.inst[i]],
            float(self.bid_px[i]), float(self.ask_px[i]),
            int(self.bid_sz[i]), int(self.ask_sz[i]), EventKind(self.kind[i]),
        )

    def select(self, mask: np.ndarray) -> "TickStream":
        return TickStream(
            self.instruments, self.ts[mask], self.inst[mask],
            self.bid_px[mask], self.ask_px[mask],
            self.bid_sz[mask], self.ask_sz[mask], self.kind[mask],
        )

    def for_instrument(self, instrument: InstrumentId) -> "TickStream":
        return self.select(self.inst == self.instruments.index(instrument))

    def zero_liquidity_mask(self) -> np.ndarray:
        return (self.bid_sz <= 0) | (self.ask_sz <= 0)

    def to_csv(self, path) -> None:
        codes = np.array([i.code for i in self.instruments])
        kinds = np.array([_CODE_FROM_KIND[EventKind(k)] for k in range(3)])
        df = pd.DataFrame({
            "ts_ns": self.ts,
            "instrument": codes[self.inst],
            "bid_px": self.bid_px,
            "ask_px": self.ask_px,
            "bid_sz": self.bid_sz,
            "ask_sz": self.ask_sz,
            "kind": kinds[self.kind],
        })
        df.to_csv(path, index=False)


@dataclass
class FormatConfig:
    """Tick CSV parsing options."""

    regression_tolerance_ns: int = 0


def load_ticks(path, spec: FormatConfig | None = None) -> tuple[TickStream, int]:
    """Parse the tick CSV schema; returns (stream, malformed row count).

    Events are sorted by timestamp (stable, so per-instrument order is
    preserved). A timestamp regression beyond the configured tolerance
    within one instrument's stream is an error.
    """
    spec = spec or FormatConfig()
    df = pd.read_csv(path, dtype=str)
    expected = ["ts_ns", "instrument", "bid_px", "ask_px", "bid_sz", "ask_sz", "kind"]
    if list(df.columns) != expected:
        raise ValueError(f"bad tick CSV header: {list(df.columns)}")

    universe = canonical_universe()
    code_to_idx = {ins.code: i for i, ins in enumerate(universe)}
    unknown = set(df["instrument"].unique()) - set(code_to_idx)
    if unknown:
        raise ValueError(f"unknown instrument codes: {sorted(unknown)}")

    ts = pd.to_numeric(df["ts_ns"], errors="coerce")
    bid_px = pd.to_numeric(df["bid_px"], errors="coerce")
    ask_px = pd.to_numeric(df["ask_px"], errors="coerce")
    bid_sz = pd.to_numeric(df["bid_sz"], errors="coerce")
    ask_sz = pd.to_numeric(df["ask_sz"], errors="coerce")
    kind_ok = df["kind"].isin(_KIND_FROM_CODE)
    ok = ts.notna() & bid_px.notna() & ask_px.notna() & bid_sz.notna() & ask_sz.notna() & kind_ok
    n_malformed = int((~ok).sum())

    df = df[ok]
    # the working universe is the canonical subset actually present, so
    # files covering few instruments do not drag in permanently-dead columns
    present = set(df["instrument"].unique())
    universe = [ins for ins in universe if ins.code in present]
    code_to_idx = {ins.code: i for i, ins in enumerate(universe)}
    inst = df["instrument"].map(code_to_idx).to_numpy(dtype=np.int16)
    stream = TickStream(
        universe,
        ts[ok].to_numpy(dtype=np.int64),
        inst,
        bid_px[ok].to_numpy(dtype=np.float64),
        ask_px[ok].to_numpy(dtype=np.float64),
        bid_sz[ok].to_numpy(dtype=np.int64),
        ask_sz[ok].to_numpy(dtype=np.int64),
        df["kind"].map(lambda k: int(_KIND_FROM_CODE[k])).to_numpy(dtype=np.int8),
    )

    order = np.argsort(stream.ts, kind="stable")
    stream = stream.select(order)
    for i in range(len(universe)):
        sub_ts = stream.ts[stream.inst == i]
        if sub_ts.size > 1:
            regress = np.diff(sub_ts).min()
            if regress < -spec.regression_tolerance_ns:
                raise ValueError(
                    f"timestamp regression of {-regress} ns for {universe[i].code}"
                )
    return stream, n_malformed


def filter_zero_liquidity(stream: TickStream) -> TickStream:
    """Keep exactly the events with positive size on both sides."""
    return stream.select(~stream.zero_liquidity_mask())


def mid_price(bid, ask):
    bid = np.asarray(bid, dtype=np.float64)
    ask = np.asarray(ask, dtype=np.float64)
    if not (np.all(np.isfinite(bid)) and np.all(np.isfinite(ask))):
        raise ValueError("non-finite price")
    out = (bid + ask) / 2.0
    return float(out) if out.ndim == 0 else out


def spread_bp(bid, ask):
    """Quoted spread in basis points of the mid."""
    bid = np.asarray(bid, dtype=np.float64)
    ask = np.asarray(ask, dtype=np.float64)
    mid = (bid + ask) / 2.0
    if np.any(mid <= 0):
        raise ValueError("non-positive mid price")
    out = 1e4 * (ask - bid) / mid
    return float(out) if out.ndim == 0 else out


@dataclass
class GridConfig:
    start_ns: int | None = None
    end_ns: int | None = None
    ffill_limit_minutes: int = 120


@dataclass
class PanelSeries:
    """Aligned per-instrument minute series (one shared grid)."""

    minute_ts: np.ndarray            # int64 ns, start of each minute
    instruments: list[InstrumentId]
    mid: np.ndarray                  # (M, N) float64, NaN when invalid
    trade_count: np.ndarray          # (M, N) int64
    valid: np.ndarray                # (M, N) bool
    spread: np.ndarray               # (M, N) float64 bp of last quote, NaN when invalid
    min_size: np.ndarray             # (M, N) float64 min(bid_sz, ask_sz) of last quote
    meta: dict = field(default_factory=dict)

    @property
    def n_minutes(self):
        return self.minute_ts.size

    def column(self, instrument: InstrumentId) -> int:
        return self.instruments.index(instrument)

    def export_csv(self, out_dir) -> None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        for j, ins in enumerate(self.instruments):
            df = pd.DataFrame({
                "minute_ts": self.minute_ts,
                "mid": self.mid[:, j],
                "trade_count": self.trade_count[:, j],
                "valid": self.valid[:, j].astype(int),
            })
            df.to_csv(os.path.join(out_dir, f"panel_{ins.code}.csv"), index=False)


def build_panel(stream: TickStream, universe: list[InstrumentId],
                grid: GridConfig | None = None) -> PanelSeries:
    """Aggregate a filtered stream to 1-minute bars on a shared grid.

    A minute's mid is the last observed mid at or before minute close,
    forward-filled across gaps up to the configured limit; trade_count is
    the number of TRADE events inside the minute.
    """
    if not universe:
        raise ValueError("empty universe")
    grid = grid or GridConfig()
    if len(stream) == 0 and (grid.start_ns is None or grid.end_ns is None):
        raise ValueError("empty stream requires an explicit grid range")
    start = grid.start_ns if grid.start_ns is not None else int(stream.ts.min())
    end = grid.end_ns if grid.end_ns is not None else int(stream.ts.max())
    first_minute = start // NS_PER_MINUTE
    last_minute = end // NS_PER_MINUTE
    minute_ts = np.arange(first_minute, last_minute + 1, dtype=np.int64) * NS_PER_MINUTE
    m = minute_ts.size
    n = len(universe)

    mid = np.full((m, n), np.nan)
    spread = np.full((m, n), np.nan)
    min_size = np.full((m, n), np.nan)
    trade_count = np.zeros((m, n), dtype=np.int64)
    valid = np.zeros((m, n), dtype=bool)

    uni_idx = [stream.instruments.index(ins) for ins in universe]
    closes = minute_ts + NS_PER_MINUTE  # exclusive close of each minute

    for j, src in enumerate(uni_idx):
        sel = stream.inst == src
        ts = stream.ts[sel]
        if ts.size == 0:
            continue
        ev_mid = (stream.bid_px[sel] + stream.ask_px[sel]) / 2.0
        ev_spread = 1e4 * (stream.ask_px[sel] - stream.bid_px[sel]) / ev_mid
        ev_min_sz = np.minimum(stream.bid_sz[sel], stream.ask_sz[sel]).astype(np.float64)
        kinds = stream.kind[sel]

        # index of last event strictly before each minute close
        pos = np.searchsorted(ts, closes, side="left") - 1
        has_obs = pos >= 0
        obs_minute = np.full(m, -10**9, dtype=np.int64)
        obs_minute[has_obs] = ts[pos[has_obs]] // NS_PER_MINUTE
        age = (minute_ts // NS_PER_MINUTE) - obs_minute
        fresh = has_obs & (age <= grid.ffill_limit_minutes)

        mid[fresh, j] = ev_mid[pos[fresh]]
        spread[fresh, j] = ev_spread[pos[fresh]]
        min_size[fresh, j] = ev_min_sz[pos[fresh]]
        valid[:, j] = fresh

        trades = kinds == int(EventKind.TRADE)
        if trades.any():
            t_minutes = ts[trades] // NS_PER_MINUTE - first_minute
            in_grid = (t_minutes >= 0) & (t_minutes < m)
            trade_count[:, j] = np.bincount(t_minutes[in_grid], minlength=m)

    return PanelSeries(minute_ts, list(universe), mid, trade_count, valid, spread, min_size)
