"""Synthetic tick-stream generator with known planted structure.

A market factor drives the equity-class instruments and a negatively
cross-correlated factor drives the volatility class; log-variance follows
an AR(1) so realized variance clusters; trade intensity rises with the
volatility state. Optionally a cross-node lagged dependence is planted:
one node's next-hour return contains beta times another node's
current-hour observable, recorded as ground truth for learnability tests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .marketdata import (
    NS_PER_MINUTE,
    EventKind,
    InstrumentClass,
    InstrumentId,
    TickStream,
    canonical_universe,
    parse_instrument,
)

MINUTES_PER_DAY = 1440
# Monday 06:00 UTC = Monday 00:00 exchange-local under the default offset.
DEFAULT_START_NS = 1_767_592_800_000_000_000


@dataclass
class CrossLag:
    """Planted dependence: dest's hour-(h+1) return gains beta * source's hour-h quantity."""

    source: str = "ES_1"
    dest: str = "ES_3"
    beta: float = 1.0
    use_idio: bool = True    # couple to the source's idiosyncratic part only
    noise_sd: float = 0.0    # extra hourly gaussian noise on dest


@dataclass
class SynthConfig:
    n_days: int = 10
    seed: int = 0
    instruments: list[str] = field(default_factory=lambda: [i.code for i in canonical_universe()])
    factor_loadings: dict | None = None   # code -> loading; default 0.9^(rank-1), 1.0 for indices
    rho_cross: float = -0.6               # corr(market factor, volatility-class factor)
    vol_persistence: float = 0.97
    vol_shock_sd: float = 0.25
    base_minute_vol: float = 4e-4
    idio_frac: float = 1.0                # idio minute sd = idio_frac * base_minute_vol
    base_intensity: float = 1.2           # mean trades per minute per futures instrument
    volume_elasticity: float = 1.0
    es_spread_bp: tuple = (6.0, 12.0)     # narrow-regime quoted spread range
    vx_spread_bp: tuple = (10.0, 20.0)
    wide_spread_prob: float = 0.10        # wide regime straddles the tradability cutoffs
    es_wide_bp: tuple = (16.0, 30.0)
    vx_wide_bp: tuple = (26.0, 50.0)
    small_size_prob: float = 0.05         # sizes drawn from {0, 1} to exercise filters
    start_ns: int = DEFAULT_START_NS
    cross_lag: CrossLag | None = None

    def __post_init__(self):
        if not 0.0 < self.vol_persistence < 1.0:
            raise ValueError("vol_persistence must be in (0, 1)")
        if self.base_intensity <= 0 or self.base_minute_vol <= 0:
            raise ValueError("intensities and vols must be positive")
        if self.n_days <= 0:
            raise ValueError("n_days must be positive")

    def instrument_ids(self) -> list[InstrumentId]:
        return [parse_instrument(c) for c in self.instruments]


def plant_predictability(config: SynthConfig, source: str = "ES_1", dest: str = "ES_3",
                         beta: float = 1.0, use_idio: bool = True,
                         noise_sd: float = 0.0) -> SynthConfig:
    if source not in config.instruments or dest not in config.instruments:
        raise ValueError("cross-lag endpoints must be generated instruments")
    return replace(config, cross_lag=CrossLag(source, dest, beta, use_idio, noise_sd))


def _loading(cfg: SynthConfig, ins: InstrumentId) -> float:
    if cfg.factor_loadings and ins.code in cfg.factor_loadings:
        return float(cfg.factor_loadings[ins.code])
    return 1.0 if ins.is_index else 0.9 ** (ins.tenor_rank - 1)


def _base_price(ins: InstrumentId) -> float:
    if ins.klass is InstrumentClass.ES:
        return 4500.0 + 10.0 * ins.tenor_rank
    if ins.klass is InstrumentClass.VX:
        return 15.0 + 0.8 * ins.tenor_rank
    return 4500.0 if ins.klass is InstrumentClass.INDEX_SPX else 15.0


def _is_vol_class(ins: InstrumentId) -> bool:
    return ins.klass in (InstrumentClass.VX, InstrumentClass.INDEX_VIX)


def _ar1(rng, n, phi, shock_sd):
    s = np.empty(n)
    stat_sd = shock_sd / np.sqrt(1.0 - phi * phi)
    s[0] = stat_sd * rng.standard_normal()
    eta = shock_sd * rng.standard_normal(n - 1)
    for t in range(1, n):
        s[t] = phi * s[t - 1] + eta[t - 1]
    return s


def generate(cfg: SynthConfig) -> tuple[TickStream, dict]:
    """Deterministic (config, seed) -> (tick stream, ground-truth record)."""
    rng = np.random.default_rng(cfg.seed)
    ids = cfg.instrument_ids()
    n_ins = len(ids)
    n_min = cfg.n_days * MINUTES_PER_DAY
    n_hours = n_min // 60

    z = rng.standard_normal(n_min)                       # market factor
    eps = rng.standard_normal(n_min)
    w = cfg.rho_cross * z + np.sqrt(1.0 - cfg.rho_cross ** 2) * eps
    s_es = _ar1(rng, n_min, cfg.vol_persistence, cfg.vol_shock_sd)
    s_vx = _ar1(rng, n_min, cfg.vol_persistence, cfg.vol_shock_sd)

    returns = np.empty((n_min, n_ins))
    idio_paths = np.empty((n_min, n_ins))
    vol_state = np.empty((n_min, n_ins))
    for j, ins in enumerate(ids):
        vol_cls = _is_vol_class(ins)
        fac = w if vol_cls else z
        state = s_vx if vol_cls else s_es
        scale = cfg.base_minute_vol * np.exp(state / 2.0)
        idio = cfg.base_minute_vol * cfg.idio_frac * rng.standard_normal(n_min)
        returns[:, j] = scale * _loading(cfg, ins) * fac + idio
        idio_paths[:, j] = idio
        vol_state[:, j] = state

    planted = None
    if cfg.cross_lag is not None and cfg.cross_lag.beta != 0.0:
        cl = cfg.cross_lag
        src = cfg.instruments.index(cl.source)
        dst = cfg.instruments.index(cl.dest)
        driver = idio_paths[:, src] if cl.use_idio else returns[:, src].copy()
        q = driver.reshape(n_hours, 60).sum(axis=1)      # hourly source quantity
        drift = np.zeros(n_min)
        inject = cl.beta * q[:-1]
        if cl.noise_sd > 0:
            inject = inject + cl.noise_sd * rng.standard_normal(n_hours - 1)
        drift[60:] = np.repeat(inject / 60.0, 60)
        returns[:, dst] += drift
        planted = {
            "source": cl.source, "dest": cl.dest, "beta": cl.beta,
            "use_idio": cl.use_idio, "noise_sd": cl.noise_sd,
            "signal_hourly_var": float(np.var(cl.beta * q)),
            "dest_hourly_ret_var": float(np.var(returns[:, dst].reshape(n_hours, 60).sum(axis=1))),
        }

    mid = np.empty((n_min, n_ins))
    for j, ins in enumerate(ids):
        mid[:, j] = _base_price(ins) * np.cumprod(1.0 + returns[:, j])

    minute_start = cfg.start_ns + np.arange(n_min, dtype=np.int64) * NS_PER_MINUTE

    ts_parts, inst_parts, bid_parts, ask_parts = [], [], [], []
    bsz_parts, asz_parts, kind_parts = [], [], []

    for j, ins in enumerate(ids):
        if ins.is_index:
            spread_frac = np.zeros(n_min)
            bsz = np.ones(n_min, dtype=np.int64)
            asz = np.ones(n_min, dtype=np.int64)
        else:
            es_like = ins.klass is InstrumentClass.ES
            lo, hi = cfg.es_spread_bp if es_like else cfg.vx_spread_bp
            wlo, whi = cfg.es_wide_bp if es_like else cfg.vx_wide_bp
            bp = rng.uniform(lo, hi, n_min)
            wide = rng.random(n_min) < cfg.wide_spread_prob
            bp[wide] = rng.uniform(wlo, whi, int(wide.sum()))
            spread_frac = bp * 1e-4
            bsz = rng.integers(2, 41, n_min)
            asz = rng.integers(2, 41, n_min)
            small = rng.random(n_min) < cfg.small_size_prob
            bsz[small] = rng.integers(0, 2, int(small.sum()))
            asz[small] = rng.integers(0, 2, int(small.sum()))

        half = mid[:, j] * spread_frac / 2.0
        ts_parts.append(minute_start + 1_000_000_000)
        inst_parts.append(np.full(n_min, j, dtype=np.int16))
        bid_parts.append(mid[:, j] - half)
        ask_parts.append(mid[:, j] + half)
        bsz_parts.append(bsz.astype(np.int64))
        asz_parts.append(asz.astype(np.int64))
        kind_parts.append(np.full(n_min, int(EventKind.QUOTE), dtype=np.int8))

        if ins.has_volume:
            lam = cfg.base_intensity * np.exp(cfg.volume_elasticity * vol_state[:, j])
            counts = rng.poisson(lam)
            total = int(counts.sum())
            if total:
                t_min = np.repeat(minute_start, counts)
                offs = rng.integers(2_000_000_000, 59_000_000_000, total)
                t_idx = np.repeat(np.arange(n_min), counts)
                ts_parts.append(t_min + offs)
                inst_parts.append(np.full(total, j, dtype=np.int16))
                bid_parts.append((mid[:, j] - half)[t_idx])
                ask_parts.append((mid[:, j] + half)[t_idx])
                bsz_parts.append(np.maximum(bsz, 1)[t_idx].astype(np.int64))
                asz_parts.append(np.maximum(asz, 1)[t_idx].astype(np.int64))
                kind_parts.append(np.full(total, int(EventKind.TRADE), dtype=np.int8))

    stream = TickStream(
        ids,
        np.concatenate(ts_parts),
        np.concatenate(inst_parts),
        np.concatenate(bid_parts),
        np.concatenate(ask_parts),
        np.concatenate(bsz_parts),
        np.concatenate(asz_parts),
        np.concatenate(kind_parts),
    )
    order = np.argsort(stream.ts, kind="stable")
    stream = stream.select(order)

    truth = {
        "seed": cfg.seed,
        "n_days": cfg.n_days,
        "instruments": list(cfg.instruments),
        "rho_cross": cfg.rho_cross,
        "vol_persistence": cfg.vol_persistence,
        "base_minute_vol": cfg.base_minute_vol,
        "idio_frac": cfg.idio_frac,
        "volume_elasticity": cfg.volume_elasticity,
        "factor_loadings": {i.code: _loading(cfg, i) for i in ids},
        "planted": planted,
        "start_ns": cfg.start_ns,
    }
    return stream, truth


def write_ground_truth(truth: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(truth, f, indent=2, sort_keys=True)
