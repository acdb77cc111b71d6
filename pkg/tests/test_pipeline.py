import numpy as np
import pytest

from termnet import pipeline as P
from termnet import synthgen as S
from termnet.losses import Task
from termnet.marketdata import NS_PER_MINUTE, PanelSeries, parse_instrument


def _panel(codes, n_minutes, mid=None, spread=None, min_size=None, trades=None):
    ids = [parse_instrument(c) for c in codes]
    n = len(ids)
    ts = np.arange(n_minutes, dtype=np.int64) * NS_PER_MINUTE
    mid = np.full((n_minutes, n), 100.0) if mid is None else mid
    spread = np.full((n_minutes, n), 5.0) if spread is None else spread
    min_size = np.full((n_minutes, n), 10.0) if min_size is None else min_size
    trades = np.ones((n_minutes, n), dtype=np.int64) if trades is None else trades
    return PanelSeries(ts, ids, mid, trades, np.ones((n_minutes, n), dtype=bool),
                       spread, min_size)


def _stream(n_days=5, seed=0, instruments=("ES_1", "VX_1"), **kw):
    cfg = S.SynthConfig(n_days=n_days, seed=seed, instruments=list(instruments), **kw)
    return S.generate(cfg)[0]


def _tiny_run(**over):
    defaults = dict(lookback=60, roll=20, epochs_initial=1, epochs_roll=0, seed=0)
    defaults.update(over)
    return P.desk_run(Task.RETURN, **defaults)


class TestTradability:
    def test_spread_and_size_rules(self):
        codes = ["ES_1", "VX_1", "VX_3", "SPX"]
        n = 120
        spread = np.full((n, 4), 5.0)
        size = np.full((n, 4), 10.0)
        spread[:, 2] = 30.0                 # VX_3 too wide (>= 25bp)
        panel = _panel(codes, n, spread=spread, min_size=size)
        rows = np.array([59, 119])
        train, ev = P.tradability_mask(panel, rows, P.TradabilityConfig())
        assert train.all()
        assert ev[0].all() and ev[1].all()
        assert not ev[2].any()              # wide VX contract excluded from eval
        assert not ev[3].any()              # index never tradable

    def test_front_month_or_rule(self):
        codes = ["ES_1", "VX_1"]
        n = 120
        spread = np.full((n, 2), 5.0)
        spread[:60, 0] = 20.0               # ES_1 fails hour 0 (>= 15bp)
        spread[60:, 1] = 40.0               # VX_1 fails hour 1
        panel = _panel(codes, n, spread=spread)
        rows = np.array([59, 119])
        train, ev = P.tradability_mask(panel, rows, P.TradabilityConfig())
        assert list(train) == [True, True]  # one front contract passes each hour
        spread[:, :] = 40.0
        train, _ = P.tradability_mask(panel, rows, P.TradabilityConfig())
        assert not train.any()

    def test_min_size_strict(self):
        panel = _panel(["ES_1"], 60, min_size=np.full((60, 1), 1.0))
        train, ev = P.tradability_mask(panel, np.array([59]), P.TradabilityConfig())
        assert not train.any() and not ev.any()   # size must exceed 1, not equal

    def test_boundary_spread_examples(self):
        # 14 bp ES quote with size 2 passes; exactly 15 bp fails
        panel = _panel(["ES_1"], 60,
                       spread=np.full((60, 1), 14.0), min_size=np.full((60, 1), 2.0))
        train, _ = P.tradability_mask(panel, np.array([59]), P.TradabilityConfig())
        assert train.all()
        panel = _panel(["ES_1"], 60, spread=np.full((60, 1), 15.0))
        train, _ = P.tradability_mask(panel, np.array([59]), P.TradabilityConfig())
        assert not train.any()


class TestHorizonTargets:
    def test_return_hand_check(self):
        n = 60 * 8
        mid = np.full((n, 1), 100.0)
        mid[119] = 103.0
        mid[59 + 360] = 110.0
        panel = _panel(["ES_1"], n, mid=mid)
        rows = np.array([59, 119, 179])
        y, ok = P.horizon_targets(panel, rows, Task.RETURN, 1)
        assert ok[0, 0] and y[0, 0] == pytest.approx(0.03, abs=1e-12)
        y6, ok6 = P.horizon_targets(panel, rows, Task.RETURN, 6)
        assert ok6[0, 0] and y6[0, 0] == pytest.approx(0.10, abs=1e-12)
        # horizon runs past the grid end -> not ok
        assert not ok6[0, 2]

    def test_volatility_log_forward_rv(self):
        n = 60 * 3
        mid = np.full((n, 1), 100.0)
        mid[60:120, 0] = 100.0 * np.cumprod(np.full(60, 1.001))
        panel = _panel(["ES_1"], n, mid=mid)
        rows = np.array([59])
        y, ok = P.horizon_targets(panel, rows, Task.VOLATILITY, 1)
        r = mid[59:120, 0][1:] / mid[59:120, 0][:-1] - 1.0
        assert ok[0, 0]
        assert y[0, 0] == pytest.approx(np.log(np.sum(r * r)), abs=1e-12)

    def test_volume_log_ratio(self):
        n = 60 * 3
        trades = np.zeros((n, 1), dtype=np.int64)
        trades[60:120] = 2     # back window for row 119
        trades[120:180] = 6    # forward window
        panel = _panel(["ES_1"], n, trades=trades)
        y, ok = P.horizon_targets(panel, np.array([119]), Task.VOLUME, 1)
        assert ok[0, 0] and y[0, 0] == pytest.approx(np.log(3.0), abs=1e-12)

    def test_volume_skips_indices(self):
        panel = _panel(["SPX"], 180)
        y, ok = P.horizon_targets(panel, np.array([119]), Task.VOLUME, 1)
        assert not ok.any() and np.isnan(y).all()


class TestPrepare:
    def test_sample_rows_subset_of_masks(self):
        stream = _stream()
        run = _tiny_run()
        prep = P.prepare(run, stream)
        sr = prep.sample_rows
        assert sr.size > run.lookback
        assert prep.train_mask[sr].all()
        assert prep.y_ok[np.ix_(prep.node_idx, sr)].all()
        assert prep.matrix.mask[:, sr].all()

    def test_windows_match_matrix(self):
        stream = _stream()
        run = _tiny_run()
        prep = P.prepare(run, stream)
        t = run.model.seq_len
        row = prep.sample_rows[0]
        win = P.gather_windows(prep, np.array([row]), t)
        assert np.array_equal(win[:, 0], prep.matrix.values[:, row - t + 1: row + 1, :])

    def test_daily_horizon_samples_at_local_midnight(self):
        stream = _stream(n_days=8)
        run = _tiny_run(horizon="1d", lookback=3, roll=1)
        prep = P.prepare(run, stream)
        hours = P._local_hour(prep.matrix.hour_ts[prep.sample_rows], run.tz_offset_hours)
        assert prep.sample_rows.size > 0
        assert np.all(hours == 23)

    def test_volume_task_drops_index_nodes(self):
        stream = _stream(instruments=("ES_1", "VX_1", "SPX"))
        run = P.desk_run(Task.VOLUME, lookback=60, roll=20, epochs_initial=1, epochs_roll=0)
        prep = P.prepare(run, stream)
        codes = [prep.panel.instruments[j].code for j in prep.node_idx]
        assert codes == ["ES_1", "VX_1"]


class TestRolling:
    def test_insufficient_data_message(self):
        stream = _stream(n_days=2)
        run = _tiny_run(lookback=5000, roll=100)
        prep = P.prepare(run, stream)
        from dataclasses import replace
        from termnet.model import GcnLstm, desk_model_config
        cfg = replace(desk_model_config(), use_gcn=False)
        model = GcnLstm(cfg, 2, prep.matrix.values.shape[2])
        with pytest.raises(ValueError, match="insufficient data"):
            P.rolling_train(run, model, prep)

    def test_forecasts_cover_post_lookback_samples(self):
        stream = _stream()
        run = _tiny_run()
        report = P.run_horizon(run, stream)
        prep = P.prepare(run, stream)
        assert sum(report.n_tradable.values()) > 0
        assert set(report.metrics) <= set(report.products)

    def test_block_count(self, monkeypatch):
        stream = _stream()
        run = _tiny_run(epochs_roll=1)
        prep = P.prepare(run, stream)
        s = prep.sample_rows.size
        calls = []
        orig = P.Trainer.fit

        def spy(self, prep_, rows, epochs):
            calls.append(rows.size)
            return orig(self, prep_, rows, epochs)

        monkeypatch.setattr(P.Trainer, "fit", spy)
        P.run_horizon(run, stream, prep=prep)
        import math
        n_blocks = math.ceil((s - run.lookback) / run.roll)
        assert len(calls) == n_blocks      # initial fit + one refit per non-final block
        assert all(c == run.lookback for c in calls)

    def test_roll_size_irrelevant_without_retraining(self):
        stream = _stream()
        a = P.run_horizon(_tiny_run(roll=20), stream)
        b = P.run_horizon(_tiny_run(roll=45), stream)
        for code in a.metrics:
            assert a.metrics[code]["MSE"] == b.metrics[code]["MSE"]


class TestReports:
    def test_metrics_csv_schema(self, tmp_path):
        stream = _stream()
        report = P.run_horizon(_tiny_run(), stream)
        files = P.emit_report(report, tmp_path)
        metrics = [f for f in files if "metrics_" in str(f)][0]
        lines = open(metrics).read().strip().split("\n")
        assert lines[0] == "product,SR,PPD,MSE,MAE,n_tradable,low_power"
        assert len(lines) == 1 + len(report.products)
        config = [f for f in files if "config_" in str(f)][0]
        assert report.fingerprint in str(config)

    def test_rerun_byte_identical(self, tmp_path):
        stream = _stream()
        run = _tiny_run(epochs_initial=2, epochs_roll=1)
        r1 = P.run_horizon(run, stream)
        r2 = P.run_horizon(run, stream)
        assert r1.fingerprint == r2.fingerprint
        f1 = P.emit_report(r1, tmp_path / "a")
        f2 = P.emit_report(r2, tmp_path / "b")
        for a, b in zip(f1, f2):
            assert open(a, "rb").read() == open(b, "rb").read()

    def test_fingerprint_sensitivity(self):
        stream = _stream()
        run = _tiny_run()
        prep = P.prepare(run, stream)
        fp = P.fingerprint(run, prep.data_hash, ["aa"])
        assert P.fingerprint(_tiny_run(seed=1), prep.data_hash, ["aa"]) != fp
        assert P.fingerprint(run, "deadbeef", ["aa"]) != fp
        assert P.fingerprint(run, prep.data_hash, ["bb"]) != fp


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            P.RunConfig(lookback=10, roll=10)
        with pytest.raises(ValueError):
            P.RunConfig(horizon="2h")
        with pytest.raises(ValueError):
            P.RunConfig(task="NOPE")

    def test_loss_defaults(self):
        assert P.RunConfig(task=Task.RETURN).loss_name() == "MIXED"
        assert P.RunConfig(task=Task.VOLATILITY).loss_name() == "QLIKE"
        assert P.RunConfig(task=Task.VOLUME, loss="MSE").loss_name() == "MSE"

    def test_desk_profile(self):
        run = P.desk_run(Task.RETURN)
        assert run.lookback == 2000 and run.roll == 250
        assert run.model.lstm_units == 16
        assert not run.features.include_calendar
