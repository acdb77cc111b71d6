import numpy as np
import pytest

from termnet import autodiff as ad
from termnet import model as M
from termnet.graphs import SignedGraph, degree_vector
from util import finite_diff_check


def _small_cfg(**over):
    base = dict(lstm_units=6, dense1_units=5, dense2_units=4, gcn_out_units=3,
                seq_len=4, n_channels=2)
    base.update(over)
    return M.ModelConfig(**base)


def _random_graphs(rng, n, k):
    out = []
    for _ in range(k):
        a = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.6)
        np.fill_diagonal(a, 1.0)
        out.append(SignedGraph([], a, degree_vector(a), {}))
    return out


def _identity_graphs(n, k):
    eye = np.eye(n)
    return [SignedGraph([], eye.copy(), degree_vector(eye), {}) for _ in range(k)]


class TestInit:
    def test_shapes_and_forget_bias(self):
        cfg = _small_cfg()
        p = M.init_params(cfg, seed=0, n_nodes=3, input_dim=7)
        assert p["W_f"].shape == (3, 7, 6)
        assert p["U_c"].shape == (3, 6, 6)
        assert np.all(p["b_f"].data == 1.0)
        assert np.all(p["b_i"].data == 0.0)
        assert p["W_head"].shape == (2 * 3 + 4, 1)

    def test_shared_weights_collapse_node_axis(self):
        cfg = _small_cfg(share_node_weights=True)
        p = M.init_params(cfg, seed=0, n_nodes=5, input_dim=7)
        assert p["W_f"].shape == (1, 7, 6)

    def test_seed_determinism(self):
        cfg = _small_cfg()
        a = M.init_params(cfg, seed=3, n_nodes=2, input_dim=4)
        b = M.init_params(cfg, seed=3, n_nodes=2, input_dim=4)
        for k in a.tensors:
            assert np.array_equal(a[k].data, b[k].data)

    def test_weights_exclude_biases(self):
        cfg = _small_cfg()
        p = M.init_params(cfg, seed=0, n_nodes=2, input_dim=4)
        names = {t.name for t in p.weights()}
        assert not any(n.startswith("b_") for n in names)
        assert "W_f" in names


class TestForward:
    def test_output_shape(self):
        rng = np.random.default_rng(0)
        cfg = _small_cfg()
        m = M.GcnLstm(cfg, 3, 5, seed=1, graphs=_random_graphs(rng, 3, 2))
        x = rng.normal(size=(3, 8, cfg.seq_len, 5))
        assert m.forward(x).shape == (3, 8)

    def test_full_gradient_check(self):
        rng = np.random.default_rng(1)
        cfg = _small_cfg()
        m = M.GcnLstm(cfg, 3, 5, seed=2, graphs=_random_graphs(rng, 3, 2))
        x = rng.normal(size=(3, 4, cfg.seq_len, 5))
        y = rng.normal(size=(3, 4))

        def loss():
            d = ad.sub(m.forward(x), y)
            return ad.mean(ad.mul(d, d))

        finite_diff_check(loss, m.params.all(), rng, n_probe=4)

    def test_identity_graphs_reduce_to_skip_model(self):
        # with A = I the propagation matrix is zero, so the GCN channels
        # contribute nothing and forecasts equal the no-GCN model using the
        # same module weights and matching head weights on the skip block
        rng = np.random.default_rng(2)
        for seed in range(10):
            cfg = _small_cfg()
            m = M.GcnLstm(cfg, 4, 6, seed=seed, graphs=_identity_graphs(4, 2))
            cfg_ng = _small_cfg(use_gcn=False)
            mn = M.GcnLstm(cfg_ng, 4, 6, seed=seed)
            gcn_width = cfg.n_channels * cfg.gcn_out_units
            for k, t in mn.params.tensors.items():
                if k == "W_head":
                    t.data[:] = m.params["W_head"].data[gcn_width:]
                else:
                    t.data[:] = m.params[k].data
            x = rng.normal(size=(4, 5, cfg.seq_len, 6))
            out_full = m.predict(x)
            out_skip = mn.predict(x)
            assert np.array_equal(out_full, out_skip)

    def test_tanh_vs_relu_differ(self):
        rng = np.random.default_rng(3)
        g = _random_graphs(rng, 3, 2)
        x = rng.normal(size=(3, 2, 4, 5))
        a = M.GcnLstm(_small_cfg(), 3, 5, seed=0, graphs=g).predict(x)
        b = M.GcnLstm(_small_cfg(gcn_activation=M.RELU), 3, 5, seed=0, graphs=g).predict(x)
        assert not np.allclose(a, b)

    def test_verbatim_hidden_state_differs(self):
        rng = np.random.default_rng(4)
        g = _random_graphs(rng, 2, 2)
        x = rng.normal(size=(2, 3, 4, 5))
        a = M.GcnLstm(_small_cfg(), 2, 5, seed=0, graphs=g).predict(x)
        b = M.GcnLstm(_small_cfg(verbatim_hidden_state=True), 2, 5, seed=0,
                      graphs=g).predict(x)
        assert not np.allclose(a, b)

    def test_no_lstm_variant_reads_last_step(self):
        rng = np.random.default_rng(5)
        cfg = _small_cfg(use_lstm=False, use_gcn=False)
        m = M.GcnLstm(cfg, 2, 5, seed=0)
        x = rng.normal(size=(2, 3, cfg.seq_len, 5))
        x2 = x.copy()
        x2[:, :, :-1, :] = rng.normal(size=(2, 3, cfg.seq_len - 1, 5))
        assert np.array_equal(m.predict(x), m.predict(x2))

    def test_shared_weights_identical_nodes_identical_outputs(self):
        rng = np.random.default_rng(6)
        cfg = _small_cfg(share_node_weights=True, use_gcn=False)
        m = M.GcnLstm(cfg, 3, 5, seed=0)
        x = np.broadcast_to(rng.normal(size=(1, 4, cfg.seq_len, 5)), (3, 4, cfg.seq_len, 5)).copy()
        out = m.predict(x)
        assert np.allclose(out[0], out[1]) and np.allclose(out[0], out[2])

    def test_per_node_permutation_equivariance_without_gcn(self):
        rng = np.random.default_rng(7)
        cfg = _small_cfg(use_gcn=False)
        m = M.GcnLstm(cfg, 3, 5, seed=0)
        x = rng.normal(size=(3, 4, cfg.seq_len, 5))
        out = m.predict(x)
        perm = np.array([2, 0, 1])
        m2 = M.GcnLstm(cfg, 3, 5, seed=0)
        for k, t in m2.params.tensors.items():
            if t.data.shape[0] == 3:
                t.data[:] = m.params[k].data[perm]
        out2 = m2.predict(x[perm])
        assert np.allclose(out2, out[perm], atol=1e-12)


class TestSingleSequenceLstm:
    def test_matches_batched(self):
        rng = np.random.default_rng(8)
        cfg = _small_cfg(share_node_weights=True)
        p = M.init_params(cfg, seed=0, n_nodes=1, input_dim=5)
        x = rng.normal(size=(1, 1, cfg.seq_len, 5))
        batched = M.lstm_stack_forward(x, p, cfg).data[0, 0]
        single = M.lstm_forward(x[0, 0], p, cfg).data
        assert np.allclose(batched, single, atol=1e-15)

    def test_masked_padding_invariance(self):
        rng = np.random.default_rng(9)
        cfg = _small_cfg(share_node_weights=True)
        p = M.init_params(cfg, seed=1, n_nodes=1, input_dim=5)
        x = rng.normal(size=(4, 5))
        pad = rng.normal(size=(3, 5))
        padded = np.vstack([pad, x])
        mask = np.array([False] * 3 + [True] * 4)
        out_plain = M.lstm_forward(x, p, cfg).data
        out_padded = M.lstm_forward(padded, p, cfg, step_mask=mask).data
        assert np.array_equal(out_plain, out_padded)


class TestConfig:
    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            M.ModelConfig(lstm_units=0)

    def test_gcn_requires_graphs(self):
        with pytest.raises(ValueError):
            M.GcnLstm(_small_cfg(), 3, 5, seed=0, graphs=None)

    def test_channel_count_checked(self):
        rng = np.random.default_rng(10)
        with pytest.raises(ValueError):
            M.GcnLstm(_small_cfg(n_channels=3), 3, 5, graphs=_random_graphs(rng, 3, 2))
