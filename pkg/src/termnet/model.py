"""Per-node LSTM+dense modules pooled by a multi-channel signed-graph
convolution, with skip connections into a shared linear head.

Parameters for the per-node modules are stored stacked along a leading
node axis so a whole batch of (node, time-window) sequences runs through
a handful of batched matmuls. ``share_node_weights`` collapses that axis
to 1, aliasing one module across all nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import SignedGraph, propagation_matrix

TANH = "TANH"
RELU = "RELU"

GATES = ("f", "i", "o", "c")


@dataclass
class ModelConfig:
    lstm_units: int = 64
    dense1_units: int = 32
    dense2_units: int = 16      # width of the pooled node representation
    gcn_out_units: int = 16     # per-channel output width
    seq_len: int = 12
    gcn_activation: str = TANH
    n_channels: int = 12
    share_node_weights: bool = False
    use_gcn: bool = True
    use_lstm: bool = True
    verbatim_hidden_state: bool = False  # h_t = c_t * tanh(c_t) variant
    self_loop_mode: str = "subtract"     # {subtract, add, none}

    def __post_init__(self):
        for v in (self.lstm_units, self.dense1_units, self.dense2_units,
                  self.gcn_out_units, self.seq_len, self.n_channels):
            if v <= 0:
                raise ValueError("model dimensions must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def desk_model_config(n_channels: int = 12) -> ModelConfig:
    """Small model for fast desk-scale runs."""
    return ModelConfig(lstm_units=16, dense1_units=16, dense2_units=8,
                       gcn_out_units=8, seq_len=6, n_channels=n_channels)


@dataclass
class ModelParams:
    tensors: dict[str, Tensor]
    n_nodes: int
    input_dim: int
    config: ModelConfig = None

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def all(self) -> list[Tensor]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def weights(self) -> list[Tensor]:
        """Weight matrices only (biases excluded), for L1 regularization."""
        return [self.tensors[k] for k in sorted(self.tensors) if not k.startswith("b_")]

    def copy(self) -> "ModelParams":
        return ModelParams({k: ad.parameter(v.data.copy(), name=k) for k, v in self.tensors.items()},
                           self.n_nodes, self.input_dim, self.config)


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int, n_nodes: int, input_dim: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1; seed-deterministic."""
    rng = np.random.default_rng(seed)
    np_ax = 1 if config.share_node_weights else n_nodes
    u, d1, f = config.lstm_units, config.dense1_units, config.dense2_units
    f1, k = config.gcn_out_units, config.n_channels
    t: dict[str, Tensor] = {}

    if config.use_lstm:
        for g in GATES:
            t[f"W_{g}"] = ad.parameter(_glorot(rng, (np_ax, input_dim, u), input_dim, u), f"W_{g}")
            t[f"U_{g}"] = ad.parameter(_glorot(rng, (np_ax, u, u), u, u), f"U_{g}")
            bias = np.ones((np_ax, 1, u)) if g == "f" else np.zeros((np_ax, 1, u))
            t[f"b_{g}"] = ad.parameter(bias, f"b_{g}")
        d1_in = u
    else:
        d1_in = input_dim

    t["W_d1"] = ad.parameter(_glorot(rng, (np_ax, d1_in, d1), d1_in, d1), "W_d1")
    t["b_d1"] = ad.parameter(np.zeros((np_ax, 1, d1)), "b_d1")
    t["W_d2"] = ad.parameter(_glorot(rng, (np_ax, d1, f), d1, f), "W_d2")
    t["b_d2"] = ad.parameter(np.zeros((np_ax, 1, f)), "b_d2")

    head_in = f
    if config.use_gcn:
        for i in range(k):
            t[f"W_gcn{i}"] = ad.parameter(_glorot(rng, (f, f1), f, f1), f"W_gcn{i}")
        head_in = k * f1 + f
    t["W_head"] = ad.parameter(_glorot(rng, (head_in, 1), head_in, 1), "W_head")
    t["b_head"] = ad.parameter(np.zeros((1,)), "b_head")
    return ModelParams(t, n_nodes, input_dim, config)


# -- forward passes -----------------------------------------------------


def _lstm_cell(xt: Tensor, h: Tensor | None, c: Tensor | None,
               params: ModelParams, verbatim: bool):
    def gate(g, act):
        z = ad.matmul(xt, params[f"W_{g}"])
        if h is not None:
            z = ad.add(z, ad.matmul(h, params[f"U_{g}"]))
        z = ad.add(z, params[f"b_{g}"])
        return act(z)

    f = gate("f", ad.sigmoid)
    i = gate("i", ad.sigmoid)
    o = gate("o", ad.sigmoid)
    c_hat = gate("c", ad.tanh)
    c_new = ad.mul(i, c_hat)
    if c is not None:
        c_new = ad.add(ad.mul(f, c), c_new)
    gate_out = c_new if verbatim else o
    h_new = ad.mul(gate_out, ad.tanh(c_new))
    return h_new, c_new


def lstm_stack_forward(x: np.ndarray, params: ModelParams, config: ModelConfig) -> Tensor:
    """Run the batched LSTM over x of shape (N, B, T, input_dim); returns (N, B, U)."""
    h = c = None
    for t in range(x.shape[2]):
        xt = Tensor(x[:, :, t, :])
        h, c = _lstm_cell(xt, h, c, params, config.verbatim_hidden_state)
    return h


def lstm_forward(x_seq: np.ndarray, params: ModelParams, config: ModelConfig,
                 step_mask: np.ndarray | None = None) -> Tensor:
    """Single-sequence LSTM: x_seq (T, input_dim) -> final hidden (U,).

    Steps with step_mask False are skipped (state carried unchanged).
    """
    h = c = None
    for t in range(x_seq.shape[0]):
        if step_mask is not None and not step_mask[t]:
            continue
        xt = Tensor(x_seq[None, None, t, :])
        h, c = _lstm_cell(xt, h, c, params, config.verbatim_hidden_state)
    return h[0, 0, :]


def node_module_forward(x: np.ndarray, params: ModelParams, config: ModelConfig) -> Tensor:
    """Per-node representation: LSTM (tanh-activated) then two tanh dense layers.

    x is (N, B, T, input_dim); the (N, B, F) output feeds the GCN and the
    skip connection.
    """
    if config.use_lstm:
        z = ad.tanh(lstm_stack_forward(x, params, config))
    else:
        z = Tensor(x[:, :, -1, :])  # dense-only variant reads the last step
    z = ad.tanh(ad.add(ad.matmul(z, params["W_d1"]), params["b_d1"]))
    z = ad.tanh(ad.add(ad.matmul(z, params["W_d2"]), params["b_d2"]))
    return z


def gcn_forward(h0: Tensor, prop_mats: list[np.ndarray], params: ModelParams,
                config: ModelConfig) -> Tensor:
    """Multi-channel graph convolution.

    h0 is (N, B, F); channel i outputs act(P_i @ h0 @ W_i) with P_i the
    normalized propagation matrix; channels concatenate to (N, B, K*F1).
    """
    act = ad.tanh if config.gcn_activation == TANH else ad.relu
    outs = []
    for i, p in enumerate(prop_mats):
        g = ad.matmul(h0, params[f"W_gcn{i}"])
        outs.append(act(ad.graph_mix(p, g)))
    return ad.concat(outs, axis=-1)


def head_forward(gcn_out: Tensor | None, skips: Tensor, params: ModelParams) -> Tensor:
    """Linear output head over (channel outputs, skip vector) per node: (N, B).

    The gcn and skip blocks multiply separately so that all-zero channel
    outputs (identity graphs) leave the skip contribution bitwise intact.
    """
    w = params["W_head"]
    if gcn_out is None:
        out = ad.matmul(skips, w)
    else:
        gw = gcn_out.shape[-1]
        out = ad.add(ad.matmul(gcn_out, w[:gw]), ad.matmul(skips, w[gw:]))
    out = ad.add(out, params["b_head"])
    return out[:, :, 0]


class GcnLstm:
    """Forecaster bundling parameters, config, and frozen channel graphs."""

    def __init__(self, config: ModelConfig, n_nodes: int, input_dim: int, seed: int = 0,
                 graphs: list[SignedGraph] | None = None, params: ModelParams | None = None):
        if config.use_gcn:
            if graphs is None:
                raise ValueError("use_gcn requires channel graphs")
            if len(graphs) != config.n_channels:
                raise ValueError(f"expected {config.n_channels} graphs, got {len(graphs)}")
        self.config = config
        self.n_nodes = n_nodes
        self.input_dim = input_dim
        self.graphs = graphs or []
        self.prop_mats = [propagation_matrix(g, config.self_loop_mode) for g in self.graphs]
        self.params = params if params is not None else init_params(config, seed, n_nodes, input_dim)

    def forward(self, x: np.ndarray) -> Tensor:
        """x (N, B, T, input_dim) -> forecasts (N, B)."""
        h0 = node_module_forward(x, self.params, self.config)
        gcn_out = None
        if self.config.use_gcn:
            gcn_out = gcn_forward(h0, self.prop_mats, self.params, self.config)
        return head_forward(gcn_out, h0, self.params)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).data

    def graph_hashes(self) -> list[str]:
        return [g.content_hash() for g in self.graphs]
