"""Signed adjacency matrices from rank correlations of hourly quantities.

For every ordered (source, destination) quantity pair, four constructions
exist: {contemporaneous, lagged-by-one-hour} x {weighted, unweighted K-NN}.
Index nodes carry no volume, so volume-source (volume-destination) graphs
have all-zero rows (columns) for them.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .features import TargetSet
from .losses import Task
from .marketdata import InstrumentClass, InstrumentId

WEIGHTED = "WEIGHTED"
UNWEIGHTED = "UNWEIGHTED"

CONTEMPORANEOUS = 0
LAGGED = 1

SPX_CLUSTER = "SPX"
VIX_CLUSTER = "VIX"

# canonical variant order within each quantity pair
VARIANTS = [
    (CONTEMPORANEOUS, WEIGHTED),
    (CONTEMPORANEOUS, UNWEIGHTED),
    (LAGGED, WEIGHTED),
    (LAGGED, UNWEIGHTED),
]
VARIANT_NAMES = {
    (CONTEMPORANEOUS, WEIGHTED): "contemporaneous_weighted",
    (CONTEMPORANEOUS, UNWEIGHTED): "contemporaneous_unweighted",
    (LAGGED, WEIGHTED): "lagged_weighted",
    (LAGGED, UNWEIGHTED): "lagged_unweighted",
}


@dataclass
class GraphConfig:
    pair: tuple[str, str] = (Task.RETURN, Task.RETURN)
    lag: int = CONTEMPORANEOUS
    variant: str = WEIGHTED
    knn_k: int = 3
    row_normalize: bool = True  # False switches Eq-normalization to column-wise

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.lag not in (0, 1):
            raise ValueError("lag must be 0 or 1")


@dataclass
class SignedGraph:
    nodes: list[InstrumentId]
    adjacency: np.ndarray          # (N, N)
    degree: np.ndarray             # (N,) positive ints
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.nodes)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(i.code for i in self.nodes).encode())
        h.update(np.ascontiguousarray(self.adjacency).tobytes())
        return h.hexdigest()[:16]


# -- rank correlation ---------------------------------------------------


def average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    i = 0
    sx = x[order]
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y, min_obs: int = 3) -> tuple[float, bool]:
    """Pearson correlation of average ranks over jointly finite pairs.

    Returns (rho, defined); undefined cases (too few pairs or zero rank
    variance) yield (0.0, False).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < min_obs:
        return 0.0, False
    rx = average_ranks(x[ok])
    ry = average_ranks(y[ok])
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0, False
    rho = float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))
    return rho, True


def pair_correlation_matrix(targets: TargetSet, cfg: GraphConfig,
                            rows: np.ndarray | None = None):
    """Entry (i, j) = spearman(source qty of node i at t-lag, dest qty of node j at t).

    Returns (C, defined) with undefined entries set to 0.
    """
    src = targets.observed(cfg.pair[0])
    dst = targets.observed(cfg.pair[1])
    if rows is not None:
        src = src[:, rows]
        dst = dst[:, rows]
    n = src.shape[0]
    c = np.zeros((n, n))
    defined = np.zeros((n, n), dtype=bool)
    for i in range(n):
        xi = src[i, :-cfg.lag] if cfg.lag else src[i]
        for j in range(n):
            yj = dst[j, cfg.lag:] if cfg.lag else dst[j]
            c[i, j], defined[i, j] = spearman(xi, yj)
    return c, defined


# -- adjacency constructions --------------------------------------------


def _node_validity(nodes: list[InstrumentId], cfg: GraphConfig):
    src_ok = np.array([n.has_volume or cfg.pair[0] != Task.VOLUME for n in nodes])
    dst_ok = np.array([n.has_volume or cfg.pair[1] != Task.VOLUME for n in nodes])
    return src_ok, dst_ok


def _masked_correlations(c, defined, src_ok, dst_ok):
    out = np.where(defined, c, 0.0)
    out[~src_ok, :] = 0.0
    out[:, ~dst_ok] = 0.0
    return out


def degree_vector(adjacency: np.ndarray) -> np.ndarray:
    """Nonzero count per row (diagonal included), floored at 1."""
    deg = np.count_nonzero(adjacency, axis=1)
    return np.maximum(deg, 1).astype(np.int64)


def _quantiles(c, defined):
    off = ~np.eye(c.shape[0], dtype=bool)
    vals = c[off & defined]
    if vals.size == 0:
        return [0.0] * 5
    return [float(np.percentile(vals, q)) for q in (0, 25, 50, 75, 100)]


def weighted_adjacency(c: np.ndarray, cfg: GraphConfig | None = None,
                       nodes: list[InstrumentId] | None = None,
                       defined: np.ndarray | None = None) -> SignedGraph:
    """Sign-separated normalization of the correlation matrix.

    Per row (or column when row_normalize is False), positive off-diagonal
    entries are divided by their sum and negative entries by the absolute
    sum of negatives; the diagonal is 1 where the node carries valid data.
    """
    cfg = cfg or GraphConfig()
    n = c.shape[0]
    nodes = nodes if nodes is not None else [None] * n
    if defined is None:
        defined = np.isfinite(c)
    if nodes[0] is not None:
        src_ok, dst_ok = _node_validity(nodes, cfg)
    else:
        src_ok = np.ones(n, dtype=bool)
        dst_ok = np.ones(n, dtype=bool)
    cm = _masked_correlations(c, defined, src_ok, dst_ok)

    a = np.zeros((n, n))
    work = cm if cfg.row_normalize else cm.T
    out = np.zeros((n, n))
    for i in range(n):
        row = work[i].copy()
        row[i] = 0.0
        pos = row > 0
        neg = row < 0
        if pos.any():
            out[i, pos] = row[pos] / row[pos].sum()
        if neg.any():
            out[i, neg] = row[neg] / (-row[neg]).sum()
    a = out if cfg.row_normalize else out.T
    diag = src_ok & dst_ok
    a[np.diag_indices(n)] = diag.astype(np.float64)

    meta = {"config": cfg, "quantiles": _quantiles(c, defined)}
    return SignedGraph(list(nodes) if nodes[0] is not None else [], a, degree_vector(a), meta)


def unweighted_adjacency(c: np.ndarray, k: int | None = None,
                         cfg: GraphConfig | None = None,
                         nodes: list[InstrumentId] | None = None,
                         defined: np.ndarray | None = None) -> SignedGraph:
    """Signed K-nearest-neighbor graph: per destination column, keep the K
    sources with largest |correlation| (ties broken by lower node index)."""
    cfg = cfg or GraphConfig(variant=UNWEIGHTED)
    k = k if k is not None else cfg.knn_k
    n = c.shape[0]
    nodes = nodes if nodes is not None else [None] * n
    if defined is None:
        defined = np.isfinite(c)
    if nodes[0] is not None:
        src_ok, dst_ok = _node_validity(nodes, cfg)
    else:
        src_ok = np.ones(n, dtype=bool)
        dst_ok = np.ones(n, dtype=bool)
    cm = _masked_correlations(c, defined, src_ok, dst_ok)

    a = np.zeros((n, n))
    for j in range(n):
        if not dst_ok[j]:
            continue
        cand = [i for i in range(n) if i != j and src_ok[i] and defined[i, j] and cm[i, j] != 0.0]
        cand.sort(key=lambda i: (-abs(cm[i, j]), i))
        for i in cand[:k]:
            a[i, j] = np.sign(cm[i, j])
    diag = src_ok & dst_ok
    a[np.diag_indices(n)] = diag.astype(np.float64)

    meta = {"config": cfg, "quantiles": _quantiles(c, defined)}
    return SignedGraph(list(nodes) if nodes[0] is not None else [], a, degree_vector(a), meta)


def propagation_matrix(graph: SignedGraph, self_loop_mode: str = "subtract") -> np.ndarray:
    """D^{-1/2} (A - I) D^{-1/2} (or A + I / plain A per mode)."""
    a = graph.adjacency
    n = graph.n if graph.nodes else a.shape[0]
    eye = np.eye(n)
    if self_loop_mode == "subtract":
        core = a - eye
    elif self_loop_mode == "add":
        core = a + eye
    elif self_loop_mode == "none":
        core = a
    else:
        raise ValueError(f"unknown self_loop_mode {self_loop_mode!r}")
    d = 1.0 / np.sqrt(graph.degree.astype(np.float64))
    return d[:, None] * core * d[None, :]


# -- summaries and channel sets -----------------------------------------


def cluster_of(node: InstrumentId) -> str:
    if node.klass in (InstrumentClass.ES, InstrumentClass.INDEX_SPX):
        return SPX_CLUSTER
    return VIX_CLUSTER


@dataclass
class GraphStats:
    n_positive: int
    n_negative: int
    max_pos_out_degree: int
    max_pos_node: str | None
    max_neg_out_degree: int
    max_neg_node: str | None
    cross_cluster: dict  # keys 'SPX->SPX', 'SPX->VIX', 'VIX->SPX', 'VIX->VIX'
    quantiles: list


def graph_stats(graph: SignedGraph, clusters: dict | None = None) -> GraphStats:
    a = graph.adjacency
    n = a.shape[0]
    off = ~np.eye(n, dtype=bool)
    pos = (a > 0) & off
    neg = (a < 0) & off
    if clusters is None:
        clusters = {node: cluster_of(node) for node in graph.nodes}
    labels = [clusters[node] for node in graph.nodes] if graph.nodes else [SPX_CLUSTER] * n

    pos_out = pos.sum(axis=1)
    neg_out = neg.sum(axis=1)

    def argmax_label(deg):
        if deg.max(initial=0) == 0:
            return 0, None
        i = int(np.argmax(deg))
        label = graph.nodes[i].code if graph.nodes else str(i)
        return int(deg[i]), label

    max_pos, max_pos_node = argmax_label(pos_out)
    max_neg, max_neg_node = argmax_label(neg_out)

    cross = {f"{s}->{d}": 0 for s in (SPX_CLUSTER, VIX_CLUSTER) for d in (SPX_CLUSTER, VIX_CLUSTER)}
    edges = pos | neg
    for i in range(n):
        for j in range(n):
            if edges[i, j]:
                cross[f"{labels[i]}->{labels[j]}"] += 1

    return GraphStats(
        int(pos.sum()), int(neg.sum()), max_pos, max_pos_node, max_neg, max_neg_node,
        cross, list(graph.meta.get("quantiles", [])),
    )


def build_graph(targets: TargetSet, cfg: GraphConfig, rows: np.ndarray | None = None) -> SignedGraph:
    c, defined = pair_correlation_matrix(targets, cfg, rows)
    if cfg.variant == WEIGHTED:
        return weighted_adjacency(c, cfg, targets.instruments, defined)
    return unweighted_adjacency(c, cfg.knn_k, cfg, targets.instruments, defined)


def build_channel_set(targets: TargetSet, task: str, rows: np.ndarray | None = None,
                      knn_k: int = 3, variants=None) -> list[SignedGraph]:
    """The GCN input channels for one forecast quantity.

    Default: 3 ordered pairs (x, task) for x in {RETURN, VOLATILITY, VOLUME},
    each in the 4 canonical construction variants (12 graphs). Passing a
    subset of variants yields the matching ablation channel set.
    """
    variants = list(variants) if variants is not None else list(VARIANTS)
    out = []
    for source in (Task.RETURN, Task.VOLATILITY, Task.VOLUME):
        for lag, kind in variants:
            cfg = GraphConfig(pair=(source, task), lag=lag, variant=kind, knn_k=knn_k)
            out.append(build_graph(targets, cfg, rows))
    return out


# -- export -------------------------------------------------------------


def _graph_label(graph: SignedGraph) -> str:
    cfg = graph.meta.get("config")
    if cfg is None:
        return "graph"
    return f"{cfg.pair[0]}-{cfg.pair[1]}_{VARIANT_NAMES[(cfg.lag, cfg.variant)]}"


def export_graph(graph: SignedGraph, fmt: str, path) -> None:
    """Write a graph as DOT (green/red signed edges), JSON, or adjacency CSV."""
    fmt = fmt.upper()
    if fmt == "DOT":
        lines = [f"digraph \"{_graph_label(graph)}\" {{"]
        for node in graph.nodes:
            lines.append(f"  \"{node.code}\";")
        a = graph.adjacency
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                if i != j and a[i, j] != 0:
                    color = "green" if a[i, j] > 0 else "red"
                    src = graph.nodes[i].code if graph.nodes else str(i)
                    dst = graph.nodes[j].code if graph.nodes else str(j)
                    lines.append(f"  \"{src}\" -> \"{dst}\" [color={color}, weight=\"{a[i, j]:.6g}\"];")
        lines.append("}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    elif fmt == "JSON":
        cfg = graph.meta.get("config")
        payload = {
            "nodes": [n.code for n in graph.nodes],
            "adjacency": graph.adjacency.tolist(),
            "degree": graph.degree.tolist(),
            "meta": {
                "pair": list(cfg.pair) if cfg else None,
                "lag": cfg.lag if cfg else None,
                "variant": cfg.variant if cfg else None,
                "knn_k": cfg.knn_k if cfg else None,
                "quantiles": graph.meta.get("quantiles"),
            },
        }
        with open(path, "w") as f:
            json.dump(payload, f)
    elif fmt == "CSV":
        codes = [n.code for n in graph.nodes]
        with open(path, "w") as f:
            f.write("," + ",".join(codes) + "\n")
            for i, code in enumerate(codes):
                f.write(code + "," + ",".join(f"{v:.12g}" for v in graph.adjacency[i]) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def load_graph_json(path) -> SignedGraph:
    from .marketdata import parse_instrument

    with open(path) as f:
        payload = json.load(f)
    nodes = [parse_instrument(c) for c in payload["nodes"]]
    a = np.array(payload["adjacency"], dtype=np.float64)
    meta = dict(payload.get("meta", {}))
    m = payload.get("meta", {})
    if m.get("pair"):
        meta["config"] = GraphConfig(pair=tuple(m["pair"]), lag=m["lag"],
                                     variant=m["variant"], knn_k=m["knn_k"])
    meta["quantiles"] = m.get("quantiles")
    return SignedGraph(nodes, a, np.array(payload["degree"], dtype=np.int64), meta)


def export_stats_csv(graphs: list[SignedGraph], path) -> None:
    """Network summary table: one line per graph."""
    header = ("graph,n_positive,n_negative,max_pos_out_degree,max_pos_node,"
              "max_neg_out_degree,max_neg_node,spx_to_spx,spx_to_vix,vix_to_spx,vix_to_vix,"
              "q0,q25,q50,q75,q100")
    lines = [header]
    for g in graphs:
        s = graph_stats(g)
        q = s.quantiles or [0.0] * 5
        lines.append(
            f"{_graph_label(g)},{s.n_positive},{s.n_negative},"
            f"{s.max_pos_out_degree},{s.max_pos_node or 'NA'},"
            f"{s.max_neg_out_degree},{s.max_neg_node or 'NA'},"
            f"{s.cross_cluster['SPX->SPX']},{s.cross_cluster['SPX->VIX']},"
            f"{s.cross_cluster['VIX->SPX']},{s.cross_cluster['VIX->VIX']},"
            + ",".join(f"{v:.4f}" for v in q)
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
