"""GNN regressors over featurized IR graphs.

Five message-passing layer kinds (gcn, graphsage, gin, rgcn, pna) share one
skeleton: feature embeddings summed into h_v(0), a stack of layers with
residual connections, an optional virtual node between layers, then sum or
mean pooling into a feed-forward head that emits one scalar per graph.

Graphs are symmetrized for message passing: each edge also acts in reverse,
with the direction folded into the rgcn relation id (other kinds ignore edge
features). Batches are processed as one block-diagonal graph; aggregation
uses sparse matrices prepared once per batch, so training steps are pure
numpy/BLAS work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from . import vocab
from .frontend import FeaturizedGraph
from .tensor import Tensor

LAYER_KINDS = ("gcn", "graphsage", "gin", "rgcn", "pna")
PNA_AGGREGATORS = ("mean", "max", "min", "std")
PNA_SCALERS = ("identity", "amplification", "attenuation")


@dataclass(frozen=True)
class ModelConfig:
    layer_kind: str = "gcn"
    num_layers: int = 5
    hidden_dim: int = 300
    virtual_node: bool = False
    readout: str = "sum"
    head_dims: tuple[int, ...] = (300, 600, 300, 1)
    dropout: float = 0.0
    num_edge_types: int = 4
    pna_aggregators: tuple[str, ...] = ("mean", "std")
    pna_scalers: tuple[str, ...] = ("identity", "amplification")
    sage_sample: int = 25

    @property
    def num_relations(self) -> int:
        # edge type x back-edge flag x direction
        return self.num_edge_types * 2 * 2

    def validate(self) -> None:
        if self.layer_kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.layer_kind!r}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.readout not in ("sum", "mean"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.head_dims[0] != self.hidden_dim:
            raise ValueError("head input dim must equal hidden_dim")
        if self.head_dims[-1] != 1:
            raise ValueError("head must end in one output")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        if self.layer_kind == "pna":
            if not self.pna_aggregators or not self.pna_scalers:
                raise ValueError("pna needs at least one aggregator and scaler")
            bad = set(self.pna_aggregators) - set(PNA_AGGREGATORS)
            bad |= set(self.pna_scalers) - set(PNA_SCALERS)
            if bad:
                raise ValueError(f"unknown pna options {sorted(bad)}")

    def to_dict(self) -> dict:
        return {
            "layer_kind": self.layer_kind,
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "virtual_node": self.virtual_node,
            "readout": self.readout,
            "head_dims": list(self.head_dims),
            "dropout": self.dropout,
            "num_edge_types": self.num_edge_types,
            "pna_aggregators": list(self.pna_aggregators),
            "pna_scalers": list(self.pna_scalers),
            "sage_sample": self.sage_sample,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            layer_kind=d["layer_kind"],
            num_layers=int(d["num_layers"]),
            hidden_dim=int(d["hidden_dim"]),
            virtual_node=bool(d["virtual_node"]),
            readout=d["readout"],
            head_dims=tuple(d["head_dims"]),
            dropout=float(d["dropout"]),
            num_edge_types=int(d["num_edge_types"]),
            pna_aggregators=tuple(d["pna_aggregators"]),
            pna_scalers=tuple(d["pna_scalers"]),
            sage_sample=int(d.get("sage_sample", 25)),
        )


def _csr_pair(rows, cols, vals, shape):
    mat = sp.csr_matrix((vals, (rows, cols)), shape=shape, dtype=np.float32)
    return mat, mat.T.tocsr()


@dataclass
class GraphBatch:
    """One block-diagonal batch with its aggregation operators."""

    names: list[str]
    num_nodes: int
    num_graphs: int
    node_feats: np.ndarray                      # (N, 7) int64
    graph_of_node: np.ndarray                   # (N,)
    degrees: np.ndarray                         # (N,) float32, symmetric
    feat_gather: list[tuple]                    # per feature (csr, csrT)
    pool_sum: tuple
    pool_mean: tuple
    sum_agg: tuple | None = None
    mean_agg: tuple | None = None
    gcn_agg: tuple | None = None
    sage_agg: tuple | None = None
    rel_aggs: dict[int, tuple] = field(default_factory=dict)
    max_src: np.ndarray | None = None           # gather order for max/min agg
    max_plan: object | None = None
    labels: np.ndarray | None = None            # (B, 5) float32


def prepare_batch(graphs: list[FeaturizedGraph], cfg: ModelConfig,
                  train: bool = False, seed: int = 0,
                  labels: np.ndarray | None = None) -> GraphBatch:
    """Concatenate graphs into one batch and build the operators cfg needs."""
    cfg.validate()
    if not graphs:
        raise ValueError("empty batch")
    for fg in graphs:
        if fg.num_nodes == 0:
            raise ValueError(f"empty graph {fg.name!r}")

    sizes = np.array([fg.num_nodes for fg in graphs])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offsets[-1])
    b = len(graphs)

    node_feats = np.concatenate([fg.node_features for fg in graphs], axis=0)
    for i, (size, fname) in enumerate(zip(vocab.node_vocab_sizes(),
                                          vocab.NODE_FEATURE_NAMES)):
        col = node_feats[:, i]
        if col.min() < 0 or col.max() >= size:
            raise IndexError(f"feature {fname!r} index outside vocabulary "
                             f"(size {size})")
    graph_of_node = np.repeat(np.arange(b), sizes)

    srcs, dsts, types, backs = [], [], [], []
    for fg, off in zip(graphs, offsets[:-1]):
        if fg.num_edges:
            srcs.append(fg.edge_index[0] + off)
            dsts.append(fg.edge_index[1] + off)
            types.append(fg.edge_features[:, 0])
            backs.append(fg.edge_features[:, 1])
    if srcs:
        src = np.concatenate(srcs)
        dst = np.concatenate(dsts)
        etype = np.concatenate(types)
        eback = np.concatenate(backs)
    else:
        src = dst = etype = eback = np.zeros(0, dtype=np.int64)

    # Symmetrize: reverse copies carry a direction flag for rgcn relations.
    src2 = np.concatenate([src, dst])
    dst2 = np.concatenate([dst, src])
    rel2 = np.concatenate([
        etype + cfg.num_edge_types * eback,
        etype + cfg.num_edge_types * eback + 2 * cfg.num_edge_types,
    ]).astype(np.int64)

    ones = np.ones(len(src2), dtype=np.float32)
    adj = sp.csr_matrix((ones, (dst2, src2)), shape=(n, n), dtype=np.float32)
    degrees = np.asarray(adj.sum(axis=1)).reshape(-1).astype(np.float32)

    feat_gather = []
    rows = np.arange(n)
    for i, size in enumerate(vocab.node_vocab_sizes()):
        feat_gather.append(_csr_pair(rows, node_feats[:, i],
                                     np.ones(n, dtype=np.float32), (n, size)))

    pool_sum = _csr_pair(graph_of_node, rows, np.ones(n, dtype=np.float32), (b, n))
    pool_mean = _csr_pair(graph_of_node, rows,
                          (1.0 / sizes[graph_of_node]).astype(np.float32), (b, n))

    batch = GraphBatch(
        names=[fg.name for fg in graphs], num_nodes=n, num_graphs=b,
        node_feats=node_feats, graph_of_node=graph_of_node, degrees=degrees,
        feat_gather=feat_gather, pool_sum=pool_sum, pool_mean=pool_mean,
        labels=None if labels is None else np.asarray(labels, dtype=np.float64),
    )

    kind = cfg.layer_kind
    if kind == "gin":
        batch.sum_agg = (adj, adj.T.tocsr())
    if kind in ("graphsage", "pna"):
        inv = np.where(degrees > 0, 1.0 / np.maximum(degrees, 1.0), 0.0)
        mean_mat = sp.diags(inv.astype(np.float32)) @ adj
        mean_mat = mean_mat.tocsr()
        batch.mean_agg = (mean_mat, mean_mat.T.tocsr())
    if kind == "gcn":
        dhat = (degrees + 1.0).astype(np.float64)
        coeff = (1.0 / np.sqrt(dhat[src2] * dhat[dst2])).astype(np.float32)
        diag = (1.0 / dhat).astype(np.float32)
        rows_g = np.concatenate([dst2, np.arange(n)])
        cols_g = np.concatenate([src2, np.arange(n)])
        vals_g = np.concatenate([coeff, diag])
        batch.gcn_agg = _csr_pair(rows_g, cols_g, vals_g, (n, n))
    if kind == "graphsage":
        if train and len(src2):
            rng = np.random.default_rng(seed)
            keep = np.ones(len(src2), dtype=bool)
            order = np.argsort(dst2, kind="stable")
            start = 0
            sorted_dst = dst2[order]
            boundaries = np.flatnonzero(np.diff(sorted_dst)) + 1
            for seg in np.split(order, boundaries):
                if len(seg) > cfg.sage_sample:
                    drop = rng.choice(seg, size=len(seg) - cfg.sage_sample,
                                      replace=False)
                    keep[drop] = False
            kept_dst, kept_src = dst2[keep], src2[keep]
            counts = np.bincount(kept_dst, minlength=n).astype(np.float32)
            vals = (1.0 / np.maximum(counts, 1.0))[kept_dst].astype(np.float32)
            batch.sage_agg = _csr_pair(kept_dst, kept_src, vals, (n, n))
        else:
            batch.sage_agg = batch.mean_agg
    if kind == "rgcn":
        for r in np.unique(rel2):
            mask = rel2 == r
            rd, rs = dst2[mask], src2[mask]
            counts = np.bincount(rd, minlength=n).astype(np.float32)
            vals = (1.0 / np.maximum(counts, 1.0))[rd].astype(np.float32)
            batch.rel_aggs[int(r)] = _csr_pair(rd, rs, vals, (n, n))
    if kind == "pna" and (("max" in cfg.pna_aggregators) or ("min" in cfg.pna_aggregators)):
        from .tensor import SegmentMaxPlan

        order, plan = SegmentMaxPlan.build(dst2, n)
        batch.max_src = src2[order]
        batch.max_plan = plan
    return batch


# --- parameter initialization --------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
            shape: tuple[int, ...] | None = None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)).astype(np.float32)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    cfg.validate()
    rng = np.random.default_rng(np.uint64(seed))
    h = cfg.hidden_dim
    params: dict[str, Tensor] = {}

    for i, size in enumerate(vocab.node_vocab_sizes()):
        params[f"embed{i}"] = Tensor(_glorot(rng, size, h), requires_grad=True)

    for k in range(cfg.num_layers):
        p = f"layer{k}/"
        if cfg.layer_kind == "gcn":
            params[p + "w"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "b"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
        elif cfg.layer_kind == "graphsage":
            params[p + "w_self"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "w_neigh"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "b"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
        elif cfg.layer_kind == "gin":
            params[p + "eps"] = Tensor(np.zeros(1, np.float32), requires_grad=True)
            params[p + "w1"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "b1"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
            params[p + "w2"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "b2"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
        elif cfg.layer_kind == "rgcn":
            params[p + "w_self"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "b"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
            for r in range(cfg.num_relations):
                params[p + f"rel{r}"] = Tensor(_glorot(rng, h, h), requires_grad=True)
        else:  # pna
            combos = len(cfg.pna_aggregators) * len(cfg.pna_scalers)
            params[p + "w"] = Tensor(_glorot(rng, combos * h, h), requires_grad=True)
            params[p + "b"] = Tensor(np.zeros(h, np.float32), requires_grad=True)

    if cfg.virtual_node:
        for k in range(cfg.num_layers - 1):
            p = f"vn{k}/"
            params[p + "w1"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "b1"] = Tensor(np.zeros(h, np.float32), requires_grad=True)
            params[p + "w2"] = Tensor(_glorot(rng, h, h), requires_grad=True)
            params[p + "b2"] = Tensor(np.zeros(h, np.float32), requires_grad=True)

    dims = cfg.head_dims
    for j in range(len(dims) - 1):
        last = j == len(dims) - 2
        # The output layer starts at zero so untrained predictions sit at 0,
        # inside the expected scale of standardized labels regardless of
        # graph size under sum pooling.
        w = (np.zeros((dims[j], dims[j + 1]), np.float32) if last
             else _glorot(rng, dims[j], dims[j + 1]))
        params[f"head{j}/w"] = Tensor(w, requires_grad=True)
        params[f"head{j}/b"] = Tensor(np.zeros(dims[j + 1], np.float32),
                                      requires_grad=True)
    return params


class NonFiniteActivations(Exception):
    pass


class Model:
    """A configured layer stack plus its parameters and PNA degree scale."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor],
                 delta: float = 1.0):
        cfg.validate()
        self.cfg = cfg
        self.params = params
        self.delta = float(delta)

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0, delta: float = 1.0) -> "Model":
        return cls(cfg, init_params(cfg, seed), delta)

    # -- pieces ---------------------------------------------------------

    def _act(self, x: Tensor, smooth: bool) -> Tensor:
        return T.softplus(x) if smooth else T.relu(x)

    def embed(self, batch: GraphBatch) -> Tensor:
        h = None
        for i, (mat, mat_t) in enumerate(batch.feat_gather):
            row = T.spmm(mat, mat_t, self.params[f"embed{i}"])
            h = row if h is None else h + row
        return h

    def _pna_scaled(self, agg: Tensor, batch: GraphBatch) -> list[Tensor]:
        logd = np.log(batch.degrees + 1.0)
        safe = np.where(batch.degrees > 0, logd, 1.0).astype(np.float32)
        out = []
        for scaler in self.cfg.pna_scalers:
            if scaler == "identity":
                out.append(agg)
            elif scaler == "amplification":
                vec = np.where(batch.degrees > 0, logd / self.delta, 1.0)
                out.append(agg * Tensor(vec[:, None].astype(np.float32)))
            else:  # attenuation
                vec = np.where(batch.degrees > 0, self.delta / safe, 1.0)
                out.append(agg * Tensor(vec[:, None].astype(np.float32)))
        return out

    def layer_forward(self, k: int, h: Tensor, batch: GraphBatch,
                      train: bool = False, smooth: bool = False,
                      drop_rng=None) -> Tensor:
        cfg = self.cfg
        p = self.params
        name = f"layer{k}/"
        if cfg.layer_kind == "gcn":
            agg = T.spmm(*batch.gcn_agg, h)
            out = self._act(T.matmul(agg, p[name + "w"]) + p[name + "b"], smooth)
        elif cfg.layer_kind == "graphsage":
            neigh = T.spmm(*(batch.sage_agg if train else batch.mean_agg), h)
            out = self._act(T.matmul(h, p[name + "w_self"])
                            + T.matmul(neigh, p[name + "w_neigh"])
                            + p[name + "b"], smooth)
        elif cfg.layer_kind == "gin":
            summed = T.spmm(*batch.sum_agg, h)
            z = h * (p[name + "eps"] + Tensor(np.float32(1.0))) + summed
            z = self._act(T.matmul(z, p[name + "w1"]) + p[name + "b1"], smooth)
            out = T.matmul(z, p[name + "w2"]) + p[name + "b2"]
        elif cfg.layer_kind == "rgcn":
            out = T.matmul(h, p[name + "w_self"]) + p[name + "b"]
            for r, mats in batch.rel_aggs.items():
                out = out + T.matmul(T.spmm(*mats, h), p[name + f"rel{r}"])
            out = self._act(out, smooth)
        else:  # pna
            parts: list[Tensor] = []
            mean = None
            for agg_name in cfg.pna_aggregators:
                if agg_name == "mean":
                    mean = T.spmm(*batch.mean_agg, h) if mean is None else mean
                    parts.extend(self._pna_scaled(mean, batch))
                elif agg_name == "std":
                    mean = T.spmm(*batch.mean_agg, h) if mean is None else mean
                    meansq = T.spmm(*batch.mean_agg, T.square(h))
                    var = T.relu(meansq - T.square(mean))
                    std = T.sqrt(var + Tensor(np.float32(1e-5)))
                    parts.extend(self._pna_scaled(std, batch))
                elif agg_name == "max":
                    msgs = T.gather(h, batch.max_src)
                    parts.extend(self._pna_scaled(
                        T.segment_max(msgs, batch.max_plan), batch))
                else:  # min
                    msgs = T.gather(h, batch.max_src)
                    neg = T.scale(T.segment_max(T.scale(msgs, -1.0),
                                                batch.max_plan), -1.0)
                    parts.extend(self._pna_scaled(neg, batch))
            stacked = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
            out = self._act(T.matmul(stacked, p[name + "w"]) + p[name + "b"], smooth)

        out = T.dropout(out, cfg.dropout, drop_rng, train)
        out = out + h  # hidden dims match at every layer
        # One reduction screens the whole state; inf-inf still surfaces as nan.
        if not np.isfinite(out.data.sum()):
            raise NonFiniteActivations(f"non-finite activations in layer {k}")
        return out

    def virtual_node_step(self, k: int, h: Tensor, vstate: Tensor,
                          batch: GraphBatch, smooth: bool = False) -> tuple[Tensor, Tensor]:
        p = self.params
        pooled = T.spmm(*batch.pool_sum, h)
        z = vstate + pooled
        z = self._act(T.matmul(z, p[f"vn{k}/w1"]) + p[f"vn{k}/b1"], smooth)
        vnew = T.matmul(z, p[f"vn{k}/w2"]) + p[f"vn{k}/b2"]
        mat, mat_t = batch.pool_sum
        h = h + T.spmm(mat_t, mat, vnew)
        return h, vnew

    def readout_and_head(self, h: Tensor, batch: GraphBatch,
                         smooth: bool = False,
                         readout_override: str | None = None) -> Tensor:
        readout = readout_override or self.cfg.readout
        pool = batch.pool_sum if readout == "sum" else batch.pool_mean
        g = T.spmm(*pool, h)
        dims = self.cfg.head_dims
        for j in range(len(dims) - 1):
            g = T.matmul(g, self.params[f"head{j}/w"]) + self.params[f"head{j}/b"]
            if j < len(dims) - 2:
                g = self._act(g, smooth)
        return g

    # -- full forward -----------------------------------------------------

    def forward(self, batch: GraphBatch, train: bool = False,
                smooth: bool = False, readout_override: str | None = None,
                dropout_seed: int = 0, epoch: int = 0, batch_index: int = 0) -> Tensor:
        """Predictions for every graph in the batch, shape (B, 1)."""
        h = self.embed(batch)
        vstate = None
        if self.cfg.virtual_node:
            vstate = Tensor(np.zeros((batch.num_graphs, self.cfg.hidden_dim),
                                     np.float32))
        for k in range(self.cfg.num_layers):
            rng = (T.dropout_rng(dropout_seed, epoch, batch_index, k)
                   if train and self.cfg.dropout > 0 else None)
            h = self.layer_forward(k, h, batch, train=train, smooth=smooth,
                                   drop_rng=rng)
            if vstate is not None and k < self.cfg.num_layers - 1:
                h, vstate = self.virtual_node_step(k, h, vstate, batch, smooth)
        return self.readout_and_head(h, batch, smooth, readout_override)

    def predict(self, fg: FeaturizedGraph,
                readout_override: str | None = None) -> float:
        """One graph in, one raw model output out (no label transform)."""
        batch = prepare_batch([fg], self.cfg, train=False)
        return float(self.forward(batch, readout_override=readout_override).data[0, 0])


def compute_pna_delta(graphs: list[FeaturizedGraph], cfg: ModelConfig) -> float:
    """Mean of log(degree + 1) over every node of the training graphs."""
    total = 0.0
    count = 0
    for fg in graphs:
        deg = np.zeros(fg.num_nodes)
        if fg.num_edges:
            np.add.at(deg, fg.edge_index[0], 1)
            np.add.at(deg, fg.edge_index[1], 1)
        total += np.log(deg + 1.0).sum()
        count += fg.num_nodes
    return float(total / count) if count else 1.0
