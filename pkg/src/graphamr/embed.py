"""Signal-system subgraph embedding.

Each record becomes a complete bipartite graph of TX and RX antenna nodes.
Two copies share the adjacency: one carries the I samples as node features,
the other the Q samples. Both go through two GIN layers and a set2set
readout; a squeeze-and-excitation style gate fuses the two graph vectors
into one fixed-width embedding, whatever the antenna geometry.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, leaky_relu, segment_softmax, segment_sum, sigmoid, slice_cols
from .errors import ContractError, ShapeError
from .nn import MLP, Linear, LSTMCell, Module
from .siggen import SignalRecord, from_iq

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# graphs


@dataclass
class SystemGraph:
    """Complete bipartite antenna graph; TX nodes are 0..n_tx-1, RX nodes follow."""

    n_tx: int
    n_rx: int
    features: np.ndarray  # (n_tx + n_rx) x L, TX rows zero when blind
    blind_tx: bool
    src: np.ndarray = field(init=False)
    dst: np.ndarray = field(init=False)

    def __post_init__(self):
        self.src, self.dst = bipartite_edges(self.n_tx, self.n_rx)

    @property
    def n_nodes(self) -> int:
        return self.n_tx + self.n_rx

    @property
    def tx_nodes(self) -> np.ndarray:
        return np.arange(self.n_tx)

    @property
    def rx_nodes(self) -> np.ndarray:
        return np.arange(self.n_tx, self.n_nodes)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_nodes, self.n_nodes), dtype=int)
        A[self.dst, self.src] = 1
        return A


def bipartite_edges(n_tx: int, n_rx: int) -> tuple[np.ndarray, np.ndarray]:
    """Directed edges both ways between every TX and every RX node."""
    tx = np.repeat(np.arange(n_tx), n_rx)
    rx = n_tx + np.tile(np.arange(n_rx), n_tx)
    return np.concatenate([tx, rx]), np.concatenate([rx, tx])


def estimate_tx_antennas(rx: np.ndarray, tau: float = 0.05) -> int:
    """Count dominant eigenvalues of the receive autocorrelation matrix.

    ``rx`` is complex N_R x L. Eigenvalues above ``tau`` times the largest
    are counted (capped at N_R). White noise has no eigenvalue gap, so pure
    noise tends to return N_R.
    """
    Y = np.atleast_2d(np.asarray(rx))
    n_rx, L = Y.shape
    if n_rx < 1 or L <= n_rx:
        raise ContractError(f"need N_R >= 1 and L > N_R, got {Y.shape}")
    R = (Y @ Y.conj().T) / L
    eig = np.linalg.eigvalsh(R)
    top = eig.max()
    if top <= 0:
        log.warning("autocorrelation matrix is zero; cannot estimate transmit antennas")
        return 0
    return int(min(np.sum(eig > tau * top), n_rx))


def build_bipartite(rec: SignalRecord, n_tx: int | None = None, blind: bool | None = None
                    ) -> tuple[SystemGraph, SystemGraph]:
    """Graph-I and graph-Q for one record.

    TX features come from ``rec.tx_iq`` unless the record is blind (no TX
    streams) or ``blind=True``; blind TX rows are zero and get the shared
    trainable placeholder inside :class:`MimoEmbedder`. ``n_tx`` overrides the
    transmit count for blind records (e.g. an estimate).
    """
    if blind is None:
        blind = rec.tx_iq is None
    if not blind and rec.tx_iq is None:
        raise ContractError(f"record {rec.id} has no TX streams")
    if n_tx is None:
        n_tx = rec.tx_iq.shape[0] if not blind else rec.channel.n_tx
    n_rx = rec.rx_iq.shape[0]
    if n_tx < 1 or n_rx < 1:
        raise ContractError(f"record {rec.id}: graph needs at least one TX and one RX antenna")
    L = rec.rx_iq.shape[1]
    tx = np.zeros((n_tx, L, 2)) if blind else rec.tx_iq
    allf = np.concatenate([tx, rec.rx_iq], axis=0)
    return (SystemGraph(n_tx, n_rx, np.ascontiguousarray(allf[..., 0]), blind),
            SystemGraph(n_tx, n_rx, np.ascontiguousarray(allf[..., 1]), blind))


@dataclass
class GraphBatch:
    """Disjoint union of system graphs."""

    features: np.ndarray  # N x L
    blind: np.ndarray  # N bool, rows to fill with the placeholder
    src: np.ndarray
    dst: np.ndarray
    graph_of: np.ndarray  # N, graph index per node
    n_graphs: int

    @classmethod
    def from_graphs(cls, graphs: list[SystemGraph]) -> "GraphBatch":
        if not graphs:
            raise ContractError("empty graph batch")
        widths = {g.features.shape[1] for g in graphs}
        if len(widths) != 1:
            raise ShapeError(f"graphs have different feature widths {sorted(widths)}")
        feats, blind, src, dst, owner = [], [], [], [], []
        off = 0
        for k, g in enumerate(graphs):
            feats.append(g.features)
            b = np.zeros(g.n_nodes, dtype=bool)
            b[: g.n_tx] = g.blind_tx
            blind.append(b)
            src.append(g.src + off)
            dst.append(g.dst + off)
            owner.append(np.full(g.n_nodes, k))
            off += g.n_nodes
        return cls(np.concatenate(feats), np.concatenate(blind), np.concatenate(src),
                   np.concatenate(dst), np.concatenate(owner), len(graphs))

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


# ---------------------------------------------------------------------------
# layers


class GinLayer(Module):
    """h'(u) = MLP((1 + eps) h(u) + sum over neighbours h(v))."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                 alpha: float = 0.2):
        self.epsilon = Tensor(np.zeros(1), requires_grad=True)
        self.mlp = MLP(n_in, n_hidden, n_out, rng, alpha)

    @property
    def n_in(self) -> int:
        return self.mlp.n_in

    def __call__(self, h: Tensor, src: np.ndarray, dst: np.ndarray,
                 pre: Tensor | None = None) -> Tensor:
        """``pre`` optionally supplies h @ W1 already computed (wide inputs).

        The first affine map is linear, so it is applied before aggregation:
        W1((1+eps)h_u + sum h_v) = (1+eps)(W1 h_u) + sum W1 h_v. Same
        result, far cheaper when the input width is the sample length.
        """
        if pre is None:
            if h.shape[1] != self.n_in:
                raise ShapeError(f"GIN layer expects width {self.n_in}, got {h.shape}")
            pre = h @ self.mlp.first.weight
        agg = segment_sum(pre[src], dst, pre.shape[0])
        z = (1.0 + self.epsilon) * pre + agg + self.mlp.first.bias
        return self.mlp.second(leaky_relu(z, self.mlp.alpha))


class Set2Set(Module):
    """Order-invariant readout with an LSTM controller over T attention steps."""

    def __init__(self, width: int, rng: np.random.Generator, steps: int = 3, alpha: float = 0.2):
        self.width = width
        self.steps = steps
        self.memory = MLP(width, width, width, rng, alpha)
        self.lstm = LSTMCell(2 * width, width, rng)

    def __call__(self, x: Tensor, graph_of: np.ndarray, n_graphs: int,
                 trace: list | None = None) -> Tensor:
        if x.shape[0] == 0:
            raise ContractError("set2set readout of an empty graph")
        if np.bincount(graph_of, minlength=n_graphs).min() == 0:
            raise ContractError("set2set readout: a graph has no nodes")
        m = self.memory(x)
        D = self.width
        q_star = Tensor(np.zeros((n_graphs, 2 * D)))
        h = Tensor(np.zeros((n_graphs, D)))
        c = Tensor(np.zeros((n_graphs, D)))
        for _ in range(self.steps):
            h, c = self.lstm(q_star, h, c)
            e = (m * h[graph_of]).sum(axis=1)
            a = segment_softmax(e, graph_of, n_graphs)
            if trace is not None:
                trace.append(a.data.copy())
            r = segment_sum(m * a.reshape(-1, 1), graph_of, n_graphs)
            q_star = concat([h, r], axis=1)
        return q_star


class ChannelAttention(Module):
    """Gate the I and Q graph vectors, sum them, project to the embedding width."""

    def __init__(self, width: int, out_width: int, rng: np.random.Generator,
                 reduction: int = 2, alpha: float = 0.2):
        hidden = max(1, 2 // reduction)
        self.squeeze_to_hidden = Linear(2, hidden, rng)
        self.hidden_to_gate = Linear(hidden, 2, rng)
        self.project = Linear(width, out_width, rng, bias=False)
        self.alpha = alpha
        self.width = width

    def gates(self, v_i: Tensor, v_q: Tensor) -> Tensor:
        s = concat([v_i.mean(axis=1, keepdims=True), v_q.mean(axis=1, keepdims=True)], axis=1)
        return sigmoid(self.hidden_to_gate(leaky_relu(self.squeeze_to_hidden(s), self.alpha)))

    def fuse(self, v_i: Tensor, v_q: Tensor) -> tuple[Tensor, Tensor]:
        """Return (gated sum before projection, gates)."""
        if v_i.shape != v_q.shape:
            raise ShapeError(f"channel attention needs equal widths, got {v_i.shape} and {v_q.shape}")
        g = self.gates(v_i, v_q)
        fused = slice_cols(g, 0, 1) * v_i + slice_cols(g, 1, 2) * v_q
        return fused, g

    def __call__(self, v_i: Tensor, v_q: Tensor) -> Tensor:
        fused, _ = self.fuse(v_i, v_q)
        return self.project(fused)


# ---------------------------------------------------------------------------
# full embedder


@dataclass
class EmbedConfig:
    length: int = 1024
    gin_hidden: int = 256
    gin_width: int = 128
    set2set_steps: int = 3
    embed_dim: int = 128
    alpha: float = 0.2
    shared_gin: bool = True  # one GIN/set2set stack for graph-I and graph-Q
    input_center: float = 0.5  # subtracted from node features; [0,1] streams become zero-centred


class MimoEmbedder(Module):
    def __init__(self, cfg: EmbedConfig, rng: np.random.Generator):
        self.cfg = cfg
        w = cfg.gin_width
        self.tx_placeholder = Tensor(rng.uniform(0.0, 1.0, size=cfg.length), requires_grad=True)
        self.gin_i = [GinLayer(cfg.length, cfg.gin_hidden, w, rng, cfg.alpha),
                      GinLayer(w, w, w, rng, cfg.alpha)]
        self.readout_i = Set2Set(w, rng, cfg.set2set_steps, cfg.alpha)
        if cfg.shared_gin:
            self.gin_q, self.readout_q = None, None
        else:
            self.gin_q = [GinLayer(cfg.length, cfg.gin_hidden, w, rng, cfg.alpha),
                          GinLayer(w, w, w, rng, cfg.alpha)]
            self.readout_q = Set2Set(w, rng, cfg.set2set_steps, cfg.alpha)
        self.attention = ChannelAttention(2 * w, cfg.embed_dim, rng, alpha=cfg.alpha)

    def _graph_vectors(self, batch: GraphBatch, gins, readout) -> Tensor:
        if batch.features.shape[1] != self.cfg.length:
            raise ShapeError(f"node features have width {batch.features.shape[1]}, "
                             f"embedder expects {self.cfg.length}")
        first, second = gins
        w1 = first.mlp.first.weight
        if batch.blind.any():
            # project the real streams and the placeholder once, then gather rows
            real = np.flatnonzero(~batch.blind)
            rows = np.full(batch.n_nodes, len(real))
            rows[real] = np.arange(len(real))
            stacked = concat([Tensor(batch.features[real]), self.tx_placeholder.reshape(1, -1)], axis=0)
            pre = (stacked @ w1)[rows]
        else:
            pre = Tensor(batch.features) @ w1
        if self.cfg.input_center:
            pre = pre - w1.sum(axis=0) * self.cfg.input_center
        h = leaky_relu(first(None, batch.src, batch.dst, pre=pre), self.cfg.alpha)
        h = second(h, batch.src, batch.dst)
        return readout(h, batch.graph_of, batch.n_graphs)

    def forward(self, batch_i: GraphBatch, batch_q: GraphBatch) -> Tensor:
        if self.cfg.shared_gin:
            return self.forward_stacked(stack_batches(batch_i, batch_q))
        v_i = self._graph_vectors(batch_i, self.gin_i, self.readout_i)
        v_q = self._graph_vectors(batch_q, self.gin_q, self.readout_q)
        return self.attention(v_i, v_q)

    def forward_stacked(self, both: GraphBatch) -> Tensor:
        """Shared-GIN forward on graph-I batch followed by graph-Q batch in one union."""
        if not self.cfg.shared_gin:
            raise ContractError("stacked forward needs shared GIN parameters")
        v = self._graph_vectors(both, self.gin_i, self.readout_i)
        B = both.n_graphs // 2
        return self.attention(v[np.arange(B)], v[np.arange(B, 2 * B)])

    __call__ = forward

    def embed_records(self, records: list[SignalRecord], blind: bool | None = None) -> Tensor:
        gi, gq = batch_records(records, blind=blind)
        return self.forward(gi, gq)


def stack_batches(a: GraphBatch, b: GraphBatch) -> GraphBatch:
    n = a.n_nodes
    return GraphBatch(np.concatenate([a.features, b.features]), np.concatenate([a.blind, b.blind]),
                      np.concatenate([a.src, b.src + n]), np.concatenate([a.dst, b.dst + n]),
                      np.concatenate([a.graph_of, b.graph_of + a.n_graphs]), a.n_graphs + b.n_graphs)


def batch_records(records: list[SignalRecord], blind: bool | None = None,
                  estimate_tx: bool = False, tau: float = 0.05) -> tuple[GraphBatch, GraphBatch]:
    """Build the I and Q graph batches for a list of (preprocessed) records."""
    gis, gqs = [], []
    for rec in records:
        n_tx = None
        is_blind = rec.tx_iq is None if blind is None else blind
        if is_blind and estimate_tx:
            n_tx = max(1, estimate_tx_antennas(from_iq(rec.rx_iq), tau))
        gi, gq = build_bipartite(rec, n_tx=n_tx, blind=is_blind)
        gis.append(gi)
        gqs.append(gq)
    return GraphBatch.from_graphs(gis), GraphBatch.from_graphs(gqs)


@dataclass
class EmbeddingVector:
    values: np.ndarray
    sample_id: int


def embed_sample(rec: SignalRecord, model: MimoEmbedder, blind: bool | None = None) -> EmbeddingVector:
    """Embedding of a single preprocessed record (no gradient tracking)."""
    return EmbeddingVector(model.embed_records([rec], blind=blind).data[0], rec.id)
