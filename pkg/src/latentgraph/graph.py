"""Latent-graph aggregation between the encoder and the decoder.

Three message-passing variants share one gated graph convolution:

* fully connected (``fc``): every ordered pair of series exchanges a message,
  ``N(N-1)`` edges, each gated by an inferred ``alpha_ij`` in (0, 1);
* bipartite (``bp``): series talk only through ``K`` learned auxiliary nodes,
  series -> aux then aux -> series, ``2NK`` edges;
* no edges (``ne``): only the node update runs, a per-series MLP.

``linear_gcl`` is the classical linear layer ``swish(A H theta_e + H theta_h)``
kept as a baseline; it does not infer edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, NoAdjacencyError, ShapeError, TopologyError
from .layers import Linear, Module
from .rng import RngStream
from .tensor import Tensor

TOPOLOGIES = ("fc", "bp", "ne", "linear_gcl")

# receivers are processed in blocks so that one block of edge features stays
# below this many float64 values (about 32 MB)
CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class Topology:
    kind: str
    n_aux: int = 0
    adjacency: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.kind!r}; expected one of {TOPOLOGIES}")
        if self.kind == "bp" and self.n_aux < 1:
            raise ConfigurationError("bipartite topology needs K >= 1 auxiliary nodes "
                                     "(use the 'ne' topology for K = 0)")
        if self.kind == "linear_gcl" and self.adjacency is not None:
            A = np.asarray(self.adjacency)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise TopologyError(f"adjacency must be square, got shape {A.shape}")
            if np.any(np.diag(A) != 0):
                raise TopologyError("linear GCL adjacency must have a zero diagonal")

    @classmethod
    def fully_connected(cls) -> "Topology":
        return cls("fc")

    @classmethod
    def bipartite(cls, k: int) -> "Topology":
        return cls("bp", n_aux=k)

    @classmethod
    def no_edges(cls) -> "Topology":
        return cls("ne")

    @classmethod
    def linear(cls, adjacency=None) -> "Topology":
        return cls("linear_gcl", adjacency=None if adjacency is None else np.asarray(adjacency, dtype=bool))

    def n_edges(self, n_nodes: int) -> int:
        """Directed edges per graph layer."""
        if self.kind == "fc":
            return n_nodes * (n_nodes - 1)
        if self.kind == "bp":
            return 2 * n_nodes * self.n_aux
        if self.kind == "linear_gcl":
            A = self.adjacency if self.adjacency is not None else ~np.eye(n_nodes, dtype=bool)
            return int(np.count_nonzero(A))
        return 0


def fully_connected_edges(n: int) -> np.ndarray:
    """All ordered pairs ``(src, dst)`` with ``src != dst``; shape [N(N-1), 2]."""
    src, dst = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    keep = src != dst
    return np.stack([src[keep], dst[keep]], axis=1)


def bipartite_edges(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Edges over nodes ``0..N-1`` (series) and ``N..N+K-1`` (aux).

    Returns (series -> aux, aux -> series), each of shape [N*K, 2].
    """
    series = np.arange(n)
    aux = n + np.arange(k)
    s, a = np.meshgrid(series, aux, indexing="ij")
    up = np.stack([s.ravel(), a.ravel()], axis=1)
    down = up[:, ::-1].copy()
    return up, down


def bp_path_matrix(n: int, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Step adjacencies ``A1`` (series -> aux), ``A2`` (aux -> series) and ``A2 @ A1``.

    Rows index receivers.  The top-left N x N block of the product counts
    the two-hop paths between series, which is ``K`` for every pair.
    """
    if n < 1 or k < 1:
        raise ConfigurationError(f"need N >= 1 and K >= 1, got N={n}, K={k}")
    size = n + k
    A1 = np.zeros((size, size))
    A2 = np.zeros((size, size))
    A1[n:, :n] = 1.0
    A2[:n, n:] = 1.0
    return A1, A2, A2 @ A1


class EdgeMlp(Module):
    """[h_i, h_j] -> Linear(2nf, nf/2) -> Swish -> Linear(nf/2, nf) -> Swish."""

    def __init__(self, nf: int, rng: RngStream):
        self.nf = nf
        self.lin1 = Linear(2 * nf, max(nf // 2, 1), rng.substream("lin1"))
        self.lin2 = Linear(max(nf // 2, 1), nf, rng.substream("lin2"))

    def forward(self, pairs: Tensor) -> Tensor:
        return T.swish(self.lin2(T.swish(self.lin1(pairs))))

    def dense(self, h_recv: Tensor, h_send: Tensor) -> Tensor:
        """Messages for every (receiver, sender) pair: [B, R, S, nf].

        The first layer acts on a concatenation, so it splits into a receiver
        term and a sender term that are broadcast-added instead of
        materialising the [B, R, S, 2nf] pair tensor.
        """
        nf = self.nf
        w_recv = self.lin1.weight[:nf]
        w_send = self.lin1.weight[nf:]
        a = T.linear(h_recv, w_recv)
        b = T.linear(h_send, w_send, self.lin1.bias)
        B, R, H = a.shape
        S = b.shape[1]
        pre = a.reshape(B, R, 1, H) + b.reshape(B, 1, S, H)
        return T.swish(self.lin2(T.swish(pre)))


class NodeMlp(Module):
    """[h_i, m_i] -> Linear(2nf, nf) -> Swish -> Linear(nf, nf), plus h_i."""

    def __init__(self, nf: int, rng: RngStream):
        self.lin1 = Linear(2 * nf, nf, rng.substream("lin1"))
        self.lin2 = Linear(nf, nf, rng.substream("lin2"))

    def forward(self, h: Tensor, agg) -> Tensor:
        h = T.as_tensor(h)
        return h + self.lin2(T.swish(self.lin1(T.concat([h, agg], axis=-1))))


class GclParams(Module):
    """Parameters of one gated graph convolution: edge, node and gate networks."""

    def __init__(self, nf: int, rng: RngStream):
        self.nf = nf
        self.phi_e = EdgeMlp(nf, rng.substream("phi_e"))
        self.phi_h = NodeMlp(nf, rng.substream("phi_h"))
        self.phi_alpha = Linear(nf, 1, rng.substream("phi_alpha"))

    def gate(self, messages: Tensor) -> Tensor:
        return T.sigmoid(self.phi_alpha(messages))


def gcl_forward(h, edges, params: GclParams, alpha_override: float | None = None):
    """One graph convolution over an explicit edge list.

    ``edges`` holds ``(src, dst)`` rows: a message flows from ``src = j`` to
    ``dst = i``.  Returns the updated states [B, M, nf] and the per-edge
    gates [B, E].
    """
    h = T.as_tensor(h)
    if h.ndim != 3:
        raise ShapeError(f"expected node states [B, M, nf], got {h.shape}")
    B, M, nf = h.shape
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= M):
        raise TopologyError(f"edge index out of range for {M} nodes")
    if np.any(edges[:, 0] == edges[:, 1]):
        bad = edges[edges[:, 0] == edges[:, 1]][0]
        raise TopologyError(f"self edge {int(bad[0])} -> {int(bad[1])} is not allowed")
    if len(edges) == 0:
        agg = T.Tensor(np.zeros((B, M, nf)))
        return params.phi_h(h, agg), np.zeros((B, 0))
    src, dst = edges[:, 0], edges[:, 1]
    pairs = T.concat([h[:, dst], h[:, src]], axis=-1)
    m = params.phi_e(pairs)
    if alpha_override is None:
        alpha = params.gate(m)
    else:
        alpha = T.Tensor(np.full(m.shape[:-1] + (1,), float(alpha_override)))
    agg = T.index_add(alpha * m, dst, M, axis=1)
    return params.phi_h(h, agg), alpha.data[..., 0]


def dense_aggregate(h_recv: Tensor, h_send: Tensor, params: GclParams, mask: np.ndarray | None = None,
                    alpha_override: float | None = None):
    """Gated message sum from every sender to every receiver.

    ``mask`` [R, S] zeroes excluded pairs (the diagonal for the fully
    connected graph).  Returns (aggregate [B, R, nf], gates Tensor [B, R, S]).
    """
    B, R, nf = h_recv.shape
    S = h_send.shape[1]
    per_receiver = B * S * max(nf, 1)
    block = max(1, CHUNK_ELEMENTS // per_receiver)
    aggs, gates = [], []
    for lo in range(0, R, block):
        hi = min(R, lo + block)
        recv = h_recv if (lo == 0 and hi == R) else h_recv[:, lo:hi]
        m = params.phi_e.dense(recv, h_send)
        if alpha_override is None:
            alpha = params.gate(m)
        else:
            alpha = T.Tensor(np.full(m.shape[:-1] + (1,), float(alpha_override)))
        if mask is not None:
            alpha = alpha * mask[lo:hi, :, None]
        aggs.append((alpha * m).sum(axis=2))
        gates.append(alpha.reshape(alpha.shape[:-1]))
    if len(aggs) == 1:
        return aggs[0], gates[0]
    return T.concat(aggs, axis=1), T.concat(gates, axis=1)


class FCGNN(Module):
    """Fully connected gated GNN over the N series nodes."""

    def __init__(self, nf: int, n_layers: int, rng: RngStream):
        if n_layers < 1:
            raise ConfigurationError("need at least one graph layer")
        self.layers = [GclParams(nf, rng.substream(f"layer{i}")) for i in range(n_layers)]

    def forward(self, h, alpha_override: float | None = None):
        h = T.as_tensor(h)
        N = h.shape[1]
        mask = 1.0 - np.eye(N)
        snapshots = []
        for layer in self.layers:
            agg, alpha = dense_aggregate(h, h, layer, mask=mask, alpha_override=alpha_override)
            h = layer.phi_h(h, agg)
            snapshots.append({"alpha": alpha})
        return h, snapshots


class BPGNN(Module):
    """Bipartite GNN: series -> K aux nodes -> series, per layer.

    Aux states start from the learned embeddings (broadcast over the batch)
    and persist across layers within one forward pass.  Step 1 and step 2
    have separate parameters.
    """

    def __init__(self, nf: int, n_layers: int, n_aux: int, rng: RngStream):
        if n_aux < 1:
            raise ConfigurationError("bipartite aggregation needs K >= 1")
        if n_layers < 1:
            raise ConfigurationError("need at least one graph layer")
        self.aux = T.parameter(rng.substream("aux").normal(0.0, 1.0, size=(n_aux, nf)))
        self.step1 = [GclParams(nf, rng.substream(f"layer{i}.step1")) for i in range(n_layers)]
        self.step2 = [GclParams(nf, rng.substream(f"layer{i}.step2")) for i in range(n_layers)]

    @property
    def n_aux(self) -> int:
        return self.aux.shape[0]

    def forward(self, h, alpha_override: float | None = None):
        h = T.as_tensor(h)
        B = h.shape[0]
        u = T.broadcast_to(self.aux, (B,) + self.aux.shape)
        snapshots = []
        for up, down in zip(self.step1, self.step2):
            agg_u, a1 = dense_aggregate(u, h, up, alpha_override=alpha_override)
            u = up.phi_h(u, agg_u)
            agg_y, a2 = dense_aggregate(h, u, down, alpha_override=alpha_override)
            h = down.phi_h(h, agg_y)
            snapshots.append({"alpha_up": a1, "alpha_down": a2})
        return h, snapshots


class NEGNN(Module):
    """No-edge ablation: the node update with an all-zero aggregate."""

    def __init__(self, nf: int, n_layers: int, rng: RngStream):
        self.layers = [NodeMlp(nf, rng.substream(f"layer{i}.phi_h")) for i in range(n_layers)]

    def forward(self, h, alpha_override: float | None = None):
        h = T.as_tensor(h)
        zeros = T.Tensor(np.zeros(h.shape))
        for layer in self.layers:
            h = layer(h, zeros)
        return h, []


class LinearGCLLayer(Module):
    def __init__(self, nf: int, rng: RngStream):
        a = np.sqrt(1.0 / nf)
        self.theta_e = T.parameter(rng.substream("theta_e").uniform(-a, a, size=(nf, nf)))
        self.theta_h = T.parameter(rng.substream("theta_h").uniform(-a, a, size=(nf, nf)))


def linear_gcl_forward(H, A, theta_e, theta_h) -> Tensor:
    """``swish(A H theta_e + H theta_h)``; messages depend on the sender only."""
    H = T.as_tensor(H)
    A = np.asarray(A, dtype=np.float64)
    N = H.shape[-2]
    if A.shape != (N, N):
        raise ShapeError(f"adjacency shape {A.shape} does not match {N} nodes")
    if np.any(np.diag(A) != 0):
        raise TopologyError("linear GCL adjacency must have a zero diagonal")
    Z = T.matmul(T.Tensor(A), T.matmul(H, theta_e)) + T.matmul(H, theta_h)
    return T.swish(Z)


class LinearGCN(Module):
    """Stack of linear graph convolutions on a fixed adjacency."""

    def __init__(self, nf: int, n_layers: int, adjacency: np.ndarray, rng: RngStream):
        self.adjacency = np.asarray(adjacency, dtype=bool)
        self.layers = [LinearGCLLayer(nf, rng.substream(f"layer{i}")) for i in range(n_layers)]

    def forward(self, h, alpha_override: float | None = None):
        for layer in self.layers:
            h = linear_gcl_forward(h, self.adjacency, layer.theta_e, layer.theta_h)
        return h, []


def build_aggregator(topology: Topology, nf: int, n_layers: int, n_nodes: int, rng: RngStream) -> Module:
    if topology.kind == "fc":
        return FCGNN(nf, n_layers, rng)
    if topology.kind == "bp":
        return BPGNN(nf, n_layers, topology.n_aux, rng)
    if topology.kind == "ne":
        return NEGNN(nf, n_layers, rng)
    A = topology.adjacency
    if A is None:
        A = ~np.eye(n_nodes, dtype=bool)
    if A.shape != (n_nodes, n_nodes):
        raise ConfigurationError(f"adjacency shape {A.shape} does not match {n_nodes} nodes")
    return LinearGCN(nf, n_layers, A, rng)


# ----------------------------------------------------------------- snapshots
@dataclass
class AdjacencySnapshot:
    """Gate values averaged over evaluation windows.

    ``matrix`` is receiver-by-sender, N x N.  For the fully connected graph it
    holds alpha_ij (zero diagonal).  For the bipartite graph it is the
    composed two-hop weight ``down @ up`` and the raw step matrices are kept
    in ``up`` (K x N) and ``down`` (N x K).
    """

    kind: str
    matrix: np.ndarray
    n_timesteps: int
    up: np.ndarray | None = None
    down: np.ndarray | None = None

    def top_incoming(self) -> np.ndarray:
        """Index of the strongest incoming edge for every node (lowest index on ties)."""
        M = self.matrix.copy()
        np.fill_diagonal(M, -np.inf)
        return np.argmax(M, axis=1)

    def to_csv(self, path) -> None:
        lines = [",".join(f"{v:.6f}" for v in row) for row in self.matrix]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def to_pgm(self, path) -> None:
        """8-bit binary PGM; pixel = round(255 * value), clipped to [0, 255]."""
        scale = self.matrix if self.kind == "fc" else self.matrix / max(self.matrix.max(), 1e-12)
        pixels = np.clip(np.rint(255.0 * scale), 0, 255).astype(np.uint8)
        h, w = pixels.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())


def snapshot_from_alphas(kind: str, layer_snapshots: list[dict], n_timesteps: int) -> AdjacencySnapshot:
    """Average the (first layer) gates of one or more forward passes.

    ``layer_snapshots`` holds one first-layer snapshot dict per window batch;
    gates are averaged over every window in every batch.
    """
    if kind == "fc":
        stacked = np.concatenate([np.asarray(s["alpha"].data) for s in layer_snapshots], axis=0)
        return AdjacencySnapshot("fc", stacked.mean(axis=0), n_timesteps)
    if kind == "bp":
        up = np.concatenate([s["alpha_up"].data for s in layer_snapshots], axis=0).mean(axis=0)
        down = np.concatenate([s["alpha_down"].data for s in layer_snapshots], axis=0).mean(axis=0)
        return AdjacencySnapshot("bp", down @ up, n_timesteps, up=up, down=down)
    raise NoAdjacencyError(f"topology {kind!r} does not infer an adjacency")
