"""Encoder -> latent-graph aggregation -> decoder forecaster."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, ShapeError
from .graph import Topology, build_aggregator
from .layers import CnnEncoder, Decoder, Linear, MlpEncoder, Module, NodeIdTable, decode, encode
from .rng import RngStream
from .tensor import Tensor

CHECKPOINT_FORMAT = "latentgraph-checkpoint/1"


@dataclass
class ModelDims:
    n_nodes: int
    context_len: int = 12
    pred_len: int = 12
    nf: int = 64
    id_dim: int = 16
    n_layers: int = 2
    topology: str = "fc"
    n_aux: int = 4
    encoder: str = "mlp"
    kernel_size: int = 7
    stride: int = 4
    adjacency: list | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("n_nodes", "context_len", "pred_len", "nf"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.id_dim < 0:
            raise ConfigurationError(f"id_dim must be >= 0, got {self.id_dim}")
        if self.encoder not in ("mlp", "cnn"):
            raise ConfigurationError(f"encoder must be 'mlp' or 'cnn', got {self.encoder!r}")
        if self.topology != "ne" and self.n_layers < 1:
            raise ConfigurationError("graph topologies need at least one layer")
        self.as_topology()  # validates kind/K/adjacency

    def as_topology(self) -> Topology:
        if self.topology == "bp":
            return Topology.bipartite(self.n_aux)
        if self.topology == "linear_gcl":
            return Topology.linear(self.adjacency)
        return Topology(self.topology)


class ForecastModel(Module):
    """x [B, N, context_len] -> forecasts [B, N, pred_len].

    Encoder and decoder are shared by all series; only the aggregation step
    mixes information across series, once per window.
    """

    def __init__(self, dims: ModelDims, seed: int = 0):
        self.dims = dims
        rng = RngStream(seed, ("model",))
        if dims.encoder == "mlp":
            self.encoder = MlpEncoder(dims.context_len, dims.nf, rng.substream("encoder"))
        else:
            self.encoder = CnnEncoder(dims.context_len, dims.nf, rng.substream("encoder"),
                                      kernel_size=dims.kernel_size, stride=dims.stride)
        self.ids = NodeIdTable(dims.n_nodes, dims.id_dim, rng.substream("ids"))
        # z carries the id slice, so it is projected back to nf for the residual graph layers
        self.proj = Linear(self.encoder.out_dim + dims.id_dim, dims.nf, rng.substream("proj"))
        self.agg = build_aggregator(dims.as_topology(), dims.nf, dims.n_layers, dims.n_nodes,
                                    rng.substream("agg"))
        self.decoder = Decoder(dims.nf, dims.pred_len, rng.substream("decoder"))

    @property
    def topology(self) -> Topology:
        return self.dims.as_topology()

    def n_edges(self) -> int:
        return self.topology.n_edges(self.dims.n_nodes)

    def forward(self, x, alpha_override: float | None = None):
        x = T.as_tensor(x)
        d = self.dims
        if x.ndim != 3 or x.shape[1:] != (d.n_nodes, d.context_len):
            raise ShapeError(f"expected input [B, {d.n_nodes}, {d.context_len}], got {x.shape}")
        z = encode(x, self.encoder, self.ids)
        h, snapshots = self.agg(self.proj(z), alpha_override=alpha_override)
        return decode(h, self.decoder), snapshots

    def predict(self, x) -> np.ndarray:
        with T.no_grad():
            out, _ = self.forward(x)
        return out.data

    # ------------------------------------------------------------ checkpoints
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ConfigurationError(
                f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()


def mae_loss(pred, target) -> Tensor:
    """Mean absolute error over batch, nodes and horizon."""
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return T.tabs(pred - target).mean()


def edge_regularizer(snapshots: list[dict], n_edges: int, lam: float) -> Tensor:
    """``lam / n_edges * sum |alpha|``, averaged over windows and graph layers."""
    if lam < 0:
        raise ConfigurationError(f"regularizer weight must be >= 0, got {lam}")
    if lam == 0 or not snapshots or n_edges == 0:
        return T.Tensor(0.0)
    terms = []
    for snap in snapshots:
        gates = list(snap.values())
        B = gates[0].shape[0]
        total = sum(T.tabs(g).sum() for g in gates)
        terms.append(total * (1.0 / (B * n_edges)))
    return sum(terms[1:], terms[0]) * (lam / len(terms))


def total_loss(model: ForecastModel, x, y, lam: float = 0.0):
    pred, snaps = model(x)
    loss = mae_loss(pred, y)
    if lam:
        loss = loss + edge_regularizer(snaps, model.n_edges(), lam)
    return loss, pred, snaps


def save_checkpoint(path, model: ForecastModel, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write an ``.npz`` archive: parameter paths -> little-endian float64 arrays.

    The dims record and optional metadata are stored as a JSON string under
    ``__meta__``; ``extra`` arrays (e.g. standardizer statistics) are stored
    under their own keys, prefixed by ``extra.``.
    """
    arrays = {name: arr.astype("<f8") for name, arr in model.state_dict().items()}
    for key, arr in (extra or {}).items():
        arrays[f"extra.{key}"] = np.asarray(arr, dtype="<f8")
    header = {"format": CHECKPOINT_FORMAT, "dims": asdict(model.dims), "meta": meta or {}}
    arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ForecastModel, dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["__meta__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        params = {k: archive[k] for k in archive.files if k != "__meta__" and not k.startswith("extra.")}
        extra = {k[len("extra."):]: archive[k] for k in archive.files if k.startswith("extra.")}
    model = ForecastModel(ModelDims(**header["dims"]))
    model.load_state_dict(params)
    return model, extra, header.get("meta", {})
