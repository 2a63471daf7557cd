"""Network blocks: residual MLP/CNN blocks, encoders, decoder, node ids."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, ShapeError
from .rng import RngStream
from .tensor import Tensor


class Module:
    """Parameter container.

    Parameters and child modules are discovered from instance attributes in
    assignment order, which fixes the naming scheme used by checkpoints
    (``encoder.res1.lin1.weight`` and so on).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: RngStream, fan_in: int, shape) -> np.ndarray:
    a = np.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-a, a, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: RngStream):
        self.weight = T.parameter(_uniform(rng, n_in, (n_in, n_out)))
        self.bias = T.parameter(np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    def forward(self, x) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, stride: int, rng: RngStream):
        self.weight = T.parameter(_uniform(rng, c_in * kernel_size, (c_out, c_in, kernel_size)))
        self.bias = T.parameter(np.zeros(c_out))
        self.stride = stride

    def forward(self, x) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=self.stride)


class MlpResBlock(Module):
    """Linear -> Swish -> Linear, plus the input."""

    def __init__(self, nf: int, rng: RngStream, hidden: int | None = None):
        hidden = nf if hidden is None else hidden
        self.lin1 = Linear(nf, hidden, rng.substream("lin1"))
        self.lin2 = Linear(hidden, nf, rng.substream("lin2"))

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.lin1.n_in:
            raise ShapeError(f"MlpResBlock expects trailing dim {self.lin1.n_in}, got {x.shape}")
        return self.lin2(T.swish(self.lin1(x))) + x


class CnnResBlock(Module):
    """Pointwise conv(nf -> nf/2) -> Swish -> conv(nf/2 -> nf), plus the input."""

    def __init__(self, nf: int, rng: RngStream):
        half = max(nf // 2, 1)
        self.conv1 = Conv1d(nf, half, 1, 1, rng.substream("conv1"))
        self.conv2 = Conv1d(half, nf, 1, 1, rng.substream("conv2"))

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        return self.conv2(T.swish(self.conv1(x))) + x


class NodeIdTable(Module):
    """Learned per-series identifier rows, shared by every window."""

    def __init__(self, n_nodes: int, id_dim: int, rng: RngStream):
        self.weight = T.parameter(rng.normal(0.0, 1.0, size=(n_nodes, id_dim)))

    @property
    def n_nodes(self) -> int:
        return self.weight.shape[0]

    @property
    def id_dim(self) -> int:
        return self.weight.shape[1]

    def attach(self, features: Tensor) -> Tensor:
        """Concatenate row i of the table to node i of ``features`` [B, N, F]."""
        B, N = features.shape[:2]
        if N != self.n_nodes:
            raise ConfigurationError(f"input has {N} nodes but the id table has {self.n_nodes}")
        if self.id_dim == 0:
            return features
        ids = T.broadcast_to(self.weight, (B, N, self.id_dim))
        return T.concat([features, ids], axis=-1)


class MlpEncoder(Module):
    """Linear(context -> nf), two residual MLP blocks."""

    def __init__(self, context_len: int, nf: int, rng: RngStream):
        self.context_len = context_len
        self.nf = nf
        self.inp = Linear(context_len, nf, rng.substream("inp"))
        self.res1 = MlpResBlock(nf, rng.substream("res1"))
        self.res2 = MlpResBlock(nf, rng.substream("res2"))

    @property
    def out_dim(self) -> int:
        return self.nf

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.context_len:
            raise ConfigurationError(
                f"encoder configured for context length {self.context_len}, got {x.shape[-1]}")
        return self.res2(self.res1(self.inp(x)))


class CnnEncoder(Module):
    """Three strided conv stages with residual blocks, then a 1x1 projection.

    Channel widths go 1 -> nf -> 2nf -> 4nf -> out_dim; the final temporal
    axis is flattened into the per-node embedding.
    """

    def __init__(self, context_len: int, nf: int, rng: RngStream, kernel_size: int = 7,
                 stride: int = 4, out_dim: int | None = None):
        self.context_len = context_len
        self.nf = nf
        self.proj_dim = nf if out_dim is None else out_dim
        length = context_len
        for _ in range(3):
            if length < kernel_size:
                raise ConfigurationError(
                    f"context length {context_len} too short for three convs with "
                    f"kernel {kernel_size}, stride {stride}")
            length = T.conv1d_output_length(length, kernel_size, stride)
        self.final_len = length
        self.conv1 = Conv1d(1, nf, kernel_size, stride, rng.substream("conv1"))
        self.res1 = CnnResBlock(nf, rng.substream("res1"))
        self.conv2 = Conv1d(nf, 2 * nf, kernel_size, stride, rng.substream("conv2"))
        self.res2 = CnnResBlock(2 * nf, rng.substream("res2"))
        self.conv3 = Conv1d(2 * nf, 4 * nf, kernel_size, stride, rng.substream("conv3"))
        self.res3 = CnnResBlock(4 * nf, rng.substream("res3"))
        self.out = Conv1d(4 * nf, self.proj_dim, 1, 1, rng.substream("out"))

    @property
    def out_dim(self) -> int:
        return self.proj_dim * self.final_len

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        B, N, L = x.shape
        if L != self.context_len:
            raise ConfigurationError(
                f"encoder configured for context length {self.context_len}, got {L}")
        h = x.reshape(B * N, 1, L)
        h = self.res1(self.conv1(h))
        h = self.res2(self.conv2(h))
        h = self.res3(self.conv3(h))
        h = self.out(h)
        return h.reshape(B, N, self.out_dim)


class Decoder(Module):
    """Residual MLP block followed by Linear(nf -> pred_len)."""

    def __init__(self, nf: int, pred_len: int, rng: RngStream):
        self.res = MlpResBlock(nf, rng.substream("res"))
        self.out = Linear(nf, pred_len, rng.substream("out"))

    def forward(self, z) -> Tensor:
        return self.out(self.res(z))


def encode(x, encoder: MlpEncoder | CnnEncoder, ids: NodeIdTable) -> Tensor:
    """Per-node encoding with the node's id row appended: [B, N, out_dim + id_dim]."""
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected [B, N, context_len] input, got {x.shape}")
    if x.shape[1] != ids.n_nodes:
        raise ConfigurationError(f"input has {x.shape[1]} nodes but the id table has {ids.n_nodes}")
    return ids.attach(encoder(x))


def decode(z, decoder: Decoder) -> Tensor:
    return decoder(z)
