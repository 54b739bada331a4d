"""Parameter storage and the small set of layers the renderer is built from."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .functional import conv2d
from .tensor import ShapeError, Tensor


@dataclass
class NetworkConfig:
    d1: int = 32
    L1: int = 6
    L2: int = 4
    L3: int = 4
    depth: int = 2
    heads: int = 2
    mlp_ratio: int = 2
    cnn_channels: tuple[int, int] = (16, 24)
    head_width: int = 64
    fdi_heads: int = 1

    def __post_init__(self):
        self.cnn_channels = tuple(int(c) for c in self.cnn_channels)
        for name in ("d1", "L1", "L2", "L3", "depth", "heads", "mlp_ratio", "head_width", "fdi_heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"NetworkConfig.{name} must be positive")
        if any(c <= 0 for c in self.cnn_channels):
            raise ValueError("NetworkConfig.cnn_channels must be positive")
        if self.d1 % self.heads:
            raise ValueError(f"d1={self.d1} not divisible by heads={self.heads}")
        if self.d2 % self.fdi_heads:
            raise ValueError(f"d2={self.d2} not divisible by fdi_heads={self.fdi_heads}")

    @property
    def d2(self) -> int:
        return self.d1 + 6 * self.L2


class ParamStore:
    """Named trainable tensors plus Adam moments."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Tensor(np.array(value, dtype=T.DTYPE), requires_grad=True, name=name)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int, gain: float = 1.0) -> Tensor:
        # per-name stream keeps init independent of construction order
        rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
        bound = gain * np.sqrt(3.0 / fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_values(self) -> int:
        return sum(p.size for p in self.params.values())


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, gain: float = 1.0, bias: bool = True):
        self.weight = store.uniform(f"{name}.weight", (n_in, n_out), n_in, gain)
        self.bias = store.zeros(f"{name}.bias", (n_out,)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear: input width {x.shape[-1]} != {self.n_in}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.weight = store.ones(f"{name}.weight", (dim,))
        self.bias = store.zeros(f"{name}.bias", (dim,))

    def __call__(self, x):
        return T.layer_norm(x, self.weight, self.bias)


class MLP:
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, store: ParamStore, name: str, widths: list[int]):
        self.layers = [
            Linear(store, f"{name}.{i}", a, b, gain=np.sqrt(2.0) if i < len(widths) - 2 else 1.0)
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


def multi_head_attention(q, k, v, heads: int, out_weight=None, out_bias=None, return_weights: bool = False):
    """Scaled dot-product attention on already-projected (..., T, d) inputs.

    Heads split the last axis; their outputs are concatenated and passed
    through the optional output projection.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    d = q.shape[-1]
    if d % heads or k.shape[-1] % heads or v.shape[-1] % heads:
        raise ValueError(f"attention width {d} not divisible by {heads} heads")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: keys have {k.shape[-2]} tokens, values have {v.shape[-2]}")
    if k.shape[-1] != d:
        raise ShapeError(f"attention: query width {d} != key width {k.shape[-1]}")
    lead = q.shape[:-2]
    tq, tk = q.shape[-2], k.shape[-2]
    dh = d // heads
    dv = v.shape[-1] // heads

    def split(x, n, width):
        return T.swapaxes(T.reshape(x, x.shape[:-2] + (n, heads, width)), -2, -3)

    qh, kh, vh = split(q, tq, dh), split(k, tk, dh), split(v, tk, dv)
    scores = (qh @ T.swapaxes(kh, -1, -2)) * (1.0 / np.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    out = attn @ vh
    out = T.reshape(T.swapaxes(out, -2, -3), lead + (tq, heads * dv))
    if out_weight is not None:
        out = out @ out_weight
    if out_bias is not None:
        out = out + out_bias
    return (out, attn) if return_weights else out


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, kv_dim: int | None = None):
        if dim % heads:
            raise ValueError(f"attention width {dim} not divisible by {heads} heads")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", kv_dim, dim)
        self.v = Linear(store, f"{name}.v", kv_dim, dim)
        self.o = Linear(store, f"{name}.o", dim, dim)

    def __call__(self, x, context=None, return_weights: bool = False):
        context = x if context is None else context
        return multi_head_attention(
            self.q(x), self.k(context), self.v(context), self.heads,
            self.o.weight, self.o.bias, return_weights=return_weights,
        )


class TransformerBlock:
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, mlp_ratio: int):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.mlp = MLP(store, f"{name}.mlp", [dim, mlp_ratio * dim, dim])

    def __call__(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))

    def residual_outputs(self):
        """Parameters whose zeroing turns the block into the identity."""
        last = self.mlp.layers[-1]
        return [self.attn.o.weight, self.attn.o.bias, last.weight, last.bias]


class Transformer:
    def __init__(self, store: ParamStore, name: str, dim: int, depth: int, heads: int, mlp_ratio: int):
        self.blocks = [TransformerBlock(store, f"{name}.{i}", dim, heads, mlp_ratio) for i in range(depth)]

    def __call__(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class ToyCNN:
    """Three stride-2 3x3 conv blocks with ReLU; output at 1/8 resolution."""

    factor = 8

    def __init__(self, store: ParamStore, name: str, channels: tuple[int, ...], out_dim: int, in_dim: int = 3):
        widths = [in_dim, *channels, out_dim]
        self.kernels = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = store.uniform(f"{name}.{i}.weight", (b, a, 3, 3), a * 9, gain=np.sqrt(2.0))
            bias = store.zeros(f"{name}.{i}.bias", (b,))
            self.kernels.append((w, bias))

    def __call__(self, images):
        """(N, 3, H, W) images in [0, 1] -> (N, d1, H/8, W/8)."""
        x = T.as_tensor(images) - 0.5
        for w, b in self.kernels:
            x = T.relu(conv2d(x, w, b, stride=2, pad=1))
        return x


@dataclass
class FrozenConvStack:
    """Randomly initialised conv features that are never trained."""

    seed: int = 1234
    channels: tuple[int, ...] = (3, 8, 16, 16)
    kernels: list = field(default_factory=list)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        for a, b in zip(self.channels[:-1], self.channels[1:]):
            bound = np.sqrt(6.0 / (a * 9))
            self.kernels.append((Tensor(rng.uniform(-bound, bound, (b, a, 3, 3))), Tensor(np.zeros(b))))

    def __call__(self, x):
        feats = []
        for i, (w, b) in enumerate(self.kernels):
            x = T.relu(conv2d(x, w, b, stride=1 if i == 0 else 2, pad=1))
            feats.append(x)
        return feats
