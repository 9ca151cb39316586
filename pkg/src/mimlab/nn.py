"""Small module system: parameter registration/naming, linear and norm
layers, multi-head attention, and the fixed 2D sine-cosine embedding."""

from __future__ import annotations

import numpy as np

from .numerics import Parameter, Tensor, layer_norm, gelu, softmax, transpose, reshape


class Module:
    """Base with recursive parameter discovery over instance attributes."""

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            path = f"{prefix}.{attr}" if prefix else attr
            yield from _walk(path, value)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def bind_names(self, prefix: str = "") -> None:
        """Assign checkpoint-key names; names must be unique within a model."""
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _walk(path: str, value):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{path}.{i}", item)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        limit = float(np.sqrt(6.0 / (d_in + d_out)))  # xavier-uniform
        self.weight = Parameter(rng.uniform(-limit, limit, (d_in, d_out)).astype(dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-6):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


# ---------------------------------------------------------------------------
# attention

def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., T, D] -> [..., heads, T, D/heads]"""
    *lead, t, d = x.shape
    nl = len(lead)
    out = reshape(x, tuple(lead) + (t, heads, d // heads))
    return transpose(out, tuple(range(nl)) + (nl + 1, nl, nl + 2))


def merge_heads(x: Tensor) -> Tensor:
    """[..., heads, T, dh] -> [..., T, heads*dh]"""
    *lead, h, t, dh = x.shape
    nl = len(lead)
    out = transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2))
    return reshape(out, tuple(lead) + (t, h * dh))


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                     bias: Tensor | None = None) -> Tensor:
    """Multi-head softmax attention; q [..., Tq, D], k/v [..., Tk, D].

    `bias` broadcasts against the [..., heads, Tq, Tk] logits.
    """
    d = q.shape[-1]
    scale = (d // heads) ** -0.5
    qh = split_heads(q, heads) * scale
    kh = split_heads(k, heads)
    vh = split_heads(v, heads)
    logits = qh @ transpose(kh, tuple(range(kh.ndim - 2)) + (kh.ndim - 1, kh.ndim - 2))
    if bias is not None:
        logits = logits + bias
    attn = softmax(logits, axis=-1)
    return merge_heads(attn @ vh)


# ---------------------------------------------------------------------------
# positional embedding

def sincos_pos_embed_2d(rows: int, cols: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed 2D sine-cosine table, [rows*cols, dim]; deterministic in (rows, cols, dim)."""
    if dim % 4 != 0:
        raise ValueError(f"sincos embedding needs dim divisible by 4, got {dim}")
    half = dim // 2

    def axis_embed(positions: np.ndarray) -> np.ndarray:
        # [n] -> [n, half]: interleaved sin/cos over log-spaced frequencies
        omega = 1.0 / (10000.0 ** (np.arange(half // 2, dtype=np.float64) / (half / 2)))
        angles = positions[:, None] * omega[None, :]
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    emb = np.concatenate(
        [axis_embed(rr.reshape(-1).astype(np.float64)),
         axis_embed(cc.reshape(-1).astype(np.float64))],
        axis=1,
    )
    return emb.astype(dtype)
