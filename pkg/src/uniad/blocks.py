"""Attention with neighbor masking, position embeddings, and the FFN.

Tokens are rows: an input of shape (..., K, C) holds K tokens of C channels,
with K = H*W laid out row-major over the (h, w) grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    TensorError,
    layer_norm,
    matmul,
    relu,
    softmax_masked,
)


class MaskError(TensorError):
    """Invalid neighbor-mask construction."""


class ConfigError(TensorError):
    """Invalid architecture configuration."""


@dataclass(frozen=True)
class NeighborMask:
    """K x K boolean attention-prohibition matrix over a 2-d token grid.

    Entry (t, t') is True (prohibited) iff the two tokens lie within a
    Chebyshev distance of floor(n/2) of each other, self included. Symmetric,
    reusable across layers.
    """

    grid: tuple[int, int]
    neighbor_size: int
    matrix: np.ndarray

    @property
    def k(self) -> int:
        return self.grid[0] * self.grid[1]


def build_neighbor_mask(h: int, w: int, neighbor_size: int) -> NeighborMask:
    if h <= 0 or w <= 0:
        raise MaskError(f"grid extents must be positive, got {h}x{w}")
    if neighbor_size < 1 or neighbor_size % 2 == 0:
        raise MaskError(f"neighbor size must be odd and >= 1, got {neighbor_size}")
    r = neighbor_size // 2
    rows = np.arange(h * w) // w
    cols = np.arange(h * w) % w
    near_h = np.abs(rows[:, None] - rows[None, :]) <= r
    near_w = np.abs(cols[:, None] - cols[None, :]) <= r
    matrix = near_h & near_w
    if matrix.all(axis=1).any():
        raise MaskError(
            f"neighbor size {neighbor_size} covers the whole {h}x{w} grid for some "
            f"token; every token must keep at least one visible peer")
    matrix.setflags(write=False)
    return NeighborMask(grid=(h, w), neighbor_size=neighbor_size, matrix=matrix)


@dataclass
class AttentionParams:
    """Projections of one attention module plus its position-embedding tables.

    w_q/w_k/w_v/w_o are C x C; pe_q and pe_kv are K x C learnable tables added
    to the inputs of the Q and K projections respectively (never to V, never
    to the residual stream).
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    pe_q: Tensor
    pe_kv: Tensor
    heads: int

    def validate(self) -> None:
        c = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = getattr(self, name)
            if m.shape != (c, c):
                raise ConfigError(f"{name} must be square {c}x{c}, got {m.shape}")
        if self.heads < 1 or c % self.heads != 0:
            raise ConfigError(f"heads ({self.heads}) must divide channels ({c})")


@dataclass
class FFNParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., K, C) -> (..., heads, K, C/heads)
    k, c = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    x = x.reshape(lead + (k, heads, c // heads))
    return x.swapaxes(-3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    # (..., heads, K, d) -> (..., K, heads*d)
    heads, k, d = x.shape[-3], x.shape[-2], x.shape[-1]
    lead = x.shape[:-3]
    x = x.swapaxes(-3, -2)
    return x.reshape(lead + (k, heads * d))


def _attention_core(q_in: Tensor, k_in: Tensor, v_in: Tensor,
                    params: AttentionParams,
                    mask: NeighborMask | None) -> Tensor:
    """Projected multi-head attention with separate K/V source streams.

    Exposed for tests that perturb the value path in isolation; `attention`
    is the public entry point and feeds kv_in to both.
    """
    params.validate()
    c = q_in.shape[-1]
    kq, kk = q_in.shape[-2], k_in.shape[-2]
    if params.pe_q.shape != (kq, c):
        raise ShapeError(f"pe_q shape {params.pe_q.shape} != ({kq}, {c})")
    if params.pe_kv.shape != (kk, c):
        raise ShapeError(f"pe_kv shape {params.pe_kv.shape} != ({kk}, {c})")
    if mask is not None and mask.matrix.shape != (kq, kk):
        raise ShapeError(f"mask shape {mask.matrix.shape} != ({kq}, {kk})")

    q = matmul(q_in + params.pe_q, params.w_q)
    k = matmul(k_in + params.pe_kv, params.w_k)
    v = matmul(v_in, params.w_v)
    q = _split_heads(q, params.heads)
    k = _split_heads(k, params.heads)
    v = _split_heads(v, params.heads)
    d = c // params.heads
    scale = 1.0 / np.sqrt(d)
    logits = matmul(q, k.swapaxes(-1, -2)) * scale
    weights = softmax_masked(logits, mask.matrix if mask is not None else None)
    out = matmul(weights, v)
    return matmul(_merge_heads(out), params.w_o)


def attention(q_in: Tensor, kv_in: Tensor, params: AttentionParams,
              mask: NeighborMask | None = None) -> Tensor:
    """Multi-head attention of q_in over kv_in; masked pairs get exactly
    zero weight. Per-head scale is 1/sqrt(C/heads)."""
    return _attention_core(q_in, kv_in, kv_in, params, mask)


def attention_weights(q_in: Tensor, kv_in: Tensor, params: AttentionParams,
                      mask: NeighborMask | None = None) -> np.ndarray:
    """The (..., heads, K_q, K) softmax weights this attention would use;
    diagnostic view of the same computation as `attention`."""
    params.validate()
    c = q_in.shape[-1]
    q = _split_heads(matmul(q_in + params.pe_q, params.w_q), params.heads)
    k = _split_heads(matmul(kv_in + params.pe_kv, params.w_k), params.heads)
    scale = 1.0 / np.sqrt(c // params.heads)
    logits = matmul(q, k.swapaxes(-1, -2)) * scale
    return softmax_masked(logits, mask.matrix if mask is not None else None).data


def ffn_forward(x: Tensor, params: FFNParams) -> Tensor:
    """Two-layer feed-forward: W2 @ relu(W1 x + b1) + b2."""
    return matmul(relu(matmul(x, params.w1) + params.b1), params.w2) + params.b2


def transformer_sublayer(x: Tensor, sublayer_fn, norm: LayerNormParams) -> Tensor:
    """Post-norm residual composition: layer_norm(x + sublayer_fn(x))."""
    y = sublayer_fn(x)
    if y.shape != x.shape:
        raise ShapeError(f"sublayer changed shape {x.shape} -> {y.shape}")
    return layer_norm(x + y, norm.gamma, norm.beta, norm.eps)
