"""The full reconstruction models.

`uniad`: neighbor-masked encoder plus a query decoder where every layer owns
its own learnable query embedding. `vanilla_transformer` and `mlp` are the
reference baselines that expose the identical-shortcut failure mode. All three
share the channel-reduction / restoration projections and the outer interface:
feature map in, reconstructed feature map out.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .blocks import (
    AttentionParams,
    ConfigError,
    FFNParams,
    LayerNormParams,
    NeighborMask,
    attention,
    build_neighbor_mask,
    ffn_forward,
    transformer_sublayer,
)
from .tensor import Tensor

ARCHS = ("uniad", "vanilla_transformer", "mlp")
QUERY_MODES = ("none", "single", "layer_wise")
LOSS_VARIANTS = ("mse", "normalized_mse", "cosine")
MASK_PLACEMENTS = ("none", "enc", "enc_dec1", "enc_dec2", "all")


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults are the full-scale settings:
    4+4 layers, 7x7 neighborhood, jitter scale 20 at probability 1, channel
    reduction 272 -> 256 on a 14x14 token grid."""

    c_org: int = 272
    c: int = 256
    h: int = 14
    w: int = 14
    enc_layers: int = 4
    dec_layers: int = 4
    neighbor_size: int = 7
    heads: int = 8
    ffn_hidden: int = 0  # 0 -> 4*c
    jitter_scale: float = 20.0
    jitter_prob: float = 1.0
    loss_variant: str = "mse"
    arch: str = "uniad"
    query_mode: str = "layer_wise"
    mask_placement: str = "all"

    def __post_init__(self):
        if self.ffn_hidden == 0:
            self.ffn_hidden = 4 * self.c

    @property
    def k(self) -> int:
        return self.h * self.w

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch '{self.arch}' (expected one of {ARCHS})")
        if self.query_mode not in QUERY_MODES:
            raise ConfigError(f"unknown query_mode '{self.query_mode}'")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError(f"unknown loss_variant '{self.loss_variant}'")
        if self.mask_placement not in MASK_PLACEMENTS:
            raise ConfigError(f"unknown mask_placement '{self.mask_placement}'")
        for name in ("c_org", "c", "h", "w", "heads", "ffn_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.enc_layers < 0 or self.dec_layers < 1:
            raise ConfigError("need enc_layers >= 0 and dec_layers >= 1")
        if self.neighbor_size < 1 or self.neighbor_size % 2 == 0:
            raise ConfigError(
                f"neighbor_size must be odd and >= 1, got {self.neighbor_size}")
        if self.c % self.heads != 0:
            raise ConfigError(f"heads ({self.heads}) must divide c ({self.c})")
        if not self.jitter_scale >= 0:
            raise ConfigError("jitter_scale must be >= 0")
        if not 0.0 <= self.jitter_prob <= 1.0:
            raise ConfigError("jitter_prob must lie in [0, 1]")
        if self.arch == "uniad":
            if self.query_mode != "layer_wise":
                raise ConfigError("arch 'uniad' requires query_mode 'layer_wise'")
            if self.mask_placement == "none":
                raise ConfigError("arch 'uniad' requires a neighbor-mask placement")
        elif self.arch == "vanilla_transformer":
            if self.query_mode == "layer_wise":
                raise ConfigError("vanilla_transformer uses query_mode 'none' or 'single'")
            if self.mask_placement != "none":
                raise ConfigError("vanilla_transformer uses full attention "
                                  "(mask_placement 'none')")
        elif self.arch == "mlp":
            if self.query_mode != "none":
                raise ConfigError("arch 'mlp' has no attention, so no query embedding")
            if self.mask_placement != "none":
                raise ConfigError("arch 'mlp' has no attention to mask")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FeatureMap:
    """A C_org x H x W feature map plus provenance."""

    data: np.ndarray
    sample_id: str = ""
    class_id: int = -1


# -- parameter containers -----------------------------------------------------


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    attn_norm: LayerNormParams
    ffn: FFNParams
    ffn_norm: LayerNormParams


@dataclass
class DecoderLayerParams:
    query_embed: Optional[Tensor]
    attn1: AttentionParams
    norm1: LayerNormParams
    attn2: AttentionParams
    norm2: LayerNormParams
    ffn: FFNParams
    ffn_norm: LayerNormParams


@dataclass
class VanillaDecoderLayerParams:
    self_attn: AttentionParams
    norm1: LayerNormParams
    cross_attn: AttentionParams
    norm2: LayerNormParams
    ffn: FFNParams
    ffn_norm: LayerNormParams


@dataclass
class MLPEncoderLayerParams:
    # attention replaced in place: linear -> norm -> relu inside the residual
    lin_w: Tensor
    lin_b: Tensor
    lin_norm: LayerNormParams
    lin_out_norm: LayerNormParams
    ffn: FFNParams
    ffn_norm: LayerNormParams


@dataclass
class MLPDecoderLayerParams:
    self_w: Tensor
    self_b: Tensor
    self_norm: LayerNormParams
    self_out_norm: LayerNormParams
    fuse_w: Tensor
    fuse_b: Tensor
    fuse_norm: LayerNormParams
    fuse_out_norm: LayerNormParams
    ffn: FFNParams
    ffn_norm: LayerNormParams


@dataclass
class ModelParams:
    reduce_w: Tensor
    reduce_b: Tensor
    restore_w: Tensor
    restore_b: Tensor
    encoder: list = field(default_factory=list)
    decoder: list = field(default_factory=list)
    query_embed: Optional[Tensor] = None  # query_mode == "single" only


# -- initialization ------------------------------------------------------------


def _weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return Tensor(data.astype(T.default_dtype()), requires_grad=True)

def _bias(n: int) -> Tensor:
    return Tensor(np.zeros(n, dtype=T.default_dtype()), requires_grad=True)

def _embed(rng: np.random.Generator, k: int, c: int) -> Tensor:
    data = rng.normal(0.0, 0.02, size=(k, c))
    return Tensor(data.astype(T.default_dtype()), requires_grad=True)

def _norm(c: int) -> LayerNormParams:
    return LayerNormParams(gamma=Tensor(np.ones(c, dtype=T.default_dtype()), requires_grad=True),
                           beta=_bias(c))

def _attn(rng, k: int, c: int, heads: int) -> AttentionParams:
    return AttentionParams(
        w_q=_weight(rng, c, c), w_k=_weight(rng, c, c),
        w_v=_weight(rng, c, c), w_o=_weight(rng, c, c),
        pe_q=_embed(rng, k, c), pe_kv=_embed(rng, k, c), heads=heads)

def _ffn(rng, c: int, hidden: int) -> FFNParams:
    return FFNParams(w1=_weight(rng, c, hidden), b1=_bias(hidden),
                     w2=_weight(rng, hidden, c), b2=_bias(c))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Build all learnable parameters in a fixed draw order.

    Weight matrices are uniform fan-in initialized, biases zero, query and
    position embeddings N(0, 0.02), layer-norm gains one.
    """
    cfg.validate()
    k, c = cfg.k, cfg.c
    params = ModelParams(
        reduce_w=_weight(rng, cfg.c_org, c), reduce_b=_bias(c),
        restore_w=_weight(rng, c, cfg.c_org), restore_b=_bias(cfg.c_org))
    for _ in range(cfg.enc_layers):
        if cfg.arch == "mlp":
            params.encoder.append(MLPEncoderLayerParams(
                lin_w=_weight(rng, c, c), lin_b=_bias(c), lin_norm=_norm(c),
                lin_out_norm=_norm(c),
                ffn=_ffn(rng, c, cfg.ffn_hidden), ffn_norm=_norm(c)))
        else:
            params.encoder.append(EncoderLayerParams(
                attn=_attn(rng, k, c, cfg.heads), attn_norm=_norm(c),
                ffn=_ffn(rng, c, cfg.ffn_hidden), ffn_norm=_norm(c)))
    for _ in range(cfg.dec_layers):
        if cfg.arch == "uniad":
            params.decoder.append(DecoderLayerParams(
                query_embed=_embed(rng, k, c),
                attn1=_attn(rng, k, c, cfg.heads), norm1=_norm(c),
                attn2=_attn(rng, k, c, cfg.heads), norm2=_norm(c),
                ffn=_ffn(rng, c, cfg.ffn_hidden), ffn_norm=_norm(c)))
        elif cfg.arch == "vanilla_transformer":
            params.decoder.append(VanillaDecoderLayerParams(
                self_attn=_attn(rng, k, c, cfg.heads), norm1=_norm(c),
                cross_attn=_attn(rng, k, c, cfg.heads), norm2=_norm(c),
                ffn=_ffn(rng, c, cfg.ffn_hidden), ffn_norm=_norm(c)))
        else:
            params.decoder.append(MLPDecoderLayerParams(
                self_w=_weight(rng, c, c), self_b=_bias(c), self_norm=_norm(c),
                self_out_norm=_norm(c),
                fuse_w=_weight(rng, 2 * c, c), fuse_b=_bias(c), fuse_norm=_norm(c),
                fuse_out_norm=_norm(c),
                ffn=_ffn(rng, c, cfg.ffn_hidden), ffn_norm=_norm(c)))
    if cfg.query_mode == "single":
        params.query_embed = _embed(rng, k, c)
    return params


def _attn_entries(prefix: str, a: AttentionParams) -> list:
    return [(f"{prefix}.w_q", a.w_q), (f"{prefix}.w_k", a.w_k),
            (f"{prefix}.w_v", a.w_v), (f"{prefix}.w_o", a.w_o),
            (f"{prefix}.pe_q", a.pe_q), (f"{prefix}.pe_kv", a.pe_kv)]

def _norm_entries(prefix: str, n: LayerNormParams) -> list:
    return [(f"{prefix}.gamma", n.gamma), (f"{prefix}.beta", n.beta)]

def _ffn_entries(prefix: str, f: FFNParams) -> list:
    return [(f"{prefix}.w1", f.w1), (f"{prefix}.b1", f.b1),
            (f"{prefix}.w2", f.w2), (f"{prefix}.b2", f.b2)]


def named_parameters(params: ModelParams) -> dict[str, Tensor]:
    """Flat name -> tensor view of all learnable parameters, fixed order."""
    entries: list = [("reduce.w", params.reduce_w), ("reduce.b", params.reduce_b)]
    for i, layer in enumerate(params.encoder):
        p = f"enc.{i}"
        if isinstance(layer, MLPEncoderLayerParams):
            entries += [(f"{p}.lin.w", layer.lin_w), (f"{p}.lin.b", layer.lin_b)]
            entries += _norm_entries(f"{p}.lin_norm", layer.lin_norm)
            entries += _norm_entries(f"{p}.lin_out_norm", layer.lin_out_norm)
        else:
            entries += _attn_entries(f"{p}.attn", layer.attn)
            entries += _norm_entries(f"{p}.attn_norm", layer.attn_norm)
        entries += _ffn_entries(f"{p}.ffn", layer.ffn)
        entries += _norm_entries(f"{p}.ffn_norm", layer.ffn_norm)
    for i, layer in enumerate(params.decoder):
        p = f"dec.{i}"
        if isinstance(layer, DecoderLayerParams):
            if layer.query_embed is not None:
                entries.append((f"{p}.query", layer.query_embed))
            entries += _attn_entries(f"{p}.attn1", layer.attn1)
            entries += _norm_entries(f"{p}.norm1", layer.norm1)
            entries += _attn_entries(f"{p}.attn2", layer.attn2)
            entries += _norm_entries(f"{p}.norm2", layer.norm2)
        elif isinstance(layer, VanillaDecoderLayerParams):
            entries += _attn_entries(f"{p}.self_attn", layer.self_attn)
            entries += _norm_entries(f"{p}.norm1", layer.norm1)
            entries += _attn_entries(f"{p}.cross_attn", layer.cross_attn)
            entries += _norm_entries(f"{p}.norm2", layer.norm2)
        else:
            entries += [(f"{p}.self_lin.w", layer.self_w), (f"{p}.self_lin.b", layer.self_b)]
            entries += _norm_entries(f"{p}.self_norm", layer.self_norm)
            entries += _norm_entries(f"{p}.self_out_norm", layer.self_out_norm)
            entries += [(f"{p}.fuse_lin.w", layer.fuse_w), (f"{p}.fuse_lin.b", layer.fuse_b)]
            entries += _norm_entries(f"{p}.fuse_norm", layer.fuse_norm)
            entries += _norm_entries(f"{p}.fuse_out_norm", layer.fuse_out_norm)
        entries += _ffn_entries(f"{p}.ffn", layer.ffn)
        entries += _norm_entries(f"{p}.ffn_norm", layer.ffn_norm)
    entries += [("restore.w", params.restore_w), ("restore.b", params.restore_b)]
    if params.query_embed is not None:
        entries.append(("query", params.query_embed))
    return dict(entries)


def parameter_count(params: ModelParams) -> int:
    return sum(t.size for t in named_parameters(params).values())


# -- tokenization ---------------------------------------------------------------


def map_to_tokens(fmap: np.ndarray) -> np.ndarray:
    """(C, H, W) or (B, C, H, W) -> (B, K, C), row-major over (h, w)."""
    if fmap.ndim == 3:
        fmap = fmap[None]
    b, c, h, w = fmap.shape
    return np.ascontiguousarray(fmap.reshape(b, c, h * w).transpose(0, 2, 1))


def tokens_to_map(tokens: np.ndarray, h: int, w: int) -> np.ndarray:
    """(B, K, C) -> (B, C, H, W), inverse of map_to_tokens."""
    b, k, c = tokens.shape
    if k != h * w:
        raise ConfigError(f"token count {k} != grid {h}x{w}")
    return np.ascontiguousarray(tokens.transpose(0, 2, 1).reshape(b, c, h, w))


# -- forward passes ---------------------------------------------------------------


@functools.lru_cache(maxsize=64)
def cached_neighbor_mask(h: int, w: int, neighbor_size: int) -> NeighborMask:
    """Masks are immutable; build once per (H, W, n) and share."""
    return build_neighbor_mask(h, w, neighbor_size)


def placement_masks(cfg: ModelConfig) -> dict[str, Optional[NeighborMask]]:
    """Which attention sites carry the neighbor mask for this config."""
    if cfg.mask_placement == "none":
        return {"enc": None, "dec1": None, "dec2": None}
    m = cached_neighbor_mask(cfg.h, cfg.w, cfg.neighbor_size)
    return {
        "enc": m,
        "dec1": m if cfg.mask_placement in ("enc_dec1", "all") else None,
        "dec2": m if cfg.mask_placement in ("enc_dec2", "all") else None,
    }


def feature_jitter(x: Tensor, alpha: float, prob: float,
                   rng: np.random.Generator) -> Tensor:
    """Training-time token noise: with probability `prob` per token, add
    Gaussian noise whose per-channel std is alpha * ||token|| / C.

    The disturbance (including its norm-dependent std) is a constant in the
    autodiff graph. alpha == 0 or prob == 0 returns the input unchanged.
    """
    if alpha == 0.0 or prob == 0.0:
        return x
    c = x.shape[-1]
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    sigma = alpha * norms / c
    noise = rng.standard_normal(size=x.shape) * sigma
    keep = rng.random(size=x.shape[:-1] + (1,)) < prob
    delta = (noise * keep).astype(x.data.dtype)
    return x + Tensor(delta)


def project_channels(x: Tensor, params: ModelParams, direction: str) -> Tensor:
    """Per-token affine projection between C_org and the reduced C."""
    c_in = x.shape[-1]
    if direction == "reduce":
        w, b = params.reduce_w, params.reduce_b
    elif direction == "restore":
        w, b = params.restore_w, params.restore_b
    else:
        raise ConfigError(f"direction must be 'reduce' or 'restore', got '{direction}'")
    if c_in != w.shape[0]:
        raise ConfigError(f"channel extent {c_in} does not match {direction} "
                          f"projection input {w.shape[0]}")
    return T.matmul(x, w) + b


def encoder_forward(x: Tensor, layers: list, mask: Optional[NeighborMask]) -> Tensor:
    """Self-attention encoder stack; empty stack is the identity."""
    for layer in layers:
        x = transformer_sublayer(
            x, lambda t: attention(t, t, layer.attn, mask), layer.attn_norm)
        x = transformer_sublayer(
            x, lambda t: ffn_forward(t, layer.ffn), layer.ffn_norm)
    return x


def _projection_block(w: Tensor, b: Tensor, norm: LayerNormParams):
    """The attention stand-in: linear projection, layer norm, ReLU."""
    def block(t: Tensor) -> Tensor:
        return T.relu(T.layer_norm(T.matmul(t, w) + b,
                                   norm.gamma, norm.beta, norm.eps))
    return block


def mlp_encoder_forward(x: Tensor, layers: list) -> Tensor:
    # same residual scaffold as the transformer encoder, with the attention
    # module swapped for a projection block
    for layer in layers:
        x = transformer_sublayer(
            x, _projection_block(layer.lin_w, layer.lin_b, layer.lin_norm),
            layer.lin_out_norm)
        x = transformer_sublayer(
            x, lambda t: ffn_forward(t, layer.ffn), layer.ffn_norm)
    return x


def _expand_query(q: Tensor, batch: int) -> Tensor:
    k, c = q.shape
    return T.expand(q.reshape((1, k, c)), (batch, k, c))


def query_decoder_forward(enc_emb: Tensor, layers: list,
                          mask1: Optional[NeighborMask],
                          mask2: Optional[NeighborMask]) -> Tensor:
    """Layer-wise query decoder.

    Each layer fuses its own query embedding with the encoder embeddings
    (attention 1), then with the previous layer's output as key/value
    (attention 2; the first layer self-fuses on attention 1's output),
    and finishes with the FFN. Every sublayer is residual + post-norm.
    """
    batch = enc_emb.shape[0]
    prev: Optional[Tensor] = None
    for layer in layers:
        if layer.query_embed is None:
            raise ConfigError("query decoder layer is missing its query embedding")
        q = _expand_query(layer.query_embed, batch)
        a1 = transformer_sublayer(
            q, lambda t: attention(t, enc_emb, layer.attn1, mask1), layer.norm1)
        kv = a1 if prev is None else prev
        a2 = transformer_sublayer(
            a1, lambda t: attention(t, kv, layer.attn2, mask2), layer.norm2)
        prev = transformer_sublayer(
            a2, lambda t: ffn_forward(t, layer.ffn), layer.ffn_norm)
    return prev


def vanilla_decoder_forward(enc_emb: Tensor, layers: list,
                            query_embed: Optional[Tensor]) -> Tensor:
    """Standard decoder: self-attention, cross-attention over the encoder
    embeddings, FFN. With a single query embedding it seeds the first layer's
    self-attention; without one the encoder embeddings are fed in directly."""
    batch = enc_emb.shape[0]
    if query_embed is not None:
        prev = _expand_query(query_embed, batch)
    else:
        prev = enc_emb
    for layer in layers:
        s = transformer_sublayer(
            prev, lambda t: attention(t, t, layer.self_attn, None), layer.norm1)
        x = transformer_sublayer(
            s, lambda t: attention(t, enc_emb, layer.cross_attn, None), layer.norm2)
        prev = transformer_sublayer(
            x, lambda t: ffn_forward(t, layer.ffn), layer.ffn_norm)
    return prev


def concat_project(u: Tensor, v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Channel-wise concatenation followed by a linear projection."""
    return T.matmul(T.concat([u, v], axis=-1), w) + b


def mlp_decoder_forward(enc_emb: Tensor, layers: list) -> Tensor:
    prev = enc_emb
    for layer in layers:
        s = transformer_sublayer(
            prev, _projection_block(layer.self_w, layer.self_b, layer.self_norm),
            layer.self_out_norm)

        def fuse(t: Tensor) -> Tensor:
            mixed = concat_project(t, enc_emb, layer.fuse_w, layer.fuse_b)
            return T.relu(T.layer_norm(mixed, layer.fuse_norm.gamma,
                                       layer.fuse_norm.beta, layer.fuse_norm.eps))

        f = transformer_sublayer(s, fuse, layer.fuse_out_norm)
        prev = transformer_sublayer(
            f, lambda t: ffn_forward(t, layer.ffn), layer.ffn_norm)
    return prev


def reconstruct_tokens(x: Tensor, params: ModelParams, cfg: ModelConfig,
                       mode: str = "eval",
                       rng: Optional[np.random.Generator] = None) -> Tensor:
    """Differentiable core: (B, K, C_org) tokens -> reconstructed tokens.

    Train mode jitters the reduced tokens (when configured); eval mode is
    deterministic.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got '{mode}'")
    masks = placement_masks(cfg)
    t = project_channels(x, params, "reduce")
    if mode == "train" and cfg.jitter_scale > 0 and cfg.jitter_prob > 0:
        if rng is None:
            raise ConfigError("train mode with jitter needs an rng")
        t = feature_jitter(t, cfg.jitter_scale, cfg.jitter_prob, rng)
    if cfg.arch == "uniad":
        enc = encoder_forward(t, params.encoder, masks["enc"])
        out = query_decoder_forward(enc, params.decoder, masks["dec1"], masks["dec2"])
    elif cfg.arch == "vanilla_transformer":
        enc = encoder_forward(t, params.encoder, None)
        q = params.query_embed if cfg.query_mode == "single" else None
        if cfg.query_mode == "single" and q is None:
            raise ConfigError("query_mode 'single' but no query embedding present")
        out = vanilla_decoder_forward(enc, params.decoder, q)
    else:
        enc = mlp_encoder_forward(t, params.encoder)
        out = mlp_decoder_forward(enc, params.decoder)
    return project_channels(out, params, "restore")


def reconstruct(f_org: np.ndarray, params: ModelParams, cfg: ModelConfig,
                mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Feature map(s) in, reconstructed feature map(s) out, same shape.

    Accepts (C_org, H, W) or (B, C_org, H, W) arrays.
    """
    single = f_org.ndim == 3
    arr = np.asarray(f_org)
    if arr.shape[-3] != cfg.c_org or arr.shape[-2:] != (cfg.h, cfg.w):
        raise ConfigError(f"feature map shape {arr.shape} does not match config "
                          f"({cfg.c_org}, {cfg.h}, {cfg.w})")
    with T.no_grad():  # ndarray out, so a graph would be unreachable anyway
        tokens = Tensor(map_to_tokens(arr).astype(T.default_dtype(), copy=False))
        out = reconstruct_tokens(tokens, params, cfg, mode=mode, rng=rng)
    rec = tokens_to_map(out.data, cfg.h, cfg.w)
    return rec[0] if single else rec
