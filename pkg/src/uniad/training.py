"""Training loop, loss variants, and checkpoint evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .blocks import ConfigError
from .dataio import Dataset, LoadedSample
from .model import (
    ModelConfig,
    ModelParams,
    init_params,
    map_to_tokens,
    named_parameters,
    reconstruct_tokens,
    tokens_to_map,
)
from .optim import AdamWHyper, AdamWState, adamw_step
from .scoring import MetricError, anomaly_score_map, auroc, image_score, upsample_bilinear
from .tensor import NonFiniteError, Tensor

_NORM_EPS = 1e-12


class TrainError(RuntimeError):
    """Training aborted (e.g. non-finite loss)."""


@dataclass
class TrainConfig:
    """Optimization settings. Defaults are the full-scale recipe: 1000 epochs
    at lr 1e-4, dropped to 1e-5 after epoch 800, weight decay 1e-4."""

    epochs: int = 1000
    lr: float = 1e-4
    lr_drop_epoch: int = 800
    lr_drop_factor: float = 0.1
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    eval_every: int = 10
    pool_size: int = 4

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size and eval_every must be >= 1")
        if self.lr <= 0 or self.lr_drop_factor <= 0:
            raise ConfigError("lr and lr_drop_factor must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Step-decay schedule; `epoch` is 1-based."""
    return cfg.lr * (cfg.lr_drop_factor if epoch > cfg.lr_drop_epoch else 1.0)


# -- loss ---------------------------------------------------------------------


def _token_norm(x: Tensor) -> Tensor:
    return T.sqrt((x * x).sum(axis=-1, keepdims=True) + _NORM_EPS)


def reconstruction_loss(f_org: Tensor, f_rec: Tensor, variant: str = "mse") -> Tensor:
    """Scalar reconstruction objective over token tensors of shape (..., K, C).

    mse: sum of squared residuals divided by the number of positions.
    normalized_mse: the same on per-position unit-normalized vectors.
    cosine: mean cosine distance (1 - cosine similarity) per position.
    Zero-norm positions under the normalized/cosine variants are stabilized
    with a 1e-12 epsilon inside the norm.
    """
    if f_org.shape != f_rec.shape:
        raise ConfigError(f"loss shapes differ: {f_org.shape} vs {f_rec.shape}")
    positions = int(np.prod(f_org.shape[:-1]))
    if variant == "mse":
        d = f_org - f_rec
        return (d * d).sum() / positions
    if variant == "normalized_mse":
        a = f_org / _token_norm(f_org)
        b = f_rec / _token_norm(f_rec)
        d = a - b
        return (d * d).sum() / positions
    if variant == "cosine":
        dot = (f_org * f_rec).sum(axis=-1, keepdims=True)
        cos = dot / (_token_norm(f_org) * _token_norm(f_rec))
        return (1.0 - cos).sum() / positions
    raise ConfigError(f"unknown loss_variant '{variant}'")


# -- reports --------------------------------------------------------------------


@dataclass
class ClassMetrics:
    det_auroc: Optional[float] = None
    loc_auroc: Optional[float] = None


@dataclass
class EvalReport:
    """Detection / localization AUROC per class and pooled, plus the traces
    recorded during training (epoch-aligned)."""

    per_class: dict[int, ClassMetrics] = field(default_factory=dict)
    pooled_det: Optional[float] = None
    pooled_loc: Optional[float] = None
    loc_flagged: bool = False  # set when missing masks forced loc omission
    loss_trace: list[tuple[int, float]] = field(default_factory=list)
    metric_trace: list[tuple[int, Optional[float], Optional[float]]] = field(
        default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "per_class": {str(k): {"det_auroc": m.det_auroc, "loc_auroc": m.loc_auroc}
                          for k, m in sorted(self.per_class.items())},
            "pooled": {"det_auroc": self.pooled_det, "loc_auroc": self.pooled_loc},
            "loc_flagged": self.loc_flagged,
            "loss_trace": [[e, l] for e, l in self.loss_trace],
            "metric_trace": [[e, d, l] for e, d, l in self.metric_trace],
        }

    def trace_csv_rows(self) -> list[dict]:
        rows = [{"epoch": e, "loss": l, "det_auroc": "", "loc_auroc": ""}
                for e, l in self.loss_trace]
        for e, d, l in self.metric_trace:
            rows.append({"epoch": e, "loss": "",
                         "det_auroc": "" if d is None else d,
                         "loc_auroc": "" if l is None else l})
        return rows


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate: config, parameters, optimizer."""

    model_cfg: ModelConfig
    params: ModelParams
    opt_state: AdamWState
    train_cfg: Optional[TrainConfig] = None


# -- evaluation -------------------------------------------------------------------


def _reconstruct_batched(params: ModelParams, cfg: ModelConfig,
                         maps: np.ndarray, chunk: int = 64) -> np.ndarray:
    outs = []
    with T.no_grad():
        for i in range(0, maps.shape[0], chunk):
            tokens = Tensor(map_to_tokens(maps[i:i + chunk]).astype(
                T.default_dtype(), copy=False))
            rec = reconstruct_tokens(tokens, params, cfg, mode="eval")
            outs.append(tokens_to_map(rec.data, cfg.h, cfg.w))
    return np.concatenate(outs, axis=0)


def score_samples(params: ModelParams, cfg: ModelConfig,
                  samples: list[LoadedSample], pool_size: int,
                  image_size: tuple[int, int] | None = None):
    """Image scores and (when image_size is given) upsampled pixel score maps
    for every sample, in order."""
    maps = np.stack([s.features for s in samples]).astype(np.float32)
    recs = _reconstruct_batched(params, cfg, maps)
    img_scores, pixel_maps = [], []
    for f_org, f_rec in zip(maps, recs):
        s = anomaly_score_map(f_org, f_rec, cfg.loss_variant)
        img_scores.append(image_score(s, pool_size))
        if image_size is not None:
            pixel_maps.append(upsample_bilinear(s, image_size))
    return np.asarray(img_scores), pixel_maps


def evaluate(params: ModelParams, cfg: ModelConfig, dataset: Dataset,
             pool_size: int = 4) -> EvalReport:
    """Detection AUROC over image scores and localization AUROC over all
    upsampled pixels vs ground-truth masks, per class and pooled."""
    cfg.validate()
    if (dataset.c_org, dataset.h, dataset.w) != (cfg.c_org, cfg.h, cfg.w):
        raise ConfigError(
            f"dataset grid ({dataset.c_org}, {dataset.h}, {dataset.w}) does not "
            f"match model config ({cfg.c_org}, {cfg.h}, {cfg.w})")
    test = [s for s in dataset.samples if s.split == "test"]
    if not test:
        raise ConfigError("dataset has no test split to evaluate")

    need_pixels = dataset.image_size is not None
    img_scores, pixel_maps = score_samples(
        params, cfg, test, pool_size, dataset.image_size if need_pixels else None)
    labels = np.array([1 if s.image_label == "anomalous" else 0 for s in test])
    classes = sorted({s.class_id for s in test})

    report = EvalReport()
    loc_scores_pooled, loc_labels_pooled = [], []
    pooled_loc_ok = need_pixels
    for cid in classes:
        idx = [i for i, s in enumerate(test) if s.class_id == cid]
        cm = ClassMetrics()
        try:
            cm.det_auroc = auroc(img_scores[idx], labels[idx])
        except MetricError:
            cm.det_auroc = None
        loc_ok = need_pixels
        cls_scores, cls_labels = [], []
        for i in idx:
            s = test[i]
            if not need_pixels:
                continue
            if s.image_label == "anomalous" and s.mask is None:
                loc_ok = False
                break
            mask = s.mask if s.mask is not None else np.zeros(dataset.image_size, dtype=np.uint8)
            cls_scores.append(pixel_maps[i].ravel())
            cls_labels.append((mask > 0).astype(int).ravel())
        if loc_ok and cls_scores:
            try:
                cm.loc_auroc = auroc(np.concatenate(cls_scores), np.concatenate(cls_labels))
                loc_scores_pooled.extend(cls_scores)
                loc_labels_pooled.extend(cls_labels)
            except MetricError:
                cm.loc_auroc = None
        if not loc_ok:
            report.loc_flagged = True
            pooled_loc_ok = False
        report.per_class[cid] = cm

    try:
        report.pooled_det = auroc(img_scores, labels)
    except MetricError:
        report.pooled_det = None
    if pooled_loc_ok and loc_scores_pooled:
        report.pooled_loc = auroc(np.concatenate(loc_scores_pooled),
                                  np.concatenate(loc_labels_pooled))
    return report


# -- training -----------------------------------------------------------------------


def train(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
          quiet: bool = True) -> tuple[Checkpoint, EvalReport]:
    """Mini-batch training with jitter, AdamW, and the step-decay schedule.

    Deterministic for a fixed train_cfg.seed (init, shuffling, and jitter run
    on independent seeded streams). Evaluates the test split every
    `eval_every` epochs and after the last epoch; the returned checkpoint is
    always the last-epoch state, never metric-selected.
    """
    model_cfg.validate()
    train_cfg.validate()
    train_samples = [s for s in dataset.samples if s.split == "train"]
    if not train_samples:
        raise ConfigError("dataset has no training samples")
    for s in train_samples:
        if s.image_label != "normal":
            raise ConfigError(f"training split must contain only normal samples; "
                              f"'{s.sample_id}' is {s.image_label}")
    if (dataset.c_org, dataset.h, dataset.w) != (model_cfg.c_org, model_cfg.h, model_cfg.w):
        raise ConfigError("dataset grid does not match model config")

    has_test = any(s.split == "test" for s in dataset.samples)
    ss = np.random.SeedSequence(train_cfg.seed)
    init_ss, shuffle_ss, jitter_ss = ss.spawn(3)
    params = init_params(model_cfg, np.random.default_rng(init_ss))
    named = named_parameters(params)
    hyper = AdamWHyper(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    state = AdamWState.init(named, hyper)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    jitter_rng = np.random.default_rng(jitter_ss)

    all_tokens = map_to_tokens(
        np.stack([s.features for s in train_samples])).astype(np.float32)
    n = all_tokens.shape[0]
    report = EvalReport()
    t_start = time.monotonic()

    for epoch in range(1, train_cfg.epochs + 1):
        state.hyper.lr = lr_at_epoch(train_cfg, epoch)
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for b_start in range(0, n, train_cfg.batch_size):
            batch_idx = perm[b_start:b_start + train_cfg.batch_size]
            clean = Tensor(all_tokens[batch_idx])
            try:
                rec = reconstruct_tokens(clean, params, model_cfg,
                                         mode="train", rng=jitter_rng)
                loss = reconstruction_loss(clean, rec, model_cfg.loss_variant)
            except NonFiniteError as exc:
                raise TrainError(f"non-finite loss at epoch {epoch}, "
                                 f"batch {b_start // train_cfg.batch_size}: {exc}") from exc
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainError(f"non-finite loss at epoch {epoch}, "
                                 f"batch {b_start // train_cfg.batch_size}")
            loss.backward()
            grads = {name: t.grad for name, t in named.items() if t.grad is not None}
            adamw_step(named, grads, state)
            for t in named.values():
                t.zero_grad()
            batch_losses.append(loss_val)

        epoch_loss = float(np.mean(batch_losses))
        report.loss_trace.append((epoch, epoch_loss))
        if has_test and (epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs):
            snap = evaluate(params, model_cfg, dataset, pool_size=train_cfg.pool_size)
            report.metric_trace.append((epoch, snap.pooled_det, snap.pooled_loc))
            report.per_class = snap.per_class
            report.pooled_det = snap.pooled_det
            report.pooled_loc = snap.pooled_loc
            report.loc_flagged = snap.loc_flagged
            if not quiet:
                det = "-" if snap.pooled_det is None else f"{snap.pooled_det:.3f}"
                print(f"epoch {epoch:4d} loss {epoch_loss:.5f} det {det} "
                      f"[{time.monotonic() - t_start:.0f}s]")

    ckpt = Checkpoint(model_cfg=model_cfg, params=params, opt_state=state,
                      train_cfg=train_cfg)
    return ckpt, report
