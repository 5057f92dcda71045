"""Anomaly scoring and ranking metrics.

Score maps live in plain numpy (inference only). The per-position score is
the L2 norm of the reconstruction residual for mse training, and the matching
distance for the normalized / cosine loss variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import ConfigError

_NORM_EPS = 1e-12


class MetricError(ValueError):
    """Undefined metric (e.g. single-class AUROC input)."""


@dataclass
class AnomalyScoreMap:
    """H x W non-negative scores, optionally upsampled to image size."""

    s: np.ndarray
    upsampled: np.ndarray | None = None


def build_score_map(f_org: np.ndarray, f_rec: np.ndarray, variant: str = "mse",
                    image_size: tuple[int, int] | None = None) -> AnomalyScoreMap:
    """Score a reconstruction: the per-position map plus, when an image size
    is given, its bilinear upsampling."""
    s = anomaly_score_map(f_org, f_rec, variant)
    upsampled = upsample_bilinear(s, image_size) if image_size else None
    return AnomalyScoreMap(s=s, upsampled=upsampled)


def anomaly_score_map(f_org: np.ndarray, f_rec: np.ndarray,
                      variant: str = "mse") -> np.ndarray:
    """Per-position anomaly score over (C, H, W) maps.

    mse -> residual L2 norm; normalized_mse -> residual norm of per-position
    unit-normalized maps; cosine -> cosine distance per position.
    """
    if f_org.shape != f_rec.shape:
        raise ConfigError(f"shape mismatch {f_org.shape} vs {f_rec.shape}")
    a = np.asarray(f_org, dtype=np.float64)
    b = np.asarray(f_rec, dtype=np.float64)
    if variant == "mse":
        return np.linalg.norm(a - b, axis=0)
    if variant == "normalized_mse":
        na = a / (np.linalg.norm(a, axis=0, keepdims=True) + _NORM_EPS)
        nb = b / (np.linalg.norm(b, axis=0, keepdims=True) + _NORM_EPS)
        return np.linalg.norm(na - nb, axis=0)
    if variant == "cosine":
        dot = (a * b).sum(axis=0)
        denom = np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0) + _NORM_EPS
        return 1.0 - dot / denom
    raise ConfigError(f"unknown score variant '{variant}'")


def upsample_bilinear(s: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with the align-corners-false convention.

    Output sample i maps to source coordinate (i + 0.5) * in/out - 0.5 with
    edge clamping; outputs stay within [min(s), max(s)].
    """
    h, w = s.shape
    th, tw = target
    if th < h or tw < w:
        raise ConfigError(f"target {target} smaller than source {s.shape}")

    def axis_weights(n_in: int, n_out: int):
        coords = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(coords).astype(int)
        t = coords - lo
        i0 = np.clip(lo, 0, n_in - 1)
        i1 = np.clip(lo + 1, 0, n_in - 1)
        return i0, i1, t

    r0, r1, tr = axis_weights(h, th)
    c0, c1, tc = axis_weights(w, tw)
    rows = s[r0] * (1.0 - tr)[:, None] + s[r1] * tr[:, None]
    return rows[:, c0] * (1.0 - tc) + rows[:, c1] * tc


def image_score(s: np.ndarray, pool_size: int) -> float:
    """Maximum of the average-pooled score map (square window, stride 1)."""
    h, w = s.shape
    if pool_size < 1 or pool_size > h or pool_size > w:
        raise ConfigError(f"pool size {pool_size} does not fit map {s.shape}")
    if pool_size == 1:
        return float(s.max())
    cs = np.zeros((h + 1, w + 1), dtype=np.float64)
    cs[1:, 1:] = np.cumsum(np.cumsum(s, axis=0), axis=1)
    p = pool_size
    sums = cs[p:, p:] - cs[:-p, p:] - cs[p:, :-p] + cs[:-p, :-p]
    return float(sums.max() / (p * p))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Rank-based AUROC with midrank tie handling.

    Equals the probability that a random positive outranks a random negative,
    ties counting one half. Raises MetricError when a class is absent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ConfigError(f"scores/labels must be equal-length 1-d, got "
                          f"{scores.shape} and {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ConfigError("labels must be binary (0/1)")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
