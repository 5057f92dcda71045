"""Dataset manifests, the synthetic multi-class generator, and checkpoints.

The manifest is a JSON document (schema in the README) listing feature files,
splits, labels, and optional masks, plus the grid metadata and image size.
The synthetic generator builds a desk-scale multi-class feature dataset whose
anomalies are guaranteed to lie outside every class's normal manifold.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import codec
from .blocks import ConfigError
from .model import ModelConfig, ModelParams, init_params, named_parameters
from .optim import AdamWHyper, AdamWState

MANIFEST_NAME = "manifest.json"
CHECKPOINT_MAGIC = b"UCK1"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {1: np.float32, 2: np.float64}
_TAG_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class ManifestError(Exception):
    """Invalid or inconsistent dataset manifest."""


class CheckpointError(Exception):
    """Invalid, corrupted, or mismatched checkpoint file."""


# -- manifest and loaded datasets ------------------------------------------------


@dataclass
class SampleRecord:
    feature_path: str
    class_id: int
    split: str  # train | test
    image_label: str  # normal | anomalous
    mask_path: Optional[str] = None
    sample_id: str = ""


@dataclass
class DatasetManifest:
    c_org: int
    h: int
    w: int
    image_size: Optional[tuple[int, int]]
    samples: list[SampleRecord]
    generator: dict = field(default_factory=dict)

    def validate(self) -> None:
        for s in self.samples:
            if s.split not in ("train", "test"):
                raise ManifestError(f"bad split '{s.split}' for {s.sample_id}")
            if s.image_label not in ("normal", "anomalous"):
                raise ManifestError(f"bad label '{s.image_label}' for {s.sample_id}")
            if s.split == "train" and s.image_label != "normal":
                raise ManifestError(
                    f"train split must contain only normal samples ({s.sample_id})")

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "grid": {"c_org": self.c_org, "h": self.h, "w": self.w},
            "image_size": list(self.image_size) if self.image_size else None,
            "generator": self.generator,
            "samples": [{
                "feature_path": s.feature_path, "class_id": s.class_id,
                "split": s.split, "image_label": s.image_label,
                "mask_path": s.mask_path, "sample_id": s.sample_id,
            } for s in self.samples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            grid = d["grid"]
            samples = [SampleRecord(
                feature_path=s["feature_path"], class_id=int(s["class_id"]),
                split=s["split"], image_label=s["image_label"],
                mask_path=s.get("mask_path"), sample_id=s.get("sample_id", ""),
            ) for s in d["samples"]]
            image_size = tuple(d["image_size"]) if d.get("image_size") else None
            m = cls(c_org=int(grid["c_org"]), h=int(grid["h"]), w=int(grid["w"]),
                    image_size=image_size, samples=samples,
                    generator=d.get("generator", {}))
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
        m.validate()
        return m


def save_manifest(manifest: DatasetManifest, directory: str) -> str:
    manifest.validate()
    path = os.path.join(directory, MANIFEST_NAME)
    codec.atomic_write(path, json.dumps(manifest.to_dict(), indent=1).encode())
    return path


def load_manifest(path: str) -> DatasetManifest:
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    if d.get("version") != 1:
        raise ManifestError(f"unsupported manifest version {d.get('version')}")
    return DatasetManifest.from_dict(d)


@dataclass
class LoadedSample:
    sample_id: str
    class_id: int
    split: str
    image_label: str
    features: np.ndarray  # (C_org, H, W) float32
    mask: Optional[np.ndarray] = None  # (H_img, W_img) uint8


@dataclass
class Dataset:
    samples: list[LoadedSample]
    c_org: int
    h: int
    w: int
    image_size: Optional[tuple[int, int]]
    root: str = ""

    def split(self, name: str) -> list[LoadedSample]:
        return [s for s in self.samples if s.split == name]

    def classes(self) -> list[int]:
        return sorted({s.class_id for s in self.samples})

    def restricted_to_class(self, class_id: int) -> "Dataset":
        subset = [s for s in self.samples if s.class_id == class_id]
        return Dataset(samples=subset, c_org=self.c_org, h=self.h, w=self.w,
                       image_size=self.image_size, root=self.root)


def load_dataset(path: str) -> Dataset:
    """Load a manifest and all referenced feature/mask files into memory."""
    manifest = load_manifest(path)
    root = path if os.path.isdir(path) else os.path.dirname(path)
    samples = []
    for rec in manifest.samples:
        feats = codec.decode_features(os.path.join(root, rec.feature_path))
        if feats.shape != (manifest.c_org, manifest.h, manifest.w):
            raise ManifestError(
                f"{rec.feature_path}: shape {feats.shape} does not match manifest "
                f"grid ({manifest.c_org}, {manifest.h}, {manifest.w})")
        mask = None
        if rec.mask_path:
            mask = codec.decode_mask(os.path.join(root, rec.mask_path))
            if manifest.image_size and mask.shape != manifest.image_size:
                raise ManifestError(f"{rec.mask_path}: mask shape {mask.shape} "
                                    f"!= image size {manifest.image_size}")
        samples.append(LoadedSample(
            sample_id=rec.sample_id or rec.feature_path, class_id=rec.class_id,
            split=rec.split, image_label=rec.image_label, features=feats, mask=mask))
    return Dataset(samples=samples, c_org=manifest.c_org, h=manifest.h,
                   w=manifest.w, image_size=manifest.image_size, root=root)


# -- synthetic multi-class dataset ---------------------------------------------


@dataclass
class SyntheticSpec:
    """Desk-scale stand-in for a multi-class feature dataset.

    Each class owns a rank-`rank` slice of one global orthonormal frame;
    normal samples are smooth spatial modulations of the class basis plus a
    small isotropic noise floor. Anomalies add a rectangular token patch
    offset along directions orthogonal to every class basis.
    """

    n_classes: int = 4
    c_org: int = 32
    h: int = 8
    w: int = 8
    rank: int = 4
    train_per_class: int = 50
    test_normal_per_class: int = 10
    test_anomalous_per_class: int = 10
    class_seed: int = 7
    patch_min: int = 2
    patch_max: int = 3
    magnitude_min: float = 0.9
    magnitude_max: float = 2.2
    noise_floor: float = 0.25
    image_scale: int = 4
    modulation_amp: float = 0.3
    modulation_modes: int = 3

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.h * self.image_scale, self.w * self.image_scale)

    def validate(self) -> None:
        if self.n_classes < 1 or self.rank < 1:
            raise ConfigError("n_classes and rank must be >= 1")
        if self.n_classes * self.rank >= self.c_org:
            raise ConfigError(
                f"need n_classes*rank < c_org for out-of-basis anomaly directions "
                f"({self.n_classes}*{self.rank} >= {self.c_org})")
        if not (1 <= self.patch_min <= self.patch_max):
            raise ConfigError("need 1 <= patch_min <= patch_max")
        if self.patch_max > min(self.h, self.w):
            raise ConfigError(f"patch_max {self.patch_max} does not fit the "
                              f"{self.h}x{self.w} grid")
        if self.noise_floor < 0 or self.magnitude_min <= self.noise_floor:
            raise ConfigError("anomaly magnitudes must exceed the noise floor")
        if self.magnitude_max < self.magnitude_min:
            raise ConfigError("magnitude range is inverted")
        if self.image_scale < 1:
            raise ConfigError("image_scale must be >= 1")
        if self.modulation_modes < 1:
            raise ConfigError("modulation_modes must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SyntheticSpec fields: {sorted(unknown)}")
        return cls(**d)


_MODE_FREQS = [(0, 1), (1, 0), (1, 1), (2, 1), (1, 2), (2, 2), (0, 2), (2, 0)]


@dataclass
class _ClassGenerator:
    basis: np.ndarray  # (c_org, rank)
    mean_coeff: np.ndarray  # (rank,)


@dataclass
class AnomalyDebug:
    sample_id: str
    base: np.ndarray
    patch: tuple[int, int, int, int]  # top, left, ph, pw
    direction: np.ndarray
    magnitude: float


def _class_generators(spec: SyntheticSpec) -> tuple[list[_ClassGenerator], np.ndarray]:
    """Fixed per-class bases plus the shared out-of-basis direction pool."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.class_seed))
    g = rng.standard_normal((spec.c_org, spec.c_org))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # sign-fixed so the frame is unique
    gens = []
    for c in range(spec.n_classes):
        basis = q[:, c * spec.rank:(c + 1) * spec.rank]
        mean_coeff = rng.normal(0.0, 1.0, size=spec.rank)
        gens.append(_ClassGenerator(basis=basis, mean_coeff=mean_coeff))
    anomaly_dirs = q[:, spec.n_classes * spec.rank:]
    return gens, anomaly_dirs


def _smooth_field(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """(K, rank) low-frequency coefficient modulation."""
    hh, ww = np.meshgrid(np.arange(spec.h), np.arange(spec.w), indexing="ij")
    field = np.zeros((spec.h * spec.w, spec.rank))
    for m in range(spec.modulation_modes):
        p, q = _MODE_FREQS[m % len(_MODE_FREQS)]
        amps = rng.normal(0.0, spec.modulation_amp, size=spec.rank)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.cos(2.0 * np.pi * (p * hh / spec.h + q * ww / spec.w) + phase)
        field += wave.reshape(-1, 1) * amps
    return field


def _normal_sample(spec: SyntheticSpec, gen: _ClassGenerator,
                   rng: np.random.Generator) -> np.ndarray:
    coeff = gen.mean_coeff + _smooth_field(spec, rng)  # (K, rank)
    tokens = coeff @ gen.basis.T
    tokens += rng.normal(0.0, spec.noise_floor, size=tokens.shape)
    return tokens.reshape(spec.h, spec.w, spec.c_org).transpose(2, 0, 1)


def _anomalize(spec: SyntheticSpec, base: np.ndarray, dirs: np.ndarray,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray,
                                                  tuple, np.ndarray, float]:
    ph = int(rng.integers(spec.patch_min, spec.patch_max + 1))
    pw = int(rng.integers(spec.patch_min, spec.patch_max + 1))
    top = int(rng.integers(0, spec.h - ph + 1))
    left = int(rng.integers(0, spec.w - pw + 1))
    u = rng.standard_normal(dirs.shape[1])
    direction = dirs @ (u / np.linalg.norm(u))
    magnitude = float(rng.uniform(spec.magnitude_min, spec.magnitude_max))
    fmap = base.copy()
    fmap[:, top:top + ph, left:left + pw] += magnitude * direction[:, None, None]
    s = spec.image_scale
    mask = np.zeros(spec.image_size, dtype=np.uint8)
    mask[top * s:(top + ph) * s, left * s:(left + pw) * s] = 1
    return fmap, mask, (top, left, ph, pw), direction, magnitude


def generate_synthetic_dataset(spec: SyntheticSpec, seed: int, out_dir: str,
                               with_debug: bool = False):
    """Write features, masks, and the manifest; returns the manifest (and the
    anomaly construction record when `with_debug`).

    Deterministic: the same spec and seed produce byte-identical files. The
    spec's class_seed fixes the class generators; `seed` drives sample draws.
    """
    spec.validate()
    gens, anomaly_dirs = _class_generators(spec)
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    records: list[SampleRecord] = []
    debug: list[AnomalyDebug] = []

    def emit(fmap: np.ndarray, class_id: int, split: str, label: str, idx: int,
             mask: np.ndarray | None = None) -> None:
        stem = f"c{class_id}_{split}_{label}_{idx:04d}"
        feature_path = os.path.join("features", stem + ".ufm")
        codec.encode_features(fmap.astype(np.float32), os.path.join(out_dir, feature_path))
        mask_path = None
        if mask is not None:
            mask_path = os.path.join("masks", stem + ".ums")
            codec.encode_mask(mask, os.path.join(out_dir, mask_path))
        records.append(SampleRecord(feature_path=feature_path, class_id=class_id,
                                    split=split, image_label=label,
                                    mask_path=mask_path, sample_id=stem))

    for class_id, gen in enumerate(gens):
        for i in range(spec.train_per_class):
            emit(_normal_sample(spec, gen, rng), class_id, "train", "normal", i)
        for i in range(spec.test_normal_per_class):
            emit(_normal_sample(spec, gen, rng), class_id, "test", "normal", i)
        for i in range(spec.test_anomalous_per_class):
            base = _normal_sample(spec, gen, rng)
            fmap, mask, patch, direction, mag = _anomalize(spec, base, anomaly_dirs, rng)
            emit(fmap, class_id, "test", "anomalous", i, mask=mask)
            if with_debug:
                debug.append(AnomalyDebug(sample_id=records[-1].sample_id,
                                          base=base, patch=patch,
                                          direction=direction, magnitude=mag))

    manifest = DatasetManifest(
        c_org=spec.c_org, h=spec.h, w=spec.w, image_size=spec.image_size,
        samples=records,
        generator={"kind": "synthetic", "seed": seed, "spec": spec.to_dict()})
    save_manifest(manifest, out_dir)
    return (manifest, debug) if with_debug else manifest


# -- checkpoints -------------------------------------------------------------------


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    tag = _TAG_OF.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype} for '{name}'")
    nb = name.encode("utf-8")
    head = len(nb).to_bytes(2, "little") + nb + bytes([tag, arr.ndim])
    dims = b"".join(int(d).to_bytes(4, "little") for d in arr.shape)
    data = np.ascontiguousarray(arr)
    if data.dtype.byteorder == ">":
        data = data.astype(data.dtype.newbyteorder("<"))
    return head + dims + data.tobytes(order="C")


def save_checkpoint(params: ModelParams, state: AdamWState, cfg: ModelConfig,
                    path: str, train_cfg: dict | None = None) -> None:
    """Versioned container: JSON header (configs, optimizer scalars) followed
    by every named parameter tensor and its optimizer moments, raw
    little-endian."""
    named = named_parameters(params)
    header = {
        "model_config": cfg.to_dict(),
        "train_config": train_cfg,
        "adamw": {"step": state.step, "hyper": {
            "lr": state.hyper.lr, "beta1": state.hyper.beta1,
            "beta2": state.hyper.beta2, "eps": state.hyper.eps,
            "weight_decay": state.hyper.weight_decay}},
        "parameters": list(named.keys()),
    }
    hb = json.dumps(header).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, CHECKPOINT_VERSION.to_bytes(2, "little"),
              len(hb).to_bytes(4, "little"), hb]
    tensors: list[tuple[str, np.ndarray]] = []
    for name, t in named.items():
        tensors.append((name, t.data))
        tensors.append((f"opt.m.{name}", state.m[name]))
        tensors.append((f"opt.v.{name}", state.v[name]))
    chunks.append(len(tensors).to_bytes(4, "little"))
    for name, arr in tensors:
        chunks.append(_pack_tensor(name, arr))
    codec.atomic_write(path, b"".join(chunks))


def load_checkpoint(path: str, expect_grid: tuple[int, int, int] | None = None):
    """Restore (params, state, cfg, train_cfg_dict) from a UCK1 file.

    Refuses version mismatches and, when `expect_grid` = (c_org, h, w) is
    given, checkpoints trained on a different grid.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r} at byte 0, "
                              f"expected {CHECKPOINT_MAGIC!r}")
    version = int.from_bytes(blob[4:6], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    hlen = int.from_bytes(blob[6:10], "little")
    try:
        header = json.loads(blob[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted header: {exc}") from exc
    cfg = ModelConfig.from_dict(header["model_config"])
    if expect_grid is not None and (cfg.c_org, cfg.h, cfg.w) != tuple(expect_grid):
        raise CheckpointError(
            f"checkpoint grid ({cfg.c_org}, {cfg.h}, {cfg.w}) does not match "
            f"expected {tuple(expect_grid)}")

    off = 10 + hlen
    n_tensors = int.from_bytes(blob[off:off + 4], "little")
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        nlen = int.from_bytes(blob[off:off + 2], "little")
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        tag, ndim = blob[off], blob[off + 1]
        off += 2
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"unknown dtype tag {tag} for tensor '{name}'")
        dims = tuple(int.from_bytes(blob[off + 4 * i:off + 4 * i + 4], "little")
                     for i in range(ndim))
        off += 4 * ndim
        dtype = np.dtype(_DTYPE_TAGS[tag]).newbyteorder("<")
        nbytes = int(np.prod(dims)) * dtype.itemsize if dims else dtype.itemsize
        if off + nbytes > len(blob):
            raise CheckpointError(
                f"corrupted tensor payload for parameter '{name}': need "
                f"{nbytes} bytes at offset {off}, file has {len(blob)}")
        arrays[name] = np.frombuffer(blob, dtype=dtype, count=int(np.prod(dims)),
                                     offset=off).reshape(dims).copy()
        off += nbytes
    if off != len(blob):
        raise CheckpointError(f"{len(blob) - off} trailing bytes after last tensor")

    params = init_params(cfg, np.random.default_rng(0))
    named = named_parameters(params)
    if header.get("parameters") != list(named.keys()):
        missing = set(named) - set(header.get("parameters", []))
        extra = set(header.get("parameters", [])) - set(named)
        raise CheckpointError(f"parameter inventory mismatch "
                              f"(missing {sorted(missing)}, extra {sorted(extra)})")
    hyper = AdamWHyper(**header["adamw"]["hyper"])
    state = AdamWState(hyper=hyper, step=int(header["adamw"]["step"]))
    for name, t in named.items():
        for key, store in ((name, None), (f"opt.m.{name}", state.m),
                           (f"opt.v.{name}", state.v)):
            arr = arrays.get(key)
            if arr is None:
                raise CheckpointError(f"checkpoint is missing tensor '{key}'")
            if arr.shape != t.data.shape:
                raise CheckpointError(f"tensor '{key}' has shape {arr.shape}, "
                                      f"expected {t.data.shape}")
            if store is None:
                t.data = arr.astype(t.data.dtype, copy=False)
            else:
                store[name] = arr.astype(t.data.dtype, copy=False)
    return params, state, cfg, header.get("train_config")
