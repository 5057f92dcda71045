"""Offline feature export: image tree in, UFM1/UMS1 dataset out.

Expected layout under the image root:

    <class>/<split>/<label>/<image>.png     split in {train, test},
                                            label in {normal, anomalous}
    <class>/masks/<image stem>.png          optional, for anomalous samples

Every image yields one feature file; the manifest mirrors the directory
labels. Unreadable images are skipped with a warning and excluded.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .backbone import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    expected_channels,
    extract_stage_features,
    load_backbone,
)
from .ufm import write_features, write_manifest, write_mask

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
SPLITS = ("train", "test")
LABELS = ("normal", "anomalous")


@dataclass
class ExportConfig:
    image_root: str
    out_dir: str
    image_size: int = 224
    grid: tuple[int, int] = (14, 14)
    stages: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    weights_path: str | None = None
    batch_size: int = 8

    def validate(self) -> None:
        if self.image_size < 32:
            raise ValueError(f"image_size too small: {self.image_size}")
        if min(self.grid) < 1:
            raise ValueError(f"bad target grid {self.grid}")
        if not self.stages:
            raise ValueError("need at least one backbone stage")
        expected_channels(self.stages)  # validates stage numbers


@dataclass
class _Record:
    image_path: str
    class_name: str
    class_id: int
    split: str
    label: str
    mask_path: str | None


def _scan_images(root: str) -> list[_Record]:
    records: list[_Record] = []
    classes = sorted(d for d in os.listdir(root)
                     if os.path.isdir(os.path.join(root, d)))
    for class_id, class_name in enumerate(classes):
        for split in SPLITS:
            for label in LABELS:
                d = os.path.join(root, class_name, split, label)
                if not os.path.isdir(d):
                    continue
                for name in sorted(os.listdir(d)):
                    if not name.lower().endswith(IMAGE_EXTENSIONS):
                        continue
                    stem = os.path.splitext(name)[0]
                    mask = os.path.join(root, class_name, "masks", stem + ".png")
                    records.append(_Record(
                        image_path=os.path.join(d, name), class_name=class_name,
                        class_id=class_id, split=split, label=label,
                        mask_path=mask if os.path.exists(mask) else None))
    return records


def _load_image(path: str, size: int) -> np.ndarray | None:
    try:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((size, size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        warnings.warn(f"skipping unreadable image {path}: {exc}", stacklevel=2)
        return None
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) \
        / np.asarray(IMAGENET_STD, dtype=np.float32)
    return arr.transpose(2, 0, 1)  # (3, H, W)


def _load_mask(path: str, size: int) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("L").resize((size, size), Image.NEAREST)
    return (np.asarray(img) > 0).astype(np.uint8)


def export_features(cfg: ExportConfig) -> dict:
    """Run the frozen backbone over the image tree and write the dataset.

    Returns the manifest document (also written to <out_dir>/manifest.json).
    """
    cfg.validate()
    records = _scan_images(cfg.image_root)
    model, weights_desc = load_backbone(cfg.weights_path)
    c_org = expected_channels(cfg.stages)

    os.makedirs(os.path.join(cfg.out_dir, "features"), exist_ok=True)
    samples: list[dict] = []
    if not records:
        warnings.warn(f"no images found under {cfg.image_root}; writing an "
                      f"empty manifest", stacklevel=2)

    batch_imgs: list[np.ndarray] = []
    batch_recs: list[_Record] = []

    def flush() -> None:
        if not batch_imgs:
            return
        batch = torch.from_numpy(np.stack(batch_imgs))
        feats = extract_stage_features(model, batch, cfg.stages, cfg.grid)
        for rec, fmap in zip(batch_recs, feats):
            stem = f"{rec.class_name}_{rec.split}_{rec.label}_" \
                   f"{os.path.splitext(os.path.basename(rec.image_path))[0]}"
            feature_rel = os.path.join("features", stem + ".ufm")
            write_features(fmap.numpy(), os.path.join(cfg.out_dir, feature_rel))
            mask_rel = None
            if rec.mask_path is not None:
                mask_rel = os.path.join("masks", stem + ".ums")
                write_mask(_load_mask(rec.mask_path, cfg.image_size),
                           os.path.join(cfg.out_dir, mask_rel))
            samples.append({
                "feature_path": feature_rel, "class_id": rec.class_id,
                "split": rec.split,
                "image_label": rec.label,
                "mask_path": mask_rel, "sample_id": stem,
            })
        batch_imgs.clear()
        batch_recs.clear()

    for rec in records:
        img = _load_image(rec.image_path, cfg.image_size)
        if img is None:
            continue
        batch_imgs.append(img)
        batch_recs.append(rec)
        if len(batch_imgs) >= cfg.batch_size:
            flush()
    flush()

    generator = {
        "kind": "exported",
        "backbone": "efficientnet_b4",
        "weights": weights_desc,
        "stages": cfg.stages,
        "interpolation": "bilinear-align-corners-false",
        "normalization": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
        "image_size": cfg.image_size,
    }
    write_manifest(os.path.join(cfg.out_dir, "manifest.json"), c_org, cfg.grid,
                   (cfg.image_size, cfg.image_size), samples, generator)
    return {"samples": len(samples), "c_org": c_org, "grid": cfg.grid,
            "weights": weights_desc}
