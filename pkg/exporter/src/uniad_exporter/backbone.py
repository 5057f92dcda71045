"""Frozen EfficientNet-b4 stage-feature extraction.

A "stage" is the run of blocks sharing one feature-map resolution; the tap is
the last activation of each stage. For 224x224 inputs the taps sit at
torchvision feature indices 1, 2, 3, 5, 7 (stages 1..5) with channel counts
24, 32, 56, 160, 448. Stages 1-4 concatenate to the 272-channel map.
"""

from __future__ import annotations

import warnings

import torch
from torchvision.models import efficientnet_b4

# stage number -> (features index of the stage's last block, channels)
STAGE_TAPS = {1: (1, 24), 2: (2, 32), 3: (3, 56), 4: (5, 160), 5: (7, 448)}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

FALLBACK_SEED = 0


class BackboneError(RuntimeError):
    pass


def expected_channels(stages: list[int]) -> int:
    try:
        return sum(STAGE_TAPS[s][1] for s in stages)
    except KeyError as exc:
        raise BackboneError(f"unknown stage {exc}; choose from {sorted(STAGE_TAPS)}")


def load_backbone(weights_path: str | None = None) -> tuple[torch.nn.Module, str]:
    """Frozen EfficientNet-b4 plus a description of its weights.

    With no weights file the backbone is seeded deterministically and left
    random; stage geometry and channel counts are identical either way.
    """
    if weights_path:
        model = efficientnet_b4()
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
        weights_desc = f"file:{weights_path}"
    else:
        warnings.warn("no pretrained weights supplied; using a deterministically "
                      "seeded random EfficientNet-b4 (features are reproducible "
                      "but not ImageNet-discriminative)", stacklevel=2)
        torch.manual_seed(FALLBACK_SEED)
        model = efficientnet_b4()
        weights_desc = f"seeded-random:{FALLBACK_SEED}"
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, weights_desc


@torch.no_grad()
def extract_stage_features(model: torch.nn.Module, batch: torch.Tensor,
                           stages: list[int], grid: tuple[int, int]) -> torch.Tensor:
    """Run the frozen backbone and return (B, sum_C, grid_h, grid_w) features:
    each stage tap bilinearly resized to `grid` and concatenated channel-wise."""
    taps = {STAGE_TAPS[s][0]: s for s in stages}
    last_needed = max(taps)
    outs: dict[int, torch.Tensor] = {}
    cur = batch
    for i, block in enumerate(model.features):
        cur = block(cur)
        if i in taps:
            outs[i] = cur
        if i == last_needed:
            break
    resized = [
        torch.nn.functional.interpolate(outs[STAGE_TAPS[s][0]], size=grid,
                                        mode="bilinear", align_corners=False)
        for s in stages
    ]
    feats = torch.cat(resized, dim=1)
    want = expected_channels(stages)
    if feats.shape[1] != want:
        raise BackboneError(f"stage channel mismatch: got {feats.shape[1]}, "
                            f"expected {want} for stages {stages}")
    return feats
