"""Explanation-method wrappers producing pixel-resolution attribution rasters.

Attention readouts (raw attention, rollout) are class-independent and are only
emitted for the predicted class; input-gradient saliency accepts any class.
Token-grid maps are upsampled bilinearly to the mask resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .model import Classifier


def _token_grid_to_raster(grid: torch.Tensor, out_h: int, out_w: int) -> np.ndarray:
    up = F.interpolate(
        grid[None, None, :, :], size=(out_h, out_w), mode="bilinear", align_corners=False
    )
    return up[0, 0].numpy().astype(np.float32)


def gradient_saliency(clf: Classifier, image_path, class_idx: int, out_shape) -> np.ndarray:
    x = clf.preprocess(image_path).requires_grad_(True)
    logits = clf.model(pixel_values=x).logits
    logits[0, class_idx].backward()
    sal = x.grad.detach()[0].abs().sum(dim=0)
    return _token_grid_to_raster(sal, out_shape[0], out_shape[1])


def _grid_side(clf: Classifier) -> int:
    return clf.spec.image_size // clf.spec.patch_size


@torch.no_grad()
def raw_attention(clf: Classifier, image_path, class_idx, out_shape) -> np.ndarray:
    att = clf.attentions(image_path)[-1]  # (1, heads, tokens, tokens)
    cls_row = att[0].mean(dim=0)[0, 1:]  # CLS token to patches, head-averaged
    side = _grid_side(clf)
    return _token_grid_to_raster(cls_row.reshape(side, side), out_shape[0], out_shape[1])


@torch.no_grad()
def attention_rollout(clf: Classifier, image_path, class_idx, out_shape) -> np.ndarray:
    attentions = clf.attentions(image_path)
    rollout = None
    for att in attentions:
        a = att[0].mean(dim=0)
        a = a + torch.eye(a.shape[0])  # skip connections carry identity flow
        a = a / a.sum(dim=-1, keepdim=True)
        rollout = a if rollout is None else a @ rollout
    cls_row = rollout[0, 1:]
    side = _grid_side(clf)
    return _token_grid_to_raster(cls_row.reshape(side, side), out_shape[0], out_shape[1])


@dataclass(frozen=True)
class Explainer:
    method_id: str
    class_dependent: bool
    fn: Callable


REGISTRY: dict[str, Explainer] = {
    "gradsal": Explainer("gradsal", True, gradient_saliency),
    "ram": Explainer("ram", False, raw_attention),
    "rollout": Explainer("rollout", False, attention_rollout),
}


def get_explainer(method_id: str) -> Explainer:
    try:
        return REGISTRY[method_id]
    except KeyError:
        raise ValueError(f"unknown explanation method {method_id!r}; have {sorted(REGISTRY)}") from None
