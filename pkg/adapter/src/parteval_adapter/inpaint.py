"""Inpainting backends for removing part regions from images.

The production choice would be a GAN inpainter (MI-GAN via iopaint); this
sandbox has no model weights, so the default is OpenCV's Telea diffusion
inpainting, with flat-fill baselines alongside. Backends take and return
uint8 HxWx3 arrays and must not modify pixels outside the region.
"""

from __future__ import annotations

from typing import Callable

import cv2
import numpy as np

Backend = Callable[[np.ndarray, np.ndarray], np.ndarray]


def telea(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    return cv2.inpaint(image, region.astype(np.uint8) * 255, inpaintRadius=3, flags=cv2.INPAINT_TELEA)


def gray_fill(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    out = image.copy()
    out[region.astype(bool)] = 128
    return out


def background_mean_fill(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Fill with the mean color of the pixels outside the removed region."""
    sel = region.astype(bool)
    out = image.copy()
    if sel.all():
        return gray_fill(image, region)
    mean = image[~sel].reshape(-1, image.shape[2]).mean(axis=0)
    out[sel] = np.round(mean).astype(np.uint8)
    return out


BACKENDS: dict[str, Backend] = {
    "telea": telea,
    "gray": gray_fill,
    "background-mean": background_mean_fill,
}

try:  # pragma: no cover - exercised only where iopaint and weights exist
    from .migan import migan_inpaint  # type: ignore

    BACKENDS["migan"] = migan_inpaint
except ImportError:
    pass


def get_backend(name: str) -> Backend:
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown inpainting backend {name!r}; have {sorted(BACKENDS)}") from None


def remove_parts(image: np.ndarray, mask: np.ndarray, subset, backend: Backend) -> np.ndarray:
    """Inpaint the union of the given parts' pixels."""
    region = np.isin(mask, list(subset)).astype(np.uint8)
    if not region.any():
        raise ValueError(f"subset {sorted(subset)} covers no pixels")
    return backend(image, region)
