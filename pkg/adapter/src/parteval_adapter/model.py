"""Tiny ViT classifier wrapper: checkpoint IO, preprocessing, logits, attentions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from transformers import ViTConfig, ViTForImageClassification


@dataclass
class ClassifierSpec:
    model_id: str
    checkpoint: str
    num_labels: int
    image_size: int = 16
    patch_size: int = 4
    hidden_size: int = 32
    num_layers: int = 2
    num_heads: int = 2


def build_model(spec: ClassifierSpec) -> ViTForImageClassification:
    config = ViTConfig(
        image_size=spec.image_size,
        patch_size=spec.patch_size,
        num_channels=3,
        hidden_size=spec.hidden_size,
        num_hidden_layers=spec.num_layers,
        num_attention_heads=spec.num_heads,
        intermediate_size=spec.hidden_size * 2,
        num_labels=spec.num_labels,
    )
    return ViTForImageClassification(config)


class Classifier:
    """Eval-mode wrapper; deterministic on CPU for identical input files."""

    def __init__(self, spec: ClassifierSpec):
        self.spec = spec
        self.model = build_model(spec)
        state = torch.load(spec.checkpoint, map_location="cpu", weights_only=True)
        self.model.load_state_dict(state)
        self.model.eval()

    def preprocess(self, image_path: str | Path) -> torch.Tensor:
        img = Image.open(image_path).convert("RGB")
        if img.size != (self.spec.image_size, self.spec.image_size):
            img = img.resize((self.spec.image_size, self.spec.image_size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
        arr = (arr - 0.5) / 0.5
        return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)

    @torch.no_grad()
    def logits(self, image_path: str | Path) -> np.ndarray:
        out = self.model(pixel_values=self.preprocess(image_path))
        return out.logits[0].numpy().astype(np.float64)

    @torch.no_grad()
    def attentions(self, image_path: str | Path) -> list[torch.Tensor]:
        out = self.model(pixel_values=self.preprocess(image_path), output_attentions=True)
        return list(out.attentions)

    def preprocessing_description(self) -> dict:
        s = self.spec
        return {
            "resize": [s.image_size, s.image_size],
            "interpolation": "bilinear",
            "scale": "1/255",
            "normalize": {"mean": 0.5, "std": 0.5},
        }


def train_toy_classifier(
    spec: ClassifierSpec,
    images: list[np.ndarray],
    labels: list[int],
    *,
    epochs: int = 60,
    seed: int = 0,
) -> None:
    """Fit the tiny ViT on a handful of images and save the checkpoint.

    Stands in for a properly pretrained checkpoint: this sandbox cannot
    download weights, and the contract only needs a deterministic classifier
    that actually reacts to its input.
    """
    torch.manual_seed(seed)
    model = build_model(spec)
    model.train()
    x = []
    for img in images:
        arr = img.astype(np.float32) / 255.0
        arr = (arr - 0.5) / 0.5
        x.append(torch.from_numpy(arr).permute(2, 0, 1))
    batch = torch.stack(x)
    target = torch.tensor(labels, dtype=torch.long)
    optim = torch.optim.Adam(model.parameters(), lr=5e-3)
    loss_fn = torch.nn.CrossEntropyLoss()
    for _ in range(epochs):
        optim.zero_grad()
        out = model(pixel_values=batch)
        loss = loss_fn(out.logits, target)
        loss.backward()
        optim.step()
    model.eval()
    Path(spec.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), spec.checkpoint)
