"""Deterministic toy datasets for desk-scale runs and tests.

Each class gets a smooth random prototype image (a coarse random grid
blown up to full resolution).  Items are noisy copies of their class
prototype, and the companion feature vectors are noisy copies of the
centered flattened prototype, so nearest neighbors in feature space agree
with class labels almost perfectly.  Class assignment is round-robin
(item i belongs to class i mod n_classes), which keeps any prefix split
balanced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datatypes import FeatureSet, ImageSet, LabelSet, ValidationError


@dataclass
class SyntheticDataset:
    images: ImageSet
    features: FeatureSet
    labels: LabelSet

    @property
    def n(self) -> int:
        return self.images.n

    def subset(self, idx) -> "SyntheticDataset":
        return SyntheticDataset(
            images=self.images.subset(idx),
            features=self.features.subset(idx),
            labels=self.labels.subset(idx),
        )

    def split(self, n_first: int):
        """(first n_first items, rest); round-robin classes keep both balanced."""
        if not 0 < n_first < self.n:
            raise ValidationError(f"cannot split {self.n} items at {n_first}")
        return self.subset(np.arange(n_first)), self.subset(np.arange(n_first, self.n))


def _prototype(rng, shape, coarse=4):
    """Blocky random image: coarse x coarse cells upsampled to full size."""
    c, h, w = shape
    grid = rng.uniform(0.1, 0.9, size=(c, min(coarse, h), min(coarse, w)))
    fh = -(-h // grid.shape[1])
    fw = -(-w // grid.shape[2])
    up = np.repeat(np.repeat(grid, fh, axis=1), fw, axis=2)
    return up[:, :h, :w]


def make_synthetic_dataset(
    seed: int,
    n_items: int,
    n_classes: int = 10,
    image_shape=(1, 16, 16),
    pixel_noise: float = 0.05,
    feature_noise: float = 0.1,
) -> SyntheticDataset:
    if n_items < 1:
        raise ValidationError("need at least one item")
    if not 1 <= n_classes <= n_items:
        raise ValidationError(f"cannot spread {n_items} items over {n_classes} classes")
    c, h, w = image_shape
    rng = np.random.default_rng(seed)

    protos = np.stack([_prototype(rng, image_shape) for _ in range(n_classes)])
    classes = np.arange(n_items) % n_classes

    pixels = protos[classes] + pixel_noise * rng.standard_normal((n_items, c, h, w))
    pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)

    flat = protos.reshape(n_classes, -1) - 0.5
    feats = flat[classes] + feature_noise * rng.standard_normal((n_items, flat.shape[1]))

    ids = np.arange(n_items, dtype=np.uint64)
    return SyntheticDataset(
        images=ImageSet(ids=ids, pixels=pixels),
        features=FeatureSet(ids=ids, data=feats.astype(np.float32)),
        labels=LabelSet(ids=ids, labels=tuple({int(k)} for k in classes)),
    )
