"""Loss terms: code-similarity fit, reconstruction content, adversarial.

The similarity term pushes scaled code inner products toward the frozen
+-1 pair matrix over all unordered in-batch pairs.  Content is pixel MSE
plus the same squared distance on discriminator feature maps.  The
adversarial term is the usual log-likelihood the discriminator ascends;
it is negative under clamping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datatypes import ValidationError

PROB_EPS = 1e-7


def neighborhood_loss(codes: ad.Tensor, pair_values: np.ndarray, n_bits: int, normalize=True):
    """Half squared error between (1/L) b_i.b_j and s_ij over in-batch pairs.

    pair_values is the +-1 matrix for the batch items; only the strict
    upper triangle is counted (unordered pairs, no self terms).  With
    normalize the sum is divided by the pair count.
    """
    if codes.ndim != 2:
        raise ValidationError(f"codes must be 2-d, got shape {codes.shape}")
    b = codes.shape[0]
    if b < 2:
        raise ValidationError("pair loss needs a batch of at least 2")
    pair_values = np.asarray(pair_values)
    if pair_values.shape != (b, b):
        raise ValidationError(f"pair matrix shaped {pair_values.shape} for batch of {b}")
    if not np.all(np.isin(pair_values, (-1, 1))):
        raise ValidationError("pair matrix entries must be +-1")
    if n_bits != codes.shape[1]:
        raise ValidationError(f"codes have {codes.shape[1]} bits, expected {n_bits}")

    gram = ad.scale(ad.matmul(codes, ad.transpose(codes)), 1.0 / n_bits)
    diff = ad.sub(gram, ad.Tensor(pair_values.astype(codes.dtype)))
    mask = np.triu(np.ones((b, b), dtype=codes.dtype), k=1)
    off = ad.mul(ad.square(diff), ad.Tensor(mask))
    loss = ad.scale(ad.ssum(off), 0.5)
    if normalize:
        loss = ad.scale(loss, 2.0 / (b * (b - 1)))
    return loss


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValidationError(f"{what} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_loss(images: ad.Tensor, recon: ad.Tensor):
    """Mean squared pixel error (normalized per pixel, channel, item)."""
    _same_shape(images, recon, "image")
    return ad.mean(ad.square(ad.sub(images, recon)))


def perceptual_loss(phi_images: ad.Tensor, phi_recon: ad.Tensor):
    """Mean squared distance between discriminator feature maps."""
    _same_shape(phi_images, phi_recon, "feature map")
    return ad.mean(ad.square(ad.sub(phi_images, phi_recon)))


def content_loss(images, recon, phi_images, phi_recon):
    m = mse_loss(images, recon)
    p = perceptual_loss(phi_images, phi_recon)
    return ad.add(m, p), m, p


def adversarial_loss(p_real: ad.Tensor, p_fake: ad.Tensor):
    """Mean log p(real) plus mean log (1 - p(fake)); clamped away from 0 and 1.

    The discriminator ascends this; generator-side updates descend it (or
    the non-saturating variant below).
    """
    real = ad.log(ad.clamp(p_real, PROB_EPS, 1.0 - PROB_EPS))
    fake = ad.log(ad.clamp(ad.sub(1.0, p_fake), PROB_EPS, 1.0 - PROB_EPS))
    return ad.add(ad.mean(real), ad.mean(fake))


def nonsaturating_generator_loss(p_fake: ad.Tensor):
    """-mean log p(fake): optional alternative gradient for the generator."""
    return ad.scale(ad.mean(ad.log(ad.clamp(p_fake, PROB_EPS, 1.0 - PROB_EPS))), -1.0)


@dataclass(frozen=True)
class LossBreakdown:
    l_n: float
    l_mse: float
    l_perceptual: float
    l_c: float
    l_a: float
    total: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        for name in ("l_n", "l_mse", "l_perceptual", "l_c", "l_a", "total"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"non-finite loss component {name}")
        if not np.isclose(self.l_c, self.l_mse + self.l_perceptual, rtol=1e-9, atol=1e-12):
            raise ValidationError("content total does not match its parts")
        want = self.l_n + self.lambda1 * self.l_c + self.lambda2 * self.l_a
        if not np.isclose(self.total, want, rtol=1e-9, atol=1e-12):
            raise ValidationError("weighted total does not match its parts")

    def as_dict(self) -> dict:
        return {
            "l_n": self.l_n,
            "l_mse": self.l_mse,
            "l_perceptual": self.l_perceptual,
            "l_c": self.l_c,
            "l_a": self.l_a,
            "total": self.total,
        }


def total_loss(l_n, l_mse, l_perceptual, l_a, lambda1, lambda2) -> LossBreakdown:
    """Assemble the weighted breakdown from component values."""

    def val(x, name):
        v = x.item() if isinstance(x, ad.Tensor) else float(x)
        if not np.isfinite(v):
            raise ValidationError(f"non-finite loss component {name}")
        return v

    l_n = val(l_n, "l_n")
    l_mse = val(l_mse, "l_mse")
    l_perceptual = val(l_perceptual, "l_perceptual")
    l_a = val(l_a, "l_a")
    l_c = l_mse + l_perceptual
    return LossBreakdown(
        l_n=l_n,
        l_mse=l_mse,
        l_perceptual=l_perceptual,
        l_c=l_c,
        l_a=l_a,
        total=l_n + lambda1 * l_c + lambda2 * l_a,
        lambda1=lambda1,
        lambda2=lambda2,
    )
