"""Relaxed binarization: scaled surrogates of the sign function plus the
staged sharpening schedule that pushes them toward it during training.

app(b*z) clips the scaled input to [-1, 1]; tanh(b*z) is the smooth
alternative.  Both equal sgn(z) in the large-b limit for z != 0.  Codes
are only thresholded to hard +-1 outside the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .datatypes import CodeSet, ValidationError, words_per_code

SURROGATES = ("app", "tanh")


def sign_binarize(z) -> np.ndarray:
    """Hard +-1 threshold; zero maps to +1."""
    z = np.asarray(getattr(z, "data", z))
    if not np.all(np.isfinite(z)):
        raise ValidationError("cannot binarize non-finite values")
    return np.where(z >= 0, 1.0, -1.0).astype(z.dtype if z.dtype.kind == "f" else np.float64)


def surrogate_activation(z: ad.Tensor, beta: float, kind: str) -> ad.Tensor:
    """Differentiable stand-in for sgn at sharpness beta."""
    if kind not in SURROGATES:
        raise ValidationError(f"surrogate kind must be one of {SURROGATES}, got '{kind}'")
    if beta < 1:
        raise ValidationError(f"beta must be >= 1, got {beta}")
    if kind == "app":
        return ad.app_act(z, beta=beta)
    return ad.tanh_act(ad.scale(z, beta))


@dataclass(frozen=True)
class ContinuationSchedule:
    """Ascending sharpness values with a plateau-driven stage pointer."""

    betas: tuple
    stage: int = 0
    plateau_window: int = 3
    plateau_threshold: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.betas:
            raise ValidationError("schedule needs at least one beta")
        if self.betas[0] != 1.0:
            raise ValidationError("schedule must start at beta = 1")
        if any(b2 <= b1 for b1, b2 in zip(self.betas, self.betas[1:])):
            raise ValidationError("betas must be strictly increasing")
        if not 0 <= self.stage < len(self.betas):
            raise ValidationError(f"stage {self.stage} outside schedule of {len(self.betas)}")
        if self.plateau_window < 1:
            raise ValidationError("plateau window must be >= 1")
        if self.plateau_threshold <= 0:
            raise ValidationError("plateau threshold must be > 0")

    @property
    def beta(self) -> float:
        return self.betas[self.stage]

    @property
    def is_terminal(self) -> bool:
        return self.stage == len(self.betas) - 1


def plateaued(loss_history, window: int, threshold: float) -> bool:
    """True when the last window's mean improves on the one before it by
    less than the relative threshold.  Needs at least two full windows."""
    history = [float(v) for v in loss_history]
    if len(history) < 2 * window:
        return False
    last = float(np.mean(history[-window:]))
    prev = float(np.mean(history[-2 * window : -window]))
    improvement = (prev - last) / max(abs(prev), 1e-12)
    return improvement < threshold


def advance_stage(schedule: ContinuationSchedule, loss_history) -> ContinuationSchedule:
    """Move to the next beta once the loss trace flattens out.

    loss_history holds the per-epoch totals of the current stage; the
    terminal stage never advances.
    """
    if not list(loss_history):
        raise ValidationError("empty loss history")
    if schedule.is_terminal:
        return schedule
    if plateaued(loss_history, schedule.plateau_window, schedule.plateau_threshold):
        return replace(schedule, stage=schedule.stage + 1)
    return schedule


def pack_codes(ids: np.ndarray, bits: np.ndarray, n_bits=None) -> CodeSet:
    """Dense +-1 matrix to packed words, code bit k at bit k of word k//64."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValidationError(f"code matrix must be 2-d, got shape {bits.shape}")
    if not np.all(np.isin(bits, (-1, 1))):
        raise ValidationError("code matrix entries must be exactly +-1")
    n, length = bits.shape
    if n_bits is None:
        n_bits = length
    if n_bits != length:
        raise ValidationError(f"code matrix has {length} columns, expected {n_bits}")
    words = np.zeros((n, words_per_code(length)), dtype=np.uint64)
    on = bits > 0
    for k in range(length):
        col = on[:, k].astype(np.uint64) << np.uint64(k % 64)
        words[:, k // 64] |= col
    return CodeSet(ids=np.asarray(ids, dtype=np.uint64), words=words, n_bits=length)


def unpack_codes(cs: CodeSet) -> np.ndarray:
    """Packed words back to a dense +-1 float matrix."""
    out = np.empty((cs.n, cs.n_bits), dtype=np.float64)
    for k in range(cs.n_bits):
        bit = (cs.words[:, k // 64] >> np.uint64(k % 64)) & np.uint64(1)
        out[:, k] = np.where(bit == 1, 1.0, -1.0)
    return out
