"""Staged min-max training loop.

Each step runs two passes.  First the discriminator ascends the
adversarial likelihood against reconstructions held constant.  Then a
fresh forward builds relaxed codes, reconstructions, and probabilities,
and two backward passes over that graph produce the remaining updates:
encoder and hash projection descend the pair-fit term plus the weighted
content term, the generator descends weighted content plus adversarial.
The adversarial path never feeds the encoder or projection, and each
group's gradient treats the others as constants within the step.

Epochs shuffle the items into minibatches; after every epoch the
sharpness schedule may advance on loss plateau, with a per-stage epoch
budget as a backstop.  A run emits a CSV loss log, one checkpoint per
stage, and a manifest; all of it byte-identical under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import formats
from .config import RunConfig
from .continuation import ContinuationSchedule, plateaued
from .datatypes import ImageSet, NeighborhoodMatrix, ValidationError
from .losses import (
    LossBreakdown,
    adversarial_loss,
    content_loss,
    neighborhood_loss,
    nonsaturating_generator_loss,
    total_loss,
)
from .networks import HashGanModel, build_model

LOG_COLUMNS = ("epoch", "stage", "beta", "l_n", "l_mse", "l_perceptual", "l_c", "l_a", "total")


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochRow:
    epoch: int
    stage: int
    beta: float
    losses: LossBreakdown

    def csv_values(self):
        d = self.losses.as_dict()
        return [str(self.epoch), str(self.stage), repr(float(self.beta))] + [
            repr(float(d[k])) for k in LOG_COLUMNS[3:]
        ]


@dataclass
class TrainState:
    cfg: RunConfig
    model: HashGanModel
    schedule: ContinuationSchedule
    epoch: int = 0
    stage_epochs: int = 0
    stage_history: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    velocity: dict = field(default_factory=dict)

    @property
    def surrogate_kind(self) -> str:
        return "tanh" if self.cfg.activation == "two_step" else self.cfg.activation


def init_state(cfg: RunConfig, image_shape) -> TrainState:
    model = build_model(cfg, image_shape)
    betas = (1.0,) if cfg.activation == "two_step" else cfg.beta_schedule
    schedule = ContinuationSchedule(
        betas=betas,
        plateau_window=cfg.plateau_window,
        plateau_threshold=cfg.plateau_threshold,
    )
    return TrainState(cfg=cfg, model=model, schedule=schedule)


def _grads(params: dict) -> dict:
    return {k: (None if p.grad is None else p.grad.copy()) for k, p in params.items()}


def _apply(params: dict, grads: dict, tau, vel, mu, prefix, ascent=False):
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if mu > 0:
            key = f"{prefix}/{name}"
            v = vel.get(key)
            v = g if v is None else mu * v + g
            vel[key] = v
            g = v
        p.data += (tau if ascent else -tau) * g


def discriminator_step(model, x, beta, kind, tau, vel=None, mu=0.0) -> float:
    """One ascent step on the adversarial term; touches only the discriminator.

    Reconstructions are produced outside the graph so no gradient reaches
    the encoder, projection, or generator.
    """
    with ad.no_grad():
        codes = model.encode(x, beta, kind, training=True)
        recon = model.generate(codes, training=True)
    d_real = model.discriminate(x, training=True)
    d_fake = model.discriminate(recon, training=True)
    l_a = adversarial_loss(d_real.p, d_fake.p)
    psi = model.param_groups()["psi"]
    ad.zero_grads(psi.values())
    ad.backward(l_a)
    _apply(psi, _grads(psi), tau, vel if vel is not None else {}, mu, "psi", ascent=True)
    return l_a.item()


def train_step(state: TrainState, pixels: np.ndarray, pair_values: np.ndarray):
    """Train every group on one minibatch; returns the loss breakdown."""
    cfg, model = state.cfg, state.model
    if len(pixels) < 2:
        raise ValidationError("training batch needs at least 2 items")
    beta = state.schedule.beta
    kind = state.surrogate_kind
    x = model.as_input(pixels)
    mu = cfg.sgd_momentum

    if cfg.lambda2 > 0:
        discriminator_step(model, x, beta, kind, cfg.tau, state.velocity, mu)

    groups = model.param_groups()
    all_params = [p for g in groups.values() for p in g.values()]
    ad.zero_grads(all_params)

    codes = model.encode(x, beta, kind, training=True)
    l_n = neighborhood_loss(codes, pair_values, cfg.code_bits, cfg.normalize_pair_loss)

    l_mse_v = l_perc_v = l_a_v = 0.0
    l_c = l_a = None
    if cfg.lambda1 > 0 or cfg.lambda2 > 0:
        recon = model.generate(codes, training=True)
        d_fake = model.discriminate(recon, training=True)
        d_real = model.discriminate(x, training=True)
    if cfg.lambda1 > 0:
        l_c, l_mse, l_perc = content_loss(x, recon, d_real.phi_map, d_fake.phi_map)
        l_mse_v, l_perc_v = l_mse.item(), l_perc.item()
    if cfg.lambda2 > 0:
        l_a = adversarial_loss(d_real.p, d_fake.p)
        l_a_v = l_a.item()

    # encoder and projection: pair fit plus weighted content
    loss_min = l_n if l_c is None else ad.add(l_n, ad.scale(l_c, cfg.lambda1))
    ad.clear_graph(loss_min)
    ad.backward(loss_min)
    theta_g, wh_g = _grads(groups["theta"]), _grads(groups["w_h"])

    # generator: weighted content plus its side of the adversarial term
    pi_g = None
    if cfg.lambda1 > 0 or cfg.lambda2 > 0:
        parts = []
        if cfg.lambda1 > 0:
            parts.append(ad.scale(l_c, cfg.lambda1))
        if cfg.lambda2 > 0:
            adv = nonsaturating_generator_loss(d_fake.p) if cfg.nonsaturating_generator else l_a
            parts.append(ad.scale(adv, cfg.lambda2))
        loss_pi = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
        ad.clear_graph(loss_pi)
        ad.backward(loss_pi)
        pi_g = _grads(groups["pi"])

    _apply(groups["theta"], theta_g, cfg.tau, state.velocity, mu, "theta")
    _apply(groups["w_h"], wh_g, cfg.tau, state.velocity, mu, "w_h")
    if pi_g is not None:
        _apply(groups["pi"], pi_g, cfg.tau, state.velocity, mu, "pi")

    try:
        return total_loss(l_n, l_mse_v, l_perc_v, l_a_v, cfg.lambda1, cfg.lambda2)
    except ValidationError as e:
        raise TrainingError(
            f"{e}; breakdown: l_n={l_n.item()!r} l_mse={l_mse_v!r} "
            f"l_perceptual={l_perc_v!r} l_a={l_a_v!r} epoch={state.epoch}"
        ) from e


def run_epoch(state: TrainState, images: ImageSet, s: NeighborhoodMatrix, rng):
    """Shuffle, step over minibatches, return the mean breakdown."""
    cfg = state.cfg
    perm = rng.permutation(images.n)
    sums = {"l_n": 0.0, "l_mse": 0.0, "l_perceptual": 0.0, "l_a": 0.0}
    steps = 0
    for start in range(0, images.n, cfg.batch_size):
        idx = perm[start : start + cfg.batch_size]
        if len(idx) < 2:
            continue  # a stray single item cannot form pairs
        lb = train_step(state, images.pixels[idx], s.submatrix(idx))
        for k in sums:
            sums[k] += getattr(lb, k)
        steps += 1
    if steps == 0:
        raise TrainingError("no usable minibatch in epoch")
    return total_loss(
        sums["l_n"] / steps,
        sums["l_mse"] / steps,
        sums["l_perceptual"] / steps,
        sums["l_a"] / steps,
        cfg.lambda1,
        cfg.lambda2,
    )


@dataclass
class TrainResult:
    model: HashGanModel
    rows: list
    schedule: ContinuationSchedule
    converged: bool

    def log_text(self) -> str:
        lines = [",".join(LOG_COLUMNS)]
        lines += [",".join(r.csv_values()) for r in self.rows]
        return "\n".join(lines) + "\n"


def train(cfg: RunConfig, images: ImageSet, s: NeighborhoodMatrix, out_dir=None) -> TrainResult:
    """Full run: epochs until the terminal stage flattens or budgets expire."""
    if s.n != images.n:
        raise ValidationError(f"pair matrix over {s.n} items but {images.n} images")
    if images.n < 2:
        raise ValidationError("training needs at least 2 images")
    state = init_state(cfg, images.shape)
    rng = np.random.default_rng(cfg.seed + 1)
    converged = False
    checkpoints = []

    while True:
        lb = run_epoch(state, images, s, rng)
        state.rows.append(
            EpochRow(epoch=state.epoch, stage=state.schedule.stage, beta=state.schedule.beta, losses=lb)
        )
        state.epoch += 1
        state.stage_epochs += 1
        state.stage_history.append(lb.total)

        flat = plateaued(state.stage_history, cfg.plateau_window, cfg.plateau_threshold)
        out_of_budget = state.stage_epochs >= cfg.epochs_per_stage
        if flat or out_of_budget:
            checkpoints.append((state.schedule.stage, dict(state.model.named_arrays())))
            if state.schedule.is_terminal:
                converged = flat
                break
            state.schedule = replace(state.schedule, stage=state.schedule.stage + 1)
            state.stage_epochs = 0
            state.stage_history = []

    result = TrainResult(model=state.model, rows=state.rows, schedule=state.schedule, converged=converged)
    if out_dir is not None:
        _write_artifacts(result, cfg, checkpoints, out_dir)
    return result


def _write_artifacts(result: TrainResult, cfg: RunConfig, checkpoints, out_dir):
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "training_log.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(result.log_text())
    for stage, arrays in checkpoints:
        formats.save_tensors(
            {k: np.ascontiguousarray(v) for k, v in arrays.items()},
            os.path.join(out_dir, f"checkpoint_stage{stage}.ckpt"),
        )
    formats.save_tensors(result.model.named_arrays(), os.path.join(out_dir, "model.ckpt"))
    manifest = {
        "format": "ganhash-manifest",
        "version": 1,
        "seed": cfg.seed,
        "epochs": len(result.rows),
        "converged": result.converged,
        "package_version": _package_version(),
        "config": json.loads(cfg.to_json()),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _package_version() -> str:
    from . import __version__

    return __version__
