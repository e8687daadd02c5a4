"""Focal-loss distortion, joint RD objective and the training loops.

The objective is rate + lambda * distortion.  Rate is the estimated bits
per block (averaged over the batch) of the noise-proxied latents under the
current entropy models; distortion is the focal loss summed over a block
and averaged over the batch.  Quantization is replaced by additive uniform
noise during training so the rate term stays differentiable.

Sequential training walks a strictly descending lambda schedule: the first
(high-rate) model trains on the full step budget, each later model warm
starts from its predecessor and fine-tunes on a fraction of the budget.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .entropy.models import noise_proxy, rate_bits, rate_bits_grad
from .errors import ConfigurationError, DomainError, ShapeError, TrainingError
from .model import DESK_SCALE_FILTERS, CompressionModel
from .nn.adam import adam_init, adam_step
from .nn.transforms import backward_transform, forward_transform
from .nn.weights import WeightStore

CLAMP = 1e-7       # reconstruction clamp before the log
NOISE_STREAM = 1   # rng sub-stream for per-step quantization noise
DEFAULT_FINETUNE_FRACTION = 0.125


@dataclass(frozen=True)
class FocalParams:
    """Class-balance weight alpha and hard-example exponent gamma."""

    alpha: float = 0.75
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.gamma < 0.0:
            raise ConfigurationError("gamma must be >= 0")


def focal_loss_with_grad(x: np.ndarray, x_soft: np.ndarray,
                         p: FocalParams) -> Tuple[float, np.ndarray]:
    """Focal loss over a binary occupancy block and its gradient in x_soft.

    Per voxel, with pt the predicted probability of the true class and
    at the matching balance weight, the contribution is
    -at * (1 - pt)^gamma * log(pt).  Returns (loss, d loss / d x_soft).
    """
    x = np.asarray(x, dtype=np.float64)
    x_soft = np.asarray(x_soft, dtype=np.float64)
    if x.shape != x_soft.shape:
        raise ShapeError(f"occupancy shape {x.shape} != prediction shape {x_soft.shape}")
    clipped = np.clip(x_soft, CLAMP, 1.0 - CLAMP)
    occupied = x >= 0.5
    pt = np.where(occupied, clipped, 1.0 - clipped)
    at = np.where(occupied, p.alpha, 1.0 - p.alpha)
    log_pt = np.log(pt)
    one_minus = 1.0 - pt
    if p.gamma == 0.0:
        mod = np.ones_like(pt)
        dmod = np.zeros_like(pt)
    else:
        mod = one_minus ** p.gamma
        dmod = p.gamma * one_minus ** (p.gamma - 1.0)
    loss = float(-(at * mod * log_pt).sum())
    # d/dpt of -(at * (1-pt)^g * log pt)
    dpt = at * (dmod * log_pt - mod / pt)
    dpt *= (x_soft > CLAMP) & (x_soft < 1.0 - CLAMP)  # clamp gates the gradient
    dx_soft = np.where(occupied, dpt, -dpt)
    return loss, dx_soft


def focal_loss(x: np.ndarray, x_soft: np.ndarray, p: FocalParams) -> float:
    loss, _ = focal_loss_with_grad(x, x_soft, p)
    return loss


def rd_loss(rate_bits_value: float, distortion: float, lam: float) -> float:
    """Joint objective R + lambda * D."""
    if rate_bits_value < 0 or distortion < 0:
        raise DomainError("rate and distortion must be non-negative")
    return rate_bits_value + lam * distortion


@dataclass
class TrainConfig:
    lam: float = 1.0
    model_kind: str = "baseline"
    transform_kind: str = "v1"
    focal: FocalParams = field(default_factory=FocalParams)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 100
    seed: int = 0
    filters: int = DESK_SCALE_FILTERS
    init_weights: Optional[WeightStore] = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigurationError("lambda must be positive")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")


@dataclass
class TrainLog:
    """Per-step training trace plus a post-training evaluation.

    `final_loss` evaluates the final weights with the step-0 noise draw, so
    a warm start with the same seed reproduces it exactly on its first step.
    """

    rate_bpp: List[float] = field(default_factory=list)
    focal: List[float] = field(default_factory=list)
    total: List[float] = field(default_factory=list)
    final_loss: float = float("nan")
    wall_time: float = 0.0

    def write_csv(self, target) -> None:
        close = False
        if not hasattr(target, "write"):
            target = open(target, "w", newline="")
            close = True
        try:
            writer = csv.writer(target)
            writer.writerow(["step", "rate_bpp_estimate", "focal_loss", "total_loss"])
            for i, (r, f, t) in enumerate(zip(self.rate_bpp, self.focal, self.total)):
                writer.writerow([i, f"{r:.6f}", f"{f:.6f}", f"{t:.6f}"])
        finally:
            if close:
                target.close()


def _batch_loss_and_grads(model: CompressionModel, dataset: Sequence[np.ndarray],
                          lam: float, focal: FocalParams, rng: np.random.Generator,
                          want_grads: bool = True):
    """Noise-proxied loss over the whole batch; gradients sum in block order."""
    n = len(dataset)
    params = model.parameters()
    grads = [np.zeros_like(p) for p in params] if want_grads else None
    total_rate = 0.0
    total_focal = 0.0
    total_points = 0.0

    for x in dataset:
        y, tape_a = forward_transform(model.analysis_spec, model.analysis_weights,
                                      x, want_tape=want_grads)
        y_noisy = noise_proxy(y, rng)
        if model.model_kind == "hyperprior":
            z, tape_ha = forward_transform(model.hyper_analysis_spec,
                                           model.hyper_analysis_weights, y,
                                           want_tape=want_grads)
            z_noisy = noise_proxy(z, rng)
            sigma, tape_hs = forward_transform(model.hyper_synthesis_spec,
                                               model.hyper_synthesis_weights,
                                               z_noisy, want_tape=want_grads)
            p_y, cache_g = model.gaussian.likelihood(y_noisy, sigma)
            p_z, cache_f = model.density.likelihood(z_noisy)
            block_rate = rate_bits(p_y) + rate_bits(p_z)
        else:
            p_y, cache_f = model.density.likelihood(y_noisy)
            block_rate = rate_bits(p_y)
        x_soft, tape_s = forward_transform(model.synthesis_spec,
                                           model.synthesis_weights, y_noisy,
                                           want_tape=want_grads)
        block_focal, dx_soft = focal_loss_with_grad(x, x_soft, focal)

        total_rate += block_rate
        total_focal += block_focal
        total_points += float(x.sum())

        if not want_grads:
            continue

        scale = 1.0 / n  # batch mean
        dy_s, g_s = backward_transform(tape_s, dx_soft * (lam * scale))
        if model.model_kind == "hyperprior":
            dp_y = rate_bits_grad(p_y) * scale
            dy_g, dsigma = model.gaussian.backward(cache_g, dp_y)
            dp_z = rate_bits_grad(p_z) * scale
            dz_f, g_density = model.density.backward(cache_f, dp_z)
            dz_hs, g_hs = backward_transform(tape_hs, dsigma)
            dy_ha, g_ha = backward_transform(tape_ha, dz_f + dz_hs)
            dy = dy_s + dy_g + dy_ha
        else:
            dp_y = rate_bits_grad(p_y) * scale
            dy_f, g_density = model.density.backward(cache_f, dp_y)
            dy = dy_s + dy_f
        _, g_a = backward_transform(tape_a, dy)

        offset = 0
        for g_transform in ([g_a, g_s, g_ha, g_hs] if model.model_kind == "hyperprior"
                            else [g_a, g_s]):
            for entry in g_transform:
                for dk, db in entry:
                    grads[offset] += dk
                    grads[offset + 1] += db
                    offset += 2
        for i, g in enumerate(g_density):
            grads[offset + i] += g

    rate_mean = total_rate / n
    focal_mean = total_focal / n
    loss = rate_mean + lam * focal_mean
    bpp = total_rate / max(total_points, 1.0)
    return loss, rate_mean, focal_mean, bpp, grads


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, NOISE_STREAM, step])


def _make_model(cfg: TrainConfig, block_size: int) -> CompressionModel:
    if cfg.init_weights is not None:
        model = CompressionModel.from_store(cfg.init_weights)
        if (model.model_kind != cfg.model_kind
                or model.transform_kind != cfg.transform_kind):
            raise ConfigurationError(
                "init weights were trained for a different model configuration"
            )
        return model
    return CompressionModel.create(cfg.model_kind, cfg.transform_kind,
                                   cfg.filters, block_size, cfg.seed)


def train_model(cfg: TrainConfig, dataset: Sequence[np.ndarray]) -> Tuple[WeightStore, TrainLog]:
    """Train one model; deterministic for a fixed config and dataset."""
    if not dataset:
        raise ConfigurationError("dataset is empty")
    shapes = {tuple(np.asarray(b).shape) for b in dataset}
    if len(shapes) != 1:
        raise ConfigurationError(f"dataset blocks have mixed shapes: {sorted(shapes)}")
    block_size = next(iter(shapes))[0]
    dataset = [np.asarray(b, dtype=np.float64) for b in dataset]

    model = _make_model(cfg, block_size)
    params = model.parameters()
    state = adam_init(params)
    log = TrainLog()
    start = time.perf_counter()

    for step in range(cfg.steps):
        rng = _step_rng(cfg.seed, step)
        loss, rate_mean, focal_mean, bpp, grads = _batch_loss_and_grads(
            model, dataset, cfg.lam, cfg.focal, rng)
        if not math.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}", step=step)
        log.rate_bpp.append(bpp)
        log.focal.append(focal_mean)
        log.total.append(loss)
        params, state = adam_step(params, grads, state, cfg.lr,
                                  cfg.beta1, cfg.beta2, cfg.eps)
        model.set_parameters(params)

    final_loss, _, _, _, _ = _batch_loss_and_grads(
        model, dataset, cfg.lam, cfg.focal, _step_rng(cfg.seed, 0), want_grads=False)
    log.final_loss = final_loss
    log.wall_time = time.perf_counter() - start
    return model.to_store(), log


@dataclass
class SequentialResult:
    weights: Dict[float, WeightStore]
    logs: Dict[float, TrainLog]


def sequential_train(lams: Sequence[float], base_cfg: TrainConfig,
                     dataset: Sequence[np.ndarray],
                     finetune_fraction: float = DEFAULT_FINETUNE_FRACTION) -> SequentialResult:
    """Chain-train a descending lambda schedule.

    The first model gets the full budget; each later model starts from the
    previous model's weights and trains for `finetune_fraction` of it.
    """
    lams = [float(l) for l in lams]
    if len(lams) < 2:
        raise ConfigurationError("sequential training needs at least two lambdas")
    if any(b >= a for a, b in zip(lams, lams[1:])):
        raise ConfigurationError("lambdas must be strictly descending")
    if not 0.0 < finetune_fraction <= 1.0:
        raise ConfigurationError("finetune fraction must lie in (0, 1]")

    result = SequentialResult({}, {})
    previous: Optional[WeightStore] = None
    for i, lam in enumerate(lams):
        steps = base_cfg.steps if i == 0 else max(1, round(base_cfg.steps * finetune_fraction))
        cfg = replace(base_cfg, lam=lam, steps=steps, init_weights=previous)
        weights, log = train_model(cfg, dataset)
        result.weights[lam] = weights
        result.logs[lam] = log
        previous = weights
    return result
