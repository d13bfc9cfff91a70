"""Gradients, Adam and the early-stopped training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from kpmatch.attention_gnn import ModelParams
from kpmatch.autodiff import Tape
from kpmatch.config import RunConfig
from kpmatch.errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from kpmatch.metrics import mean_scores, score_matches
from kpmatch.pipeline import PairSample, make_sample, match_pair, sample_loss
from kpmatch.synth import synth_scene

log = logging.getLogger(__name__)


def loss_and_gradients(params: ModelParams, batch: Sequence[PairSample], config: RunConfig):
    """Mean loss over ``batch`` and its gradient for every parameter array."""
    if not batch:
        raise EmptyDataset("empty batch")
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    total = 0.0
    for sample in batch:
        p = params.as_tensors(requires_grad=True)
        with Tape() as tape:
            loss = sample_loss(p, config, sample)
        if not np.isfinite(loss.data):
            raise NonFiniteLoss(f"loss is {loss.data} on pair {sample.pair_id}")
        tape.backward(loss)
        total += loss.item()
        for name, t in p.items():
            if t.grad is not None:
                grads[name] += t.grad
    n = len(batch)
    return total / n, {k: g / n for k, g in grads.items()}


def batch_loss(params: ModelParams, batch: Sequence[PairSample], config: RunConfig) -> float:
    p = params.as_tensors()
    return float(np.mean([sample_loss(p, config, s).item() for s in batch]))


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: ModelParams, grads: dict, state: AdamState) -> ModelParams:
    """One bias-corrected Adam update; returns new parameters and advances ``state``."""
    if set(grads) != set(params.tensors):
        raise ShapeMismatch("gradient names do not match parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for name, value in params.tensors.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != parameter shape {value.shape}")
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return ModelParams(params.config, out)


def evaluate(params: ModelParams, config: RunConfig, samples: Sequence[PairSample]) -> dict[str, float]:
    reports = [score_matches(match_pair(params, config, s).matches, s.gt) for s in samples]
    return mean_scores(reports)


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    best_epoch: int

    def log_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.history)


def split_dataset(samples: Sequence[PairSample], val_fraction: float, seed: int):
    order = np.random.default_rng(seed).permutation(len(samples))
    n_val = max(1, int(round(val_fraction * len(samples)))) if len(samples) > 1 else 0
    val = [samples[i] for i in order[:n_val]]
    train = [samples[i] for i in order[n_val:]]
    return train, val or train


def train(
    config: RunConfig,
    dataset: Sequence[PairSample],
    seed: int | None = None,
    init: ModelParams | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam with early stopping on validation loss.

    The dataset is split into train/validation from ``seed``; the returned
    parameters are those of the epoch with the lowest validation loss.
    Training stops once ``config.patience`` epochs pass without improvement.
    """
    if not dataset:
        raise EmptyDataset("no training pairs")
    seed = config.seed if seed is None else seed
    train_set, val_set = split_dataset(list(dataset), config.val_fraction, seed)
    params = init.copy() if init is not None else ModelParams.init(config.model_config(), seed)
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(seed + 1)

    best, best_loss, best_epoch, stale = params, np.inf, 0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            loss, grads = loss_and_gradients(params, batch, config)
            params = optimizer_step(params, grads, state)
            losses.append(loss)
        val_loss = batch_loss(params, val_set, config)
        scores = evaluate(params, config, val_set)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "val_f1": scores["f1"],
        }
        history.append(record)
        log.info("epoch %d train %.4f val %.4f f1 %.4f", epoch, record["train_loss"], val_loss, scores["f1"])
        if on_epoch is not None:
            on_epoch(record)
        if val_loss < best_loss:
            best, best_loss, best_epoch, stale = params, val_loss, epoch, 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return TrainResult(best, history, best_epoch)


@dataclass(frozen=True)
class SynthSettings:
    n_points: int = 64
    descriptor_noise: float = 0.0
    outlier_fraction: float = 0.0
    pose_magnitude: float = 1.0
    prior_rotation_deg: float = 2.0
    prior_translation_m: float = 0.03
    keypoint_noise_px: float = 0.0


def synth_dataset(config: RunConfig, n_pairs: int, seed: int, settings: SynthSettings = SynthSettings()):
    """Synthetic pose-prior pairs ready for training or evaluation."""
    samples = []
    for k in range(n_pairs):
        sp = synth_scene(
            seed * 100_003 + k,
            n_points=settings.n_points,
            descriptor_dim=config.dim,
            descriptor_noise=settings.descriptor_noise,
            outlier_fraction=settings.outlier_fraction,
            pose_magnitude=settings.pose_magnitude,
            prior_rotation_deg=settings.prior_rotation_deg,
            prior_translation_m=settings.prior_translation_m,
            keypoint_noise_px=settings.keypoint_noise_px,
        )
        samples.append(
            make_sample(f"synth-{seed}-{k}", sp.feats_a, sp.feats_b, sp.camera, sp.camera, config,
                        T_prior=sp.T_prior, T_gt=sp.T_ab)
        )
    return samples
