"""Central finite-difference check of the taped gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kpmatch.attention_gnn import VARIANTS, ModelParams
from kpmatch.config import LOSS_KINDS, RunConfig
from kpmatch.train import SynthSettings, batch_loss, loss_and_gradients, synth_dataset

# Tensors whose true gradient vanishes (e.g. key biases, which only shift
# each softmax row by a constant) are compared against this absolute scale
# instead of their own near-zero norm.
GRAD_FLOOR = 1e-4


@dataclass
class TensorCheck:
    name: str
    rel_error: float
    n_probes: int


@dataclass
class GradCheckReport:
    variant: str
    loss: str
    value: float
    tensors: list[TensorCheck]

    @property
    def worst(self) -> TensorCheck:
        return max(self.tensors, key=lambda t: t.rel_error)

    def passed(self, tol: float = 1e-4) -> bool:
        return all(t.rel_error < tol for t in self.tensors)


def relative_error(fd, an, floor: float = GRAD_FLOOR) -> float:
    fd, an = np.asarray(fd, dtype=np.float64), np.asarray(an, dtype=np.float64)
    den = max(np.linalg.norm(fd), np.linalg.norm(an), floor)
    return float(np.linalg.norm(fd - an) / den)


def randomize(params: ModelParams, seed: int, scale: float = 0.1) -> ModelParams:
    """Add noise to every array so no gradient is trivially zero by symmetry of the init."""
    rng = np.random.default_rng(seed)
    out = params.copy()
    for name, v in out.tensors.items():
        out.tensors[name] = v + scale * rng.normal(size=v.shape)
    return out


def check_gradients(
    params: ModelParams,
    batch,
    config: RunConfig,
    step: float = 1e-5,
    coords_per_tensor: int | None = 6,
    directions: int = 2,
    seed: int = 0,
) -> list[TensorCheck]:
    """Compare analytic gradients with central differences, tensor by tensor.

    Each tensor is probed along ``coords_per_tensor`` random coordinates
    (all of them when ``None``) plus ``directions`` random unit directions;
    the directional probes cover every entry at once.
    """
    _, grads = loss_and_gradients(params, batch, config)
    rng = np.random.default_rng(seed)
    results = []
    for name, value in params.tensors.items():
        size = value.size
        probes = []
        if coords_per_tensor is None or coords_per_tensor >= size:
            idx = np.arange(size)
        else:
            idx = rng.choice(size, coords_per_tensor, replace=False)
        for i in idx:
            e = np.zeros(size)
            e[i] = 1.0
            probes.append(e)
        for _ in range(directions if size > 1 else 0):
            u = rng.normal(size=size)
            probes.append(u / np.linalg.norm(u))
        fd, an = [], []
        for u in probes:
            u = u.reshape(value.shape)
            shifted = params.copy()
            shifted.tensors[name] = value + step * u
            plus = batch_loss(shifted, batch, config)
            shifted.tensors[name] = value - step * u
            minus = batch_loss(shifted, batch, config)
            fd.append((plus - minus) / (2 * step))
            an.append(float(np.sum(grads[name] * u)))
        results.append(TensorCheck(name, relative_error(fd, an), len(probes)))
    return results


def gradient_suite(
    dim: int = 8,
    n_points: int = 6,
    layers: int = 1,
    seed: int = 0,
    coords_per_tensor: int | None = 6,
    variants=VARIANTS,
    losses=LOSS_KINDS,
) -> list[GradCheckReport]:
    """Run :func:`check_gradients` for every attention variant and loss kind."""
    reports = []
    settings = SynthSettings(n_points=n_points, descriptor_noise=0.5, outlier_fraction=0.3, keypoint_noise_px=2.0)
    for variant in variants:
        for loss in losses:
            config = RunConfig(variant=variant, loss=loss, dim=dim, layers=layers, seed=seed)
            batch = synth_dataset(config, 1, seed + 3, settings)
            params = randomize(ModelParams.init(config.model_config(), seed), seed + 1)
            value = batch_loss(params, batch, config)
            checks = check_gradients(params, batch, config, coords_per_tensor=coords_per_tensor, seed=seed)
            reports.append(GradCheckReport(variant, loss, value, checks))
    return reports
