"""Position encoder, prior-aware attentional layers and final projection.

All functions take parameters as a mapping from name to :class:`Tensor` so
that the same code serves plain inference and taped training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from kpmatch import autodiff as ad
from kpmatch.autodiff import Tensor
from kpmatch.errors import NonPositiveSigma, ShapeMismatch
from kpmatch.features import FeatureSet
from kpmatch.imu_prior import PriorMatrix

VARIANTS = ("vanilla", "direct", "probabilistic")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 256
    layers: int = 2
    variant: str = "probabilistic"
    sigma_init: float = 0.1
    encoder_hidden: tuple[int, ...] = (32, 64)
    use_encoder: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attention variant {self.variant!r}")
        if self.layers < 1:
            raise ValueError("at least one attentional layer is required")
        if self.dim < 1:
            raise ValueError("descriptor dimension must be positive")
        if not self.sigma_init > 0:
            raise NonPositiveSigma("sigma_init must be positive")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = config.dim
    shapes: dict[str, tuple[int, ...]] = {}
    widths = (2, *config.encoder_hidden, d)
    for i in range(len(widths) - 1):
        shapes[f"encoder.{i}.weight"] = (widths[i + 1], widths[i])
        shapes[f"encoder.{i}.bias"] = (widths[i + 1],)
    for layer in range(config.layers):
        for mode in ("self", "cross"):
            pre = f"layers.{layer}.{mode}"
            for role in ("q", "k", "v"):
                shapes[f"{pre}.{role}.weight"] = (d, d)
                shapes[f"{pre}.{role}.bias"] = (d,)
            shapes[f"{pre}.merge.0.weight"] = (2 * d, 2 * d)
            shapes[f"{pre}.merge.0.bias"] = (2 * d,)
            shapes[f"{pre}.merge.1.weight"] = (d, 2 * d)
            shapes[f"{pre}.merge.1.bias"] = (d,)
        shapes[f"layers.{layer}.log_sigma"] = ()
    shapes["final.weight"] = (d, d)
    shapes["final.bias"] = (d,)
    shapes["dustbin"] = ()
    return shapes


@dataclass
class ModelParams:
    """Every learnable array of a model, keyed by a stable dotted name."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> ModelParams:
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in parameter_shapes(config).items():
            if name == "dustbin":
                tensors[name] = np.array(1.0)
            elif name.endswith("log_sigma"):
                tensors[name] = np.array(np.log(config.sigma_init))
            elif name.endswith("bias"):
                tensors[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(shape[1])
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, tensors)

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def validate(self) -> None:
        expected = parameter_shapes(self.config)
        if set(expected) != set(self.tensors):
            raise ShapeMismatch("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {self.tensors[name].shape}")

    def as_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.tensors.items()}

    def with_config(self, **changes) -> ModelParams:
        return ModelParams(replace(self.config, **changes), self.tensors)


def linear(x, p: Mapping[str, Tensor], prefix: str):
    return x @ p[prefix + ".weight"].T + p[prefix + ".bias"]


def mlp(x, p: Mapping[str, Tensor], prefix: str, n_layers: int):
    for i in range(n_layers):
        x = linear(x, p, f"{prefix}.{i}")
        if i < n_layers - 1:
            x = ad.relu(x)
    return x


def encode_positions(p: Mapping[str, Tensor], config: ModelConfig, feats: FeatureSet):
    """Add the MLP embedding of normalized keypoint positions to the descriptors."""
    if feats.dim != config.dim:
        raise ShapeMismatch(f"descriptor dim {feats.dim} does not match model dim {config.dim}")
    desc = Tensor(feats.descriptors)
    if not config.use_encoder:
        return desc
    return desc + mlp(Tensor(feats.positions), p, "encoder", len(config.encoder_hidden) + 1)


def attention_weights(variant: str, q, k, prior: PriorMatrix | None = None, sigma=None):
    """Row-stochastic attention of queries over keys.

    ``vanilla`` ignores the prior; ``direct`` scales the logits by
    ``1 + s``; ``probabilistic`` adds the log prior ``-d^2 / sigma``.  The
    additive offset is shifted so that each row's maximum is zero, which
    leaves the softmax unchanged and makes a uniform prior a no-op.
    """
    logits = ad.as_tensor(q) @ ad.as_tensor(k).T
    if variant == "vanilla":
        return ad.softmax(logits, axis=-1)
    if prior is None:
        raise ShapeMismatch(f"{variant} attention needs a prior")
    if prior.shape != logits.shape:
        raise ShapeMismatch(f"prior shape {prior.shape} does not match attention shape {logits.shape}")
    if variant == "direct":
        return ad.softmax(Tensor(1.0 + prior.s) * logits, axis=-1)
    if variant == "probabilistic":
        if sigma is None:
            sigma = prior.sigma
        if not np.all(ad.value(sigma) > 0):
            raise NonPositiveSigma("attention sigma must be positive")
        shifted = prior.sqdist - prior.sqdist.min(axis=1, keepdims=True)
        offset = -(Tensor(shifted) / sigma)
        return ad.softmax(logits + offset, axis=-1)
    raise ValueError(f"unknown attention variant {variant!r}")


def message_pass(alpha, v):
    a, vv = ad.value(alpha), ad.value(v)
    if a.ndim != 2 or vv.ndim != 2 or a.shape[1] != vv.shape[0]:
        raise ShapeMismatch(f"cannot propagate {vv.shape} values with {a.shape} attention")
    return ad.as_tensor(alpha) @ ad.as_tensor(v)


def layer_forward(p, config: ModelConfig, layer: int, mode: str, x_src, x_ctx, prior: PriorMatrix | None):
    pre = f"layers.{layer}.{mode}"
    q = linear(x_src, p, pre + ".q")
    k = linear(x_ctx, p, pre + ".k")
    v = linear(x_ctx, p, pre + ".v")
    sigma = ad.exp(p[f"layers.{layer}.log_sigma"]) if config.variant == "probabilistic" else None
    alpha = attention_weights(config.variant, q, k, prior if config.variant != "vanilla" else None, sigma)
    msg = message_pass(alpha, v)
    return x_src + mlp(ad.concat([x_src, msg], axis=1), p, pre + ".merge", 2)


def forward(p, config: ModelConfig, feats_A: FeatureSet, feats_B: FeatureSet, priors: Mapping[str, PriorMatrix] | None):
    """Encoder, ``config.layers`` self/cross iterations, final projection."""
    priors = priors or {}
    x_a = encode_positions(p, config, feats_A)
    x_b = encode_positions(p, config, feats_B)
    for layer in range(config.layers):
        x_a, x_b = (
            layer_forward(p, config, layer, "self", x_a, x_a, priors.get("self_a")),
            layer_forward(p, config, layer, "self", x_b, x_b, priors.get("self_b")),
        )
        x_a, x_b = (
            layer_forward(p, config, layer, "cross", x_a, x_b, priors.get("cross_ab")),
            layer_forward(p, config, layer, "cross", x_b, x_a, priors.get("cross_ba")),
        )
    return linear(x_a, p, "final"), linear(x_b, p, "final")


def swap_priors(priors: Mapping[str, PriorMatrix]) -> dict[str, PriorMatrix]:
    """Relabel priors for the pair taken in the opposite order."""
    pairs = {"self_a": "self_b", "self_b": "self_a", "cross_ab": "cross_ba", "cross_ba": "cross_ab"}
    return {pairs[k]: v for k, v in priors.items()}
