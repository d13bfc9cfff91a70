"""Run configuration: flat dotted ``key=value`` files with command-line overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from kpmatch.attention_gnn import VARIANTS, ModelConfig
from kpmatch.errors import ParseError, UsageError

LOSS_KINDS = ("matching", "projection")

# dotted file key -> RunConfig attribute
KEYS = {
    "model.variant": "variant",
    "model.layers": "layers",
    "model.dim": "dim",
    "model.sigma_init": "sigma_init",
    "model.position_encoder": "use_encoder",
    "prior.sigma": "prior_sigma",
    "loss.kind": "loss",
    "loss.th": "th",
    "loss.mg": "mg",
    "sinkhorn.iterations": "sinkhorn_iterations",
    "sinkhorn.temperature": "temperature",
    "sinkhorn.relaxation": "relaxation",
    "match.threshold": "match_threshold",
    "seed": "seed",
    "optim.lr": "lr",
    "optim.beta1": "beta1",
    "optim.beta2": "beta2",
    "optim.eps": "eps",
    "train.epochs": "epochs",
    "train.patience": "patience",
    "train.batch_size": "batch_size",
    "train.val_fraction": "val_fraction",
}


@dataclass(frozen=True)
class RunConfig:
    variant: str = "probabilistic"
    layers: int = 2
    dim: int = 256
    sigma_init: float = 0.1
    use_encoder: bool = True
    prior_sigma: float = 0.1
    loss: str = "projection"
    th: float = 3.0
    mg: float = 10.0
    sinkhorn_iterations: int = 100
    temperature: float = 1.0
    relaxation: float = 1.7
    match_threshold: float = 0.2
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 300
    patience: int = 20
    batch_size: int = 8
    val_fraction: float = 0.2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise UsageError(f"model.variant must be one of {VARIANTS}")
        if self.loss not in LOSS_KINDS:
            raise UsageError(f"loss.kind must be one of {LOSS_KINDS}")
        if self.layers < 1:
            raise UsageError("model.layers must be >= 1")
        if self.dim < 1:
            raise UsageError("model.dim must be >= 1")
        if not (self.sigma_init > 0 and self.prior_sigma > 0):
            raise UsageError("sigma values must be positive")
        if not self.mg > self.th > 0:
            raise UsageError("need loss.mg > loss.th > 0")
        if not 0 <= self.match_threshold < 1:
            raise UsageError("match.threshold must lie in [0, 1)")
        if self.sinkhorn_iterations < 1 or not self.temperature > 0:
            raise UsageError("sinkhorn.iterations must be >= 1 and sinkhorn.temperature > 0")
        if not 0 < self.relaxation < 2:
            raise UsageError("sinkhorn.relaxation must lie in (0, 2)")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 0:
            raise UsageError("invalid training schedule")
        if not 0 < self.val_fraction < 1:
            raise UsageError("train.val_fraction must lie in (0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            dim=self.dim,
            layers=self.layers,
            variant=self.variant,
            sigma_init=self.sigma_init,
            use_encoder=self.use_encoder,
        )

    def with_overrides(self, items: dict[str, str]) -> RunConfig:
        return replace(self, **_coerce(items))

    def to_text(self) -> str:
        inverse = {v: k for k, v in KEYS.items()}
        return "".join(f"{inverse[k]}={_fmt(v)}\n" for k, v in asdict(self).items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(items: dict[str, str]) -> dict:
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for key, raw in items.items():
        attr = KEYS.get(key, key if key in types else None)
        if attr is None:
            raise UsageError(f"unknown configuration key {key!r}")
        kind = types[attr]
        try:
            if kind == "bool":
                low = str(raw).strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                out[attr] = low in ("true", "1", "yes")
            elif kind == "int":
                out[attr] = int(raw)
            elif kind == "float":
                out[attr] = float(raw)
            else:
                out[attr] = str(raw).strip()
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {raw!r}") from exc
    return out


def parse_pairs(lines, source: str = "<config>") -> dict[str, str]:
    items = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        items[key.strip()] = val.strip()
    return items


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    items = {}
    if path is not None:
        items.update(parse_pairs(Path(path).read_text().splitlines(), str(path)))
    items.update(overrides or {})
    return RunConfig().with_overrides(items)
