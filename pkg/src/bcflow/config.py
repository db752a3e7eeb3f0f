"""Run configuration: flat ``key = value`` files with documented defaults.

Lines starting with ``#`` are comments. Unknown keys are rejected. The loss
weight defaults are the published training values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .decompose import DecompositionConfig
from .objective import LossWeights
from .photometric import SigmoidParams
from .variational import HornSchunckConfig


@dataclass
class RunConfig:
    search_radius: int = 8
    bc_epsilon: float = 2.0 / 255.0
    subpixel_refine: bool = True
    alpha_min: float = 1e-3
    sigmoid_center: float = 0.5
    sigmoid_k: float = 20.0
    lambda_total: float = 1.0
    lambda_p: float = 0.1
    lambda_a: float = 0.01
    lambda_photo: float = 0.01
    lambda_w: float = 0.1
    lambda_alpha: float = 1.0
    hs_smoothness: float = 0.1
    hs_iterations: int = 200
    hs_pyramid_levels: int = 2
    hs_pyramid_scale: float = 0.5
    hs_warp_updates: int = 2
    refine_steps: int = 100
    refine_step_size: float = 0.1
    mask_eps: float = 0.01
    seed: int = 0
    threads: int = 1

    def update(self, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, raw, getattr(self, key)))
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls().update(parse_config(Path(path).read_text()))

    def validate(self) -> None:
        self.decomposition()
        self.loss_weights()
        self.hs_config()
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.refine_steps < 0 or not self.refine_step_size > 0:
            raise ValueError("refine_steps must be >= 0 and refine_step_size > 0")

    def sigmoid(self) -> SigmoidParams:
        return SigmoidParams(self.sigmoid_center, self.sigmoid_k)

    def decomposition(self) -> DecompositionConfig:
        return DecompositionConfig(self.search_radius, self.bc_epsilon, self.subpixel_refine,
                                   self.sigmoid(), self.alpha_min)

    def loss_weights(self) -> LossWeights:
        return LossWeights(total=self.lambda_total, p=self.lambda_p, a=self.lambda_a,
                           photo=self.lambda_photo, w=self.lambda_w, alpha=self.lambda_alpha)

    def hs_config(self, confidence=None) -> HornSchunckConfig:
        return HornSchunckConfig(self.hs_smoothness, self.hs_iterations, self.hs_pyramid_levels,
                                 self.hs_pyramid_scale, self.hs_warp_updates, confidence)

    def to_text(self) -> str:
        return "\n".join(f"{f.name} = {getattr(self, f.name)!r}" for f in fields(self)) + "\n"


def parse_config(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(key, raw, current):
    if not isinstance(raw, str):
        return type(current)(raw)
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from None
