"""Run configuration shared by the CLI and the report builders."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .attention import ExpMode
from .head import check_steps

PRESETS = {
    # 198 tokens = 196 patches + class + distillation token
    "deit-s": dict(n_tokens=198, d_in=384, d_head=64, heads=6),
}


@dataclass(frozen=True)
class RunConfig:
    n_tokens: int = 8
    d_in: int = 16
    d_head: int = 8
    heads: int = 1
    nbit: int = 3
    seed: int = 0
    exp_mode: ExpMode = ExpMode.SHIFT
    preset: str | None = None
    scales: dict | None = None

    def __post_init__(self):
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
            for key, value in PRESETS[self.preset].items():
                object.__setattr__(self, key, value)
        object.__setattr__(self, "exp_mode", ExpMode(self.exp_mode))
        if self.scales is not None:
            object.__setattr__(self, "scales", check_steps(self.scales))
        for name in ("n_tokens", "d_in", "d_head", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 2 <= self.nbit <= 8:
            raise ValueError("nbit must be in 2..8")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exp_mode"] = self.exp_mode.value
        if self.scales is not None:
            d["scales"] = {k: np.asarray(v).tolist() for k, v in self.scales.items()}
        return d
