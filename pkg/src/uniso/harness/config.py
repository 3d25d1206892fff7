"""Run configuration, loadable from a JSON file."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


@dataclass
class RunConfig:
    variant: str = "T"
    mode: str = "improved"
    suite: str | None = None  # suite JSON; None means the built-in suite
    optimizer: str = "ea"
    budget: int = 1000
    final_count: int = 128
    epochs: int = 50
    batch_size: int = 64
    seeds: tuple[int, ...] = (0,)
    out: str = "runs"
    dataset_size: int = 2000
    lr: float = 1e-3
    regressor_epochs: int = 100
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    single_task: bool = False

    def __post_init__(self):
        self.variant = self.variant.upper()
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.variant not in ("T", "N"):
            raise ValueError(f"variant must be T or N, got {self.variant!r}")
        if self.mode not in ("vanilla", "improved"):
            raise ValueError(f"mode must be vanilla or improved, got {self.mode!r}")
        if self.optimizer not in ("ea", "cmaes", "bo"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.suite is not None and not Path(self.suite).exists():
            raise FileNotFoundError(f"suite file {self.suite} does not exist")
        if self.final_count > self.budget:
            raise ValueError("final_count cannot exceed the budget")

    @property
    def improved(self) -> bool:
        return self.mode == "improved"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        env = os.environ.get("UNISO_SEED")
        if env is not None:
            d["seeds"] = [int(env)]
        return RunConfig.from_dict(d)
