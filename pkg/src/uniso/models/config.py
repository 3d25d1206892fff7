from __future__ import annotations

from dataclasses import asdict, dataclass

from ..textcodec import Vocabulary


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of one regressor.  Defaults are the desk-scale model."""

    variant: str = "T"
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    head_dim: int = 16
    d_ff: int = 128
    vocab: int = Vocabulary().size
    max_len: int = 512
    regressor_hidden: int = 256
    regressor_layers: int = 2
    proj_hidden: int = 128
    proj_dim: int = 128
    d_meta: int = 64
    mantissa_len: int = 3
    e_max: int = 16

    def __post_init__(self):
        if self.variant not in ("T", "N"):
            raise ValueError(f"variant must be 'T' or 'N', got {self.variant!r}")
        if self.d_model != self.n_heads * self.head_dim:
            raise ValueError("d_model must equal n_heads * head_dim")
        if self.regressor_layers < 1:
            raise ValueError("regressor needs at least one hidden layer")

    @property
    def target_len(self) -> int:
        return self.mantissa_len + 2

    @classmethod
    def full_scale(cls, variant: str = "T") -> "ModelConfig":
        """Six layers, 12 heads of width 32, MLP 512, regressor 2 x 2048."""
        return cls(
            variant=variant,
            n_layers=6,
            d_model=384,
            n_heads=12,
            head_dim=32,
            d_ff=512,
            regressor_hidden=2048,
            regressor_layers=2,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)
