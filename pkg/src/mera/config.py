"""Run configuration: model dims, expert/modality lists, optimizer settings.

Dims are configuration, not constants: 1280/768 are the production-scale
defaults, tests run at 8-64. The seed is required; every random draw in
the package flows from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .rmf import MODALITIES

__all__ = ["MeraConfig", "DEFAULT_EXPERTS"]

DEFAULT_EXPERTS = ("seq", "chain", "act")


@dataclass(frozen=True)
class MeraConfig:
    seed: int
    emb_dim: int | None = None  # residue embedding width D; None = infer from data
    text_dim: int | None = None  # text token width; None = infer from data
    attn_dim: int = 64
    gate_hidden: int | None = None  # None = experts * emb_dim // 2
    head_hidden: int | None = None  # None = max(4, emb_dim // 2)
    experts: tuple[str, ...] = DEFAULT_EXPERTS
    modalities: tuple[str, ...] = MODALITIES
    gate_mode: str = "dimension"  # "dimension" or "scalar"
    k_neighbors: int = 3
    intra_temperature: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 100
    reliability_weight: float = 1.0
    reliability_mode: str = "mean"  # "mean" or "sum" over residues
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hits_mode: str = "any"  # "any" or "recall"
    fmax_mode: str = "micro"  # "micro" or "macro"

    def __post_init__(self):
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        object.__setattr__(self, "experts", tuple(self.experts))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if not self.modalities:
            raise ConfigError("at least one modality must be active")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ConfigError(f"unknown modalities {sorted(unknown)}; valid: {MODALITIES}")
        if len(set(self.modalities)) != len(self.modalities):
            raise ConfigError("duplicate modality names")
        if "rag" in self.modalities:
            if not self.experts:
                raise ConfigError("the rag modality needs at least one expert")
            if len(set(self.experts)) != len(self.experts):
                raise ConfigError("duplicate expert names")
        if self.gate_mode not in ("dimension", "scalar"):
            raise ConfigError(f"gate_mode must be 'dimension' or 'scalar', got {self.gate_mode!r}")
        if self.reliability_mode not in ("mean", "sum"):
            raise ConfigError(f"reliability_mode must be 'mean' or 'sum', got {self.reliability_mode!r}")
        if self.hits_mode not in ("any", "recall"):
            raise ConfigError(f"hits_mode must be 'any' or 'recall', got {self.hits_mode!r}")
        if self.fmax_mode not in ("micro", "macro"):
            raise ConfigError(f"fmax_mode must be 'micro' or 'macro', got {self.fmax_mode!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not self.intra_temperature > 0:
            raise ConfigError(f"intra_temperature must be positive, got {self.intra_temperature}")
        if not self.reliability_weight >= 0:
            raise ConfigError(f"reliability_weight must be >= 0, got {self.reliability_weight}")

    # -- resolution of data-dependent defaults ------------------------------

    def resolved(self, emb_dim: int | None = None, text_dim: int | None = None) -> "MeraConfig":
        """Fill in dims (from data when unset) and derived hidden widths."""
        d = self.emb_dim if self.emb_dim is not None else emb_dim
        if d is None:
            raise ConfigError("embedding dimension is unset and cannot be inferred")
        t = self.text_dim if self.text_dim is not None else text_dim
        if "text" in self.modalities and t is None:
            raise ConfigError("text dimension is unset and cannot be inferred")
        gate_hidden = self.gate_hidden
        if gate_hidden is None:
            gate_hidden = max(1, len(self.experts) * d // 2)
        head_hidden = self.head_hidden
        if head_hidden is None:
            head_hidden = max(4, d // 2)
        return replace(
            self,
            emb_dim=d,
            text_dim=t,
            gate_hidden=gate_hidden,
            head_hidden=head_hidden,
        )

    @property
    def is_resolved(self) -> bool:
        return (
            self.emb_dim is not None
            and self.gate_hidden is not None
            and self.head_hidden is not None
            and ("text" not in self.modalities or self.text_dim is not None)
        )

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MeraConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if "seed" not in data:
            raise ConfigError("config requires a seed")
        kwargs = dict(data)
        for key in ("experts", "modalities"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "MeraConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    def override(self, **changes) -> "MeraConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self
