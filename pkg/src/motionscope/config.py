"""Run configuration: architecture sizes, loss weights, schedule and the
ablation switches, serializable to/from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

QUERY_VARIANTS = ("ds", "sentence_only", "ds_no_sentence", "ds_no_query")


@dataclass
class TrainConfig:
    # architecture
    channels: int = 32
    img_channels: int = 32
    grid_height: int = 16
    grid_width: int = 16
    n_static_queries: int = 8
    n_motion_queries: int = 4
    hmp_blocks: int = 3
    hmp_stages: int = 3
    # contrastive memory
    n_negatives: int = 100
    ema_beta: float = 0.2
    tau: float = 0.07
    lambda_contrastive: float = 0.5
    warmup_frac: float = 0.2
    # matching loss weights
    lambda_cls: float = 2.0
    lambda_dice: float = 5.0
    lambda_mask: float = 5.0
    # optimization
    learning_rate: float = 0.05
    momentum: float = 0.9
    max_grad_norm: float = 5.0  # 0 disables clipping
    steps: int = 2000
    seed: int = 0
    eval_every: int = 500
    threshold: float = 0.5
    # component switches and variants
    decouple_sentence: bool = True
    hmp_enabled: bool = True
    contrastive_enabled: bool = True
    hungarian_enabled: bool = True
    query_variant: str = "ds"
    # data locations (used by the CLI)
    train_dir: str = ""
    val_dir: str = ""

    def validate(self) -> None:
        if self.hmp_blocks < 1:
            raise ValueError(f"hmp_blocks must be >= 1, got {self.hmp_blocks}")
        if self.hmp_stages < 0:
            raise ValueError(f"hmp_stages must be >= 0, got {self.hmp_stages}")
        if self.query_variant not in QUERY_VARIANTS:
            raise ValueError(f"query_variant must be one of {QUERY_VARIANTS}")
        for name in ("channels", "img_channels", "grid_height", "grid_width",
                     "n_static_queries", "n_motion_queries", "steps", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.ema_beta <= 1.0:
            raise ValueError("ema_beta must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError("warmup_frac must lie in [0, 1]")
        if self.n_negatives < 0:
            raise ValueError("n_negatives must be >= 0")
        if self.max_grad_norm < 0:
            raise ValueError("max_grad_norm must be >= 0")

    @property
    def effective_query_variant(self) -> str:
        return self.query_variant if self.decouple_sentence else "sentence_only"

    @property
    def effective_hmp_stages(self) -> int:
        return self.hmp_stages if self.hmp_enabled else 0

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.steps))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            data = json.load(fh)
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def replace(self, **overrides) -> "TrainConfig":
        data = asdict(self)
        data.update(overrides)
        cfg = TrainConfig(**data)
        cfg.validate()
        return cfg

    def canonical_key(self) -> str:
        """Key identifying runs that are guaranteed bit-identical: resolved
        component semantics rather than raw switch values."""
        data = asdict(self)
        data["query_variant"] = self.effective_query_variant
        data["decouple_sentence"] = self.effective_query_variant != "sentence_only"
        data["hmp_stages"] = self.effective_hmp_stages
        data["hmp_enabled"] = self.effective_hmp_stages > 0
        if not self.contrastive_enabled or self.n_negatives == 0:
            data["contrastive_enabled"] = False
            data["n_negatives"] = 0
            data["lambda_contrastive"] = 0.0
        return json.dumps(data, sort_keys=True)
