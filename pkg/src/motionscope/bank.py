"""Per-target centroid memory and the object-wise contrastive objective.

The bank keeps one exponentially-averaged centroid per training-set target
object.  Centroids receive no gradients; only the anchor (through the
projection head) is trained.  Negative sampling prefers hard candidates:
same category in the same video first, then same category anywhere, then the
rest.
"""

from __future__ import annotations

import json

import numpy as np

from .tensor import Parameter, Tensor, concat
from .perceiver import init_weight


class ContrastiveProjector:
    """Two-layer MLP followed by L2 normalization."""

    def __init__(self, channels: int, out_channels: int | None = None,
                 rng: np.random.Generator | None = None, prefix: str = "projector"):
        rng = rng if rng is not None else np.random.default_rng(0)
        out_channels = out_channels if out_channels is not None else channels
        self.out_channels = out_channels
        self.params: list[Parameter] = []

        def p(name, arr):
            param = Parameter(f"{prefix}.{name}", arr)
            self.params.append(param)
            return param

        self.w1 = p("w1", init_weight(rng, channels, channels))
        self.b1 = p("b1", np.zeros(channels))
        self.w2 = p("w2", init_weight(rng, channels, out_channels))
        self.b2 = p("b2", np.zeros(out_channels))

    def project(self, token: Tensor) -> Tensor:
        """Project a single token [C] to a unit vector [C_proj]."""
        x = token.reshape(1, -1)
        h = (x @ self.w1.tensor + self.b1.tensor).relu()
        out = (h @ self.w2.tensor + self.b2.tensor).reshape(self.out_channels)
        norm = (out * out).sum().sqrt() + 1e-12
        return out / norm


class MemoryBank:
    """EMA centroid store indexed by target-object slot."""

    def __init__(self, categories, videos, channels: int):
        self.category = np.asarray(categories, dtype=np.int64)
        self.video = np.asarray(videos, dtype=np.int64)
        if self.category.shape != self.video.shape:
            raise ValueError("category and video slot metadata must align")
        self.size = self.category.shape[0]
        self.vectors = np.zeros((self.size, channels))
        self.initialized = np.zeros(self.size, dtype=bool)

    def update(self, slot: int, vector: np.ndarray, beta: float,
               renormalize: bool = True) -> None:
        """First touch copies the vector; later touches blend with retention
        factor beta and (by default) re-normalize the stored centroid."""
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        if not 0 <= slot < self.size:
            raise IndexError(f"slot {slot} out of range for bank of {self.size}")
        vec = np.asarray(vector, dtype=np.float64)
        if not self.initialized[slot]:
            self.vectors[slot] = vec
            self.initialized[slot] = True
            return
        blended = beta * self.vectors[slot] + (1.0 - beta) * vec
        if renormalize:
            norm = np.linalg.norm(blended)
            if norm > 0:
                blended = blended / norm
        self.vectors[slot] = blended

    def sample_negatives(self, anchor_slot: int, n_negatives: int,
                         rng: np.random.Generator, exclude=()) -> np.ndarray:
        """Slot indices of up to n_negatives initialized non-anchor centroids,
        filled tier by tier, uniform within a tier."""
        banned = np.zeros(self.size, dtype=bool)
        banned[anchor_slot] = True
        for slot in exclude:
            banned[slot] = True
        eligible = self.initialized & ~banned
        same_cat = self.category == self.category[anchor_slot]
        same_vid = self.video == self.video[anchor_slot]
        tiers = [
            np.flatnonzero(eligible & same_cat & same_vid),
            np.flatnonzero(eligible & same_cat & ~same_vid),
            np.flatnonzero(eligible & ~same_cat),
        ]
        chosen: list[np.ndarray] = []
        remaining = n_negatives
        for tier in tiers:
            if remaining <= 0:
                break
            if tier.size <= remaining:
                chosen.append(tier)
                remaining -= tier.size
            else:
                chosen.append(rng.choice(tier, size=remaining, replace=False))
                remaining = 0
        if not chosen:
            return np.zeros(0, dtype=np.intp)
        return np.concatenate(chosen).astype(np.intp)

    def snapshot(self) -> list[dict]:
        return [
            {
                "target_id": int(slot),
                "category": int(self.category[slot]),
                "video": int(self.video[slot]),
                "vector": self.vectors[slot].tolist(),
            }
            for slot in np.flatnonzero(self.initialized)
        ]

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh)


def contrastive_loss(anchor: Tensor, positive: np.ndarray,
                     negatives: np.ndarray, tau: float) -> Tensor:
    """Softmax-over-similarities loss of the anchor against its centroid.

    Stabilized by max subtraction; with no negatives the loss is exactly 0.
    Centroids enter as constants, so gradient flows only into the anchor.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    pos_logit = (anchor * Tensor(positive)).sum() * (1.0 / tau)
    logits = pos_logit.reshape(1)
    if len(negatives):
        neg = (anchor.reshape(1, -1) @ Tensor(np.asarray(negatives).T)) * (1.0 / tau)
        logits = concat([logits, neg.reshape(len(negatives))], axis=0)
    shift = Tensor(logits.data.max())
    lse = (logits - shift).exp().sum().log() + shift
    return lse - pos_logit
