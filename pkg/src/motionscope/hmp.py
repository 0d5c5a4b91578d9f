"""Hierarchical motion perception over linked object trajectories.

Each block runs temporal self-attention, a hierarchical cross-attention that
repeatedly highlights motion-relevant frames and merges neighbouring tokens
(halving the temporal length per stage), and a feed-forward layer.  All three
branches are residual with output projections, so a block with zeroed
projections is the identity on its input.

Shapes: trajectories are [..., T, C] with motion cues [K_m, C]; the batched
case stacks trajectories on the leading axis and every op stays per-trajectory.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor, linear, repeat, softmax, standardize, take
from .perceiver import init_weight


def highlight(traj: Tensor, motion_cues: Tensor):
    """Frame-vs-cue attention, normalized over the time axis.

    Returns the attention map [..., T_h, K_m] whose columns each sum to 1,
    and the per-frame weight [..., T_h] (row sums), which totals K_m.
    """
    scale = 1.0 / np.sqrt(traj.shape[-1])
    attn = softmax((traj @ motion_cues.swapaxes(-1, -2)) * scale, axis=-2)
    return attn, attn.sum(axis=-1)


def enrich(traj: Tensor, attn: Tensor, frame_weight: Tensor, motion_cues: Tensor) -> Tensor:
    """Add to each frame token a convex combination of the motion cues,
    weighted by that frame's share of the attention."""
    t_axis = frame_weight.reshape(*frame_weight.shape, 1)
    return traj + (attn / t_axis) @ motion_cues


def merge(enriched: Tensor, frame_weight: Tensor) -> Tensor:
    """Blend each neighbouring frame pair into one token by weighted average."""
    t_len = enriched.shape[-2]
    if t_len % 2 != 0:
        raise ValueError(f"merge needs an even temporal length, got {t_len}")
    even = np.arange(0, t_len, 2)
    odd = np.arange(1, t_len, 2)
    x0 = take(enriched, even, axis=-2)
    x1 = take(enriched, odd, axis=-2)
    w0 = take(frame_weight, even, axis=-1)
    w1 = take(frame_weight, odd, axis=-1)
    w0e = w0.reshape(*w0.shape, 1)
    w1e = w1.reshape(*w1.shape, 1)
    return (x0 * w0e + x1 * w1e) / (w0e + w1e)


def pad_to_multiple(traj: Tensor, multiple: int) -> Tensor:
    """Repeat the last frame token until the time length divides `multiple`."""
    t_len = traj.shape[-2]
    target = ((t_len + multiple - 1) // multiple) * multiple
    if target == t_len:
        return traj
    idx = np.concatenate([np.arange(t_len), np.full(target - t_len, t_len - 1)])
    return take(traj, idx, axis=-2)


def hierarchical_stages(traj: Tensor, motion_cues: Tensor, n_stages: int) -> Tensor:
    """Run highlight -> enrich -> merge `n_stages` times; length becomes
    ceil(T / 2^n)/... T/2^n after internal padding."""
    x = pad_to_multiple(traj, 2 ** n_stages)
    for _ in range(n_stages):
        attn, frame_weight = highlight(x, motion_cues)
        x = merge(enrich(x, attn, frame_weight, motion_cues), frame_weight)
    return x


def hierarchical_cross_attention(traj: Tensor, motion_cues: Tensor, n_stages: int) -> Tensor:
    """Residual hierarchical branch: coarse tokens are expanded back to the
    input length by nearest-neighbour repetition and added to the input.
    With zero stages the hierarchy is off and the input passes through."""
    if n_stages == 0:
        return traj
    coarse = hierarchical_stages(traj, motion_cues, n_stages)
    expanded = repeat(coarse, 2 ** n_stages, axis=-2)
    t_len = traj.shape[-2]
    if expanded.shape[-2] != t_len:
        # padded frames are dropped after expansion, without renormalizing
        expanded = take(expanded, np.arange(t_len), axis=-2)
    return traj + expanded


class HmpBlock:
    def __init__(self, channels: int, hidden: int, n_stages: int,
                 rng: np.random.Generator, prefix: str):
        self.n_stages = n_stages
        c = channels
        self.params: list[Parameter] = []

        def p(name, arr):
            param = Parameter(f"{prefix}.{name}", arr)
            self.params.append(param)
            return param

        self.wq = p("attn.wq", init_weight(rng, c, c))
        self.bq = p("attn.bq", np.zeros(c))
        self.wk = p("attn.wk", init_weight(rng, c, c))
        self.bk = p("attn.bk", np.zeros(c))
        self.wv = p("attn.wv", init_weight(rng, c, c))
        self.bv = p("attn.bv", np.zeros(c))
        # residual-branch outputs start small so the stream scale stays stable
        self.wo = p("attn.wo", 0.1 * init_weight(rng, c, c))
        self.bo = p("attn.bo", np.zeros(c))
        self.wh = p("hier.wo", 0.1 * init_weight(rng, c, c))
        self.bh = p("hier.bo", np.zeros(c))
        self.w1 = p("ffn.w1", init_weight(rng, c, hidden))
        self.b1 = p("ffn.b1", np.zeros(hidden))
        self.w2 = p("ffn.w2", 0.1 * init_weight(rng, hidden, c))
        self.b2 = p("ffn.b2", np.zeros(c))

    def _self_attention(self, x: Tensor) -> Tensor:
        scale = 1.0 / np.sqrt(x.shape[-1])
        q = linear(x, self.wq.tensor, self.bq.tensor)
        k = linear(x, self.wk.tensor, self.bk.tensor)
        v = linear(x, self.wv.tensor, self.bv.tensor)
        mixed = softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1) @ v
        return linear(mixed, self.wo.tensor, self.bo.tensor)

    def forward(self, traj: Tensor, motion_cues: Tensor) -> Tensor:
        # branches read a standardized view of the stream so attention logits
        # and cue similarities keep their scale across cascaded blocks
        y = traj + self._self_attention(standardize(traj))
        if self.n_stages > 0:
            coarse = hierarchical_stages(standardize(y), motion_cues, self.n_stages)
            expanded = repeat(coarse, 2 ** self.n_stages, axis=-2)
            t_len = y.shape[-2]
            if expanded.shape[-2] != t_len:
                expanded = take(expanded, np.arange(t_len), axis=-2)
            y = y + linear(expanded, self.wh.tensor, self.bh.tensor)
        h = linear(standardize(y), self.w1.tensor, self.b1.tensor).relu()
        return y + linear(h, self.w2.tensor, self.b2.tensor)


class HmpStack:
    """Cascade of motion perception blocks applied per trajectory."""

    def __init__(self, channels: int, hidden: int, n_blocks: int, n_stages: int,
                 rng: np.random.Generator, prefix: str = "hmp"):
        if n_blocks < 1:
            raise ValueError(f"need at least one block, got {n_blocks}")
        if n_stages < 0:
            raise ValueError(f"stage count must be non-negative, got {n_stages}")
        self.blocks = [
            HmpBlock(channels, hidden, n_stages, rng, prefix=f"{prefix}.block{i}")
            for i in range(n_blocks)
        ]
        self.params = [p for block in self.blocks for p in block.params]

    def forward(self, trajectories: Tensor, motion_cues: Tensor) -> Tensor:
        x = trajectories
        for block in self.blocks:
            x = block.forward(x, motion_cues)
        return x
