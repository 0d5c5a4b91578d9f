"""Motion decoder: cue-injected queries attend over motion-aware tokens to
produce per-query video tokens, selection scores and video masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Parameter, Tensor, attention, linear, standardize
from .perceiver import init_weight


@dataclass
class VideoTokens:
    tokens: Tensor  # [N_m, C]
    score_logits: Tensor  # [N_m]
    scores: Tensor  # [N_m], in (0, 1)


class MotionDecoder:
    def __init__(self, channels: int, hidden: int, rng: np.random.Generator,
                 prefix: str = "decoder"):
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
        self.wo = p("attn.wo", 0.1 * init_weight(rng, c, c))
        self.bo = p("attn.bo", np.zeros(c))
        self.w1 = p("ffn.w1", init_weight(rng, c, hidden))
        self.b1 = p("ffn.b1", np.zeros(hidden))
        self.w2 = p("ffn.w2", 0.1 * init_weight(rng, hidden, c))
        self.b2 = p("ffn.b2", np.zeros(c))
        self.ws = p("score.w", init_weight(rng, c, 1))
        self.bs = p("score.b", np.zeros(1))

    def decode(self, q_hat: Tensor, motion_tokens: Tensor) -> VideoTokens:
        """Cross-attend the queries over all trajectory-frame tokens.

        `motion_tokens` is [N_s, T, C] (or already flat [M, C]); the key/value
        set is order-free, so any flattening order gives the same output.
        """
        if motion_tokens.ndim == 3:
            n, t, c = motion_tokens.shape
            keys = motion_tokens.reshape(n * t, c)
        else:
            keys = motion_tokens
        # key/value tokens arrive from a residual stack, so read them standardized
        keys = standardize(keys)
        q = linear(q_hat, self.wq.tensor, self.bq.tensor)
        k = linear(keys, self.wk.tensor, self.bk.tensor)
        v = linear(keys, self.wv.tensor, self.bv.tensor)
        hidden = q_hat + linear(attention(q, k, v), self.wo.tensor, self.bo.tensor)
        h = linear(standardize(hidden), self.w1.tensor, self.b1.tensor).relu()
        tokens = hidden + linear(h, self.w2.tensor, self.b2.tensor)
        logits = linear(tokens, self.ws.tensor, self.bs.tensor).reshape(q_hat.shape[0])
        return VideoTokens(tokens=tokens, score_logits=logits, scores=logits.sigmoid())


def video_mask_logits(video_tokens: Tensor, mask_features: Tensor) -> Tensor:
    """[N_m, C] x [T, H, W, C] -> logits [N_m, T, H*W]."""
    t, h, w, c = mask_features.shape
    flat = mask_features.reshape(t, h * w, c)
    return (video_tokens @ flat.swapaxes(-1, -2)).swapaxes(0, 1)


def predict_video_masks(video: VideoTokens, mask_features: Tensor, threshold: float = 0.5):
    """Per-query video mask probabilities plus the indices selected by score.

    Selection is empty when every score falls at or below the threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    t, h, w, _ = mask_features.shape
    n = video.tokens.shape[0]
    probs = video_mask_logits(video.tokens, mask_features).sigmoid().reshape(n, t, h, w)
    selected = np.flatnonzero(video.scores.data > threshold)
    return probs, selected
