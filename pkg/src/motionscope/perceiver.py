"""Per-frame candidate perception: cue-injected queries over pixel features.

One residual cross-attention layer plus a feed-forward block stands in for a
full segmentation backbone; it emits per-frame object tokens, a mask feature
grid and a per-token objectness logit.  The positional code is added to the
attention keys only, so the values (and the attention contribution) vanish on
an all-zero grid with zero biases.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor, attention, linear


def inject_cues(queries: Tensor, cues: Tensor) -> Tensor:
    """Residual cross-attention of learnable queries over cue rows.

    The residual lies in the convex hull of the cue rows, so a zero cue
    matrix leaves the queries unchanged.
    """
    return queries + attention(queries, cues, cues)


def sinusoidal_grid(height: int, width: int, channels: int) -> np.ndarray:
    """Fixed 2-d sin/cos position code, flattened to [height*width, channels]."""
    quarter = max(channels // 4, 1)
    freqs = np.power(10_000.0, -np.arange(quarter) / quarter)
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    parts = [
        np.sin(xs.reshape(-1, 1) * freqs),
        np.cos(xs.reshape(-1, 1) * freqs),
        np.sin(ys.reshape(-1, 1) * freqs),
        np.cos(ys.reshape(-1, 1) * freqs),
    ]
    code = np.concatenate(parts, axis=1)
    if code.shape[1] < channels:
        code = np.pad(code, ((0, 0), (0, channels - code.shape[1])))
    return code[:, :channels]


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(scale=1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


class StaticPerceiver:
    def __init__(self, channels: int, img_channels: int, hidden: int,
                 rng: np.random.Generator, prefix: str = "perceiver"):
        self.channels = channels
        self.img_channels = img_channels
        c, ci = channels, img_channels

        def p(name, arr):
            param = Parameter(f"{prefix}.{name}", arr)
            self.params.append(param)
            return param

        self.params: list[Parameter] = []
        # query and key projections start equal: spatial codes placed in the
        # query initialization then line up with pixel position codes at init
        wk0 = init_weight(rng, ci, c)
        self.wq = p("attn.wq", wk0.copy() if ci == c else init_weight(rng, c, c))
        self.bq = p("attn.bq", np.zeros(c))
        self.wk = p("attn.wk", wk0)
        self.bk = p("attn.bk", np.zeros(c))
        self.wv = p("attn.wv", init_weight(rng, ci, c))
        self.bv = p("attn.bv", np.zeros(c))
        self.wo = p("attn.wo", 0.1 * init_weight(rng, c, c))
        self.bo = p("attn.bo", np.zeros(c))
        self.w1 = p("ffn.w1", init_weight(rng, c, hidden))
        self.b1 = p("ffn.b1", np.zeros(hidden))
        self.w2 = p("ffn.w2", 0.1 * init_weight(rng, hidden, c))
        self.b2 = p("ffn.b2", np.zeros(c))
        self.wm = p("mask.w", init_weight(rng, ci, c))
        self.bm = p("mask.b", np.zeros(c))
        self.wc = p("cls.w", init_weight(rng, c, 1))
        self.bc = p("cls.b", np.zeros(1))
        self._pos_cache: dict[tuple[int, int], np.ndarray] = {}

    POSITION_SCALE = 0.3  # keep the key position code below pixel content scale

    def _position_code(self, height: int, width: int) -> np.ndarray:
        key = (height, width)
        if key not in self._pos_cache:
            self._pos_cache[key] = self.POSITION_SCALE * sinusoidal_grid(
                height, width, self.img_channels)
        return self._pos_cache[key]

    def cross_attend(self, pixels: Tensor, position: np.ndarray, q_hat: Tensor) -> Tensor:
        """Attention contribution of the flattened pixels for each query.

        `pixels` is [..., P, C_img].  Keys see pixel + position, values see the
        raw pixel features only, so constant grids contribute the same vector
        to every query.
        """
        q = linear(q_hat, self.wq.tensor, self.bq.tensor)
        k = linear(pixels + Tensor(position), self.wk.tensor, self.bk.tensor)
        v = linear(pixels, self.wv.tensor, self.bv.tensor)
        return linear(attention(q, k, v), self.wo.tensor, self.bo.tensor)

    def perceive(self, frames: np.ndarray, q_hat: Tensor):
        """Batched perception over a [T, H, W, C_img] feature video.

        Returns object tokens [T, N, C], mask features [T, H, W, C] and
        objectness logits [T, N].
        """
        t, h, w, ci = frames.shape
        pixels = Tensor(frames.reshape(t, h * w, ci))
        hidden = q_hat + self.cross_attend(pixels, self._position_code(h, w), q_hat)
        tokens = hidden + linear(linear(hidden, self.w1.tensor, self.b1.tensor).relu(),
                                 self.w2.tensor, self.b2.tensor)
        mask_features = linear(pixels, self.wm.tensor, self.bm.tensor)
        class_logits = linear(tokens, self.wc.tensor, self.bc.tensor)
        n = q_hat.shape[0]
        return (
            tokens,
            mask_features.reshape(t, h, w, self.channels),
            class_logits.reshape(t, n),
        )

    def perceive_frame(self, frame: np.ndarray, q_hat: Tensor):
        tokens, mask_features, class_logits = self.perceive(frame[None], q_hat)
        return (
            tokens.reshape(tokens.shape[1], tokens.shape[2]),
            mask_features.reshape(frame.shape[0], frame.shape[1], self.channels),
            class_logits.reshape(q_hat.shape[0]),
        )


def frame_mask_logits(tokens: Tensor, mask_features: Tensor) -> Tensor:
    """Dot-product mask logits: [..., N, C] x [..., H, W, C] -> [..., N, H*W]."""
    shape = mask_features.shape
    flat = mask_features.reshape(*shape[:-3], shape[-3] * shape[-2], shape[-1])
    return tokens @ flat.swapaxes(-1, -2)


def predict_frame_masks(tokens: Tensor, mask_features: Tensor) -> Tensor:
    """Per-token mask probabilities [N, H, W] for one frame."""
    n = tokens.shape[0]
    h, w, _ = mask_features.shape
    return frame_mask_logits(tokens, mask_features).sigmoid().reshape(n, h, w)
