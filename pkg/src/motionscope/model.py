"""Full pipeline assembly: cue decoupling, static perception, trajectory
linking, motion perception, decoding and mask prediction, plus flat binary
weight serialization.

The static grounding (word embedding rows for nouns/colours, value and mask
projections) is initialized aligned with the benchmark's appearance axes,
standing in for the pretrained per-frame backbone and text encoder a full
system would bring; everything temporal starts from scratch."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bank import ContrastiveProjector
from .config import TrainConfig
from .decoder import MotionDecoder, VideoTokens, video_mask_logits
from .hmp import HmpStack
from .language import CueSet, TaggedExpression, decouple
from .matching import TrajectorySet, identity_trajectories, link
from .perceiver import StaticPerceiver, frame_mask_logits, inject_cues, sinusoidal_grid
from .tensor import Parameter, Tensor, take


@dataclass
class ForwardOutput:
    cues: CueSet
    motion_cues: Tensor          # cues actually fed to the motion path [K, C]
    object_tokens: Tensor        # [T, N_s, C]
    mask_features: Tensor        # [T, H, W, C]
    class_logits: Tensor         # [T, N_s]
    frame_logits: Tensor         # [T, N_s, H*W]
    trajectories: TrajectorySet  # tokens re-indexed to [N_s, T, C]
    motion_tokens: Tensor        # [N_s, T, C]
    video: VideoTokens
    video_logits: Tensor         # [N_m, T, H*W]


def _grounded_embedding_init(vocab_size: int, channels: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Word embedding init: nouns and colours start on their appearance axes
    (the pretrained-grounding stand-in); all other words start random."""
    from .benchmark import COLORS, NOUNS, VOCAB, base_appearance

    table = rng.normal(scale=0.5, size=(vocab_size, channels))
    if vocab_size >= len(VOCAB):
        for idx, (surface, tag) in enumerate(VOCAB):
            if tag == "NOUN" and surface in NOUNS:
                vec = base_appearance(NOUNS.index(surface), 0, channels)
                vec[len(NOUNS):len(NOUNS) + len(COLORS)] = 0.0  # category part only
                table[idx] = vec
            elif tag == "ADJ" and surface in COLORS:
                vec = np.zeros(channels)
                if channels >= len(NOUNS) + len(COLORS) + 2:
                    vec[len(NOUNS) + COLORS.index(surface)] = 1.0
                    table[idx] = vec
    return table


ANCHOR_SCALE = 0.3  # keeps spatial preference below appearance affinity


def _query_anchor_codes(n_queries: int, height: int, width: int, channels: int) -> np.ndarray:
    """Initial spatial preferences for the candidate queries: position codes of
    cells spread along the grid diagonal, giving each query slot a distinct
    row and column band so same-looking objects in different lanes separate."""
    codes = sinusoidal_grid(height, width, channels)
    rows = ((np.arange(n_queries) + 0.5) * height / n_queries).astype(int)
    cols = ((np.arange(n_queries) + 0.5) * width / n_queries).astype(int)
    return ANCHOR_SCALE * codes[rows * width + cols]


class MotionSegModel:
    def __init__(self, config: TrainConfig, vocab_size: int, rng: np.random.Generator):
        config.validate()
        self.config = config
        c = config.channels
        self.params: list[Parameter] = []

        def register(param_list):
            self.params.extend(param_list)

        self.embedding = Parameter(
            "embed.table", _grounded_embedding_init(vocab_size, c, rng))
        self.static_queries = Parameter(
            "queries.static",
            rng.normal(scale=0.2, size=(config.n_static_queries, c))
            + _query_anchor_codes(config.n_static_queries, config.grid_height,
                                  config.grid_width, c))
        self.motion_queries = Parameter(
            "queries.motion", rng.normal(scale=0.5, size=(config.n_motion_queries, c)))
        register([self.embedding, self.static_queries, self.motion_queries])

        self.perceiver = StaticPerceiver(c, config.img_channels, 2 * c, rng)
        if config.img_channels == c:
            self.perceiver.wv.tensor.data[...] = np.eye(c)
            self.perceiver.wm.tensor.data[...] = np.eye(c)
        register(self.perceiver.params)
        self.hmp = HmpStack(c, 2 * c, config.hmp_blocks, config.effective_hmp_stages, rng)
        register(self.hmp.params)
        self.decoder = MotionDecoder(c, 2 * c, rng)
        register(self.decoder.params)
        self.projector = ContrastiveProjector(c, c, rng)
        register(self.projector.params)

        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names")

    # -- query construction ----------------------------------------------------

    def _tile_rows(self, rows: Tensor, count: int) -> Tensor:
        idx = np.arange(count) % rows.shape[0]
        return take(rows, idx, axis=0)

    def build_queries(self, cues: CueSet):
        variant = self.config.effective_query_variant
        if variant == "sentence_only":
            static_cues = cues.sentence.reshape(1, -1)
            motion_cues = static_cues
        else:
            static_cues, motion_cues = cues.static, cues.motion
        if variant == "ds_no_query":
            q_static = self._tile_rows(static_cues, self.config.n_static_queries)
            q_motion = self._tile_rows(motion_cues, self.config.n_motion_queries)
        else:
            q_static = inject_cues(self.static_queries.tensor, static_cues)
            q_motion = inject_cues(self.motion_queries.tensor, motion_cues)
        return q_static, q_motion, motion_cues

    # -- forward -----------------------------------------------------------------

    def forward(self, features: np.ndarray, expr: TaggedExpression) -> ForwardOutput:
        cfg = self.config
        add_sentence = cfg.effective_query_variant != "ds_no_sentence"
        cues = decouple(expr, self.embedding.tensor, add_sentence=add_sentence)
        q_static, q_motion, motion_cues = self.build_queries(cues)

        tokens, mask_features, class_logits = self.perceiver.perceive(features, q_static)
        frame_logits = frame_mask_logits(tokens, mask_features)

        if cfg.hungarian_enabled:
            trajectories = link(tokens)
        else:
            trajectories = identity_trajectories(tokens)

        motion_tokens = self.hmp.forward(trajectories.trajectories, motion_cues)
        video = self.decoder.decode(q_motion, motion_tokens)
        video_logits = video_mask_logits(video.tokens, mask_features)
        return ForwardOutput(
            cues=cues,
            motion_cues=motion_cues,
            object_tokens=tokens,
            mask_features=mask_features,
            class_logits=class_logits,
            frame_logits=frame_logits,
            trajectories=trajectories,
            motion_tokens=motion_tokens,
            video=video,
            video_logits=video_logits,
        )

    # -- optimization helpers ------------------------------------------------------

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def save_model(model: MotionSegModel, path) -> None:
    """Flat little-endian serialization: count, then per parameter the name
    length, utf-8 name, rank, extents and float64 values."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(model.params)))
        for p in model.params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<Q", len(name)))
            fh.write(name)
            fh.write(struct.pack("<Q", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
            fh.write(p.data.astype("<f8").tobytes())


def load_model_weights(model: MotionSegModel, path) -> None:
    by_name = {p.name: p for p in model.params}
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<Q", fh.read(8))
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<Q", fh.read(8))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<Q", fh.read(8))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            if name not in by_name:
                raise ValueError(f"unknown parameter {name!r} in checkpoint")
            if by_name[name].data.shape != tuple(shape):
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {tuple(shape)} vs "
                    f"model {by_name[name].data.shape}")
            by_name[name].tensor.data[...] = values
            seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
