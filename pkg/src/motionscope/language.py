"""Splitting pre-tagged expressions into static and motion cues.

Nouns, adjectives and prepositions ground per-frame appearance; verbs and
adverbs describe temporal behaviour.  Both cue sets carry the sentence
embedding (the mean of all token embeddings) added element-wise so each cue
keeps sentence context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, take

NOUN = "NOUN"
ADJ = "ADJ"
PREP = "PREP"
VERB = "VERB"
ADV = "ADV"
OTHER = "OTHER"

STATIC_TAGS = frozenset({NOUN, ADJ, PREP})
MOTION_TAGS = frozenset({VERB, ADV})
ALL_TAGS = STATIC_TAGS | MOTION_TAGS | {OTHER}


@dataclass(frozen=True)
class ExprToken:
    surface: str
    tag: str
    vocab_id: int


@dataclass
class TaggedExpression:
    tokens: list[ExprToken]
    target_ids: list[int] = field(default_factory=list)
    video: str = ""

    def surfaces(self, tags) -> list[str]:
        return [t.surface for t in self.tokens if t.tag in tags]


@dataclass
class CueSet:
    """Static cues [K_s x C], motion cues [K_m x C], sentence embedding [C]."""

    static: Tensor
    motion: Tensor
    sentence: Tensor
    static_surfaces: list[str] = field(default_factory=list)
    motion_surfaces: list[str] = field(default_factory=list)


def decouple(expr: TaggedExpression, embedding: Tensor, add_sentence: bool = True) -> CueSet:
    """Split an expression into static/motion cue matrices.

    The sentence embedding is the mean over all token embeddings; an empty
    cue class falls back to a single row equal to the sentence embedding so
    downstream attention stays well-posed.  `add_sentence=False` drops the
    element-wise sentence add from the cue rows (ablation path).
    """
    if not expr.tokens:
        raise ValueError("expression has no tokens")
    vocab_size = embedding.shape[0]
    for tok in expr.tokens:
        if tok.tag not in ALL_TAGS:
            raise ValueError(f"unknown POS tag {tok.tag!r}")
        if not 0 <= tok.vocab_id < vocab_size:
            raise ValueError(f"vocab id {tok.vocab_id} out of range for table of {vocab_size}")

    ids = np.array([t.vocab_id for t in expr.tokens], dtype=np.intp)
    word_rows = take(embedding, ids, axis=0)
    sentence = word_rows.mean(axis=0)

    static_pos = [i for i, t in enumerate(expr.tokens) if t.tag in STATIC_TAGS]
    motion_pos = [i for i, t in enumerate(expr.tokens) if t.tag in MOTION_TAGS]

    def cue_rows(positions):
        if not positions:
            return sentence.reshape(1, -1)
        rows = take(word_rows, np.array(positions, dtype=np.intp), axis=0)
        if add_sentence:
            rows = rows + sentence
        return rows

    return CueSet(
        static=cue_rows(static_pos),
        motion=cue_rows(motion_pos),
        sentence=sentence,
        static_surfaces=[expr.tokens[i].surface for i in static_pos],
        motion_surfaces=[expr.tokens[i].surface for i in motion_pos],
    )


def expression_to_json(expr: TaggedExpression) -> dict:
    return {
        "tokens": [[t.surface, t.tag, t.vocab_id] for t in expr.tokens],
        "target_ids": list(expr.target_ids),
        "video": expr.video,
    }


def expression_from_json(obj: dict) -> TaggedExpression:
    return TaggedExpression(
        tokens=[ExprToken(s, tag, int(v)) for s, tag, v in obj["tokens"]],
        target_ids=[int(i) for i in obj.get("target_ids", [])],
        video=str(obj.get("video", "")),
    )


def save_expressions(path, exprs) -> None:
    with open(path, "w") as fh:
        for expr in exprs:
            fh.write(json.dumps(expression_to_json(expr)) + "\n")


def load_expressions(path) -> list[TaggedExpression]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(expression_from_json(json.loads(line)))
    return out
