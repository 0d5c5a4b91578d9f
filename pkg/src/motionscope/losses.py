"""Set-prediction losses: optimal matching of predictions to ground truth at
frame level and video level, with class, mask and dice terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matching import hungarian
from .model import ForwardOutput
from .tensor import Tensor, bce_with_logits, take

DICE_SMOOTH = 1.0


def dice_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean soft dice loss over the leading axis; last axis is pixels."""
    t = Tensor(targets)
    inter = (probs * t).sum(axis=-1)
    denom = probs.sum(axis=-1) + Tensor(targets.sum(axis=-1))
    return (1.0 - (inter * 2.0 + DICE_SMOOTH) / (denom + DICE_SMOOTH)).mean()


def _np_softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _match_costs(mask_logits: np.ndarray, class_logits: np.ndarray, gt: np.ndarray,
                 lambda_cls: float, lambda_mask: float, lambda_dice: float) -> np.ndarray:
    """Pairwise assignment costs [..., n_pred, n_gt] from detached logits.

    Accepts stacked inputs: mask_logits [..., n_pred, P], gt [..., n_gt, P],
    class_logits [..., n_pred]."""
    n_pixels = mask_logits.shape[-1]
    gt_t = gt.swapaxes(-1, -2)
    bce_pos = _np_softplus(mask_logits).mean(axis=-1, keepdims=True)
    cross = mask_logits @ gt_t / n_pixels
    bce = bce_pos - cross
    probs = 1.0 / (1.0 + np.exp(-np.clip(mask_logits, -500, 500)))
    inter = probs @ gt_t
    denom = probs.sum(axis=-1, keepdims=True) + gt.sum(axis=-1)[..., None, :]
    dice = 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    cls = _np_softplus(class_logits) - class_logits  # cost of predicting "object"
    return lambda_cls * cls[..., None] + lambda_mask * bce + lambda_dice * dice


def _assign(costs: np.ndarray, n_pred: int) -> list[tuple[int, int, float]]:
    """Hungarian assignment of predictions to ground-truth columns, on a
    zero-padded square matrix.  Returns (pred, gt, cost) per real pair."""
    n_gt = costs.shape[1]
    padded = np.zeros((n_pred, n_pred))
    padded[:, :n_gt] = costs
    perm = hungarian(padded)
    return [(i, int(perm[i]), float(costs[i, perm[i]])) for i in range(n_pred) if perm[i] < n_gt]


@dataclass
class MatchedLoss:
    loss: Tensor
    matches: list[tuple[int, int, float]]  # (prediction index, target index, cost)


def frame_loss(output: ForwardOutput, gt_masks: np.ndarray, lambda_cls: float,
               lambda_mask: float, lambda_dice: float) -> Tensor:
    """Per-frame matching loss against all annotated objects.

    Every frame matches its candidate tokens to the objects present; matched
    tokens take mask + dice + positive class terms, unmatched tokens are
    pushed to the negative class.  Matching runs per frame on detached
    logits; the loss terms are assembled in one batched expression.
    """
    n_objects, t_frames, h, w = gt_masks.shape
    gt_flat = gt_masks.reshape(n_objects, t_frames, h * w)
    n_pred = output.class_logits.shape[1]
    detached_logits = output.frame_logits.data
    detached_class = output.class_logits.data

    class_targets = np.zeros((t_frames, n_pred))
    matched_rows: list[int] = []
    matched_gt: list[np.ndarray] = []
    if n_objects > 0:
        costs = _match_costs(detached_logits, detached_class, gt_flat.swapaxes(0, 1),
                             lambda_cls, lambda_mask, lambda_dice)
        for t in range(t_frames):
            for i, j, _ in _assign(costs[t], n_pred):
                class_targets[t, i] = 1.0
                matched_rows.append(t * n_pred + i)
                matched_gt.append(gt_flat[j, t])

    loss = lambda_cls * bce_with_logits(output.class_logits, class_targets).mean()
    if matched_rows:
        flat = output.frame_logits.reshape(t_frames * n_pred, h * w)
        logits = take(flat, np.array(matched_rows, dtype=np.intp), axis=0)
        gt = np.stack(matched_gt)
        loss = loss + lambda_mask * bce_with_logits(logits, gt).mean()
        loss = loss + lambda_dice * dice_loss(logits.sigmoid(), gt)
    return loss


def video_loss(output: ForwardOutput, target_masks: np.ndarray, lambda_cls: float,
               lambda_mask: float, lambda_dice: float) -> MatchedLoss:
    """Video-level matching loss of motion queries against expression targets."""
    n_queries = output.video.score_logits.shape[0]
    n_targets = target_masks.shape[0]
    logits_flat = output.video_logits.reshape(n_queries, -1)
    class_targets = np.zeros(n_queries)
    matches: list[tuple[int, int, float]] = []
    term = None
    if n_targets > 0:
        gt_flat = target_masks.reshape(n_targets, -1)
        costs = _match_costs(logits_flat.data, output.video.score_logits.data, gt_flat,
                             lambda_cls, lambda_mask, lambda_dice)
        matches = _assign(costs, n_queries)
        pred_idx = np.array([m[0] for m in matches], dtype=np.intp)
        gt_idx = np.array([m[1] for m in matches], dtype=np.intp)
        class_targets[pred_idx] = 1.0
        matched_logits = take(logits_flat, pred_idx, axis=0)
        matched_gt = gt_flat[gt_idx]
        mask_term = bce_with_logits(matched_logits, matched_gt).mean()
        dice_term = dice_loss(matched_logits.sigmoid(), matched_gt)
        term = lambda_mask * mask_term + lambda_dice * dice_term
    cls_term = lambda_cls * bce_with_logits(output.video.score_logits, class_targets).mean()
    loss = cls_term if term is None else term + cls_term
    return MatchedLoss(loss=loss, matches=matches)
