"""Optimal assignment and adjacent-frame trajectory linking.

The solver is the O(n^3) shortest-augmenting-path algorithm run over pairs
(float cost, exact-integer tiebreak).  The integer part encodes the
permutation sequence in base n, so among all minimum-cost assignments the
lexicographically smallest permutation is returned deterministically; the
integer arithmetic is exact, so ties between literally equal costs resolve
the same way on every run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, take

_INF = float("inf")


def hungarian(costs: np.ndarray) -> np.ndarray:
    """Minimum-total-cost row->column assignment of a square cost matrix."""
    a = np.asarray(costs, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"hungarian needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("hungarian needs finite costs")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.intp)

    cost = a.tolist()
    # tiebreak[i][j] = j * n^(n-1-i): summed over an assignment this is the
    # base-n encoding of the permutation sequence, so minimizing it picks the
    # lexicographically smallest permutation among equal-cost ones.
    powers = [n ** (n - 1 - i) for i in range(n)]

    u_f = [0.0] * (n + 1)
    u_s = [0] * (n + 1)
    v_f = [0.0] * (n + 1)
    v_s = [0] * (n + 1)
    match = [0] * (n + 1)  # column -> assigned row (1-based), 0 = free
    way = [0] * (n + 1)

    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv_f = [_INF] * (n + 1)
        minv_s = [0] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            row = cost[i0 - 1]
            p = powers[i0 - 1]
            delta_f = _INF
            delta_s = 0
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur_f = row[j - 1] - u_f[i0] - v_f[j]
                cur_s = (j - 1) * p - u_s[i0] - v_s[j]
                if cur_f < minv_f[j] or (cur_f == minv_f[j] and cur_s < minv_s[j]):
                    minv_f[j] = cur_f
                    minv_s[j] = cur_s
                    way[j] = j0
                if minv_f[j] < delta_f or (minv_f[j] == delta_f and minv_s[j] < delta_s):
                    delta_f = minv_f[j]
                    delta_s = minv_s[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u_f[match[j]] += delta_f
                    u_s[match[j]] += delta_s
                    v_f[j] -= delta_f
                    v_s[j] -= delta_s
                else:
                    minv_f[j] -= delta_f
                    minv_s[j] -= delta_s
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    perm = np.zeros(n, dtype=np.intp)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    return perm


def cosine_cost(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Negative cosine similarity between token rows; zero rows score 0."""
    pn = np.linalg.norm(prev, axis=1, keepdims=True)
    cn = np.linalg.norm(cur, axis=1, keepdims=True)
    a = np.divide(prev, pn, out=np.zeros_like(prev), where=pn > 0)
    b = np.divide(cur, cn, out=np.zeros_like(cur), where=cn > 0)
    return -(a @ b.T)


@dataclass
class TrajectorySet:
    """Per-frame tokens re-indexed into per-object trajectories."""

    trajectories: Tensor  # [N, T, C]
    assignments: np.ndarray  # [T, N]; assignments[t, i] = source row at frame t


def link(tokens: Tensor) -> TrajectorySet:
    """Chain adjacent frames by minimum-cost matching on detached values.

    Frame 1 is kept as-is; every later frame is permuted to follow the
    matched slot of the previous frame.  Gradients flow through the gathered
    token values, not through the discrete assignment.
    """
    t_frames, n, c = tokens.shape
    values = tokens.data
    assignments = np.zeros((t_frames, n), dtype=np.intp)
    assignments[0] = np.arange(n)
    prev = values[0]
    for t in range(1, t_frames):
        perm = hungarian(cosine_cost(prev, values[t]))
        assignments[t] = perm
        prev = values[t][perm]
    # one gather over the flattened (frame, slot) axis: trajectory i at frame
    # t comes from flat row t*n + assignments[t, i]
    flat_idx = (np.arange(t_frames)[None, :] * n + assignments.T).reshape(-1)
    gathered = take(tokens.reshape(t_frames * n, c), flat_idx, axis=0)
    return TrajectorySet(trajectories=gathered.reshape(n, t_frames, c), assignments=assignments)


def identity_trajectories(tokens: Tensor) -> TrajectorySet:
    """Linker ablation: keep per-frame slot order, no matching."""
    t_frames, n, _ = tokens.shape
    assignments = np.tile(np.arange(n, dtype=np.intp), (t_frames, 1))
    return TrajectorySet(trajectories=tokens.swapaxes(0, 1), assignments=assignments)
