import itertools

import numpy as np
import pytest

from motionscope.matching import TrajectorySet, cosine_cost, hungarian, identity_trajectories, link
from motionscope.tensor import Parameter, ShapeError, Tensor, grad_check


def brute_force_min(costs):
    n = costs.shape[0]
    best_total, best_perm = None, None
    for perm in itertools.permutations(range(n)):
        total = sum(costs[i, perm[i]] for i in range(n))
        if best_total is None or total < best_total:
            best_total, best_perm = total, perm
    return best_total, best_perm


def total_cost(costs, perm):
    return sum(costs[i, perm[i]] for i in range(costs.shape[0]))


class TestHungarian:
    def test_identity_favoring(self):
        costs = np.ones((4, 4)) - np.eye(4)
        assert hungarian(costs).tolist() == [0, 1, 2, 3]

    def test_constant_matrix_breaks_tie_lexicographically(self):
        for c in (0.0, 0.3, -2.5):
            costs = np.full((5, 5), c)
            perm = hungarian(costs)
            assert perm.tolist() == [0, 1, 2, 3, 4]
            assert total_cost(costs, perm) == 5 * c

    def test_matches_brute_force_on_random_6x6(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            costs = rng.normal(size=(6, 6))
            perm = hungarian(costs)
            best_total, _ = brute_force_min(costs)
            assert total_cost(costs, perm) == best_total

    def test_tie_rich_integer_matrices_stay_optimal_and_lexicographic(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            costs = rng.integers(0, 3, size=(5, 5)).astype(float)
            perm = hungarian(costs)
            best_total, _ = brute_force_min(costs)
            assert total_cost(costs, perm) == best_total
            # lexicographically smallest among all optimal permutations
            optimal = [
                p
                for p in itertools.permutations(range(5))
                if total_cost(costs, p) == best_total
            ]
            assert tuple(perm.tolist()) == min(optimal)

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            costs = rng.normal(size=(5, 5))
            base = hungarian(costs)
            for c in (-3.0, 0.25, 10.0):
                assert np.array_equal(hungarian(costs + c), base)

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            hungarian(np.zeros((3, 4)))

    def test_non_finite_rejected(self):
        costs = np.zeros((2, 2))
        costs[0, 0] = np.nan
        with pytest.raises(ValueError):
            hungarian(costs)


class TestCosineCost:
    def test_zero_rows_score_zero(self):
        prev = np.array([[0.0, 0.0], [1.0, 0.0]])
        cur = np.array([[0.0, 1.0], [0.0, 0.0]])
        costs = cosine_cost(prev, cur)
        assert costs[0, 0] == 0.0 and costs[0, 1] == 0.0 and costs[1, 1] == 0.0
        assert costs[1, 0] == 0.0  # orthogonal

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        prev, cur = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        assert np.allclose(cosine_cost(prev, cur), cosine_cost(prev * 7.0, cur * 0.2))


class TestLink:
    def test_single_frame_passthrough(self):
        rng = np.random.default_rng(0)
        tokens = rng.normal(size=(1, 3, 4))
        out = link(Tensor(tokens))
        assert np.array_equal(out.trajectories.data[:, 0, :], tokens[0])

    def test_constant_tokens_identity_assignment(self):
        rng = np.random.default_rng(1)
        frame = rng.normal(size=(4, 5))
        tokens = np.stack([frame] * 6)
        out = link(Tensor(tokens))
        for t in range(6):
            assert out.assignments[t].tolist() == [0, 1, 2, 3]

    def test_swapped_signatures_are_swapped_back(self):
        a = np.array([1.0, 0.0, 0.0])
        b = np.array([0.0, 1.0, 0.0])
        tokens = np.stack([np.stack([a, b]), np.stack([b, a])])
        out = link(Tensor(tokens))
        assert out.assignments[1].tolist() == [1, 0]
        # brute-force check on the 2x2 cost
        costs = cosine_cost(tokens[0], tokens[1])
        best_total, best_perm = brute_force_min(costs)
        assert tuple(out.assignments[1]) == best_perm

    def test_multiset_of_tokens_preserved_per_frame(self):
        rng = np.random.default_rng(2)
        tokens = rng.normal(size=(5, 4, 3))
        out = link(Tensor(tokens))
        for t in range(5):
            frame_rows = {tuple(r) for r in tokens[t]}
            traj_rows = {tuple(r) for r in out.trajectories.data[:, t, :]}
            assert frame_rows == traj_rows

    def test_permutation_consistency(self):
        rng = np.random.default_rng(3)
        tokens = rng.normal(size=(4, 5, 6))
        out = link(Tensor(tokens))
        pi = rng.permutation(5)
        permuted = tokens[:, pi, :]
        out2 = link(Tensor(permuted))
        # same trajectories as a set, relabeled by frame-1 order
        set_a = {tuple(out.trajectories.data[i].reshape(-1)) for i in range(5)}
        set_b = {tuple(out2.trajectories.data[i].reshape(-1)) for i in range(5)}
        assert set_a == set_b

    def test_gradients_flow_through_chosen_rows(self):
        rng = np.random.default_rng(4)
        w = Parameter("w", rng.normal(size=(3, 3)))
        base = rng.normal(size=(3, 2, 3))

        def loss():
            tokens = Tensor(base.reshape(6, 3)) @ w.tensor
            out = link(tokens.reshape(3, 2, 3))
            return (out.trajectories * out.trajectories).sum()

        assert grad_check([w], loss) < 1e-8

    def test_identity_trajectories(self):
        rng = np.random.default_rng(5)
        tokens = rng.normal(size=(3, 4, 2))
        out = identity_trajectories(Tensor(tokens))
        assert isinstance(out, TrajectorySet)
        assert np.array_equal(out.trajectories.data, tokens.swapaxes(0, 1))
