import numpy as np
import pytest

from motionscope.perceiver import (
    StaticPerceiver,
    frame_mask_logits,
    inject_cues,
    predict_frame_masks,
    sinusoidal_grid,
)
from motionscope.tensor import Tensor, attention, grad_check


@pytest.fixture
def perceiver():
    return StaticPerceiver(channels=8, img_channels=8, hidden=16, rng=np.random.default_rng(0))


class TestInjectCues:
    def test_single_cue_broadcast(self):
        rng = np.random.default_rng(1)
        q = Tensor(rng.normal(size=(5, 6)))
        cue = Tensor(rng.normal(size=(1, 6)))
        out = inject_cues(q, cue)
        assert np.allclose(out.data, q.data + cue.data, atol=1e-12)

    def test_zero_cues_leave_queries_unchanged(self):
        rng = np.random.default_rng(2)
        q = Tensor(rng.normal(size=(4, 6)))
        out = inject_cues(q, Tensor(np.zeros((3, 6))))
        assert np.array_equal(out.data, q.data)

    def test_matches_attention_composition(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.normal(size=(4, 6)))
        cues = Tensor(rng.normal(size=(3, 6)))
        expected = q.data + attention(q, cues, cues).data
        assert np.allclose(inject_cues(q, cues).data, expected, atol=1e-14)

    def test_residual_in_cue_hull(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            q = Tensor(rng.normal(size=(5, 6)))
            cues = rng.normal(size=(4, 6))
            delta = inject_cues(q, Tensor(cues)).data - q.data
            assert np.all(delta >= cues.min(axis=0) - 1e-9)
            assert np.all(delta <= cues.max(axis=0) + 1e-9)


class TestPerceiveFrame:
    def test_constant_grid_gives_identical_attention_contributions(self, perceiver):
        rng = np.random.default_rng(5)
        frame = np.broadcast_to(rng.normal(size=8), (4, 4, 8)).copy()
        q_hat = Tensor(rng.normal(size=(3, 8)))
        pix = Tensor(frame.reshape(1, 16, 8))
        contrib = perceiver.cross_attend(pix, perceiver._position_code(4, 4), q_hat).data[0]
        assert np.allclose(contrib, contrib[0], atol=1e-12)
        # with identical queries the tokens themselves coincide
        same_q = Tensor(np.broadcast_to(q_hat.data[0], (3, 8)).copy())
        tokens, _, _ = perceiver.perceive_frame(frame, same_q)
        assert np.allclose(tokens.data, tokens.data[0], atol=1e-12)

    def test_zero_grid_zero_biases_reduces_to_ffn_of_queries(self, perceiver):
        for param in perceiver.params:
            if ".b" in param.name:
                param.tensor.data[...] = 0.0
        rng = np.random.default_rng(6)
        q_hat = Tensor(rng.normal(size=(4, 8)))
        tokens, _, _ = perceiver.perceive_frame(np.zeros((4, 4, 8)), q_hat)
        expected = q_hat.data + np.maximum(q_hat.data @ perceiver.w1.data, 0) @ perceiver.w2.data
        assert np.allclose(tokens.data, expected, atol=1e-12)

    def test_query_permutation_equivariance(self, perceiver):
        rng = np.random.default_rng(7)
        frame = rng.normal(size=(4, 4, 8))
        q_hat = rng.normal(size=(5, 8))
        pi = rng.permutation(5)
        tokens, _, logits = perceiver.perceive_frame(frame, Tensor(q_hat))
        tokens_p, _, logits_p = perceiver.perceive_frame(frame, Tensor(q_hat[pi]))
        assert np.allclose(tokens.data[pi], tokens_p.data, atol=1e-12)
        assert np.allclose(logits.data[pi], logits_p.data, atol=1e-12)

    def test_batched_matches_per_frame(self, perceiver):
        rng = np.random.default_rng(8)
        frames = rng.normal(size=(3, 4, 4, 8))
        q_hat = Tensor(rng.normal(size=(2, 8)))
        tokens, mask_features, logits = perceiver.perceive(frames, q_hat)
        for t in range(3):
            tok_t, mf_t, lg_t = perceiver.perceive_frame(frames[t], q_hat)
            assert np.allclose(tokens.data[t], tok_t.data, atol=1e-12)
            assert np.allclose(mask_features.data[t], mf_t.data, atol=1e-12)
            assert np.allclose(logits.data[t], lg_t.data, atol=1e-12)

    def test_gradcheck_small_frame(self, perceiver):
        rng = np.random.default_rng(9)
        frame = rng.normal(size=(3, 3, 8))
        q_hat_base = rng.normal(size=(2, 8))
        target = rng.normal(size=(2, 8))

        def loss():
            tokens, mask_features, logits = perceiver.perceive_frame(frame, Tensor(q_hat_base))
            masks = predict_frame_masks(tokens, mask_features)
            d = tokens - Tensor(target)
            return (d * d).sum() + masks.sum() * 0.1 + (logits * logits).sum()

        assert grad_check(perceiver.params, loss) < 1e-4


class TestMaskPrediction:
    def test_zero_token_gives_half_everywhere(self):
        rng = np.random.default_rng(10)
        mf = Tensor(rng.normal(size=(3, 3, 4)))
        masks = predict_frame_masks(Tensor(np.zeros((2, 4))), mf)
        assert np.array_equal(masks.data, np.full((2, 3, 3), 0.5))

    def test_aligned_token_peaks_at_matching_pixel(self):
        mf = np.zeros((2, 2, 4))
        mf[1, 0] = np.array([3.0, 0.0, 0.0, 0.0])
        token = np.array([[2.0, 0.0, 0.0, 0.0]])
        masks = predict_frame_masks(Tensor(token), Tensor(mf)).data
        assert np.unravel_index(masks.argmax(), masks.shape) == (0, 1, 0)

    def test_matches_per_pixel_loop(self):
        rng = np.random.default_rng(11)
        tokens = rng.normal(size=(3, 5))
        mf = rng.normal(size=(4, 4, 5))
        masks = predict_frame_masks(Tensor(tokens), Tensor(mf)).data
        for i in range(3):
            for y in range(4):
                for x in range(4):
                    expected = 1.0 / (1.0 + np.exp(-tokens[i] @ mf[y, x]))
                    assert abs(masks[i, y, x] - expected) < 1e-12

    def test_probabilities_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(12)
        masks = predict_frame_masks(Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(3, 3, 4))))
        assert np.all(masks.data > 0.0) and np.all(masks.data < 1.0)

    def test_batched_logits_shape(self):
        rng = np.random.default_rng(13)
        tokens = Tensor(rng.normal(size=(2, 3, 4)))
        mf = Tensor(rng.normal(size=(2, 5, 5, 4)))
        assert frame_mask_logits(tokens, mf).shape == (2, 3, 25)


def test_sinusoidal_grid_is_deterministic_and_bounded():
    a = sinusoidal_grid(5, 7, 12)
    b = sinusoidal_grid(5, 7, 12)
    assert np.array_equal(a, b)
    assert a.shape == (35, 12)
    assert np.all(np.abs(a) <= 1.0)
