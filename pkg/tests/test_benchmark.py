import numpy as np
import pytest

from motionscope.benchmark import (
    LONG_HORIZON,
    SHORT_BURST,
    STATIC,
    VOCAB,
    VOCAB_SIZE,
    BenchmarkConfig,
    GenerationError,
    boundary,
    evaluate_expression,
    generate,
    load_dataset,
    load_scene,
    metric_f,
    metric_j,
    save_scene,
    video_iou,
)
from motionscope.language import MOTION_TAGS, STATIC_TAGS, VERB


def small_config(**overrides):
    base = dict(frames=8, height=8, width=8, channels=8, min_objects=3, max_objects=3,
                expressions_per_scene=2)
    base.update(overrides)
    return BenchmarkConfig(**base)


class TestGenerator:
    def test_same_seed_bit_identical(self):
        cfg = small_config()
        a = generate(17, cfg)
        b = generate(17, cfg)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.masks, b.masks)
        assert a.expressions == b.expressions
        assert [o.motion for o in a.objects] == [o.motion for o in b.objects]

    def test_single_static_object_mask_is_constant_support(self):
        cfg = small_config(min_objects=1, max_objects=1, ensure_contrast=False,
                           no_target_prob=0.0, multi_target_prob=0.0, expressions_per_scene=1)
        for seed in range(10):
            scene = generate(seed, cfg)
            obj = scene.objects[0]
            if obj.motion.kind != STATIC:
                continue
            for t in range(cfg.frames):
                assert np.array_equal(scene.masks[0, t], scene.masks[0, 0])
            assert scene.masks[0, 0].sum() == cfg.object_size ** 2

    def test_contrast_pair_present_and_audited(self):
        cfg = small_config()
        for seed in range(20):
            scene = generate(seed, cfg)
            pairs = {}
            for obj in scene.objects:
                pairs.setdefault((obj.category, obj.color), []).append(obj.motion.kind)
            assert any(len(kinds) >= 2 for kinds in pairs.values())
            for expr in scene.expressions:
                assert evaluate_expression(expr.tokens, scene.objects) == sorted(expr.target_ids)

    def test_probe_scene_targets_long_horizon_member(self):
        cfg = small_config(probe=True)
        for seed in range(10):
            scene = generate(seed, cfg)
            assert scene.probe
            assert scene.objects[0].motion.kind == LONG_HORIZON
            assert scene.objects[1].motion.kind == SHORT_BURST
            assert scene.objects[0].category == scene.objects[1].category
            assert scene.objects[0].color == scene.objects[1].color
            assert scene.objects[0].motion.direction == scene.objects[1].motion.direction
            for expr in scene.expressions:
                assert expr.target_ids == [0]

    def test_motion_program_invariants(self):
        cfg = small_config()
        for seed in range(30):
            scene = generate(seed, cfg)
            for obj in scene.objects:
                m = obj.motion
                assert m.onset + m.duration <= cfg.frames
                if m.kind == SHORT_BURST:
                    assert 0 < m.duration <= cfg.frames // 4
                if m.kind == LONG_HORIZON:
                    assert m.duration >= 3 * cfg.frames // 4

    def test_masks_stay_on_grid_and_disjoint(self):
        cfg = small_config()
        for seed in range(10):
            scene = generate(seed, cfg)
            assert scene.masks.max() <= 1.0
            # lane placement keeps objects disjoint in every frame
            assert np.all(scene.masks.sum(axis=0) <= 1.0)

    def test_expression_tokens_have_valid_vocab_ids(self):
        scene = generate(3, small_config())
        for expr in scene.expressions:
            for tok in expr.tokens:
                assert 0 <= tok.vocab_id < VOCAB_SIZE
                assert VOCAB[tok.vocab_id] == (tok.surface, tok.tag)
            tags = {t.tag for t in expr.tokens}
            assert tags & STATIC_TAGS
            verbs = [t for t in expr.tokens if t.tag == VERB]
            assert len(verbs) <= 1

    def test_unsatisfiable_config_rejected(self):
        with pytest.raises(GenerationError):
            generate(0, small_config(width=4, height=4, frames=16, max_objects=2, min_objects=2))


class TestSceneIO:
    def test_roundtrip(self, tmp_path):
        scene = generate(5, small_config())
        save_scene(scene, tmp_path)
        loaded = load_scene(tmp_path, 5)
        assert np.array_equal(loaded.features, scene.features)
        assert np.array_equal(loaded.masks, scene.masks)
        assert loaded.expressions == scene.expressions
        assert loaded.probe == scene.probe
        assert [o.start for o in loaded.objects] == [o.start for o in scene.objects]

    def test_magic_header(self, tmp_path):
        scene = generate(6, small_config())
        save_scene(scene, tmp_path)
        raw = (tmp_path / "6.bin").read_bytes()
        assert raw[:8] == b"MSCOPE01"
        (tmp_path / "6.bin").write_bytes(b"BADMAGIC" + raw[8:])
        with pytest.raises(ValueError):
            load_scene(tmp_path, 6)

    def test_load_dataset_sorted(self, tmp_path):
        for seed in (11, 2, 7):
            save_scene(generate(seed, small_config()), tmp_path)
        scenes = load_dataset(tmp_path)
        assert [s.seed for s in scenes] == [2, 7, 11]


class TestMetricJ:
    def test_perfect(self):
        m = np.zeros((2, 4, 4))
        m[:, 1:3, 1:3] = 1
        assert metric_j(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4))
        b = np.zeros((4, 4))
        a[0, 0] = 1
        b[3, 3] = 1
        assert metric_j(a, b) == 0.0

    def test_half_overlap_equal_area_is_one_third(self):
        a = np.zeros((4, 6))
        b = np.zeros((4, 6))
        a[1:3, 0:4] = 1
        b[1:3, 2:6] = 1
        assert abs(metric_j(a, b) - 1.0 / 3.0) < 1e-12

    def test_empty_vs_empty_counts_one(self):
        assert metric_j(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            metric_j(np.zeros((3, 3)), np.zeros((4, 4)))

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            a = rng.random((5, 5)) > 0.6
            b = rng.random((5, 5)) > 0.6
            assert metric_j(a, b) == metric_j(b, a)
            assert 0.0 <= metric_j(a, b) <= 1.0


def brute_force_f(pred, gt, tol=1):
    """Direct boundary matching: a boundary cell matches if some boundary cell
    of the other mask lies within Chebyshev distance tol."""
    pb = np.argwhere(boundary(pred))
    gb = np.argwhere(boundary(gt))
    if len(pb) == 0 and len(gb) == 0:
        return 1.0
    if len(pb) == 0 or len(gb) == 0:
        return 0.0

    def matched(points, others):
        hits = 0
        for p in points:
            if any(max(abs(p[0] - o[0]), abs(p[1] - o[1])) <= tol for o in others):
                hits += 1
        return hits / len(points)

    precision = matched(pb, gb)
    recall = matched(gb, pb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


class TestMetricF:
    def test_perfect(self):
        m = np.zeros((5, 5))
        m[1:4, 1:4] = 1
        assert metric_f(m, m) == 1.0

    def test_one_pixel_shift_within_tolerance(self):
        a = np.zeros((6, 6))
        b = np.zeros((6, 6))
        a[2:4, 1:3] = 1
        b[2:4, 2:4] = 1
        assert metric_f(a, b) == 1.0

    def test_three_pixel_shift_matches_brute_force(self):
        a = np.zeros((10, 10))
        b = np.zeros((10, 10))
        a[4, 0:5] = 1  # thin shape
        b[7, 0:5] = 1
        assert abs(metric_f(a, b) - brute_force_f(a, b)) < 1e-12

    def test_random_cases_match_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            a = rng.random((7, 7)) > 0.6
            b = rng.random((7, 7)) > 0.6
            assert abs(metric_f(a, b) - brute_force_f(a, b)) < 1e-12

    def test_empty_rules(self):
        empty = np.zeros((4, 4))
        full = np.ones((4, 4))
        assert metric_f(empty, empty) == 1.0
        assert metric_f(empty, full) == 0.0
        assert metric_f(full, empty) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.random((6, 6)) > 0.55
            b = rng.random((6, 6)) > 0.55
            assert abs(metric_f(a, b) - metric_f(b, a)) < 1e-12


def test_video_iou_aggregates_over_frames():
    a = np.zeros((2, 3, 3))
    b = np.zeros((2, 3, 3))
    a[0, 0, 0] = 1
    b[0, 0, 0] = 1
    a[1, 1, 1] = 1
    b[1, 2, 2] = 1
    assert abs(video_iou(a, b) - 1.0 / 3.0) < 1e-12
