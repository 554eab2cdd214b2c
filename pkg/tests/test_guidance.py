import numpy as np
import pytest

from lesionattn.guidance import (
    attention_loss,
    attention_loss_gradient,
    cosine_alignment,
    load_mask,
    resize_mask,
    save_mask,
    soften_mask,
    validate_attention_map,
)
from oracles import attention_loss_fd_gradient


def random_mask(rng, shape):
    while True:
        m = (rng.uniform(size=shape) < 0.4).astype(float)
        if m.any():
            return m


class TestSoftenMask:
    def test_rho_zero_is_identity(self):
        rng = np.random.default_rng(0)
        m = random_mask(rng, (6, 6))
        assert np.array_equal(soften_mask(m, 0.0), m)

    def test_rho_one_saturates(self):
        rng = np.random.default_rng(1)
        m = random_mask(rng, (5, 7))
        assert np.array_equal(soften_mask(m, 1.0), np.ones((5, 7)))

    def test_point_values_at_rho_07(self):
        m = np.array([[1, 0], [0, 1]])
        s = soften_mask(m, 0.7)
        assert s[0, 0] == 1.0 and s[1, 1] == 1.0
        assert s[0, 1] == pytest.approx(0.7) and s[1, 0] == pytest.approx(0.7)

    def test_monotone_in_rho(self):
        rng = np.random.default_rng(2)
        m = random_mask(rng, (8, 8))
        prev = soften_mask(m, 0.0)
        for rho in np.linspace(0.1, 1.0, 10):
            cur = soften_mask(m, rho)
            assert np.all(cur >= prev)
            prev = cur

    def test_rho_out_of_range(self):
        with pytest.raises(ValueError, match="rho"):
            soften_mask(np.ones((2, 2)), 1.5)

    def test_nonbinary_mask_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            soften_mask(np.full((2, 2), 0.5), 0.3)


class TestCosineAlignment:
    def test_proportional_inputs_give_one(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0.1, 1.0, size=(4, 4))
        assert cosine_alignment(3.0 * a, a) == pytest.approx(1.0)

    def test_disjoint_supports_give_zero(self):
        target = np.array([[1.0, 0.0], [1.0, 0.0]])
        attn = np.array([[0.0, 0.5], [0.0, 0.5]])
        assert cosine_alignment(target, attn) == pytest.approx(0.0)

    def test_two_pixel_hand_case(self):
        assert cosine_alignment(
            np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])
        ) == pytest.approx(0.5 / (1.0 * np.sqrt(0.5)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            cosine_alignment(np.ones((2, 2)), np.ones((2, 3)))

    def test_zero_norm_errors(self):
        with pytest.raises(ValueError, match="zero norm"):
            cosine_alignment(np.zeros((2, 2)), np.ones((2, 2)))
        with pytest.raises(ValueError, match="zero norm"):
            cosine_alignment(np.ones((2, 2)), np.zeros((2, 2)))

    def test_continuous_in_rho_and_rho_one_matches_uniform_target(self):
        rng = np.random.default_rng(4)
        mask = random_mask(rng, (6, 6))
        attn = rng.uniform(0.01, 1.0, size=(6, 6))
        attn /= attn.sum()
        rhos = np.linspace(0.0, 1.0, 51)
        values = [cosine_alignment(soften_mask(mask, r), attn) for r in rhos]
        assert max(abs(a - b) for a, b in zip(values, values[1:])) < 0.05
        assert values[-1] == pytest.approx(cosine_alignment(np.ones((6, 6)), attn))


class TestAttentionLoss:
    def test_aligned_gives_zero(self):
        t = np.array([[0.2, 0.8], [0.4, 0.6]])
        assert attention_loss(t, t / t.sum()) == pytest.approx(0.0)

    def test_orthogonal_gives_one(self):
        target = np.array([[1.0, 0.0]])
        attn = np.array([[0.0, 1.0]])
        assert attention_loss(target, attn) == pytest.approx(1.0)

    def test_two_pixel_value(self):
        loss = attention_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))
        assert loss == pytest.approx(1.0 - np.sqrt(0.5))

    def test_scale_invariance_in_both_arguments(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            t = rng.uniform(0.1, 1.0, size=(5, 5))
            a = rng.uniform(0.1, 1.0, size=(5, 5))
            base = attention_loss(t, a)
            assert attention_loss(2.5 * t, a) == pytest.approx(base, abs=1e-12)
            assert attention_loss(t, 7.0 * a) == pytest.approx(base, abs=1e-12)


class TestAttentionLossGradient:
    def test_matches_central_differences_on_random_instances(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            h, w = rng.integers(2, 9, size=2)
            target = soften_mask(random_mask(rng, (h, w)), float(rng.uniform(0, 1)))
            attn = rng.uniform(0.05, 1.0, size=(h, w))
            attn /= attn.sum()
            analytic = attention_loss_gradient(target, attn)
            numeric = attention_loss_fd_gradient(target, attn, step=1e-5)
            denom = max(np.linalg.norm(numeric), 1e-12)
            assert np.linalg.norm(analytic - numeric) / denom < 1e-4

    def test_zero_directional_derivative_at_minimum(self):
        rng = np.random.default_rng(7)
        t = rng.uniform(0.1, 1.0, size=(4, 4))
        attn = t / t.sum()
        grad = attention_loss_gradient(t, attn)
        # moving along the target ray leaves the cosine at its maximum
        assert abs(float(grad.ravel() @ t.ravel())) < 1e-12

    def test_scaling_attention_leaves_directional_derivative_zero(self):
        rng = np.random.default_rng(8)
        t = rng.uniform(0.1, 1.0, size=(3, 5))
        a = rng.uniform(0.1, 1.0, size=(3, 5))
        grad = attention_loss_gradient(t, a)
        assert abs(float(grad.ravel() @ a.ravel())) < 1e-12


class TestResizeAndIO:
    def test_identity_when_shapes_match(self):
        m = np.eye(4)
        assert np.array_equal(resize_mask(m, (4, 4)), m)

    def test_downscale_area_average_then_rebinarize(self):
        m = np.zeros((4, 4))
        m[:2, :2] = 1  # one fully-on 2x2 block
        m[0, 2] = 1  # quarter-on block averages 0.25 -> 0
        out = resize_mask(m, (2, 2))
        assert np.array_equal(out, np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_upscale_repeats_blocks(self):
        m = np.array([[1.0, 0.0]])
        out = resize_mask(m, (2, 4))
        assert np.array_equal(out, np.array([[1, 1, 0, 0], [1, 1, 0, 0]], dtype=float))

    def test_non_integer_ratio_rejected(self):
        with pytest.raises(ValueError, match="integer multiple"):
            resize_mask(np.ones((4, 4)), (3, 3))

    def test_mask_file_round_trip_uses_127_rule(self, tmp_path):
        rng = np.random.default_rng(9)
        m = random_mask(rng, (16, 16))
        path = save_mask(tmp_path / "m.png", m)
        assert np.array_equal(load_mask(path), m)

    def test_binarization_boundary(self, tmp_path):
        from PIL import Image

        arr = np.array([[127, 128], [0, 255]], dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / "edge.png")
        loaded = load_mask(tmp_path / "edge.png")
        assert np.array_equal(loaded, np.array([[0.0, 1.0], [0.0, 1.0]]))


class TestValidateAttentionMap:
    def test_accepts_normalized_map(self):
        a = np.full((4, 4), 1 / 16)
        assert validate_attention_map(a).shape == (4, 4)

    def test_rejects_negative(self):
        a = np.full((2, 2), 0.5)
        a[0, 0] = -0.5
        with pytest.raises(ValueError, match="non-negative"):
            validate_attention_map(a)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="sum to 1"):
            validate_attention_map(np.full((2, 2), 0.5))
