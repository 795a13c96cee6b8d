import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from src.errors import ConfigError, InputError, NumericError, ShapeError
from src.losses import (
    alignment_loss,
    contrastive_loss,
    cosine_sim,
    joint_score_loss,
    uniformity_loss,
)


def _t(rows):
    return torch.tensor(rows, dtype=torch.float64)


def _alignment_double_loop(H, H_plus):
    total = 0.0
    for i in range(len(H)):
        total += sum((H[i][k] - H_plus[i][k]) ** 2 for k in range(len(H[i])))
    return math.log(total / len(H))


def _uniformity_double_loop(H):
    terms = []
    for i in range(len(H)):
        for j in range(i + 1, len(H)):
            sq = sum((H[i][k] - H[j][k]) ** 2 for k in range(len(H[i])))
            terms.append(math.exp(-2.0 * sq))
    return math.log(sum(terms) / len(terms))


class TestCosineSim:
    def test_orthogonal(self):
        assert cosine_sim(_t([1, 0]), _t([0, 1])).item() == 0.0

    def test_colinear(self):
        assert cosine_sim(_t([1, 2]), _t([2, 4])).item() == pytest.approx(1.0, abs=1e-15)

    def test_antipodal(self):
        assert cosine_sim(_t([1, 0]), _t([-1, 0])).item() == -1.0

    def test_integer_input(self):
        assert cosine_sim(torch.tensor([3, 4]), torch.tensor([3, 4])).item() == pytest.approx(1.0)

    def test_zero_norm(self):
        with pytest.raises(NumericError):
            cosine_sim(_t([0, 0]), _t([1, 0]))


class TestContrastiveLoss:
    def test_single_pair_is_zero(self):
        H = _t([[0.3, -1.2, 2.0]])
        assert abs(contrastive_loss(H, H * 2, 0.05).item()) < 1e-12

    def test_identical_rows_give_log_n(self):
        H = _t([[1.0, 2.0, 3.0]] * 4)
        for tau in (0.05, 1.0, 7.0):
            assert contrastive_loss(H, H.clone(), tau).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_near_diagonal(self):
        H = _t([[1, 0], [0, 1]])
        expected = math.log1p(math.exp(-20.0))
        assert contrastive_loss(H, H.clone(), 0.05).item() == pytest.approx(expected, abs=1e-12)

    def test_scale_invariance(self):
        g = torch.Generator().manual_seed(0)
        H = torch.randn(6, 5, generator=g, dtype=torch.float64)
        H_plus = torch.randn(6, 5, generator=g, dtype=torch.float64)
        base = contrastive_loss(H, H_plus, 0.1).item()
        for c in (1e-6, 3.0, 1e4):
            assert contrastive_loss(H * c, H_plus * c, 0.1).item() == pytest.approx(base, rel=1e-9)

    def test_nonnegative(self):
        g = torch.Generator().manual_seed(1)
        for _ in range(20):
            H = torch.randn(5, 4, generator=g, dtype=torch.float64)
            assert contrastive_loss(H, H + 0.1 * torch.randn(5, 4, generator=g, dtype=torch.float64), 0.05) >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            contrastive_loss(_t([[1, 0]]), _t([[1, 0], [0, 1]]), 0.05)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            contrastive_loss(_t([[1, 0]]), _t([[1, 0]]), 0.0)


class TestAlignmentLoss:
    def test_identical_pairs_hit_clamp(self):
        H = _t([[1, 0], [0, 1]])
        assert alignment_loss(H, H.clone(), 1e-12).item() == pytest.approx(math.log(1e-12))

    def test_orthogonal_pair(self):
        assert alignment_loss(_t([[1, 0]]), _t([[0, 1]])).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_mean_then_log(self):
        H = _t([[0, 0], [0, 0]])
        H_plus = _t([[1, 0], [math.sqrt(3), 0]])
        assert alignment_loss(H, H_plus).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n, d = rng.integers(1, 6), rng.integers(1, 5)
            H, H_plus = rng.normal(size=(n, d)), rng.normal(size=(n, d))
            got = alignment_loss(torch.from_numpy(H), torch.from_numpy(H_plus)).item()
            assert got == pytest.approx(_alignment_double_loop(H.tolist(), H_plus.tolist()), abs=1e-9)

    def test_permutation_invariant(self):
        g = torch.Generator().manual_seed(2)
        H = torch.randn(7, 3, generator=g, dtype=torch.float64)
        H_plus = torch.randn(7, 3, generator=g, dtype=torch.float64)
        perm = torch.randperm(7, generator=g)
        torch.testing.assert_close(alignment_loss(H, H_plus), alignment_loss(H[perm], H_plus[perm]))


class TestUniformityLoss:
    def test_antipodal(self):
        assert uniformity_loss(_t([[1, 0], [-1, 0]])).item() == pytest.approx(-8.0, abs=1e-12)

    def test_orthogonal(self):
        assert uniformity_loss(_t([[1, 0], [0, 1]])).item() == pytest.approx(-4.0, abs=1e-12)

    def test_collapsed_batch(self):
        assert uniformity_loss(_t([[0.6, 0.8]] * 3)).item() == pytest.approx(0.0, abs=1e-15)

    def test_four_points_on_circle(self):
        x = _t([[0, 1], [1, 0], [0, -1], [-1, 0]])
        expected = math.log(1 / 3) + math.log(2.0 + math.exp(-4.0)) - 4.0
        assert uniformity_loss(x).item() == pytest.approx(expected, abs=1e-12)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n, d = rng.integers(2, 7), rng.integers(1, 5)
            H = rng.normal(size=(n, d))
            H /= np.linalg.norm(H, axis=1, keepdims=True)
            got = uniformity_loss(torch.from_numpy(H)).item()
            assert got == pytest.approx(_uniformity_double_loop(H.tolist()), abs=1e-9)

    def test_nonpositive_on_unit_rows(self):
        g = torch.Generator().manual_seed(3)
        for _ in range(20):
            H = F.normalize(torch.randn(6, 4, generator=g, dtype=torch.float64), dim=-1)
            assert uniformity_loss(H).item() <= 0.0

    def test_gradient_finite_for_duplicate_rows(self):
        H = _t([[0.6, 0.8], [0.6, 0.8], [1.0, 0.0]]).requires_grad_(True)
        uniformity_loss(H).backward()
        assert torch.isfinite(H.grad).all()

    def test_needs_two_rows(self):
        with pytest.raises(InputError):
            uniformity_loss(_t([[1, 0]]))


class TestJointScoreLoss:
    def test_linear_combination(self):
        assert joint_score_loss(0.6931, -4.0, 0.5) == pytest.approx(-1.65345)

    def test_boundaries_are_exact(self):
        align, uniform = torch.tensor(0.123), torch.tensor(-2.5)
        assert joint_score_loss(align, uniform, 1.0) is align
        assert joint_score_loss(align, uniform, 0.0) is uniform

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            joint_score_loss(0.0, 0.0, 1.5)

    def test_monotone_in_each_argument(self):
        assert joint_score_loss(1.0, -3.0, 0.25) > joint_score_loss(0.5, -3.0, 0.25)
        assert joint_score_loss(0.5, -2.0, 0.25) > joint_score_loss(0.5, -3.0, 0.25)
