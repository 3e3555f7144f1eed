import math

import numpy as np
import pytest

from topofuse.losses import barlow_loss, nt_xent
from topofuse.nn import Tensor
from topofuse.rng import Stream

from gradcheck import finite_difference_check


class TestNtXent:
    def test_hand_computed_orthogonal_case(self):
        # two instances, views identical per instance, instances orthogonal:
        # every anchor sees positive e^1 against denominators e^1 + 2 e^0
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss = nt_xent(Tensor(z), Tensor(z), temperature=1.0)
        assert loss.item() == pytest.approx(math.log(1.0 + 2.0 * math.exp(-1.0)))

    def test_scale_invariance(self):
        s = Stream(key=1)
        a = s.normals((5, 8))
        b = s.normals((5, 8))
        base = nt_xent(Tensor(a), Tensor(b)).item()
        scaled = nt_xent(Tensor(10.0 * a), Tensor(10.0 * b)).item()
        assert scaled == pytest.approx(base, rel=1e-12)

    def test_instance_permutation_leaves_loss_unchanged(self):
        s = Stream(key=2)
        a, b = s.normals((6, 4)), s.normals((6, 4))
        perm = Stream(key=3).permutation(6)
        base = nt_xent(Tensor(a), Tensor(b)).item()
        permuted = nt_xent(Tensor(a[perm]), Tensor(b[perm])).item()
        assert permuted == pytest.approx(base, rel=1e-12)

    def test_aligned_positives_beat_random(self):
        s = Stream(key=4)
        a = s.normals((8, 16))
        aligned = nt_xent(Tensor(a), Tensor(a)).item()
        random = nt_xent(Tensor(a), Tensor(s.normals((8, 16)))).item()
        assert aligned < random

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            nt_xent(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0]]))

    def test_gradcheck(self):
        s = Stream(key=5)
        a = Tensor(s.normals((4, 6)), requires_grad=True)
        b = Tensor(s.normals((4, 6)), requires_grad=True)
        worst = finite_difference_check(
            lambda: nt_xent(a, b, temperature=0.5), [a, b], Stream(key=6), n_coords=12)
        assert worst < 1e-6


class TestBarlow:
    def test_identical_decorrelated_views_give_zero(self):
        # standardized features that are exactly decorrelated across the batch
        n = 8
        base = np.stack([np.cos(2 * np.pi * np.arange(n) / n),
                         np.sin(2 * np.pi * np.arange(n) / n)], axis=1)
        z = base / base.std(axis=0, keepdims=True)
        loss = barlow_loss(Tensor(z), Tensor(z)).item()
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_constant_feature_guarded(self):
        z = np.ones((4, 3))
        loss = barlow_loss(Tensor(z), Tensor(z)).item()
        assert np.isfinite(loss)

    def test_zero_iff_identity_cross_correlation(self):
        s = Stream(key=7)
        a = s.normals((16, 4))
        b = s.normals((16, 4))
        assert barlow_loss(Tensor(a), Tensor(b)).item() > 1e-3

    def test_gradcheck(self):
        s = Stream(key=8)
        a = Tensor(s.normals((5, 4)), requires_grad=True)
        b = Tensor(s.normals((5, 4)), requires_grad=True)
        worst = finite_difference_check(
            lambda: barlow_loss(a, b), [a, b], Stream(key=9), n_coords=10)
        assert worst < 1e-6
