import numpy as np
import pytest

from topofuse.rng import Stream


def test_streams_are_deterministic():
    a = Stream(key=42).uniforms(100)
    b = Stream(key=42).uniforms(100)
    assert np.array_equal(a, b)


def test_counter_advances():
    s = Stream(key=42)
    first = s.uniforms(10)
    second = s.uniforms(10)
    assert not np.array_equal(first, second)
    # one stream drawing 20 equals two consecutive draws of 10
    joint = Stream(key=42).uniforms(20)
    assert np.array_equal(joint, np.concatenate([first, second]))


def test_spawn_gives_independent_reproducible_children():
    parent = Stream(key=7)
    c1 = parent.spawn("epoch", 3).uniforms(8)
    c2 = parent.spawn("epoch", 4).uniforms(8)
    assert not np.array_equal(c1, c2)
    again = Stream(key=7).spawn("epoch", 3).uniforms(8)
    assert np.array_equal(c1, again)


def test_uniform_range_and_moments():
    u = Stream(key=1).uniforms(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    for k in (1, 2, 3):
        assert np.mean(u ** k) == pytest.approx(1.0 / (k + 1), rel=2e-2)


def test_normals_moments():
    z = Stream(key=2).normals(200_000)
    assert np.mean(z) == pytest.approx(0.0, abs=0.01)
    assert np.std(z) == pytest.approx(1.0, rel=0.01)
    assert np.mean(z ** 3) == pytest.approx(0.0, abs=0.05)


def test_integers_in_range():
    v = Stream(key=3).integers(10_000, 2, 7)
    assert v.min() >= 2 and v.max() <= 6
    assert set(np.unique(v)) == {2, 3, 4, 5, 6}


def test_permutation_is_a_permutation():
    s = Stream(key=4)
    p = s.permutation(50)
    assert sorted(p.tolist()) == list(range(50))
