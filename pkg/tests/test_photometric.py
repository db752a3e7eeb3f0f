import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcflow.core import ShapeError, warp_image
from bcflow.photometric import (PhotometricKind, SigmoidParams, bc_divergence, uncertainty_from_divergence,
                                weighted_photometric_loss)

KINDS = [PhotometricKind.l1(), PhotometricKind.charbonnier(1e-3), PhotometricKind.census(), PhotometricKind.ssim()]


def _pair(seed=0, shape=(12, 14, 3)):
    rng = np.random.default_rng(seed)
    i2 = rng.random(shape)
    flow = rng.uniform(-1.5, 1.5, shape[:2] + (2,))
    i1, _ = warp_image(i2, flow)
    return i1, i2, flow


def test_exact_warp_gives_zero_l1():
    i1, i2, flow = _pair()
    assert np.all(bc_divergence(i1, i2, flow) == 0.0)


def test_single_pixel_l1():
    i1 = np.full((4, 4), 0.5)
    i2 = i1.copy()
    i2[2, 1] = 0.75
    div = bc_divergence(i1, i2, np.zeros((4, 4, 2)))
    assert div[2, 1] == 0.25
    assert np.count_nonzero(div) == 1


def test_l1_is_channel_mean():
    i1 = np.zeros((2, 2, 3))
    i2 = np.zeros((2, 2, 3))
    i2[0, 0] = (0.3, 0.0, 0.6)
    div = bc_divergence(i1, i2, np.zeros((2, 2, 2)))
    assert div[0, 0] == pytest.approx(0.3, abs=1e-15)


def test_charbonnier_at_zero():
    img = np.random.default_rng(3).random((5, 5, 3))
    div = bc_divergence(img, img, np.zeros((5, 5, 2)), PhotometricKind.charbonnier(1e-3))
    np.testing.assert_allclose(div, 1e-3, rtol=1e-12)


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.name)
def test_divergence_nonnegative(kind):
    rng = np.random.default_rng(4)
    div = bc_divergence(rng.random((16, 16, 3)), rng.random((16, 16, 3)), rng.normal(size=(16, 16, 2)), kind)
    assert np.all(div >= 0)


@pytest.mark.parametrize("kind", [PhotometricKind.l1(), PhotometricKind.census()], ids=lambda k: k.name)
def test_zero_on_perfect_match(kind):
    i1, i2, flow = _pair(5)
    assert np.max(bc_divergence(i1, i2, flow, kind)) <= 1e-12


def test_census_and_ssim_ranges():
    rng = np.random.default_rng(6)
    i1, i2 = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    for kind in (PhotometricKind.census(), PhotometricKind.ssim()):
        div = bc_divergence(i1, i2, np.zeros((16, 16, 2)), kind)
        assert div.min() >= 0 and div.max() <= 1
        assert div.mean() > 0.1


def test_census_offset_invariance():
    # Dyadic intensities keep the offset arithmetic exact.
    rng = np.random.default_rng(7)
    i1 = rng.integers(0, 96, (12, 12)) / 256.0
    i2 = rng.integers(0, 96, (12, 12)) / 256.0
    flow = np.zeros((12, 12, 2))
    kind = PhotometricKind.census()
    base = bc_divergence(i1, i2, flow, kind)
    shifted = bc_divergence(i1 + 0.25, i2 + 0.25, flow, kind)
    np.testing.assert_array_equal(base, shifted)


def test_divergence_rejects_mismatch():
    with pytest.raises(ShapeError):
        bc_divergence(np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4, 2)))


@pytest.mark.parametrize("div,k,expected", [
    (0.5, 1.0, 0.5),
    (0.5, 20.0, 0.5),
    (0.0, 1.0, 1.0 / (1.0 + math.exp(0.5))),
    (1.0, 20.0, 1.0 / (1.0 + math.exp(-10.0))),
])
def test_sigmoid_values(div, k, expected):
    alpha = uncertainty_from_divergence(np.array([div]), SigmoidParams(0.5, k))
    assert alpha[0] == pytest.approx(expected, abs=1e-15)


def test_sigmoid_reference_decimals():
    a = uncertainty_from_divergence(np.array([0.0, 1.0]), SigmoidParams(0.5, 1.0))
    assert round(a[0], 5) == 0.37754
    b = uncertainty_from_divergence(np.array([1.0]), SigmoidParams(0.5, 20.0))
    assert round(b[0], 7) == 0.9999546


def test_sigmoid_rejects_bad_input():
    with pytest.raises(ValueError):
        uncertainty_from_divergence(np.array([np.nan]))
    with pytest.raises(ValueError):
        SigmoidParams(k=0.0)


@settings(max_examples=50, deadline=None)
@given(d1=st.floats(0, 1), d2=st.floats(0, 1), k=st.floats(0.1, 20))
def test_sigmoid_monotone_in_open_interval(d1, d2, k):
    lo, hi = sorted((d1, d2))
    a = uncertainty_from_divergence(np.array([lo, hi]), SigmoidParams(0.5, k))
    assert 0 < a[0] < 1 and 0 < a[1] < 1
    assert a[0] <= a[1]
    if hi - lo > 1e-6:
        assert a[0] < a[1]


def test_weighted_loss_zero_cases():
    rng = np.random.default_rng(8)
    i1, i2 = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    flow = rng.normal(size=(6, 6, 2))
    assert weighted_photometric_loss(i1, i2, flow, np.ones((6, 6))) == (0.0, 0.0)
    j1, j2, f = _pair(9, (6, 6, 3))
    assert weighted_photometric_loss(j1, j2, f, rng.random((6, 6)))[0] == 0.0


def test_weighted_loss_hand_instance():
    i1 = np.full((4, 4, 3), 0.5)
    i2 = i1.copy()
    i2[1, 2] = (0.7, 0.6, 0.8)  # channel-mean |diff| = (0.2 + 0.1 + 0.3) / 3 = 0.2
    alpha = np.zeros((4, 4))
    alpha[1, 2] = 0.25
    total, mean = weighted_photometric_loss(i1, i2, np.zeros((4, 4, 2)), alpha)
    assert total == pytest.approx(0.15, abs=1e-12)
    assert mean == pytest.approx(0.15 / 16, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_weighted_loss_nonincreasing_in_alpha(seed):
    rng = np.random.default_rng(seed)
    i1, i2 = rng.random((5, 5, 3)), rng.random((5, 5, 3))
    flow = rng.normal(size=(5, 5, 2))
    a1 = rng.random((5, 5))
    a2 = np.minimum(1.0, a1 + rng.random((5, 5)) * 0.5)
    assert weighted_photometric_loss(i1, i2, flow, a2)[0] <= weighted_photometric_loss(i1, i2, flow, a1)[0]
