import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcflow.metrics import MetricError, bc_violation_mask, epe, fl_all, occlusion_pr, weighted_epe


def const_flow(shape, u, v):
    f = np.zeros(shape + (2,))
    f[..., 0] = u
    f[..., 1] = v
    return f


def test_epe_identity_and_345():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 6, 2))
    assert epe(w, w)[0] == 0.0
    mean, emap = epe(w + const_flow((5, 6), 3.0, 4.0), w)
    assert mean == 5.0
    np.testing.assert_allclose(emap, 5.0, rtol=0, atol=1e-14)


def test_epe_matches_scalar_loop():
    rng = np.random.default_rng(1)
    w, ws = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
    ref = sum(((w[y, x, 0] - ws[y, x, 0]) ** 2 + (w[y, x, 1] - ws[y, x, 1]) ** 2) ** 0.5
              for y in range(4) for x in range(4)) / 16
    assert epe(w, ws)[0] == pytest.approx(ref, abs=1e-14)


def test_epe_valid_mask_and_errors():
    w = np.zeros((2, 2, 2))
    ws = np.zeros((2, 2, 2))
    ws[0, 0] = (10.0, 0.0)
    valid = np.ones((2, 2), bool)
    valid[0, 0] = False
    assert epe(w, ws, valid)[0] == 0.0
    with pytest.raises(MetricError):
        epe(w, ws, np.zeros((2, 2), bool))
    with pytest.raises(MetricError):
        fl_all(w, ws, np.zeros((2, 2), bool))


def test_epe_symmetric_fl_all_asymmetric():
    p = const_flow((1, 1), 80.0, 0.0)
    q = const_flow((1, 1), 76.0, 0.0)
    assert epe(p, q)[0] == epe(q, p)[0] == 4.0
    # EPE 4 exceeds 5% of 76 (3.8) but not 5% of 80 (4.0).
    assert fl_all(p, q) == 100.0
    assert fl_all(q, p) == 0.0


def test_fl_all_examples():
    ws = const_flow((4, 4), 1.0, 0.0)
    assert fl_all(ws, ws) == 0.0
    assert fl_all(ws + const_flow((4, 4), 10.0, 0.0), ws) == 100.0
    ws = const_flow((4, 4), 10.0, 0.0)
    w = ws.copy()
    w[:2, :, 0] += 2.0
    w[2:, :, 0] += 4.0
    assert fl_all(w, ws) == 50.0


def test_scaling_behaviour():
    ws = const_flow((1, 2), 10.0, 0.0)
    w = ws.copy()
    w[..., 0] += 2.0
    s = 2.0
    assert epe(s * w, s * ws)[0] == s * epe(w, ws)[0]
    # Relative condition 2 > 0.5 holds at both scales; only the 3 px condition flips.
    assert fl_all(w, ws) == 0.0
    assert fl_all(s * w, s * ws) == 100.0


def test_weighted_epe_examples():
    ws = np.zeros((2, 2, 2))
    w = np.zeros((2, 2, 2))
    w[0, 0] = (2.0, 0.0)
    w[0, 1] = (0.0, 2.0)
    w[1, 0] = (-2.0, 0.0)
    w[1, 1] = (0.0, 4.0)
    weight = np.array([[1.0, 0.5], [0.0, 0.25]])
    total, mean = weighted_epe(w, ws, weight)
    assert total == 4.0
    assert mean == 4.0 / 1.75
    with pytest.raises(MetricError):
        weighted_epe(w, ws, np.zeros((2, 2)))
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 5, 2)), rng.normal(size=(5, 5, 2))
    assert weighted_epe(a, b, np.ones((5, 5)))[0] == pytest.approx(epe(a, b)[0] * 25, abs=1e-10)
    with pytest.raises(ValueError):
        weighted_epe(a, b, np.full((5, 5), 1.5))


def brute_force_ap(scores, labels):
    """Every distinct score as a threshold, AP as the precision-weighted recall steps."""
    npos = labels.sum()
    points = []
    for t in sorted(set(scores.tolist()), reverse=True):
        det = scores >= t
        tp = np.sum(det & labels)
        points.append((tp / npos, tp / det.sum()))
    ap, prev = 0.0, 0.0
    for r, p in points:
        ap += (r - prev) * p
        prev = r
    return ap, points


def test_pr_perfect_and_constant():
    occ = np.zeros((10, 10), bool)
    occ[:2, :5] = True
    alpha = np.where(occ, 0.9, 0.1)
    assert occlusion_pr(alpha, occ).average_precision == 1.0
    occ7 = np.zeros(100, bool)
    occ7[:7] = True
    curve = occlusion_pr(np.full(100, 0.3), occ7)
    assert abs(curve.average_precision - 0.07) <= 1e-10


def test_pr_hand_case_with_ties():
    scores = np.array([0.9, 0.8, 0.8, 0.7, 0.6, 0.6, 0.5, 0.4, 0.3, 0.1])
    labels = np.array([1, 0, 1, 1, 0, 1, 0, 0, 1, 0], bool)
    curve = occlusion_pr(scores, labels)
    ap, points = brute_force_ap(scores, labels)
    assert curve.average_precision == pytest.approx(ap, abs=1e-12)
    np.testing.assert_allclose(curve.recall[::-1], [r for r, _ in points])
    np.testing.assert_allclose(curve.precision[::-1], [p for _, p in points])
    assert np.all(np.diff(curve.thresholds) > 0)
    assert np.all(np.diff(curve.recall) <= 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), levels=st.integers(2, 6))
def test_pr_matches_brute_force(seed, levels):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, levels, 30) / levels
    labels = rng.random(30) < 0.4
    labels[0] = True
    curve = occlusion_pr(scores, labels)
    assert curve.average_precision == pytest.approx(brute_force_ap(scores, labels)[0], abs=1e-12)
    assert 0.0 <= curve.average_precision <= 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_ap_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 8, 40) / 8.0
    labels = rng.random(40) < 0.3
    labels[3] = True
    base = occlusion_pr(scores, labels).average_precision
    for f in (np.exp, lambda s: 3 * s - 7, lambda s: s ** 3, lambda s: 1 / (1 + np.exp(-5 * s))):
        assert occlusion_pr(f(scores), labels).average_precision == pytest.approx(base, abs=1e-12)


def test_pr_requires_positive():
    with pytest.raises(MetricError):
        occlusion_pr(np.ones(4), np.zeros(4, bool))


def test_violation_mask_threshold():
    div = np.array([0.0, 0.01, 0.0100001, 0.5])
    assert bc_violation_mask(div).tolist() == [False, False, True, True]
    assert list(itertools.compress(range(4), bc_violation_mask(div, 0.2))) == [3]
