import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcflow.decompose import DecompositionConfig, compute_alpha_star, decompose_flow
from bcflow.photometric import SigmoidParams, bc_divergence
from bcflow.synth import Mover, SceneError, SceneSpec, generate_scene, random_scene_spec


def square_scene(**kw):
    return SceneSpec(size=(32, 32), seed=3, movers=(Mover(10, 12, (8, 8), (3, 0)),), **kw)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**40), bg=st.sampled_from(["noise", "gradient", "perlin"]))
def test_same_seed_bit_identical(seed, bg):
    spec = random_scene_spec(seed, background=bg)
    a, b = generate_scene(spec), generate_scene(SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))))
    for x, y in ((a.i1, b.i1), (a.i2, b.i2), (a.flow, b.flow), (a.occlusion, b.occlusion)):
        assert np.array_equal(x, y)


def test_different_seeds_differ():
    assert not np.array_equal(generate_scene(SceneSpec(seed=1)).i1, generate_scene(SceneSpec(seed=2)).i1)


@pytest.mark.parametrize("bg", ["noise", "gradient", "perlin"])
def test_no_movers_is_identity(bg):
    s = generate_scene(SceneSpec(size=(20, 24), seed=5, background=bg))
    assert np.array_equal(s.i1, s.i2)
    assert np.all(s.flow == 0) and not s.occlusion.any()
    assert s.i1.min() >= 0 and s.i1.max() <= 1


def test_square_mover_geometry():
    s = generate_scene(square_scene())
    assert np.all(s.flow[12:20, 10:18] == (3.0, 0.0))
    assert np.count_nonzero(np.any(s.flow != 0, axis=2)) == 64
    # Background columns 18..20 are covered by the mover's leading edge in I2.
    expected = np.zeros((32, 32), bool)
    expected[12:20, 18:21] = True
    assert np.array_equal(s.occlusion, expected)
    div = bc_divergence(s.i1, s.i2, s.flow)
    assert np.all(div[12:20, 10:18] == 0.0)
    assert np.all(div[~s.occlusion] == 0.0)


def test_square_mover_decomposition():
    s = generate_scene(square_scene())
    cfg = DecompositionConfig()
    dec = decompose_flow(s.i1, s.i2, s.flow, cfg)
    inner = dec.feasible[12:20, 10:18]
    assert inner.all()
    w_p = dec.w_p_star[12:20, 10:18]
    # The true displacement is a candidate, so w_p* is never longer than it.
    assert np.all(np.hypot(w_p[..., 0], w_p[..., 1]) <= 3.0 + 1e-9)
    np.testing.assert_allclose(dec.reconstruct()[12:20, 10:18], s.flow[12:20, 10:18], atol=1e-6)


def test_clean_scene_attains_minimum_alpha():
    spec = random_scene_spec(11)
    s = generate_scene(spec)
    sp = SigmoidParams()
    alpha = compute_alpha_star(s.i1, s.i2, s.flow, sp)
    floor = 1.0 / (1.0 + np.exp(sp.k * sp.center))
    assert np.all(alpha[~s.occlusion] == floor)


@pytest.mark.parametrize("f", [0.1, 0.3, 0.7])
def test_fog_divergence_closed_form(f):
    base = square_scene()
    s = generate_scene(base.with_(fog_strength=f))
    div = bc_divergence(s.i1, s.i2, s.flow)
    expected = f * np.mean(np.abs(s.i1 - 0.5), axis=2)
    np.testing.assert_allclose(div[~s.occlusion], expected[~s.occlusion], atol=1e-12)


def alpha_for(spec):
    s = generate_scene(spec)
    return compute_alpha_star(s.i1, s.i2, s.flow), s.occlusion


def test_alpha_monotone_in_fog_on_visible_pixels():
    spec = random_scene_spec(21)
    runs = [alpha_for(spec.with_(fog_strength=f)) for f in (0.0, 0.2, 0.4, 0.6, 0.8)]
    visible = ~runs[0][1]
    for (a, _), (b, _) in zip(runs, runs[1:]):
        assert np.all(b[visible] >= a[visible])


def test_alpha_can_fall_with_fog_on_occluded_pixels():
    # Occluded pixels compare against a different surface; fog can pull it toward I1.
    spec = random_scene_spec(21)
    a, occ = alpha_for(spec)
    b, _ = alpha_for(spec.with_(fog_strength=0.4))
    assert np.any(b[occ] < a[occ])


@pytest.mark.parametrize("gains", [(1.0, 1.1, 1.3, 1.6), (1.0, 0.9, 0.7, 0.4)])
def test_alpha_monotone_in_gain(gains):
    spec = random_scene_spec(22)
    runs = [alpha_for(spec.with_(global_illumination_gain=g)) for g in gains]
    visible = ~runs[0][1]
    for (a, _), (b, _) in zip(runs, runs[1:]):
        assert np.all(b[visible] >= a[visible])


def test_mover_gain_affects_only_that_mover():
    base = square_scene()
    bright = base.with_(movers=(Mover(10, 12, (8, 8), (3, 0), gain=1.5),))
    s0, s1 = generate_scene(base), generate_scene(bright)
    changed = np.any(s0.i2 != s1.i2, axis=2)
    assert changed.any() and not changed[:, :13].any() and not changed[:, 21:].any()
    assert np.array_equal(s0.i1, s1.i1)


def test_disk_mover_mask():
    s = generate_scene(SceneSpec(size=(24, 24), movers=(Mover(4, 4, (9, 9), (2, 1), "disk"),)))
    moving = np.any(s.flow != 0, axis=2)
    assert not moving[4, 4] and moving[8, 8]
    assert moving.sum() < 81


@pytest.mark.parametrize("bad", [
    dict(movers=(Mover(0, 0, (8, 8), (-1, 0)),)),
    dict(movers=(Mover(28, 0, (8, 8), (0, 0)),)),
    dict(movers=(Mover(0, 0, (8, 8), (9, 0)),)),
    dict(movers=(Mover(0, 0, (8, 8), (4, 0)), Mover(10, 0, (8, 8), (-4, 0)))),
    dict(movers=(Mover(0, 0, (8, 8), (0, 0)), Mover(4, 4, (8, 8), (0, 0)))),
    dict(movers=(Mover(2, 2, (4, 4), (1.5, 0)),)),
    dict(movers=(Mover(2, 2, (4, 4), (1, 0), gain=0.0),)),
    dict(fog_strength=1.0),
    dict(global_illumination_gain=-1.0),
    dict(background="plasma"),
])
def test_invalid_specs_rejected(bad):
    with pytest.raises(SceneError):
        generate_scene(SceneSpec(size=(32, 32), **bad))


def test_unknown_json_key_rejected():
    with pytest.raises(SceneError):
        SceneSpec.from_dict({"size": [8, 8], "colour": 1})


def test_random_specs_are_valid():
    for seed in range(40):
        spec = random_scene_spec(seed, n_movers=3)
        s = generate_scene(spec)
        assert s.i1.shape == (32, 32, 3)
        assert len(spec.movers) >= 1
