import numpy as np
import pytest

from subband_kd.network import (AdamState, DivergenceError, ModelParams, ShapeError, adam_step,
                                backward, forward, init_params, param_count, param_shapes,
                                zeros_like)

from .helpers import fd_gradient_error


@pytest.mark.parametrize("w,h,expected", [
    (161, 256, 2_517_665),
    (40, 256, 2_207_784),
    (161, 512, 9_229_473),
    (40, 512, 8_609_832),
])
def test_param_count_reference_values(w, h, expected):
    assert param_count(w, h) == expected
    assert init_params(w, h).size == expected


@pytest.mark.parametrize("w,h,millions", [(161, 256, 2.52), (40, 256, 2.21),
                                          (161, 512, 9.23), (40, 512, 8.61)])
def test_param_count_rounds_to_millions(w, h, millions):
    assert round(param_count(w, h) / 1e6, 2) == millions


def test_param_count_smallest_model():
    # the closed form evaluates to 75 at w = h = 1
    assert param_count(1, 1) == 75
    assert sum(int(np.prod(s)) for s in param_shapes(1, 1).values()) == 75


def test_param_count_rejects_nonpositive():
    with pytest.raises(ValueError):
        param_count(0, 4)


def zero_params(w, h):
    return ModelParams(w, h, {k: np.zeros(s) for k, s in param_shapes(w, h).items()})


def test_zero_params_give_zero_output():
    x = np.random.default_rng(0).standard_normal((7, 6))
    assert not np.any(forward(zero_params(6, 5), x))


def test_output_shape_and_nonnegative():
    rng = np.random.default_rng(1)
    p = init_params(6, 5, rng)
    x = rng.standard_normal((7, 6)) * 3
    y = forward(p, x)
    assert y.shape == (7, 6)
    assert np.all(y >= 0)
    yb = forward(p, np.stack([x, x[::-1]]))
    assert yb.shape == (2, 7, 6)
    np.testing.assert_allclose(yb[0], y, atol=1e-14)


def test_width_mismatch():
    with pytest.raises(ShapeError):
        forward(init_params(6, 5), np.zeros((7, 5)))


def test_forward_deterministic():
    rng = np.random.default_rng(2)
    p = init_params(6, 5, rng)
    x = rng.standard_normal((9, 6))
    assert forward(p, x).tobytes() == forward(p, x).tobytes()


def mirrored(p: ModelParams) -> ModelParams:
    """Parameters of the time-reversed network.

    Swapping the directions also flips the [forward, backward] concatenation that
    feeds layer 2 and the output stage, so those input columns swap halves too.
    """
    q = p.swap_directions()
    h = p.h
    for name in ("l2.fw.w_ih", "l2.bw.w_ih", "out.weight"):
        a = q.arrays[name]
        q.arrays[name] = np.concatenate([a[:, h:], a[:, :h]], axis=1)
    return q


def test_bidirectional_symmetry():
    rng = np.random.default_rng(3)
    p = init_params(6, 5, rng)
    x = rng.standard_normal((7, 6))
    np.testing.assert_allclose(forward(mirrored(p), x[::-1]), forward(p, x)[::-1], atol=1e-12)


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(4)
    p = init_params(6, 5, rng)
    g = backward(p, rng.standard_normal((7, 6)), np.zeros((7, 6)))
    assert set(g) == set(p.arrays)
    assert all(not np.any(v) for v in g.values())


def test_gradient_doubles_with_upstream():
    rng = np.random.default_rng(5)
    p = init_params(6, 5, rng)
    x = rng.standard_normal((7, 6))
    up = rng.standard_normal((7, 6))
    g1 = backward(p, x, up)
    g2 = backward(p, x, 2 * up)
    for k in g1:
        np.testing.assert_array_equal(g2[k], 2 * g1[k])


def test_upstream_shape_checked():
    p = init_params(6, 5)
    with pytest.raises(ShapeError):
        backward(p, np.zeros((7, 6)), np.zeros((6, 6)))


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed):
    assert fd_gradient_error(seed) < 1e-4


def test_backward_uses_supplied_cache():
    rng = np.random.default_rng(6)
    p = init_params(4, 3, rng)
    x = rng.standard_normal((2, 5, 4))
    up = rng.standard_normal((2, 5, 4))
    y, cache = forward(p, x, return_cache=True)
    g_cached = backward(p, x, up, cache)
    g_fresh = backward(p, x, up)
    for k in g_fresh:
        np.testing.assert_array_equal(g_cached[k], g_fresh[k])


def scalar_model_state(value=0.0):
    p = init_params(1, 1)
    for a in p.arrays.values():
        a[...] = value
    return p, AdamState.for_params(p)


def test_adam_first_step_hand_computed():
    p, state = scalar_model_state()
    grads = {k: np.ones_like(v) for k, v in p.arrays.items()}
    adam_step(p, grads, state, lr=2e-4)
    expected = -2e-4 / (1 + 1e-8)
    for a in p.arrays.values():
        np.testing.assert_allclose(a, expected, rtol=1e-12)
    assert state.t == 1


def test_adam_zero_gradient_leaves_params():
    rng = np.random.default_rng(7)
    p = init_params(3, 2, rng)
    before = p.copy()
    state = AdamState.for_params(p)
    adam_step(p, zeros_like(p), state, lr=1e-3)
    assert state.t == 1
    for k in p.arrays:
        np.testing.assert_array_equal(p[k], before[k])


def test_adam_identical_entries_update_identically():
    p, state = scalar_model_state(0.3)
    grads = {k: np.full_like(v, -0.7) for k, v in p.arrays.items()}
    for _ in range(3):
        adam_step(p, grads, state, lr=1e-2)
    values = np.concatenate([a.ravel() for a in p.arrays.values()])
    assert np.all(values == values[0])
    assert np.all(state.v["out.bias"] >= 0)


def test_adam_nonfinite_gradient_diverges():
    p, state = scalar_model_state()
    grads = {k: np.ones_like(v) for k, v in p.arrays.items()}
    grads["l1.fw.w_hh"][0, 0] = np.nan
    with pytest.raises(DivergenceError, match="diverged"):
        adam_step(p, grads, state, lr=1e-3)


def test_params_reject_bad_shapes():
    p = init_params(3, 2)
    arrays = dict(p.arrays)
    arrays["out.bias"] = np.zeros(4)
    with pytest.raises(ShapeError):
        ModelParams(3, 2, arrays)
