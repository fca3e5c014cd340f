import numpy as np
import pytest

from tumorseg.params import Param, ParamTree
from tumorseg.trainkit.optim import sfadamw_init, sfadamw_step


def _tree(**arrays):
    return ParamTree((n, Param(np.asarray(v, np.float32))) for n, v in arrays.items())


def _reference(theta0, grads_at, lr, steps, b1=0.9, b2=0.999, eps=1e-8, wd=0.0, warmup=0):
    """Straight transcription of the update, scalar by scalar."""
    z = x = float(theta0)
    v = 0.0
    sq = 0.0
    for t in range(1, steps + 1):
        lr_t = lr * min(1.0, t / warmup) if warmup else lr
        y = (1 - b1) * z + b1 * x
        g = grads_at(y)
        v = b2 * v + (1 - b2) * g * g
        z = z - lr_t * (g / (np.sqrt(v / (1 - b2**t)) + eps) + wd * y)
        sq += lr_t**2
        c = lr_t**2 / sq
        x = (1 - c) * x + c * z
    return x


@pytest.mark.parametrize("wd,warmup", [(0.0, 0), (0.01, 0), (0.0, 10)])
def test_matches_scalar_reference(wd, warmup):
    target = 1.7
    params = _tree(w=np.array([0.2]))
    state = sfadamw_init(params, lr=0.05, weight_decay=wd, warmup_steps=warmup)
    for _ in range(40):
        state, params = sfadamw_step(state, params, lambda y: {"w": 2 * (y["w"] - target)})
    ref = _reference(np.float32(0.2), lambda y: 2 * (y - target), 0.05, 40, wd=wd, warmup=warmup)
    assert state.x["w"][0] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("theta0,target,lr", [(0.0, 1.0, 0.1), (0.5, -3.0, 0.3)])
def test_scalar_quadratic_converges(theta0, target, lr):
    params = _tree(w=np.array([theta0]))
    state = sfadamw_init(params, lr=lr)
    for _ in range(500):
        state, params = sfadamw_step(state, params, lambda y: (float((y["w"][0] - target) ** 2), {"w": 2 * (y["w"] - target)}))
    assert abs(state.x["w"][0] - target) < 1e-3
    assert abs(params.array("w")[0] - target) < 1e-3


def test_constant_lr_averaging_identity(rng):
    params = _tree(a=rng.normal(size=(4, 3)), b=rng.normal(size=5))
    state = sfadamw_init(params, lr=0.01, weight_decay=0.001)
    zs = []
    for _ in range(60):
        state, params = sfadamw_step(state, params, lambda y: {n: rng.normal(size=y[n].shape) for n in ("a", "b")})
        zs.append({n: state.z[n].copy() for n in state.z})
        for n in state.x:
            avg = np.mean([z[n] for z in zs], axis=0)
            assert np.abs(state.x[n] - avg).max() <= 1e-10


def test_frozen_params_untouched(rng):
    frozen = rng.normal(size=(3, 3)).astype(np.float32)
    params = _tree(w=rng.normal(size=4), f=frozen).with_frozen(lambda n: n == "f")
    state = sfadamw_init(params, lr=0.1)
    assert "f" not in state.z
    seen = []

    def grad_fn(y):
        seen.append(y["f"].copy())
        return {"w": np.ones(4), "f": np.ones((3, 3))}

    for _ in range(5):
        state, params = sfadamw_step(state, params, grad_fn)
    assert params.array("f").tobytes() == frozen.tobytes() and params["f"].frozen
    assert all(np.array_equal(s, frozen) for s in seen)
    assert not np.array_equal(params.array("w"), _tree(w=np.zeros(4)).array("w"))


def test_non_finite_gradient_raises():
    params = _tree(w=np.ones(3))
    state = sfadamw_init(params)
    with pytest.raises(FloatingPointError):
        sfadamw_step(state, params, lambda y: {"w": np.array([1.0, np.nan, 0.0])})


def test_loss_is_recorded():
    params = _tree(w=np.ones(1))
    state = sfadamw_init(params)
    state, _ = sfadamw_step(state, params, lambda y: (4.5, {"w": np.ones(1)}))
    assert state.last_loss == 4.5 and state.t == 1
