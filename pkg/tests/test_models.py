import numpy as np
import pytest

from extdesign.errors import ModelError, RegistryError
from extdesign.models import (Box, FiniteSet, builtin_model, builtin_names, eval_response,
                              linear_model, response_hessian, response_jacobian)

RNG_SEED = 7


def _random_inputs(name, rng):
    if name == "circle":
        return np.array([rng.uniform(0, np.pi / 2), rng.uniform(0, 7 * np.pi / 4)]), rng.uniform(-1, 1, 1)
    if name == "bilinear2d":
        return rng.uniform(0, 1, 2), np.array([rng.uniform(-3, 4), rng.uniform(-2, 2)])
    return rng.uniform(0.1, 24, 1), np.array([rng.uniform(16, 27), rng.uniform(0.03, 0.08), rng.uniform(3, 6)])


def _central_jac(model, x, theta, h):
    out = np.empty(model.p)
    for j in range(model.p):
        e = np.zeros(model.p)
        e[j] = h[j]
        out[j] = (eval_response(model, x, theta + e) - eval_response(model, x, theta - e)) / (2 * h[j])
    return out


def _central_hess(model, x, theta, h):
    out = np.empty((model.p, model.p))
    for j in range(model.p):
        e = np.zeros(model.p)
        e[j] = h[j]
        out[j] = (response_jacobian(model, x, theta + e) - response_jacobian(model, x, theta - e)) / (2 * h[j])
    return out


@pytest.mark.parametrize("name", ["circle", "bilinear2d", "pk1"])
def test_analytic_derivatives_match_central_differences(name):
    model = builtin_model(name)
    rng = np.random.default_rng(RNG_SEED)
    for _ in range(100):
        x, theta = _random_inputs(name, rng)
        h = 1e-5 * np.maximum(1.0, np.abs(theta))
        J = response_jacobian(model, x, theta)
        Jfd = _central_jac(model, x, theta, h)
        assert np.allclose(J, Jfd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(J).max()))
        H = response_hessian(model, x, theta)
        Hfd = _central_hess(model, x, theta, h)
        assert np.allclose(H, Hfd, rtol=1e-4, atol=1e-4 * max(1.0, np.abs(H).max()))
        assert np.allclose(H, H.T)


def test_finite_difference_fallback_matches_analytic():
    ref = builtin_model("pk1")
    bare = type(ref)("pk1-bare", 3, 1, ref.response)
    x, theta = np.array([2.0]), np.array([21.8, 0.05884, 4.298])
    assert np.allclose(bare.jac(x, theta), ref.jac(x, theta), rtol=1e-6)
    assert np.allclose(bare.hess(x, theta), ref.hess(x, theta), rtol=1e-3, atol=1e-6)


def test_circle_response_values():
    model = builtin_model("circle", r=2.0)
    assert eval_response(model, [0.0, np.pi], [1.0]) == pytest.approx(2 * np.cos(-np.pi))
    assert eval_response(model, [np.pi / 2, 1.0], [0.0]) == pytest.approx(0.0, abs=1e-15)


def test_bilinear_response_formula():
    model = builtin_model("bilinear2d")
    a, b = 0.3, -0.7
    for x1, x2 in [(0, 0), (0, 1), (1, 0), (1, 1), (0.25, 0.5)]:
        expected = a * x1 + a ** 3 * (1 - x1) + b * x2 + b ** 2 * (1 - x2)
        assert eval_response(model, [x1, x2], [a, b]) == pytest.approx(expected)


def test_pk1_vanishes_at_time_zero():
    model = builtin_model("pk1")
    assert eval_response(model, [0.0], [21.8, 0.05884, 4.298]) == 0.0


def test_batch_evaluation_broadcasts():
    model = builtin_model("pk1")
    X = np.linspace(0.5, 20, 7)[:, None]
    thetas = np.array([[21.8, 0.05884, 4.298], [20.0, 0.05, 3.5]])
    E = model.eta(X[None, :, :], thetas[:, None, :])
    assert E.shape == (2, 7)
    assert E[1, 3] == pytest.approx(eval_response(model, X[3], thetas[1]))


@pytest.mark.parametrize("x, theta", [([1.0, 2.0], [21.8, 0.05, 4.0]), ([1.0], [21.8, 0.05])])
def test_dimension_mismatch_raises(x, theta):
    with pytest.raises(ModelError):
        eval_response(builtin_model("pk1"), x, theta)


def test_registry():
    assert set(builtin_names()) == {"circle", "bilinear2d", "pk1"}
    with pytest.raises(RegistryError):
        builtin_model("logistic")
    with pytest.raises(ModelError):
        builtin_model("circle", r=-1.0)


def test_linear_model_has_constant_jacobian_and_zero_hessian():
    model = linear_model(lambda x: np.stack([np.ones_like(x[..., 0]), x[..., 0]], -1), p=2, d=1)
    J1 = response_jacobian(model, [0.5], [1.0, 2.0])
    J2 = response_jacobian(model, [0.5], [-4.0, 7.0])
    assert np.array_equal(J1, J2)
    assert np.array_equal(J1, [1.0, 0.5])
    assert np.all(response_hessian(model, [0.5], [1.0, 2.0]) == 0)


def test_box_and_finite_set_validation():
    box = Box([0.0, -1.0], [1.0, 1.0])
    assert box.dim == 2
    assert box.diameter == pytest.approx(np.sqrt(5))
    assert box.contains([0.5, 0.0]) and not box.contains([2.0, 0.0])
    assert np.allclose(box.from_unit(box.to_unit([0.3, 0.2])), [0.3, 0.2])
    with pytest.raises(ModelError):
        Box([1.0], [0.0])
    with pytest.raises(ModelError):
        FiniteSet(np.array([[1.0], [1.0]]))
    assert FiniteSet(np.array([[0.0], [3.0]])).diameter == 3.0
