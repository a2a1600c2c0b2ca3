import numpy as np
import pytest
from hypothesis import given, strategies as st

from extdesign.design import (format_design, info_matrix, l2_norm_sq, merge_close_points, mix,
                              uniform_design, validate_design)
from extdesign.errors import DesignError

from conftest import reference_design

THETA0_EX2 = np.array([0.125, 0.125])


def test_validation_merges_prunes_and_checks_sum():
    xi = validate_design([[0.0], [1.0], [0.0], [2.0]], [0.25, 0.5, 0.25, 1e-12], renormalize=True)
    assert xi.size == 2
    assert np.allclose(xi.weights, [0.5, 0.5])
    with pytest.raises(DesignError):
        validate_design([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(DesignError):
        validate_design([[0.0], [1.0]], [1.2, -0.2])
    with pytest.raises(DesignError):
        validate_design([[0.0]], [0.5, 0.5])
    with pytest.raises(DesignError):
        validate_design([[np.nan]], [1.0])


def test_l2_norm_of_constant_is_total_weight():
    xi = uniform_design([0.0, 1.0, 2.0])
    assert l2_norm_sq(xi, lambda x: 3.0) == pytest.approx(9.0)
    assert l2_norm_sq(xi, [1.0, 2.0, 3.0]) == pytest.approx(14.0 / 3.0)


def test_det_column_of_ex2_D_design(refs, bilinear):
    xi = reference_design(refs, "ex2", "D")
    M = info_matrix(bilinear, xi, THETA0_EX2)
    assert np.linalg.det(M) ** (1 / 3) == pytest.approx(0.652, abs=1e-3)


weights3 = st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3)


@given(weights3, st.floats(-3, 4), st.floats(-2, 2))
def test_information_matrix_is_psd(w, a, b):
    from extdesign import builtin_model
    model = builtin_model("bilinear2d")
    xi = validate_design([[0, 1], [1, 0], [1, 1]], w, renormalize=True)
    M = info_matrix(model, xi, [a, b])
    assert np.allclose(M, M.T)
    assert np.linalg.eigvalsh(M)[0] >= -1e-10


@given(weights3, weights3, st.floats(0, 1))
def test_information_matrix_is_linear_in_the_measure(w1, w2, alpha):
    from extdesign import builtin_model
    model = builtin_model("pk1")
    theta = [21.8, 0.05884, 4.298]
    xi = validate_design([[0.5], [2.0], [10.0]], w1, renormalize=True)
    nu = validate_design([[1.0], [2.0], [20.0]], w2, renormalize=True)
    lhs = info_matrix(model, mix(xi, nu, alpha), theta)
    rhs = (1 - alpha) * info_matrix(model, xi, theta) + alpha * info_matrix(model, nu, theta)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


def test_merge_close_points_combines_neighbours():
    xi = validate_design([[0.3], [0.4], [1.8], [1.9], [16.0]], [0.05, 0.23, 0.07, 0.18, 0.47])
    merged = merge_close_points(xi, atol=0.1 + 1e-9)
    assert merged.size == 3
    assert merged.weights[0] == pytest.approx(0.28)
    assert merged.support[0, 0] == pytest.approx((0.3 * 0.05 + 0.4 * 0.23) / 0.28)
    assert merged.weights.sum() == pytest.approx(1.0)


def test_two_row_display():
    text = format_design(validate_design([[0.1785], [1.52], [20.95]], [0.2, 0.66, 0.14]))
    top, bottom = text.splitlines()
    assert top.startswith("x:") and bottom.startswith("w:")
    assert "20.95" in top and "0.66" in bottom


def test_json_and_csv_serialisation_round_trip():
    from extdesign.design import design_from_dict
    import json
    xi = validate_design([[0.0, 1.0], [1.0, 0.0]], [0.5113, 0.4887])
    back = design_from_dict(json.loads(xi.to_json()))
    assert np.array_equal(back.support, xi.support) and np.array_equal(back.weights, xi.weights)
    assert xi.to_csv().splitlines()[0] == "x1,x2,weight"
