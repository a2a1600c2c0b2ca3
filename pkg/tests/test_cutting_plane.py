import numpy as np
import pytest

from extdesign.criteria import (CriterionSpec, active_set, candidate_rows, evaluate_phi,
                                linear_functional, optimality_certificate)
from extdesign.cutting_plane import optimize, optimize_refined, refine_design_space
from extdesign.design import DesignMeasure, mix, uniform_design
from extdesign.errors import ConfigError
from extdesign.models import Box, FiniteSet, builtin_model, linear_model
from extdesign.search import GridSpec

from test_lp import highs_maximin

THETA0_EX2 = np.array([0.125, 0.125])
BOX_EX2 = Box([-3.0, -2.0], [4.0, 2.0])
VERTICES = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
BILINEAR = builtin_model("bilinear2d")
GRID = GridSpec("latin_hypercube", 10_000)


@pytest.fixture(scope="module")
def ex2_eE():
    return optimize(CriterionSpec("eE", theta0=THETA0_EX2), BILINEAR, VERTICES, BOX_EX2, grid=GRID)


@pytest.fixture(scope="module")
def ex2_eG():
    return optimize(CriterionSpec("eG", theta0=THETA0_EX2), BILINEAR, VERTICES, BOX_EX2, grid=GRID)


def quadratic_model():
    return linear_model(lambda x: np.stack([np.ones_like(x[..., 0]), x[..., 0], x[..., 0] ** 2], -1),
                        p=3, d=1)


def test_ex2_extended_E_value(ex2_eE):
    assert ex2_eE.converged
    assert ex2_eE.value == pytest.approx(8.78e-3, rel=0.05)
    assert ex2_eE.upper_bound - ex2_eE.value < 1e-10


def test_sandwich_and_monotone_upper_bounds(ex2_eE, ex2_eG):
    for rep in (ex2_eE, ex2_eG):
        ts = [g.t for g in rep.gap_history]
        assert all(b <= a + 1e-12 for a, b in zip(ts, ts[1:]))
        assert all(g.delta >= -1e-9 for g in rep.gap_history)
        # phi(w^k) <= phi* <= t^k, with phi* bracketed by the final sandwich
        assert all(g.phi <= rep.upper_bound + 1e-9 for g in rep.gap_history)
        assert all(g.t >= rep.value - 1e-9 for g in rep.gap_history)


def test_reported_value_agrees_with_independent_evaluation(ex2_eE):
    val = evaluate_phi(CriterionSpec("eE", theta0=THETA0_EX2), BILINEAR, ex2_eE.design, BOX_EX2,
                       GridSpec("latin_hypercube", 50_000, 99), n_starts=8)
    assert val.value == pytest.approx(ex2_eE.value, rel=1e-6)


def test_certificate_at_optimum_and_perturbed_designs(ex2_eE, ex2_eG):
    for rep, kind in ((ex2_eE, "eE"), (ex2_eG, "eG")):
        assert rep.certificate <= 1e-3
        spec = CriterionSpec(kind, theta0=THETA0_EX2, design_space=VERTICES if kind == "eG" else None)
        worse = mix(rep.design, DesignMeasure(VERTICES[:1], np.ones(1)), 0.5)
        val = evaluate_phi(spec, BILINEAR, worse, BOX_EX2, GRID)
        assert optimality_certificate(spec, BILINEAR, worse, VERTICES, active_set(val)) > 1e-3


def test_finite_parameter_set_is_solved_exactly():
    rng = np.random.default_rng(5)
    pts = np.vstack([THETA0_EX2, rng.uniform([-3, -2], [4, 2], size=(30, 2))])
    domain = FiniteSet(pts)
    for spec in (CriterionSpec("eE", theta0=THETA0_EX2),
                 CriterionSpec("ec", theta0=THETA0_EX2, functional=linear_functional([1.0, 1.0])),
                 CriterionSpec("eG", theta0=THETA0_EX2, design_space=VERTICES)):
        rep = optimize(spec, BILINEAR, VERTICES, domain)
        rows = candidate_rows(spec, BILINEAR, VERTICES, rep.candidates)
        assert rep.value == pytest.approx(highs_maximin(rows.T), rel=1e-9)
        assert evaluate_phi(spec, BILINEAR, rep.design, domain).value == pytest.approx(rep.value, rel=1e-9)


def test_linear_model_extended_G_optimum_is_one_over_p():
    model = quadratic_model()
    X = np.linspace(-1, 1, 21)
    rep = optimize(CriterionSpec("eG", theta0=np.zeros(3)), model, X, Box(-np.ones(3), np.ones(3)),
                   grid=GridSpec("latin_hypercube", 5000))
    assert rep.converged
    assert rep.value == pytest.approx(1 / 3, abs=1e-3)
    assert rep.certificate <= 1e-3


def test_linear_model_extended_E_optimum_matches_E_optimal_value():
    # E-optimal design for the quadratic on [-1, 1]: weights (1/5, 3/5, 1/5) at (-1, 0, 1), value 1/5
    model = quadratic_model()
    rep = optimize(CriterionSpec("eE", theta0=np.zeros(3)), model, np.linspace(-1, 1, 21),
                   Box(-np.ones(3), np.ones(3)), grid=GridSpec("latin_hypercube", 5000))
    assert rep.value == pytest.approx(0.2, abs=1e-8)
    assert rep.design.support[:, 0] == pytest.approx([-1.0, 0.0, 1.0])
    assert rep.design.weights == pytest.approx([0.2, 0.6, 0.2], abs=1e-4)


def test_refine_design_space_adds_clipped_neighbourhoods():
    X = refine_design_space(np.array([1.0, 2.0]), np.array([[0.5]]), span=0.2, n_points=5,
                            lower=[0.45], upper=[3.0])
    assert X[:, 0] == pytest.approx([0.45, 0.5, 0.55, 0.6, 1.0, 2.0])


def test_refined_optimisation_improves_on_the_coarse_grid():
    model = builtin_model("pk1")
    theta0 = np.array([21.80, 0.05884, 4.298])
    box = Box([16.0, 0.03, 3.0], [27.0, 0.08, 6.0])
    X = np.round(np.arange(1, 25, 1.0), 12)
    spec = CriterionSpec("eE", theta0=theta0)
    coarse = optimize(spec, model, X, box, grid=GRID)
    fine = optimize_refined(spec, model, X, box, rounds=2, grid=GRID)
    assert fine.value >= coarse.value - 1e-9


def test_input_validation():
    with pytest.raises(ConfigError):
        optimize(CriterionSpec("E", theta0=THETA0_EX2), BILINEAR, VERTICES, BOX_EX2)
    with pytest.raises(ConfigError):
        optimize(CriterionSpec("eE", theta0=THETA0_EX2), BILINEAR, VERTICES, BOX_EX2, eps=0.0)
    with pytest.raises(ConfigError):
        optimize(CriterionSpec("eE", theta0=THETA0_EX2), BILINEAR, VERTICES, BOX_EX2, w0=np.ones(4))


def test_report_serialisation(ex2_eE):
    d = ex2_eE.to_dict()
    for key in ("design", "value", "gap_history", "certificate", "seeds", "timing"):
        assert key in d
    lines = ex2_eE.gap_history_csv().splitlines()
    assert lines[0] == "k,t,phi,delta"
    assert len(lines) == len(ex2_eE.gap_history) + 1
