import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from vid2ode.dynamics import get_system, simulate, sample_initial_conditions
from vid2ode.library import (CoefficientMatrix, DegenerateEquationWarning, ShapeError, build_library,
                             evaluate, l_half, read_coefficients_csv, rhs, stlsq, threshold,
                             write_coefficients_csv)

LIB = build_library(2, 3)
coeffs = arrays(float, (LIB.n_terms, 2), elements=st.floats(-3, 3))
taus = st.floats(0.01, 1.0)


def clean_data(name, n_traj=4, n=400, seed=0):
    sys = get_system(name)
    trs = [simulate(sys, x0, n, 0.05, substeps=10) for x0 in sample_initial_conditions(sys, n_traj, seed)]
    return sys, np.concatenate([t.states for t in trs]), np.concatenate([t.derivative for t in trs])


def test_library_size_and_order():
    assert LIB.n_terms == 9
    assert LIB.term_names() == ["x", "y", "x^2", "x*y", "y^2", "x^3", "x^2*y", "x*y^2", "y^3"]
    assert build_library(4, 2).n_terms == 14


def test_invalid_library():
    with pytest.raises(ValueError):
        build_library(0, 2)


def test_evaluate_rejects_wrong_width():
    with pytest.raises(ShapeError):
        evaluate(LIB, np.zeros((3, 3)))


def test_duffing_rhs_at_a_point():
    xi = get_system("duffing").true_coefficients
    np.testing.assert_allclose(rhs(LIB, xi, np.array([0.5, 0.2])), [0.2, -0.77], atol=1e-15)


def test_rhs_shape_mismatch():
    with pytest.raises(ShapeError):
        rhs(LIB, CoefficientMatrix.dense(np.zeros((5, 2))), np.zeros(2))


def test_l_half_value_and_subgradient():
    vals = np.array([[0.3, -0.5], [0.2, 0.7]] + [[0.15, -0.25]] * 7)
    xi = CoefficientMatrix.dense(vals)
    v, g = l_half(xi)
    assert v == pytest.approx(np.sum(np.sqrt(np.abs(vals))) / (2 * 9))
    h = 1e-7
    for idx in [(0, 0), (1, 1), (8, 1)]:
        p = vals.copy()
        p[idx] += h
        m = vals.copy()
        m[idx] -= h
        fd = (l_half(CoefficientMatrix.dense(p))[0] - l_half(CoefficientMatrix.dense(m))[0]) / (2 * h)
        assert abs(fd - g[idx]) <= 1e-6 * abs(g[idx])


def test_l_half_single_entry():
    vals = np.zeros((9, 2))
    vals[3, 1] = 4.0
    assert l_half(CoefficientMatrix.dense(vals))[0] == pytest.approx(2 / 18)


def test_l_half_gradient_is_clamped_at_zero():
    _, g = l_half(CoefficientMatrix.dense(np.zeros((9, 2))))
    assert np.all(np.isfinite(g)) and np.all(g == 0)


def test_threshold_keeps_four_duffing_terms():
    vals = np.zeros((9, 2))
    vals[:, :] = 0.05
    truth = get_system("duffing").true_coefficients.values
    vals = np.where(truth != 0, truth, vals)
    out = threshold(CoefficientMatrix.dense(vals), 0.1)
    assert out.support().sum() == 4


def test_threshold_never_touches_pinned():
    xi = CoefficientMatrix.full(9, 2, 0.01, pinned_values=np.c_[np.ones(9), np.full(9, np.nan)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateEquationWarning)
        out = threshold(xi, 0.5)
    assert np.array_equal(out.values[:, 0], np.ones(9))


def test_threshold_flags_empty_equation():
    with pytest.warns(DegenerateEquationWarning):
        out = threshold(CoefficientMatrix.dense(np.full((9, 2), 0.01)), 0.1)
    assert any("no active terms" in n for n in out.notes)


def test_threshold_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        threshold(CoefficientMatrix.dense(np.ones((9, 2))), 0.0)


def test_stlsq_recovers_duffing_exactly():
    sys, X, dX = clean_data("duffing")
    xi = stlsq(X, dX, LIB, 0.05)
    assert np.array_equal(xi.support(), sys.true_coefficients.support())
    assert np.max(np.abs(xi.values - sys.true_coefficients.values)) < 1e-6


def test_stlsq_cubic_signs():
    sys, X, dX = clean_data("cubic")
    xi = stlsq(X, dX, LIB, 0.05)
    assert xi.support().sum() == 4
    assert np.array_equal(np.sign(xi.values), np.sign(sys.true_coefficients.values))


def test_stlsq_needs_enough_rows():
    with pytest.raises(ShapeError):
        stlsq(np.zeros((3, 2)), np.zeros((3, 2)), LIB, 0.1)


def test_coefficient_csv_round_trip(tmp_path):
    xi = get_system("oscillator2d").true_coefficients
    lib = get_system("oscillator2d").library()
    path, mask = write_coefficients_csv(tmp_path / "xi.csv", lib, xi)
    assert mask.exists()
    terms, eqs, back = read_coefficients_csv(path)
    assert terms == lib.term_names() and len(eqs) == 4
    np.testing.assert_array_equal(back.values, xi.values)
    np.testing.assert_array_equal(back.pinned, xi.pinned)
    np.testing.assert_array_equal(back.active, xi.active)


def test_coefficient_matrix_shape_check():
    with pytest.raises(ShapeError):
        CoefficientMatrix(np.zeros((2, 2)), np.zeros((2, 3), bool), np.zeros((2, 2), bool))


# --- invariants ---------------------------------------------------------------

@pytest.mark.invariant
@given(arrays(float, (20, 2), elements=st.floats(-2, 2)))
def test_library_columns_are_multiplicatively_consistent(X):
    T = evaluate(LIB, X)
    col = {n: T[:, i] for i, n in enumerate(LIB.term_names())}
    np.testing.assert_allclose(col["x^2*y"], col["x^2"] * col["y"], atol=1e-12)
    np.testing.assert_allclose(col["x*y^2"], col["x"] * col["y^2"], atol=1e-12)
    np.testing.assert_allclose(col["y^3"], col["y^2"] * col["y"], atol=1e-12)


@pytest.mark.invariant
@given(coeffs, taus)
def test_threshold_is_idempotent(vals, tau):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateEquationWarning)
        once = threshold(CoefficientMatrix.dense(vals), tau)
        twice = threshold(once, tau)
    np.testing.assert_array_equal(once.values, twice.values)
    np.testing.assert_array_equal(once.active, twice.active)


@pytest.mark.invariant
@given(coeffs, taus, taus)
def test_threshold_is_monotone_in_tau(vals, t1, t2):
    lo, hi = sorted((t1, t2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateEquationWarning)
        a = threshold(CoefficientMatrix.dense(vals), lo)
        b = threshold(CoefficientMatrix.dense(vals), hi)
    assert np.all(b.active <= a.active)


@pytest.mark.invariant
@given(arrays(float, (60, 2), elements=st.floats(-2, 2)), coeffs, taus)
def test_stlsq_active_entries_exceed_tau(X, true, tau):
    dX = evaluate(LIB, X) @ true
    xi = stlsq(X, dX, LIB, tau)
    assert np.all(np.abs(xi.values[xi.active]) >= tau)


@pytest.mark.invariant
@given(coeffs, coeffs, st.floats(-3, 3), st.floats(-3, 3),
       arrays(float, (10, 2), elements=st.floats(-2, 2)))
def test_rhs_is_linear_in_xi(A, B, a, b, X):
    lhs = rhs(LIB, CoefficientMatrix.dense(a * A + b * B), X)
    r = a * rhs(LIB, CoefficientMatrix.dense(A), X) + b * rhs(LIB, CoefficientMatrix.dense(B), X)
    scale = 1 + np.abs(lhs).max()
    assert np.max(np.abs(lhs - r)) <= 1e-12 * scale
