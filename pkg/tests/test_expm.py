import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm as scipy_expm

from markov_comparison.expm import expm, taylor_order

from oracles import qmatrices, two_state, two_state_transition


def test_two_state_closed_form():
    got = expm(two_state(2.0, 1.0))
    assert np.max(np.abs(got - two_state_transition(2.0, 1.0, 1.0))) <= 1e-14
    assert abs(got[0, 1] - (2.0 / 3.0) * (1.0 - np.exp(-3.0))) <= 1e-14


def test_zero_matrix_is_identity():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))


def test_taylor_order_remainder():
    for norm in (0.01, 0.25, 0.5, 2.0):
        p = taylor_order(norm)
        term = norm ** (p + 1) / np.prod(np.arange(1, p + 2, dtype=float)) * np.exp(norm)
        assert term <= 1e-16


@settings(max_examples=150, deadline=None)
@given(qmatrices(max_rate=50.0), st.floats(1e-4, 3.0))
def test_matches_scipy_and_stays_stochastic(Q, dt):
    got = expm(Q * dt)
    ref = scipy_expm(Q * dt)
    assert np.max(np.abs(got - ref)) <= 1e-12
    assert np.all(got >= 0.0)
    assert np.max(np.abs(got.sum(axis=1) - 1.0)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_general_matrices_match_scipy(vals):
    A = np.array(vals).reshape(3, 3)
    assert np.allclose(expm(A), scipy_expm(A), rtol=1e-12, atol=1e-12)
