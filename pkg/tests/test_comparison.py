import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm as scipy_expm

from markov_comparison import CHECKERS, EQ, GE, INCONCLUSIVE, LE, ComparisonPair, ConfigurationError, \
    ConstantRates, FunctionCone, JumpSchedule, PiecewiseConstantRates, ProcessSpec, StateSpace, TestFunction, \
    check_theorem4, check_theorem7, check_theorem8, check_theorem9, check_theorem10, flip_verdict, \
    sweep_function_class, upset_generators
from markov_comparison.comparison import oracle_expectation, support_marginal

from oracles import DEMO_GE_X, DEMO_GE_Y, demo_pair, jump_kernel, laws, make_qmatrix, piecewise_transition, \
    pure_jump_pair, qmatrices, two_state

F_UP = TestFunction(np.array([0.0, 1.0]), name="up")
F_DOWN = TestFunction(np.array([1.0, 0.0]), name="down")
MARTINGALE_ROUTE = (check_theorem7, check_theorem8, check_theorem9)


@pytest.fixture(scope="module")
def demo():
    x, y = demo_pair()
    return x, y, ComparisonPair.build(x, y, 256, extra=[1.0])


def test_oracle_values_are_closed_forms():
    assert DEMO_GE_X == pytest.approx((2 / 3) * (1 - np.exp(-3)), abs=1e-16)
    assert DEMO_GE_Y == pytest.approx(0.5 * (1 - np.exp(-2)), abs=1e-16)


@pytest.mark.parametrize("check", [check_theorem4, *MARTINGALE_ROUTE])
def test_demo_pair_certified_ge(demo, check):
    x, y, pair = demo
    rep = check(x, y, F_UP, 1.0, pair=pair)
    assert rep.verdict == GE
    assert rep.conclusion_ok and not rep.soundness_violation
    assert abs(rep.oracle_x - DEMO_GE_X) <= 1e-9
    assert abs(rep.oracle_y - DEMO_GE_Y) <= 1e-9


def test_demo_linking_curve(demo):
    x, y, pair = demo
    curve = check_theorem7(x, y, F_UP, 1.0, pair=pair).linking_curve
    assert abs(curve.g[0] - DEMO_GE_X) <= 1e-9
    assert abs(curve.g[-1] - DEMO_GE_Y) <= 1e-9
    assert curve.is_nonincreasing(1e-9)
    # independent oracle at an interior knot: mu_0 e^{s Q^Y} e^{(t-s) Q^X} f
    k = 100
    s = pair.knots[k]
    ref = x.initial @ scipy_expm(s * y.rates.Q) @ scipy_expm((1 - s) * x.rates.Q) @ F_UP.values
    assert curve.g[k] == pytest.approx(ref, abs=1e-12)


def test_theorem4_direction(demo):
    x, y, pair = demo
    assert check_theorem4(x, y, F_DOWN, 1.0, pair=pair, direction="ge").verdict == INCONCLUSIVE
    assert check_theorem4(x, y, F_DOWN, 1.0, pair=pair, direction="ge", mirror=False).verdict == INCONCLUSIVE
    rep = check_theorem4(x, y, F_DOWN, 1.0, pair=pair)
    assert rep.verdict == LE
    assert rep.oracle_margin == pytest.approx(-(DEMO_GE_X - DEMO_GE_Y), abs=1e-12)


def test_identical_processes_certified_eq(demo):
    x, _, _ = demo
    pair = ComparisonPair.build(x, x, 128, extra=[1.0])
    for name, check in CHECKERS.items():
        rep = check(x, x, F_UP, 1.0, pair=pair)
        assert rep.verdict == EQ, name
        assert rep.oracle_margin == 0.0
    curve = check_theorem7(x, x, F_UP, 1.0, pair=pair).linking_curve
    assert np.ptp(curve.g) <= 1e-12


def _breakpoint_pair():
    Q1, Q2 = two_state(2.0, 1.0), two_state(0.5, 1.0)
    times = np.array([0.0, 1.0, 2.0])
    x = ProcessSpec(PiecewiseConstantRates(times, np.stack([Q1, Q2])), np.array([1.0, 0.0]))
    y = ProcessSpec(ConstantRates(two_state(1.0, 1.0), 2.0), np.array([1.0, 0.0]))
    return x, y, times, np.stack([Q1, Q2])


def test_breakpoint_left_generators_certify():
    x, y, times, pieces = _breakpoint_pair()
    pair = ComparisonPair.build(x, y, 256, extra=[1.0])
    right = check_theorem7(x, y, F_UP, 1.0, pair=pair)
    left = check_theorem8(x, y, F_UP, 1.0, pair=pair)
    assert right.verdict == INCONCLUSIVE
    assert any(w["time"] == 1.0 for w in right.witnesses)
    assert left.verdict == GE
    ref_x = (np.array([1.0, 0.0]) @ piecewise_transition(times, pieces, 0.0, 1.0))[1]
    ref_y = (np.array([1.0, 0.0]) @ scipy_expm(two_state(1.0, 1.0)))[1]
    assert left.oracle_margin == pytest.approx(ref_x - ref_y, abs=1e-12)
    assert left.oracle_margin == pytest.approx(0.2011, abs=1e-4)


def test_pure_jump_theorem10():
    x, y = pure_jump_pair()
    rep = check_theorem10(x, y, F_UP, 2.0)
    assert rep.verdict == GE
    assert rep.oracle_x == pytest.approx(1 - 0.5 ** 2, abs=1e-12)
    assert rep.oracle_y == pytest.approx(1 - 0.7 ** 2, abs=1e-12)
    assert rep.extra["integrator_F_at_t"] == 4.0


def test_theorem10_needs_shared_epochs_and_laws():
    x, y = pure_jump_pair()
    y_shift = ProcessSpec(y.rates, y.initial, JumpSchedule(np.array([0.5, 2.0]), y.jumps.kernels))
    with pytest.raises(ConfigurationError):
        check_theorem10(x, y_shift, F_UP, 2.0)
    y_law = ProcessSpec(y.rates, np.array([0.5, 0.5]), y.jumps)
    with pytest.raises(ConfigurationError):
        check_theorem10(x, y_law, F_UP, 2.0)


def test_theorem10_pointwise_condition_alone_is_not_enough():
    # Q^X f >= Q^Y f on every state, yet E f(X_1) < E f(Y_1)
    QX = make_qmatrix([[0, 2, 3], [2, 0, 0], [0, 0, 0]])
    QY = make_qmatrix([[0, 1, 3], [3, 0, 1], [0, 0, 0]])
    f = np.array([0.0, 1.0, 2.0])
    assert np.all(QX @ f >= QY @ f)
    mu = np.array([1.0, 0.0, 0.0])
    x = ProcessSpec(ConstantRates(QX, 1.0), mu)
    y = ProcessSpec(ConstantRates(QY, 1.0), mu)
    rep = check_theorem10(x, y, f, 1.0)
    assert rep.condition("generator_ge").passed
    assert rep.oracle_margin < -0.1
    assert rep.verdict == INCONCLUSIVE
    assert not rep.condition("drift_in_law_ge").passed


def test_jump_kernels_gate_continuous_theorems():
    # no continuous motion, different kernels: the generator part alone would claim equality
    x, y = pure_jump_pair()
    pair = ComparisonPair.build(x, y, 16, extra=[2.0])
    for check in (check_theorem4, *MARTINGALE_ROUTE):
        rep = check(x, y, F_UP, 2.0, pair=pair)
        assert rep.verdict == GE
        assert rep.conclusion_ok


def test_support_violation_reported():
    absorbing = make_qmatrix([[0, 1], [0, 0]])
    x = ProcessSpec(ConstantRates(absorbing, 1.0), np.array([0.0, 1.0]))
    y = ProcessSpec(ConstantRates(two_state(1.0, 1.0), 1.0), np.array([0.0, 1.0]))
    pair = ComparisonPair.build(x, y, 64, extra=[1.0])
    rep = check_theorem7(x, y, F_UP, 1.0, pair=pair, mirror=False)
    assert rep.verdict == INCONCLUSIVE
    # with roles exchanged the route applies and certifies the true order
    assert check_theorem7(x, y, F_UP, 1.0, pair=pair).verdict == GE
    support = rep.condition("support")
    assert not support.passed and support.witness_state == 0
    assert support_marginal(x, pair.ev_x, 0.5) == frozenset({1})
    assert support_marginal(y, pair.ev_y, 0.5) == frozenset({0, 1})


def test_initial_laws_gate_martingale_route():
    x, y = demo_pair()
    y2 = ProcessSpec(y.rates, np.array([0.5, 0.5]))
    rep = check_theorem7(x, y2, F_UP, 1.0, steps=64)
    assert not rep.condition("initial_laws").passed
    assert rep.verdict == INCONCLUSIVE


def test_theorem9_reports_dl_and_literal_condition(demo):
    x, y, pair = demo
    rep = check_theorem9(x, y, F_UP, 1.0, pair=pair)
    assert rep.condition("class_DL").passed
    literal = rep.condition("generator_on_f_ge")
    assert literal.gating is False


def test_report_dict_is_json(demo):
    x, y, pair = demo
    d = check_theorem7(x, y, F_UP, 1.0, pair=pair).to_dict()
    text = json.dumps(d, sort_keys=True, allow_nan=False)
    assert json.loads(text)["verdict"] == GE
    assert d["oracle_margin"] == pytest.approx(DEMO_GE_X - DEMO_GE_Y, abs=1e-12)


def test_oracle_expectation(demo):
    x, _, pair = demo
    assert oracle_expectation(x, pair.ev_x, F_UP, 1.0) == pytest.approx(DEMO_GE_X, abs=1e-12)


def test_function_class_sweep_increasing(demo):
    x, y, pair = demo
    cone = upset_generators(StateSpace.total(2))
    rep = sweep_function_class(x, y, cone, 1.0, pair=pair)
    assert rep.verdict == GE
    assert rep.propagation_ok


def test_propagation_failure_is_reported_not_gating():
    # X swaps the two states quickly: increasing functions are not preserved
    x = ProcessSpec(ConstantRates(make_qmatrix([[0, 5], [5, 0]]), 1.0), np.array([1.0, 0.0]))
    y = ProcessSpec(ConstantRates(make_qmatrix([[0, 1], [5, 0]]), 1.0), np.array([1.0, 0.0]))
    cone = FunctionCone("increasing", upset_generators(StateSpace.total(2)).generators, StateSpace.total(2))
    rep = sweep_function_class(x, y, cone, 1.0, steps=64)
    assert rep.verdict in (GE, INCONCLUSIVE)
    for r in rep.reports:
        assert not r.soundness_violation


@st.composite
def comparison_cases(draw):
    QX = draw(qmatrices(max_n=4, max_rate=5.0))
    n = QX.shape[0]
    raw = draw(st.lists(st.floats(0.0, 5.0), min_size=n * n, max_size=n * n))
    QY = make_qmatrix(np.array(raw).reshape(n, n))
    mu = draw(laws(n))
    f = np.array(draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n)))
    t = draw(st.sampled_from([0.25, 0.5, 1.0]))
    return QX, QY, mu, f, t


@settings(max_examples=40, deadline=None)
@given(comparison_cases())
def test_no_soundness_violation_and_reversal_symmetry(case):
    QX, QY, mu, f, t = case
    x = ProcessSpec(ConstantRates(QX, 1.0), mu)
    y = ProcessSpec(ConstantRates(QY, 1.0), mu)
    pair = ComparisonPair.build(x, y, 32, extra=[t])
    swapped = pair.swapped()
    for name, check in CHECKERS.items():
        rep = check(x, y, f, t, pair=pair)
        rev = check(y, x, f, t, pair=swapped)
        assert not rep.soundness_violation, name
        ref = mu @ scipy_expm(t * QX) @ f - mu @ scipy_expm(t * QY) @ f
        assert rep.oracle_margin == pytest.approx(ref, abs=1e-9)
        assert rev.verdict == flip_verdict(rep.verdict), name
        assert rev.oracle_margin == -rep.oracle_margin


def test_flip_verdict():
    assert flip_verdict(GE) == LE and flip_verdict(LE) == GE
    assert flip_verdict(EQ) == EQ and flip_verdict(INCONCLUSIVE) == INCONCLUSIVE


def test_jump_kernel_condition_with_rates():
    K = jump_kernel(0.5)
    x = ProcessSpec(ConstantRates(two_state(2.0, 1.0), 2.0), np.array([1.0, 0.0]),
                    JumpSchedule(np.array([1.0]), K[None]))
    y = ProcessSpec(ConstantRates(two_state(1.0, 1.0), 2.0), np.array([1.0, 0.0]),
                    JumpSchedule(np.array([1.0]), np.eye(2)[None]))
    for check in (check_theorem4, *MARTINGALE_ROUTE):
        rep = check(x, y, F_UP, 2.0, steps=64)
        assert rep.verdict == GE, rep.theorem
        assert rep.oracle_margin > 0
    # the in-law drift condition fails near t = 2, as on the continuous demo pair
    rep = check_theorem10(x, y, F_UP, 2.0, steps=64)
    assert rep.verdict == INCONCLUSIVE and rep.conclusion_ok


def test_mirror_certifies_when_primary_cannot():
    QX = make_qmatrix([[0, 1, 1], [1, 0, 1], [1, 2, 0]])
    QY = make_qmatrix([[0, 2, 1], [1, 0, 1], [2, 2, 0]])
    mu = np.full(3, 1.0 / 3.0)
    f = np.array([1.0, 0.0, 2.0])
    x, y = ProcessSpec(ConstantRates(QX, 1.0), mu), ProcessSpec(ConstantRates(QY, 1.0), mu)
    pair = ComparisonPair.build(x, y, 32, extra=[1.0])
    plain = check_theorem4(x, y, f, 1.0, pair=pair, mirror=False)
    merged = check_theorem4(x, y, f, 1.0, pair=pair)
    assert plain.verdict == INCONCLUSIVE
    assert merged.verdict == GE and merged.conclusion_ok
    assert merged.extra["primary_verdict"] == INCONCLUSIVE
    assert merged.extra["mirror"]["verdict"] == LE
    ref = mu @ (scipy_expm(QX) - scipy_expm(QY)) @ f
    assert merged.oracle_margin == pytest.approx(ref, abs=1e-12)
    assert ref > 0.1
