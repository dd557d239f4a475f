import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markov_comparison import ConfigurationError, FunctionCone, StateSpace, TestFunction, is_in_cone, \
    upset_generators
from markov_comparison.states import as_vector, monotonicity_violation


def _values(cone):
    return {tuple(g.values) for g in cone.generators}


def test_total_order_closure():
    space = StateSpace.total(4)
    assert space.is_total
    assert space.leq[0, 3] and not space.leq[3, 0]
    assert np.all(np.diag(space.leq))


def test_antisymmetry_rejected():
    with pytest.raises(ConfigurationError, match="antisymmetric"):
        StateSpace(3, order=frozenset({(0, 1), (1, 2), (2, 0)}))


def test_order_pair_out_of_range():
    with pytest.raises(ConfigurationError):
        StateSpace(2, order=frozenset({(0, 2)}))


def test_labels_length_checked():
    with pytest.raises(ConfigurationError):
        StateSpace(2, labels=("a",))


def test_nonfinite_function_rejected():
    with pytest.raises(ConfigurationError):
        TestFunction(np.array([0.0, np.nan]))


def test_upsets_two_state_chain():
    assert _values(upset_generators(StateSpace.total(2))) == {(1.0, 1.0), (0.0, 1.0)}


def test_upsets_three_state_chain():
    cone = upset_generators(StateSpace.total(3))
    assert _values(cone) == {(1.0, 1.0, 1.0), (0.0, 1.0, 1.0), (0.0, 0.0, 1.0)}
    assert tuple(cone.generators[0].values) == (1.0, 1.0, 1.0)


def test_upsets_antichain_is_every_subset():
    cone = upset_generators(StateSpace.antichain(3))
    # constant plus the 2^3 - 2 nonempty proper subsets
    assert len(cone.generators) == 7
    expected = {tuple(float(i in s) for i in range(3))
                for r in range(1, 4) for s in itertools.combinations(range(3), r)}
    assert _values(cone) == expected


def test_missing_order_is_configuration_error():
    with pytest.raises(ConfigurationError):
        upset_generators(StateSpace(3))


@st.composite
def posets(draw):
    n = draw(st.integers(1, 5))
    pairs = draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))))
    # orient along a random permutation so the relation is acyclic
    perm = draw(st.permutations(range(n)))
    rank = {s: r for r, s in enumerate(perm)}
    pairs = {(i, j) if rank[i] <= rank[j] else (j, i) for i, j in pairs}
    return StateSpace(n, order=frozenset(pairs))


def _brute_force_upsets(space):
    n = space.n
    leq = np.eye(n, dtype=bool)
    for i, j in space.order:
        leq[i, j] = True
    for _ in range(n):  # transitive closure by repeated squaring of the relation
        leq = leq | ((leq.astype(int) @ leq.astype(int)) > 0)
    out = set()
    for mask in range(1, 2 ** n):
        member = [(mask >> i) & 1 for i in range(n)]
        if all(member[j] for i in range(n) for j in range(n) if leq[i, j] and member[i]):
            out.add(tuple(float(m) for m in member))
    return out


@settings(max_examples=60, deadline=None)
@given(posets())
def test_upsets_match_brute_force(space):
    cone = upset_generators(space)
    assert _values(cone) == _brute_force_upsets(space)
    for g in cone.generators:
        assert is_in_cone(g, cone, tol=0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8))
def test_total_order_gives_n_generators(n):
    assert len(upset_generators(StateSpace.total(n)).generators) == n


def test_is_in_cone_examples():
    chain2 = upset_generators(StateSpace.total(2))
    assert is_in_cone([0.0, 1.0], chain2)
    assert not is_in_cone([1.0, 0.0], chain2)
    assert is_in_cone([0.2, 0.2, 0.7], upset_generators(StateSpace.total(3)))


def test_is_in_cone_dimension_mismatch():
    with pytest.raises(ValueError):
        is_in_cone([0.0, 1.0, 2.0], upset_generators(StateSpace.total(2)))


def test_custom_cone_by_nnls():
    e0 = TestFunction(np.array([1.0, 0.0, 0.0]))
    cone = FunctionCone("custom", (e0,))
    assert is_in_cone([3.0, 2.0, 2.0], cone)      # e0 + 2
    assert is_in_cone([-1.0, -1.0, -1.0], cone)   # constants either sign
    assert not is_in_cone([1.0, 2.0, 3.0], cone)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_increasing_membership_equals_sortedness_on_chain(vals):
    v = np.array(vals)
    cone = upset_generators(StateSpace.total(v.size))
    assert is_in_cone(v, cone, tol=0.0) == bool(np.all(np.diff(v) >= 0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=6), st.floats(-3, 3))
def test_nonnegative_generator_combination_is_in_cone(weights, c):
    cone = upset_generators(StateSpace.total(len(weights)))
    f = cone.matrix() @ np.array(weights) + c
    assert is_in_cone(f, cone)


def test_monotonicity_violation_witness():
    leq = StateSpace.total(3).leq
    gap, pair = monotonicity_violation(np.array([0.0, 2.0, 1.0]), leq)
    assert gap == pytest.approx(1.0)
    assert pair == (1, 2)


def test_as_vector_accepts_both():
    f = TestFunction(np.array([0.0, 1.0]), name="f")
    assert as_vector(f) is f.values
    assert np.array_equal(as_vector([0, 1]), [0.0, 1.0])
