import numpy as np
import pytest

from markov_comparison import ConstantRates, JumpSchedule, KnotSeries, ProcessSpec, build_evolution
from markov_comparison.montecarlo import empirical_marginal, linking_supermartingale_test, martingale_process, \
    martingale_test, simulate, spacetime_martingale_test

from oracles import DEMO_GE_X, DEMO_GE_Y, demo_pair, jump_kernel, pure_jump_pair, two_state

F_UP = np.array([0.0, 1.0])
CHECKPOINTS = [0.0, 0.25, 0.5, 0.75, 1.0]


@pytest.fixture(scope="module")
def demo_paths():
    x, y = demo_pair()
    return x, y, simulate(x, 100_000, seed=11), simulate(y, 100_000, seed=12)


def test_same_seed_same_paths_any_worker_count():
    x, _ = demo_pair()
    a = simulate(x, 20_000, seed=3, block_size=4096)
    b = simulate(x, 20_000, seed=3, block_size=4096, workers=4)
    for name in ("initial", "offsets", "times", "states", "at_epoch"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = simulate(x, 20_000, seed=4, block_size=4096)
    assert not np.array_equal(a.states_at(1.0), c.states_at(1.0))


def test_zero_rates_give_constant_paths():
    spec = ProcessSpec(ConstantRates(np.zeros((3, 3)), 1.0), np.array([0.2, 0.3, 0.5]))
    batch = simulate(spec, 5000, seed=1)
    assert batch.times.size == 0
    assert np.array_equal(batch.states_at(1.0), batch.initial)
    res = martingale_test(batch, spec, np.array([0.0, 1.0, 2.0]), [0.0, 0.5, 1.0])
    assert res.passed and all(c["mean"] == 0.0 for c in res.cells)


def test_path_records_are_ordered_and_epochs_present():
    spec = ProcessSpec(ConstantRates(two_state(1.0, 2.0), 2.0), np.array([1.0, 0.0]),
                       JumpSchedule(np.array([1.0]), jump_kernel(0.5)[None]))
    batch = simulate(spec, 500, seed=5)
    for path in batch:
        assert np.all(np.diff(path.times) >= 0)
        assert np.all((path.times > 0) & (path.times <= 2.0))
        assert 1.0 in path.times
        # every recorded move away from the epoch is a real transition
        prev = np.concatenate([[path.initial], path.states[:-1]])
        off_epoch = path.times != 1.0
        assert np.all(path.states[off_epoch] != prev[off_epoch])
    states = batch.states_at(2.0)
    assert all(batch[p].state_at(2.0) == states[p] for p in range(len(batch)))


def test_marginal_matches_closed_form(demo_paths):
    _, _, px, py = demo_paths
    for batch, ref in ((px, DEMO_GE_X), (py, DEMO_GE_Y)):
        p, se = empirical_marginal(batch, 2, 1.0)
        assert abs(p[1] - ref) <= 4 * se[1]


def test_pure_jump_marginals():
    x, y = pure_jump_pair()
    for spec, ref in ((x, 0.75), (y, 0.51)):
        p, se = empirical_marginal(simulate(spec, 100_000, seed=8), 2, 2.0)
        assert abs(p[1] - ref) <= 3 * se[1]


def test_martingale_passes_for_true_generator(demo_paths):
    x, y, px, py = demo_paths
    assert martingale_test(px, x, F_UP, CHECKPOINTS).passed
    assert martingale_test(py, y, F_UP, CHECKPOINTS).passed


def test_martingale_detects_wrong_compensator(demo_paths):
    x, _, px, _ = demo_paths
    wrong = ProcessSpec(ConstantRates(x.rates.Q + np.array([[-0.5, 0.5], [0.0, 0.0]]), 1.0), x.initial)
    res = martingale_test(px, wrong, F_UP, CHECKPOINTS)
    assert not res.passed and res.max_abs_z > 4


def test_martingale_with_jumps():
    spec = ProcessSpec(ConstantRates(two_state(1.0, 2.0), 2.0), np.array([1.0, 0.0]),
                       JumpSchedule(np.array([1.0]), jump_kernel(0.5)[None]))
    batch = simulate(spec, 50_000, seed=9)
    assert martingale_test(batch, spec, F_UP, [0.0, 0.5, 1.0, 1.5, 2.0]).passed
    no_jump = ProcessSpec(spec.rates, spec.initial)
    assert not martingale_test(batch, no_jump, F_UP, [0.0, 0.5, 1.0, 1.5, 2.0]).passed


def test_martingale_process_starts_at_zero(demo_paths):
    x, _, px, _ = demo_paths
    M = martingale_process(px, x, F_UP, CHECKPOINTS)
    assert np.all(M[:, 0] == 0.0)


def test_spacetime_constant_is_zero(demo_paths):
    x, _, px, _ = demo_paths
    knots = np.linspace(0.0, 1.0, 5)
    u = KnotSeries(knots, np.full((5, 2), 2.0))
    res = spacetime_martingale_test(px, x, u, CHECKPOINTS)
    assert all(c["mean"] == 0.0 for c in res.cells)
    assert res.passed


def test_spacetime_backward_solution(demo_paths):
    x, y, px, py = demo_paths
    ev_x = build_evolution(x, 256)
    u = KnotSeries(ev_x.knots, ev_x.backward(F_UP, 1.0))
    assert spacetime_martingale_test(px, x, u, CHECKPOINTS).passed
    # along Y the same function is a supermartingale when X dominates
    assert spacetime_martingale_test(py, y, u, CHECKPOINTS, alternative="super").passed


def test_linking_process(demo_paths):
    x, y, px, py = demo_paths
    ev_x = build_evolution(x, 256)
    res = linking_supermartingale_test(py, ev_x, F_UP, 1.0, CHECKPOINTS)
    assert res.passed
    assert abs(res.extra["g_first"] - DEMO_GE_X) <= 4 * res.extra["g_first_se"] + 1e-12
    assert abs(res.extra["g_last"] - DEMO_GE_Y) <= 4 * res.extra["g_last_se"]
    # the same curve along X itself is a martingale
    assert linking_supermartingale_test(px, ev_x, F_UP, 1.0, CHECKPOINTS, alternative="two-sided").passed
    # with roles exchanged the process drifts upward and the super test rejects
    ev_y = build_evolution(y, 256)
    rev = linking_supermartingale_test(px, ev_y, F_UP, 1.0, CHECKPOINTS)
    assert not rev.passed
    assert linking_supermartingale_test(px, ev_y, F_UP, 1.0, CHECKPOINTS, alternative="sub").passed


def test_result_serialisation(demo_paths):
    x, _, px, _ = demo_paths
    res = martingale_test(px, x, F_UP, CHECKPOINTS)
    d = res.to_dict()
    assert d["passed"] == res.passed and len(d["cells"]) == len(res.cells)
    assert res.to_csv().splitlines()[0] == "s,t,state,count,mean,se,z"
