"""Randomized soundness corpus and analytic residual checks.

Every certified verdict in the corpus is compared with the exact oracle
``E f(X_t) - E f(Y_t)``; one contradiction makes the self-test fail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .comparison import CHECKERS, INCONCLUSIVE, ComparisonPair
from .errors import ConfigurationError
from .evolution import build_evolution, check_integral_representation
from .generators import estimate_generator
from .rates import AffineRates, ConstantRates, JumpSchedule, PiecewiseConstantRates, ProcessSpec, require_valid
from .states import TestFunction

MASTER_SEED = 20240601
CORPUS_SIZE = 100
QUICK_SIZE = 10
SELFTEST_STEPS = 128
FAMILIES = ("dense", "birth_death", "piecewise", "affine", "jumps")


@dataclass
class CorpusCase:
    family: str
    spec_x: ProcessSpec
    spec_y: ProcessSpec
    f: TestFunction
    t: float


@dataclass
class SelfTestResult:
    cases: int = 0
    checks: int = 0
    certified: int = 0
    not_applicable: int = 0
    violations: list[dict] = field(default_factory=list)
    per_family: dict = field(default_factory=dict)
    analytic: list[tuple[str, float, float, bool]] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations and all(row[3] for row in self.analytic)

    def table(self) -> str:
        lines = [f"{'family':<12} {'cases':>6} {'checks':>7} {'certified':>10} {'violations':>11}"]
        for fam in FAMILIES:
            if fam in self.per_family:
                c = self.per_family[fam]
                lines.append(f"{fam:<12} {c['cases']:>6} {c['checks']:>7} {c['certified']:>10} {c['violations']:>11}")
        lines.append(f"{'total':<12} {self.cases:>6} {self.checks:>7} {self.certified:>10} {len(self.violations):>11}")
        lines.append("")
        lines.append(f"{'analytic check':<40} {'value':>12} {'bound':>10}  status")
        for name, value, bound, ok in self.analytic:
            lines.append(f"{name:<40} {value:>12.3e} {bound:>10.1e}  {'PASS' if ok else 'FAIL'}")
        lines.append("")
        lines.append(f"not applicable: {self.not_applicable}; elapsed {self.seconds:.1f} s; "
                     f"{'OK' if self.ok else 'FAILED'}")
        return "\n".join(lines)


def _birth_death(rng, n, scale=2.0):
    birth = rng.uniform(0.1, scale, n - 1)
    death = rng.uniform(0.1, scale, n - 1)
    return birth, death


def _bd_matrix(birth, death):
    n = birth.size + 1
    Q = np.zeros((n, n))
    Q[np.arange(n - 1), np.arange(1, n)] = birth
    Q[np.arange(1, n), np.arange(n - 1)] = death
    Q[np.diag_indices(n)] = -Q.sum(axis=1)
    return Q


def _dense(rng, n, scale=2.0):
    Q = rng.uniform(0.0, scale, (n, n)) * (rng.random((n, n)) < 0.7)
    np.fill_diagonal(Q, 0.0)
    Q[np.diag_indices(n)] = -Q.sum(axis=1)
    return Q


def _ordered_bd_pair(rng, n):
    """Birth-death matrices with ``X`` pushed up: more births, fewer deaths."""
    birth, death = _birth_death(rng, n)
    up = rng.uniform(0.0, 1.0, n - 1)
    down = rng.uniform(0.0, 0.5, n - 1) * death
    return _bd_matrix(birth + up, death - down), _bd_matrix(birth, death)


def _law(rng, n):
    w = rng.random(n) * (rng.random(n) < 0.8)
    if w.sum() == 0:
        w[rng.integers(n)] = 1.0
    return w / w.sum()


def _function(rng, n, increasing):
    if increasing:
        return TestFunction(np.cumsum(rng.random(n) * (rng.random(n) < 0.7)), name="increasing")
    return TestFunction(rng.normal(size=n), name="random")


def _stochastic(rng, n, upward):
    K = rng.random((n, n))
    if upward:
        K = np.triu(K)
    K /= K.sum(axis=1, keepdims=True)
    return K


def make_case(rng: np.random.Generator, family: str) -> CorpusCase:
    n = int(rng.integers(2, 7))
    T = float(rng.uniform(0.5, 2.0))
    t = float(rng.uniform(0.2, 1.0) * T)
    mu = _law(rng, n)
    if family == "dense":
        QX = _dense(rng, n)
        QY = QX + 0.3 * _dense(rng, n) if rng.random() < 0.5 else _dense(rng, n)
        mu_y = mu if rng.random() < 0.7 else _law(rng, n)
        sx = ProcessSpec(ConstantRates(QX, T), mu, name="X")
        sy = ProcessSpec(ConstantRates(QY, T), mu_y, name="Y")
        f = _function(rng, n, increasing=rng.random() < 0.5)
    elif family == "birth_death":
        QX, QY = _ordered_bd_pair(rng, n)
        if rng.random() < 0.3:
            QX, QY = QY, QX
        sx = ProcessSpec(ConstantRates(QX, T), mu, name="X")
        sy = ProcessSpec(ConstantRates(QY, T), mu, name="Y")
        f = _function(rng, n, increasing=True)
    elif family == "piecewise":
        pieces = int(rng.integers(2, 4))
        times = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 0.9, pieces - 1)) * T, [T]])
        pairs = [_ordered_bd_pair(rng, n) for _ in range(pieces)]
        sx = ProcessSpec(PiecewiseConstantRates(times, np.stack([p[0] for p in pairs])), mu, name="X")
        sy = ProcessSpec(PiecewiseConstantRates(times, np.stack([p[1] for p in pairs])), mu, name="Y")
        f = _function(rng, n, increasing=rng.random() < 0.8)
    elif family == "affine":
        QXa, QYa = _ordered_bd_pair(rng, n)
        QXb, QYb = _ordered_bd_pair(rng, n)
        sx = ProcessSpec(AffineRates(QXa, 0.5 * QXb, T), mu, name="X")
        sy = ProcessSpec(AffineRates(QYa, 0.5 * QYb, T), mu, name="Y")
        f = _function(rng, n, increasing=True)
    elif family == "jumps":
        m = int(rng.integers(1, 4))
        epochs = np.sort(rng.choice(np.linspace(0.1, 1.0, 10) * T, m, replace=False))
        KY = np.stack([_stochastic(rng, n, upward=True) for _ in range(m)])
        KX = np.stack([0.5 * (K + np.eye(n)[np.minimum(np.arange(n) + 1, n - 1)]) for K in KY])
        if rng.random() < 0.5:
            QX, QY = _ordered_bd_pair(rng, n)
        else:
            QX = QY = np.zeros((n, n))
        sx = ProcessSpec(ConstantRates(QX, T), mu, JumpSchedule(epochs, KX), name="X")
        sy = ProcessSpec(ConstantRates(QY, T), mu, JumpSchedule(epochs, KY), name="Y")
        f = _function(rng, n, increasing=True)
    else:
        raise ValueError(f"unknown family {family!r}")
    require_valid(sx)
    require_valid(sy)
    return CorpusCase(family, sx, sy, f, t)


def corpus(size: int = CORPUS_SIZE, seed: int = MASTER_SEED) -> list[CorpusCase]:
    rng = np.random.default_rng(seed)
    return [make_case(rng, FAMILIES[k % len(FAMILIES)]) for k in range(size)]


def run_case(case: CorpusCase, steps: int = SELFTEST_STEPS):
    """All five checks on one case; Theorem 10 is skipped where it does not apply."""
    pair = ComparisonPair.build(case.spec_x, case.spec_y, steps, extra=[case.t])
    reports = []
    skipped = 0
    for name, check in CHECKERS.items():
        try:
            reports.append(check(case.spec_x, case.spec_y, case.f, case.t, pair=pair))
        except ConfigurationError:
            skipped += 1
    return reports, skipped


def _analytic_checks():
    rows = []
    Q = np.array([[-2.0, 2.0], [1.0, -1.0]])
    demo = ProcessSpec(ConstantRates(Q, 1.0), np.array([1.0, 0.0]))
    ev = build_evolution(demo, 512)
    err = abs(ev.transition(0.0, 1.0)[0, 1] - (2.0 / 3.0) * (1.0 - np.exp(-3.0)))
    rows.append(("two-state closed form T_{0,1}[0,1]", err, 1e-9, err <= 1e-9))

    rng = np.random.default_rng(MASTER_SEED)
    dense = ProcessSpec(AffineRates(_dense(rng, 5), _dense(rng, 5), 1.0), _law(rng, 5))
    evd = build_evolution(dense, 64)
    worst = 0.0
    for _ in range(100):
        a, b, c = np.sort(rng.choice(evd.knots, 3))
        worst = max(worst, float(np.abs(evd.transition(a, c) - evd.transition(a, b) @ evd.transition(b, c)).max()))
    rows.append(("Chapman-Kolmogorov, 100 triples", worst, 1e-10, worst <= 1e-10))

    ic = check_integral_representation(ev, np.array([0.0, 1.0]), 0.0, 1.0).residual
    rows.append(("integral representation, m=512", ic, 1e-5, ic <= 1e-5))

    Q1, Q2 = Q, np.array([[-0.5, 0.5], [1.0, -1.0]])
    pw = ProcessSpec(PiecewiseConstantRates(np.array([0.0, 1.0, 2.0]), np.stack([Q1, Q2])), np.array([1.0, 0.0]))
    evp = build_evolution(pw, 256)
    right = float(np.abs(estimate_generator(evp, 1.0, "right").matrix - Q2).max())
    left = float(np.abs(estimate_generator(evp, 1.0, "left").matrix - Q1).max())
    rows.append(("right generator at breakpoint", right, 1e-6, right <= 1e-6))
    rows.append(("left generator at breakpoint", left, 1e-6, left <= 1e-6))
    return rows


def run_selftest(quick: bool = False, seed: int = MASTER_SEED, steps: int = SELFTEST_STEPS) -> SelfTestResult:
    start = time.perf_counter()
    res = SelfTestResult()
    for k, case in enumerate(corpus(QUICK_SIZE if quick else CORPUS_SIZE, seed)):
        reports, skipped = run_case(case, steps)
        fam = res.per_family.setdefault(case.family, {"cases": 0, "checks": 0, "certified": 0, "violations": 0})
        fam["cases"] += 1
        res.cases += 1
        res.not_applicable += skipped
        for r in reports:
            fam["checks"] += 1
            res.checks += 1
            if r.verdict != INCONCLUSIVE:
                fam["certified"] += 1
                res.certified += 1
            if r.soundness_violation:
                fam["violations"] += 1
                res.violations.append({"case": k, "family": case.family, "theorem": r.theorem,
                                       "verdict": r.verdict, "oracle_margin": r.oracle_margin})
    res.analytic = _analytic_checks()
    res.seconds = time.perf_counter() - start
    return res
