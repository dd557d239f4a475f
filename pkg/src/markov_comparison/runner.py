"""Scenario orchestration: comparison checks, analytic residuals, Monte Carlo, artifacts."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .comparison import CHECKERS, EQ, GE, INCONCLUSIVE, LE, ComparisonPair, sweep_function_class
from .evolution import KnotSeries, check_backward_equation, check_inhomogeneous_representation, \
    check_integral_representation
from .generators import estimate_generator
from .montecarlo import linking_supermartingale_test, martingale_test, simulate
from .scenario import Scenario

EXIT_OK = 0
EXIT_INCONCLUSIVE = 1
EXIT_SOUNDNESS = 2
EXIT_INVALID = 3

MC_FILE = "montecarlo.csv"


@dataclass
class RunResult:
    exit_code: int
    report: dict
    csv: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: str) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = [atomic_write(os.path.join(out_dir, "report.json"), dump_report(self.report))]
        for name, text in sorted(self.csv.items()):
            written.append(atomic_write(os.path.join(out_dir, name), text))
        return written


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def atomic_write(path: str, text: str) -> str:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else repr(float(x))
    return "" if x is None else x


def _jsonable(obj):
    """Replace non-finite floats so the report stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _generator_times(pair: ComparisonPair, horizon: float) -> list[float]:
    """A few interior knots plus every breakpoint and epoch that is a knot."""
    knots = pair.knots
    picks = {float(knots[len(knots) // 4]), float(knots[len(knots) // 2]), float(knots[3 * len(knots) // 4])}
    for spec in (pair.spec_x, pair.spec_y):
        for b in np.union1d(spec.rates.breakpoints(), spec.epochs):
            if 0 < b < horizon:
                picks.add(float(b))
    return sorted(picks)


def _theorem3_residual(pair: ComparisonPair, f, t: float) -> float:
    """Residual of ``F(r) = T^X_{r,t} F(t) - int_r^t T^X_{r,q} G(q) dq``.

    Here ``F(s) = T^Y_{s,t} f`` and ``G = (Q^X - Q^Y) F`` is its exact
    space-time image under the generator of ``X``.
    """
    j = pair.ev_x.index(t)
    knots = pair.knots[: j + 1]
    F = pair.ev_y.backward(f, t)
    D = pair.rates("x", "right")[: j + 1] - pair.rates("y", "right")[: j + 1]
    G = np.einsum("kij,kj->ki", D, F)
    return check_inhomogeneous_representation(pair.ev_x, KnotSeries(knots, F), KnotSeries(knots, G), 0.0, t)


def run_scenario(sc: Scenario, *, workers: int = 1) -> RunResult:
    pair = ComparisonPair.build(sc.spec_x, sc.spec_y, sc.steps, extra=sc.times)
    horizon = sc.spec_x.horizon

    jobs = []
    for t in sc.times:
        for f in sc.functions:
            for th in sc.theorems:
                jobs.append((th, t, f))

    def run_job(job):
        th, t, f = job
        kwargs = {"steps": sc.steps, "pair": pair}
        if th in ("theorem7", "theorem8", "theorem9"):
            kwargs["eps"] = sc.support_eps
        return CHECKERS[th](sc.spec_x, sc.spec_y, f, t, sc.tol, **kwargs)

    # fill shared caches before the pool starts
    for which in ("x", "y"):
        for side in ("right", "left"):
            pair.rates(which, side)
            pair.marginals(which, side)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_job, jobs))
    else:
        reports = [run_job(j) for j in jobs]

    classes = [sweep_function_class(sc.spec_x, sc.spec_y, sc.cone, t, sc.tol, steps=sc.steps, pair=pair)
               for t in sc.times] if sc.cone is not None else []

    residual_rows, analytic = [], []
    for t in sc.times:
        for f in sc.functions:
            for label, ev in (("X", pair.ev_x), ("Y", pair.ev_y)):
                curve = check_backward_equation(ev, f, t)
                integral = check_integral_representation(ev, f, 0.0, t)
                residual_rows += [(label, f.name, t, s, r, l) for s, r, l in curve.rows()]
                analytic.append({"process": label, "function": f.name, "t": t,
                                 "backward_equation_max": curve.max,
                                 "integral_forward": integral.forward, "integral_backward": integral.backward})
            analytic.append({"process": "pair", "function": f.name, "t": t,
                             "theorem3_representation": _theorem3_residual(pair, f, t)})

    gen_rows, gen_summary = [], []
    for s in _generator_times(pair, horizon):
        for label, ev in (("X", pair.ev_x), ("Y", pair.ev_y)):
            for side in ("right", "left"):
                if (side == "right" and s >= pair.knots[-1]) or (side == "left" and s <= 0):
                    continue
                est = estimate_generator(ev, s, side)
                exact = ev.spec.rates.rate_at(s, left=(side == "left"))
                err = float(np.abs(est.matrix - exact).max())
                gen_rows += [(label, s, side, h, gap, est.error_estimate, est.converged, err)
                             for h, gap in est.gap_rows()]
                gen_summary.append({"process": label, "s": s, "side": side, "converged": est.converged,
                                    "diverged": est.diverged, "error_estimate": est.error_estimate,
                                    "max_abs_error": err})

    link_rows = []
    for r in reports:
        if r.linking_curve is not None:
            link_rows += [(r.theorem, r.function, r.t, s, g) for s, g in r.linking_curve.rows()]

    mc_section, mc_rows, mc_ok = None, [], True
    if sc.montecarlo.enabled:
        mc_section, mc_rows, mc_ok = _monte_carlo(sc, pair, reports)

    violations = [r for r in reports if r.soundness_violation]
    inconclusive = [r for r in reports if r.verdict == INCONCLUSIVE]
    if violations:
        code = EXIT_SOUNDNESS
    elif inconclusive or not mc_ok or any(c.verdict == INCONCLUSIVE for c in classes):
        code = EXIT_INCONCLUSIVE
    else:
        code = EXIT_OK

    report = {
        "schema_version": "v1",
        "scenario": sc.name,
        "grid_steps": sc.steps,
        "knots": int(pair.knots.size),
        "seed": sc.seed,
        "tolerance": sc.tol,
        "exit_code": code,
        "summary": {
            "checks": len(reports),
            "certified": sum(r.certified for r in reports),
            "inconclusive": len(inconclusive),
            "soundness_violations": len(violations),
            "montecarlo_passed": mc_ok,
        },
        "comparisons": [r.to_dict() for r in reports],
        "function_classes": [c.to_dict() for c in classes],
        "analytic_residuals": analytic,
        "generator_convergence": gen_summary,
        "montecarlo": mc_section,
    }
    files = {
        "linking_curve.csv": _csv(["theorem", "function", "t", "s", "g"], link_rows),
        "residuals.csv": _csv(["process", "function", "t", "s", "right_residual", "left_residual"], residual_rows),
        "generator_convergence.csv": _csv(
            ["process", "s", "side", "h", "cauchy_gap", "error_estimate", "converged", "max_abs_error"], gen_rows),
    }
    if sc.montecarlo.enabled:
        files[MC_FILE] = _csv(["process", "test", "function", "target_t", "s", "t", "state", "count",
                               "mean", "se", "z"], mc_rows)
    return RunResult(code, _jsonable(report), files)


def _checkpoints(t: float, count: int) -> list[float]:
    return [float(x) for x in np.linspace(0.0, t, count)]


def _monte_carlo(sc: Scenario, pair: ComparisonPair, reports):
    mc = sc.montecarlo
    paths_x = simulate(sc.spec_x, mc.paths, seed=sc.seed, workers=mc.workers)
    paths_y = simulate(sc.spec_y, mc.paths, seed=sc.seed + 1, workers=mc.workers)
    tests, rows, ok = [], [], True

    def record(kind, label, f, t, res):
        nonlocal ok
        ok &= res.passed
        d = res.to_dict()
        d.update({"test": kind, "process": label, "function": f.name, "target_t": t})
        tests.append(d)
        rows.extend((label, kind, f.name, t, c["s"], c["t"], c["state"], c["count"], c["mean"], c["se"], c["z"])
                    for c in res.cells)

    for f in sc.functions:
        for label, spec, paths in (("X", sc.spec_x, paths_x), ("Y", sc.spec_y, paths_y)):
            cps = _checkpoints(spec.horizon, mc.checkpoints)
            record("martingale", label, f, spec.horizon, martingale_test(paths, spec, f, cps, mc.z_max))
    # linking process, direction taken from the exact verdicts
    # only the primary verdict speaks about T^X_{s,t} f along Y
    verdicts = {}
    for r in reports:
        verdicts.setdefault((r.function, r.t), set()).add(r.extra.get("primary_verdict", r.verdict))
    for f in sc.functions:
        for t in sc.times:
            v = verdicts.get((f.name, t), set())
            alternative = ("two-sided" if EQ in v else "super" if GE in v else "sub" if LE in v else None)
            if alternative is None:
                continue
            cps = [float(pair.knots[k]) for k in
                   np.unique(np.round(np.linspace(0, pair.ev_x.index(t), mc.checkpoints)).astype(int))]
            res = linking_supermartingale_test(paths_y, pair.ev_x, f, t, cps, mc.z_max, alternative,
                                              spec_y=sc.spec_y)
            record("linking", "Y", f, t, res)
    section = {"paths": mc.paths, "z_max": mc.z_max, "seed_x": sc.seed, "seed_y": sc.seed + 1,
               "passed": ok, "tests": tests}
    return section, rows, ok
