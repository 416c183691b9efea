"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is also shown in the terminal
summary of the pytest run.
"""

import json
import time

import numpy as np
import pytest

import oracles
from vtv1d.flow import FlowParams, evolve
from vtv1d.properties import SuiteConfig, suite_corollary, suite_cross_solver, suite_lemma, suite_theorem
from vtv1d.prox_vtv import ProxParams, prox, taut_string_scalar
from vtv1d.signal_core import Signal, generate, l2_norm
from vtv1d.smoothed_solver import SmoothParams, gradient_check, minimize_smoothed


def _count(report, prefix):
    return sum(1 for v in report.violations if v.quantity.startswith(prefix))


def _random_signal(rng, n=None, N_range=(8, 512)):
    N = int(np.exp(rng.uniform(np.log(N_range[0]), np.log(N_range[1]))))
    n = n or int(rng.choice([1, 2, 3, 8]))
    kind = rng.choice(["step", "noisy", "smooth"], p=[0.4, 0.3, 0.3])
    params = {"N": N, "n": n}
    if kind == "noisy":
        params["sigma"] = rng.uniform(0.05, 0.5)
    f = generate(str(kind), params, seed=int(rng.integers(2**32)))
    lam = float(np.exp(rng.uniform(np.log(1e-3 * f.h), np.log(10 * f.h * N))))
    return f, lam


@pytest.fixture(scope="module")
def theorem_report():
    return suite_theorem(SuiteConfig(seed=2024, cases=200))


@pytest.fixture(scope="module")
def lemma_report():
    return suite_lemma(SuiteConfig(seed=2024, cases=30))


def test_c01_theorem_suite(theorem_report, record):
    r = theorem_report
    edge, window = _count(r, "edge_jump"), _count(r, "window_tv")
    ok = (
        r.cases == 200
        and edge == 0
        and window == 0
        and not r.uncertified
        and r.stats["max_gap"] <= 1e-10
        and r.wall_time < 120
    )
    record(1, ok, f"200 cases, edge violations={edge}, window violations={window}, uncertified={len(r.uncertified)}, max gap={r.stats['max_gap']:.2e}, {r.wall_time:.1f}s")
    assert ok


def test_c02_global_estimate(theorem_report, record):
    r = theorem_report
    glob = _count(r, "global_tv")
    ok = glob == 0 and r.cases == 200
    record(2, ok, f"tv(u) <= tv(f) + slack on all 200 cases, violations={glob}")
    assert ok


def test_c03_corollary_suite(record):
    r = suite_corollary(SuiteConfig(seed=2024, cases=100, steps_range=(4, 64)))
    jumps = sum(1 for v in r.violations if v.quantity.startswith(("cumulative", "stepwise")))
    decay, mean = _count(r, "tv_decay"), _count(r, "mean")
    ok = not r.violations and not r.uncertified and r.wall_time < 180
    record(3, ok, f"100 trajectories, jump violations={jumps}, tv increases={decay}, mean drift={mean}, other={len(r.violations) - jumps - decay - mean}, {r.wall_time:.1f}s")
    assert ok


def test_c04_closed_forms(record):
    rng = np.random.default_rng(4)
    worst = {"two_point": 0.0, "monotone": 0.0, "extinction": 0.0}
    for _ in range(40):
        n = int(rng.choice([1, 2, 3, 8]))
        h = rng.uniform(0.1, 2.0)
        f = rng.standard_normal((2, n))
        lam = h * np.linalg.norm(f[1] - f[0]) * rng.uniform(0.05, 1.0)
        u = prox(Signal.from_values(f, h=h), ProxParams(lam, 1e-12)).u.values
        worst["two_point"] = max(worst["two_point"], np.max(np.abs(u - oracles.two_point(f, lam, h))))

        N = int(rng.integers(2, 40))
        lam = rng.uniform(0.01, 1.0)
        r = lam / h
        gaps = rng.uniform(2.5 * r, 2.5 * r + 3.0, N - 1)
        g = rng.standard_normal() + np.concatenate([[0.0], np.cumsum(gaps)])
        s = Signal.from_values(g, h=h)
        expected = oracles.monotone_kkt(g, lam, h)
        for u in (prox(s, ProxParams(lam, 1e-12)).u.values[:, 0], taut_string_scalar(s, lam).values[:, 0]):
            worst["monotone"] = max(worst["monotone"], np.max(np.abs(u - expected)))

        u0 = rng.standard_normal((2, n))
        t_star = h * np.linalg.norm(u0[1] - u0[0]) / 2
        for t in (0.5 * t_star, t_star, 1.5 * t_star):
            traj = evolve(Signal.from_values(u0, h=h), FlowParams(t, int(rng.integers(1, 20)), 1e-12))
            worst["extinction"] = max(worst["extinction"], np.max(np.abs(traj.final.values - oracles.two_cell_flow(u0, t, h))))
    ok = all(v <= 1e-10 for v in worst.values())
    record(4, ok, "max abs error " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " (tol 1e-10)")
    assert ok


def test_c05_scalar_oracle(record):
    rng = np.random.default_rng(5)
    worst, uncertified = 0.0, 0
    for _ in range(100):
        f, lam = _random_signal(rng, n=1)
        rep = prox(f, ProxParams(lam, 1e-12))
        uncertified += not rep.certified
        worst = max(worst, float(np.max(np.abs(rep.u.values - taut_string_scalar(f, lam).values))))
    ok = worst <= 1e-8 and uncertified == 0
    record(5, ok, f"100 scalar instances at gap 1e-12, max |prox - taut| = {worst:.2e}, uncertified={uncertified}")
    assert ok


def test_c06_lemma_global(lemma_report, record):
    r = lemma_report
    bad = _count(r, "global")
    ok = r.cases == 30 and bad == 0 and not r.uncertified
    record(6, ok, f"30 smooth instances x p {{1,1.1,1.5,2}} x eps {{1e-1,1e-2,1e-3}}, violations={bad}, min margin={r.stats['min_global_margin']:.3g}")
    assert ok


def test_c07_lemma_local(lemma_report, record):
    r = lemma_report
    mono, rem, final = _count(r, "local_excess_monotone"), _count(r, "local_remainder"), _count(r, "local_final")
    ok = r.cases == 30 and mono == rem == final == 0
    record(7, ok, f"30 smooth instances, nested windows, eps 1e-1..1e-4: monotone={mono}, remainder={rem}, final={final} violations; max final excess={r.stats['max_local_final_excess']:.3g}")
    assert ok


def test_c08_eps_consistency(record):
    lam = 0.05
    decreasing, final_errs, grad_worst = True, [], 0.0
    rng = np.random.default_rng(8)
    for seed in range(10):
        f = generate("smooth", {"N": 128, "n": 1 + seed % 3}, seed=seed)
        exact = prox(f, ProxParams(lam, 1e-12)).u.values
        errs, u = [], None
        for eps in (1e-1, 1e-2, 1e-3, 1e-4):
            params = SmoothParams(eps, lam)
            u = minimize_smoothed(f, params, u0=u).u_eps
            errs.append(l2_norm(u.values - exact, f.h))
            probe = f.with_values(f.values + rng.standard_normal(f.values.shape))
            grad_worst = max(grad_worst, gradient_check(f, params, probe, seed=seed))
        decreasing &= all(b < a for a, b in zip(errs, errs[1:]))
        final_errs.append(errs[-1])
    ok = decreasing and grad_worst <= 1e-6
    record(8, ok, f"10 smooth instances: L2 error strictly decreasing={decreasing}, error at eps=1e-4 max={max(final_errs):.2e}, gradient check max={grad_worst:.2e}")
    assert ok


def test_c09_nonexpansive_rotation(record):
    rng = np.random.default_rng(9)
    nonexp_bad = rot_bad = 0
    for _ in range(50):
        f, lam = _random_signal(rng, N_range=(8, 256))
        g = f.with_values(f.values + rng.uniform(0.01, 1.0) * rng.standard_normal(f.values.shape))
        a, b = prox(f, ProxParams(lam)), prox(g, ProxParams(lam))
        lhs = l2_norm(a.u.values - b.u.values, f.h)
        slack = 1e-8 + np.sqrt(2 * lam * a.gap) + np.sqrt(2 * lam * b.gap)
        nonexp_bad += lhs > l2_norm(f.values - g.values, f.h) + slack

        q, rr = np.linalg.qr(rng.standard_normal((f.n, f.n)))
        q = q * np.sign(np.diag(rr))
        c = prox(f.with_values(f.values @ q.T), ProxParams(lam))
        err = float(np.max(np.abs(c.u.values - a.u.values @ q.T)))
        rot_bad += err > 1e-8 + 0.5 * (a.eps_tol + c.eps_tol)
    ok = nonexp_bad == 0 and rot_bad == 0
    record(9, ok, f"50 pairs / 50 rotations: non-expansiveness failures={nonexp_bad}, equivariance failures={rot_bad}")
    assert ok


def test_c10_determinism(record):
    runs = [
        (suite_theorem, SuiteConfig(seed=10, cases=20)),
        (suite_corollary, SuiteConfig(seed=10, cases=10)),
        (suite_lemma, SuiteConfig(seed=10, cases=3)),
        (suite_cross_solver, SuiteConfig(seed=10, cases=6)),
    ]
    same = []
    for fn, cfg in runs:
        a = json.dumps(fn(cfg).body(), sort_keys=True)
        time.sleep(0.01)
        b = json.dumps(fn(cfg).body(), sort_keys=True)
        same.append(a == b)
    ok = all(same)
    record(10, ok, "identical report bodies on repeat: " + ", ".join(f"{fn.__name__}={s}" for (fn, _), s in zip(runs, same)))
    assert ok
