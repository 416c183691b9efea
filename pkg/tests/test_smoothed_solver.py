import numpy as np
import pytest

import oracles
from vtv1d.prox_vtv import ProxParams, energy, prox
from vtv1d.signal_core import Signal, Window, channel_means, generate
from vtv1d.smoothed_solver import (
    SmoothParams,
    el_residual,
    energy_gradient,
    energy_smoothed,
    gradient_check,
    lemma_global_bound,
    lemma_local_bound,
    lemma_local_remainder,
    lemma_slack,
    minimize_smoothed,
    resolve_tol,
)


def smooth(seed, N=64, n=2):
    return generate("smooth", {"N": N, "n": n}, seed=seed)


class TestParams:
    @pytest.mark.parametrize(
        "kw",
        [
            {"epsilon": 0.0, "lam": 1.0},
            {"epsilon": 0.1, "lam": -1.0},
            {"epsilon": 0.1, "lam": 1.0, "damping": 0.0},
            {"epsilon": 0.1, "lam": 1.0, "damping": 1.5},
            {"epsilon": 0.1, "lam": 1.0, "newton_tol": -1.0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SmoothParams(**kw)


class TestEnergy:
    def test_constant(self):
        f = Signal.from_values(np.ones((10, 2)), h=0.1)
        assert energy_smoothed(f, f, SmoothParams(0.3, 1.0)) == pytest.approx(9 * 0.1 * 0.3)

    def test_small_eps_limit(self):
        f = generate("noisy", {"N": 30, "n": 3}, seed=1)
        u = prox(f, ProxParams(0.05)).u
        assert energy_smoothed(u, f, SmoothParams(1e-12, 0.05)) == pytest.approx(energy(u, f, 0.05), abs=1e-8)

    def test_quadratic_term_homogeneity(self):
        x = np.linspace(0, 1, 20)
        p = SmoothParams(0.5, 1.0)

        def quad(u):
            # with f = u the fidelity vanishes; remove the |.|_eps part
            s = Signal.from_values(u, h=0.05)
            return energy_smoothed(s, s, p) - _root_part(u, 0.05, 0.5)

        assert quad(2 * x) == pytest.approx(4 * quad(x), rel=1e-9)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        f = Signal.from_values(rng.standard_normal((12, 3)), h=0.3)
        u = f.with_values(rng.standard_normal((12, 3)))
        assert energy_smoothed(u, f, SmoothParams(0.07, 0.4)) == pytest.approx(oracles.smoothed_energy(u.values, f.values, 0.4, 0.3, 0.07), rel=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            energy_smoothed(smooth(0, N=8), smooth(0, N=9), SmoothParams(0.1, 1.0))


def _root_part(u, h, eps):
    d = np.diff(u) / h
    return float(np.sum(h * np.sqrt(d * d + eps * eps)))


class TestGradient:
    @pytest.mark.parametrize("seed", range(6))
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        f = generate("noisy", {"N": 40, "n": 3}, seed=seed)
        probe = f.with_values(f.values + rng.standard_normal(f.values.shape))
        for eps in (1e-1, 1e-2, 1e-3):
            assert gradient_check(f, SmoothParams(eps, 0.1), probe, seed=seed) <= 1e-6

    def test_fidelity_gradient_zero_at_constant(self):
        f = Signal.from_values(np.full((6, 2), 1.5))
        np.testing.assert_array_equal(energy_gradient(f, f, SmoothParams(0.1, 1.0)), 0.0)

    def test_directional_derivative_at_minimizer(self):
        f = smooth(3)
        p = SmoothParams(1e-2, 0.05)
        rep = minimize_smoothed(f, p)
        g = energy_gradient(rep.u_eps, f, p)
        rng = np.random.default_rng(0)
        for _ in range(5):
            d = rng.standard_normal(g.shape)
            d /= np.linalg.norm(d)
            assert abs(np.sum(g * d)) <= rep.newton_tol * np.sqrt(f.h) * max(1.0, np.abs(f.values).max()) * 10


class TestMinimize:
    def test_constant_fixed_point(self):
        f = Signal.from_values(np.full((9, 3), -0.4))
        rep = minimize_smoothed(f, SmoothParams(0.1, 1.0))
        assert rep.u_eps == f and rep.converged and rep.residual_norm == 0.0

    def test_matches_independent_minimizer(self):
        rng = np.random.default_rng(7)
        f = Signal.from_values(rng.standard_normal((16, 2)), h=1 / 16)
        p = SmoothParams(1e-2, 0.05)
        rep = minimize_smoothed(f, p)
        u_ref, e_ref = oracles.smoothed_minimizer(f.values, 0.05, f.h, 1e-2)
        assert rep.converged
        assert abs(rep.energy - e_ref) <= 1e-10
        assert rep.energy <= e_ref + 1e-12
        np.testing.assert_allclose(rep.u_eps.values, u_ref, atol=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_residual_means_descent(self, seed):
        f = generate("noisy", {"N": 100, "n": 3, "base": "smooth", "sigma": 0.1}, seed=seed)
        p = SmoothParams(1e-3, 0.02)
        rep = minimize_smoothed(f, p)
        assert rep.converged and rep.residual_norm <= rep.newton_tol
        assert el_residual(rep.u_eps, f, p) == pytest.approx(rep.residual_norm, rel=1e-6, abs=1e-12)
        np.testing.assert_allclose(channel_means(rep.u_eps), channel_means(f), atol=1e-10)
        assert rep.energy <= energy_smoothed(f, f, p)

    def test_rotation(self):
        rng = np.random.default_rng(5)
        f = smooth(5, n=3)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        p = SmoothParams(1e-2, 0.05)
        a = minimize_smoothed(f, p).u_eps
        b = minimize_smoothed(f.with_values(f.values @ q.T), p).u_eps
        np.testing.assert_allclose(b.values, a.values @ q.T, atol=1e-8)

    def test_resolved_tolerance(self):
        f = smooth(0, N=512)
        assert resolve_tol(f, SmoothParams(1e-4, 0.1)) >= 1e-10
        assert resolve_tol(f, SmoothParams(1e-4, 0.1, newton_tol=1e-3)) == 1e-3

    @pytest.mark.parametrize("seed", range(3))
    def test_eps_sweep_converges_to_prox(self, seed):
        f = smooth(seed, N=128)
        lam = 0.05
        exact = prox(f, ProxParams(lam, 1e-12)).u.values
        errs, u = [], None
        for eps in (1e-1, 1e-2, 1e-3, 1e-4):
            u = minimize_smoothed(f, SmoothParams(eps, lam), u0=u).u_eps
            errs.append(np.sqrt(f.h * np.sum((u.values - exact) ** 2)))
        assert all(b < a for a, b in zip(errs, errs[1:])), errs
        assert errs[-1] <= 1e-3


class TestLemma:
    def test_global_constant_exact(self):
        f = Signal(generate("constant", {"N": 20, "n": 2}, seed=0).grid, np.ones((20, 2)))
        for p in (1.0, 1.5, 2.0):
            lhs, rhs = lemma_global_bound(f, SmoothParams(1e-2, 0.1), p)
            assert lhs == pytest.approx(19 * f.h * 1e-2**p)
            assert lhs <= rhs

    @pytest.mark.parametrize("eps,p", [(1e-2, 1.5), (1e-3, 2.0), (1e-1, 1.0), (1e-2, 1.1)])
    def test_global_smooth(self, eps, p):
        f = generate("smooth", {"N": 80, "n": 2}, seed=int(1000 * eps))
        prm = SmoothParams(eps, 0.05)
        rep = minimize_smoothed(f, prm)
        lhs, rhs = lemma_global_bound(f, prm, p, u_eps=rep.u_eps)
        assert lhs <= rhs + lemma_slack(f, p, rep.newton_tol)

    def test_global_p_range(self):
        with pytest.raises(ValueError):
            lemma_global_bound(smooth(0, N=8), SmoothParams(0.1, 1.0), 2.5)

    def test_local_full_domain_matches_global(self):
        f = smooth(1, N=40)
        full = Window(0, f.N - 2)
        rows = lemma_local_bound(f, SmoothParams(1e-2, 0.05), 1.5, full, full, [1e-2])
        lhs, rhs = lemma_global_bound(f, SmoothParams(1e-2, 0.05), 1.5)
        assert rows[0].inner == pytest.approx(lhs, rel=1e-9)
        assert rows[0].target == pytest.approx(rhs - 1.5 * 1e-2**1.5 * f.grid.length, rel=1e-12)

    def test_local_constant(self):
        f = Signal.from_values(np.ones((30, 2)), h=1 / 30)
        rows = lemma_local_bound(f, SmoothParams(0.1, 0.1), 1.5, Window(5, 10), Window(2, 20), [1e-1, 1e-2, 1e-3])
        for r in rows:
            assert r.target == 0.0
            assert r.inner <= r.target + 29 * f.h * r.epsilon**1.5 + 1e-15

    @pytest.mark.parametrize("seed", range(3))
    def test_local_surrogate(self, seed):
        f = smooth(seed, N=96)
        inner, outer = Window(30, 50), Window(20, 60)
        p = 1.5
        rows = lemma_local_bound(f, SmoothParams(1e-1, 0.05), p, inner, outer, [1e-1, 1e-2, 1e-3, 1e-4])
        over = [max(0.0, r.excess) for r in rows]
        assert all(b <= a + 1e-9 for a, b in zip(over, over[1:]))
        for r in rows:
            assert r.excess <= lemma_local_remainder(f, p, r.epsilon, inner, outer) + 1e-9

    @pytest.mark.parametrize(
        "p,inner,outer,eps",
        [
            (1.0, Window(2, 3), Window(1, 5), [0.1]),
            (1.5, Window(1, 6), Window(2, 5), [0.1]),
            (1.5, Window(2, 3), Window(1, 5), [0.01, 0.1]),
            (1.5, Window(2, 3), Window(1, 50), [0.1]),
        ],
    )
    def test_local_invalid(self, p, inner, outer, eps):
        with pytest.raises((ValueError, IndexError)):
            lemma_local_bound(smooth(0, N=10), SmoothParams(0.1, 0.1), p, inner, outer, eps)

    def test_remainder_vanishes(self):
        f = smooth(0, N=64)
        vals = [lemma_local_remainder(f, 1.5, e, Window(20, 30), Window(10, 40)) for e in (1e-1, 1e-3, 1e-10)]
        assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-3  # decays like eps^(p-1)
