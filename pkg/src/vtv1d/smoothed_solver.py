"""Smoothed ROF energy and its Euler-Lagrange system.

The regularized energy replaces the total variation by ``|u'|_eps +
eps^2/2 |u'|^2`` with ``|v|_eps = sqrt(|v|^2 + eps^2)``.  On the grid, with
``delta_k = (u[k+1] - u[k]) / h`` on edge ``k``::

    E_eps(u) = sum_cells h/(2 lam) |u - f|^2 + sum_edges h (|delta|_eps + eps^2/2 |delta|^2)

Its stationarity condition is the finite-volume form of

    (u - f) / lam = (u' / |u'|_eps)' + eps^2 u'',     u' = 0 at both ends,

with edge fluxes ``q = delta / |delta|_eps + eps^2 delta`` and zero flux on
the two ghost edges outside the interval.  Summation by parts is exact for
this scheme, so the channel means of ``u`` match those of ``f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solveh_banded
from scipy.sparse.linalg import spsolve

from vtv1d.signal_core import Signal, Window

__all__ = [
    "SmoothParams",
    "SmoothReport",
    "NonFiniteError",
    "energy_smoothed",
    "energy_gradient",
    "el_residual",
    "minimize_smoothed",
    "gradient_check",
    "lemma_global_bound",
    "lemma_local_bound",
    "lemma_local_remainder",
    "lemma_slack",
    "residual_floor",
    "LocalBoundRow",
]


class NonFiniteError(FloatingPointError):
    """The iteration produced NaN or inf."""


@dataclass(frozen=True)
class SmoothParams:
    """Regularization ``epsilon``, fidelity weight ``lam`` and iteration controls.

    ``newton_tol=None`` selects ``max(1e-10, residual_floor(f, epsilon))`` at
    solve time.
    """

    epsilon: float
    lam: float
    newton_tol: float | None = None
    max_newton: int = 200
    damping: float = 1.0
    lagged_iters: int = 30

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.newton_tol is not None and not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in ]0, 1]")


@dataclass
class SmoothReport:
    u_eps: Signal
    residual_norm: float
    energy: float
    iterations: int
    converged: bool
    newton_tol: float
    lagged_steps: int = 0
    newton_steps: int = 0

    def summary(self) -> dict:
        return {
            "residual_norm": self.residual_norm,
            "newton_tol": self.newton_tol,
            "energy": self.energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "lagged_steps": self.lagged_steps,
            "newton_steps": self.newton_steps,
        }


def _edge_terms(u: np.ndarray, h: float, eps: float):
    delta = (u[1:] - u[:-1]) / h
    norm_eps = np.sqrt(np.sum(delta * delta, axis=1) + eps * eps)
    return delta, norm_eps


def _energy(u: np.ndarray, f: np.ndarray, h: float, eps: float, lam: float) -> float:
    delta, norm_eps = _edge_terms(u, h, eps)
    fid = h / (2 * lam) * float(np.sum((u - f) ** 2))
    reg = h * float(np.sum(norm_eps) + 0.5 * eps * eps * np.sum(delta * delta))
    return fid + reg


def _gradient(u: np.ndarray, f: np.ndarray, h: float, eps: float, lam: float) -> np.ndarray:
    delta, norm_eps = _edge_terms(u, h, eps)
    q = delta / norm_eps[:, None] + eps * eps * delta
    zero = np.zeros((1, u.shape[1]))
    qe = np.concatenate([zero, q, zero])
    return (h / lam) * (u - f) - (qe[1:] - qe[:-1])


def _check(u: Signal, f: Signal):
    if not u.same_shape(f):
        raise ValueError("u and f must share grid and channel count")


def energy_smoothed(u: Signal, f: Signal, params: SmoothParams) -> float:
    """Discrete regularized energy ``E_eps(u)`` for datum ``f``."""
    _check(u, f)
    return _energy(u.values, f.values, u.h, params.epsilon, params.lam)


def energy_gradient(u: Signal, f: Signal, params: SmoothParams) -> np.ndarray:
    """Gradient of :func:`energy_smoothed` with respect to the cell values."""
    _check(u, f)
    return _gradient(u.values, f.values, u.h, params.epsilon, params.lam)


def el_residual(u: Signal, f: Signal, params: SmoothParams) -> float:
    """Discrete L2 norm of ``(u - f)/lam - (flux divergence)``.

    The cell residual is the energy gradient divided by ``h``, so the norm is
    ``sqrt(sum |grad|^2 / h)``.
    """
    g = energy_gradient(u, f, params)
    return math.sqrt(float(np.sum(g * g)) / u.h)


def residual_floor(f: Signal, eps: float) -> float:
    """Rounding floor of :func:`el_residual` near the minimizer.

    An edge with ``|delta| <~ eps`` turns a rounding error ``mach * |u|``
    in the cell values into a flux error ``mach |u| / (h eps)``; over all
    edges the discrete L2 norm scales that by ``sqrt(N / h)``.
    """
    scale = max(1.0, float(np.max(np.abs(f.values))))
    mach = np.finfo(float).eps
    return mach * scale * math.sqrt(f.N / f.h) / (f.h * eps)


def resolve_tol(f: Signal, params: SmoothParams) -> float:
    if params.newton_tol is not None:
        return params.newton_tol
    return max(1e-10, residual_floor(f, params.epsilon))


def _lagged_step(u, f, h, eps, lam):
    """One frozen-coefficient solve: a scalar SPD tridiagonal shared by all channels."""
    _, norm_eps = _edge_terms(u, h, eps)
    w = (1.0 / norm_eps + eps * eps) / h  # per-edge conductance
    N = u.shape[0]
    diag = np.full(N, h / lam)
    diag[:-1] += w
    diag[1:] += w
    ab = np.zeros((2, N))
    ab[0, 1:] = -w
    ab[1] = diag
    return solveh_banded(ab, (h / lam) * f, lower=False, check_finite=False)


def _hessian(u, h, eps, lam):
    """Full Hessian, block tridiagonal with n x n blocks (channels couple through |delta|_eps)."""
    N, n = u.shape
    delta, norm_eps = _edge_terms(u, h, eps)
    eye = np.eye(n)
    blocks = (
        eye[None] * (1.0 / norm_eps + eps * eps)[:, None, None]
        - np.einsum("ki,kj->kij", delta, delta) / norm_eps[:, None, None] ** 3
    ) / h
    D1 = sp.diags([-np.ones(N - 1), np.ones(N - 1)], [0, 1], shape=(N - 1, N))
    D = sp.kron(D1, sp.identity(n), format="csr")
    B = sp.block_diag(list(blocks), format="csr")
    return (h / lam) * sp.identity(N * n, format="csr") + (D.T @ B @ D)


def minimize_smoothed(f: Signal, params: SmoothParams, u0: Signal | None = None) -> SmoothReport:
    """Minimize the regularized energy for datum ``f``.

    Lagged-diffusivity steps (damped, damping halved whenever the energy
    would increase) bring the iterate into the basin of Newton's method,
    which then polishes the full nonlinear residual down to the target
    (``params.newton_tol`` or the automatic one, see :class:`SmoothParams`).
    """
    h, eps, lam = f.h, params.epsilon, params.lam
    tol = resolve_tol(f, params)
    fv = np.array(f.values)
    u = np.array(fv if u0 is None else u0.values, dtype=float)
    if u.shape != fv.shape:
        raise ValueError("initial guess has the wrong shape")
    N, n = u.shape

    def res(v):
        g = _gradient(v, fv, h, eps, lam)
        return math.sqrt(float(np.sum(g * g)) / h), g

    E = _energy(u, fv, h, eps, lam)
    r, g = res(u)
    lagged = newton = 0
    if N == 1:
        # a single cell has no edges: the minimizer is the datum itself
        u = fv.copy()
        r, E = 0.0, 0.0
    theta = params.damping
    while r > tol and lagged < params.lagged_iters:
        target = _lagged_step(u, fv, h, eps, lam)
        while True:
            cand = u + theta * (target - u)
            E_c = _energy(cand, fv, h, eps, lam)
            if E_c <= E or theta < 1e-8:
                break
            theta *= 0.5
        lagged += 1
        step = float(np.max(np.abs(cand - u)))
        u, E = cand, E_c
        r, g = res(u)
        if not np.isfinite(r):
            raise NonFiniteError("lagged diffusivity produced non-finite values")
        if step <= 1e-3 * max(1.0, float(np.max(np.abs(u)))):
            break

    stalled = 0
    while r > tol and newton < params.max_newton:
        H = _hessian(u, h, eps, lam)
        d = -spsolve(H.tocsc(), g.ravel()).reshape(N, n)
        slope = float(np.sum(g * d))
        alpha = 1.0
        fuzz = 64 * np.finfo(float).eps * max(1.0, abs(E))
        while True:
            cand = u + alpha * d
            E_c = _energy(cand, fv, h, eps, lam)
            r_c, g_c = res(cand)
            if E_c <= E + 1e-4 * alpha * slope + fuzz or alpha < 1e-10:
                break
            alpha *= 0.5
        newton += 1
        if not np.isfinite(r_c):
            raise NonFiniteError("Newton iteration produced non-finite values")
        if r_c >= r and alpha < 1e-10:
            break
        # the flux is O(1/eps)-sensitive to rounding in u, so the residual
        # has a floor; full steps that stop shrinking it mean we are there
        stalled = stalled + 1 if (alpha == 1.0 and r_c > 0.5 * r) else 0
        u, E, r, g = cand, E_c, r_c, g_c
        if stalled >= 8:
            break

    return SmoothReport(
        u_eps=f.with_values(u),
        residual_norm=r,
        energy=E,
        iterations=lagged + newton,
        converged=r <= tol,
        newton_tol=tol,
        lagged_steps=lagged,
        newton_steps=newton,
    )


def gradient_check(f: Signal, params: SmoothParams, probe: Signal, direction=None, seed=0) -> float:
    """Relative mismatch between the analytic and finite-difference directional derivative.

    The direction (random unit vector unless given) is probed with a central
    difference of step ``1e-6 * scale``, ``scale = max(1, max|probe|)``.
    """
    _check(probe, f)
    if direction is None:
        direction = np.random.default_rng(seed).standard_normal(probe.values.shape)
    d = np.asarray(direction, dtype=float).reshape(probe.values.shape)
    d = d / np.linalg.norm(d)
    scale = max(1.0, float(np.max(np.abs(probe.values))))
    step = 1e-6 * scale
    pv = probe.values
    analytic = float(np.sum(energy_gradient(probe, f, params) * d))
    e_plus = _energy(pv + step * d, f.values, f.h, params.epsilon, params.lam)
    e_minus = _energy(pv - step * d, f.values, f.h, params.epsilon, params.lam)
    fd = (e_plus - e_minus) / (2 * step)
    denom = max(abs(analytic), abs(fd), np.finfo(float).tiny)
    if analytic == fd:
        return 0.0
    return abs(analytic - fd) / denom


def _p_energy(u: np.ndarray, h: float, eps: float, p: float, edges=slice(None)) -> float:
    _, norm_eps = _edge_terms(u, h, eps)
    return h * float(np.sum(norm_eps[edges] ** p))


def _datum_p_energy(f: Signal, p: float, edges=slice(None)) -> float:
    delta = np.diff(f.values, axis=0) / f.h
    return f.h * float(np.sum(np.linalg.norm(delta, axis=1)[edges] ** p))


def lemma_slack(f: Signal, p: float, newton_tol: float) -> float:
    """Numerical allowance for the p-energy bound comparisons: ``10 (1 + sum h|f'|^p) newton_tol``."""
    return 10.0 * (1.0 + _datum_p_energy(f, p)) * newton_tol


def lemma_global_bound(f: Signal, params: SmoothParams, p: float, u_eps: Signal | None = None):
    """Both sides of the global p-energy bound for the regularized minimizer.

    Returns ``(lhs, rhs)`` with ``lhs = sum_edges h |delta u|_eps^p`` and
    ``rhs = p eps^p |I| + sum_edges h |delta f|^p``.  The minimizer is computed
    unless supplied through ``u_eps``.
    """
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    if u_eps is None:
        u_eps = minimize_smoothed(f, params).u_eps
    eps = params.epsilon
    lhs = _p_energy(u_eps.values, f.h, eps, p)
    rhs = p * eps**p * f.grid.length + _datum_p_energy(f, p)
    return lhs, rhs


@dataclass(frozen=True)
class LocalBoundRow:
    epsilon: float
    inner: float
    target: float
    residual_norm: float

    @property
    def excess(self) -> float:
        return self.inner - self.target


def lemma_local_bound(
    f: Signal,
    params: SmoothParams,
    p: float,
    window_inner: Window,
    window_outer: Window,
    eps_sequence,
) -> list[LocalBoundRow]:
    """Inner-window p-energy of ``u_eps`` along a decreasing ``eps`` sweep.

    Each row holds ``sum_{inner edges} h |delta u_eps|_eps^p`` and the fixed
    target ``sum_{outer edges} h |delta f|^p``.  Solves are chained: each
    ``eps`` starts from the previous minimizer.  ``params.epsilon`` is
    ignored.
    """
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must lie in ]1, 2], got {p}")
    window_inner.check(f.N)
    window_outer.check(f.N)
    if not window_outer.contains(window_inner):
        raise ValueError("inner window must lie inside the outer window")
    eps_sequence = [float(e) for e in eps_sequence]
    if any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ValueError("eps_sequence must be strictly decreasing")
    inner = slice(window_inner.lo, window_inner.hi + 1)
    outer = slice(window_outer.lo, window_outer.hi + 1)
    target = _datum_p_energy(f, p, outer)
    rows = []
    u = None
    for eps in eps_sequence:
        rep = minimize_smoothed(f, replace(params, epsilon=eps), u0=u)
        u = rep.u_eps
        rows.append(LocalBoundRow(eps, _p_energy(u.values, f.h, eps, p, inner), target, rep.residual_norm))
    return rows


def lemma_local_remainder(f: Signal, p: float, eps: float, window_inner: Window, window_outer: Window) -> float:
    """Finite-``eps`` allowance in the local bound; vanishes as ``eps -> 0`` for ``p > 1``.

    With ``d`` the smaller gap between the window ends and ``|R|`` the outer
    window length (both in units of ``x``)::

        p eps^p |R| + 2 eps^(p-1) / ((p-1) d)
            + eps^2 / ((p-1) d^2) (p eps^p |I| + sum h |delta f|^p)
    """
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must lie in ]1, 2], got {p}")
    if not window_outer.contains(window_inner):
        raise ValueError("inner window must lie inside the outer window")
    d = min(window_inner.lo - window_outer.lo, window_outer.hi - window_inner.hi) * f.h
    if d <= 0:
        return math.inf
    R = (len(window_outer) + 1) * f.h
    total = p * eps**p * f.grid.length + _datum_p_energy(f, p)
    return p * eps**p * R + 2 * eps ** (p - 1) / ((p - 1) * d) + eps**2 / ((p - 1) * d * d) * total
