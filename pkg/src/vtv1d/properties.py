"""Seeded randomized verification suites.

Each suite draws ``cases`` independent instances, runs the solvers on them
and checks the jump, variation and energy inequalities with slacks derived
from the solve certificates.  Failures are recorded with enough data to
reproduce them (seed, case index, digest of the inputs) instead of raised.

Case ``i`` of a run with seed ``s`` draws from
``SeedSequence([s, SUITE_TAG, i])``, so reports do not depend on the order
in which cases execute.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from vtv1d.flow import FlowParams, evolve, rounding_floor, tv_decay, verify_corollary
from vtv1d.prox_vtv import ProxParams, prox, taut_string_scalar
from vtv1d.signal_core import (
    Grid,
    Signal,
    Window,
    dyadic_windows,
    edge_jumps,
    generate,
    l2_norm,
    lipschitz_constant,
    refine,
    tv,
)
from vtv1d.smoothed_solver import (
    SmoothParams,
    lemma_global_bound,
    lemma_local_bound,
    lemma_local_remainder,
    lemma_slack,
    minimize_smoothed,
    resolve_tol,
)

__all__ = [
    "SuiteConfig",
    "Violation",
    "PropertyReport",
    "suite_theorem",
    "suite_corollary",
    "suite_lemma",
    "suite_cross_solver",
    "SUITES",
    "run_suite",
]

MEAN_TOL = 1e-10
CROSS_TAUT_TOL = 1e-8
CROSS_SMOOTH_TOL = 1e-3
CLOSED_FORM_TOL = 1e-10
EQUIVARIANCE_TOL = 1e-8


@dataclass
class SuiteConfig:
    """Instance distribution and tolerances for a suite run.

    ``lam_range`` is in units of the grid: ``lam`` is drawn log-uniformly
    from ``[lam_range[0] * h, lam_range[1] * h * N]``.  The flow suite draws
    ``t_final`` from the same range.  ``kinds`` maps generator kinds to
    weights; ``"noisy"`` means noise on a step signal.
    """

    seed: int = 0
    cases: int = 200
    N_range: tuple[int, int] = (8, 512)
    n_choices: tuple[int, ...] = (1, 2, 3, 8)
    lam_range: tuple[float, float] = (1e-3, 10.0)
    kinds: dict = field(default_factory=lambda: {"step": 0.4, "noisy": 0.3, "smooth": 0.3})
    sigma_range: tuple[float, float] = (0.05, 0.5)
    gap_tol: float = 1e-10
    cross_gap_tol: float = 1e-12
    steps_range: tuple[int, int] = (4, 64)
    # lemma suite
    lemma_lam_range: tuple[float, float] = (1e-3, 1e-1)
    eps_list: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    eps_local: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    p_list: tuple[float, ...] = (1.0, 1.1, 1.5, 2.0)
    newton_tol: float | None = None
    smooth_eps: float = 1e-4
    closed_form_every: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.cases < 1:
            raise ValueError("cases must be >= 1")
        lo, hi = self.N_range
        if not 2 <= lo <= hi:
            raise ValueError("N_range must satisfy 2 <= lo <= hi")
        if not self.n_choices or min(self.n_choices) < 1:
            raise ValueError("n_choices must be nonempty positive integers")
        if not 0 < self.lam_range[0] <= self.lam_range[1]:
            raise ValueError("lam_range must be positive and ordered")
        if not self.kinds or any(w < 0 for w in self.kinds.values()) or sum(self.kinds.values()) <= 0:
            raise ValueError("kinds must have nonnegative weights with positive sum")
        if not 1 <= self.steps_range[0] <= self.steps_range[1]:
            raise ValueError("steps_range must satisfy 1 <= lo <= hi")
        if not self.eps_list or not self.p_list:
            raise ValueError("eps_list and p_list must be nonempty")
        self.kinds = dict(self.kinds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        return d


@dataclass(frozen=True)
class Violation:
    case: int
    digest: str
    quantity: str
    lhs: float
    rhs: float
    slack: float


@dataclass
class PropertyReport:
    suite: str
    seed: int
    cases: int
    checks: int
    violations: list[Violation]
    slack_exceedances: int
    uncertified: list[int]
    stats: dict
    config: dict
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        # uncertified cases are reported separately; their checks already carry the wider slack
        return not self.violations

    def body(self) -> dict:
        """Report content without the wall time (deterministic for a fixed config)."""
        return {
            "suite": self.suite,
            "seed": self.seed,
            "cases": self.cases,
            "checks": self.checks,
            "passed": self.passed,
            "violations": [asdict(v) for v in self.violations],
            "slack_exceedances": self.slack_exceedances,
            "uncertified": list(self.uncertified),
            "stats": self.stats,
            "config": self.config,
        }

    def to_json(self) -> str:
        d = self.body()
        d["wall_time"] = self.wall_time
        return json.dumps(d, indent=2, sort_keys=True)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["suite", "seed", "cases", "checks", "violations", "slack_exceedances", "uncertified", "passed", "wall_time"])
        w.writerow([
            self.suite, self.seed, self.cases, self.checks, len(self.violations),
            self.slack_exceedances, len(self.uncertified), self.passed, f"{self.wall_time:.3f}",
        ])
        return buf.getvalue()


class _Case:
    """Per-case accumulator shared by the suites."""

    def __init__(self, index: int, digest: str):
        self.index = index
        self.digest = digest
        self.checks = 0
        self.violations: list[Violation] = []
        self.slack_exceedances = 0
        self.certified = True
        self.stats: dict[str, float] = {}

    def leq(self, quantity: str, lhs, rhs, slack, count_exceed: bool = True) -> None:
        """Record ``lhs <= rhs + slack`` elementwise; raw excess within slack is counted, not failed."""
        lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape)
        slack = np.broadcast_to(np.asarray(slack, dtype=float), lhs.shape)
        self.checks += lhs.size
        raw = lhs > rhs
        bad = lhs > rhs + slack
        if count_exceed:
            self.slack_exceedances += int(np.count_nonzero(raw & ~bad))
        for k in np.flatnonzero(bad):
            self.violations.append(Violation(self.index, self.digest, quantity, float(lhs[k]), float(rhs[k]), float(slack[k])))

    def close(self, quantity: str, a, b, tol) -> None:
        """Record ``max |a - b| <= tol``."""
        err = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))) if np.size(a) else 0.0
        self.leq(quantity, err, 0.0, tol, count_exceed=False)

    def stat(self, name: str, value: float, how=max) -> None:
        value = float(value)
        self.stats[name] = how(self.stats[name], value) if name in self.stats else value


def _digest(*arrays, **scalars) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    h.update(json.dumps(scalars, sort_keys=True).encode())
    return h.hexdigest()[:16]


def _case_rng(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, index]))


def _log_uniform(rng, lo, hi) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _draw_N(rng, cfg: SuiteConfig) -> int:
    lo, hi = cfg.N_range
    return int(min(hi, max(lo, round(_log_uniform(rng, lo, hi + 1 - 1e-9) - 0.5))))


def _draw_signal(rng, cfg: SuiteConfig, kinds: dict | None = None, n: int | None = None) -> Signal:
    kinds = kinds or cfg.kinds
    names = sorted(kinds)
    w = np.array([kinds[k] for k in names], dtype=float)
    kind = names[int(rng.choice(len(names), p=w / w.sum()))]
    N = _draw_N(rng, cfg)
    n = int(rng.choice(cfg.n_choices)) if n is None else n
    params = {"N": N, "n": n}
    if kind == "noisy":
        params.update(base="step", sigma=rng.uniform(*cfg.sigma_range))
    if kind == "circle":
        params["n"] = 2
    return generate(kind, params, seed=int(rng.integers(2**32)))


def _draw_lam(rng, cfg: SuiteConfig, f: Signal) -> float:
    return _log_uniform(rng, cfg.lam_range[0] * f.h, cfg.lam_range[1] * f.h * f.N)


def _prefix(j: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(j)])


# --------------------------------------------------------------------------
# theorem


def _theorem_case(cfg: SuiteConfig, i: int) -> _Case:
    rng = _case_rng(cfg.seed, 1, i)
    f = _draw_signal(rng, cfg)
    lam = _draw_lam(rng, cfg, f)
    case = _Case(i, _digest(f.values, lam=lam, h=f.h))
    rep = prox(f, ProxParams(lam, cfg.gap_tol))
    case.certified = rep.certified
    u = rep.u
    eps = rep.eps_tol
    floor = rounding_floor(f)
    ju, jf = edge_jumps(u), edge_jumps(f)
    case.leq("edge_jump", ju, jf, eps + floor)
    pu, pf = _prefix(ju), _prefix(jf)
    lo = np.array([w.lo for w in dyadic_windows(f.N)], dtype=int)
    hi = np.array([w.hi for w in dyadic_windows(f.N)], dtype=int)
    m = hi - lo + 1
    case.leq("window_tv", pu[hi + 1] - pu[lo], pf[hi + 1] - pf[lo], np.sqrt(m + 1) * eps + floor * m)
    case.leq("global_tv", tv(u), tv(f), math.sqrt(f.N) * eps + floor * f.N)
    case.leq("lipschitz", lipschitz_constant(u), lipschitz_constant(f), (eps + floor) / f.h)
    case.close("mean", u.values.mean(axis=0), f.values.mean(axis=0), MEAN_TOL * max(1.0, float(np.max(np.abs(f.values)))))
    case.stat("max_gap", rep.gap)
    case.stat("max_iterations", rep.iterations)
    case.stat("max_jump_excess", float(np.max(ju - jf, initial=0.0)))
    return case


def suite_theorem(config: SuiteConfig) -> PropertyReport:
    """Edge-wise, dyadic-window and global jump non-expansion of the ROF minimizer."""
    return _run("theorem", _theorem_case, config)


# --------------------------------------------------------------------------
# corollary


def _two_cell_case(rng, cfg: SuiteConfig, i: int) -> _Case:
    n = int(rng.choice(cfg.n_choices))
    h = _log_uniform(rng, 0.1, 2.0)
    base = rng.standard_normal(n)
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    jump = rng.uniform(0.1, 3.0)
    u0 = Signal(Grid.from_spacing(2, h), np.vstack([base, base + jump * direction]))
    t_star = h * jump / 2
    t = t_star * rng.uniform(0.1, 1.5)
    steps = int(rng.integers(cfg.steps_range[0], cfg.steps_range[1] + 1))
    case = _Case(i, _digest(u0.values, t=t, steps=steps, h=h))
    traj = evolve(u0, FlowParams(t, steps, cfg.gap_tol))
    case.certified = traj.certified
    mean = u0.values.mean(axis=0)
    remaining = max(0.0, jump - 2 * t / h)
    expected = np.vstack([mean - 0.5 * remaining * direction, mean + 0.5 * remaining * direction])
    case.close("closed_form_flow", traj.final.values, expected, CLOSED_FORM_TOL)
    return case


def _corollary_case(cfg: SuiteConfig, i: int) -> _Case:
    rng = _case_rng(cfg.seed, 2, i)
    if cfg.closed_form_every and i % cfg.closed_form_every == 0:
        return _two_cell_case(rng, cfg, i)
    u0 = _draw_signal(rng, cfg)
    t = _draw_lam(rng, cfg, u0)
    steps = int(rng.integers(cfg.steps_range[0], cfg.steps_range[1] + 1))
    case = _Case(i, _digest(u0.values, t=t, steps=steps, h=u0.h))
    traj = evolve(u0, FlowParams(t, steps, cfg.gap_tol))
    case.certified = traj.certified
    rep = verify_corollary(traj)
    case.checks += rep.checks
    for v in rep.violations:
        case.violations.append(Violation(i, case.digest, f"{v.kind}_jump@t={v.time:.6g},edge={v.edge}", v.magnitude, v.bound, v.slack))
    floor = rounding_floor(u0)
    tvs = tv_decay(traj)
    for j in range(1, len(tvs)):
        case.leq("tv_decay", tvs[j], tvs[j - 1], math.sqrt(u0.N) * traj.eps_between(j - 1, j) + floor * u0.N)
    scale = max(1.0, float(np.max(np.abs(u0.values))))
    for s in traj.states[1:]:
        case.close("mean", s.values.mean(axis=0), u0.values.mean(axis=0), MEAN_TOL * scale)
    case.stat("max_step_gap", max(traj.step_gaps))
    case.stat("max_cumulative_eps", traj.eps_between(0, len(traj.states) - 1))
    return case


def suite_corollary(config: SuiteConfig) -> PropertyReport:
    """Jump non-expansion, TV decay and mean conservation along flow trajectories."""
    return _run("corollary", _corollary_case, config)


# --------------------------------------------------------------------------
# lemma


def _nested_windows(rng, N: int) -> tuple[Window, Window] | None:
    m = N - 1  # edges
    if m < 3:
        return None
    lo_o = int(rng.integers(0, m - 2))
    hi_o = int(rng.integers(lo_o + 2, m))
    lo_i = int(rng.integers(lo_o + 1, hi_o))
    hi_i = int(rng.integers(lo_i, hi_o))
    return Window(lo_i, hi_i), Window(lo_o, hi_o)


def _lemma_case(cfg: SuiteConfig, i: int) -> _Case:
    rng = _case_rng(cfg.seed, 3, i)
    kinds = {k: w for k, w in cfg.kinds.items() if k in ("smooth", "circle", "constant")} or {"smooth": 1.0}
    f = _draw_signal(rng, cfg, kinds=kinds)
    lam = _log_uniform(rng, cfg.lemma_lam_range[0] * f.grid.length, cfg.lemma_lam_range[1] * f.grid.length)
    case = _Case(i, _digest(f.values, lam=lam, h=f.h))
    u = None
    for eps in sorted(cfg.eps_list, reverse=True):
        params = SmoothParams(eps, lam, cfg.newton_tol)
        rep = minimize_smoothed(f, params, u0=u)
        u = rep.u_eps
        case.certified &= rep.converged
        for p in cfg.p_list:
            lhs, rhs = lemma_global_bound(f, params, p, u_eps=u)
            case.leq(f"global_p={p:g}_eps={eps:g}", lhs, rhs, lemma_slack(f, p, rep.newton_tol))
            case.stat("min_global_margin", rhs - lhs, min)

    windows = _nested_windows(rng, f.N)
    if windows is not None:
        inner, outer = windows
        for p in cfg.p_list:
            if p <= 1.0:
                continue  # the local bound needs p > 1
            rows = lemma_local_bound(f, SmoothParams(cfg.eps_local[0], lam, cfg.newton_tol), p, inner, outer, cfg.eps_local)
            tols = [max(resolve_tol(f, SmoothParams(r.epsilon, lam, cfg.newton_tol)), r.residual_norm) for r in rows]
            slacks = [lemma_slack(f, p, t) for t in tols]
            # excess = amount by which the inner energy overshoots the outer target
            for a, b, s in zip(rows, rows[1:], slacks[1:]):
                case.leq(f"local_excess_monotone_p={p:g}_eps={b.epsilon:g}", max(0.0, b.excess), max(0.0, a.excess), s)
            for r, s in zip(rows, slacks):
                rem = lemma_local_remainder(f, p, r.epsilon, inner, outer)
                case.leq(f"local_remainder_p={p:g}_eps={r.epsilon:g}", r.excess, rem, s)
            # |.|_eps >= eps, so the inner energy keeps a floor of order eps^p |R| at any finite eps
            floor_term = p * rows[-1].epsilon ** p * (len(outer) + 1) * f.h
            case.leq(f"local_final_p={p:g}", rows[-1].excess, floor_term, slacks[-1])
            case.stat("max_local_final_excess", rows[-1].excess)
    return case


def suite_lemma(config: SuiteConfig) -> PropertyReport:
    """Global and local p-energy bounds of the regularized minimizers (smooth data only)."""
    return _run("lemma", _lemma_case, config)


# --------------------------------------------------------------------------
# cross-solver


def _two_point_case(rng, cfg: SuiteConfig, i: int) -> _Case:
    n = int(rng.choice(cfg.n_choices))
    h = _log_uniform(rng, 0.1, 2.0)
    f = Signal(Grid.from_spacing(2, h), rng.standard_normal((2, n)))
    jump = float(np.linalg.norm(f.values[1] - f.values[0]))
    lam = h * jump * rng.uniform(0.05, 1.0)
    case = _Case(i, _digest(f.values, lam=lam, h=h))
    rep = prox(f, ProxParams(lam, cfg.cross_gap_tol))
    case.certified = rep.certified
    mean = f.values.mean(axis=0)
    d = (f.values[1] - f.values[0]) / jump
    shrunk = max(0.0, jump - 2 * lam / h)
    expected = np.vstack([mean - 0.5 * shrunk * d, mean + 0.5 * shrunk * d])
    case.close("closed_form_two_point", rep.u.values, expected, CLOSED_FORM_TOL)
    if n == 1:
        case.close("closed_form_taut", taut_string_scalar(f, lam).values, expected, CLOSED_FORM_TOL)
    return case


def _random_rotation(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _cross_case(cfg: SuiteConfig, i: int) -> _Case:
    rng = _case_rng(cfg.seed, 4, i)
    if cfg.closed_form_every and i % cfg.closed_form_every == 0:
        return _two_point_case(rng, cfg, i)
    f1 = _draw_signal(rng, cfg, n=1)
    lam1 = _draw_lam(rng, cfg, f1)
    f = _draw_signal(rng, cfg)
    lam = _draw_lam(rng, cfg, f)
    case = _Case(i, _digest(f1.values, f.values, lam1=lam1, lam=lam))

    # scalar: dual solver vs taut string
    rep1 = prox(f1, ProxParams(lam1, cfg.cross_gap_tol))
    case.certified &= rep1.certified
    case.close("prox_vs_taut", rep1.u.values, taut_string_scalar(f1, lam1).values, CROSS_TAUT_TOL)

    # grid refinement: splitting cells must not change the minimizer
    rep = prox(f, ProxParams(lam, cfg.gap_tol))
    fine = prox(refine(f), ProxParams(lam, cfg.gap_tol))
    case.certified &= rep.certified and fine.certified
    slack = 0.5 * (rep.eps_tol + fine.eps_tol) + rounding_floor(f)
    case.close("refinement", fine.u.values, np.repeat(rep.u.values, 2, axis=0), slack)

    # rotation equivariance of the Euclidean coupling
    Q = _random_rotation(rng, f.n)
    rot = prox(f.with_values(f.values @ Q.T), ProxParams(lam, cfg.gap_tol))
    case.certified &= rot.certified
    case.close("rotation", rot.u.values, rep.u.values @ Q.T, EQUIVARIANCE_TOL + 0.5 * (rep.eps_tol + rot.eps_tol))

    # L2 non-expansiveness of the resolvent
    g = f.with_values(f.values + rng.uniform(0.01, 1.0) * rng.standard_normal(f.values.shape))
    rg = prox(g, ProxParams(lam, cfg.gap_tol))
    case.certified &= rg.certified
    lhs = l2_norm(rep.u.values - rg.u.values, f.h)
    cert = math.sqrt(2 * lam * rep.gap) + math.sqrt(2 * lam * rg.gap)
    case.leq("nonexpansive", lhs, l2_norm(f.values - g.values, f.h), EQUIVARIANCE_TOL + cert)

    # smoothed minimizer at small eps vs the exact one, on smooth data
    fs = _draw_signal(rng, cfg, kinds={"smooth": 1.0})
    lam_s = _log_uniform(rng, cfg.lemma_lam_range[0] * fs.grid.length, cfg.lemma_lam_range[1] * fs.grid.length)
    exact = prox(fs, ProxParams(lam_s, cfg.gap_tol))
    u = None
    ladder = [e for e in (1e-1, 1e-2, 1e-3) if e > cfg.smooth_eps] + [cfg.smooth_eps]
    for eps in ladder:
        sm = minimize_smoothed(fs, SmoothParams(eps, lam_s, cfg.newton_tol), u0=u)
        u = sm.u_eps
    case.certified &= exact.certified and sm.converged
    err = l2_norm(u.values - exact.u.values, fs.h)
    case.leq("smoothed_vs_prox", err, CROSS_SMOOTH_TOL, 0.0)
    case.stat("max_smoothed_vs_prox", err)
    return case


def suite_cross_solver(config: SuiteConfig) -> PropertyReport:
    """Agreement between independent solution routes, plus resolvent invariances."""
    return _run("cross", _cross_case, config)


# --------------------------------------------------------------------------


def _run_case(args):
    fn, cfg, i = args
    return fn(cfg, i)


def _run(name: str, fn, cfg: SuiteConfig) -> PropertyReport:
    start = time.perf_counter()
    jobs = [(fn, cfg, i) for i in range(cfg.cases)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            cases = list(ex.map(_run_case, jobs))
    else:
        cases = [_run_case(j) for j in jobs]
    stats: dict[str, float] = {}
    for c in cases:
        for k, v in c.stats.items():
            how = min if k.startswith("min_") else max
            stats[k] = how(stats[k], v) if k in stats else v
    return PropertyReport(
        suite=name,
        seed=cfg.seed,
        cases=cfg.cases,
        checks=sum(c.checks for c in cases),
        violations=[v for c in cases for v in c.violations],
        slack_exceedances=sum(c.slack_exceedances for c in cases),
        uncertified=[c.index for c in cases if not c.certified],
        stats=stats,
        config=cfg.to_dict(),
        wall_time=time.perf_counter() - start,
    )


SUITES = {
    "theorem": suite_theorem,
    "corollary": suite_corollary,
    "lemma": suite_lemma,
    "cross": suite_cross_solver,
}

DEFAULT_CASES = {"theorem": 200, "corollary": 100, "lemma": 30, "cross": 100}


def run_suite(name: str, config: SuiteConfig) -> PropertyReport:
    try:
        fn = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}") from None
    return fn(config)
