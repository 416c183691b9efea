"""Total variation flow by iterated resolvents.

The flow at time ``t`` is approximated by ``n_steps`` compositions of the
ROF resolvent with ``lam = t / n_steps``.  Every resolvent is a certified
:func:`~vtv1d.prox_vtv.prox` solve, warm-started from the previous dual
field, so each state carries an accumulated pointwise error budget.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vtv1d.prox_vtv import ProxParams, prox, solution_tolerance
from vtv1d.signal_core import Signal, edge_jumps, l2_norm, signal_from_dict, signal_to_dict, tv

__all__ = [
    "FlowParams",
    "Trajectory",
    "CorollaryViolation",
    "CorollaryReport",
    "evolve",
    "richardson_check",
    "verify_corollary",
    "tv_decay",
    "oscillation_diagnostic",
    "rounding_floor",
    "save_trajectory",
    "load_trajectory",
]


@dataclass(frozen=True)
class FlowParams:
    t_final: float
    n_steps: int
    tol_per_step: float = 1e-10
    record_every: int = 1
    max_iter: int = 200_000

    def __post_init__(self):
        if not (math.isfinite(self.t_final) and self.t_final > 0):
            raise ValueError(f"t_final must be positive, got {self.t_final}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if not self.tol_per_step > 0:
            raise ValueError("tol_per_step must be positive")

    @property
    def lam(self) -> float:
        return self.t_final / self.n_steps


@dataclass
class Trajectory:
    """Recorded states of a flow run.

    ``step_gaps[i]`` and ``step_eps[i]`` certify resolvent ``i + 1``;
    ``steps[j]`` is the number of resolvents applied to reach ``states[j]``.
    """

    times: list[float]
    states: list[Signal]
    steps: list[int]
    step_gaps: list[float]
    step_eps: list[float]
    lam: float
    certified: bool = True
    iterations: list[int] = field(default_factory=list)

    @property
    def final(self) -> Signal:
        return self.states[-1]

    def eps_between(self, i: int, j: int) -> float:
        """Accumulated jump slack from recorded state ``i`` to recorded state ``j``."""
        return float(sum(self.step_eps[self.steps[i] : self.steps[j]]))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "certified": self.certified,
            "times": list(self.times),
            "steps": list(self.steps),
            "step_gaps": list(self.step_gaps),
            "step_eps": list(self.step_eps),
            "states": [signal_to_dict(s) for s in self.states],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            times=[float(t) for t in d["times"]],
            states=[signal_from_dict(s) for s in d["states"]],
            steps=[int(k) for k in d["steps"]],
            step_gaps=[float(g) for g in d["step_gaps"]],
            step_eps=[float(e) for e in d["step_eps"]],
            lam=float(d["lambda"]),
            certified=bool(d["certified"]),
        )


def evolve(u0: Signal, params: FlowParams, p0: np.ndarray | None = None) -> Trajectory:
    """Apply ``n_steps`` certified resolvents with ``lam = t_final / n_steps``.

    States are recorded at step 0, every ``record_every`` steps, and at the
    final step.  A non-certified resolvent marks the trajectory
    ``certified=False`` but the run continues.
    """
    lam = params.lam
    prox_params = ProxParams(lam, params.tol_per_step, params.max_iter)
    traj = Trajectory([0.0], [u0], [0], [], [], lam)
    u, p = u0, p0
    for k in range(1, params.n_steps + 1):
        rep = prox(u, prox_params, p0=p)
        u, p = rep.u, rep.dual
        traj.step_gaps.append(rep.gap)
        traj.step_eps.append(solution_tolerance(rep.gap, lam, u.h))
        traj.iterations.append(rep.iterations)
        traj.certified &= rep.certified
        if k % params.record_every == 0 or k == params.n_steps:
            traj.times.append(k * lam)
            traj.states.append(u)
            traj.steps.append(k)
    return traj


def richardson_check(u0: Signal, t_final: float, n: int, tol: float = 1e-10) -> float:
    """``L2`` distance at ``t_final`` between the ``n``-step and ``2n``-step schemes."""
    a = evolve(u0, FlowParams(t_final, n, tol, record_every=n)).final
    b = evolve(u0, FlowParams(t_final, 2 * n, tol, record_every=2 * n)).final
    return l2_norm(a.values - b.values, u0.h)


@dataclass(frozen=True)
class CorollaryViolation:
    kind: str  # "cumulative" (vs the initial datum) or "stepwise" (vs previous record)
    edge: int
    time: float
    magnitude: float
    bound: float
    slack: float


@dataclass
class CorollaryReport:
    checks: int
    violations: list[CorollaryViolation]
    max_excess: float

    @property
    def ok(self) -> bool:
        return not self.violations


def rounding_floor(s: Signal) -> float:
    """Comparison floor for quantities computed from the values of ``s``."""
    return 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(s.values))))


def verify_corollary(traj: Trajectory) -> CorollaryReport:
    """Edge-wise jump non-expansion along a trajectory.

    Every recorded state must satisfy ``|du(t)_k| <= |du0_k| + slack`` and,
    against the previous record, ``|du(t_j+1)_k| <= |du(t_j)_k| + slack``,
    with slacks accumulated from the per-step certificates (plus a
    machine-precision floor).
    """
    floor = rounding_floor(traj.states[0])
    jumps = [edge_jumps(s) for s in traj.states]
    base = jumps[0]
    violations = []
    checks = 0
    max_excess = -math.inf
    for j in range(1, len(jumps)):
        t = traj.times[j]
        for kind, ref, slack in (
            ("cumulative", base, traj.eps_between(0, j) + floor),
            ("stepwise", jumps[j - 1], traj.eps_between(j - 1, j) + floor),
        ):
            excess = jumps[j] - ref
            checks += len(excess)
            if len(excess):
                max_excess = max(max_excess, float(np.max(excess - slack)))
            for k in np.flatnonzero(excess > slack):
                violations.append(CorollaryViolation(kind, int(k), t, float(jumps[j][k]), float(ref[k]), slack))
    return CorollaryReport(checks, violations, max_excess if checks else 0.0)


def tv_decay(traj: Trajectory) -> list[float]:
    """Total variation of every recorded state."""
    return [tv(s) for s in traj.states]


def oscillation_diagnostic(traj: Trajectory, lo: int, hi: int) -> list[tuple[float, float]]:
    """Oscillation of each state over cells ``lo..hi`` vs the datum's variation there.

    The oscillation of a vector signal is the diameter of its value set.
    Returns ``(osc(u(t)), tv of u0 over the edges inside lo..hi)`` for every
    recorded state; the first never exceeds the second up to slack.  This is
    the weak check implied by jump non-expansion, not an oscillation
    contraction.
    """
    u0 = traj.states[0]
    tv0 = float(np.sum(edge_jumps(u0)[lo:hi]))
    out = []
    for s in traj.states:
        block = s.values[lo : hi + 1]
        osc = float(np.max(np.linalg.norm(block[:, None, :] - block[None, :, :], axis=2)))
        out.append((osc, tv0))
    return out


def save_trajectory(traj: Trajectory, path, fmt: str | None = None) -> None:
    """JSON (states, times, certificates) or long-form CSV ``time,cell,channel,value``."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "json":
        path.write_text(json.dumps(traj.to_dict()))
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "cell", "channel", "value"])
        for t, s in zip(traj.times, traj.states):
            for k, row in enumerate(s.values):
                for c, v in enumerate(row):
                    w.writerow([f"{t:.17g}", k, c, f"{v:.17g}"])
        path.write_text(buf.getvalue())
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")


def load_trajectory(path) -> Trajectory:
    return Trajectory.from_dict(json.loads(Path(path).read_text()))
