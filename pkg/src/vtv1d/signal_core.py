"""Grids, multichannel signals and their discrete total variation.

A :class:`Signal` is a piecewise-constant function on ``N`` equal cells of
an interval ``]a, b[`` with values in R^n.  Its distributional derivative is
a sum of atoms sitting on the ``N - 1`` interior cell boundaries (edges); the
Euclidean magnitudes of these atoms are the :func:`edge_jumps`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "Signal",
    "Window",
    "SignalFormatError",
    "tv",
    "tv_window",
    "edge_jumps",
    "lipschitz_constant",
    "l2_norm",
    "channel_means",
    "dyadic_windows",
    "refine",
    "load_signal",
    "save_signal",
    "generate",
    "GENERATOR_KINDS",
]


class SignalFormatError(ValueError):
    """Raised when a signal file cannot be parsed into a valid Signal."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``N`` cells on ``]a, b[``."""

    a: float
    b: float
    N: int

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
            raise ValueError(f"grid needs finite a < b, got a={self.a}, b={self.b}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"grid needs N >= 1 cells, got {self.N}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.N

    @property
    def length(self) -> float:
        return self.b - self.a

    def centers(self) -> np.ndarray:
        return self.a + (np.arange(self.N) + 0.5) * self.h

    @classmethod
    def from_spacing(cls, N: int, h: float, a: float = 0.0) -> "Grid":
        return cls(a, a + N * h, N)


class Signal:
    """Multichannel piecewise-constant signal on a uniform grid.

    Parameters
    ----------
    grid : Grid
        The underlying grid.
    values : array_like, shape (N, n) or (N,)
        Cell values.  A 1-D array is read as a scalar (``n = 1``) signal.

    The value array is copied and made read-only, so a Signal can be
    shared freely.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"values must be 1-D or 2-D, got shape {arr.shape}")
        if arr.shape[0] != grid.N:
            raise ValueError(f"values has {arr.shape[0]} rows, grid has N={grid.N} cells")
        if arr.shape[1] < 1:
            raise ValueError("signal needs at least one channel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def from_values(cls, values, h: float = 1.0, a: float = 0.0) -> "Signal":
        """Build a signal on ``[a, a + N h]`` from raw cell values."""
        arr = np.asarray(values, dtype=float)
        return cls(Grid.from_spacing(arr.shape[0], h, a), arr)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return self.grid.h

    def with_values(self, values) -> "Signal":
        """Same grid, new values."""
        return Signal(self.grid, values)

    def same_shape(self, other: "Signal") -> bool:
        return self.grid == other.grid and self.values.shape == other.values.shape

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.grid, self.values.tobytes()))

    def __repr__(self):
        return f"Signal(grid={self.grid!r}, n={self.n})"


@dataclass(frozen=True)
class Window:
    """Inclusive range ``lo..hi`` of interior edge indices."""

    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"window needs 0 <= lo <= hi, got [{self.lo}, {self.hi}]")

    def check(self, N: int) -> None:
        if not 0 <= self.lo <= self.hi <= N - 2:
            raise IndexError(f"window [{self.lo}, {self.hi}] outside edges 0..{N - 2}")

    def contains(self, other: "Window") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def __len__(self):
        return self.hi - self.lo + 1


def edge_jumps(s: Signal) -> np.ndarray:
    """Euclidean jump magnitudes ``|u[k+1] - u[k]|`` for the N-1 interior edges."""
    return np.linalg.norm(np.diff(s.values, axis=0), axis=1)


def tv(s: Signal) -> float:
    """Discrete total variation: total mass of the jump measure."""
    return float(np.sum(edge_jumps(s)))


def tv_window(s: Signal, w: Window) -> float:
    """Total variation restricted to the edges of ``w``."""
    w.check(s.N)
    return float(np.sum(edge_jumps(s)[w.lo : w.hi + 1]))


def lipschitz_constant(s: Signal) -> float:
    """Discrete sup of ``|u'|``: largest jump divided by the cell width."""
    if s.N < 2:
        return 0.0
    return float(np.max(edge_jumps(s)) / s.h)


def l2_norm(values: np.ndarray, h: float) -> float:
    """``sqrt(h * sum |v_k|^2)``, the L2 norm of a piecewise-constant field."""
    return float(math.sqrt(h) * np.linalg.norm(values))


def channel_means(s: Signal) -> np.ndarray:
    return s.values.mean(axis=0)


def dyadic_windows(N: int) -> list[Window]:
    """All dyadic blocks of the edge range ``0..N-2`` (sizes 1, 2, 4, ...).

    A block cut short by the right end is kept once, at the smallest size
    that produces it.
    """
    m = N - 1
    out: dict[tuple[int, int], Window] = {}
    size = 1
    while m > 0:
        for lo in range(0, m, size):
            key = (lo, min(lo + size, m) - 1)
            out.setdefault(key, Window(*key))
        if size >= m:
            break
        size *= 2
    return list(out.values())


def refine(s: Signal, factor: int = 2) -> Signal:
    """Split every cell into ``factor`` equal cells carrying the same value."""
    g = s.grid
    return Signal(Grid(g.a, g.b, g.N * factor), np.repeat(s.values, factor, axis=0))


# --------------------------------------------------------------------------
# file I/O


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown signal format {fmt!r} (expected json or csv)")
    return fmt


def signal_to_dict(s: Signal) -> dict:
    return {"a": s.grid.a, "b": s.grid.b, "N": s.N, "n": s.n, "values": s.values.tolist()}


def signal_from_dict(d: dict) -> Signal:
    try:
        a, b, N, n = float(d["a"]), float(d["b"]), int(d["N"]), int(d["n"])
        rows = d["values"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SignalFormatError(f"malformed signal record: {exc}") from exc
    if not isinstance(rows, list) or len(rows) != N:
        raise SignalFormatError(f"expected {N} rows of values")
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != n:
            raise SignalFormatError(f"row {i} does not have {n} entries")
    try:
        return Signal(Grid(a, b, N), np.array(rows, dtype=float).reshape(N, n))
    except (TypeError, ValueError) as exc:
        raise SignalFormatError(str(exc)) from exc


def signal_to_csv(s: Signal) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x"] + [f"c{j}" for j in range(s.n)])
    for x, row in zip(s.grid.centers(), s.values):
        w.writerow([f"{x:.17g}"] + [f"{v:.17g}" for v in row])
    return buf.getvalue()


def signal_from_csv(text: str) -> Signal:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise SignalFormatError("empty CSV")
    header = [c.strip() for c in rows[0]]
    if len(header) < 2 or header[0] != "x" or header[1:] != [f"c{j}" for j in range(len(header) - 1)]:
        raise SignalFormatError(f"bad CSV header {header!r}; expected x,c0,...")
    n = len(header) - 1
    body = rows[1:]
    if not body:
        raise SignalFormatError("CSV has no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in body if len(r) == n + 1], dtype=float)
    except ValueError as exc:
        raise SignalFormatError(f"non-numeric CSV entry: {exc}") from exc
    if data.shape[0] != len(body):
        raise SignalFormatError(f"inconsistent row lengths; every row needs {n + 1} fields")
    if not np.all(np.isfinite(data)):
        raise SignalFormatError("CSV contains non-finite entries")
    x = data[:, 0]
    N = len(x)
    if N == 1:
        # a single cell carries no spacing information; use the unit cell
        h = 1.0
    else:
        h = (x[-1] - x[0]) / (N - 1)
        if not h > 0 or not np.allclose(np.diff(x), h, rtol=1e-9, atol=1e-12 * max(1.0, abs(h))):
            raise SignalFormatError("cell centers are not uniformly spaced and increasing")
    a = x[0] - 0.5 * h
    try:
        return Signal(Grid(a, a + N * h, N), data[:, 1:])
    except ValueError as exc:
        raise SignalFormatError(str(exc)) from exc


def save_signal(s: Signal, path, fmt: str | None = None) -> None:
    """Write ``s`` as JSON (exact) or CSV (17 significant digits)."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "json":
        path.write_text(json.dumps(signal_to_dict(s)))
    else:
        path.write_text(signal_to_csv(s))


def load_signal(path, fmt: str | None = None) -> Signal:
    """Read a signal written by :func:`save_signal` (format from suffix by default)."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    text = path.read_text()
    if fmt == "json":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SignalFormatError(f"invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise SignalFormatError("JSON signal must be an object")
        return signal_from_dict(d)
    return signal_from_csv(text)


# --------------------------------------------------------------------------
# synthetic instances

GENERATOR_KINDS = ("constant", "step", "smooth", "noisy", "circle")


def _grid_from(params: dict) -> Grid:
    N = int(params.get("N", 64))
    return Grid(float(params.get("a", 0.0)), float(params.get("b", 1.0)), N)


def _step_values(grid: Grid, n: int, params: dict, rng: np.random.Generator) -> np.ndarray:
    N = grid.N
    breaks = params.get("breaks")
    if breaks is None:
        nb = int(params.get("n_breaks", rng.integers(1, max(2, min(N, 8)))))
        nb = min(nb, N - 1)
        breaks = sorted(rng.choice(np.arange(1, N), size=nb, replace=False).tolist()) if nb > 0 else []
    breaks = [int(k) for k in breaks]
    if any(not 0 < k < N for k in breaks) or breaks != sorted(set(breaks)):
        raise ValueError(f"breaks must be strictly increasing cell indices in 1..{N - 1}")
    levels = params.get("levels")
    if levels is None:
        scale = float(params.get("scale", 1.0))
        levels = scale * rng.standard_normal((len(breaks) + 1, n))
    levels = np.array(levels, dtype=float).reshape(len(breaks) + 1, -1)
    if levels.shape[1] != n:
        raise ValueError(f"levels have {levels.shape[1]} channels, expected n={n}")
    values = np.empty((N, n))
    edges = [0] + breaks + [N]
    for i in range(len(edges) - 1):
        values[edges[i] : edges[i + 1]] = levels[i]
    return values


def _smooth_values(grid: Grid, n: int, params: dict, rng: np.random.Generator) -> np.ndarray:
    x = (grid.centers() - grid.a) / grid.length
    modes = int(params.get("modes", 3))
    amplitude = float(params.get("amplitude", 1.0))
    values = np.zeros((grid.N, n))
    for c in range(n):
        for m in range(1, modes + 1):
            amp = amplitude * rng.uniform(0.2, 1.0) / m
            phase = rng.uniform(0.0, 2 * np.pi)
            values[:, c] += amp * np.sin(2 * np.pi * m * x + phase)
    return values


def _circle_values(grid: Grid, n: int, params: dict, rng: np.random.Generator) -> np.ndarray:
    if n != 2:
        raise ValueError("circle signals have exactly 2 channels")
    radius = float(params.get("radius", 1.0))
    theta0 = float(params.get("theta0", 0.0))
    arc = float(params.get("arc", np.pi))
    x = (grid.centers() - grid.a) / grid.length
    theta = theta0 + arc * x
    return radius * np.column_stack([np.cos(theta), np.sin(theta)])


def generate(kind: str, params: dict | None = None, seed=None) -> Signal:
    """Synthetic test signal.

    Parameters
    ----------
    kind : {"constant", "step", "smooth", "noisy", "circle"}
        ``step`` is piecewise constant with ``breaks`` (cell indices where a
        new level starts) and ``levels`` (one row per piece); both are drawn
        at random when absent.  ``smooth`` sums a few sinusoids per channel.
        ``noisy`` adds i.i.d. Gaussian noise of standard deviation ``sigma``
        to a ``base`` kind (default ``step``).  ``circle`` samples an arc of
        a circle in the plane.
    params : dict, optional
        Grid (``N``, ``a``, ``b``), channel count ``n`` and kind options.
    seed : int, sequence of int or SeedSequence, optional
        Seed for :func:`numpy.random.default_rng`.
    """
    params = dict(params or {})
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    grid = _grid_from(params)
    n = int(params.get("n", 2 if kind == "circle" else 1))
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "constant":
        level = params.get("level")
        level = rng.standard_normal(n) if level is None else np.broadcast_to(np.asarray(level, float), (n,))
        values = np.tile(level, (grid.N, 1))
    elif kind == "step":
        values = _step_values(grid, n, params, rng)
    elif kind == "smooth":
        values = _smooth_values(grid, n, params, rng)
    elif kind == "circle":
        values = _circle_values(grid, n, params, rng)
    elif kind == "noisy":
        base = params.get("base", "step")
        if base == "noisy" or base not in GENERATOR_KINDS:
            raise ValueError(f"invalid base kind {base!r} for noisy signal")
        sigma = float(params.get("sigma", 0.1))
        if not sigma >= 0:
            raise ValueError("sigma must be >= 0")
        base_params = {k: v for k, v in params.items() if k not in ("base", "sigma")}
        clean = generate(base, base_params, ss).values
        # noise stream is a child of the base stream, so sigma=0 reproduces the base
        noise_rng = np.random.default_rng(
            np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (1,))
        )
        values = clean + sigma * noise_rng.standard_normal(clean.shape) if sigma > 0 else clean
    else:
        raise ValueError(f"unknown generator kind {kind!r}; expected one of {GENERATOR_KINDS}")
    return Signal(grid, values)
