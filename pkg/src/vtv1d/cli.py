"""Command-line front end: ``vtv denoise | flow | verify | gen``.

Exit codes: 0 success, 1 usage or I/O error, 2 solve finished without a
certificate (``denoise``, ``flow``) or suite found violations (``verify``).
Data and one-line summaries go to stdout, diagnostics to stderr.

``--lambda`` is absolute, not relative to the grid spacing.  On two cells the
jump shrinks as ``|du| = max(0, |df| - 2 lambda / h)``, which is a quick way
to calibrate it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from vtv1d.flow import FlowParams, evolve, save_trajectory
from vtv1d.properties import DEFAULT_CASES, SUITES, SuiteConfig, run_suite
from vtv1d.prox_vtv import ProxParams, energy, prox, taut_string_scalar
from vtv1d.signal_core import GENERATOR_KINDS, SignalFormatError, generate, load_signal, save_signal
from vtv1d.smoothed_solver import SmoothParams, minimize_smoothed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNCERTIFIED = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return conv


def _input_path(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise UsageError(f"input file not found: {text}")
    return p


def _output_path(text: str) -> Path:
    p = Path(text)
    if not p.parent.is_dir():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_denoise(args) -> int:
    src = _input_path(args.input)
    out = _output_path(args.output)
    report_path = _output_path(args.report) if args.report else out.with_name(out.name + ".report.json")
    f = load_signal(src, args.format)
    if args.method == "prox":
        rep = prox(f, ProxParams(args.lam, args.tol, args.max_iter))
        u, stats, ok = rep.u, rep.summary(), rep.certified
    elif args.method == "taut":
        if f.n != 1:
            raise UsageError(f"--method taut needs a scalar signal, got n={f.n}")
        u = taut_string_scalar(f, args.lam)
        stats, ok = {"primal_energy": energy(u, f, args.lam), "exact": True}, True
    else:
        if args.epsilon is None:
            raise UsageError("--method smoothed requires --epsilon")
        rep = minimize_smoothed(f, SmoothParams(args.epsilon, args.lam))
        u, stats, ok = rep.u_eps, rep.summary(), rep.converged
    save_signal(u, out, args.format)
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    _write_json(report_path, {"command": "denoise", "params": params, "N": f.N, "n": f.n, "h": f.h, **stats})
    print(json.dumps({"output": str(out), "certified": ok, **{k: stats[k] for k in ("gap", "residual_norm") if k in stats}}))
    if not ok:
        print("warning: solve did not reach the requested tolerance", file=sys.stderr)
    return EXIT_OK if ok else EXIT_UNCERTIFIED


def cmd_flow(args) -> int:
    src = _input_path(args.input)
    out = _output_path(args.output)
    u0 = load_signal(src, args.format)
    traj = evolve(u0, FlowParams(args.t, args.steps, args.tol, args.record_every))
    fmt = out.suffix.lstrip(".").lower() or "json"
    save_trajectory(traj, out, fmt if fmt in ("json", "csv") else "json")
    print(json.dumps({"output": str(out), "states": len(traj.states), "certified": traj.certified, "max_step_gap": max(traj.step_gaps)}))
    if not traj.certified:
        print("warning: at least one resolvent was not certified", file=sys.stderr)
    return EXIT_OK if traj.certified else EXIT_UNCERTIFIED


def cmd_verify(args) -> int:
    out = _output_path(args.out) if args.out else None
    kw = {"seed": args.seed, "cases": args.cases or DEFAULT_CASES[args.suite], "workers": args.workers}
    if args.kinds:
        kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
        bad = [k for k in kinds if k not in GENERATOR_KINDS]
        if bad:
            raise UsageError(f"unknown generator kinds {bad}; expected {GENERATOR_KINDS}")
        kw["kinds"] = {k: 1.0 for k in kinds}
    if args.tol is not None:
        kw["gap_tol"] = args.tol
    try:
        config = SuiteConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_suite(args.suite, config)
    if out:
        out.write_text(report.to_json() + "\n")
        if args.csv:
            _output_path(args.csv).write_text(report.summary_csv())
    sys.stdout.write(report.summary_csv())
    for v in report.violations[:10]:
        print(f"violation: case={v.case} digest={v.digest} {v.quantity}: {v.lhs:.6g} > {v.rhs:.6g} + {v.slack:.3g}", file=sys.stderr)
    if report.uncertified:
        print(f"note: {len(report.uncertified)} case(s) without a certificate: {report.uncertified[:10]}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_UNCERTIFIED


def cmd_gen(args) -> int:
    out = _output_path(args.output)
    if args.kind not in GENERATOR_KINDS:
        raise UsageError(f"unknown kind {args.kind!r}; expected one of {GENERATOR_KINDS}")
    params = {"N": args.N, "n": args.n, "a": args.a, "b": args.b}
    if args.kind in ("step", "noisy"):
        params["n_breaks"] = args.n_breaks
    if args.kind == "noisy":
        params["sigma"] = args.sigma
    s = generate(args.kind, params, seed=args.seed)
    save_signal(s, out, args.format)
    print(json.dumps({"output": str(out), "kind": args.kind, "N": s.N, "n": s.n}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vtv", description="Vectorial total variation denoising and flow in 1D.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = {"choices": ("json", "csv"), "default": None, "help": "signal format (default: from file suffix)"}

    p = sub.add_parser("denoise", help="solve the ROF problem for one signal")
    p.add_argument("input")
    p.add_argument("--lambda", dest="lam", type=_positive(float), required=True, help="fidelity weight, absolute units")
    p.add_argument("--tol", type=_positive(float), default=1e-10, help="duality gap target")
    p.add_argument("--max-iter", type=_positive(int), default=200_000)
    p.add_argument("--method", choices=("prox", "taut", "smoothed"), default="prox")
    p.add_argument("--epsilon", type=_positive(float), help="regularization for --method smoothed")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--report", help="sidecar report path (default: OUTPUT.report.json)")
    p.add_argument("--format", **fmt)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("flow", help="total variation flow by iterated resolvents")
    p.add_argument("input")
    p.add_argument("--t", type=_positive(float), required=True, help="final time")
    p.add_argument("--steps", type=_positive(int), required=True)
    p.add_argument("--record-every", type=_positive(int), default=1)
    p.add_argument("--tol", type=_positive(float), default=1e-10, help="duality gap target per step")
    p.add_argument("--output", "-o", required=True, help="trajectory file (.json or .csv)")
    p.add_argument("--format", **fmt)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("verify", help="run a randomized verification suite")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=_positive(int))
    p.add_argument("--kinds", help="comma-separated generator kinds (equal weights)")
    p.add_argument("--tol", type=_positive(float), help="duality gap target")
    p.add_argument("--workers", type=_positive(int), default=1)
    p.add_argument("--out", help="PropertyReport JSON path")
    p.add_argument("--csv", help="summary CSV path (with --out)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a synthetic signal")
    p.add_argument("--kind", required=True, help=f"one of {', '.join(GENERATOR_KINDS)}")
    p.add_argument("--N", type=_positive(int), default=64)
    p.add_argument("--n", type=_positive(int), default=1)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--n-breaks", type=int, default=1)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--format", **fmt)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, SignalFormatError, ValueError, OSError) as exc:
        print(f"vtv {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
