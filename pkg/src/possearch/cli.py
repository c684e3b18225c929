"""Command-line front end.

Machine-readable results go to standard output as JSON (or to explicit CSV
and JSON paths); nothing time- or host-dependent is printed, so repeated runs
are byte-identical.  ``--record PATH`` additionally writes a run record with
the input digest and wall time.

Exit codes: 0 success, 1 validation failure, 2 usage or parse error,
3 no convergence, 4 missing initial policy, 5 input not substochastic.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from . import bellman, gen, search, ssp
from .errors import (
    DimensionError,
    MissingInitialPolicy,
    NoConvergence,
    NotSubstochastic,
    PossearchError,
    TooLarge,
    UnstablePolicy,
)
from .model import dumps_problem, problem_from_dict, validate

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_NOCONV, EXIT_NOPOLICY, EXIT_NOTSUB = 0, 1, 2, 3, 4, 5
DEFAULT_TOL = float(os.environ.get("POSSEARCH_TOL", bellman.DEFAULT_TOL))


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunRecord:
    command: str
    input_digest: str | None
    parameters: dict
    outputs: list
    wall_time: float


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc


def _load_problem(path):
    d = _read_json(path)
    try:
        return problem_from_dict(d)
    except (DimensionError, ValueError, TypeError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"{path}: not a valid problem file ({exc})") from exc


def _load_ssp(path):
    d = _read_json(path)
    try:
        return ssp.ssp_from_dict(d)
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"{path}: not a valid SSP file ({exc})") from exc


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> tuple:
    instance = _load_problem(args.path)
    report = validate(instance, tol=args.tol)
    _emit(report.to_dict())
    return (EXIT_OK if report.ok else EXIT_INVALID), []


def _mandatory_ok(instance, tol):
    report = validate(instance, tol=tol)
    if not report.ok:
        names = ", ".join(report.failed())
        raise CliError(EXIT_INVALID, f"instance fails mandatory checks: {names}")


def cmd_solve(args) -> tuple:
    instance = _load_problem(args.path)
    _mandatory_ok(instance, args.tol)
    if args.method == "oracle":
        res = bellman.brute_force_solve(instance, cap=args.cap)
    else:
        res = bellman.value_iterate(instance, tol=args.tol, max_iter=args.max_iter)
    out = res.to_dict()
    out["method"] = args.method
    out["value"] = res.value(instance.x0)
    _emit(out)
    return EXIT_OK, []


def cmd_search(args) -> tuple:
    if args.gamma < 1:
        raise CliError(EXIT_USAGE, "--gamma must be at least 1")
    instance = _load_problem(args.path)
    _mandatory_ok(instance, args.tol)
    state = search.run_search(
        instance,
        gamma=args.gamma,
        fix_actions=args.fix_actions,
        tol=args.tol,
        max_iter=args.max_iter,
        snapshots=args.snapshots is not None,
    )
    outputs = []
    if args.trace:
        search.write_trace_csv(args.trace, state)
        outputs.append(args.trace)
    if args.snapshots is not None:
        p = bellman.value_iterate(instance, tol=args.tol, max_iter=args.max_iter).p if args.with_optimal else None
        folder = Path(args.snapshots)
        folder.mkdir(parents=True, exist_ok=True)
        for snap in state.snapshots:
            path = folder / f"snapshot_{snap.iteration:04d}.csv"
            search.write_snapshot_csv(path, snap, state.pair, p)
            outputs.append(str(path))
    _emit(state.summary())
    return EXIT_OK, outputs


def cmd_convert(args) -> tuple:
    if args.to == "control":
        if args.skeleton is not None:
            raise CliError(EXIT_USAGE, "--skeleton only applies to --to ssp")
        model = _load_ssp(args.path)
        instance, names = ssp.from_ssp(model)
        _write(args.output, dumps_problem(instance))
        _emit({"output": args.output, "states": names})
        return EXIT_OK, [args.output]

    instance = _load_problem(args.path)
    if args.skeleton is not None:
        if args.skeleton < 1:
            raise CliError(EXIT_USAGE, "--skeleton needs a positive level count")
        skel = ssp.expand_skeleton(instance, K_max=args.skeleton)
        _write(args.output, ssp.dumps_ssp(skel.ssp))
        report = ssp.check_level_scaling(skel)
        _emit({"output": args.output, "levels": skel.levels, "scaling": report.to_dict()})
        return EXIT_OK, [args.output]
    conv = ssp.to_ssp(instance)
    _write(args.output, ssp.dumps_ssp(conv.ssp))
    _emit({"output": args.output, "states": list(conv.ssp.states)})
    return EXIT_OK, [args.output]


def _generate(args):
    if args.preset == "chemical":
        if args.budget != "A" or args.actions is not None or args.no_disposal:
            raise CliError(EXIT_USAGE, "the chemical preset fixes --budget, --actions and disposal")
        return gen.chemical_plant(seed=args.seed, n=25 if args.n is None else args.n, density=args.density)
    cfg = gen.GenConfig(
        n=5 if args.n is None else args.n,
        actions_per_state=2 if args.actions is None else args.actions,
        density=args.density,
        seed=args.seed,
        with_disposal=not args.no_disposal,
        budget=args.budget,
        stable_open_loop=not args.unstable,
    )
    return gen.random_instance(cfg)


def cmd_gen(args) -> tuple:
    try:
        instance = _generate(args)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    text = dumps_problem(instance)
    if args.output:
        _write(args.output, text)
        _emit({"output": args.output, "sha256": hashlib.sha256(text.encode()).hexdigest()})
        return EXIT_OK, [args.output]
    sys.stdout.write(text)
    return EXIT_OK, []


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="possearch", description="Optimal control of positive linear systems.")
    parser.add_argument("--record", metavar="PATH", help="write a JSON run record (digest, parameters, wall time)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tol=True):
        p.add_argument("path", help="input JSON file")
        if tol:
            p.add_argument("--tol", type=float, default=DEFAULT_TOL)
            p.add_argument("--max-iter", type=int, default=bellman.DEFAULT_MAX_ITER)

    p = sub.add_parser("validate", help="check an instance and print the report")
    p.add_argument("path")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="compute the optimal cost vector and policy")
    common(p)
    p.add_argument("--method", choices=("vi", "oracle"), default="vi")
    p.add_argument("--cap", type=int, default=bellman.ENUMERATION_CAP, help="policy enumeration cap for --method oracle")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("search", help="run the heuristic search from x0")
    common(p)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--trace", metavar="CSV", help="write the iteration trace")
    p.add_argument("--snapshots", metavar="DIR", help="write one per-state CSV per iteration")
    p.add_argument("--with-optimal", action="store_true", help="add the optimal cost column to snapshots")
    p.add_argument("--fix-actions", action="store_true", help="freeze actions proven optimal inside S")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("convert", help="convert between control and SSP files")
    common(p, tol=False)
    p.add_argument("--to", choices=("ssp", "control"), required=True)
    p.add_argument("--skeleton", type=int, metavar="K_MAX", help="expand into a level skeleton with K_MAX levels")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("gen", help="generate a seeded instance")
    p.add_argument("--preset", choices=("chemical", "random"), default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int)
    p.add_argument("--actions", type=int, help="inputs per state")
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--budget", choices=("A", "identity"), default="A")
    p.add_argument("--no-disposal", action="store_true")
    p.add_argument("--unstable", action="store_true", help="give one open-loop column mass 1.2")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen)
    return parser


def _run(args) -> int:
    try:
        code, outputs = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NoConvergence as exc:
        print(f"error: {exc}; no policy has finite cost from some state", file=sys.stderr)
        return EXIT_NOCONV
    except MissingInitialPolicy as exc:
        print(f"error: {exc}; add a k_hat entry to the problem file", file=sys.stderr)
        return EXIT_NOPOLICY
    except NotSubstochastic as exc:
        print(f"error: {exc}; rerun with --skeleton K_MAX", file=sys.stderr)
        return EXIT_NOTSUB
    except (TooLarge, UnstablePolicy) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PossearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    args._outputs = outputs
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    code = _run(args)
    if args.record:
        params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "record", "_outputs")}
        path = params.get("path")
        record = RunRecord(
            command=args.command,
            input_digest=digest(path) if path and Path(path).is_file() else None,
            parameters=params,
            outputs=list(getattr(args, "_outputs", [])),
            wall_time=time.perf_counter() - start,
        )
        _write(args.record, json.dumps(asdict(record), indent=2, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
