"""Command-line front end: calibrate, diagnose, sweep, oracle.

Every run writes its outputs plus a single manifest JSON recording the
command, the inputs as given, tool/schema versions, and the files written.
Figures are emitted as CSV/JSON plot data; rendering is downstream.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
from dataclasses import dataclass, asdict

CONFIG_SCHEMA_VERSION = 1

_EXIT_ACCEPT = 0
_EXIT_REJECT = 3
_EXIT_ERROR = 1


@dataclass(frozen=True)
class RunManifest:
    """What a CLI invocation consumed and produced."""

    command: str
    inputs: dict
    versions: dict
    outputs: list

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _apply_thread_cap() -> None:
    """Honor LG_THREADS by capping the common BLAS/OpenMP pools.

    Must run before numpy is imported, hence the lazy imports throughout.
    """
    cap = os.environ.get("LG_THREADS")
    if not cap:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, cap)


def _manifest(command: str, args: argparse.Namespace, outputs: list) -> None:
    from . import __version__

    inputs = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    manifest = RunManifest(
        command=command,
        inputs=inputs,
        versions={"tool": __version__, "config_schema": CONFIG_SCHEMA_VERSION},
        outputs=[str(p) for p in outputs],
    )
    base = outputs[0] if outputs else f"{command}"
    manifest.write(f"{base}.manifest.json")


def _build_grid(family: str, dim: int, scale: float):
    from .grids import ckf_grid, cross2d_grid, gh2_grid

    if family == "cross2d":
        if dim != 2:
            raise SystemExit("grid family cross2d exists only for --dim 2")
        return cross2d_grid()
    if family == "ckf":
        return ckf_grid(dim)
    if family == "gh2":
        return gh2_grid(dim, scale)
    raise SystemExit(f"unknown grid family {family!r}")


class SubprocessEvaluator:
    """Newline-delimited JSON channel to an external log-integrand.

    The child receives one handshake object {dim, mode, hessian}, then
    request objects {"id": k, "points": [[...], ...]} on stdin and must
    answer {"id": k, "logf": [...]} per request on stdout.
    """

    def __init__(self, exec_path, args, handshake):
        self.proc = subprocess.Popen(
            [exec_path, *args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )
        self._next_id = 0
        self._send(handshake)

    def _send(self, obj) -> None:
        self.proc.stdin.write(json.dumps(obj) + "\n")
        self.proc.stdin.flush()

    def __call__(self, points):
        import numpy as np

        points = np.atleast_2d(np.asarray(points, dtype=float))
        request_id = self._next_id
        self._next_id += 1
        self._send({"id": request_id, "points": points.tolist()})
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("external evaluator closed its output stream")
        reply = json.loads(line)
        if reply.get("id") != request_id:
            raise RuntimeError(
                f"evaluator answered id {reply.get('id')}, expected {request_id}"
            )
        values = np.asarray(reply["logf"], dtype=float)
        if values.shape != (points.shape[0],):
            raise RuntimeError("evaluator returned a wrong-length logf array")
        return values

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


def _spec_from_source(args):
    """IntegrandSpec plus an optional evaluator handle to close afterwards."""
    import numpy as np

    from .integrand import IntegrandSpec, builtin_spec, finite_difference_hessian

    if args.builtin:
        return builtin_spec(args.builtin), None
    with open(args.spec_file) as fh:
        doc = json.load(fh)
    mode = np.asarray(doc["mode"], dtype=float)
    evaluator = SubprocessEvaluator(
        doc["evaluator"]["exec"],
        doc["evaluator"].get("args", []),
        {"dim": doc["dim"], "mode": doc["mode"], "hessian": doc["hessian"]},
    )
    if doc["hessian"] == "finite-difference":
        hessian = finite_difference_hessian(lambda p: evaluator(p)[0], mode)
    else:
        hessian = np.asarray(doc["hessian"], dtype=float)
    spec = IntegrandSpec(dim=doc["dim"], log_f=evaluator, mode=mode, hessian=hessian)
    return spec, evaluator


def cmd_calibrate(args) -> int:
    from .calibration import calibrate, save_calibration

    grid = _build_grid(args.grid, args.dim, args.scale)
    result = calibrate(
        grid,
        method=args.method,
        lam=args.lam,
        box_halfwidth=args.halfwidth,
        step=args.step,
    )
    save_calibration(result, args.out)
    _manifest("calibrate", args, [args.out])
    cfg = result.config
    print(
        f"nu={result.nu} gamma={cfg.gamma:.6f} lambda={cfg.lam:.6f} "
        f"alpha={result.alpha:.6f} m1={result.achieved_m1:.6f} "
        f"method={result.method}"
    )
    return _EXIT_ACCEPT


def cmd_diagnose(args) -> int:
    from .calibration import load_calibration
    from .engine import diagnose

    calibration = load_calibration(args.calib)
    spec, evaluator = _spec_from_source(args)
    try:
        report = diagnose(spec, calibration.config, jitter=args.jitter)
    finally:
        if evaluator is not None:
            evaluator.close()
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    csv_path = args.out.rsplit(".", 1)[0] + ".orbits.csv"
    report.orbit_table_csv(csv_path)
    _manifest("diagnose", args, [args.out, csv_path])
    post = report.posterior
    # a function sitting exactly on the rejection boundary (the calibration
    # reference itself) is not rejected
    decision = "reject" if (post.reject and not report.boundary) else "accept"
    print(
        f"decision={decision} boundary={str(report.boundary).lower()} "
        f"m1={post.m1:.6g} c1={post.c1:.6g} p_value={post.p_value:.6g} "
        f"n={report.n_points} method={report.method}"
    )
    return _EXIT_REJECT if decision == "reject" else _EXIT_ACCEPT


def cmd_sweep(args) -> int:
    from .calibration import (
        calibrate_lambda_target,
        find_nu,
        gamma_rule,
    )

    grid = _build_grid(args.grid, args.dim, args.scale)
    nu = find_nu(args.dim)
    gamma = args.gamma if args.gamma else gamma_rule(nu, args.dim)
    candidates = args.candidates and [float(c) for c in args.candidates.split(",")]
    best, table = calibrate_lambda_target(
        grid, nu, args.dim, gamma, candidates=candidates, full_output=True
    )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "m1", "rcond"])
        writer.writerows(table)
    _manifest("sweep", args, [args.out])
    print(f"nu={nu} gamma={gamma:.6f} best_lambda={best:.6f} rows={len(table)}")
    return _EXIT_ACCEPT


def cmd_oracle(args) -> int:
    from .integrand import builtin_spec, eval_log_f
    from .oracles import importance_sample, riemann_integrate

    spec = builtin_spec(args.builtin)
    if args.method == "is":
        result = importance_sample(spec, args.n, df=args.df, seed=args.seed)
        doc = asdict(result)
    else:
        value = riemann_integrate(
            lambda x: eval_log_f(spec, x), spec.dim, args.halfwidth, args.step
        )
        doc = {"estimate": value, "halfwidth": args.halfwidth, "step": args.step}
    doc["method"] = args.method
    doc["builtin"] = args.builtin
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest("oracle", args, [args.out])
    print(f"method={args.method} estimate={doc['estimate']:.8g}")
    return _EXIT_ACCEPT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laplace-gauge",
        description="Decide whether a Laplace approximation can be trusted.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="produce a calibration config file")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--grid", required=True, choices=["cross2d", "ckf", "gh2"])
    p.add_argument("--scale", type=float, default=3.6)
    p.add_argument(
        "--method",
        default="auto",
        choices=["auto", "l2_optimized", "target_m1", "fixed"],
    )
    p.add_argument("--lam", type=float, default=None, help="length-scale for --method fixed")
    p.add_argument("--halfwidth", type=float, default=10.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--out", default="calibration.json")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("diagnose", help="run the diagnostic on a function")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--builtin", help="e.g. banana, gaussian:d=10, mvt:nu=38,d=2")
    source.add_argument("--spec-file", help="JSON sidecar for an external evaluator")
    p.add_argument("--calib", required=True)
    p.add_argument("--out", default="report.json")
    p.add_argument("--jitter", action="store_true")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="length-scale sweep table")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--grid", required=True, choices=["cross2d", "ckf", "gh2"])
    p.add_argument("--scale", type=float, default=3.6)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--candidates", default=None, help="comma-separated lambdas")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="reference integral computations")
    p.add_argument("--builtin", required=True)
    p.add_argument("--method", default="is", choices=["is", "quadrature"])
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--df", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--halfwidth", type=float, default=10.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--out", default="oracle.json")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return _EXIT_ERROR
    except Exception as exc:  # surfaced as a clean one-line error
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
