"""Command line entry point ``linf-ot``.

Exit codes: 0 success, 1 usage or input error, 2 solver non-convergence,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import blockapprox, harness
from .bottleneck import solve_bottleneck
from .measures import (
    InstanceError,
    load_instance,
    load_plan,
    save_instance,
    support_set,
)
from .monotonicity import (
    NotMonotoneError,
    check_c_cyclical_monotonicity,
    check_inf_cyclical_monotonicity,
    rate_functions,
)
from .sinkhorn import MODES, ConvergenceWarning, EpsSchedule, SolverConfig, solve

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_VIOLATION = 3


def _write_json(obj, path):
    text = json.dumps(obj, indent=2)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _instance(ref: str):
    """Instance from a JSON file, or a named built-in instance."""
    if ref in harness.INSTANCE_NAMES and not Path(ref).exists():
        return harness.generate_instance(ref)
    return load_instance(ref)


def cmd_gen(args):
    save_instance(harness.generate_instance(args.name), args.out)
    return EXIT_OK


def cmd_solve(args):
    inst = _instance(args.instance)
    cfg = SolverConfig(p=args.p, eps=args.eps, tol=args.tol, max_iter=args.max_iter, mode=args.mode)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        rep = solve(inst.mu, inst.nu, inst.cost(), cfg)
    _write_json(rep.to_dict(include_plan=not args.no_plan), args.out)
    if not rep.converged:
        print(f"not converged after {rep.iterations} iterations "
              f"(marginal errors {rep.marginal_err_l1})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_oracle(args):
    inst = _instance(args.instance)
    res = solve_bottleneck(inst.mu, inst.nu, inst.cost())
    _write_json(res.to_dict(inst.mu, inst.nu), args.out)
    return EXIT_OK


def cmd_check(args):
    inst = _instance(args.instance)
    gamma = load_plan(args.plan, inst.mu, inst.nu)
    supp = support_set(gamma, rel_tau=args.tau)
    checker = check_inf_cyclical_monotonicity if args.mode == "inf" else check_c_cyclical_monotonicity
    cert = checker(supp, inst.cost(), K=args.k)
    print(cert.summary())
    return EXIT_OK if cert.passed else EXIT_VIOLATION


def cmd_rate(args):
    inst = _instance(args.instance)
    gamma = load_plan(args.plan, inst.mu, inst.nu)
    supp = support_set(gamma, rel_tau=args.tau)
    try:
        table = rate_functions(supp, inst.cost(), K=args.k,
                               provenance={"plan": str(args.plan), "tau": supp.tau})
    except NotMonotoneError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VIOLATION
    table.to_csv(args.out)
    return EXIT_OK


def cmd_block(args):
    inst = _instance(args.instance)
    gamma = load_plan(args.plan, inst.mu, inst.nu)
    ba = blockapprox.block_approximate(gamma, args.delta)
    h, h_bound, h_ok = blockapprox.verify_entropy_bound(ba)
    w, w_bound, w_ok = blockapprox.verify_winf_bound(ba, gamma)
    approx, orig = ba.coupling.entries, gamma.entries
    report = {
        "delta": ba.delta,
        "L": ba.L,
        "n_blocks": [int(len(ba.mu_lattice)), int(len(ba.nu_lattice))],
        "entropy": h,
        "entropy_bound": h_bound,
        "entropy_pass": h_ok,
        "winf_certificate": w,
        "winf_bound": w_bound,
        "winf_pass": w_ok,
        # against the input plan's own marginals, which a Sinkhorn output only
        # matches up to its tolerance
        "marginal_drift": float(max(abs(approx.sum(axis=1) - orig.sum(axis=1)).max(),
                                    abs(approx.sum(axis=0) - orig.sum(axis=0)).max())),
        "coupling": ba.coupling.to_dict(),
    }
    _write_json(report, args.out)
    return EXIT_OK if (h_ok and w_ok) else EXIT_VIOLATION


def cmd_sweep(args):
    inst = _instance(args.instance)
    p_list = harness.default_p_list(args.p_min, args.p_max, args.n_p)
    res = harness.sweep(inst, p_list, EpsSchedule.constant(args.eps), args.target_vinf,
                        tol=args.tol, max_iter=args.max_iter, mode=args.mode, workers=args.workers)
    harness.emit_figure(res, "sweep", csv_path=args.out, svg_path=args.svg)
    fit = res.fit
    print(f"v_inf={res.v_inf:.10g} scale={res.scale:.10g} A={fit.A} B={fit.B} beta={fit.beta:.6g}")
    bad = [r.p for r in res.records if not r.converged]
    if bad:
        print(f"not converged at p={bad}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="linf-ot", description="Entropic and exact L-infinity optimal transport.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="write a named instance to JSON")
    s.add_argument("--name", required=True, choices=harness.INSTANCE_NAMES)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="Sinkhorn solve of the entropic problem")
    s.add_argument("--instance", required=True, help="instance JSON or built-in name")
    s.add_argument("--p", type=float, default=5.0)
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--mode", choices=MODES, default="auto")
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--max-iter", type=int, default=50_000)
    s.add_argument("--out", default="-")
    s.add_argument("--no-plan", action="store_true", help="omit the coupling from the report")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("oracle", help="exact bottleneck value")
    s.add_argument("--instance", required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("check", help="capped cyclical monotonicity check of a plan's support")
    s.add_argument("--plan", required=True)
    s.add_argument("--instance", required=True)
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--mode", choices=("inf", "sum"), default="inf")
    s.add_argument("--tau", type=float, default=1e-9, help="relative support threshold")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("rate", help="capped rate functions on spt mu x spt nu")
    s.add_argument("--instance", required=True)
    s.add_argument("--plan", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--tau", type=float, default=1e-9)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rate)

    s = sub.add_parser("block", help="block approximation and its bounds")
    s.add_argument("--plan", required=True)
    s.add_argument("--instance", required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_block)

    s = sub.add_parser("sweep", help="v_p against v_inf over a range of p")
    s.add_argument("--instance", required=True)
    s.add_argument("--p-min", type=float, required=True)
    s.add_argument("--p-max", type=float, required=True)
    s.add_argument("--n-p", type=int, default=25)
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--target-vinf", type=float, default=None)
    s.add_argument("--mode", choices=MODES, default="logDomain")
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--max-iter", type=int, default=50_000)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True, help="CSV path")
    s.add_argument("--svg", default=None)
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
