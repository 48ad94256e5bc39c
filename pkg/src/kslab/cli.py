"""Command line entry point: ``kslab <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

SYSTEM_ALIASES = {"nlh": "NLH", "tm": "TM", "tmprime": "TMprime", "tm'": "TMprime", "tmp": "TMprime",
                  "pp": "PP", "pe": "PE"}


def system_name(s: str) -> str:
    try:
        return SYSTEM_ALIASES[s.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown system {s!r}") from None


def _grid_args(p, n="32", L=16 * math.pi, d=3):
    p.add_argument("--d", type=int, default=d)
    p.add_argument("--n", default=n, help="modes per axis, or comma separated per axis")
    p.add_argument("--L", type=float, default=L)


def _grid(args):
    from .spectral_core import Grid
    n = [int(x) for x in str(args.n).split(",")]
    return Grid(args.d, n[0] if len(n) == 1 else n, args.L)


def _control(args):
    from .simulator import StepControl
    return StepControl(rtol=args.rtol, dt0=args.dt0, dt_max=args.dt_max)


def _ctl_args(p):
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--dt0", type=float, default=1e-2)
    p.add_argument("--dt-max", dest="dt_max", type=float, default=0.05)


def _emit(obj, out):
    text = obj if isinstance(obj, str) else json.dumps(obj, indent=2, sort_keys=True, default=float)
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .harness import run_point
    out = run_point(args.system, args.tau, args.A, _grid(args), args.recipe, args.horizon, _control(args))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="") as fh:
            fh.write(out.trace_csv)
    _emit(out.record(), args.out)
    return 0


def cmd_cascade(args) -> int:
    from .cascade import make_sequences
    if args.verify:
        from .harness import run_point
        res = run_point(args.system, args.tau, args.A, _grid(args), args.recipe, args.horizon,
                        _control(args), cascade_k=args.kmax)
        rec = res.record()
        _emit(rec, args.out)
        ok = res.sign_ok is not False and all(lv["status"] == "PASS" for lv in res.cascade["levels"])
        return 0 if ok else 1
    cert = make_sequences(args.system, args.tau, args.A, args.tstar, args.kmax, d=args.d)
    _emit(cert.to_json(), args.out)
    return 0


def cmd_moments(args) -> int:
    from .moments import (DirichletDomain, blowup_certificate, certify_against_simulation,
                          jensen_check, moment_trace, simulate_dirichlet_tmprime)
    dom = DirichletDomain(args.d, args.n)
    cert = blowup_certificate(args.J0, args.I0, args.tau, dom.lam)
    out = json.loads(cert.to_json())
    code = 0
    if args.simulate:
        horizon = args.horizon if args.horizon else (cert.t_max or 1.0) * 1.05
        u0 = dom.sine_data(args.I0)
        phi0 = dom.sine_data(args.J0)
        traj = simulate_dirichlet_tmprime(u0, phi0, args.tau, horizon, sample_dt=args.sample_dt)
        window = 0.9 * (traj.bracket[0] if traj.bracket else horizon)
        tr = moment_trace(traj, dom, args.tau, t_max=window)
        chk = certify_against_simulation(tr, cert)
        jen = jensen_check(traj, dom)
        out["simulation"] = dict(diverged=traj.diverged, bracket=traj.bracket, passed=chk.passed,
                                 identity_residual=tr.relative("identity_residual"),
                                 jensen_violations=jen.violations, notes=chk.notes)
        code = 0 if chk.passed and jen.passed else 1
    _emit(out, args.out)
    return code


def cmd_estimates(args) -> int:
    from . import estimates as E
    lem = args.lemma
    if lem in ("Bprime", "Bdprime"):
        b = args.b if args.b is not None else (0.1 if lem == "Bprime" else 1.0)
        reps = {lem: E.run_y_suite(lem, b, n_draws=args.draws)}
    elif lem in ("heat", "heat_grad"):
        from .spectral_core import Grid
        g = Grid(args.d, 32, 16.0)
        rng = np.random.default_rng(args.seed)
        fields = [E.random_field(g, rng) for _ in range(args.draws)]
        q = math.inf if args.q is None else args.q
        reps = {lem: E.verify_heat_lp_lq(fields, args.p, q, [0.25, 0.5, 1.0, 2.0], lem == "heat_grad")}
    else:
        pt = E.BesovPoint(args.d, args.p, *(3 * [args.q or _default_q(args.d, args.p)]))
        which = E.BESOV_LEMMAS if lem == "all" else (lem,)
        reps = E.run_besov_suite(pt, n_random=args.draws, which=which, seed=args.seed)
    out = {k: r.to_dict() for k, r in reps.items()}
    _emit(out if len(out) > 1 else next(iter(out.values())), args.out)
    return 0 if all(r.passed for r in reps.values()) else 1


def _default_q(d: int, p: float) -> float:
    # 1/q = 3/(2d) - 1/(2p) sits inside the common exponent range
    return 1 / (3 / (2 * d) - 1 / (2 * p))


def cmd_constants(args) -> int:
    from .constants import dump_table, parse_range
    ranges = dict(parse_range(s) for s in args.grid)
    if set(ranges) != {"a", "b"}:
        raise SystemExit("need one a:lo:hi:step and one b:lo:hi:step range")
    _emit(dump_table(args.d, ranges["a"], ranges["b"]), args.out)
    return 0


def cmd_sweep(args) -> int:
    from .harness import DEFAULT_CONFIG, load_plan, run_plan
    if args.print_default:
        sys.stdout.write(DEFAULT_CONFIG)
        return 0
    if not args.config:
        raise SystemExit("sweep needs --config (see --print-default)")
    plan = load_plan(args.config)
    man = run_plan(plan, args.output)
    sys.stdout.write(man.to_json() + "\n")
    return 0 if man.ok else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kslab", description="Chemotaxis toy-model laboratory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="integrate one run and report the verdict")
    p.add_argument("--system", type=system_name, default="TM")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--A", type=float, required=True)
    p.add_argument("--recipe", default="gaussian", choices=["gaussian", "indicator", "constant"])
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--trace", help="CSV file for the pm-norm trace")
    p.add_argument("--out")
    _grid_args(p)
    _ctl_args(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("cascade", help="dyadic lower-bound sequences (and optional verification)")
    p.add_argument("action", choices=["run"])
    p.add_argument("--system", type=system_name, default="TM")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--A", type=float, required=True)
    p.add_argument("--tstar", type=float, default=1.0)
    p.add_argument("--kmax", type=int, default=3)
    p.add_argument("--verify", action="store_true", help="simulate and check every level")
    p.add_argument("--recipe", default="gaussian", choices=["gaussian", "indicator"])
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--out")
    _grid_args(p, n="256,64,64")
    _ctl_args(p)
    p.set_defaults(fn=cmd_cascade)

    p = sub.add_parser("moments", help="first-eigenfunction blowup certificate")
    p.add_argument("action", choices=["run"])
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--J0", type=float, required=True)
    p.add_argument("--I0", type=float, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--simulate", action="store_true")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--sample-dt", dest="sample_dt", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_moments)

    p = sub.add_parser("estimates", help="fitted constants of the operator inequalities")
    p.add_argument("action", choices=["run"])
    p.add_argument("--lemma", default="all",
                   choices=["all", "heat", "heat_grad", "L", "B", "B_d2", "LGrad", "GradB", "Btilde",
                            "Btilde_d2", "Bprime", "Bdprime"])
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--p", type=float, default=2.5)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--draws", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_estimates)

    p = sub.add_parser("constants", help="admissibility and bilinear constants on an (a, b) grid")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--grid", nargs=2, required=True, metavar="NAME:LO:HI:STEP")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_constants)

    p = sub.add_parser("sweep", help="run an experiment plan from a TOML file")
    p.add_argument("--config")
    p.add_argument("--output", default=None)
    p.add_argument("--print-default", action="store_true")
    p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.fn(args))
    except (ValueError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
