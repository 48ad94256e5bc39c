"""Experiment orchestration: config files, amplitude sweeps, threshold bracketing, manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .cascade import build_profiles, data_from_profile, make_sequences, sample_times_for, verify_cascade
from .constants import Calibration
from .norms import TrajectoryRecord, pm_norm
from .simulator import SYSTEMS, ModelSpec, SignTracker, StepControl, integrate
from .spectral_core import Grid, SpectralField

log = logging.getLogger(__name__)

WORKERS_ENV = "KSLAB_WORKERS"
GROWTH_LIMIT = 4.0      # boundedness verdict: pm norm stays below this multiple of its start
BRACKET_RATIO = 1.1

DEFAULT_CONFIG = """\
# kslab experiment plan. Every key is optional; the values shown are the defaults.
system = "TM"            # NLH | TM | TMprime | PP | PE
seed = 0                 # only used by randomized requests
horizon = 1.0            # final time of every run
output = "runs"          # output directory

[grid]
d = 3
n = 32                   # int, or a list with one entry per axis
L = 50.26548245743669    # 16 pi

[sweep]
tau = [1.0]
A = []                   # amplitudes of the data recipe
recipe = "gaussian"      # gaussian | indicator | constant

[control]
rtol = 1e-4
dt0 = 1e-2
dt_max = 0.05

[requests]
cascade = false          # verify the dyadic lower bounds (needs a fine grid)
threshold = false        # bracket the blowup amplitude at every tau
k_max = 3
"""


# ---------------------------------------------------------------------------
# plan and config
# ---------------------------------------------------------------------------

@dataclass
class ExperimentPlan:
    system: str = "TM"
    d: int = 3
    n: tuple[int, ...] | int = 32
    L: float = 16 * math.pi
    taus: list[float] = field(default_factory=lambda: [1.0])
    amplitudes: list[float] = field(default_factory=list)
    recipe: str = "gaussian"
    horizon: float = 1.0
    rtol: float = 1e-4
    dt0: float = 1e-2
    dt_max: float = 0.05
    cascade: bool = False
    threshold: bool = False
    k_max: int = 3
    output: str = "runs"
    seed: int = 0

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if isinstance(self.n, list):
            self.n = tuple(self.n)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def grid(self) -> Grid:
        return Grid(self.d, self.n, self.L)

    @property
    def control(self) -> StepControl:
        return StepControl(rtol=self.rtol, dt0=self.dt0, dt_max=self.dt_max)

    def points(self) -> list[tuple[float, float]]:
        return [(float(t), float(a)) for t in self.taus for a in self.amplitudes]

    def canonical(self) -> str:
        d = asdict(self)
        d["n"] = list(self.n) if isinstance(self.n, tuple) else self.n
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def plan_from_dict(cfg: dict) -> ExperimentPlan:
    grid = cfg.get("grid", {})
    sweep = cfg.get("sweep", {})
    ctl = cfg.get("control", {})
    req = cfg.get("requests", {})
    kw = dict(system=cfg.get("system", "TM"), seed=int(cfg.get("seed", 0)),
              horizon=float(cfg.get("horizon", 1.0)), output=str(cfg.get("output", "runs")))
    for src, keys in ((grid, ("d", "n", "L")), (ctl, ("rtol", "dt0", "dt_max")),
                      (req, ("cascade", "threshold", "k_max"))):
        kw.update({k: src[k] for k in keys if k in src})
    if "tau" in sweep:
        kw["taus"] = [float(x) for x in sweep["tau"]]
    if "A" in sweep:
        kw["amplitudes"] = [float(x) for x in sweep["A"]]
    if "recipe" in sweep:
        kw["recipe"] = sweep["recipe"]
    return ExperimentPlan(**kw)


def load_plan(path) -> ExperimentPlan:
    with open(path, "rb") as fh:
        return plan_from_dict(tomli.load(fh))


def default_plan() -> ExperimentPlan:
    return plan_from_dict(tomli.loads(DEFAULT_CONFIG))


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------

def initial_data(recipe: str, A: float, grid: Grid) -> SpectralField:
    if recipe == "constant":
        return SpectralField.from_physical(grid, np.full(grid.shape, float(A)))
    return data_from_profile(A, grid, recipe)


def growth_norm(u: SpectralField) -> float:
    """pm norm with exponent d - 2; for d < 3 the plain sup of |u^| (zero mode included)."""
    a = u.grid.d - 2
    if a > 0:
        return pm_norm(u, a)
    return float(np.max(np.abs(u.coeffs), initial=0.0))


@dataclass
class RunOutcome:
    system: str
    tau: float
    A: float
    diverged: bool
    bracket: tuple[float, float] | None
    pm0: float
    pm_max: float
    steps: int
    wall: float = 0.0
    sign_ok: bool | None = None
    cascade: dict | None = None
    trace_csv: str = ""

    @property
    def bounded(self) -> bool:
        return not self.diverged and self.pm_max <= GROWTH_LIMIT * self.pm0

    @property
    def verdict(self) -> str:
        if self.diverged:
            return "blowup"
        return "bounded" if self.bounded else "grew"

    def record(self) -> dict:
        d = asdict(self)
        d.pop("trace_csv")
        d["verdict"] = self.verdict
        return d


def run_point(system: str, tau: float, A: float, grid: Grid, recipe: str = "gaussian",
              horizon: float = 1.0, control: StepControl | None = None, cascade_k: int | None = None,
              per_unit: int = 16) -> RunOutcome:
    """One integration with the boundedness / blowup verdicts (and optionally the cascade check)."""
    model = ModelSpec(system, grid, tau)
    u0 = initial_data(recipe, A, grid)
    rec = TrajectoryRecord(model=model)
    rec.track("pm", lambda t, u, p: growth_norm(u))
    sign = None
    if system in ("TM", "TMprime"):
        sign = SignTracker()
        rec.track("sign", sign)
    cert = profiles = None
    times = list(np.linspace(0, horizon, int(round(per_unit * horizon)) + 1)[1:])
    keep = False
    if cascade_k is not None:
        cert = make_sequences(system, tau, A, 1.0, cascade_k, d=grid.d)
        profiles = build_profiles(grid, cascade_k)
        times = sample_times_for(cert, horizon, per_unit)
        keep = True
    t0 = time.perf_counter()
    rec = integrate(model, u0, horizon, sample_times=times, control=control, record=rec, keep=keep)
    wall = time.perf_counter() - t0
    pm0 = rec.traces["pm"][0]
    out = RunOutcome(system, tau, A, rec.diverged, rec.bracket, pm0, rec.sups["pm"],
                     int(rec.meta.get("steps", 0)), wall)
    if sign is not None:
        out.sign_ok = sign.report().passed
    if cert is not None:
        verify_cascade(rec, cert, profiles)
        out.cascade = cert.to_dict()
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", "pm"])
    for t, v in zip(rec.times, rec.traces["pm"]):
        w.writerow([repr(t), repr(v)])
    out.trace_csv = buf.getvalue()
    return out


# ---------------------------------------------------------------------------
# threshold bracketing
# ---------------------------------------------------------------------------

class NonMonotone(RuntimeError):
    pass


@dataclass
class ThresholdBracket:
    system: str
    tau: float
    A_lo: float
    A_hi: float
    observations: list[tuple[float, str]]
    lo_verdict: str = ""

    @property
    def ratio(self) -> float:
        return self.A_hi / self.A_lo

    @property
    def mid(self) -> float:
        return math.sqrt(self.A_lo * self.A_hi)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio"] = self.ratio
        return d


def check_monotone(obs: list[tuple[float, str]]) -> None:
    """Every blowup amplitude must lie above every amplitude without blowup."""
    blow = [a for a, v in obs if v == "blowup"]
    calm = [a for a, v in obs if v != "blowup"]
    if blow and calm and min(blow) <= max(calm):
        raise NonMonotone(f"blowup at A = {min(blow):g} but not at A = {max(calm):g}")


def threshold_bracket(system: str, tau: float, recipe: str = "gaussian", grid: Grid | None = None,
                      horizon: float = 1.0, A_lo: float = 1.0, A_hi: float = 10.0,
                      ratio: float = BRACKET_RATIO, control: StepControl | None = None,
                      runner=None, max_expand: int = 12) -> ThresholdBracket:
    """Bisect (geometrically) on the amplitude until A_hi / A_lo <= ratio.

    A_hi blows up before ``horizon``; A_lo does not.  The initial guesses are
    widened by factors of 4 when they do not bracket.  ``runner(A)`` may be
    supplied to replace the PDE run (it returns a verdict string).
    """
    if not 1 < ratio:
        raise ValueError("ratio must exceed 1")
    if not 0 < A_lo < A_hi:
        raise ValueError("need 0 < A_lo < A_hi")
    if runner is None:
        grid = grid or Grid(3, 32, 16 * math.pi)

        def runner(A):
            return run_point(system, tau, A, grid, recipe, horizon, control).verdict
    obs: list[tuple[float, str]] = []

    def probe(A):
        v = runner(A)
        obs.append((A, v))
        check_monotone(obs)
        log.info("%s tau=%g A=%.6g -> %s", system, tau, A, v)
        return v

    for _ in range(max_expand):
        if probe(A_hi) == "blowup":
            break
        A_lo, A_hi = A_hi, A_hi * 4
    else:
        raise RuntimeError("no blowup found while widening the bracket")
    for _ in range(max_expand):
        if probe(A_lo) != "blowup":
            break
        A_hi, A_lo = A_lo, A_lo / 4
    else:
        raise RuntimeError("no blowup-free amplitude found while widening the bracket")
    while A_hi / A_lo > ratio:
        mid = math.sqrt(A_lo * A_hi)
        if probe(mid) == "blowup":
            A_hi = mid
        else:
            A_lo = mid
    lo_v = next(v for a, v in reversed(obs) if a == A_lo)
    return ThresholdBracket(system, tau, A_lo, A_hi, obs, lo_v)


def calibrate(grid: Grid, recipe: str = "gaussian", horizon: float = 1.0,
              control: StepControl | None = None, guess: tuple[float, float] = (1e3, 1e4),
              ratio: float = BRACKET_RATIO) -> tuple[Calibration, ThresholdBracket]:
    """Fit the existence and blowup constants once at tau = 1.

    kappa_blowup * e^{1/tau} tau passes through A_hi at tau = 1, and kappa_d
    is the pm norm (exponent d - 2) of the data at A_lo.
    """
    br = threshold_bracket("TM", 1.0, recipe, grid, horizon, guess[0], guess[1], ratio, control)
    pm_lo = pm_norm(initial_data(recipe, br.A_lo, grid), grid.d - 2)
    cal = Calibration(kappa_d=pm_lo, kappa_blowup=br.A_hi / math.e)
    return cal, br


def pm_per_amplitude(grid: Grid, recipe: str = "gaussian") -> float:
    return pm_norm(initial_data(recipe, 1.0, grid), grid.d - 2)


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------

def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _job(args):
    plan, tau, A = args
    try:
        k = plan.k_max if plan.cascade else None
        out = run_point(plan.system, tau, A, plan.grid, plan.recipe, plan.horizon, plan.control, k)
        return out, None
    except Exception as exc:  # partial failures land in the manifest
        return None, f"{type(exc).__name__}: {exc}"


def _bracket_job(args):
    plan, tau = args
    try:
        amps = sorted(plan.amplitudes) or [1.0, 10.0]
        br = threshold_bracket(plan.system, tau, plan.recipe, plan.grid, plan.horizon,
                               amps[0], amps[-1] if len(amps) > 1 else amps[0] * 10,
                               control=plan.control)
        return br, None
    except Exception as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


@dataclass
class Manifest:
    config_hash: str
    plan: dict
    runs: list[dict]
    brackets: list[dict]
    errors: list[dict]
    timing: dict

    @property
    def ok(self) -> bool:
        if self.errors:
            return False
        for r in self.runs:
            if r.get("sign_ok") is False:
                return False
            c = r.get("cascade")
            if c and not all(lv["status"] == "PASS" for lv in c["levels"]):
                return False
        return True

    def to_json(self, with_timing: bool = True) -> str:
        d = asdict(self)
        if not with_timing:
            d.pop("timing")
            for r in d["runs"]:
                r.pop("wall", None)
        d["ok"] = self.ok
        return json.dumps(d, indent=2, sort_keys=True, default=float)


def run_plan(plan: ExperimentPlan, out_dir=None, workers: int | None = None) -> Manifest:
    """Run every sweep point (parallel across points) and write the artifacts.

    Writes ``manifest.json`` (deterministic part), ``timing.json`` and one
    ``pm_*.csv`` trace per run into ``out_dir`` (default ``plan.output``).
    """
    workers = worker_count() if workers is None else workers
    t0 = time.perf_counter()
    jobs = [(plan, tau, A) for tau, A in plan.points()]
    results = _map(_job, jobs, workers)
    runs, errors, walls = [], [], []
    traces = {}
    for (p, tau, A), (out, err) in zip(jobs, results):
        if err:
            errors.append(dict(tau=tau, A=A, error=err))
            continue
        rec = out.record()
        walls.append(rec.pop("wall"))
        runs.append(rec)
        traces[f"pm_tau{tau:g}_A{A:g}.csv"] = out.trace_csv
    brackets = []
    if plan.threshold:
        for (p, tau), (br, err) in zip([(plan, t) for t in plan.taus],
                                       _map(_bracket_job, [(plan, t) for t in plan.taus], workers)):
            if err:
                errors.append(dict(tau=tau, error=err))
            else:
                brackets.append(br.to_dict())
    timing = dict(total=time.perf_counter() - t0, runs=walls, workers=workers)
    man = Manifest(plan.config_hash(), json.loads(plan.canonical()), runs, brackets, errors, timing)
    out = Path(out_dir if out_dir is not None else plan.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(man.to_json(with_timing=False), encoding="utf-8")
    (out / "timing.json").write_text(json.dumps(timing, indent=2), encoding="utf-8")
    for name, text in traces.items():
        (out / name).write_text(text, encoding="utf-8", newline="")
    _write_runs_csv(out / "runs.csv", runs)
    return man


def _write_runs_csv(path: Path, runs: list[dict]) -> None:
    cols = ["system", "tau", "A", "verdict", "diverged", "bracket_lo", "bracket_hi", "pm0", "pm_max",
            "steps", "sign_ok"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in runs:
            br = r.get("bracket") or (None, None)
            w.writerow([r["system"], repr(r["tau"]), repr(r["A"]), r["verdict"], r["diverged"],
                        "" if br[0] is None else repr(br[0]), "" if br[1] is None else repr(br[1]),
                        repr(r["pm0"]), repr(r["pm_max"]), r["steps"], r["sign_ok"]])
