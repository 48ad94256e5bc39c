"""Dyadic lower-bound cascade for TM and TM' with nonnegative Fourier data.

Level k asserts  u^(xi, t) >= beta_k e^{-2^k t} w_k^(xi)  for t_k <= t < t*,
where w_0^ is the indicator of the ball B_0 = B((3/4) e_1, 1/4) and
w_k^ = (2 pi)^-d w_{k-1}^ * w_{k-1}^.  The beta_k overflow quickly, so they
are carried as log2 values throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .constants import Calibration, cascade_Kd
from .norms import TrajectoryRecord
from .spectral_core import PERIODIC, Grid, SpectralField

LOG2E = math.log2(math.e)
B0_CENTER = 0.75
B0_RADIUS = 0.25


class ResolutionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@dataclass
class DyadicProfile:
    """w_k^ on a dense box of modes ``lo .. lo + values.shape - 1`` (integer labels)."""

    k: int
    lo: tuple[int, ...]
    values: np.ndarray
    dxi: float

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def norm1(self) -> float:
        return float(self.values.sum() * self.dxi ** self.d)

    def support_modes(self) -> np.ndarray:
        """Integer labels of the modes where w_k^ > 0, shape (count, d)."""
        idx = np.argwhere(self.values > 0)
        return idx + np.asarray(self.lo)

    def support_values(self) -> np.ndarray:
        return self.values[self.values > 0]

    def support_radii(self) -> np.ndarray:
        return np.linalg.norm(self.support_modes() * self.dxi, axis=1)

    def to_field(self, grid: Grid) -> SpectralField:
        c = np.zeros(grid.shape, dtype=complex)
        m = self.support_modes()
        idx = tuple((m[:, j] % grid.n[j]) for j in range(grid.d))
        c[idx] = self.support_values()
        return SpectralField(grid, c, real=False)


def ball_indicator(grid: Grid, center: float = B0_CENTER, radius: float = B0_RADIUS) -> DyadicProfile:
    """Indicator of B(center e_1, radius): a mode is in iff its lattice point is."""
    h = grid.dxi
    r = int(math.ceil(radius / h)) + 1
    c0 = int(round(center / h))
    lo = (c0 - r,) + (-r,) * (grid.d - 1)
    axes = [np.arange(l, l + 2 * r + 1) * h for l in lo]
    mesh = np.meshgrid(*axes, indexing="ij")
    dist2 = (mesh[0] - center) ** 2 + sum(m ** 2 for m in mesh[1:])
    vals = (dist2 <= radius ** 2 * (1 + 1e-12)).astype(float)
    return _trim(DyadicProfile(0, lo, vals, h))


def _trim(p: DyadicProfile) -> DyadicProfile:
    nz = np.argwhere(p.values > 0)
    if nz.size == 0:
        raise ResolutionError("no lattice point falls inside the profile support")
    a, b = nz.min(axis=0), nz.max(axis=0) + 1
    sl = tuple(slice(i, j) for i, j in zip(a, b))
    return DyadicProfile(p.k, tuple(int(l + i) for l, i in zip(p.lo, a)), p.values[sl].copy(), p.dxi)


def self_convolve(p: DyadicProfile) -> DyadicProfile:
    """(2 pi)^-d dxi^d (w * w): the grid version of the continuous convolution.

    Direct summation keeps the support exact (no FFT round-off outside it).
    """
    v = signal.convolve(p.values, p.values, mode="full", method="direct")
    v *= (p.dxi / (2 * math.pi)) ** p.d
    lo = tuple(2 * l for l in p.lo)
    return _trim(DyadicProfile(p.k + 1, lo, v, p.dxi))


def check_resolution(grid: Grid, k_max: int) -> None:
    if grid.basis != PERIODIC:
        raise ResolutionError("the cascade lives on the periodic grid")
    if grid.d < 1:
        raise ResolutionError("bad dimension")
    if grid.dxi > 0.125 + 1e-12:
        raise ResolutionError(f"B_0 (radius 1/4) unresolved: need dxi <= 1/8, have {grid.dxi:g}")
    top = 2.0 ** k_max
    cut = [(m - 1) // 3 * grid.dxi for m in grid.n]
    if cut[0] < top:
        raise ResolutionError(f"axis 0 keeps |xi| <= {cut[0]:g}, level {k_max} needs {top:g}")
    for j in range(1, grid.d):
        if cut[j] < top / 4:
            raise ResolutionError(f"axis {j} keeps |xi| <= {cut[j]:g}, level {k_max} needs {top / 4:g}")


def build_profiles(grid: Grid, k_max: int) -> list[DyadicProfile]:
    check_resolution(grid, k_max)
    out = [ball_indicator(grid)]
    for _ in range(k_max):
        out.append(self_convolve(out[-1]))
    return out


def profile_norm_prediction(d: int, k: int) -> float:
    """Continuum value (2 pi)^d K_d^{2^k} of ||w_k^||_1."""
    return (2 * math.pi) ** d * cascade_Kd(d) ** (2 ** k)


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------

def tk(tstar: float, k: int) -> float:
    return tstar * (1 - 4.0 ** (-k))


def tmprime_K(tau: float | None = None) -> float:
    """K making the TM' level step valid with t* = 1 and tau >= 2.

    The step gives the factor 2^{4k-8}/3 tau^-2 e^{-2^{2k+1}(1 - t_{k-1})} (t_k - t_{k-1})^3
    with 1 - t_{k-1} = 4^{1-k} and t_k - t_{k-1} = 3 4^{-k}, i.e. 9 e^-8 2^-8 2^{-2k} tau^-2.
    """
    return 2 ** 8 * math.exp(8) / 9


@dataclass
class LevelResult:
    k: int
    t_k: float
    log2_beta: float
    status: str = "pending"          # PASS / FAIL / UNREACHED (solution gone before t_k)
    margin: float | None = None      # min over checked (t, xi) of u^/bound - 1
    samples: int = 0
    modes: int = 0


@dataclass
class CascadeCertificate:
    system: str
    tau: float
    A: float
    tstar: float
    delta: float | None
    M: float | None                  # log2 of 2^M (TM)
    K_d: float
    K: float | None = None           # TM' level constant
    d: int = 3
    levels: list[LevelResult] = field(default_factory=list)

    @property
    def predicate_log2(self) -> float:
        """log2 of the factor whose exceeding 1 forces divergence of ||u(t_k)||_inf."""
        if self.system == "TM":
            return math.log2(self.A) + self.M - 4 - self.tstar * LOG2E + math.log2(self.K_d)
        return math.log2(self.A) - math.log2(16 * self.K * self.tau ** 2) - LOG2E + math.log2(self.K_d)

    @property
    def diverges(self) -> bool:
        return self.predicate_log2 > 0

    @property
    def passed(self) -> bool:
        return bool(self.levels) and all(l.status == "PASS" for l in self.levels)

    def log2_beta_closed(self, k: int) -> float:
        if self.system == "TM":
            return 2 ** k * (math.log2(self.A) + self.M - 4) + 4 - self.M + 2 * k
        c = math.log2(16 * self.K * self.tau ** 2)
        return 2 ** k * (math.log2(self.A) - c) + c + 2 * k

    def log2_beta_recursive(self, k_max: int) -> list[float]:
        out = [math.log2(self.A)]
        for k in range(1, k_max + 1):
            if self.system == "TM":
                out.append(self.M - 2 * k + 2 * out[-1])
            else:
                out.append(-math.log2(self.K * self.tau ** 2) - 2 * k + 2 * out[-1])
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(predicate_log2=self.predicate_log2, diverges=self.diverges, passed=self.passed)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def make_sequences(system: str, tau: float, A: float, tstar: float = 1.0, k_max: int = 3,
                   delta: float | None = None, d: int = 3, K: float | None = None) -> CascadeCertificate:
    if not A > 0 or not tau > 0:
        raise ValueError("A and tau must be positive")
    Kd = cascade_Kd(d)
    if system == "TM":
        if tstar < 1:
            raise ValueError("the TM cascade is set up for t* >= 1")
        delta = tstar / tau if delta is None else float(delta)
        if delta * tau < tstar * (1 - 1e-14):
            raise ValueError("need t* <= delta tau for the second level inequality")
        lead = 3 * tstar - 1 + math.exp(-4 * delta * tau)
        M = math.log2(lead * math.exp(-delta) / (16 * tau))
        cert = CascadeCertificate("TM", tau, A, tstar, delta, M, Kd, None, d)
    elif system == "TMprime":
        if tstar != 1:
            raise ValueError("the TM' cascade uses t* = 1")
        if tau < 2:
            raise ValueError("the TM' cascade step is only established for tau >= 2")
        cert = CascadeCertificate("TMprime", tau, A, 1.0, None, None, Kd, tmprime_K(tau) if K is None else K, d)
    else:
        raise ValueError(f"no cascade for system {system!r}")
    cert.levels = [LevelResult(k, tk(cert.tstar, k), cert.log2_beta_closed(k)) for k in range(k_max + 1)]
    return cert


def minimal_amplitude(system: str, tau: float, tstar: float = 1.0, d: int = 3) -> float:
    """Smallest A for which the divergence predicate holds."""
    c = make_sequences(system, tau, 1.0, tstar, 0, d=d)
    return 2.0 ** (-c.predicate_log2)


def needs_inequalities(tstar, tau, delta, k_max: int = 30) -> bool:
    """Exact check (rationals) of the two per-level requirements on t_k."""
    from fractions import Fraction as F
    ts, dl, ta = F(tstar), F(delta), F(tau)
    for k in range(1, k_max + 1):
        a = ts * (1 - F(1, 4 ** k))
        b = ts * (1 - F(1, 4 ** (k - 1)))
        if a - b < 3 * ts * F(1, 2 ** (2 * k)):
            return False
        if (ts - b) * 2 ** (2 * k - 2) / ta > dl:
            return False
    return True


# ---------------------------------------------------------------------------
# verification against a trajectory
# ---------------------------------------------------------------------------

def level_margin(u: SpectralField, prof: DyadicProfile, log2_beta: float, t: float) -> float:
    """min over supp w_k^ of u^/bound - 1, evaluated in logs."""
    g = u.grid
    m = prof.support_modes()
    idx = tuple(m[:, j] % g.n[j] for j in range(g.d))
    uh = np.asarray(u.coeffs)[idx].real
    if np.any(uh <= 0):
        return -1.0
    logb = log2_beta * math.log(2) - 2 ** prof.k * t + np.log(prof.support_values())
    r = np.min(np.log(uh) - logb)
    return float(math.expm1(min(r, 700.0)))


def verify_cascade(traj: TrajectoryRecord, cert: CascadeCertificate,
                   profiles: list[DyadicProfile], atol: float = 1e-12) -> CascadeCertificate:
    """Check every level at every stored sample in [t_k, t*) reached before divergence."""
    if len(profiles) < len(cert.levels):
        raise ValueError("not enough profiles for the requested levels")
    reached = traj.times[-1] if traj.times else 0.0
    snaps = list(traj.snapshots())
    for lev in cert.levels:
        lev.samples, lev.modes, lev.margin = 0, 0, None
        if lev.t_k > reached + atol:
            lev.status = "UNREACHED"
            continue
        if not any(abs(t - lev.t_k) <= atol for t, _, _ in snaps):
            raise KeyError(f"no stored sample at t_{lev.k} = {lev.t_k}")
        prof = profiles[lev.k]
        worst = math.inf
        for t, u, _ in snaps:
            if lev.t_k - atol <= t < cert.tstar:
                worst = min(worst, level_margin(u, prof, lev.log2_beta, t))
                lev.samples += 1
        lev.modes = int((prof.values > 0).sum())
        lev.margin = worst
        lev.status = "PASS" if worst >= 0 else "FAIL"
    return cert


def sample_times_for(cert: CascadeCertificate, horizon: float, per_unit: int = 16) -> list[float]:
    """Uniform samples plus every t_k, so the integrator lands on them."""
    base = list(np.linspace(0, horizon, int(round(per_unit * horizon)) + 1)[1:])
    return sorted(set(base) | {lv.t_k for lv in cert.levels if 0 < lv.t_k <= horizon})


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def data_from_profile(A: float, grid: Grid, recipe: str = "gaussian", sigma: float = 0.25,
                      max_tries: int = 40) -> SpectralField:
    """Real data with u0^ >= A w_0^ on the grid.

    ``gaussian``: u0^ = A c_g (G(xi - c) + G(xi + c)), G a Gaussian of width
    sigma at c = (3/4) e_1.  The mirrored copy makes u0 real.  c_g starts at
    the analytic value and is raised until the grid check passes.
    ``indicator``: u0^ = A (w_0^(xi) + w_0^(-xi)).
    """
    if not A > 0:
        raise ValueError("A must be positive")
    w0 = ball_indicator(grid).to_field(grid)
    wc = np.asarray(w0.coeffs).real
    mirror = np.conj(wc[_neg(grid)])
    if recipe == "indicator":
        c = A * (wc + mirror.real)
        return SpectralField(grid, c * grid.dealias_mask)
    if recipe != "gaussian":
        raise ValueError(f"unknown recipe {recipe!r}")
    kx = grid.k[0]
    rest = sum(kj ** 2 for kj in grid.k[1:]) if grid.d > 1 else 0.0
    G = (np.exp(-((kx - B0_CENTER) ** 2 + rest) / (2 * sigma ** 2))
         + np.exp(-((kx + B0_CENTER) ** 2 + rest) / (2 * sigma ** 2)))
    cg = math.exp(B0_RADIUS ** 2 / (2 * sigma ** 2)) * 1.0001
    for _ in range(max_tries):
        c = A * cg * G * grid.dealias_mask
        if dominance_margin(c, A * wc) >= 0:
            return SpectralField(grid, c.astype(complex))
        cg *= 1.05
    raise ResolutionError("could not dominate A w_0^ on this grid")


def _neg(grid: Grid):
    from .spectral_core import _negate_index
    return _negate_index(grid.shape)


def dominance_margin(c: np.ndarray, target: np.ndarray) -> float:
    """min over supp(target) of c - target."""
    sel = target > 0
    if not np.any(sel):
        return math.inf
    return float(np.min(np.asarray(c).real[sel] - target[sel]))
