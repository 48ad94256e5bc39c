"""Measured constants for the linear, bilinear and heat-flow inequalities.

Every verifier works in two phases: ratios  left side / (tau-free right side)
are measured on a training set of draws and the constant is fitted as their
maximum times ``INFLATION``; the held-out draws must then stay below it.
The tau-dependence is measured separately: the largest ratio over all draws
at each tau is regressed against tau on a log-log scale.

Besov-side operators (L, B, B~) are evaluated in R^3 on radial trajectories
over a window (0, T], either static, z(s) = s^{-nu} g(r) with nu = 1 - d/2p,
or self-similar, z(s) = s^{-1} G(r / sqrt(s)); both have |||z|||_p equal to
the L^p norm of the profile.  Radial fields stay radial under all three
operators, so a fine 1-D sine grid resolves both diffusion lengths
sqrt(t) and sqrt(t / tau) at tau = 64.  The pseudomeasure
bilinear forms B' and B'' are evaluated by radial quadrature for the
self-similar family  u^(xi, t) = t^{-mu} |xi|^{-a} m(t |xi|^2)  with
piecewise-constant multipliers 0 <= m <= 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special
from scipy.fft import dct, dst
from scipy.special import hyp1f1

from .constants import (InadmissibleParameters, admissible_besov, admissible_tm,
                        admissible_tmprime)
from .norms import lp_norm_values
from .spectral_core import Grid, SpectralField, heat_semigroup

INFLATION = 2.0
HEAT_INFLATION = 1.1
TAUS = (1.0, 4.0, 16.0, 64.0)
EXPONENT_TOL = 0.15

LEMMAS = ("L", "B", "B_d2", "LGrad", "GradB", "Btilde", "Btilde_d2", "Bprime", "Bdprime")


@dataclass
class EstimateReport:
    lemma: str
    params: dict
    constant: float
    train_max: float
    test_max: float
    passed: bool
    margin: float                                 # 1 - test_max / constant
    tau_ratios: dict = field(default_factory=dict)  # tau -> max ratio over all draws
    exponent_stated: float | None = None
    exponent_fit: float | None = None
    per_tau_constants: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def exponent_ok(self) -> bool | None:
        if self.exponent_stated is None or self.exponent_fit is None:
            return None
        return abs(self.exponent_fit - self.exponent_stated) <= EXPONENT_TOL

    @property
    def exponent_consistent(self) -> bool | None:
        """One-sided check: the measured decay is at least the stated one (up to the tolerance)."""
        if self.exponent_stated is None or self.exponent_fit is None:
            return None
        return self.exponent_fit <= self.exponent_stated + EXPONENT_TOL

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exponent_ok"] = self.exponent_ok
        d["exponent_consistent"] = self.exponent_consistent
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)


def loglog_fit(xs, ys) -> float:
    xs, ys = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(xs, ys, 1)[0])


def fit_and_test(train, test, inflation: float = INFLATION) -> tuple[float, float, float, bool]:
    tr = float(np.max(train)) if len(train) else 0.0
    te = float(np.max(test)) if len(test) else 0.0
    C = tr * inflation
    return C, tr, te, te <= C


# ---------------------------------------------------------------------------
# heat semigroup L^p - L^q
# ---------------------------------------------------------------------------

def heat_ratio(f: SpectralField, p: float, q: float, t: float, gradient: bool = False) -> float:
    """||e^{t Delta} f||_q (or of its gradient) over t^{-d(1/p-1/q)/2} ||f||_p."""
    d = f.grid.d
    gap = d * (1 / p - (0 if math.isinf(q) else 1 / q)) / 2
    h = heat_semigroup(f, t)
    g = f.grid
    if gradient:
        c = np.asarray(h.coeffs)
        comps = [g.inverse(1j * kj * c) for kj in g.k]
        vals = np.sqrt(sum(x ** 2 for x in comps))
        lhs = lp_norm_values(vals, q, g.cell_volume)
        w = t ** (-0.5 - gap)
    else:
        lhs = lp_norm_values(h.to_physical(), q, g.cell_volume)
        w = t ** (-gap)
    return lhs / (w * lp_norm_values(f.to_physical(), p, g.cell_volume))


def gaussian_field(grid: Grid, center, width: float, amp: float = 1.0) -> SpectralField:
    x = grid.nodes()
    r2 = sum(_pdist(xi, c, grid.L) ** 2 for xi, c in zip(x, center))
    return SpectralField.from_physical(grid, amp * np.exp(-r2 / (2 * width ** 2)))


def _pdist(x, c, L):
    d = x - c
    return d - L * np.round(d / L)


def random_field(grid: Grid, rng: np.random.Generator, n_bumps: int = 3, n_modes: int = 4,
                 width_range=(0.3, 1.5)) -> SpectralField:
    """Gaussian bumps plus a few wave packets, nonnegative part not enforced."""
    L = grid.L
    x = grid.nodes()
    vals = np.zeros(grid.shape)
    for _ in range(n_bumps):
        c = L / 2 + rng.uniform(-L / 8, L / 8, grid.d)
        w = math.exp(rng.uniform(*np.log(width_range)))
        r2 = sum(_pdist(xi, ci, L) ** 2 for xi, ci in zip(x, c))
        vals += rng.uniform(0.3, 1.0) * rng.choice([-1, 1]) * np.exp(-r2 / (2 * w ** 2))
    for _ in range(n_modes):
        c = L / 2 + rng.uniform(-L / 8, L / 8, grid.d)
        w = math.exp(rng.uniform(*np.log(width_range)))
        kv = rng.integers(-3, 4, grid.d) * (2 * math.pi / L) * rng.integers(1, 4)
        r2 = sum(_pdist(xi, ci, L) ** 2 for xi, ci in zip(x, c))
        ph = sum(kk * xi for kk, xi in zip(kv, x))
        vals += rng.uniform(0.1, 0.6) * np.cos(ph) * np.exp(-r2 / (2 * w ** 2))
    return SpectralField.from_physical(grid, vals)


def verify_heat_lp_lq(fields, p: float, q: float, times, gradient: bool = False,
                      split: float = 0.5, inflation: float = HEAT_INFLATION) -> EstimateReport:
    """Fit C(d, p, q) on the first part of ``fields`` and test on the rest.

    For p = q (no gradient) the constant is 1 and every draw is tested against it.
    """
    if p > q:
        raise ValueError("need p <= q")
    fields = list(fields)
    ratios = np.array([max(heat_ratio(f, p, q, t, gradient) for t in times) for f in fields])
    n = max(1, int(len(fields) * split))
    C, tr, te, ok = fit_and_test(ratios[:n], ratios[n:], inflation)
    if p == q and not gradient:
        C, ok = 1.0 + 1e-6, bool(np.max(ratios) <= 1.0 + 1e-6)
    margin = 1 - te / C if C > 0 else 0.0
    return EstimateReport("heat_grad" if gradient else "heat", dict(p=p, q=q, d=fields[0].grid.d),
                          C, tr, te, ok, margin)


def heat_exponent(f: SpectralField, p: float, q: float, times) -> float:
    g = f.grid
    vals = [lp_norm_values(heat_semigroup(f, t).to_physical(), q, g.cell_volume) for t in times]
    return loglog_fit(times, vals)


# ---------------------------------------------------------------------------
# Besov-side operators on radial static-profile trajectories (d = 3)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BesovPoint:
    d: int = 3
    p: float = 2.5
    q: float = 10 / 3
    q1: float = 10 / 3
    q2: float = 10 / 3

    def check(self):
        if not admissible_besov(self.p, self.q, self.q1, self.q2, self.d):
            raise InadmissibleParameters(f"{self} outside the common exponent range")
        if self.d != 3:
            raise InadmissibleParameters("the radial operator verifier is three-dimensional")

    @property
    def nu(self) -> float:
        return 1 - self.d / (2 * self.p)

    def e(self, q: float) -> float:
        return -0.5 + self.d / 2 * (1 / self.p - 1 / q)


def memory_integral(s, A, nu: float):
    """int_0^s sigma^{-nu} e^{-(s - sigma) A} d sigma (vectorized in A)."""
    return s ** (1 - nu) / (1 - nu) * hyp1f1(1.0, 2.0 - nu, -np.asarray(A) * s)


class RadialGrid:
    """Radial functions on R^3 stored as sine series of w = r f on [0, R].

    The Laplacian is diagonal (-k_m^2) and the heat flow is exact per mode;
    the Dirichlet wall at R stands in for infinity (profiles decay well before it).
    """

    def __init__(self, R: float = 40.0, N: int = 8192):
        self.R, self.N = float(R), int(N)
        self.r = np.arange(1, N + 1) * (R / (N + 1))
        self.dr = R / (N + 1)
        self.k = np.arange(1, N + 1) * (math.pi / R)
        self.k2 = self.k ** 2
        self.mask = np.arange(1, N + 1) <= (2 * N) // 3

    def coeffs(self, f):
        return dst(self.r * f, type=1) / (self.N + 1)

    def values(self, c):
        return dst(c, type=1) / 2 / self.r

    def _cos_sum(self, a):
        x = np.zeros(self.N + 2)
        x[1:-1] = a
        return dct(x, type=1)[1:-1] / 2

    def deriv(self, c):
        """f' from the coefficients of r f."""
        return (self._cos_sum(c * self.k) - self.values(c)) / self.r

    def odd_deriv(self, F):
        """F' for an odd (radial-component) profile given by its values."""
        a = dst(F, type=1) / (self.N + 1)
        return self._cos_sum(a * self.k * self.mask)

    def div_coeffs(self, F):
        """Coefficients of r * div(F e_r)."""
        return self.coeffs(self.odd_deriv(F) + 2 * F / self.r) * self.mask

    def hessian_norm(self, c):
        """Frobenius norm of the Hessian of f."""
        d1 = self.deriv(c)
        lap = self.values(-self.k2 * c)
        return np.sqrt((lap - 2 * d1 / self.r) ** 2 + 2 * (d1 / self.r) ** 2)

    def lp(self, f, p: float) -> float:
        a = np.abs(f)
        if math.isinf(p):
            return float(a.max())
        m = float(a.max())
        if m == 0:
            return 0.0
        return m * float(4 * math.pi * np.sum((a / m) ** p * self.r ** 2) * self.dr) ** (1 / p)


@dataclass
class RadialProfile:
    """Superposition of radial Gaussians, shells and wave packets.

    As a trajectory on (0, T] it is either static, z(s) = s^-nu G(r), or
    self-similar, z(s) = s^-1 G(r / sqrt(s / T)); both have |||z|||_p = ||G||_p
    (and |||z|||_{1,p} = sqrt(T) ||grad G||_p).
    """

    kinds: list
    amps: np.ndarray
    widths: np.ndarray
    shifts: np.ndarray
    self_similar: bool = False

    def __call__(self, r):
        out = np.zeros_like(r)
        for kind, a, w, s in zip(self.kinds, self.amps, self.widths, self.shifts):
            if kind == "bump":
                out += a * np.exp(-r ** 2 / (2 * w ** 2))
            elif kind == "shell":
                out += a * np.exp(-(r - s) ** 2 / (2 * w ** 2))
            else:
                out += a * np.cos(s * r / w) * np.exp(-r ** 2 / (2 * w ** 2))
        return out

    def resolved_from(self, dr: float, T: float = 1.0, cells: float = 6.0) -> float:
        """Earliest time at which a self-similar trajectory is resolved on spacing dr."""
        if not self.self_similar:
            return 0.0
        return T * (cells * dr / float(np.min(self.widths))) ** 2

    def at(self, s: float, r, nu: float, T: float = 1.0):
        if self.self_similar:
            lam = math.sqrt(s / T)
            return (T / s) * self(r / lam) / T ** nu
        return s ** (-nu) * self(r)

    @classmethod
    def random(cls, rng: np.random.Generator, width_range=(0.03, 3.0), max_terms: int = 16,
               self_similar: bool | None = None):
        n = int(rng.integers(1, max_terms + 1))
        kinds = list(rng.choice(["bump", "shell", "packet"], n, p=[0.5, 0.25, 0.25]))
        lo, hi = np.log(width_range)
        # one dominant scale per draw, the rest spread around it
        w0 = math.exp(rng.uniform(lo, hi))
        widths = np.clip(w0 * np.exp(rng.normal(0, 0.5, n)), *width_range)
        amps = rng.uniform(0.2, 1.0, n) * rng.choice([-1, 1], n, p=[0.3, 0.7])
        shifts = np.where(np.array(kinds) == "shell", rng.uniform(1, 4, n) * widths,
                          rng.uniform(0.5, 3, n))
        ss = bool(rng.integers(2)) if self_similar is None else self_similar
        return cls(kinds, amps, widths, shifts, ss)


@dataclass
class BesovSample:
    """Per-node norms of all operator outputs for one (u, z) pair at one tau."""

    tau: float
    T: float
    times: np.ndarray
    Lz_q: np.ndarray
    LGrad_q1: np.ndarray
    B_p: np.ndarray
    B_d2: np.ndarray
    GradB_p: np.ndarray
    GradBt_p: np.ndarray
    Bt_p: np.ndarray
    Bt_d2: np.ndarray
    u_p: float
    u_1p: float
    z_p: float
    z_1p: float


def _phis(z):
    out1, out2 = np.empty_like(z), np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out1[small] = 1 + zs / 2 + zs ** 2 / 6
    out2[small] = 0.5 + zs / 6 + zs ** 2 / 24
    zb = z[~small]
    e1 = np.expm1(zb)
    out1[~small] = e1 / zb
    out2[~small] = (e1 - zb) / zb ** 2
    return out1, out2


def besov_operators(fu: RadialProfile, fz: RadialProfile, tau: float, pt: BesovPoint,
                    rg: RadialGrid | None = None, T: float = 1.0, n_nodes: int = 48,
                    s_min_frac: float = 1e-4) -> BesovSample:
    """L z, grad L z, B(u, z), B~(u, z) on (0, T] for radial profile trajectories.

    For static z the memory integral inside L is exact per mode; otherwise it
    and the outer Duhamel integrals use the exponential product trapezoid on a
    geometric time grid.  A self-similar trajectory is switched on only once
    its finest feature spans a few grid cells (zero before), which keeps it
    inside the same norm ball.
    """
    rg = rg or RadialGrid()
    nu = pt.nu
    m = rg.mask
    s = np.concatenate([[0.0], T * np.geomspace(s_min_frac, 1.0, n_nodes)])
    keys = ("Lz_q", "LGrad_q1", "B_p", "B_d2", "GradB_p", "GradBt_p", "Bt_p", "Bt_d2")
    rec = {k: [] for k in keys}
    zero = np.zeros(rg.N)
    IB, IBt, psi = zero, zero, zero
    prevB = prevBt = prevZ = zero
    static_u = not fu.self_similar
    if static_u:
        cu = rg.coeffs(fu(rg.r)) * m
        u1, du1 = rg.values(cu), rg.deriv(cu)
    cz_static = rg.coeffs(fz(rg.r)) * m
    on_u, on_z = fu.resolved_from(rg.dr, T), fz.resolved_from(rg.dr, T)
    for j in range(1, len(s)):
        sj, h = s[j], s[j] - s[j - 1]
        if fz.self_similar:
            cz = rg.coeffs(fz.at(sj, rg.r, nu, T)) * m if sj >= on_z else zero
            p1, p2 = _phis(-h * rg.k2 / tau)
            psi = np.exp(-h * rg.k2 / tau) * psi + (h / tau) * ((p1 - p2) * prevZ + p2 * cz)
            prevZ = cz
            cpsi = psi
        else:
            cpsi = cz_static * memory_integral(sj, rg.k2 / tau, nu) / tau
        Lr = rg.deriv(cpsi)
        if static_u:
            w = sj ** (-nu)
            uv, duv = w * u1, w * du1
        else:
            cu = rg.coeffs(fu.at(sj, rg.r, nu, T)) * m if sj >= on_u else zero
            uv, duv = rg.values(cu), rg.deriv(cu)
        curB = -rg.div_coeffs(uv * Lr)
        curBt = rg.coeffs(duv * Lr) * m
        e = np.exp(-h * rg.k2)
        p1, p2 = _phis(-h * rg.k2)
        IB = e * IB + h * ((p1 - p2) * prevB + p2 * curB)
        IBt = e * IBt + h * ((p1 - p2) * prevBt + p2 * curBt)
        prevB, prevBt = curB, curBt
        vB, vBt = rg.values(IB), rg.values(IBt)
        rec["Lz_q"].append(rg.lp(Lr, pt.q))
        rec["LGrad_q1"].append(rg.lp(rg.hessian_norm(cpsi), pt.q1))
        rec["B_p"].append(rg.lp(vB, pt.p))
        rec["B_d2"].append(rg.lp(vB, pt.d / 2))
        rec["Bt_p"].append(rg.lp(vBt, pt.p))
        rec["Bt_d2"].append(rg.lp(vBt, pt.d / 2))
        rec["GradB_p"].append(rg.lp(rg.deriv(IB), pt.p))
        rec["GradBt_p"].append(rg.lp(rg.deriv(IBt), pt.p))
    cu_static = rg.coeffs(fu(rg.r)) * m
    norms = []
    for c in (cu_static, cz_static):
        norms += [rg.lp(rg.values(c), pt.p), math.sqrt(T) * rg.lp(rg.deriv(c), pt.p)]
    return BesovSample(tau, T, s[1:], *(np.array(rec[k]) for k in keys), *norms)


def besov_ratios(smp: BesovSample, pt: BesovPoint, t_frac: float = 1e-2) -> dict[str, float]:
    """tau-free ratios: left side over the right side stripped of its tau power."""
    d, p = pt.d, pt.p
    sel = smp.times >= t_frac * smp.T
    ts = smp.times[sel]
    BBu = smp.u_p + smp.u_1p
    BBz = smp.z_p + smp.z_1p
    if smp.z_p == 0:
        return dict.fromkeys(("L", "B", "B_d2", "LGrad", "GradB", "Btilde", "Btilde_d2"), 0.0)
    return {
        "L": float(np.max(smp.Lz_q[sel] / ts ** (-0.5 + d / (2 * pt.q))) / smp.z_p),
        "B": float(np.max(ts ** (1 - d / (2 * p)) * smp.B_p[sel]) / (smp.u_p * smp.z_p)),
        "B_d2": float(np.max(smp.B_d2[sel]) / (smp.u_p * smp.z_p)),
        "LGrad": float(np.max(smp.LGrad_q1[sel] / ts ** (-1 + d / (2 * pt.q1))) / smp.z_1p),
        "GradB": float(np.max((smp.GradB_p[sel] + smp.GradBt_p[sel]) / ts ** (-1.5 + d / (2 * p)))
                       / (BBu * BBz)),
        "Btilde": float(np.max(smp.Bt_p[sel] / ts ** (-1 + d / (2 * p))) / (BBu * BBz)),
        "Btilde_d2": float(np.max(smp.Bt_d2[sel]) / (BBu * BBz)),
    }


def besov_exponents(pt: BesovPoint) -> dict[str, float | None]:
    return {"L": pt.e(pt.q), "B": pt.e(pt.q), "B_d2": -1.5 + pt.d / pt.p, "LGrad": pt.e(pt.q1),
            "GradB": pt.e(pt.q1), "Btilde": pt.e(pt.q2), "Btilde_d2": None}


@dataclass
class DrawSpec:
    seed: int
    diagonal: bool
    train: bool = True


def draw_pair(spec: DrawSpec, width_range=(0.03, 3.0)):
    rng = np.random.default_rng(spec.seed)
    fz = RadialProfile.random(rng, width_range)
    fu = fz if spec.diagonal else RadialProfile.random(rng, width_range)
    return fu, fz


def bump(width: float, self_similar: bool = False) -> RadialProfile:
    return RadialProfile(["bump"], np.array([1.0]), np.array([float(width)]), np.array([0.0]),
                         self_similar)


def draw_set(n_random: int = 16, n_widths: int = 12, seed: int = 0, width_range=(0.03, 3.0)):
    """Width ladder of single bumps (u = z and u, z two rungs apart) plus random superpositions.

    Rungs alternate between the calibration and held-out halves so both
    halves cover every scale; random draws alternate the same way.
    Returns (pairs, specs).
    """
    ws = np.geomspace(*width_range, n_widths)
    pairs, specs = [], []
    for ss in (False, True):
        for i, w in enumerate(ws):
            f = bump(w, ss)
            pairs.append((f, f))
            specs.append(DrawSpec(-1, True, i % 2 == 0))
        for i in range(n_widths - 2):
            pairs.append((bump(ws[i + 2], ss), bump(ws[i], ss)))
            specs.append(DrawSpec(-1, False, i % 2 == 0))
            pairs.append((bump(ws[i], ss), bump(ws[i + 2], ss)))
            specs.append(DrawSpec(-1, False, i % 2 == 1))
    for i in range(n_random):
        sp = DrawSpec(seed + i, diagonal=(i % 2 == 1), train=(i % 4 < 2))
        pairs.append(draw_pair(sp, width_range))
        specs.append(sp)
    return pairs, specs


BESOV_LEMMAS = ("L", "B", "B_d2", "LGrad", "GradB", "Btilde", "Btilde_d2")


def verify_operator_bounds(pairs, pt: BesovPoint | None = None, which=BESOV_LEMMAS, taus=TAUS,
                           rg: RadialGrid | None = None, n_nodes: int = 32,
                           specs=None) -> dict[str, EstimateReport]:
    """Fit the constants on the calibration draws and test them on the held-out ones.

    ``pairs`` is a sequence of (f_u, f_z) radial profiles.  Without ``specs``
    the first half calibrates and the second half is held out.  The d/2
    variants only use pairs with u = z.
    """
    pt = pt or BesovPoint()
    pt.check()
    rg = rg or RadialGrid(40.0, 4096)
    pairs = list(pairs)
    if specs is None:
        n = max(1, len(pairs) // 2)
        specs = [DrawSpec(-1, fu is fz, i < n) for i, (fu, fz) in enumerate(pairs)]
    R = {lem: np.zeros((len(pairs), len(taus))) for lem in which}
    for i, (fu, fz) in enumerate(pairs):
        for j, tau in enumerate(taus):
            r = besov_ratios(besov_operators(fu, fz, tau, pt, rg, n_nodes=n_nodes), pt)
            for lem in which:
                R[lem][i, j] = r[lem]
    expo = besov_exponents(pt)
    return {lem: _report(lem, R[lem], specs, taus, expo[lem], asdict(pt)) for lem in which}


def run_besov_suite(pt: BesovPoint | None = None, n_random: int = 16, taus=TAUS, seed: int = 0,
                    which=BESOV_LEMMAS, rg: RadialGrid | None = None, n_nodes: int = 32,
                    n_widths: int = 12):
    pairs, specs = draw_set(n_random, n_widths, seed)
    return verify_operator_bounds(pairs, pt, which, taus, rg, n_nodes, specs)


def _report(lemma, R, specs, taus, expo, params) -> EstimateReport:
    taus = np.asarray(taus, float)
    diag_only = lemma in ("B_d2", "Btilde_d2")
    rows = [i for i, s in enumerate(specs) if s.diagonal or not diag_only]
    R = R[rows]
    train = np.array([specs[i].train for i in rows])
    ratios = {float(t): float(np.max(R[:, j])) for j, t in enumerate(taus)}
    fit = loglog_fit(taus, R.max(axis=0)) if len(taus) > 1 else None
    if expo is None:
        # unspecified tau dependence: a constant per tau, trend reported only
        per, worst, ok_all, tr_all, te_all = {}, 0.0, True, 0.0, 0.0
        for j, tau in enumerate(taus):
            C, tr, te, ok = fit_and_test(R[train, j], R[~train, j])
            per[float(tau)] = C
            ok_all &= ok
            tr_all, te_all = max(tr_all, tr), max(te_all, te)
            worst = max(worst, te / C if C else 0.0)
        rep = EstimateReport(lemma, params, max(per.values()), tr_all, te_all, bool(ok_all),
                             1 - worst, ratios, None, fit, per)
        rep.notes.append("tau dependence unspecified: constants fitted per tau, trend only")
        return rep
    scaled = R / taus[None, :] ** expo
    C, tr, te, ok = fit_and_test(scaled[train].ravel(), scaled[~train].ravel())
    return EstimateReport(lemma, params, C, tr, te, bool(ok), 1 - te / C if C else 0.0,
                          ratios, expo, fit)


# ---------------------------------------------------------------------------
# pseudomeasure bilinear forms by radial quadrature (d = 3)
# ---------------------------------------------------------------------------

@dataclass
class Multiplier:
    """Piecewise-constant m(x) on breakpoints in x = t |xi|^2 (values in [0, 1])."""

    edges: np.ndarray   # increasing, len = len(values) - 1
    values: np.ndarray

    @classmethod
    def one(cls) -> "Multiplier":
        return cls(np.array([]), np.array([1.0]))

    @classmethod
    def random(cls, rng: np.random.Generator, pieces: int = 4) -> "Multiplier":
        edges = np.sort(np.exp(rng.uniform(np.log(1e-2), np.log(1e2), pieces - 1)))
        vals = rng.uniform(0.0, 1.0, pieces)
        vals[rng.integers(pieces)] = 1.0
        return cls(edges, vals)

    def __call__(self, x):
        return self.values[np.searchsorted(self.edges, x, side="right")]

    @property
    def sup(self) -> float:
        return float(np.max(self.values))


def _gl(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _memory_weighted(s, A, mu, m: Multiplier, r2):
    """int_0^s e^{-(s - sigma) A} sigma^{-mu} m(r2 sigma) d sigma, piecewise in sigma."""
    s = np.asarray(s, float)
    A = np.asarray(A, float)
    shape = np.broadcast(s, A, r2).shape
    s, A, r2 = (np.broadcast_to(v, shape) for v in (s, A, r2))
    out = np.zeros(shape)
    # breakpoints sigma_j = edges_j / r2 cut [0, s] into pieces with constant m
    prev_val = None
    cuts = [np.zeros(shape)] + [np.minimum(e / r2, s) for e in m.edges] + [s]
    for j in range(len(cuts) - 1):
        a, b = cuts[j], cuts[j + 1]
        # int_a^b = e^{-(s-b)A} E(b) - e^{-(s-a)A} E(a)
        Eb = memory_integral(b, A, mu)
        Ea = memory_integral(a, A, mu)
        val = np.exp(-(s - b) * A) * Eb - np.exp(-(s - a) * A) * Ea
        out += m.values[j] * np.clip(val, 0.0, None)
    return out


@dataclass(frozen=True)
class YPoint:
    b: float
    d: int = 3
    system: str = "TM"

    @property
    def a(self) -> float:
        if self.system == "TM":
            return self.d - 4 * self.b / 3
        beta = 2 * self.b - 1
        return self.d - 4 * beta / 3

    @property
    def mu(self) -> float:
        return 1 + (self.a - self.d) / 2

    @property
    def exponent(self) -> float:
        return self.b - 1 if self.system == "TM" else (2 * self.b - 1) - 1

    def check(self):
        ok = admissible_tm(self.a, self.b, self.d) if self.system == "TM" else \
            admissible_tmprime(self.d + 4 / 3 - 8 * self.b / 3, self.b, self.d)
        if not ok or self.d != 3:
            raise InadmissibleParameters(f"{self} not admissible (radial quadrature is 3-D)")


def _r_nodes(n=160, a=None):
    # r in (0, inf): dense near 0, around 1 (singular |1 - r|^{2-a}) and a long tail
    segs = [(1e-6, 0.5), (0.5, 0.98), (0.98, 1.0), (1.0, 1.02), (1.02, 2.0), (2.0, 10.0), (10.0, 200.0)]
    m = n // len(segs)
    # strong singularities get Gauss-Jacobi nodes with the weight |1 - r|^{2-a} built in
    e = None if a is None or a <= 2.75 else 2.0 - a
    xs, ws = [], []
    for (lo, hi) in segs:
        h = 0.5 * (hi - lo)
        if e is not None and hi == 1.0:
            x, w = special.roots_jacobi(m, e, 0.0)
            y = lo + h * (x + 1)
            xs.append(y)
            ws.append(w * h ** (1 + e) / (1 - y) ** e)
            continue
        if e is not None and lo == 1.0:
            x, w = special.roots_jacobi(m, 0.0, e)
            y = lo + h * (x + 1)
            xs.append(y)
            ws.append(w * h ** (1 + e) / (y - 1) ** e)
            continue
        x, w = np.polynomial.legendre.leggauss(m)
        u = 0.5 * (x + 1)
        # cluster toward the singular point at r = 1
        if hi == 1.0:
            y = lo + (hi - lo) * (1 - (1 - u) ** 4)
            jac = (hi - lo) * 4 * (1 - u) ** 3
        elif lo == 1.0:
            y = lo + (hi - lo) * u ** 4
            jac = (hi - lo) * 4 * u ** 3
        elif lo < 1e-3:
            # log-spaced toward the origin
            y = lo * (hi / lo) ** u
            jac = y * math.log(hi / lo)
        else:
            y = lo + (hi - lo) * u
            jac = np.full_like(u, hi - lo)
        xs.append(y)
        ws.append(0.5 * w * jac)
    return np.concatenate(xs), np.concatenate(ws)


def _s_nodes(t, n=48, mu=None):
    # s in (0, t): clustered at both ends; with mu given the integrand behaves like
    # s^-mu (c0 + c1 s^{1-mu} + ...), which is smooth in v = s^{1-mu}
    if mu is not None and 0 < mu < 1:
        k = 1 - mu
        x, w = np.polynomial.legendre.leggauss(n)
        v = 0.5 * t ** k * (x + 1)
        y = v ** (1 / k)
        return y, 0.5 * t ** k * w * y ** mu / k
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1)
    y = t * (3 * u ** 2 - 2 * u ** 3)
    jac = t * 6 * u * (1 - u)
    return y, 0.5 * w * jac


def _sphere_shell(r, s, a, m_u: Multiplier):
    """2 pi r int_{|1-r|}^{1+r} rho^{1-a} m_u(s rho^2) d rho (closed form by pieces)."""
    lo, hi = np.abs(1 - r), 1 + r
    e = 2 - a
    F = lambda x: x ** e / e
    out = np.zeros(np.broadcast(r, s).shape)
    cuts = [lo] + [np.clip(np.sqrt(ed / s), lo, hi) for ed in m_u.edges] + [hi]
    for j in range(len(cuts) - 1):
        out += m_u.values[j] * (F(cuts[j + 1]) - F(cuts[j]))
    return 2 * math.pi * r * out


def bprime_hat(t: float, tau: float, yp: YPoint, m_u: Multiplier, m_v: Multiplier) -> float:
    """B'(u, v)^ at |xi| = 1 for the self-similar family (u^ = t^-mu |xi|^-a m(t |xi|^2))."""
    a, mu = yp.a, yp.mu
    s, ws = _s_nodes(t, mu=mu)
    r, wr = _r_nodes(a=a)
    S, R = np.meshgrid(s, r, indexing="ij")
    V = (R ** (2 - a) / tau) * _memory_weighted(S, R ** 2 / tau, mu, m_v, R ** 2)
    U = _sphere_shell(R, S, a, m_u)
    inner = (U * V) @ wr
    outer = np.exp(-(t - s)) * s ** (-mu) * inner
    return float(outer @ ws) / (2 * math.pi) ** 3


def bdprime_hat(t: float, tau: float, yp: YPoint, m_u: Multiplier, m_v: Multiplier) -> float:
    """B''(u, v)^ at |xi| = 1: heat integral of (|.|^2 phi_u^) * (|.|^2 phi_v^)."""
    a, mu = yp.a, yp.mu
    s, ws = _s_nodes(t, 40)
    r, wr = _r_nodes(140)
    total = 0.0
    for si, wi in zip(s, ws):
        Phi_v = (r ** (2 - a) / tau) * _memory_weighted(si, r ** 2 / tau, mu, m_v, r ** 2)
        # cumulative rho-integral of rho * Phi_u(rho) to evaluate the shell [|1-r|, 1+r]
        rho = np.geomspace(1e-6, 400.0, 4000)
        Phi_u = (rho ** (2 - a) / tau) * _memory_weighted(si, rho ** 2 / tau, mu, m_u, rho ** 2)
        f = rho * Phi_u
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(rho))])
        Cw = lambda x: np.interp(x, rho, cum)
        shell = 2 * math.pi * r * (Cw(1 + r) - Cw(np.abs(1 - r)))
        total += wi * math.exp(-(t - si)) * float((shell * Phi_v) @ wr)
    return total / (2 * math.pi) ** 3


def y_ratio(which: str, tau: float, yp: YPoint, m_u: Multiplier, m_v: Multiplier,
            times=None) -> float:
    """sup_t t^mu |B^(1, t)| / (sup m_u sup m_v): the Y_a operator ratio for this pair."""
    if times is None:
        times = np.geomspace(0.05, 20.0, 9)
    f = bprime_hat if which == "Bprime" else bdprime_hat
    vals = [t ** yp.mu * f(t, tau, yp, m_u, m_v) for t in times]
    return float(max(vals)) / (m_u.sup * m_v.sup)


def run_y_suite(which: str, b: float, n_draws: int = 6, taus=TAUS, seed: int = 0,
                times=None) -> EstimateReport:
    """Constant and tau-exponent of B' (which="Bprime") or B'' ("Bdprime") in the Y_a norm.

    For B' the exponent a = d - 4b/3; for B'' the parameter is b with
    beta = 2b - 1 and a = d - 4 beta / 3.  The kernels are positive, so the
    pair m_u = m_v = 1 is the pointwise extremal; it is part of the
    calibration half, random multipliers alternate between the halves.
    """
    yp = YPoint(b, 3, "TM" if which == "Bprime" else "TMprime")
    yp.check()
    rng = np.random.default_rng(seed)
    draws = [(Multiplier.one(), Multiplier.one())]
    draws += [(Multiplier.random(rng), Multiplier.random(rng)) for _ in range(n_draws)]
    R = np.array([[y_ratio(which, tau, yp, mu_, mv_, times) for tau in taus] for mu_, mv_ in draws])
    specs = [DrawSpec(-1, True, True)] + [DrawSpec(seed + i, True, i % 2 == 1) for i in range(n_draws)]
    rep = _report(which, R, specs, taus, yp.exponent, dict(b=b, a=yp.a, d=3, system=yp.system))
    rep.notes.append(f"extremal tau-slope {loglog_fit(taus, R[0]):.4f}")
    return rep
