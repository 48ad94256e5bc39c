"""Mild-solution integration of the chemotaxis toy systems on spectral grids.

All five systems share the linear part ``u_t = Delta u`` and (where present)
``tau phi_t = Delta phi + u``.  The linear parts are propagated exactly; the
nonlinearity and the ``u / tau`` source of the phi equation are handled by the
two-stage exponential Runge-Kutta rule

    a     = e^{hL} y + h phi1(hL) N(y)
    y_new = a + h phi2(hL) (N(a) - N(y))

which keeps nonnegative Fourier data nonnegative for (TM)/(TM').
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft

from .norms import TrajectoryRecord, pm_norm, ya_distance
from .spectral_core import OVERFLOW, PERIODIC, SINE, Grid, SpectralField

log = logging.getLogger(__name__)

SYSTEMS = ("NLH", "TM", "TMprime", "PP", "PE")

SUP_LIMIT = 1e12
DT_MIN = 1e-9


@dataclass(frozen=True)
class ModelSpec:
    system: str
    grid: Grid
    tau: float = 1.0

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}; choose from {SYSTEMS}")
        if self.system in ("TM", "TMprime", "PP") and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.grid.basis == SINE and self.system not in ("TMprime", "NLH"):
            raise ValueError("the Dirichlet (sine) basis is only wired for TMprime and NLH")

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def evolves_phi(self) -> bool:
        return self.system in ("TM", "TMprime", "PP")

    @property
    def has_phi(self) -> bool:
        return self.system != "NLH"


@dataclass
class SimState:
    t: float
    u: SpectralField
    phi: SpectralField | None
    step: float
    diverged: bool = False
    bracket: tuple[float, float] | None = None
    reason: str = ""


def phi_functions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """exp(z), phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2 for z <= 0."""
    z = np.asarray(z, dtype=float)
    e = np.exp(z)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(zs)
    p1 = np.where(small, 1 + z / 2 + z ** 2 / 6 + z ** 3 / 24 + z ** 4 / 120, em1 / zs)
    p2 = np.where(small, 0.5 + z / 6 + z ** 2 / 24 + z ** 3 / 120 + z ** 4 / 720, (em1 - zs) / zs ** 2)
    return e, p1, p2


class Integrator:
    """Array-level exponential integrator for one model.

    Works on raw coefficient arrays; :func:`step` and :func:`integrate` wrap it
    in :class:`SimState` / :class:`TrajectoryRecord`.
    """

    def __init__(self, model: ModelSpec, packed: bool | None = None):
        self.model = model
        g = model.grid
        self.g = g
        # periodic real fields are stepped on the half spectrum (rfft layout)
        self.packed = g.basis == PERIODIC if packed is None else bool(packed and g.basis == PERIODIC)
        if self.packed:
            self._half = g.n[-1] // 2 + 1
            cut = (Ellipsis, slice(0, self._half))
            self.k2 = g.k2[cut]
            self.mask = g.dealias_mask[cut]
            self.k = tuple(np.broadcast_to(kj, g.shape)[cut] for kj in g.k)
        else:
            self.k2 = g.k2
            self.mask = g.dealias_mask
            self.k = g.k
        self.tau = model.tau
        self._cache: dict[float, tuple] = {}
        with np.errstate(divide="ignore"):
            self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)

    # -- layout ------------------------------------------------------------------
    def to_internal(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c)
        return np.ascontiguousarray(c[..., :self._half]).astype(complex) if self.packed else c

    def to_full(self, c: np.ndarray) -> np.ndarray:
        if not self.packed:
            return c
        g = self.g
        m = g.n[-1]
        full = np.empty(g.shape, dtype=complex)
        full[..., :self._half] = c
        # remaining last-axis modes from Hermitian symmetry
        j = np.arange(self._half, m)
        src = c[..., m - j]
        for ax in range(g.d - 1):
            src = np.roll(np.flip(src, axis=ax), 1, axis=ax)
        full[..., self._half:] = np.conj(src)
        return full

    def physical(self, c: np.ndarray) -> np.ndarray:
        g = self.g
        if self.packed:
            return sfft.irfftn(c, s=g.shape) / g.cell_volume
        return g.inverse(c)

    def spectral(self, f: np.ndarray) -> np.ndarray:
        g = self.g
        if self.packed:
            return sfft.rfftn(f) * g.cell_volume
        return g.forward(f)

    def product(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        m = self.mask
        fa = self.physical(a * m)
        fb = fa if b is a else self.physical(b * m)
        return self.spectral(fa * fb) * m

    # -- nonlinear terms -------------------------------------------------------
    def nonlinear(self, u: np.ndarray, phi: np.ndarray | None) -> np.ndarray:
        s = self.model.system
        if s == "NLH":
            return self.product(u, u)
        if s == "TM":
            # -u Delta phi
            return self.product(u, self.k2 * phi)
        if s == "TMprime":
            lp = self.k2 * phi
            return self.product(lp, lp)
        if s == "PE":
            phi = self.inv_k2 * u
        # PP / PE: -div(u grad phi)
        out = np.zeros_like(u)
        for kj in self.k:
            flux = self.product(u, 1j * kj * phi)
            out = out - 1j * kj * flux
        return out

    def _coeffs(self, h: float):
        c = self._cache.get(h)
        if c is None:
            cu = phi_functions(-h * self.k2)
            cp = phi_functions(-h * self.k2 / self.tau) if self.model.evolves_phi else None
            if len(self._cache) > 8:
                self._cache.clear()
            c = self._cache[h] = (cu, cp)
        return c

    def etd2(self, u: np.ndarray, phi: np.ndarray | None, h: float):
        (eu, p1u, p2u), cp = self._coeffs(h)
        nu = self.nonlinear(u, phi)
        au = eu * u + h * p1u * nu
        ap = None
        if self.model.evolves_phi:
            ep, p1p, p2p = cp
            ap = ep * phi + h * p1p * u / self.tau
        na = self.nonlinear(au, ap)
        u1 = au + h * p2u * (na - nu)
        p1 = None
        if self.model.evolves_phi:
            p1 = ap + h * p2p * (au - u) / self.tau
        elif self.model.system == "PE":
            p1 = self.inv_k2 * u1
        return u1, p1

    def sup(self, u: np.ndarray) -> float:
        return float(np.max(np.abs(self.physical(u)), initial=0.0))


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.max(np.abs(b), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def _bad(u: np.ndarray) -> bool:
    return not np.all(np.isfinite(u)) or float(np.max(np.abs(u), initial=0.0)) > OVERFLOW


def initial_state(model: ModelSpec, u0: SpectralField, phi0: SpectralField | None = None,
                  dt: float = 1e-3) -> SimState:
    if u0.grid != model.grid:
        raise ValueError("initial data lives on a different grid than the model")
    phi = None
    if model.evolves_phi:
        phi = phi0 if phi0 is not None else SpectralField.zeros(model.grid)
    elif model.system == "PE":
        from .spectral_core import inverse_laplacian
        phi = inverse_laplacian(u0)
    return SimState(0.0, u0, phi, dt)


def step(state: SimState, model: ModelSpec, dt: float, integrator: Integrator | None = None) -> SimState:
    """Advance by one fixed exponential Runge-Kutta step of size ``dt``."""
    if state.diverged:
        raise RuntimeError("state has diverged; no further stepping")
    if not dt > 0:
        raise ValueError("dt must be positive")
    it = integrator or Integrator(model)
    u, p = it.etd2(it.to_internal(state.u.coeffs), None if state.phi is None else it.to_internal(state.phi.coeffs), dt)
    new = _wrap(state, model, it.to_full(u), None if p is None else it.to_full(p), state.t + dt, dt)
    _flag(new, it, state.t, dt)
    return new


def _wrap(state, model, u, p, t, dt):
    U = state.u.with_coeffs(u)
    P = None if p is None else SpectralField(model.grid, p)
    return SimState(t, U, P, dt)


def _flag(new: SimState, it: Integrator, t_prev: float, dt: float) -> None:
    u = np.asarray(new.u.coeffs)
    if _bad(u):
        new.diverged, new.reason = True, "coefficient overflow"
    elif float(np.max(np.abs(new.u.to_physical()), initial=0.0)) > SUP_LIMIT:
        new.diverged, new.reason = True, "sup-norm limit"
    if new.diverged:
        new.bracket = (t_prev, t_prev + dt)


@dataclass
class StepControl:
    rtol: float = 1e-6
    dt0: float = 1e-3
    dt_max: float = 0.05
    dt_min: float = DT_MIN
    adaptive: bool = True
    safety: float = 0.9


def integrate(model: ModelSpec, u0: SpectralField, horizon: float, *, phi0: SpectralField | None = None,
              sample_times: Iterable[float] | None = None, control: StepControl | None = None,
              record: TrajectoryRecord | None = None, keep: Callable[[float], bool] | bool = True,
              include_initial: bool = True) -> TrajectoryRecord:
    """Integrate to ``horizon`` (or divergence), landing exactly on every sample time.

    ``keep`` decides which samples store their snapshots (trackers always run).
    With ``control.adaptive`` the step is chosen by step doubling: a step of
    size h is compared with two steps of size h/2; the two half steps are kept.
    """
    ctl = control or StepControl()
    if sample_times is None:
        sample_times = np.linspace(0, horizon, 65)[1:]
    samples = sorted({float(s) for s in sample_times if 0 < s <= horizon} | {float(horizon)})
    rec = record if record is not None else TrajectoryRecord(model=model)
    rec.model = model
    keep_fn = keep if callable(keep) else (lambda t, k=keep: k)
    it = Integrator(model)
    st = initial_state(model, u0, phi0, ctl.dt0)
    if include_initial:
        rec.append(0.0, st.u, st.phi, keep=keep_fn(0.0))
    u = it.to_internal(st.u.coeffs)
    p = None if st.phi is None else it.to_internal(st.phi.coeffs)
    t, h = 0.0, ctl.dt0
    n_steps = n_reject = 0
    for target in samples:
        while t < target * (1 - 1e-14):
            hh = min(h, target - t)
            if not ctl.adaptive:
                u1, p1 = it.etd2(u, p, hh)
                err_ok = True
            else:
                uf, pf = it.etd2(u, p, hh)
                um, pm = it.etd2(u, p, hh / 2)
                u1, p1 = it.etd2(um, pm, hh / 2)
                if _bad(uf) or _bad(u1):
                    err = math.inf
                else:
                    err = _rel_err(uf, u1)
                    if p1 is not None and model.evolves_phi:
                        err = max(err, _rel_err(pf, p1))
                err_ok = err <= ctl.rtol
                fac = 5.0 if err == 0 else min(5.0, max(0.2, ctl.safety * (ctl.rtol / err) ** (1 / 3)))
                if not err_ok:
                    n_reject += 1
                    h = hh * fac
                    if h < ctl.dt_min:
                        rec.diverged, rec.bracket = True, (t, t + hh)
                        rec.meta["reason"] = "step collapse"
                        break
                    continue
            n_steps += 1
            blew = None
            if _bad(u1):
                blew = "coefficient overflow"
            elif it.sup(u1) > SUP_LIMIT:
                blew = "sup-norm limit"
            if blew:
                rec.diverged, rec.bracket = True, (t, t + hh)
                rec.meta["reason"] = blew
                break
            u, p, t = u1, p1, t + hh
            if ctl.adaptive:
                h = min(ctl.dt_max, max(h if hh < h else 0.0, hh * fac))
        if rec.diverged:
            break
        t = target
        U = st.u.with_coeffs(it.to_full(u))
        P = None if p is None else SpectralField(model.grid, it.to_full(p))
        rec.append(t, U, P, keep=keep_fn(t))
    rec.meta.update(steps=n_steps, rejected=n_reject, t_end=t)
    if rec.diverged:
        log.debug("diverged in [%g, %g] (%s)", *rec.bracket, rec.meta.get("reason"))
    return rec


# ---------------------------------------------------------------------------
# Picard iteration on the mild formulation
# ---------------------------------------------------------------------------

@dataclass
class PicardResult:
    times: np.ndarray
    iterates: list[list[SpectralField]]
    residuals: list[float]
    trajectory: TrajectoryRecord

    @property
    def ratios(self) -> list[float]:
        r = self.residuals
        return [r[i + 1] / r[i] for i in range(len(r) - 1) if r[i] > 0]

    @property
    def converging(self) -> bool:
        r = self.residuals
        return all(r[i + 1] < r[i] for i in range(len(r) - 1))


def duhamel_cumulative(src: Sequence[np.ndarray], rate: np.ndarray, h: float) -> list[np.ndarray]:
    """I(t_j) = int_0^{t_j} e^{-(t_j - s) rate} src(s) ds on a uniform grid.

    Product trapezoid: the source is interpolated linearly on each cell and
    the exponential is integrated exactly, so stiff modes are handled without
    a step restriction.  Cost is linear in the number of nodes.
    """
    e, p1, p2 = phi_functions(-h * rate)
    w0, w1 = h * (p1 - p2), h * p2
    out = [np.zeros_like(src[0])]
    for j in range(1, len(src)):
        out.append(e * out[-1] + w0 * src[j - 1] + w1 * src[j])
    return out


def picard_solve(u0: SpectralField, model: ModelSpec, horizon: float, iterations: int,
                 nodes_per_unit: int = 64, ya_exponent: float | None = None) -> PicardResult:
    """Picard iterates u_{k+1} = e^{t Delta} u0 + B(u_k, u_k) of the mild formulation.

    The phi field of each iterate is the Duhamel integral of u_k (phi0 = 0);
    the nonlinearity is then integrated against the heat semigroup.  Both time
    integrals are evaluated cumulatively, so each iterate costs O(N_t)
    dealiased products.  Iteration 1 is the heat flow itself.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    g = model.grid
    N = max(2, int(math.ceil(horizon * nodes_per_unit)))
    ts = np.linspace(0.0, horizon, N + 1)
    h = ts[1] - ts[0]
    it = Integrator(model, packed=False)
    c0 = np.asarray(u0.coeffs)
    heat = [c0 * np.exp(-t * g.k2) for t in ts]
    a = (g.d - 2) if ya_exponent is None else ya_exponent
    iterates = [[u0.with_coeffs(c) for c in heat]]
    residuals: list[float] = []
    cur = heat
    for _ in range(iterations - 1):
        if model.evolves_phi:
            phis = [x / model.tau for x in duhamel_cumulative(cur, g.k2 / model.tau, h)]
        else:
            phis = [None] * len(cur)
        src = [it.nonlinear(u, p) for u, p in zip(cur, phis)]
        duh = duhamel_cumulative(src, g.k2, h)
        nxt = [hc + b for hc, b in zip(heat, duh)]
        new_fields = [u0.with_coeffs(c) for c in nxt]
        residuals.append(ya_distance(ts, new_fields, iterates[-1], a))
        iterates.append(new_fields)
        cur = nxt
    rec = TrajectoryRecord(model=model)
    for t, F in zip(ts, iterates[-1]):
        rec.append(float(t), F)
    return PicardResult(ts, iterates, residuals, rec)


# ---------------------------------------------------------------------------
# Fourier positivity
# ---------------------------------------------------------------------------

@dataclass
class SignReport:
    min_re: float
    max_re: float
    max_abs_im: float
    rtol: float = 1e-10

    @property
    def passed(self) -> bool:
        if self.max_re <= 0:
            return self.min_re >= 0 and self.max_abs_im == 0
        return self.min_re >= -self.rtol * self.max_re and self.max_abs_im <= self.rtol * self.max_re


class SignTracker:
    """Accumulates min Re u^ / max Re u^ / max |Im u^| over samples.

    Can be registered as a trajectory tracker so that nothing has to be stored.
    """

    def __init__(self):
        self.min_re = math.inf
        self.max_re = -math.inf
        self.max_im = 0.0

    def __call__(self, t, u, phi=None) -> float:
        c = np.asarray(u.coeffs)
        re = c.real
        self.min_re = min(self.min_re, float(re.min()))
        self.max_re = max(self.max_re, float(re.max()))
        if np.iscomplexobj(c):
            self.max_im = max(self.max_im, float(np.abs(c.imag).max()))
        return float(re.min())

    def report(self, rtol: float = 1e-10) -> SignReport:
        if self.min_re == math.inf:
            return SignReport(0.0, 0.0, 0.0, rtol)
        return SignReport(self.min_re, self.max_re, self.max_im, rtol)


def fourier_sign_monitor(traj: TrajectoryRecord, rtol: float = 1e-10) -> SignReport:
    """Min of Re u^ and max |Im u^| over all stored samples."""
    if traj.model is not None and traj.model.system not in ("TM", "TMprime"):
        raise ValueError("Fourier positivity is only claimed for TM and TMprime")
    tr = SignTracker()
    for t, u, phi in traj.snapshots():
        tr(t, u, phi)
    if "sign" in traj.traces and isinstance(traj.trackers.get("sign"), SignTracker):
        st = traj.trackers["sign"]
        tr.min_re = min(tr.min_re, st.min_re)
        tr.max_re = max(tr.max_re, st.max_re)
        tr.max_im = max(tr.max_im, st.max_im)
    return tr.report(rtol)
