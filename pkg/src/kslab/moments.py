"""First-eigenfunction moments of TM' on a Dirichlet box and the blowup certificate."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .norms import TrajectoryRecord
from .simulator import ModelSpec, StepControl, integrate
from .spectral_core import SINE, Grid, SpectralField, laplacian


class UnsupportedParameters(ValueError):
    pass


@dataclass(frozen=True)
class DirichletDomain:
    """Box (0, pi)^d with the sine grid; psi = 2^-d prod sin x_j, lambda = d."""

    d: int = 1
    n: int = 256

    @property
    def grid(self) -> Grid:
        return Grid(self.d, self.n, math.pi, basis=SINE)

    @property
    def lam(self) -> float:
        return float(self.d)

    @property
    def psi(self) -> SpectralField:
        g = self.grid
        c = np.zeros(g.shape)
        c[(0,) * self.d] = 2.0 ** (-self.d)
        return SpectralField(g, c)

    @property
    def weight(self) -> float:
        """int psi f = weight * (coefficient of the lowest mode of f)."""
        return (math.pi / 4) ** self.d

    def moment(self, F: SpectralField) -> float:
        return self.weight * float(np.asarray(F.coeffs)[(0,) * self.d].real)

    def moment_of_values(self, values: np.ndarray) -> float:
        """int psi f for a field only known at the nodes (spectrally exact projection)."""
        c = self.grid.forward(values)
        return self.weight * float(c[(0,) * self.d])

    def sine_data(self, moment_value: float) -> SpectralField:
        """Multiple of the first mode with the given psi-moment."""
        g = self.grid
        c = np.zeros(g.shape)
        c[(0,) * self.d] = moment_value / self.weight
        return SpectralField(g, c)


def simulate_dirichlet_tmprime(u0: SpectralField, phi0: SpectralField, tau: float, horizon: float,
                               sample_dt: float = 1e-3, control: StepControl | None = None,
                               keep=True) -> TrajectoryRecord:
    g = u0.grid
    if g.basis != SINE:
        raise ValueError("Dirichlet runs use the sine grid")
    model = ModelSpec("TMprime", g, tau)
    m = int(round(horizon / sample_dt))
    times = np.arange(1, m + 1) * sample_dt
    ctl = control or StepControl(rtol=1e-8, dt0=1e-4, dt_max=sample_dt)
    rec = integrate(model, u0, horizon, phi0=phi0, sample_times=times, control=ctl, keep=keep)
    return rec


def lap_square_moment(phi: SpectralField, domain: DirichletDomain) -> float:
    """int psi (Delta phi)^2."""
    lp = laplacian(phi).to_physical()
    return domain.moment_of_values(lp * lp)


@dataclass
class MomentTrace:
    times: np.ndarray
    J: np.ndarray
    I: np.ndarray
    X: np.ndarray
    N: np.ndarray                  # int psi (Delta phi)^2
    alpha: float
    tau: float
    lam: float
    djr_residual: np.ndarray       # J' + (lambda/tau) J - I/tau at interior samples
    identity_residual: np.ndarray  # tau J'' + lambda(tau+1) J' + lambda^2 J - N
    ineq_residual: np.ndarray      # J'' + lambda(1+1/tau) J' + (lambda^2/tau)(J - J^2)
    dX: np.ndarray
    min_u: np.ndarray
    min_phi: np.ndarray
    bracket: tuple[float, float] | None = None

    def relative(self, name: str) -> float:
        """max |residual| relative to its natural scale."""
        r = getattr(self, name)
        if r.size == 0:
            return 0.0
        if name == "djr_residual":
            scale = max(np.max(np.abs(self.I)) / self.tau, 1e-300)
        else:
            scale = max(np.max(np.abs(self.N[1:-1])), 1e-300)
        return float(np.max(np.abs(r)) / scale)


def moment_trace(traj: TrajectoryRecord, domain: DirichletDomain, tau: float,
                 t_max: float | None = None) -> MomentTrace:
    """Moments at the stored samples; derivatives by centered differences.

    ``t_max`` restricts the trace (e.g. to stay away from the divergence).
    """
    rows = [(t, u, p) for t, u, p in traj.snapshots() if t_max is None or t <= t_max]
    if len(rows) < 3:
        raise ValueError("need at least three samples")
    t = np.array([r[0] for r in rows])
    J = np.array([domain.moment(p) for _, _, p in rows])
    I = np.array([domain.moment(u) for _, u, _ in rows])
    N = np.array([lap_square_moment(p, domain) for _, _, p in rows])
    lam = domain.lam
    alpha = lam / 2 * (1 + 1 / tau)
    X = np.exp(alpha * t) * J
    h = np.diff(t)
    if not np.allclose(h, h[0], rtol=1e-9):
        raise ValueError("moment derivatives need uniformly spaced samples")
    h = h[0]
    dJ = (J[2:] - J[:-2]) / (2 * h)
    ddJ = (J[2:] - 2 * J[1:-1] + J[:-2]) / h ** 2
    Jm, Im, Nm = J[1:-1], I[1:-1], N[1:-1]
    djr = dJ + lam / tau * Jm - Im / tau
    ident = tau * ddJ + lam * (tau + 1) * dJ + lam ** 2 * Jm - Nm
    ineq = ddJ + lam * (1 + 1 / tau) * dJ + lam ** 2 / tau * (Jm - Jm ** 2)
    dX = (X[2:] - X[:-2]) / (2 * h)
    min_u = np.array([u.to_physical().min() for _, u, _ in rows])
    min_p = np.array([p.to_physical().min() for _, _, p in rows])
    return MomentTrace(t, J, I, X, N, alpha, tau, lam, djr, ident, ineq, dX, min_u, min_p,
                       traj.bracket)


@dataclass
class JensenReport:
    worst_margin: float
    violations: int
    samples: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def jensen_pair(phi: SpectralField, domain: DirichletDomain) -> tuple[float, float]:
    """(int psi (Delta phi)^2, lambda^2 J^2)."""
    J = domain.moment(phi)
    return lap_square_moment(phi, domain), domain.lam ** 2 * J ** 2


def jensen_check(traj: TrajectoryRecord, domain: DirichletDomain, rtol: float = 1e-10) -> JensenReport:
    worst, bad, n = math.inf, 0, 0
    for _, _, p in traj.snapshots():
        if p is None:
            continue
        lhs, rhs = jensen_pair(p, domain)
        tol = rtol * max(abs(lhs), abs(rhs), 1e-300)
        m = lhs - rhs
        worst = min(worst, m / max(abs(rhs), 1e-300) if rhs else m)
        bad += m < -tol
        n += 1
    return JensenReport(worst, int(bad), n)


@dataclass
class MomentCertificate:
    J0: float
    I0: float
    tau: float
    lam: float
    alpha: float
    data_condition: bool        # J0 >= 3 tau / 2 and I0 >= (3/2) lambda tau^2
    start_condition: bool       # X(0) = J0 > 3 tau / 2
    derivative_condition: bool  # X'(0)^2 - (2/3)(lambda^2/tau) X(0)^3 >= 0
    sufficient_pair: bool       # J0 >= 3 tau / 2 and I0 >= (2/3) lambda J0^2
    t_max: float | None

    @property
    def void(self) -> bool:
        return self.t_max is None

    def to_json(self) -> str:
        d = asdict(self)
        d["void"] = self.void
        return json.dumps(d, indent=2, sort_keys=True)


def certificate_bound(t, J0: float, tau: float, lam: float) -> np.ndarray:
    """Right side of the upper bound for X(t)^{-1/2}."""
    alpha = lam / 2 * (1 + 1 / tau)
    c = math.sqrt(2 / (3 * tau)) * 2 / (1 + 1 / tau)
    return 1 / math.sqrt(J0) + c * (np.exp(-alpha / 2 * np.asarray(t)) - 1)


def blowup_certificate(J0: float, I0: float, tau: float, lam: float) -> MomentCertificate:
    if tau < 2:
        raise UnsupportedParameters("the moment certificate needs tau >= 2")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    alpha = lam / 2 * (1 + 1 / tau)
    dX0 = lam / 2 * (1 - 1 / tau) * J0 + I0 / tau
    data = J0 >= 1.5 * tau and I0 >= 1.5 * lam * tau ** 2
    start = J0 > 1.5 * tau
    deriv = dX0 >= 0 and dX0 ** 2 - 2 / 3 * lam ** 2 / tau * J0 ** 3 >= 0
    pair = J0 >= 1.5 * tau and I0 >= 2 / 3 * lam * J0 ** 2
    t_max = None
    if start and deriv:
        c = math.sqrt(2 / (3 * tau)) * 2 / (1 + 1 / tau)
        s = 1 - 1 / (c * math.sqrt(J0))
        if s > 0:
            t_max = -2 / alpha * math.log(s)
    return MomentCertificate(J0, I0, tau, lam, alpha, data, start, deriv, pair, t_max)


@dataclass
class CrossCheck:
    ineq_worst: float
    ineq_tol: float
    diverged: bool
    bracket: tuple[float, float] | None
    t_max: float | None
    dX_min: float
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (self.t_max is not None and self.diverged and self.bracket is not None
                and self.bracket[1] <= self.t_max and self.ineq_worst >= -self.ineq_tol
                and self.dX_min >= -self.ineq_tol)


def certify_against_simulation(trace: MomentTrace, cert: MomentCertificate, tol: float = 1e-4) -> CrossCheck:
    """Differential inequality along the run and divergence before the certified time.

    Both residuals are measured relative to the size of the nonlinear moment.
    """
    scale = max(float(np.max(np.abs(trace.N[1:-1]))) / trace.tau, 1e-300)
    worst = float(np.min(trace.ineq_residual)) / scale if trace.ineq_residual.size else 0.0
    dxs = max(float(np.max(np.abs(trace.dX))), 1e-300)
    dX_min = float(np.min(trace.dX)) / dxs
    out = CrossCheck(worst, tol, trace.bracket is not None, trace.bracket, cert.t_max, dX_min)
    if cert.void:
        out.notes.append("certificate void: no claim")
    return out
