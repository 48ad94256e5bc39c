"""Norm functionals on fields and sampled trajectories."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .spectral_core import SpectralField, gradient, heat_semigroup

Tracker = Callable[[float, SpectralField, "SpectralField | None"], float]


@dataclass
class TrajectoryRecord:
    """Time samples of ``u`` (and ``phi``) plus running suprema of tracked quantities.

    Snapshots are optional per sample so that long 3-D runs can keep only the
    fields they need while trackers still see every sample.
    """

    model: Any = None
    times: list[float] = field(default_factory=list)
    u: dict[int, SpectralField] = field(default_factory=dict)
    phi: dict[int, SpectralField] = field(default_factory=dict)
    trackers: dict[str, Tracker] = field(default_factory=dict)
    traces: dict[str, list[float]] = field(default_factory=dict)
    sups: dict[str, float] = field(default_factory=dict)
    diverged: bool = False
    bracket: tuple[float, float] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def track(self, name: str, fn: Tracker) -> None:
        if self.times:
            raise RuntimeError("register trackers before appending samples")
        self.trackers[name] = fn
        self.traces[name] = []
        self.sups[name] = -math.inf

    def append(self, t: float, u: SpectralField, phi: SpectralField | None = None, keep: bool = True) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError(f"sample times must increase strictly ({t} after {self.times[-1]})")
        i = len(self.times)
        self.times.append(float(t))
        if keep:
            self.u[i] = u
            if phi is not None:
                self.phi[i] = phi
        for name, fn in self.trackers.items():
            v = float(fn(t, u, phi))
            self.traces[name].append(v)
            self.sups[name] = max(self.sups[name], v)

    def __len__(self) -> int:
        return len(self.times)

    def snapshots(self, positive_only: bool = False):
        """Yield ``(t, u, phi)`` for samples that kept their fields."""
        for i, t in enumerate(self.times):
            if i in self.u and (t > 0 or not positive_only):
                yield t, self.u[i], self.phi.get(i)

    def at(self, t: float, atol: float = 1e-12) -> tuple[SpectralField, SpectralField | None]:
        for i, s in enumerate(self.times):
            if abs(s - t) <= atol and i in self.u:
                return self.u[i], self.phi.get(i)
        raise KeyError(f"no stored snapshot at t={t}")

    def write_traces_csv(self, path) -> None:
        """One row per sample: ``t`` followed by every tracked quantity."""
        names = list(self.traces)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names])
            for i, t in enumerate(self.times):
                w.writerow([repr(t), *(repr(self.traces[n][i]) for n in names)])


def _check_p(p: float) -> None:
    if not p >= 1:
        raise ValueError(f"Lebesgue exponent must be >= 1, got {p}")


def lp_norm_values(values: np.ndarray, p: float, cell_volume: float) -> float:
    _check_p(p)
    a = np.abs(values)
    if math.isinf(p):
        return float(np.max(a, initial=0.0))
    m = float(np.max(a, initial=0.0))
    if m == 0.0:
        return 0.0
    # scaled to avoid overflow for large p
    return m * float(np.sum((a / m) ** p) * cell_volume) ** (1.0 / p)


def lp_norm(F: SpectralField, p: float) -> float:
    """Discrete L^p norm of the physical field (node quadrature)."""
    _check_p(p)
    return lp_norm_values(F.to_physical(), p, F.grid.cell_volume)


def grad_lp_norm(F: SpectralField, p: float) -> float:
    """L^p norm of the pointwise Euclidean length of the gradient."""
    comps = [G.to_physical() for G in gradient(F)]
    mag = np.sqrt(sum(np.abs(c) ** 2 for c in comps))
    return lp_norm_values(mag, p, F.grid.cell_volume)


def _weighted_sup(traj: TrajectoryRecord, weight_exp: float, value: Callable[[SpectralField], float]) -> float:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    best = 0.0
    seen = False
    for t, u, _ in traj.snapshots(positive_only=True):
        seen = True
        best = max(best, t ** weight_exp * value(u))
    if not seen:
        raise ValueError("trajectory has no stored snapshot with t > 0")
    return best


def triple_norm(traj: TrajectoryRecord, p: float, order: int = 0) -> float:
    """sup_t t^{1-d/2p} ||u(t)||_p (order 0) or t^{3/2-d/2p} ||grad u(t)||_p (order 1).

    Samples at t = 0 are skipped since the weights are singular or vanish there.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    _check_p(p)
    d = next(iter(traj.u.values())).grid.d
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    if order == 0:
        return _weighted_sup(traj, 1 - d * inv_p / 2, lambda u: lp_norm(u, p))
    if order == 1:
        return _weighted_sup(traj, 1.5 - d * inv_p / 2, lambda u: grad_lp_norm(u, p))
    raise ValueError("order must be 0 or 1")


def pm_norm(F: SpectralField, a: float) -> float:
    """max over grid modes of |xi|^a |F^(xi)|."""
    k = F.grid.kabs
    c = np.abs(F.coeffs)
    if a > 0:
        return float(np.max(k ** a * c, initial=0.0))
    nz = k > 0
    if np.any(c[~nz] != 0):
        warnings.warn("pm_norm with a <= 0: zero mode excluded from the supremum", RuntimeWarning, stacklevel=2)
    return float(np.max(k[nz] ** a * c[nz], initial=0.0))


def ya_norm(traj: TrajectoryRecord, a: float) -> float:
    """sup over samples (t > 0) and modes of t^{1+(a-d)/2} |xi|^a |u^(xi,t)|."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    d = next(iter(traj.u.values())).grid.d
    return _weighted_sup(traj, 1 + (a - d) / 2, lambda u: pm_norm(u, a))


def ya_distance(times, us, vs, a: float) -> float:
    """𝒴_a norm of the difference of two sampled trajectories on common times."""
    best = 0.0
    for t, u, v in zip(times, us, vs):
        if t <= 0:
            continue
        d = u.grid.d
        best = max(best, t ** (1 + (a - d) / 2) * pm_norm(u - v, a))
    return best


def heat_ladder(grid, t_min: float | None = None, t_max: float | None = None, ratio: float = 4.0) -> np.ndarray:
    """Geometric times ``t_min * ratio^j`` covering [t_min, t_max].

    The default start resolves the finest grid mode: t_min = 10^-2 / |xi|_max^2.
    """
    if t_min is None:
        t_min = 1e-2 / float(np.max(grid.kabs)) ** 2
    if t_max is None:
        t_max = grid.L ** 2
    J = int(math.ceil(math.log(t_max / t_min) / math.log(ratio)))
    return t_min * ratio ** np.arange(J + 1)


def besov_norm_heat(F: SpectralField, p: float, s: float, t_min: float | None = None,
                    t_max: float | None = None, ratio: float = 4.0, refine: bool = True) -> float:
    """Heat-extension Besov norm sup_t t^{s/2} ||e^{t Delta} F||_p.

    The supremum is taken over a geometric ladder and then polished by a
    bounded 1-D search in log t around the best ladder point.
    """
    if not s > 0:
        raise ValueError("smoothness deficit s must be positive")
    _check_p(p)
    ladder = heat_ladder(F.grid, t_min, t_max, ratio)

    def g(t):
        return t ** (s / 2) * lp_norm(heat_semigroup(F, t), p)

    vals = np.array([g(t) for t in ladder])
    j = int(np.argmax(vals))
    best = float(vals[j])
    if not refine or best == 0.0:
        return best
    lo = math.log(ladder[max(j - 1, 0)])
    hi = math.log(ladder[min(j + 1, len(ladder) - 1)])
    if hi > lo:
        res = minimize_scalar(lambda x: -g(math.exp(x)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6})
        best = max(best, -float(res.fun))
    return best
