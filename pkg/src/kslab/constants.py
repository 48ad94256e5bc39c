"""Explicit constants and parameter-admissibility regions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma, gammaln


class InadmissibleParameters(ValueError):
    pass


@dataclass(frozen=True)
class Calibration:
    """Constants that only exist as 'some constant depending on d'.

    They default to 1 so that every threshold is reported in calibrated units;
    fitted values are substituted explicitly by the harness.
    """

    kappa_d: float = 1.0        # global existence for small pseudomeasure data
    kappa_blowup: float = 1.0   # blowup size condition for TM
    kappa_prime: float = 1.0    # B' bilinear bound
    kappa_dprime: float = 1.0   # B'' bilinear bound
    C_d: float = 1.0            # TM' blowup condition
    K: float = 1.0              # TM' cascade recursion

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def star(x: float) -> float:
    """x_* = min{x, 1}."""
    return min(x, 1.0)


@dataclass(frozen=True)
class ParamPoint:
    d: int
    a: float | None = None
    b: float | None = None
    p: float | None = None
    q: float | None = None
    q1: float | None = None
    q2: float | None = None
    gamma: float | None = None
    tau: float = 1.0


# ---------------------------------------------------------------------------
# Riesz potentials and the time-integral lemma
# ---------------------------------------------------------------------------

def riesz_valid(alpha: float, beta: float, d: int) -> bool:
    return 0 < alpha < d and 0 < beta < d and alpha + beta > d


def riesz_convolution_constant(alpha: float, beta: float, d: int) -> float:
    """C with |x|^-alpha * |x|^-beta = C |x|^{d - alpha - beta}."""
    if not riesz_valid(alpha, beta, d):
        raise InadmissibleParameters(f"need 0 < alpha, beta < d < alpha + beta; got ({alpha}, {beta}, {d})")
    num = gamma((d - alpha) / 2) * gamma((d - beta) / 2) * gamma((alpha + beta - d) / 2)
    den = gamma(alpha / 2) * gamma(beta / 2) * gamma(d - (alpha + beta) / 2)
    return float(math.pi ** (d / 2) * num / den)


def riesz_radial_quadrature(alpha: float, beta: float, d: int) -> float:
    """Independent evaluation of the Riesz constant by direct quadrature.

    Computes (|.|^-alpha * |.|^-beta)(e_1) for d = 2 or 3 by integrating in
    polar/spherical coordinates around the origin; the singularities at 0
    and e_1 are integrable and handled by interval splitting.
    """
    if not riesz_valid(alpha, beta, d):
        raise InadmissibleParameters("invalid Riesz exponents")
    if d == 3:
        # y = r*omega, |e1 - y|^2 = 1 + r^2 - 2 r c ; the angular integral is explicit
        def angular(r):
            # int_{-1}^{1} (1 + r^2 - 2 r c)^{-beta/2} dc * 2 pi
            e = 1 - beta / 2
            hi, lo = (1 + r) ** 2, (1 - r) ** 2
            if abs(e) < 1e-14:
                val = (math.log(hi) - math.log(lo)) / (2 * r)
            else:
                val = (hi ** e - lo ** e) / (2 * r * e)
            return 2 * math.pi * val

        f = lambda r: r ** (2 - alpha) * angular(r)
        parts = [(0, 0.5), (0.5, 1.0), (1.0, 2.0)]
        total = sum(integrate.quad(f, a, b, limit=400)[0] for a, b in parts)
        tail = integrate.quad(f, 2.0, np.inf, limit=400)[0]
        return total + tail
    if d == 2:
        def inner(r):
            g = lambda th: (1 + r * r - 2 * r * math.cos(th)) ** (-beta / 2)
            return 2 * integrate.quad(g, 0, math.pi, points=[0.0], limit=200)[0]
        f = lambda r: r ** (1 - alpha) * inner(r)
        parts = [(0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, np.inf)]
        return sum(integrate.quad(f, a, b, limit=400)[0] for a, b in parts)
    raise ValueError("radial quadrature oracle implemented for d = 2, 3")


def _check_integral_args(s, A, delta, b):
    if not (s > 0 and A > 0 and delta > 0 and 0 <= b <= 1):
        raise ValueError(f"need s, A, delta > 0 and 0 <= b <= 1; got s={s}, A={A}, delta={delta}, b={b}")


def integral_bound(s: float, A: float, delta: float, b: float) -> float:
    """4 delta_*^{-1} A^{-b} s^{delta - b}."""
    _check_integral_args(s, A, delta, b)
    return 4.0 / star(delta) * A ** (-b) * s ** (delta - b)


def integral_exact(s: float, A: float, delta: float) -> float:
    """int_0^s e^{-(s - sigma) A} sigma^{delta - 1} dsigma by weighted adaptive quadrature."""
    _check_integral_args(s, A, delta, 0.0)
    val, _ = integrate.quad(lambda x: math.exp(-(s - x) * A), 0.0, s, weight="alg",
                            wvar=(delta - 1.0, 0.0), limit=200)
    return val


def check_integral_lemma(s: float, A: float, delta: float, b: float) -> tuple[float, float, bool]:
    lhs = integral_exact(s, A, delta)
    rhs = integral_bound(s, A, delta, b)
    return lhs, rhs, lhs <= rhs * (1 + 1e-12)


# ---------------------------------------------------------------------------
# admissibility regions
# ---------------------------------------------------------------------------

def admissible_tm(a: float, b: float, d: int) -> bool:
    """Parameter region for the B' bilinear estimate in Y_a."""
    if not 0 < b <= 1:
        return False
    if d == 3:
        return 3 - 2 * b <= a and 2.5 - b < a < 3 - b
    if d >= 4:
        return d - 2 * b <= a < d - b and a != 2
    return False


def tm_raw_conditions(a: float, b: float, d: int) -> bool:
    """Unreduced list of requirements behind :func:`admissible_tm` (used as a cross-check)."""
    g = -b + 1 + (d - a) / 2
    return (0 < a < d and 0 < b <= 1 and 0 < a + 2 * b - 2 < d and 2 * a + 2 * b - 2 > d
            and d - a - b > 0 and 0 <= g <= 1)


def admissible_tmprime(a: float, b: float, d: int) -> bool:
    """Parameter region for the B'' bilinear estimate in Y_a."""
    return (0.5 < b <= 1 and d / 2 - 2 * b + 2 < a < d + 1 - 2 * b and 2 + d - 4 * b <= a < d)


def tmprime_raw_conditions(a: float, b: float, d: int) -> bool:
    g = 2 + d / 2 - a / 2 - 2 * b
    return (0 <= b <= 1 and d - a > 0 and 0 < a + 2 * b - 2 < d and 2 * a + 4 * b - 4 > d
            and 1 + d - a - 2 * b > 0 and 0 <= g <= 1 and b > 0.5)


def admissible_besov(p: float, q: float, q1: float, q2: float, d: int) -> bool:
    """Common exponent range for the three bilinear estimates in F_p (d >= 3, d/2 < p < d)."""
    if d < 3 or not d / 2 < p < d:
        return False
    lo = max(1 / p - 1 / d, 2 / d - 1 / p)
    hi = min(1 / d, 1 - 1 / p)
    return all(lo < 1 / r < hi for r in (q, q1, q2))


def besov_gamma(p: float, q: float, d: int) -> float:
    """Exponent of tau in the Besov small-data condition."""
    return 0.5 - d / 2 * (1 / p - 1 / q)


def besov_size_threshold(p: float, q: float, d: int, tau: float, C: float = 1.0) -> float:
    """C_{q,d} tau^gamma (C_{q,d} is a calibration input)."""
    if d < 3 or not 2 * d / 3 < p < d or not 2 / d - 1 / p < 1 / q < 1 / d:
        raise InadmissibleParameters(f"Besov existence needs 2d/3 < p < d and 2/d - 1/p < 1/q < 1/d")
    return C * tau ** besov_gamma(p, q, d)


# ---------------------------------------------------------------------------
# bilinear constants
# ---------------------------------------------------------------------------

def kprime(a: float, b: float, d: int) -> float:
    if not admissible_tm(a, b, d):
        raise InadmissibleParameters(f"(a, b, d) = ({a}, {b}, {d}) outside the TM region")
    C = riesz_convolution_constant(a, a - 2 + 2 * b, d)
    return 32 * C / ((2 * math.pi) ** d * star(d - a) * star(d - a - b))


def kdoubleprime(a: float, b: float, d: int) -> float:
    if not admissible_tmprime(a, b, d):
        raise InadmissibleParameters(f"(a, b, d) = ({a}, {b}, {d}) outside the TM' region")
    al = a + 2 * b - 2
    C = riesz_convolution_constant(al, al, d)
    return 256 * C / ((2 * math.pi) ** d * star(d - a) ** 2 * star(1 + d - a - 2 * b))


def kprime_diagonal(b: float, d: int) -> float:
    """K' along the choice a = d - 4b/3."""
    return kprime(d - 4 * b / 3, b, d)


def kdoubleprime_diagonal(b: float, d: int) -> float:
    """K'' along the choice a = d + 4/3 - 8b/3."""
    return kdoubleprime(d + 4 / 3 - 8 * b / 3, b, d)


def loglog_slope(xs, ys) -> float:
    xs, ys = np.log(np.asarray(xs)), np.log(np.asarray(ys))
    return float(np.polyfit(xs, ys, 1)[0])


# ---------------------------------------------------------------------------
# size thresholds (in calibrated units)
# ---------------------------------------------------------------------------

def global_existence_threshold(tau: float, d: int = 3, cal: Calibration | None = None) -> float:
    """kappa_d max{1, 27 tau / (e ln tau)^3}; the second branch is used for tau >= e^3."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    k = (cal or Calibration()).kappa_d
    if tau < math.e ** 3:
        return k
    return k * max(1.0, 27 * tau / (math.e * math.log(tau)) ** 3)


def blowup_threshold_tm(tau: float, cal: Calibration | None = None) -> float:
    """kappa_d e^{1/tau} tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return (cal or Calibration()).kappa_blowup * math.exp(1 / tau) * tau


def blowup_threshold_tmprime(tau: float, cal: Calibration | None = None) -> float:
    """16 C_d K tau^2 (needs tau >= 2)."""
    if tau < 2:
        raise ValueError("the TM' blowup condition is only established for tau >= 2")
    c = cal or Calibration()
    return 16 * c.C_d * c.K * tau ** 2


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(1 + d / 2)


def cascade_Kd(d: int) -> float:
    """K_d = 1 / (8^d pi^{d/2} Gamma(1 + d/2)) = omega_d 4^-d (2 pi)^-d."""
    return float(math.exp(-(d * math.log(8) + d / 2 * math.log(math.pi) + gammaln(1 + d / 2))))


# ---------------------------------------------------------------------------
# CSV dump
# ---------------------------------------------------------------------------

def parse_range(spec: str) -> tuple[str, np.ndarray]:
    """'a:1.5:3:0.05' -> ('a', array from 1.5 to 3 inclusive)."""
    name, lo, hi, stepv = spec.split(":")
    lo, hi, stepv = float(lo), float(hi), float(stepv)
    n = int(round((hi - lo) / stepv))
    return name, np.round(lo + stepv * np.arange(n + 1), 12)


def dump_table(d: int, a_values, b_values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["d", "a", "b", "admissible_tm", "admissible_tmprime", "kprime", "kdoubleprime"])
    for a in a_values:
        for b in b_values:
            a, b = float(a), float(b)
            tm, tmp = admissible_tm(a, b, d), admissible_tmprime(a, b, d)
            kp = repr(kprime(a, b, d)) if tm else ""
            kpp = repr(kdoubleprime(a, b, d)) if tmp else ""
            w.writerow([d, repr(a), repr(b), int(tm), int(tmp), kp, kpp])
    return buf.getvalue()
