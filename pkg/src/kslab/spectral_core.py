"""Grids, transforms and diagonal Fourier operators.

Two bases are supported:

* ``periodic``: complex exponentials on the torus ``[0, L)^d``.  Coefficients
  approximate the continuous Fourier transform
  ``f^(xi) = int f(x) exp(-i xi.x) dx`` so that a pointwise product corresponds
  to ``(2 pi)^-d`` times the convolution of coefficient arrays with grid
  measure ``dxi^d``.
* ``sine``: odd extension on the box ``(0, L)^d`` (homogeneous Dirichlet).
  Coefficients are plain sine-series amplitudes ``f(x) = sum b_j prod sin(j_i pi x_i / L)``.
"""

from __future__ import annotations

import struct
import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft as sfft

PERIODIC = "periodic"
SINE = "sine"

# coefficient magnitude above which a field counts as diverged
OVERFLOW = 1e30

_MAGIC = b"KSLF"
_VERSION = 1


class GridMismatch(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def fft_size_ok(n: int) -> bool:
    """Allowed axis sizes: 2^k or 3 * 2^k, at least 8."""
    return n >= 8 and (_is_pow2(n) or (n % 3 == 0 and _is_pow2(n // 3)))


@dataclass(frozen=True)
class Grid:
    """Uniform spectral grid.

    ``n`` may be a single int (same on every axis) or one entry per axis; each
    entry must be 2^k or 3 * 2^k and at least 8.  ``L`` is the period (periodic
    basis) or the box side (sine basis) and is shared by all axes, so the
    wavenumber spacing is isotropic.
    """

    d: int
    n: tuple[int, ...]
    L: float
    basis: str = PERIODIC

    def __init__(self, d: int, n: int | Sequence[int], L: float, basis: str = PERIODIC):
        if d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
        shape = (int(n),) * d if np.isscalar(n) else tuple(int(m) for m in n)
        if len(shape) != d:
            raise ValueError(f"need {d} axis sizes, got {shape}")
        for m in shape:
            if not fft_size_ok(m):
                raise ValueError(f"modes per axis must be 2^k or 3 * 2^k and >= 8, got {m}")
        if not L > 0:
            raise ValueError("L must be positive")
        if basis not in (PERIODIC, SINE):
            raise ValueError(f"unknown basis {basis!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "n", shape)
        object.__setattr__(self, "L", float(L))
        object.__setattr__(self, "basis", basis)

    # -- geometry ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def dxi(self) -> float:
        """Wavenumber spacing."""
        return 2 * np.pi / self.L if self.basis == PERIODIC else np.pi / self.L

    @property
    def cell_volume(self) -> float:
        """Quadrature weight of one physical node."""
        if self.basis == PERIODIC:
            return float(np.prod([self.L / m for m in self.n]))
        return float(np.prod([self.L / (m + 1) for m in self.n]))

    @property
    def volume(self) -> float:
        return self.L ** self.d

    def axis_modes(self, axis: int) -> np.ndarray:
        """Integer mode labels along one axis (FFT ordering for periodic)."""
        m = self.n[axis]
        if self.basis == PERIODIC:
            return np.fft.fftfreq(m, 1.0 / m).astype(np.int64)
        return np.arange(1, m + 1, dtype=np.int64)

    def axis_wavenumbers(self, axis: int) -> np.ndarray:
        return self.axis_modes(axis) * self.dxi

    def _bcast(self, v: np.ndarray, axis: int) -> np.ndarray:
        shp = [1] * self.d
        shp[axis] = -1
        return v.reshape(shp)

    @cached_property
    def k(self) -> tuple[np.ndarray, ...]:
        """Broadcastable wavenumber components."""
        return tuple(self._bcast(self.axis_wavenumbers(j), j) for j in range(self.d))

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for kj in self.k:
            out = out + kj ** 2
        return out

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep |m| <= (n-1)//3 on every axis."""
        mask = np.ones(self.shape, dtype=bool)
        for j in range(self.d):
            m = self.axis_modes(j)
            keep = np.abs(m) <= (self.n[j] - 1) // 3
            mask = mask & self._bcast(keep, j)
        return mask

    @property
    def dealias_cutoff(self) -> float:
        """Largest wavenumber per axis surviving the 2/3 rule (smallest over axes)."""
        return min((m - 1) // 3 for m in self.n) * self.dxi

    def nodes(self) -> tuple[np.ndarray, ...]:
        """Physical node coordinates (broadcastable)."""
        out = []
        for j, m in enumerate(self.n):
            if self.basis == PERIODIC:
                x = np.arange(m) * (self.L / m)
            else:
                x = np.arange(1, m + 1) * (self.L / (m + 1))
            out.append(self._bcast(x, j))
        return tuple(out)

    # -- raw transforms on arrays ------------------------------------------
    def forward(self, f: np.ndarray) -> np.ndarray:
        """Physical samples -> coefficients."""
        if self.basis == PERIODIC:
            return sfft.fftn(f) * self.cell_volume
        return sfft.dstn(np.asarray(f, dtype=float), type=1) / np.prod([m + 1 for m in self.n])

    def inverse(self, c: np.ndarray, real: bool = True) -> np.ndarray:
        """Coefficients -> physical samples."""
        if self.basis == PERIODIC:
            f = sfft.ifftn(c) / self.cell_volume
            return f.real if real else f
        return sfft.dstn(np.asarray(c, dtype=float), type=1) / 2 ** self.d

    def product(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Dealiased product of two coefficient arrays (real fields)."""
        m = self.dealias_mask
        fa = self.inverse(a * m)
        fb = fa if b is a else self.inverse(b * m)
        return self.forward(fa * fb) * m

    def __repr__(self) -> str:
        n = self.n[0] if len(set(self.n)) == 1 else self.n
        return f"Grid(d={self.d}, n={n}, L={self.L:g}, basis={self.basis!r})"


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable coefficient array on a grid.

    ``parity`` is only meaningful on the sine basis, where a gradient turns the
    sine factor of one axis into a cosine ('c').
    """

    grid: Grid
    coeffs: np.ndarray
    real: bool = True
    parity: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex if self.grid.basis == PERIODIC else float)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.parity is None:
            object.__setattr__(self, "parity", ("s",) * self.grid.d)

    # -- constructors -------------------------------------------------------
    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> "SpectralField":
        values = np.asarray(values)
        real = not np.iscomplexobj(values)
        return cls(grid, grid.forward(values), real=real)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "SpectralField":
        return cls.from_physical(grid, fn(*np.broadcast_arrays(*grid.nodes())))

    # -- views ----------------------------------------------------------------
    def to_physical(self) -> np.ndarray:
        g = self.grid
        if g.basis == PERIODIC:
            return g.inverse(self.coeffs, real=self.real)
        if all(p == "s" for p in self.parity):
            return g.inverse(self.coeffs)
        out = np.asarray(self.coeffs, dtype=float)
        for ax, p in enumerate(self.parity):
            if p == "s":
                out = sfft.dst(out, type=1, axis=ax) / 2
            else:
                pad = [(0, 0)] * g.d
                pad[ax] = (1, 1)
                # cos(j pi i/(n+1)) on interior nodes via a zero-padded DCT-I
                full = sfft.dct(np.pad(out, pad), type=1, axis=ax) / 2
                out = np.take(full, np.arange(1, g.n[ax] + 1), axis=ax)
        return out

    @property
    def diverged(self) -> bool:
        c = self.coeffs
        return not np.all(np.isfinite(c)) or float(np.max(np.abs(c), initial=0.0)) > OVERFLOW

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        if self.grid.basis != PERIODIC:
            return True
        c = self.coeffs
        flipped = np.conj(c[_negate_index(c.shape)])
        scale = max(float(np.max(np.abs(c), initial=0.0)), 1e-300)
        return float(np.max(np.abs(c - flipped), initial=0.0)) <= rtol * scale

    def with_coeffs(self, coeffs: np.ndarray, parity: tuple[str, ...] | None = None) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.real, parity or self.parity)

    # -- arithmetic -------------------------------------------------------------
    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise GridMismatch(f"{self.grid} vs {other.grid}")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, c: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * c, self.real and np.isreal(c), self.parity)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self * -1.0


def _negate_index(shape):
    """Index tuple mapping each FFT mode m to -m (mod n) along every axis."""
    idx = [np.r_[0, np.arange(m - 1, 0, -1)] for m in shape]
    return np.ix_(*idx)


# ---------------------------------------------------------------------------
# diagonal operators
# ---------------------------------------------------------------------------

def heat_semigroup(F: SpectralField, t: float, diffusivity: float = 1.0) -> SpectralField:
    """Apply exp(t * diffusivity * Laplacian)."""
    if t < 0:
        raise ValueError("backward heat flow is ill-posed (t < 0)")
    if diffusivity <= 0:
        raise ValueError("diffusivity must be positive")
    if t == 0:
        return F
    return F.with_coeffs(F.coeffs * np.exp(-diffusivity * t * F.grid.k2))


def laplacian(F: SpectralField) -> SpectralField:
    return F.with_coeffs(-F.grid.k2 * F.coeffs)


def inverse_laplacian(F: SpectralField) -> SpectralField:
    """Solve -Delta phi = F with the zero mode of phi set to 0."""
    k2 = F.grid.k2
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(k2 > 0, F.coeffs / np.where(k2 > 0, k2, 1.0), 0.0)
    return F.with_coeffs(c)


def gradient(F: SpectralField) -> list[SpectralField]:
    g = F.grid
    if g.basis == PERIODIC:
        return [F.with_coeffs(1j * kj * F.coeffs) for kj in g.k]
    out = []
    for ax, kj in enumerate(g.k):
        par = list(F.parity)
        sign = 1.0 if par[ax] == "s" else -1.0
        par[ax] = "c" if par[ax] == "s" else "s"
        out.append(F.with_coeffs(sign * kj * F.coeffs, tuple(par)))
    return out


def divergence(components: Sequence[SpectralField]) -> SpectralField:
    parts = []
    for ax, C in enumerate(components):
        parts.append(gradient(C)[ax])
    out = parts[0]
    for p in parts[1:]:
        if p.parity != out.parity:
            raise ValueError("divergence components have inconsistent parity")
        out = out + p
    return out


def dealiased_product(F: SpectralField, G: SpectralField) -> SpectralField:
    """Coefficients of the pointwise product with 2/3-rule truncation."""
    F._check(G)
    g = F.grid
    if g.basis == SINE and (set(F.parity) != {"s"} or set(G.parity) != {"s"}):
        raise ValueError("products on the sine basis need sine-parity factors")
    if g.basis == PERIODIC and not (F.real and G.real):
        m = g.dealias_mask
        fa = g.inverse(F.coeffs * m, real=False)
        fb = g.inverse(G.coeffs * m, real=False)
        return SpectralField(g, g.forward(fa * fb) * m, real=False)
    return F.with_coeffs(g.product(F.coeffs, G.coeffs))


def dealias(F: SpectralField) -> SpectralField:
    return F.with_coeffs(F.coeffs * F.grid.dealias_mask)


def sup_abs(F: SpectralField) -> float:
    return float(np.max(np.abs(F.to_physical()), initial=0.0))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def dumps_field(F: SpectralField) -> bytes:
    """Self-describing little-endian container.

    Layout: magic ``KSLF``, u16 version, u8 d, u8 basis (0 periodic, 1 sine),
    u8 real flag, d x u32 axis sizes, f64 L, then ``prod(n)`` complex128 values
    (re, im interleaved) in C order.
    """
    g = F.grid
    head = _MAGIC + struct.pack("<HBBB", _VERSION, g.d, 0 if g.basis == PERIODIC else 1, int(F.real))
    head += struct.pack("<" + "I" * g.d, *g.n) + struct.pack("<d", g.L)
    body = np.ascontiguousarray(F.coeffs, dtype="<c16").tobytes()
    return head + body


def loads_field(buf: bytes) -> SpectralField:
    if buf[:4] != _MAGIC:
        raise ValueError("not a field container")
    version, d, basis, real = struct.unpack_from("<HBBB", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    off = 9
    n = struct.unpack_from("<" + "I" * d, buf, off)
    off += 4 * d
    (L,) = struct.unpack_from("<d", buf, off)
    off += 8
    grid = Grid(d, n, L, PERIODIC if basis == 0 else SINE)
    c = np.frombuffer(buf, dtype="<c16", offset=off).reshape(n)
    if basis == 1:
        c = c.real
    return SpectralField(grid, c.copy(), real=bool(real))


def save_field(path, F: SpectralField) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_field(F))


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        return loads_field(fh.read())


def write_field_csv(path, F: SpectralField, max_modes: int = 1 << 16) -> None:
    """CSV rows ``xi_1..xi_d, re, im`` (intended for small grids)."""
    g = F.grid
    if g.size > max_modes:
        raise ValueError(f"grid has {g.size} modes; CSV export is limited to {max_modes}")
    ks = np.broadcast_arrays(*g.k)
    c = np.asarray(F.coeffs, dtype=complex)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"xi_{j + 1}" for j in range(g.d)] + ["re", "im"])
        for idx in np.ndindex(g.shape):
            w.writerow([repr(float(k[idx])) for k in ks] + [repr(c[idx].real), repr(c[idx].imag)])
