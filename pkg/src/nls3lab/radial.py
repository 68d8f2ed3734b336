"""Radial discretization of R^4.

Fields are sampled at cell centres of a mapped coordinate ``s``.  The
Laplacian is assembled in finite-volume form, ``-Delta = W^{-1} S`` with ``W``
the (diagonal) cell volumes and ``S`` a symmetric tridiagonal stiffness
matrix, so it is symmetric for the quadrature inner product and

    <f, S g> = int grad f . grad g dx

holds exactly at the discrete level.  The flux through the face at the
origin vanishes because it carries a factor ``r^3``; that is the regularity
condition for the radial sector.  A homogeneous Dirichlet value sits at the
outer boundary point.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

TWO_PI2 = 2.0 * np.pi**2
BALL_FACTOR = np.pi**2 / 2.0  # |B_rho| = BALL_FACTOR * rho**4


class Mapping(str, Enum):
    UNIFORM = "uniform"
    STRETCHED = "algebraic-stretch"


class DomainOverflowWarning(UserWarning):
    """A resampled field had non-negligible mass outside the grid."""


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Cell-centred radial grid on ``[0, r_max]`` (``r_max`` may be ``inf``).

    Attributes
    ----------
    n : int
        Number of nodes.
    r : ndarray
        Node radii, strictly increasing, ``r[0] > 0``.
    mapping : Mapping
    L : float
        Stretch length (``r = L s / (1 - s)``); unused for uniform grids.
    r_max : float
        Location of the Dirichlet point.
    quad_w : ndarray
        Effective cell volumes.  They are fixed by requiring the discrete
        Laplacian to reproduce ``Delta |x|^2 = 8`` exactly (a discrete
        divergence theorem for the field ``x``); away from the outermost cell
        they agree with the geometric cell volumes to ``O(h^2)``.  This
        removes the first-order truncation error a plain finite-volume
        scheme has in the cells touching the origin.
    """

    n: int
    r: np.ndarray
    mapping: Mapping
    L: float
    r_max: float
    quad_w: np.ndarray
    s: np.ndarray = field(repr=False)
    h: float = field(repr=False)
    s_bound: float = field(repr=False)
    # link coefficients: link i couples node i to node i+1 (last: to boundary)
    kappa: np.ndarray = field(repr=False)
    r_faces: np.ndarray = field(repr=False)

    # -- coordinate map -------------------------------------------------
    def r_of_s(self, s):
        s = np.asarray(s, dtype=float)
        if self.mapping is Mapping.UNIFORM:
            return self.r_max * s
        with np.errstate(divide="ignore"):
            return self.L * s / (1.0 - s)

    def s_of_r(self, r):
        r = np.asarray(r, dtype=float)
        if self.mapping is Mapping.UNIFORM:
            return r / self.r_max
        return r / (self.L + r)

    def drds(self, s):
        s = np.asarray(s, dtype=float)
        if self.mapping is Mapping.UNIFORM:
            return np.full_like(s, self.r_max)
        return self.L / (1.0 - s) ** 2

    # -- discrete operators ---------------------------------------------
    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Symmetric ``S`` with ``f^T S g = int grad f . grad g``."""
        k = self.kappa
        main = k.copy()
        main[1:] += k[:-1]
        return sp.diags([-k[:-1], main, -k[:-1]], [-1, 0, 1], format="csr")

    @cached_property
    def r_links(self) -> np.ndarray:
        """Radii of the link midpoints carrying ``kappa`` (last one may be ``inf``)."""
        s_link = (np.arange(1, self.n + 1)) * self.h
        if not np.isclose(s_link[-1], self.s_bound):
            s_link[-1] = 0.5 * (self.s[-1] + self.s_bound)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.r_of_s(np.minimum(s_link, self.s_bound))

    def zeros(self, dtype=complex):
        return np.zeros(self.n, dtype=dtype)

    def describe(self) -> dict:
        return {"n": self.n, "r_max": self.r_max, "mapping": self.mapping.value, "L": self.L}

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.r).tobytes())
        h.update(np.ascontiguousarray(self.quad_w).tobytes())
        return h.hexdigest()[:16]


def make_grid(r_max: float = np.inf, n: int = 2048, mapping="algebraic-stretch", L: float = 8.0) -> RadialGrid:
    """Build a radial grid.

    For the stretched map ``r = L s / (1 - s)`` an infinite ``r_max`` puts
    the Dirichlet point at ``s = 1`` (spatial infinity), which removes the
    truncation error for fields decaying like ``|x|^-2``.
    """
    mapping = Mapping(mapping)
    if not n >= 16:
        raise ValueError(f"need n >= 16, got {n}")
    if not r_max > 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    if mapping is Mapping.UNIFORM and not np.isfinite(r_max):
        raise ValueError("uniform grids need a finite r_max")
    if mapping is Mapping.STRETCHED and not L > 0:
        raise ValueError(f"stretch length must be positive, got {L}")

    if mapping is Mapping.UNIFORM:
        s_b = 1.0
        h = 1.0 / n
        L = float("nan")
    elif np.isfinite(r_max):
        s_b = r_max / (L + r_max)
        h = s_b / n
    else:
        s_b = 1.0
        h = 1.0 / (n + 0.5)

    s = (np.arange(1, n + 1) - 0.5) * h
    s_faces = np.arange(0, n + 1) * h
    proto = RadialGrid(n, None, mapping, float(L), float(r_max), None, s, h, s_b, None, None)
    r = proto.r_of_s(s)
    r_faces = proto.r_of_s(s_faces)

    # link positions and lengths in s
    s_link = s_faces[1:].copy()
    d_link = np.full(n, h)
    if np.isclose(s_faces[-1], s_b):
        d_link[-1] = s_b - s[-1]
    else:
        # Dirichlet point lies beyond the last face: link node n -> s_b
        s_link[-1] = 0.5 * (s[-1] + s_b)
        d_link[-1] = s_b - s[-1]
    r_link = proto.r_of_s(s_link)
    kappa = TWO_PI2 * r_link**3 / proto.drds(s_link) / d_link

    quad_w = BALL_FACTOR * np.diff(r_faces**4)
    r2 = r**2
    flux = kappa[:-1] * np.diff(r2) / 8.0
    quad_w[:-1] = flux
    quad_w[1:-1] -= flux[:-1]
    if np.any(quad_w <= 0):  # pragma: no cover - mapping guarantees positivity
        raise ValueError("grid produced non-positive quadrature weights")

    return RadialGrid(n, r, mapping, float(L), float(r_max), quad_w, s, h, s_b, kappa, r_faces)


def integrate(grid: RadialGrid, f, radius: float | None = None) -> float:
    """Integrate radial samples over R^4 (or over the ball of ``radius``)."""
    if isinstance(f, RadialField):
        f = f.values
    f = np.asarray(f)
    if f.shape[-1] != grid.n:
        raise ValueError(f"expected {grid.n} samples, got {f.shape[-1]}")
    w = grid.quad_w
    if radius is not None:
        # geometric cell volumes, clipped to the ball
        lo = grid.r_faces[:-1]
        hi = np.minimum(grid.r_faces[1:], radius)
        w = BALL_FACTOR * np.clip(hi**4 - lo**4, 0.0, None)
    return f @ w


def inner_l2(grid: RadialGrid, f, g) -> float:
    """Real L^2 inner product ``Re int f conj(g)``."""
    return float(np.real(np.sum(grid.quad_w * f * np.conj(g))))


def inner_h1(grid: RadialGrid, f, g) -> float:
    """Real Hdot^1 inner product ``Re int grad f . conj(grad g)``."""
    S = grid.stiffness
    return float(np.real(np.vdot(g, S @ f)))


def laplacian(grid: RadialGrid, f, sector: int | None = None):
    """Radial Laplacian in sector ``l``: f'' + 3 f'/r - l(l+2) f / r^2.

    Accepts a ``RadialField`` (returns one) or raw samples (returns an array,
    sector 0 unless given).
    """
    if isinstance(f, RadialField):
        sec = f.sector if sector is None else sector
        return RadialField(grid, laplacian(grid, f.values, sec), sec)
    sector = 0 if sector is None else sector
    if sector not in (0, 1):
        raise ValueError(f"unsupported angular sector {sector}")
    f = np.asarray(f)
    if f.shape[-1] != grid.n:
        raise ValueError(f"expected {grid.n} samples, got {f.shape[-1]}")
    if sector == 1:
        # f = r g with g even: Delta_1 f = r Delta_6 g, a regular operator at the origin
        S6, V6 = _six_dim_operator(grid)
        return grid.r * (-(S6 @ (f / grid.r).T).T / V6)
    return -(grid.stiffness @ f.T).T / grid.quad_w


def _six_dim_operator(grid: RadialGrid):
    """Flux form of the radial Laplacian in R^6 on the links of ``grid``.

    Cell volumes are fixed (as for the 4D weights) so that ``|x|^2`` is
    mapped to 12 exactly away from the outermost cell.
    """
    s_link = np.arange(1, grid.n + 1) * grid.h
    d_link = np.full(grid.n, grid.h)
    if not np.isclose(s_link[-1], grid.s_bound):
        s_link[-1] = 0.5 * (grid.s[-1] + grid.s_bound)
    d_link[-1] = grid.s_bound - grid.s[-1]
    r_link = grid.r_of_s(s_link)
    k = r_link**5 / grid.drds(s_link) / d_link
    main = k.copy()
    main[1:] += k[:-1]
    S6 = sp.diags([-k[:-1], main, -k[:-1]], [-1, 0, 1], format="csr")
    V = np.diff(grid.r_faces**6) / 6.0
    flux = k[:-1] * np.diff(grid.r**2) / 12.0
    V[:-1] = flux
    V[1:-1] -= flux[:-1]
    return S6, V


def gradient_sq(grid: RadialGrid, f, sector: int | None = None) -> np.ndarray:
    """Pointwise ``|f'(r)|^2`` by centred differences in ``s``.

    One-sided at the outer edge, even reflection at the origin for ``l = 0``
    and odd reflection for ``l = 1``.
    """
    if isinstance(f, RadialField):
        sector = f.sector if sector is None else sector
        f = f.values
    sector = 0 if sector is None else sector
    if sector not in (0, 1):
        raise ValueError(f"unsupported angular sector {sector}")
    f = np.asarray(f)
    if f.shape[-1] != grid.n:
        raise ValueError(f"expected {grid.n} samples, got {f.shape[-1]}")
    ghost = f[..., :1] if sector == 0 else -f[..., :1]
    ext = np.concatenate([ghost, f, np.zeros_like(f[..., :1])], axis=-1)
    ds = np.empty(grid.n)
    ds[:] = 2 * grid.h
    df = ext[..., 2:] - ext[..., :-2]
    # last node: boundary value may be off the uniform s lattice
    d_last = grid.s_bound - grid.s[-1]
    df[..., -1] = (0.0 - f[..., -2]) if np.isclose(d_last, grid.h) else (
        # quadratic through s_{n-1}, s_n, s_b
        _one_sided(f[..., -2], f[..., -1], grid.h, d_last)
    )
    if not np.isclose(d_last, grid.h):
        ds[-1] = 1.0
    dfdr = df / ds / grid.drds(grid.s)
    out = np.abs(dfdr) ** 2
    if sector == 1:
        out = out + 3.0 * np.abs(f) ** 2 / grid.r**2
    return out


def _one_sided(f_prev, f_last, h, d):
    # derivative at s_n of the parabola through (-h, f_prev), (0, f_last), (d, 0)
    return (-d / (h * (h + d))) * f_prev + ((d - h) / (h * d)) * f_last + (h / (d * (h + d))) * 0.0


def resample(grid: RadialGrid, f, r_new, tol: float = 1e-8) -> np.ndarray:
    """Cubic-spline evaluation of grid samples at radii ``r_new``.

    The spline runs in the mapped coordinate with an even ghost node at the
    origin and the Dirichlet zero at the boundary; points beyond the
    boundary evaluate to zero.
    """
    f = np.asarray(f)
    s_nodes = np.concatenate([[-grid.s[0]], grid.s, [grid.s_bound]])
    vals = np.concatenate([f[..., :1], f, np.zeros_like(f[..., :1])], axis=-1)
    spline = CubicSpline(s_nodes, vals, axis=-1)
    r_new = np.asarray(r_new, dtype=float)
    s_new = grid.s_of_r(r_new)
    inside = s_new <= grid.s_bound
    out = np.zeros(f.shape[:-1] + r_new.shape, dtype=np.result_type(f, float))
    out[..., inside] = spline(s_new[inside])
    return out


# ---------------------------------------------------------------------------
# masses and fields

_RES_TOL = 1e-12


@dataclass(frozen=True)
class MassTriple:
    """Coupling masses ``(m1, m2, m3)``.

    The two resonance flags are derived from the values and cannot be set.
    """

    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"mass {name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)

    @property
    def resonance_paper(self) -> bool:
        """``2 m1 + m2 == m3``."""
        return abs(2 * self.m1 + self.m2 - self.m3) <= _RES_TOL * max(1.0, self.m3)

    @property
    def resonance_galilean(self) -> bool:
        """``2 m1 == m2 + m3``."""
        return abs(2 * self.m1 - self.m2 - self.m3) <= _RES_TOL * max(1.0, 2 * self.m1)

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.m3])

    @classmethod
    def parse(cls, text: str) -> "MassTriple":
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated masses, got {text!r}")
        return cls(*(float(p) for p in parts))

    def __str__(self):
        return f"{self.m1:g},{self.m2:g},{self.m3:g}"


@dataclass(frozen=True, eq=False)
class RadialField:
    """Complex samples of one radial profile in angular sector ``l``."""

    grid: RadialGrid
    values: np.ndarray
    sector: int = 0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.n,):
            raise ValueError(f"RadialField needs {self.grid.n} samples, got shape {v.shape}")
        if self.sector not in (0, 1):
            raise ValueError(f"unsupported sector {self.sector}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class Field3:
    """Components ``(u1, u2, u3)`` on a shared grid, shape ``(3, n)``."""

    grid: RadialGrid
    values: np.ndarray
    sector: int = 0
    warnings: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (3, self.grid.n):
            raise ValueError(f"Field3 values must have shape (3, {self.grid.n}), got {v.shape}")
        if self.sector not in (0, 1):
            raise ValueError(f"unsupported sector {self.sector}")
        object.__setattr__(self, "values", v)

    @property
    def c1(self) -> RadialField:
        return RadialField(self.grid, self.values[0], self.sector)

    @property
    def c2(self) -> RadialField:
        return RadialField(self.grid, self.values[1], self.sector)

    @property
    def c3(self) -> RadialField:
        return RadialField(self.grid, self.values[2], self.sector)

    def with_values(self, values, warnings=()) -> "Field3":
        return Field3(self.grid, np.asarray(values), self.sector, tuple(warnings))

    def conj(self) -> "Field3":
        return self.with_values(np.conj(self.values))

    def __add__(self, other):
        if isinstance(other, Field3):
            other = other.values
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, Field3):
            other = other.values
        return self.with_values(self.values - other)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    @property
    def real(self):
        return self.with_values(self.values.real.astype(complex))

    @property
    def imag(self):
        return self.with_values(self.values.imag.astype(complex))

    @classmethod
    def zeros(cls, grid: RadialGrid) -> "Field3":
        return cls(grid, np.zeros((3, grid.n), dtype=complex))


def h1_inner3(u, v, grid: RadialGrid | None = None) -> float:
    """Real Hdot^1 inner product of two three-component fields."""
    if isinstance(u, Field3):
        grid = u.grid
        u = u.values
    if isinstance(v, Field3):
        v = v.values
    S = grid.stiffness
    return float(np.real(np.sum(np.conj(v) * (S @ np.asarray(u).T).T)))


def h1_norm3(u, grid: RadialGrid | None = None) -> float:
    return float(np.sqrt(max(h1_inner3(u, u, grid), 0.0)))


# ---------------------------------------------------------------------------
# serialization

CSV_HEADER = "r,re_c1,im_c1,re_c2,im_c2,re_c3,im_c3"


def save_csv(path, field3: Field3) -> None:
    v = field3.values
    cols = [field3.grid.r]
    for k in range(3):
        cols += [v[k].real, v[k].imag]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=CSV_HEADER, comments="", fmt="%.17g")


def load_csv(path, grid: RadialGrid) -> Field3:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (grid.n, 7):
        raise ValueError(f"CSV shape {data.shape} does not match grid with n={grid.n}")
    if not np.allclose(data[:, 0], grid.r, rtol=1e-12, atol=0):
        raise ValueError("CSV radii do not match the grid")
    vals = np.stack([data[:, 1 + 2 * k] + 1j * data[:, 2 + 2 * k] for k in range(3)])
    return Field3(grid, vals)


_MAPPING_CODES = {Mapping.UNIFORM: 0, Mapping.STRETCHED: 1}
_HEADER = struct.Struct("<qdqd")


def save_snapshot(path, field3: Field3) -> None:
    """Binary snapshot: header (n, r_max, mapping, L) then 6n LE float64.

    Payload order is re_c1, im_c1, re_c2, im_c2, re_c3, im_c3, each n long.
    """
    g = field3.grid
    header = _HEADER.pack(g.n, g.r_max, _MAPPING_CODES[g.mapping], g.L)
    payload = np.empty((6, g.n), dtype="<f8")
    payload[0::2] = field3.values.real
    payload[1::2] = field3.values.imag
    Path(path).write_bytes(header + payload.tobytes())


def load_snapshot(path) -> Field3:
    raw = Path(path).read_bytes()
    n, r_max, code, L = _HEADER.unpack_from(raw)
    mapping = {v: k for k, v in _MAPPING_CODES.items()}[code]
    grid = make_grid(r_max, n, mapping, L if mapping is Mapping.STRETCHED else 1.0)
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if payload.size != 6 * n:
        raise ValueError(f"snapshot payload has {payload.size} floats, expected {6 * n}")
    payload = payload.reshape(6, n)
    return Field3(grid, payload[0::2] + 1j * payload[1::2])


def warn_overflow(msg: str) -> None:
    warnings.warn(msg, DomainOverflowWarning, stacklevel=3)
