"""Localized virial weights, the functionals ``V``, ``I_R``, ``F_R`` and the
empirical scan that locates the mass condition behind the virial identities.

Conventions (radial, four space dimensions):

* ``V   = int sum_k m_k |u_k|^2 w``
* ``I_R = Im int w' sum_k conj(u_k) d_r u_k``
* ``F_R = sum_k (1/m_k) int |d_r u_k|^2 w'' - sum_k (1/(4 m_k)) int |u_k|^2 dd w
  - 2 int Re(conj(u_1)^2 u_2 u_3) lap w``

so that ``F_inf = 4 (K - 4 P)``.  ``dV/dt = I_R`` needs ``2 m_1 = m_2 + m_3``
while ``dI_R/dt = F_R`` holds for every triple.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial as Poly
from scipy.optimize import brentq

from .evolution import EvolutionConfig, evolve
from .radial import Field3, MassTriple, RadialGrid, integrate, make_grid
from .states import ground_state, kinetic, potential


class DomainOverflowError(ValueError):
    pass


# ---------------------------------------------------------------------------
# blend profiles for phi with w_R(r) = R^2 phi(r / R)


def _smoothstep(y):
    return y**3 * (10 - 15 * y + 6 * y * y)


@dataclass(frozen=True)
class _Profile:
    """Piecewise polynomial ``phi`` on ``[1, end]``; ``x^2`` below, ``0`` above."""

    breaks: tuple  # interval endpoints in x, starting at 1.0
    pieces: tuple  # Polynomial in x on each interval
    name: str

    @property
    def end(self) -> float:
        return self.breaks[-1]

    def evaluate(self, x: np.ndarray, d: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inner = x <= 1.0
        out[inner] = (x[inner] ** 2, 2 * x[inner], 2 * np.ones(inner.sum()), 0 * x[inner], 0 * x[inner])[d]
        for lo, hi, p in zip(self.breaks[:-1], self.breaks[1:], self.pieces):
            sel = (x > lo) & (x <= hi)
            out[sel] = p.deriv(d)(x[sel]) if d else p(x[sel])
        return out


def _hermite(order: int) -> _Profile:
    """Polynomial on ``[1, 2]`` matching ``x^2`` and ``0`` up to derivative ``order``."""
    deg = 2 * order + 2
    rows, rhs = [], []

    def row(x, d):
        return [np.prod(np.arange(p - d + 1, p + 1)) * x ** (p - d) if p >= d else 0.0 for p in range(deg)]

    left = [1.0, 2.0, 2.0] + [0.0] * (order - 2)
    for d in range(order + 1):
        rows.append(row(1.0, d))
        rhs.append(left[d])
        rows.append(row(2.0, d))
        rhs.append(0.0)
    c = np.linalg.solve(np.array(rows), np.array(rhs))
    return _Profile((1.0, 2.0), (Poly(c),), f"hermite-{order}")


@lru_cache(maxsize=None)
def _quintic_profile() -> _Profile:
    return _hermite(2)


@lru_cache(maxsize=None)
def _septic_profile() -> _Profile:
    return _hermite(3)


def _integrate_up(p2: Poly, y0: float, v0: float, d0: float):
    """Antiderivatives of ``p2`` (in y) with ``phi'(y0) = d0``, ``phi(y0) = v0``."""
    p1 = p2.integ(lbnd=y0) + d0
    p0 = p1.integ(lbnd=y0) + v0
    return p0, p1


@lru_cache(maxsize=None)
def _bounded_profile(length: float = 3.0) -> _Profile:
    """``phi'' = 2 - 2 S(y/length) - A b(y/a)`` with ``y = x - 1`` and ``A, a > 0``.

    Both subtracted terms are nonnegative, hence ``phi'' <= 2``.  ``a`` and
    ``A`` are fixed by ``phi'(1 + length) = phi(1 + length) = 0``.
    """
    L = length
    y = Poly([0.0, 1.0])
    step = 2 - 2 * _smoothstep(y / L)

    def build(a):
        bump = (y / a * (1 - y / a)) ** 3
        # A from phi'(end) = 0
        m0 = step.integ(lbnd=0)(L)
        mb = bump.integ(lbnd=0)(a)
        A = (m0 + 2.0) / mb
        p_in = step - A * bump
        q0, q1 = _integrate_up(p_in, 0.0, 1.0, 2.0)
        r0, r1 = _integrate_up(step, a, q0(a), q1(a))
        return A, (q0, r0), r1

    def mismatch(a):
        _, (q0, r0), _ = build(a)
        return r0(L)

    a = brentq(mismatch, 0.05 * L, 0.9 * L, xtol=1e-15)
    A, (q0, r0), r1 = build(a)
    if A <= 0:
        raise RuntimeError("curvature-bounded blend degenerate")
    shift = Poly([-1.0, 1.0])  # y = x - 1
    return _Profile((1.0, 1.0 + a, 1.0 + L), (q0(shift), r0(shift)), "curvature-bounded")


PROFILES = {"quintic": _quintic_profile, "septic": _septic_profile, "curvature-bounded": _bounded_profile}


@dataclass(frozen=True, eq=False)
class VirialWeight:
    """Samples of ``w``, ``w'``, ``w''``, ``lap w`` and ``lap lap w`` on a grid.

    ``R = inf`` gives ``w = r^2``.  ``w2_faces`` holds ``w''`` at the link
    midpoints used by the discrete gradient forms.
    """

    R: float
    grid: RadialGrid
    profile: str
    w: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    lap: np.ndarray
    bilap: np.ndarray
    w2_faces: np.ndarray
    support: float


def _weight_values(R, profile, r, upto=4):
    if np.isinf(R):
        z = np.zeros_like(r)
        return [r**2, 2 * r, 2 + z, z, z][: upto + 1]
    prof = PROFILES[profile]()
    x = r / R
    return [R ** (2 - d) * prof.evaluate(x, d) for d in range(upto + 1)]


def make_weight(R: float, grid: RadialGrid, profile: str = "quintic") -> VirialWeight:
    """Virial weight ``w_R(r) = R^2 phi(r/R)`` with analytic derivatives.

    ``quintic`` is the blend on ``[R, 2R]`` matched to value, slope and
    curvature (so ``w`` is only ``C^2`` and ``lap lap w`` carries surface
    terms; ``virial_functionals`` uses a weak form that absorbs them).
    ``septic`` also matches the third derivative.  Both peak well above
    ``w'' = 2``: no smooth blend vanishing beyond ``2R`` can keep that bound.
    ``curvature-bounded`` meets it with the wider support ``[R, 4R]``.

    Raises
    ------
    DomainOverflowError
        If the blend support ends beyond the grid's ``r_max``.
    """
    if not (R > 0):
        raise ValueError(f"R must be positive, got {R}")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    support = np.inf if np.isinf(R) else R * PROFILES[profile]().end
    if support > grid.r_max:
        raise DomainOverflowError(f"weight support {support:g} exceeds r_max {grid.r_max:g}")
    r = grid.r
    w, w1, w2, w3, w4 = _weight_values(R, profile, r)
    lap = w2 + 3 * w1 / r
    # lap lap w for radial w in 4D
    bilap = w4 + 6 * w3 / r + 3 * w2 / r**2 - 3 * w1 / r**3
    with np.errstate(invalid="ignore"):
        w2f = _weight_values(R, profile, grid.r_links, upto=2)[2]
    w2f = np.nan_to_num(w2f, nan=0.0)
    return VirialWeight(R, grid, profile, w, w1, w2, lap, bilap, w2f, support)


# ---------------------------------------------------------------------------
# functionals


def _link_im(u: np.ndarray) -> np.ndarray:
    return np.imag(np.conj(u[:, :-1]) * u[:, 1:])


def virial_functionals(u: Field3, weight: VirialWeight, masses: MassTriple) -> tuple[float, float, float]:
    """``(V, I_R, F_R)`` for ``u``.

    ``I_R`` uses the link form ``sum kappa (w_{i+1} - w_i) Im(conj(u_i) u_{i+1})``,
    which is the exact semi-discrete time derivative of ``V`` for the linear
    part; gradient terms of ``F_R`` use the stiffness links weighted by ``w''``
    so that ``F_inf`` reproduces ``4 (K - 4 P)`` with the same quadrature.
    """
    grid = u.grid
    if weight.grid is not grid and weight.grid.fingerprint() != grid.fingerprint():
        raise ValueError("weight and field live on different grids")
    v = u.values
    m = masses.as_array()
    dens = np.abs(v) ** 2
    V = integrate(grid, np.sum(m[:, None] * dens, axis=0) * weight.w)
    kap = grid.kappa[: grid.n - 1]
    dw = np.diff(weight.w)
    I_R = float(np.sum(kap * dw * np.sum(_link_im(v), axis=0)))
    # Hessian term: sum_k (1/m_k) int |u_k'|^2 w''
    S_w = _weighted_stiffness(grid, weight.w2_faces)
    hess = sum(float(np.real(np.vdot(v[k], S_w @ v[k]))) / m[k] for k in range(3))
    # weak form int rho lap lap w = -int grad rho . grad lap w; needs lap w in C^0 only
    bil = -float(np.sum(dens / (4 * m[:, None]), axis=0) @ (grid.stiffness @ weight.lap)) if not np.isinf(weight.R) else 0.0
    pdens = np.real(np.conj(v[0]) ** 2 * v[1] * v[2])
    pot = 2 * integrate(grid, pdens * weight.lap)
    return float(V), I_R, float(hess - bil - pot)


def _weighted_stiffness(grid: RadialGrid, face_w: np.ndarray):
    import scipy.sparse as sp

    # mirrors RadialGrid.stiffness with per-link factors
    k = grid.kappa * face_w
    main = k.copy()
    main[1:] += k[:-1]
    return sp.diags([-k[:-1], main, -k[:-1]], [-1, 0, 1], format="csr")


def f_infinity_identity(u: Field3, masses: MassTriple) -> tuple[float, float]:
    """``(F_inf, 4 (K - 4 P))`` evaluated with shared quadrature."""
    wt = make_weight(np.inf, u.grid)
    _, _, F = virial_functionals(u, wt, masses)
    return F, 4 * (kinetic(u, masses) - 4 * potential(u))


# ---------------------------------------------------------------------------
# identity scan

SCAN_COLUMNS = ["m1", "m2", "m3", "paper_condition", "galilean_condition", "defect_V", "defect_I"]

DEFAULT_TRIPLES = (
    (1.0, 1.0, 1.0),
    (1.0, 0.5, 1.5),
    (1.0, 1.5, 0.5),
    (2.0, 1.0, 3.0),
    (1.0, 1.0, 3.0),
    (0.5, 0.5, 1.5),
    (1.0, 0.5, 2.5),
    (1.0, 2.0, 4.0),
    (1.0, 1.0, 10.0),
    (1.0, 2.0, 1.0),
    (2.0, 1.0, 1.0),
    (1.0, 3.0, 2.0),
)


def scan_datum(grid: RadialGrid, amplitude: float = 0.6, chirp: float = 0.1, phases=(0.3, -0.2, 0.5)) -> Field3:
    """Chirped Gaussian with generic phases, so ``I_R`` and the phase defect are nonzero."""
    r = grid.r
    g = amplitude * np.exp(-(r**2) / 8) * np.exp(1j * chirp * r**2)
    vals = np.stack([g * np.exp(1j * p) * s for p, s in zip(phases, (1.0, 0.8, 0.9))])
    return Field3(grid, vals)


def _central4(y: np.ndarray, dt: float) -> np.ndarray:
    return (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * dt)


@dataclass
class ScanRow:
    masses: MassTriple
    paper_condition: bool
    galilean_condition: bool
    defect_V: float
    defect_I: float
    status: str = "ok"
    abs_defect_V: float = float("nan")
    abs_defect_I: float = float("nan")
    max_abs_dVdt: float = float("nan")

    def as_list(self) -> list:
        m = self.masses.as_array()
        return [repr(float(m[0])), repr(float(m[1])), repr(float(m[2])), str(self.paper_condition).lower(), str(self.galilean_condition).lower(), repr(self.defect_V), repr(self.defect_I)]


@dataclass
class ScanResult:
    rows: list
    R: float
    dt: float
    t_end: float
    winner: str | None = None
    extra: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(SCAN_COLUMNS)
            for row in self.rows:
                wr.writerow(row.as_list())


def identity_defects(u0: Field3, masses: MassTriple, R: float = 3.0, dt: float = 2e-3, t_end: float = 0.3, profile: str = "quintic") -> ScanRow:
    """Normalized defects of ``dV/dt = I_R`` and ``dI_R/dt = F_R`` along a short run.

    Time derivatives are fourth-order central differences of per-step
    samples; each defect is divided by the largest magnitude of the two
    quantities being compared, which keeps the numbers comparable across
    triples (``V`` and ``I_R`` do not scale like ``K^2``).
    """
    grid = u0.grid
    gs = ground_state(masses, grid)
    wt = make_weight(R, grid, profile)
    cfg = EvolutionConfig(dt=dt, t_end=t_end, sample_every=1, store_fields=True)
    tr = evolve(u0, cfg, masses, gs)
    cond_p, cond_g = masses.resonance_paper, masses.resonance_galilean
    if tr.status != "completed":
        return ScanRow(masses, cond_p, cond_g, float("nan"), float("nan"), status="untestable:" + tr.status)
    vals = np.array([virial_functionals(f, wt, masses) for f in tr.fields])
    V, I, F = vals.T
    dV = _central4(V, dt)
    dI = _central4(I, dt)
    eV = np.abs(dV - I[2:-2])
    eI = np.abs(dI - F[2:-2])
    # floors keep stationary data (all quantities near round-off) finite
    sV = max(np.abs(dV).max(), np.abs(I[2:-2]).max(), 1e-8 * abs(V[0]))
    sI = max(np.abs(dI).max(), np.abs(F[2:-2]).max(), 1e-8 * abs(V[0]))
    return ScanRow(masses, cond_p, cond_g, float(eV.max() / sV), float(eI.max() / sI), "ok", float(eV.max()), float(eI.max()), float(np.abs(dV).max()))


def identity_scan(
    u0: Field3 | None = None,
    triples=DEFAULT_TRIPLES,
    R: float = 3.0,
    dt: float = 2e-3,
    t_end: float = 0.3,
    grid: RadialGrid | None = None,
    profile: str = "quintic",
    ratio: float = 10.0,
    initial=None,
) -> ScanResult:
    """Run ``identity_defects`` over mass triples and name the winning condition.

    ``initial`` optionally maps a triple to its own initial datum (e.g. its
    ground state); otherwise ``u0`` or ``scan_datum`` is used for all.  A
    condition wins when every triple satisfying it has ``defect_V`` at least
    ``ratio`` times smaller than every triple violating it.
    """
    if not len(triples):
        raise ValueError("empty mass lattice")
    grid = grid or (u0.grid if u0 is not None else make_grid(np.inf, 2048))
    if u0 is None and initial is None:
        u0 = scan_datum(grid)
    rows = []
    for t in triples:
        m = t if isinstance(t, MassTriple) else MassTriple(*map(float, t))
        rows.append(identity_defects(initial(m) if initial else u0, m, R, dt, t_end, profile))
    winner = None
    for name, attr in (("galilean", "galilean_condition"), ("paper", "paper_condition")):
        yes = [r.defect_V for r in rows if getattr(r, attr) and r.status == "ok"]
        no = [r.defect_V for r in rows if not getattr(r, attr) and r.status == "ok"]
        if yes and no and max(yes) * ratio <= min(no):
            winner = name
    return ScanResult(rows, R, dt, t_end, winner)


def scan_heatmap(result: ScanResult, path) -> None:
    """Heat map of ``log10`` defects: one column per triple, rows ``V`` and ``I``."""
    from .svgplot import heatmap

    labels = [str(r.masses) for r in result.rows]
    data = np.array([[r.defect_V for r in result.rows], [r.defect_I for r in result.rows]])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log10(data)
    heatmap(path, z, col_labels=labels, row_labels=["dV/dt - I_R", "dI_R/dt - F_R"], title="log10 normalized virial defects")


__all__ = [
    "DEFAULT_TRIPLES",
    "DomainOverflowError",
    "PROFILES",
    "SCAN_COLUMNS",
    "ScanResult",
    "ScanRow",
    "VirialWeight",
    "f_infinity_identity",
    "identity_defects",
    "identity_scan",
    "make_weight",
    "scan_datum",
    "scan_heatmap",
    "virial_functionals",
]
