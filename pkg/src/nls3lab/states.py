"""Ground-state family, symmetry action and conserved functionals."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate as spi

from .radial import (
    Field3,
    MassTriple,
    RadialField,
    RadialGrid,
    h1_inner3,
    h1_norm3,
    integrate,
    laplacian,
    resample,
    warn_overflow,
)

BUBBLE_ENERGY = 32.0 * np.pi**2 / 3.0  # int Q^4 = int |grad Q|^2


def bubble(r):
    """Scalar bubble ``Q(r) = (1 + r^2/8)^-1``, solving ``Delta Q + Q^3 = 0``."""
    r = np.asarray(r, dtype=float)
    return 1.0 / (1.0 + r**2 / 8.0)


def bubble_dr(r):
    r = np.asarray(r, dtype=float)
    return -(r / 4.0) / (1.0 + r**2 / 8.0) ** 2


def component_coefficients(masses: MassTriple) -> np.ndarray:
    """Constants ``c_k`` with ``Q_k = c_k Q``."""
    m1, m2, m3 = masses.as_array()
    return np.array(
        [
            (4.0 * m2 * m3) ** -0.25,
            0.5 * (m2 / (m1**2 * m3)) ** 0.25,
            0.5 * (m3 / (m1**2 * m2)) ** 0.25,
        ]
    )


@dataclass(frozen=True, eq=False)
class GroundStateBundle:
    """Ground state and the profiles generated by its symmetries.

    Attributes
    ----------
    Q : RadialField
        Scalar bubble samples.
    Qvec : Field3
        ``(Q1, Q2, Q3) = (c1 Q, c2 Q, c3 Q)``.
    Qp, Qq : Field3
        ``(Q1, 2 Q2, 0)`` and ``(2 Q1, -Q2, 5 Q3)``; ``i Qp`` and ``i Qq`` span
        the tangent space of the two phase rotations.
    LambdaQ : Field3
        Generator of the energy-critical dilation, ``Q_k + r dQ_k/dr``.  It
        equals ``-d/dlam [lam^-1 Q_k(x/lam)]`` at ``lam = 1`` and lies in the
        kernel of ``L_R``.
    LambdaQ_weight2 : Field3
        The variant ``2 Q_k + r dQ_k/dr`` (weight of the L^2-critical
        scaling).  Kept only so that its failure to lie in the kernel can be
        demonstrated.
    """

    grid: RadialGrid
    masses: MassTriple
    Q: RadialField
    Qvec: Field3
    Qp: Field3
    Qq: Field3
    LambdaQ: Field3
    LambdaQ_weight2: Field3
    coeffs: np.ndarray
    discrete: bool = False
    defect: float = 0.0

    @property
    def K(self) -> float:
        """Discrete ``K(Q)`` (stiffness form)."""
        return _kinetic(self.Qvec.values, self.masses, self.grid)


class DiscreteGroundStateError(RuntimeError):
    pass


def _newton_bubble(grid: RadialGrid, q: np.ndarray, bordered: bool, maxiter: int = 60):
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    n = grid.n
    A = (sp.diags(1.0 / grid.quad_w) @ grid.stiffness).tocsr()
    z = bubble(grid.r) + grid.r * bubble_dr(grid.r)
    zw = grid.quad_w * z
    beta = 0.0
    best = (np.inf, q, beta)
    for _ in range(maxiter):
        res = A @ q - q**3 + beta * z
        rmax = float(np.max(np.abs(res)))
        if rmax < best[0]:
            best = (rmax, q, beta)
        if rmax < 1e-13:
            break
        J = A - sp.diags(3 * q**2)
        if bordered:
            M = sp.bmat([[J, sp.csr_matrix(z[:, None])], [sp.csr_matrix(zw[None, :]), None]], format="csc")
            step = spla.spsolve(M, -np.concatenate([res, [0.0]]))
            q = q + step[:n]
            beta = beta + step[n]
        else:
            q = q + spla.spsolve(J.tocsc(), -res)
    return best


def discrete_bubble(grid: RadialGrid, tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Discrete profile ``q`` with ``-Delta_h q = q^3 - beta LambdaQ``.

    The grid breaks dilation invariance, so in general no exact discrete
    solution sits at scale one.  Newton is run on the system bordered by
    ``(q - Q) perp LambdaQ``; the multiplier ``beta`` measures the
    obstruction.  On a grid from ``balanced_stretch`` it vanishes to
    round-off and ``q`` is an exact discrete equilibrium.

    Returns
    -------
    q : ndarray
    beta : float
    """
    rmax, q, beta = _newton_bubble(grid, bubble(grid.r), bordered=True)
    if not np.isfinite(rmax) or rmax > tol:
        raise DiscreteGroundStateError(
            f"bordered Newton stalled at residual {rmax:.2e}; build the grid with balanced_grid(n)"
        )
    return q, float(beta)


@lru_cache(maxsize=32)
def balanced_stretch(n: int, L0: float = 8.0) -> float:
    """Stretch length for which the discrete ground state has scale one.

    Dilating the stretched grid is the same as changing ``L``, so the scale
    selected by the unconstrained discrete equation is proportional to
    ``L``.  One Newton solve at ``L0`` gives the estimate; a few secant steps
    on the bordered multiplier ``beta(L)`` then push it to round-off.
    """
    from .radial import make_grid

    g = make_grid(np.inf, n, "algebraic-stretch", L0)
    rmax, q, _ = _newton_bubble(g, bubble(g.r), bordered=False)
    if rmax > 1e-9:
        raise DiscreteGroundStateError(f"unconstrained Newton stalled at residual {rmax:.2e}")

    def beta(L):
        gl = make_grid(np.inf, n, "algebraic-stretch", L)
        return _newton_bubble(gl, bubble(gl.r), bordered=True)[2]

    La = float(L0 * q[0])
    Lb = La * (1 + 1e-7)
    ba, bb = beta(La), beta(Lb)
    for _ in range(4):
        if bb == ba or abs(bb) < 1e-14:
            break
        La, Lb, ba = Lb, Lb - bb * (Lb - La) / (bb - ba), bb
        bb = beta(Lb)
    return float(Lb if abs(bb) <= abs(ba) else La)


def balanced_grid(n: int):
    """Infinite stretched grid carrying an exact discrete ground state at scale one."""
    from .radial import make_grid

    return make_grid(np.inf, n, "algebraic-stretch", balanced_stretch(n))


def ground_state(masses: MassTriple, grid: RadialGrid, discrete: bool = False) -> GroundStateBundle:
    """Ground-state bundle on ``grid``.

    With ``discrete=False`` the closed form is sampled.  With
    ``discrete=True`` the scalar profile is replaced by ``discrete_bubble``.
    On a ``balanced_grid`` that profile is an exact equilibrium of the
    discretized flow.  Long runs near the ground state need this: the sampled
    closed form carries an ``O(h^2)`` defect which the unstable mode
    amplifies like ``exp(lambda1 t)``.
    """
    c = component_coefficients(masses)
    beta = 0.0
    if discrete:
        Q, beta = discrete_bubble(grid)
    else:
        Q = bubble(grid.r)
    LQ = Q + grid.r * bubble_dr(grid.r)
    vec = c[:, None] * Q[None, :]
    cplx = lambda a: Field3(grid, np.asarray(a, dtype=complex))  # noqa: E731
    return GroundStateBundle(
        grid=grid,
        masses=masses,
        Q=RadialField(grid, Q.astype(complex)),
        Qvec=cplx(vec),
        Qp=cplx([vec[0], 2 * vec[1], 0 * vec[2]]),
        Qq=cplx([2 * vec[0], -vec[1], 5 * vec[2]]),
        LambdaQ=cplx(c[:, None] * LQ[None, :]),
        LambdaQ_weight2=cplx(c[:, None] * (LQ + Q)[None, :]),
        coeffs=c,
        discrete=discrete,
        defect=beta,
    )


def stationary_residual(gs: GroundStateBundle) -> np.ndarray:
    """Per-component ``-(1/2m_k) Delta Q_k - F_k(Q)`` (should vanish)."""
    m = gs.masses.as_array()
    Qv = gs.Qvec.values.real
    lap = laplacian(gs.grid, Qv)
    return -lap / (2 * m[:, None]) - nonlinearity(Qv).real


def nonlinearity(u) -> np.ndarray:
    """``F(u) = (2 conj(u1) u2 u3, u1^2 conj(u3), u1^2 conj(u2))``."""
    u = u.values if isinstance(u, Field3) else np.asarray(u)
    u1, u2, u3 = u
    return np.stack([2 * np.conj(u1) * u2 * u3, u1**2 * np.conj(u3), u1**2 * np.conj(u2)])


# ---------------------------------------------------------------------------
# symmetry action


def apply_symmetry(u: Field3, theta1: float, theta2: float, lam: float, overflow_tol: float = 1e-3) -> Field3:
    """``u_[theta1, theta2, lam]``.

    Components pick up phases ``theta1 + theta2``, ``2 theta1``, ``2 theta2``
    and are rescaled as ``lam^-1 u_k(x / lam)``.  Values are resampled by a
    cubic spline in the mapped coordinate.  When the rescaled profile loses
    more than ``overflow_tol`` of its kinetic norm (support pushed off the
    grid or below resolution) a ``DomainOverflowWarning`` is emitted and
    recorded on the result.
    """
    if not lam > 0:
        raise ValueError(f"scale must be positive, got {lam}")
    phases = np.exp(1j * np.array([theta1 + theta2, 2 * theta1, 2 * theta2]))
    v = u.values
    if lam != 1.0:
        v = resample(u.grid, v, u.grid.r / lam) / lam
    out = phases[:, None] * v
    notes = ()
    if lam != 1.0:
        k0 = h1_inner3(u.values, u.values, u.grid)
        if k0 > 0:
            k1 = h1_inner3(out, out, u.grid)
            loss = abs(k1 - k0) / k0
            if loss > overflow_tol:
                msg = f"rescaling by {lam:g} changed the Hdot^1 norm by {loss:.2e} relative"
                warn_overflow(msg)
                notes = (msg,)
    return Field3(u.grid, out, u.sector, notes)


# ---------------------------------------------------------------------------
# functionals


@dataclass(frozen=True)
class FunctionalReport:
    K: float
    P: float
    E: float
    nehari: float
    delta_signed: float
    delta_abs: float
    charge12: float
    charge13: float
    gn_ratio: float

    @property
    def charges(self) -> tuple[float, float]:
        return (self.charge12, self.charge13)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _kinetic(v, masses: MassTriple, grid: RadialGrid) -> float:
    S = grid.stiffness
    m = masses.as_array()
    Sv = (S @ v.T).T
    return float(np.sum(np.real(np.sum(np.conj(v) * Sv, axis=1)) / (2 * m)))


def kinetic(u: Field3, masses: MassTriple) -> float:
    """``K(u) = sum_k (1/2 m_k) ||grad u_k||^2``."""
    return _kinetic(u.values, masses, u.grid)


def potential(u: Field3) -> float:
    """``P(u) = Re int conj(u1)^2 u2 u3``."""
    u1, u2, u3 = u.values
    return float(np.real(integrate(u.grid, np.conj(u1) ** 2 * u2 * u3)))


def energy(u: Field3, masses: MassTriple) -> float:
    return kinetic(u, masses) - 2 * potential(u)


def charges(u: Field3) -> tuple[float, float]:
    """``(M1 + 2 M2, M1 + 2 M3)`` with ``M_k = int |u_k|^2``."""
    M = integrate(u.grid, np.abs(u.values) ** 2)
    return float(M[0] + 2 * M[1]), float(M[0] + 2 * M[2])


def functionals(u: Field3, masses: MassTriple, gs: GroundStateBundle) -> FunctionalReport:
    if u.grid is not gs.grid and u.grid.fingerprint() != gs.grid.fingerprint():
        raise ValueError("field and ground state live on different grids")
    K = kinetic(u, masses)
    P = potential(u)
    KQ = gs.K
    c12, c13 = charges(u)
    d = KQ - K
    return FunctionalReport(
        K=K,
        P=P,
        E=K - 2 * P,
        nehari=K - 4 * P,
        delta_signed=d,
        delta_abs=abs(d),
        charge12=c12,
        charge13=c13,
        gn_ratio=abs(P) / K**2 if K > 0 else 0.0,
    )


# ---------------------------------------------------------------------------
# sharp Gagliardo-Nirenberg constant


@lru_cache(maxsize=1)
def bubble_integrals() -> tuple[float, float]:
    """High-accuracy ``(int Q^4, int |grad Q|^2)`` over R^4 by adaptive quadrature."""
    w = 2 * np.pi**2
    f4 = lambda r: w * r**3 * bubble(r) ** 4  # noqa: E731
    fg = lambda r: w * r**3 * bubble_dr(r) ** 2  # noqa: E731
    q4 = spi.quad(f4, 0, np.inf, epsabs=0, epsrel=1e-13, limit=500)[0]
    qg = spi.quad(fg, 0, np.inf, epsabs=0, epsrel=1e-13, limit=500)[0]
    return q4, qg


def sobolev_g4() -> float:
    """``G4 = ||Q||_{L^4} / ||grad Q||_{L^2}``, the sharp Sobolev constant in R^4."""
    q4, qg = bubble_integrals()
    return q4**0.25 / qg**0.5


def gn_constant(masses: MassTriple) -> float:
    """Sharp constant in ``|P(u)| <= G_S K(u)^2``.

    Equality at the ground state forces ``G_S = P(Q)/K(Q)^2``, which
    evaluates to ``(m1 sqrt(m2 m3) / 2) * G4^4``.
    """
    a = masses.m1 * np.sqrt(masses.m2 * masses.m3)
    return 0.5 * a * sobolev_g4() ** 4


def gn_constant_fourth_root(masses: MassTriple) -> float:
    """``(m1 sqrt(m2 m3) / 2)^(1/4) * G4``; not the sharp constant, kept for comparison."""
    a = masses.m1 * np.sqrt(masses.m2 * masses.m3)
    return (0.5 * a) ** 0.25 * sobolev_g4()


__all__ = [
    "BUBBLE_ENERGY",
    "FunctionalReport",
    "GroundStateBundle",
    "apply_symmetry",
    "bubble",
    "bubble_dr",
    "bubble_integrals",
    "charges",
    "component_coefficients",
    "DiscreteGroundStateError",
    "balanced_grid",
    "balanced_stretch",
    "discrete_bubble",
    "energy",
    "functionals",
    "gn_constant",
    "gn_constant_fourth_root",
    "ground_state",
    "h1_norm3",
    "kinetic",
    "nonlinearity",
    "potential",
    "sobolev_g4",
    "stationary_residual",
]
