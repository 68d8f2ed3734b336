"""Linearization of the flow around the ground state.

Writing ``u = Q + a + i b`` with real ``a``, ``b`` the linear part of the
flow is ``d/dt (a + i b) = L_I b - i L_R a``.  Both ``L_R`` and ``L_I`` are
``-diag(Delta / 2 m_k)`` plus a ``Q^2``-weighted 3x3 potential.

Stacked vectors are component-major: ``v = [v1; v2; v3]`` of length ``3n``.
Discrete operators act on nodal values and are symmetric for the weighted
inner product ``<f, g> = sum_i W_i f_i g_i``; the matrices returned by
``*_form`` are the corresponding symmetric bilinear forms ``W L``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .radial import Field3, MassTriple, RadialGrid
from .states import GroundStateBundle, bubble

SQ2 = np.sqrt(2.0)

M_A = np.array([[1.0, -SQ2, -SQ2], [-SQ2, 0.0, 1.0], [-SQ2, 1.0, 0.0]])
M_B = np.array([[-1.0, -SQ2, -SQ2], [-SQ2, 0.0, -1.0], [-SQ2, -1.0, 0.0]])

# Orthonormal eigenbases (columns), eigenvalues (-1, -1, 3) and (1, 1, -3).
P_MAT = np.column_stack([[SQ2 / 2, 0.5, 0.5], [0.0, 1 / SQ2, -1 / SQ2], [SQ2 / 2, -0.5, -0.5]])
C_MAT = np.column_stack([[0.0, 1 / SQ2, -1 / SQ2], [SQ2 / 2, -0.5, -0.5], [SQ2 / 2, 0.5, 0.5]])

# Matrices as they appear in the source derivation; neither is an
# orthogonal eigenbasis (see tests).  Retained for auditing only.
S3, S5, S10, S15, S30 = (np.sqrt(x) for x in (3.0, 5.0, 10.0, 15.0, 30.0))
P_MAT_PRINTED = np.array(
    [
        [1 / S3, 1 / S3, 1 / S5],
        [SQ2 / S3, 0.0, -SQ2 / S5],
        [0.0, SQ2 / S3, -SQ2 / S5],
    ]
)
C_MAT_PRINTED = np.array(
    [
        [-S10 / 5, -2 * S15 / 15, SQ2 / 2],
        [2 * S5 / 5, -S30 / 15, 0.5],
        [-2 * S5 / 5, S30 / 15, 0.5],
    ]
)


@dataclass(frozen=True)
class PotentialMatrices:
    M_A: np.ndarray
    M_B: np.ndarray
    P_mat: np.ndarray
    C_mat: np.ndarray
    eig_A: np.ndarray
    eig_B: np.ndarray


def potential_eigendecomposition() -> PotentialMatrices:
    """Potential matrices of the Gamma-transformed operators with orthonormal eigenbases.

    ``M_A = P diag(-1, -1, 3) P^T`` and ``M_B = C diag(1, 1, -3) C^T``.
    With ``L_gamma = -Delta - gamma Q^2`` the transformed ``L_I`` becomes
    ``diag(L_1, L_1, L_-3)`` and ``L_R`` becomes ``diag(L_-1, L_-1, L_3)``.
    """
    return PotentialMatrices(
        M_A=M_A.copy(),
        M_B=M_B.copy(),
        P_mat=P_MAT.copy(),
        C_mat=C_MAT.copy(),
        eig_A=np.linalg.eigvalsh(M_A),
        eig_B=np.linalg.eigvalsh(M_B),
    )


def gamma_transform(v, masses: MassTriple, direction: str = "fwd"):
    """``Gamma(v1, v2, v3) = (sqrt(2 m1) v1, sqrt(2 m2) v2, sqrt(2 m3) v3)``."""
    g = np.sqrt(2 * masses.as_array())
    if direction == "inv":
        g = 1.0 / g
    elif direction != "fwd":
        raise ValueError(f"direction must be 'fwd' or 'inv', got {direction!r}")
    if isinstance(v, Field3):
        return v.with_values(g[:, None] * v.values)
    v = np.asarray(v)
    if v.ndim == 1:
        return (g[:, None] * v.reshape(3, -1)).ravel()
    return g[:, None] * v


def _potentials(c: np.ndarray, Q: np.ndarray):
    """Return ``V_R``, ``V_I`` as (3, 3, n) arrays."""
    c1, c2, c3 = c
    Q2 = Q**2
    a = 2 * c2 * c3 * Q2  # 2 Q2 Q3
    b = 2 * c1 * c3 * Q2  # 2 Q1 Q3
    d = 2 * c1 * c2 * Q2  # 2 Q1 Q2
    e = c1**2 * Q2  # Q1^2
    z = np.zeros_like(Q)
    VR = np.array([[-a, -b, -d], [-b, z, -e], [-d, -e, z]])
    VI = np.array([[a, -b, -d], [-b, z, e], [-d, e, z]])
    return VR, VI


@dataclass(frozen=True, eq=False)
class LinearizedOps:
    """Discrete ``L_R`` and ``L_I`` around ``Q`` on a radial grid.

    ``LR`` and ``LI`` are sparse ``3n x 3n`` matrices acting on nodal values.
    """

    masses: MassTriple
    grid: RadialGrid
    gs: GroundStateBundle
    LR: sp.csr_matrix
    LI: sp.csr_matrix
    VR: np.ndarray
    VI: np.ndarray
    sector: int = 0

    @property
    def n(self) -> int:
        return self.grid.n

    @cached_property
    def weights3(self) -> np.ndarray:
        return np.tile(self.grid.quad_w, 3)

    @cached_property
    def kinetic_form(self) -> sp.csr_matrix:
        """Block-diagonal ``S / (2 m_k)``."""
        S = self.grid.stiffness
        return sp.block_diag([S / (2 * m) for m in self.masses.as_array()], format="csr")

    @cached_property
    def h1_gram(self) -> sp.csr_matrix:
        """Block-diagonal stiffness, the Hdot^1 Gram matrix."""
        S = self.grid.stiffness
        return sp.block_diag([S, S, S], format="csr")

    @cached_property
    def LR_form(self) -> sp.csr_matrix:
        return (sp.diags(self.weights3) @ self.LR).tocsr()

    @cached_property
    def LI_form(self) -> sp.csr_matrix:
        return (sp.diags(self.weights3) @ self.LI).tocsr()

    def sym(self, which: str) -> np.ndarray:
        """Dense ``W^{1/2} L W^{-1/2}`` (symmetric), for eigensolves."""
        A = {"R": self.LR, "I": self.LI}[which]
        s = np.sqrt(self.weights3)
        return (sp.diags(s) @ A @ sp.diags(1 / s)).toarray()

    def inner(self, f, g) -> float:
        """Weighted real inner product of stacked real vectors."""
        return float(np.sum(self.weights3 * np.ravel(f) * np.ravel(g)))

    def apply(self, which: str, v) -> np.ndarray:
        A = {"R": self.LR, "I": self.LI}[which]
        shape = np.shape(v)
        return (A @ np.ravel(v)).reshape(shape)

    def block_operator(self) -> sp.csr_matrix:
        """Real ``6n`` form of ``calL``: ``[a; b] -> [-L_I b; L_R a]``."""
        return sp.bmat([[None, -self.LI], [self.LR, None]], format="csr")

    def export_coo(self, path, which: str = "R") -> None:
        """Write ``row col value`` triplets (0-based) of ``L_R`` or ``L_I``."""
        A = {"R": self.LR, "I": self.LI}[which].tocoo()
        with open(Path(path), "w") as fh:
            fh.write(f"# {A.shape[0]} {A.shape[1]} {A.nnz}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {v:.17g}\n")


def read_coo(path) -> sp.coo_matrix:
    with open(path) as fh:
        nr, nc, _ = (int(x) for x in fh.readline().lstrip("#").split())
    data = np.loadtxt(path, comments="#", ndmin=2)
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nr, nc))


def assemble(masses: MassTriple, grid: RadialGrid, gs: GroundStateBundle) -> LinearizedOps:
    if gs.grid is not grid:
        raise ValueError("ground state was built on a different grid")
    Q = gs.Q.values.real
    VR, VI = _potentials(gs.coeffs, Q)
    Winv = sp.diags(1.0 / grid.quad_w)
    S = grid.stiffness
    kin = sp.block_diag([Winv @ S / (2 * m) for m in masses.as_array()])

    def pot(V):
        return sp.bmat([[sp.diags(V[i, j]) for j in range(3)] for i in range(3)])

    LR = (kin + pot(VR)).tocsr()
    LI = (kin + pot(VI)).tocsr()
    return LinearizedOps(masses, grid, gs, LR, LI, VR, VI)


def scalar_operator(gamma: float, grid: RadialGrid, gs: GroundStateBundle | None = None) -> sp.csr_matrix:
    """``L_gamma = -Delta - gamma Q^2`` on nodal values (sector 0)."""
    Q = bubble(grid.r) if gs is None else gs.Q.values.real
    return (sp.diags(1.0 / grid.quad_w) @ grid.stiffness - gamma * sp.diags(Q**2)).tocsr()


def _split(u):
    v = u.values if isinstance(u, Field3) else np.asarray(u)
    return np.real(v).ravel(), np.imag(v).ravel()


def form_F(ops: LinearizedOps, u, v) -> float:
    """``F(u, v) = 1/2 <L_R Re u, Re v> + 1/2 <L_I Im u, Im v>``."""
    ur, ui = _split(u)
    vr, vi = _split(v)
    return 0.5 * float(vr @ (ops.LR_form @ ur)) + 0.5 * float(vi @ (ops.LI_form @ ui))


class DegenerateConstraints(ValueError):
    pass


def _constrained_min(A: np.ndarray, G: np.ndarray, C: np.ndarray | None, k: int = 1, rank_tol: float = 1e-10):
    """Smallest generalized eigenvalues of ``(A, G)`` on ``{x : C x = 0}``."""
    if C is not None and len(C):
        C = np.atleast_2d(C)
        # normalize rows so the rank test is scale free
        C = C / np.linalg.norm(C, axis=1, keepdims=True)
        sv = np.linalg.svd(C, compute_uv=False)
        if sv[-1] < rank_tol * sv[0]:
            raise DegenerateConstraints(f"constraint set is numerically rank deficient (sigma_min/sigma_max = {sv[-1] / sv[0]:.2e})")
        Z = la.null_space(C)
        A = Z.T @ A @ Z
        G = Z.T @ G @ Z
    A = 0.5 * (A + A.T)
    G = 0.5 * (G + G.T)
    return la.eigh(A, G, subset_by_index=[0, k - 1], eigvals_only=True)


def coercivity_min(ops: LinearizedOps, form: str = "LI", constraints=(), k: int = 1):
    """Minimum Rayleigh quotient of a quadratic form relative to ``||.||_{Hdot^1}^2``.

    Parameters
    ----------
    form : {"LI", "LR", "F"}
        ``<L_I v, v>``, ``<L_R v, v>`` on real fields, or ``F`` on complex
        fields (with ``||Re h||^2 + ||Im h||^2`` as the norm).
    constraints : sequence
        For ``LI``/``LR``: real 3-fields ``c`` imposing ``(v, c)_{Hdot^1} = 0``.
        For ``F``: items ``("h1", field)`` impose ``(h, field)_{Hdot^1} = 0``
        with complex fields; ``("F", field)`` imposes ``F(field, h) = 0``.
    k : int
        Number of eigenvalues to return (ascending).

    Returns
    -------
    float or ndarray
        The minimum (``k = 1``) or the ``k`` smallest values.  For ``F`` the
        real and imaginary blocks decouple (all supported constraints act on
        one block each), and the result is the minimum over both.
    """
    G = ops.h1_gram.toarray()

    def rows(fields):
        return np.array([ops.h1_gram @ np.real(np.ravel(f.values if isinstance(f, Field3) else f)) for f in fields])

    if form in ("LI", "LR"):
        A = (ops.LI_form if form == "LI" else ops.LR_form).toarray()
        C = rows(constraints) if constraints else None
        ev = _constrained_min(A, G, C, k)
        return ev[0] if k == 1 else ev
    if form != "F":
        raise ValueError(f"unknown form {form!r}")
    re_rows, im_rows = [], []
    for kind, f in constraints:
        fr, fi = _split(f)
        if kind == "h1":
            if np.any(fr):
                re_rows.append(ops.h1_gram @ fr)
            if np.any(fi):
                im_rows.append(ops.h1_gram @ fi)
        elif kind == "F":
            # F(f, h) = 1/2 <L_R fr, hr> + 1/2 <L_I fi, hi>
            if np.any(fr):
                re_rows.append(ops.LR_form @ fr)
            if np.any(fi):
                im_rows.append(ops.LI_form @ fi)
        else:
            raise ValueError(f"unknown constraint kind {kind!r}")
    # the factor 1/2 of F cancels against nothing: report F/||h||^2 exactly
    ev_r = 0.5 * _constrained_min(ops.LR_form.toarray(), G, np.array(re_rows) if re_rows else None, k)
    ev_i = 0.5 * _constrained_min(ops.LI_form.toarray(), G, np.array(im_rows) if im_rows else None, k)
    ev = np.sort(np.concatenate([ev_r, ev_i]))[:k]
    return ev[0] if k == 1 else ev


def standard_F_constraints(gs: GroundStateBundle):
    """Constraint list defining the discrete orthogonal complement ``G^perp``."""
    return [
        ("F", gs.Qvec),
        ("h1", 1j * gs.Qp.values.real),
        ("h1", 1j * gs.Qq.values.real),
        ("h1", gs.LambdaQ.values.real),
    ]


def kernel_residuals(ops: LinearizedOps) -> dict:
    """Relative max-norm residuals of ``L_I Qp``, ``L_I Qq`` and ``L_R LambdaQ``.

    Each is normalized by the max-norm of the kinetic part applied to the
    same profile, i.e. the size of the terms that must cancel.
    """
    gs = ops.gs
    out = {}
    for name, which, f in (("LI_Qp", "I", gs.Qp), ("LI_Qq", "I", gs.Qq), ("LR_LambdaQ", "R", gs.LambdaQ)):
        v = f.values.real.ravel()
        res = ops.apply(which, v)
        scale = np.max(np.abs(sp.diags(1 / ops.weights3) @ (ops.kinetic_form @ v)))
        out[name] = float(np.max(np.abs(res)) / scale)
    return out


__all__ = [
    "C_MAT",
    "C_MAT_PRINTED",
    "DegenerateConstraints",
    "LinearizedOps",
    "M_A",
    "M_B",
    "P_MAT",
    "P_MAT_PRINTED",
    "PotentialMatrices",
    "assemble",
    "coercivity_min",
    "form_F",
    "gamma_transform",
    "kernel_residuals",
    "potential_eigendecomposition",
    "read_coo",
    "scalar_operator",
    "standard_F_constraints",
]
