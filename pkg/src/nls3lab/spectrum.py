"""Unstable eigenpair of the linearized flow.

With ``calL (a + i b) = -L_I b + i L_R a`` an eigenpair ``calL e = lam e``,
``e = e1 + i e2``, means ``L_R e1 = lam e2`` and ``L_I e2 = -lam e1``.
Eliminating ``e2`` gives ``L_I L_R e1 = -lam^2 e1``; writing
``e1 = L_I^{1/2} g`` turns this into the symmetric problem
``T g = -lam^2 g`` with ``T = L_I^{1/2} L_R L_I^{1/2}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .linearized import LinearizedOps, form_F
from .radial import Field3, save_csv

DENSE_CAP = 2048


class NotPSDError(RuntimeError):
    pass


class NoUnstableMode(RuntimeError):
    pass


class WitnessFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralPair:
    """Unstable eigenvalue ``lambda1`` and ``e_+ = e1 + i e2``.

    Normalized so that ``F(e_+, e_-) = -1`` (the form is negative on this
    pair, see ``normalization``) and ``(e1, Q)_K > 0``.
    """

    lambda1: float
    e1: np.ndarray
    e2: np.ndarray
    g: np.ndarray | None
    residual_r: float
    residual_i: float
    normalization: float
    raw_normalization: float
    gap: float | None = None
    n: int = 0
    method: str = "dense"
    extra: dict = field(default_factory=dict)

    def e_plus(self, grid) -> Field3:
        n = grid.n
        return Field3(grid, (self.e1 + 1j * self.e2).reshape(3, n))

    def e_minus(self, grid) -> Field3:
        n = grid.n
        return Field3(grid, (self.e1 - 1j * self.e2).reshape(3, n))

    def to_dict(self) -> dict:
        out = {
            "lambda1": self.lambda1,
            "residual_r": self.residual_r,
            "residual_i": self.residual_i,
            "normalization": self.normalization,
            "raw_normalization": self.raw_normalization,
            "gap": self.gap,
            "n": self.n,
            "method": self.method,
        }
        out.update(self.extra)
        return out

    def save(self, json_path, csv_path, grid) -> None:
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        save_csv(csv_path, self.e_plus(grid))


def _wnorm(ops: LinearizedOps, v) -> float:
    return float(np.sqrt(ops.inner(v, v)))


def sqrt_LI(ops: LinearizedOps, clamp: float | None = None, return_eig: bool = False):
    """Symmetric PSD square root of ``W^{1/2} L_I W^{-1/2}``.

    Eigenvalues below ``clamp`` in absolute value (default: ten times the
    measured L^2 Rayleigh size of the kernel residuals) are set to zero.

    Raises
    ------
    NotPSDError
        If the discrete operator has an eigenvalue below ``-1e-4``.
    """
    B = ops.sym("I")
    B = 0.5 * (B + B.T)
    w, V = la.eigh(B)
    if w[0] < -1e-4:
        raise NotPSDError(f"L_I has eigenvalue {w[0]:.3e}; assembly is suspect")
    if clamp is None:
        clamp = 10 * kernel_rayleigh(ops)
    w = np.where(w < clamp, 0.0, w)
    R = (V * np.sqrt(w)) @ V.T
    R = 0.5 * (R + R.T)
    return (R, w, V) if return_eig else R


def kernel_rayleigh(ops: LinearizedOps) -> float:
    """``max ||L_I q|| / ||q||`` over the two phase generators (weighted L^2)."""
    vals = []
    for f in (ops.gs.Qp, ops.gs.Qq):
        v = f.values.real.ravel()
        vals.append(_wnorm(ops, ops.LI @ v) / _wnorm(ops, v))
    return max(vals)


def _residuals(ops: LinearizedOps, lam, e1, e2):
    r = ops.LR @ e1 - lam * e2
    i = ops.LI @ e2 + lam * e1
    sc = lam * max(_wnorm(ops, e1), _wnorm(ops, e2))
    return _wnorm(ops, r) / sc, _wnorm(ops, i) / sc


def _normalize(ops: LinearizedOps, lam, e1, e2):
    gs = ops.gs
    n = ops.n
    ep = (e1 + 1j * e2).reshape(3, n)
    raw = form_F(ops, ep, np.conj(ep))
    if raw == 0 or not np.isfinite(raw):
        raise NoUnstableMode("F(e+, e-) vanishes; cannot normalize")
    c = 1.0 / np.sqrt(abs(raw))
    e1, e2 = c * e1, c * e2
    # (e1, Q)_K = sum_k (1/2m_k) (grad e1_k, grad Q_k)
    if float(e1 @ (ops.kinetic_form @ gs.Qvec.values.real.ravel())) < 0:
        e1, e2 = -e1, -e2
    ep = (e1 + 1j * e2).reshape(3, n)
    return e1, e2, raw, form_F(ops, ep, np.conj(ep))


def compute_lambda1(ops: LinearizedOps, polish: bool = True) -> SpectralPair:
    """Unstable eigenpair from the most negative eigenvalue of ``T``.

    Dense and therefore limited to ``n <= DENSE_CAP``.  With ``polish`` the
    pair is refined by shift-invert Arnoldi on the sparse ``6n`` operator,
    which drives both residuals to round-off.
    """
    if ops.n > DENSE_CAP:
        raise ValueError(f"dense eigensolve limited to n <= {DENSE_CAP}; use refine_lambda1")
    s = np.sqrt(ops.weights3)
    R = sqrt_LI(ops)
    BR = ops.sym("R")
    T = R @ BR @ R
    T = 0.5 * (T + T.T)
    w, G = la.eigh(T, subset_by_index=[0, 1])
    if w[0] >= 0:
        raise NoUnstableMode(f"T has no negative eigenvalue (min {w[0]:.3e})")
    lam = float(np.sqrt(-w[0]))
    g = G[:, 0]
    e1 = (R @ g) / s
    e2 = (ops.LR @ e1) / lam
    method = "dense"
    if polish:
        lam, e1, e2 = _shift_invert(ops, lam, e1, e2)
        method = "dense+shift-invert"
    rr, ri = _residuals(ops, lam, e1, e2)
    e1, e2, raw, nf = _normalize(ops, lam, e1, e2)
    return SpectralPair(
        lambda1=lam,
        e1=e1,
        e2=e2,
        g=g / s,
        residual_r=rr,
        residual_i=ri,
        normalization=nf,
        raw_normalization=raw,
        gap=float(w[1] - w[0]),
        n=ops.n,
        method=method,
        extra={"T_min": float(w[0]), "T_second": float(w[1])},
    )


def _shift_invert(ops: LinearizedOps, lam0, e1=None, e2=None):
    M = ops.block_operator().tocsc()
    v0 = None if e1 is None else np.concatenate([e1, e2])
    vals, vecs = spla.eigs(M, k=1, sigma=lam0, v0=v0, tol=1e-14, maxiter=2000)
    lam = float(vals[0].real)
    v = vecs[:, 0]
    # eigenvector is defined up to a complex factor; rotate to be real
    k = np.argmax(np.abs(v))
    v = np.real(v * np.exp(-1j * np.angle(v[k])))
    n3 = 3 * ops.n
    return lam, v[:n3], v[n3:]


def refine_lambda1(ops: LinearizedOps, lam_guess: float) -> SpectralPair:
    """Eigenpair at any ``n`` by shift-invert around ``lam_guess``."""
    lam, e1, e2 = _shift_invert(ops, lam_guess)
    rr, ri = _residuals(ops, lam, e1, e2)
    e1, e2, raw, nf = _normalize(ops, lam, e1, e2)
    return SpectralPair(lam, e1, e2, None, rr, ri, nf, raw, None, ops.n, "shift-invert")


def richardson(values, ns, order: float = 2.0) -> float:
    """Extrapolate the last two entries of a refinement sequence."""
    (n1, v1), (n2, v2) = (ns[-2], values[-2]), (ns[-1], values[-1])
    q = (n2 / n1) ** order
    return (q * v2 - v1) / (q - 1)


def real_spectrum(ops: LinearizedOps, imag_tol: float = 1e-6, window: float | None = None) -> np.ndarray:
    """Real eigenvalues of the dense ``6n`` operator (small ``n`` only)."""
    M = ops.block_operator().toarray()
    ev = la.eigvals(M)
    real = np.sort(ev[np.abs(ev.imag) < imag_tol * max(1.0, np.abs(ev).max())].real)
    if window is not None:
        real = real[np.abs(real) <= window]
    return real


def witness_negative_direction(ops: LinearizedOps, bump=None, s_range=(-20.0, 20.0)) -> float:
    """Certify ``inf <L_R W, W> < 0`` without an eigensolve.

    ``W = (phi / (2 sqrt(m1)), phi / (2 sqrt(2 m2)), phi / (2 sqrt(2 m3)))``
    with ``phi = LambdaQ + s * bump`` (``bump`` defaults to ``Q``),
    normalized in Hdot^1; ``s`` is chosen by a bounded 1D search.

    Raises
    ------
    WitnessFailure
        If no negative value is found or ``phi`` degenerates to zero.
    """
    grid = ops.grid
    m1, m2, m3 = ops.masses.as_array()
    Q = ops.gs.Q.values.real
    LQ = ops.gs.LambdaQ.values.real[0] / ops.gs.coeffs[0]
    b = Q if bump is None else np.asarray(bump, dtype=float)
    scal = np.array([1 / (2 * np.sqrt(m1)), 1 / (2 * np.sqrt(2 * m2)), 1 / (2 * np.sqrt(2 * m3))])
    S = grid.stiffness

    def value(s):
        phi = LQ + s * b
        nrm = float(phi @ (S @ phi))
        if not nrm > 0:
            raise WitnessFailure("trial profile vanishes")
        W = (scal[:, None] * (phi / np.sqrt(nrm))[None, :]).ravel()
        return float(W @ (ops.LR_form @ W))

    res = minimize_scalar(value, bounds=s_range, method="bounded", options={"xatol": 1e-8})
    best = min(value(res.x), value(0.0))
    if not best < 0:
        raise WitnessFailure(f"no negative direction found (best {best:.3e})")
    return best


__all__ = [
    "DENSE_CAP",
    "NoUnstableMode",
    "NotPSDError",
    "SpectralPair",
    "WitnessFailure",
    "compute_lambda1",
    "kernel_rayleigh",
    "real_spectrum",
    "refine_lambda1",
    "richardson",
    "sqrt_LI",
    "witness_negative_direction",
]
