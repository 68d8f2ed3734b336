"""Modulation decomposition near the ground-state orbit.

A field ``u`` close to the orbit is written as

    u_[eta, theta, mu] = (1 + alpha) Q + h

with ``(eta, theta, mu)`` fixed by the three conditions
``(h, i Qp) = (h, i Qq) = (h, LambdaQ) = 0`` in Hdot^1 and ``alpha`` by
``F(Q, h) = 0``.  Both phase parameters are needed because ``L_I`` has a
two-dimensional kernel.

The phase pair is only defined modulo the lattice generated by
``(2 pi, 0)`` and ``(pi, pi)``; ``wrap_phases`` picks a representative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .linearized import LinearizedOps, form_F
from .radial import Field3, h1_inner3, h1_norm3, resample
from .states import GroundStateBundle, apply_symmetry, kinetic

MOD_COLUMNS = ["t", "eta", "theta", "mu", "alpha", "delta", "h_norm", "defect_max"]


class ModulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModulationState:
    eta: float
    theta: float
    mu: float
    alpha: float
    h: Field3
    delta: float
    residuals: dict
    iterations: int = 0

    @property
    def h_norm(self) -> float:
        return h1_norm3(self.h)

    @property
    def defect_max(self) -> float:
        return max(abs(v) for v in self.residuals.values())

    def params(self) -> np.ndarray:
        return np.array([self.eta, self.theta, self.mu, self.alpha])


def wrap_phases(eta: float, theta: float, ref=(0.0, 0.0)) -> tuple[float, float]:
    """Representative of ``(eta, theta)`` nearest to ``ref`` modulo ``(2pi,0), (pi,pi)``.

    The action only sees ``eta + theta``, ``2 eta`` and ``2 theta`` mod ``2 pi``.
    """
    d = np.array([eta - ref[0], theta - ref[1]])
    # lattice basis (pi, pi), (pi, -pi): sum and difference are 2 pi periodic
    s = (d[0] + d[1]) / (2 * np.pi)
    t = (d[0] - d[1]) / (2 * np.pi)
    s -= np.round(s)
    t -= np.round(t)
    de = np.pi * (s + t)
    dt = np.pi * (s - t)
    return float(ref[0] + de), float(ref[1] + dt)


class _Targets:
    """Precomputed Hdot^1 test vectors for the three conditions."""

    def __init__(self, gs: GroundStateBundle):
        g = gs.grid
        S = g.stiffness
        self.gs = gs
        Qv = gs.Qvec.values.real
        LQ = gs.LambdaQ.values.real
        # remove the discrete Q component so that (Q, LambdaQ_h) = 0 exactly
        c = h1_inner3(LQ, Qv, g) / h1_inner3(Qv, Qv, g)
        self.LQh = LQ - c * Qv
        self.SQp = (S @ gs.Qp.values.real.T).T
        self.SQq = (S @ gs.Qq.values.real.T).T
        self.SLQ = (S @ self.LQh.T).T
        self.norms = np.array([h1_norm3(gs.Qp), h1_norm3(gs.Qq), float(np.sqrt(np.sum(self.LQh * self.SLQ)))])

    def conditions(self, v: np.ndarray) -> np.ndarray:
        """``((v, iQp), (v, iQq), (v, LambdaQ_h))`` in Hdot^1, real parts."""
        return np.array(
            [
                np.sum(self.SQp * v.imag),
                np.sum(self.SQq * v.imag),
                np.sum(self.SLQ * v.real),
            ]
        )


def _act(u: Field3, eta, theta, logmu):
    return apply_symmetry(u, eta, theta, float(np.exp(logmu)), overflow_tol=np.inf).values


def _seed(u: Field3, gs: GroundStateBundle, n_phase: int = 24, mus=None):
    """Coarse search maximizing ``Re sum_k (u_k, Q_k)`` after the action."""
    g = gs.grid
    S = g.stiffness
    Qv = gs.Qvec.values.real
    SQ = (S @ Qv.T).T
    mus = np.exp(np.linspace(np.log(0.4), np.log(2.5), 15)) if mus is None else mus
    ph = np.linspace(-np.pi, np.pi, n_phase, endpoint=False)
    E, T = np.meshgrid(ph, ph, indexing="ij")
    best = (-np.inf, 0.0, 0.0, 0.0)
    for mu in mus:
        v = resample(g, u.values, g.r / mu) / mu if mu != 1 else u.values
        c = np.sum(v * SQ, axis=1)  # complex (v_k, Q_k)
        obj = np.real(np.exp(1j * (E + T)) * c[0] + np.exp(2j * E) * c[1] + np.exp(2j * T) * c[2])
        nrm = np.sqrt(max(h1_inner3(v, v, g), 1e-300))
        k = np.unravel_index(np.argmax(obj), obj.shape)
        val = obj[k] / nrm
        if val > best[0]:
            best = (val, float(E[k]), float(T[k]), float(np.log(mu)))
    return best[1:]


def modulate(
    u: Field3,
    gs: GroundStateBundle,
    ops: LinearizedOps,
    guess=None,
    delta0: float | None = None,
    tol: float = 1e-12,
    maxiter: int = 50,
    fd_step: float = 1e-6,
    _targets: _Targets | None = None,
) -> ModulationState:
    """Decompose ``u`` as ``u_[eta, theta, mu] = (1 + alpha) Q + h``.

    Parameters
    ----------
    guess : (eta, theta, mu), optional
        Starting point; a coarse search is used when omitted.
    delta0 : float, optional
        Tube radius for ``delta(u) = |K(Q) - K(u)|``; defaults to ``0.1 K(Q)``.

    Raises
    ------
    ModulationError
        If ``u`` is outside the tube or Newton fails within ``maxiter`` steps.
    """
    KQ = gs.K
    delta = abs(KQ - kinetic(u, gs.masses))
    if delta0 is None:
        delta0 = 0.1 * KQ
    if delta > delta0:
        raise ModulationError(f"delta = {delta:.3e} exceeds tube radius {delta0:.3e}")
    tg = _targets or _Targets(gs)
    if guess is None:
        x = np.array(_seed(u, gs))
    else:
        x = np.array([guess[0], guess[1], np.log(guess[2])], dtype=float)
    unorm = max(h1_norm3(u), 1e-300)
    scale = unorm * tg.norms

    def G(p):
        return tg.conditions(_act(u, *p)) / scale

    r = G(x)
    it = 0
    while np.max(np.abs(r)) > tol:
        it += 1
        if it > maxiter:
            raise ModulationError(f"Newton did not converge in {maxiter} iterations (|J| = {np.max(np.abs(r)):.2e})")
        J = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = fd_step
            J[:, j] = (G(x + e) - G(x - e)) / (2 * fd_step)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise ModulationError(f"singular modulation Jacobian: {exc}") from exc
        # damp large steps; the basin is small compared with the phase period
        lim = 0.5
        if np.max(np.abs(dx)) > lim:
            dx *= lim / np.max(np.abs(dx))
        x = x + dx
        r = G(x)
    eta, theta = wrap_phases(x[0], x[1], (0.0, 0.0) if guess is None else (guess[0], guess[1]))
    mu = float(np.exp(x[2]))
    v = Field3(u.grid, _act(u, eta, theta, x[2]))
    FQQ = form_F(ops, gs.Qvec, gs.Qvec)
    alpha = form_F(ops, gs.Qvec, v) / FQQ - 1.0
    h = v - (1 + alpha) * gs.Qvec.values
    cond = tg.conditions(h.values) / (max(h1_norm3(v), 1e-300) * tg.norms)
    res = {
        "h_iQp": float(cond[0]),
        "h_iQq": float(cond[1]),
        "h_LambdaQ": float(cond[2]),
        "F_Q_h": float(form_F(ops, gs.Qvec, h) / abs(FQQ)),
        "alpha_identity": float((alpha + 1) - form_F(ops, gs.Qvec, v) / FQQ),
    }
    return ModulationState(eta, theta, mu, float(alpha), h, float(delta), res, it)


@dataclass
class ModulationSeries:
    times: np.ndarray
    states: list
    status: str = "completed"
    derivative_bound: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name == "h_norm":
            return np.array([s.h_norm for s in self.states])
        if name == "defect_max":
            return np.array([s.defect_max for s in self.states])
        return np.array([getattr(s, name) for s in self.states])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(MOD_COLUMNS)
            for t, s in zip(self.times, self.states):
                wr.writerow([repr(float(t)), repr(s.eta), repr(s.theta), repr(s.mu), repr(s.alpha), repr(s.delta), repr(s.h_norm), repr(s.defect_max)])


def track(fields, times, gs: GroundStateBundle, ops: LinearizedOps, delta0: float | None = None) -> ModulationSeries:
    """Warm-started modulation along a sampled trajectory.

    Phases are continued to the nearest branch of the previous sample.  The
    series stops (status ``left-tube`` or ``no-convergence``) at the first
    sample that cannot be decomposed.  ``derivative_bound`` reports
    ``max (|eta'| + |theta'| + |alpha'| + |mu'|/mu) / (mu^2 delta)``.
    """
    tg = _Targets(gs)
    states, ts = [], []
    guess = None
    status = "completed"
    for t, u in zip(times, fields):
        try:
            st = modulate(u, gs, ops, guess=guess, delta0=delta0, _targets=tg)
        except ModulationError as exc:
            status = "left-tube" if "tube" in str(exc) else "no-convergence"
            break
        if guess is not None:
            eta, theta = wrap_phases(st.eta, st.theta, guess[:2])
            st = ModulationState(eta, theta, st.mu, st.alpha, st.h, st.delta, st.residuals, st.iterations)
        states.append(st)
        ts.append(t)
        guess = (st.eta, st.theta, st.mu)
    ts = np.array(ts)
    series = ModulationSeries(ts, states, status)
    if len(ts) >= 3:
        eta = series.column("eta")
        theta = series.column("theta")
        mu = series.column("mu")
        alpha = series.column("alpha")
        delta = series.column("delta")
        d = lambda y: np.gradient(y, ts)  # noqa: E731
        lhs = np.abs(d(eta)) + np.abs(d(theta)) + np.abs(d(alpha)) + np.abs(d(mu)) / mu
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = lhs / (mu**2 * delta)
            eta_ratio = np.abs(d(eta)) / (mu**2 * delta)
        good = np.isfinite(ratio)
        series.derivative_bound = {
            "max_ratio": float(np.max(ratio[good])) if good.any() else float("nan"),
            "eta_ratio_max": float(np.max(eta_ratio[good])) if good.any() else float("nan"),
        }
    return series


def threshold_perturbation(gs: GroundStateBundle, w: Field3, eps: float) -> Field3:
    """``c (Q + eps w)`` with ``c`` chosen so that ``E = E(Q)``.

    ``E(c v) = c^2 K(v) - 2 c^4 P(v)``; the root with ``c`` near one is used.
    """
    from .states import energy, kinetic as kin, potential

    v = gs.Qvec + eps * w.values
    K = kin(v, gs.masses)
    P = potential(v)
    E0 = energy(gs.Qvec, gs.masses)
    # 2 P x^2 - K x + E0 = 0 with x = c^2
    disc = K**2 - 8 * P * E0
    if disc < 0 or P == 0:
        raise ValueError("no real rescaling reaches the threshold energy")
    roots = np.array([(K - np.sqrt(disc)) / (4 * P), (K + np.sqrt(disc)) / (4 * P)])
    roots = roots[roots > 0]
    x = roots[np.argmin(np.abs(roots - 1))]
    return v * np.sqrt(x)


__all__ = [
    "MOD_COLUMNS",
    "ModulationError",
    "ModulationSeries",
    "ModulationState",
    "modulate",
    "threshold_perturbation",
    "track",
    "wrap_phases",
]
