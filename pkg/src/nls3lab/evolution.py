"""Time integration of the three-wave Schrodinger system on a radial grid.

The scheme is the implicit midpoint rule (Crank-Nicolson for the linear
part).  Per component, with ``Delta_h = -W^{-1} S``,

    (W + i dt/(4 m_k) S) u^+ = (W - i dt/(4 m_k) S) u + i dt W F_k(u_mid),

with ``u_mid = (u + u^+)/2`` found by fixed-point iteration.  The midpoint
rule preserves every quadratic invariant of the semi-discrete system, so both
phase charges are conserved up to the fixed-point tolerance; the energy
error is second order in ``dt``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .radial import Field3, MassTriple, RadialGrid, integrate, save_snapshot
from .states import GroundStateBundle, functionals, nonlinearity

TRACE_COLUMNS = ["t", "K", "P", "E", "N", "delta_signed", "charge12", "charge13", "L4norm", "status"]


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    """Integration parameters.

    ``iterations`` caps the fixed-point loop; it stops earlier once the
    update falls below ``fp_tol`` (relative, max-norm).
    """

    dt: float = 0.01
    t_end: float = 5.0
    direction: str = "forward"
    scheme: str = "crank-nicolson-relaxation"
    iterations: int = 30
    fp_tol: float = 1e-13
    blowup_K_factor: float = 20.0
    sample_every: int = 10
    store_fields: bool = False
    snapshot_every: int = 0  # samples between binary snapshots; 0 disables
    snapshot_dir: str | None = None
    max_halvings: int = 12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.iterations < 1:
            raise ValueError("need at least one fixed-point iteration")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {self.direction!r}")
        if self.scheme != "crank-nicolson-relaxation":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")


class Stepper:
    """Midpoint stepper with cached factorizations per step size."""

    def __init__(self, grid: RadialGrid, masses: MassTriple, iterations: int = 30, fp_tol: float = 1e-13):
        self.grid = grid
        self.masses = masses
        self.iterations = iterations
        self.fp_tol = fp_tol
        self._cache: dict[float, tuple] = {}
        self.last_iterations = 0

    def _factors(self, dt: float):
        f = self._cache.get(dt)
        if f is None:
            W = sp.diags(self.grid.quad_w)
            S = self.grid.stiffness
            lus, rhs = [], []
            for m in self.masses.as_array():
                c = 1j * dt / (4 * m)
                lus.append(spla.splu((W + c * S).tocsc().astype(complex)))
                rhs.append((W - c * S).tocsr().astype(complex))
            f = (lus, rhs)
            self._cache = {dt: f}  # keep only the active step size
        return f

    def step(self, u: np.ndarray, dt: float, guess: np.ndarray | None = None) -> np.ndarray:
        if dt == 0:
            return u.copy()
        lus, rhs = self._factors(dt)
        w = self.grid.quad_w
        base = np.stack([rhs[k] @ u[k] for k in range(3)])
        new = u.copy() if guess is None else guess
        scale = max(float(np.max(np.abs(u))), 1e-300)
        for it in range(1, self.iterations + 1):
            F = nonlinearity(0.5 * (u + new))
            b = base + 1j * dt * w * F
            nxt = np.stack([lus[k].solve(b[k]) for k in range(3)])
            if not np.all(np.isfinite(nxt)):
                raise NonConvergence("non-finite iterate")
            diff = float(np.max(np.abs(nxt - new)))
            new = nxt
            if diff <= self.fp_tol * scale:
                self.last_iterations = it
                return new
        raise NonConvergence(f"fixed point not converged after {self.iterations} iterations (update {diff:.2e})")


def step(u: Field3, dt: float, masses: MassTriple, iterations: int = 30, fp_tol: float = 1e-13) -> Field3:
    """One midpoint step; raises ``NonConvergence`` if the fixed point fails."""
    st = Stepper(u.grid, masses, iterations, fp_tol)
    return u.with_values(st.step(np.asarray(u.values, dtype=complex), dt))


def l4_norm(u: Field3) -> float:
    return float(integrate(u.grid, np.sum(np.abs(u.values) ** 4, axis=0)) ** 0.25)


@dataclass
class EvolutionTrace:
    times: np.ndarray
    reports: list
    l4: np.ndarray
    status: str
    t_star: float | None
    final: Field3
    fields: list = field(default_factory=list)
    dt_final: float = 0.0
    steps: int = 0
    K_ground: float = 0.0

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name == "L4norm":
            return self.l4
        if name == "N":
            name = "nehari"
        return np.array([getattr(r, name) for r in self.reports])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(TRACE_COLUMNS)
            last = len(self.times) - 1
            for i, (t, r, l4) in enumerate(zip(self.times, self.reports, self.l4)):
                st = self.status if i == last else "ok"
                wr.writerow([repr(float(t)), repr(r.K), repr(r.P), repr(r.E), repr(r.nehari), repr(r.delta_signed), repr(r.charge12), repr(r.charge13), repr(l4), st])

    def summary(self) -> dict:
        return {
            "status": self.status,
            "t_star": self.t_star,
            "samples": len(self.times),
            "steps": self.steps,
            "dt_final": self.dt_final,
            "t_last": float(self.times[-1]) if len(self.times) else None,
        }


def evolve(u0: Field3, cfg: EvolutionConfig, masses: MassTriple, gs: GroundStateBundle) -> EvolutionTrace:
    """Integrate from ``u0`` and record a sampled trace.

    Backward runs evolve ``conj(u0)`` forward and conjugate the result,
    using the time-reversal symmetry ``u(t) -> conj(u(-t))``; reported times
    are then negative.

    The status is ``completed``, ``blowup-detected`` (``K`` above
    ``blowup_K_factor * K(Q)``, or the fixed point failing again right after
    a step-size halving) or ``diverged`` (non-finite values).
    """
    sign = 1.0 if cfg.direction == "forward" else -1.0
    u = np.asarray(u0.values, dtype=complex)
    if sign < 0:
        u = np.conj(u)
    grid = u0.grid
    stepper = Stepper(grid, masses, cfg.iterations, cfg.fp_tol)
    KQ = gs.K
    K_limit = cfg.blowup_K_factor * KQ

    def observe(v):
        f = Field3(grid, np.conj(v) if sign < 0 else v)
        return f, functionals(f, masses, gs), l4_norm(f)

    times, reports, l4s, fields = [], [], [], []
    snap_count = 0

    def record(t, v):
        nonlocal snap_count
        f, rep, l4 = observe(v)
        times.append(sign * t)
        reports.append(rep)
        l4s.append(l4)
        if cfg.store_fields:
            fields.append(f)
        if cfg.snapshot_every and cfg.snapshot_dir and (len(times) - 1) % cfg.snapshot_every == 0:
            Path(cfg.snapshot_dir).mkdir(parents=True, exist_ok=True)
            save_snapshot(Path(cfg.snapshot_dir) / f"snap_{snap_count:05d}.bin", f)
            snap_count += 1
        return rep

    dt = cfg.dt
    sample_dt = cfg.dt * cfg.sample_every
    t = 0.0
    record(t, u)
    next_sample = sample_dt
    status, t_star = "completed", None
    prev = None
    nsteps = 0
    halvings = 0
    eps = 1e-9 * cfg.dt
    while t < cfg.t_end - eps:
        h = min(dt, cfg.t_end - t)
        guess = None if prev is None else 2 * u - prev
        try:
            new = stepper.step(u, h, guess)
        except NonConvergence:
            if halvings >= cfg.max_halvings:
                status, t_star = "blowup-detected", sign * t
                break
            dt *= 0.5
            halvings += 1
            try:
                new = stepper.step(u, min(dt, cfg.t_end - t))
                h = min(dt, cfg.t_end - t)
            except NonConvergence:
                status, t_star = "blowup-detected", sign * t
                break
        if not np.all(np.isfinite(new)):
            status, t_star = "diverged", sign * t
            break
        prev, u = u, new
        t += h
        nsteps += 1
        K = float(np.sum(np.real(np.sum(np.conj(u) * (grid.stiffness @ u.T).T, axis=1)) / (2 * masses.as_array())))
        if K > K_limit:
            record(t, u)
            status, t_star = "blowup-detected", sign * (t - h)
            break
        if t >= next_sample - eps or t >= cfg.t_end - eps:
            record(t, u)
            next_sample += sample_dt
    final = Field3(grid, np.conj(u) if sign < 0 else u)
    return EvolutionTrace(
        times=np.array(times),
        reports=reports,
        l4=np.array(l4s),
        status=status,
        t_star=t_star,
        final=final,
        fields=fields,
        dt_final=dt,
        steps=nsteps,
        K_ground=KQ,
    )


def detect_blowup(K: float, K_ground: float, factor: float = 20.0, consecutive_failures: int = 0) -> str:
    """Status for a running trace: ``blowup-detected`` or ``running``."""
    if K > factor * K_ground or consecutive_failures >= 2:
        return "blowup-detected"
    return "running"


def _tolerant_decreasing(x: np.ndarray, tol: float) -> bool:
    run_min = np.minimum.accumulate(x)
    return bool(np.all(x <= run_min * (1 + tol) + 1e-300))


def scattering_diagnostic(trace: EvolutionTrace, factor: float = 10.0, tol: float = 0.05, min_samples: int = 8) -> dict:
    """Desk-scale scattering indicator (a diagnostic, not a proof).

    For each of ``||u||_{L^4}`` and ``|P|/K``: starting at its peak, the
    sequence must fall to ``peak / factor`` while staying within ``tol`` of
    its running minimum, and must not rise above ``(1 + tol) peak / factor``
    afterwards.  Once a quantity is ``factor`` times below its peak, grid
    noise of that size is tolerated.  Algebraic decay exponents are fitted on
    the second half of the window for reference.
    """
    n = len(trace.times)
    if trace.status != "completed" or n < min_samples:
        return {"verdict": "inconclusive", "reason": "trace too short or not completed", "status": trace.status}
    t = np.abs(trace.times)
    K = trace.column("K")
    P = trace.column("P")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(K > 0, np.abs(P) / K, 0.0)
    out = {"convention": f"monotone (within {tol:.0%}) fall to peak/{factor:g}, no rebound afterwards"}
    ok = True
    for name, x in (("L4norm", trace.l4), ("P_over_K", ratio)):
        ipk = int(np.argmax(x))
        peak = float(x[ipk])
        entry = {"peak_index": ipk, "decrease": float(peak / max(x[-1], 1e-300)) if peak > 0 else 0.0}
        below = np.nonzero(x[ipk:] <= peak / factor)[0]
        if peak <= 0 or not np.all(np.isfinite(x)) or len(below) == 0:
            entry.update(monotone=False, reached=False)
            ok = False
        else:
            cross = ipk + int(below[0])
            mono = _tolerant_decreasing(x[ipk : cross + 1], tol)
            no_rebound = bool(np.max(x[cross:]) <= (1 + tol) * peak / factor)
            entry.update(monotone=mono, reached=True, t_reached=float(t[cross]), no_rebound=no_rebound)
            ok = ok and mono and no_rebound
        half = slice(n // 2, n)
        good = (t[half] > 0) & (x[half] > 0)
        entry["fitted_exponent"] = (
            float(np.polyfit(np.log(t[half][good]), np.log(x[half][good]), 1)[0]) if good.sum() >= 2 else math.nan
        )
        out[name] = entry
    out["verdict"] = "scattering-consistent" if ok else "not-scattering-consistent"
    return out


def with_direction(cfg: EvolutionConfig, direction: str) -> EvolutionConfig:
    return replace(cfg, direction=direction)


__all__ = [
    "EvolutionConfig",
    "EvolutionTrace",
    "NonConvergence",
    "Stepper",
    "TRACE_COLUMNS",
    "detect_blowup",
    "evolve",
    "l4_norm",
    "scattering_diagnostic",
    "step",
    "with_direction",
]
