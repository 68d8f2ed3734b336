"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 scenario falsified (a checked property measurably violated).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ExperimentConfig, as_dict, load, override, to_text
from .radial import MassTriple, RadialGrid, load_csv, load_snapshot, make_grid, save_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FALSIFIED = 0, 2, 3, 4

# per-command grid size used when neither config nor flags set n
DEFAULT_N = {"ground-state": 4096, "spectrum": 2048, "evolve": 1024, "special": 1024, "virial-scan": 2048, "modulate": 512}
SPECTRUM_MIN_N = 64


class Falsified(RuntimeError):
    pass


@dataclass
class Run:
    """Output directory bookkeeping and manifest."""

    command: str
    cfg: ExperimentConfig
    out: Path
    grids: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        p = self.out / name
        if name not in self.files:
            self.files.append(name)
        return p

    def grid(self, name: str, grid: RadialGrid) -> RadialGrid:
        self.grids[name] = {**grid.describe(), "r_max": _num(grid.r_max), "fingerprint": grid.fingerprint()}
        return grid

    def write_json(self, name: str, data: dict) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def manifest(self, exit_code: int, message: str = "") -> None:
        outputs = {}
        for name in sorted(self.files):
            p = self.out / name
            if p.is_file():
                outputs[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        data = {
            "command": self.command,
            "exit_code": exit_code,
            "message": message,
            "config": as_dict(self.cfg),
            "config_text": to_text(self.cfg),
            "versions": {
                "artifact": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "grids": self.grids,
            "checks": self.checks,
            "outputs": outputs,
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _num(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, MassTriple):
        return str(obj)
    return obj


def _grid(run: Run, n: int | None = None, name: str = "main") -> RadialGrid:
    c = run.cfg
    return run.grid(name, make_grid(c.r_max, n or c.n, c.mapping, c.stretch))


# ---------------------------------------------------------------------------
# commands


def cmd_ground_state(run: Run) -> None:
    from .states import functionals, gn_constant, ground_state

    c = run.cfg
    grid = _grid(run)
    gs = ground_state(c.masses, grid)
    rep = functionals(gs.Qvec, c.masses, gs)
    with open(run.path("report.json"), "w") as fh:
        fh.write(rep.to_json(indent=2, sort_keys=True))
        fh.write("\n")
    save_csv(run.path("ground_state.csv"), gs.Qvec)
    poh = abs(rep.K - 4 * rep.P) / rep.K
    GS = gn_constant(c.masses)
    gn_rel = abs(rep.gn_ratio - GS) / GS
    run.checks.update(pohozaev_rel=poh, gn_ratio=rep.gn_ratio, gn_constant=GS, gn_rel=gn_rel)
    run.write_json("gn_check.json", {"gn_ratio": rep.gn_ratio, "gn_constant": GS, "relative_gap": gn_rel, "pohozaev_rel": poh})
    print(f"K={rep.K:.10g} P={rep.P:.10g} |K-4P|/K={poh:.3e} gn_ratio/G_S-1={rep.gn_ratio / GS - 1:.3e}")
    if poh > 1e-5:
        raise Falsified(f"|K-4P|/K = {poh:.3e} exceeds 1e-5")


def cmd_spectrum(run: Run) -> None:
    from .linearized import assemble
    from .spectrum import compute_lambda1, refine_lambda1, richardson, witness_negative_direction
    from .states import ground_state

    c = run.cfg
    if c.n < SPECTRUM_MIN_N:
        raise ConfigError(f"spectrum needs n >= {SPECTRUM_MIN_N}, got {c.n}")
    ns = [c.n // 4, c.n // 2, c.n]
    # dense seed on a modest grid, then shift-invert on each level
    n_seed = min(c.n, 256)
    g0 = make_grid(c.r_max, n_seed, c.mapping, c.stretch)
    seed_pair = compute_lambda1(assemble(c.masses, g0, ground_state(c.masses, g0)))
    lams, pairs = [], []
    for k, n in enumerate(ns):
        grid = _grid(run, n, f"level{k}")
        ops = assemble(c.masses, grid, ground_state(c.masses, grid))
        p = refine_lambda1(ops, lams[-1] if lams else seed_pair.lambda1)
        lams.append(p.lambda1)
        pairs.append((p, ops))
    pair, ops = pairs[-1]
    rich = richardson(lams, ns, 2.0)
    witness = witness_negative_direction(ops)
    data = pair.to_dict()
    data.update(
        convergence={"n": ns, "lambda1": lams, "richardson": rich, "seed_gap": seed_pair.gap},
        witness=witness,
        masses=str(c.masses),
    )
    run.write_json("spectrum.json", data)
    save_csv(run.path("eigen_plus.csv"), pair.e_plus(ops.grid))
    ops.export_coo(run.path("L_R.coo"), "R")
    ops.export_coo(run.path("L_I.coo"), "I")
    run.checks.update(lambda1=pair.lambda1, residual_r=pair.residual_r, residual_i=pair.residual_i, witness=witness)
    print(f"lambda1={pair.lambda1:.8f} (levels {', '.join(f'{x:.7f}' for x in lams)}, extrapolated {rich:.7f})")
    print(f"residuals {pair.residual_r:.2e} {pair.residual_i:.2e}; witness {witness:.4f}")
    if not (pair.lambda1 > 0 and max(pair.residual_r, pair.residual_i) <= 1e-6 and witness < 0):
        raise Falsified("unstable eigenpair checks failed")


def _initial(run: Run, grid: RadialGrid, gs):
    from .virial import scan_datum

    c = run.cfg
    if c.initial == "scaled-ground-state":
        return gs.Qvec * c.amplitude
    if c.initial == "gaussian":
        return scan_datum(grid, amplitude=c.amplitude)
    path = Path(c.initial_file)
    if not path.is_file():
        raise ConfigError(f"initial_file {str(path)!r} not found")
    if path.suffix == ".csv":
        return load_csv(path, grid)
    # stored fields are used as they are; amplitude only scales generated data
    return load_snapshot(path)


def cmd_evolve(run: Run) -> None:
    from .evolution import EvolutionConfig, evolve, scattering_diagnostic
    from .states import ground_state
    from .svgplot import line_plot

    c = run.cfg
    grid = _grid(run)
    gs = ground_state(c.masses, grid)
    u0 = _initial(run, grid, gs)
    if u0.grid is not grid:
        grid = run.grid("main", u0.grid)
        gs = ground_state(c.masses, grid)
    ecfg = EvolutionConfig(
        dt=c.dt,
        t_end=c.t_end,
        direction=c.direction,
        iterations=c.iterations,
        fp_tol=c.fp_tol,
        blowup_K_factor=c.blowup_factor,
        sample_every=c.sample_every,
        snapshot_every=c.snapshot_every,
        snapshot_dir=str(run.out / "snapshots") if c.snapshot_every else None,
    )
    tr = evolve(u0, ecfg, c.masses, gs)
    tr.to_csv(run.path("trace.csv"))
    save_csv(run.path("final.csv"), tr.final)
    E = tr.column("E")
    q12, q13 = tr.column("charge12"), tr.column("charge13")
    drift = {
        "energy": float(np.max(np.abs(E - E[0])) / max(abs(E[0]), 1e-300)),
        "charge12": float(np.max(np.abs(q12 - q12[0])) / max(abs(q12[0]), 1e-300)),
        "charge13": float(np.max(np.abs(q13 - q13[0])) / max(abs(q13[0]), 1e-300)),
    }
    summary = {**tr.summary(), "relative_drift": drift, "scattering": scattering_diagnostic(tr)}
    run.write_json("summary.json", summary)
    t = np.abs(tr.times)
    marks = [(abs(tr.t_star), "blow-up")] if tr.t_star is not None else []
    line_plot(run.path("K.svg"), [(t, tr.column("K"), "K(u)"), (t, np.full_like(t, gs.K), "K(Q)")], "kinetic energy", "|t|", "K", markers=marks)
    line_plot(run.path("L4.svg"), [(t, tr.l4, "L4 norm")], "L4 norm", "|t|", "||u||_4", logy=True, markers=marks)
    run.checks.update(status=tr.status, t_star=tr.t_star, drift=drift)
    print(f"status={tr.status} t*={tr.t_star} steps={tr.steps} drift E={drift['energy']:.2e}")
    if tr.status == "diverged":
        raise FloatingPointError("evolution produced non-finite values")
    if tr.status == "completed" and max(drift.values()) > 1e-6:
        raise Falsified(f"conservation drift {max(drift.values()):.2e} exceeds 1e-6")


def cmd_special(run: Run) -> None:
    from .evolution import EvolutionConfig
    from .linearized import assemble
    from .special import verify_special
    from .spectrum import compute_lambda1, refine_lambda1
    from .states import balanced_grid, ground_state
    from .svgplot import line_plot

    c = run.cfg
    g0 = balanced_grid(256)
    lam0 = compute_lambda1(assemble(c.masses, g0, ground_state(c.masses, g0, discrete=True))).lambda1
    grid = run.grid("forward", balanced_grid(c.n))
    gs = ground_state(c.masses, grid, discrete=True)
    ops = assemble(c.masses, grid, gs)
    pair = refine_lambda1(ops, lam0)
    bgrid = run.grid("backward", make_grid(math.inf, c.backward_n, "algebraic-stretch", c.backward_stretch))
    ecfg = EvolutionConfig(dt=c.forward_dt, iterations=c.iterations, fp_tol=c.fp_tol, blowup_K_factor=c.blowup_factor, sample_every=c.sample_every)
    rep = verify_special(
        c.a,
        c.series_order,
        pair,
        ops,
        cfg=ecfg,
        seed_tol=c.seed_tol * gs.K,
        forward_periods=c.forward_periods,
        backward_grid=bgrid,
        backward_t_end=c.backward_t_end,
        backward_dt=c.backward_dt,
        run_backward=c.backward and c.a != 0,
        track_modulation=c.a != 0,
    )
    rep.to_json(run.path("scenario.json"))
    fwd = rep.traces["forward"]
    fwd.to_csv(run.path("forward_trace.csv"))
    if "modulation" in rep.traces:
        rep.traces["modulation"].to_csv(run.path("modulation.csv"))
    lam = pair.lambda1
    t = fwd.times
    d = fwd.column("delta_abs")
    ref = d[0] * np.exp(-lam * t) if d[0] > 0 else np.zeros_like(t)
    line_plot(run.path("delta_decay.svg"), [(t, d, "delta(t)"), (t, ref, "exp(-lambda1 t)")], f"forward run, a = {c.a:g}", "t - t0", "|K(u) - K(Q)|", logy=c.a != 0)
    series = [(t, fwd.column("K"), "forward K")]
    marks = []
    if "backward" in rep.traces:
        b = rep.traces["backward"]
        b.to_csv(run.path("backward_trace.csv"))
        series.append((b.times, b.column("K"), "backward K"))
        if b.t_star is not None:
            marks.append((b.t_star, "blow-up"))
    line_plot(run.path("K.svg"), series, "kinetic energy", "t - t0", "K", markers=marks)
    run.checks.update(rep.to_dict())
    fr = rep.forward.get("delta_rate_over_lambda1")
    if c.a == 0:
        drift = float(np.max(d)) / gs.K
        print(f"lambda1={lam:.7f} stationary run, max |K(u)-K(Q)|/K(Q) = {drift:.2e}")
        if drift > 1e-6:
            raise Falsified("stationary run drifted from Q")
        return
    print(f"lambda1={lam:.7f} t0={rep.t0:.3f} forward rate/lambda1={fr:.4f} backward={rep.backward}")
    problems = []
    if not 0.9 <= fr <= 1.1:
        problems.append(f"forward decay rate/lambda1 = {fr:.3f}")
    if c.backward:
        b = rep.backward
        if c.a > 0 and b.get("status") != "blowup-detected":
            problems.append(f"backward run for a>0 ended with {b.get('status')}")
        if c.a < 0 and b.get("scattering", {}).get("verdict") != "scattering-consistent":
            problems.append("backward run for a<0 is not scattering-consistent")
    if problems:
        raise Falsified("; ".join(problems))


def cmd_virial_scan(run: Run) -> None:
    from .states import balanced_grid, ground_state
    from .virial import DEFAULT_TRIPLES, f_infinity_identity, identity_scan, scan_datum, scan_heatmap

    c = run.cfg
    triples = c.triples if c.triples is not None else DEFAULT_TRIPLES
    if c.scan_initial == "gaussian":
        grid = _grid(run)
        u0 = scan_datum(grid)
        init = None
    else:
        # exact discrete equilibria, so the flow is stationary to round-off
        grid = run.grid("main", balanced_grid(c.n))
        u0, init = None, lambda m: ground_state(m, grid, discrete=True).Qvec
    res = identity_scan(u0, triples, c.virial_R, c.scan_dt, c.scan_t_end, grid=grid, profile=c.weight_profile, initial=init)
    res.to_csv(run.path("virial_scan.csv"))
    scan_heatmap(res, run.path("virial_heatmap.svg"))
    probe = u0 if u0 is not None else ground_state(c.masses, grid).Qvec
    F, rhs = f_infinity_identity(probe, c.masses)
    summary = {
        "winner": res.winner,
        "R": c.virial_R,
        "F_inf": F,
        "four_K_minus_4P": rhs,
        "F_inf_rel_gap": abs(F - rhs) / max(abs(rhs), 1e-300),
        "rows": [
            {"masses": str(r.masses), "status": r.status, "defect_V": r.defect_V, "defect_I": r.defect_I, "max_abs_dVdt": r.max_abs_dVdt, "abs_defect_V": r.abs_defect_V, "abs_defect_I": r.abs_defect_I}
            for r in res.rows
        ],
    }
    run.write_json("scan_summary.json", summary)
    run.checks.update(winner=res.winner, F_inf_rel_gap=summary["F_inf_rel_gap"])
    for r in res.rows:
        print(f"{str(r.masses):>14}  paper={str(r.paper_condition):5} galilean={str(r.galilean_condition):5} defect_V={r.defect_V:.2e} defect_I={r.defect_I:.2e} {r.status}")
    print(f"condition zeroing dV/dt - I_R: {res.winner}")
    if c.scan_initial == "gaussian" and res.winner is None:
        raise Falsified("no mass condition separates the virial defects")


def _random_perturbation(grid: RadialGrid, gs, seed: int, modes: int):
    from .radial import Field3, h1_norm3

    rng = np.random.default_rng(seed)
    r = grid.r
    vals = np.zeros((3, grid.n), dtype=complex)
    for _ in range(modes):
        width = rng.uniform(1.0, 4.0)
        coef = rng.normal(size=3) + 1j * rng.normal(size=3)
        vals += coef[:, None] * np.exp(-((r / width) ** 2))[None, :]
    w = Field3(grid, vals)
    return w * (h1_norm3(gs.Qvec) / h1_norm3(w))


def cmd_modulate(run: Run) -> None:
    from .evolution import EvolutionConfig, evolve
    from .linearized import assemble
    from .modulation import modulate, threshold_perturbation, track
    from .radial import h1_norm3
    from .states import ground_state
    from .svgplot import line_plot

    c = run.cfg
    grid = _grid(run)
    gs = ground_state(c.masses, grid)
    ops = assemble(c.masses, grid, gs)
    w = _random_perturbation(grid, gs, c.seed, c.perturbation_modes)
    u0 = threshold_perturbation(gs, w, c.epsilon)
    st0 = modulate(u0, gs, ops)
    ecfg = EvolutionConfig(dt=c.dt, t_end=c.t_end, direction=c.direction, iterations=c.iterations, fp_tol=c.fp_tol, blowup_K_factor=c.blowup_factor, sample_every=c.sample_every, store_fields=True)
    tr = evolve(u0, ecfg, c.masses, gs)
    ms = track(tr.fields, tr.times, gs, ops)
    ms.to_csv(run.path("modulation.csv"))
    # delta in units of K(Q), h relative to ||Q||
    hQ = h1_norm3(gs.Qvec)
    d_rel = st0.delta / gs.K
    ratios = {"alpha_over_delta": abs(st0.alpha) / d_rel, "h_over_delta": st0.h_norm / hQ / d_rel}
    run.write_json(
        "modulation_summary.json",
        {
            "epsilon": c.epsilon,
            "seed": c.seed,
            "initial": {"eta": st0.eta, "theta": st0.theta, "mu": st0.mu, "alpha": st0.alpha, "delta": st0.delta, "h_norm": st0.h_norm, "residuals": st0.residuals},
            "comparability": ratios,
            "series_status": ms.status,
            "derivative_bound": ms.derivative_bound,
            "trace_status": tr.status,
        },
    )
    t = ms.times
    line_plot(
        run.path("modulation.svg"),
        [(t, ms.column("delta"), "delta"), (t, np.abs(ms.column("alpha")), "|alpha|"), (t, ms.column("h_norm"), "||h||")],
        "modulation parameters",
        "t",
        "size",
        logy=True,
    )
    run.checks.update(comparability=ratios, series_status=ms.status, norm_Q=hQ)
    print(f"delta={st0.delta:.3e} |alpha|={abs(st0.alpha):.3e} ||h||={st0.h_norm:.3e} tracked {len(t)} samples ({ms.status})")
    # comparability is only claimed up to constants; flag order-of-magnitude breaks
    if not all(0.1 <= v <= 10 for v in ratios.values()):
        raise Falsified(f"modulation parameters not comparable: {ratios}")


COMMANDS = {
    "ground-state": cmd_ground_state,
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "special": cmd_special,
    "virial-scan": cmd_virial_scan,
    "modulate": cmd_modulate,
}

NUMERICAL_ERRORS = (RuntimeError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nls3lab", description="Radial three-wave Schrodinger system laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key-value config file")
        sp.add_argument("--out", default=None, help="output directory (default out/<command>)")
        sp.add_argument("--n", type=int, default=None, help="radial nodes")
        sp.add_argument("--rmax", type=float, default=None, help="Dirichlet radius (inf allowed)")
        sp.add_argument("--masses", default=None, help="m1,m2,m3")
        sp.add_argument("--seed", type=int, default=None, help="random seed")
    return p


def _resolve(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig()
    masses = None
    if args.masses is not None:
        try:
            masses = MassTriple.parse(args.masses)
        except ValueError as exc:
            raise ConfigError(f"--masses: {exc}") from None
    n = args.n if args.n is not None else (cfg.n or DEFAULT_N[args.command])
    try:
        return override(cfg, n=n, r_max=args.rmax, masses=masses, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or Path("out") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(args.command, cfg, out)
    code, msg = EXIT_OK, "ok"
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            COMMANDS[args.command](run)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except Falsified as exc:
        code, msg = EXIT_FALSIFIED, f"scenario falsified: {exc}"
    except np.linalg.LinAlgError as exc:
        code, msg = EXIT_NUMERICAL, f"numerical failure: {type(exc).__name__}: {exc}"
    except ValueError as exc:
        code, msg = EXIT_CONFIG, f"invalid argument: {exc}"
    except NUMERICAL_ERRORS as exc:
        code, msg = EXIT_NUMERICAL, f"numerical failure: {type(exc).__name__}: {exc}"
    finally:
        run.manifest(code, msg)
    if code:
        print(msg, file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
