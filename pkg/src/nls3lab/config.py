"""Key-value experiment configuration.

One ``key = value`` pair per line; ``#`` starts a comment.  Unknown keys,
duplicate keys and malformed values are rejected with the offending line
number.  Every key has a default, listed in ``FIELDS``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .radial import MassTriple


class ConfigError(ValueError):
    """Configuration problem; ``str`` carries the line/key diagnostic."""


def _float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "infinity", "+inf"):
        return math.inf
    v = float(t)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(text: str) -> int:
    return int(text.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _masses(text: str) -> MassTriple:
    return MassTriple.parse(text)


def _triples(text: str) -> tuple:
    items = [p.strip() for p in text.split(";") if p.strip()]
    if not items:
        raise ValueError("empty mass lattice")
    return tuple(MassTriple.parse(p) for p in items)


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t

    return parse


def _str(text: str) -> str:
    return text.strip()


def _floats(text: str) -> tuple:
    return tuple(_float(p) for p in text.split(",") if p.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    # physics and grid
    masses: MassTriple = MassTriple(1.0, 1.0, 3.0)
    n: int = 0  # 0 selects the per-command default
    r_max: float = math.inf
    mapping: str = "algebraic-stretch"
    stretch: float = 8.0
    seed: int = 0
    # evolution
    dt: float = 0.01
    t_end: float = 5.0
    direction: str = "forward"
    iterations: int = 30
    fp_tol: float = 1e-13
    blowup_factor: float = 20.0
    sample_every: int = 10
    snapshot_every: int = 0
    initial: str = "scaled-ground-state"
    amplitude: float = 0.9
    initial_file: str = ""
    # special solutions
    a: float = -1.0
    series_order: int = 6
    seed_tol: float = 1e-10
    forward_periods: float = 6.0
    forward_dt: float = 0.05
    backward: bool = True
    backward_n: int = 2048
    backward_stretch: float = 32.0
    backward_dt: float = 0.1
    backward_t_end: float = 5000.0
    # virial scan
    triples: tuple | None = None  # None selects the built-in lattice
    virial_R: float = 3.0
    scan_dt: float = 2e-3
    scan_t_end: float = 0.3
    weight_profile: str = "quintic"
    scan_initial: str = "gaussian"
    # modulation
    epsilon: float = 0.01
    perturbation_modes: int = 4


# key -> (parser, help)
FIELDS = {
    "masses": (_masses, "mass triple m1,m2,m3"),
    "n": (_int, "number of radial nodes"),
    "r_max": (_float, "Dirichlet radius (inf for the stretched map)"),
    "mapping": (_choice("algebraic-stretch", "uniform"), "grid mapping"),
    "stretch": (_float, "stretch length L of r = L s / (1 - s)"),
    "seed": (_int, "random seed for perturbation suites"),
    "dt": (_float, "time step"),
    "t_end": (_float, "integration window length"),
    "direction": (_choice("forward", "backward"), "time direction"),
    "iterations": (_int, "fixed-point iteration cap per step"),
    "fp_tol": (_float, "fixed-point tolerance"),
    "blowup_factor": (_float, "blow-up when K exceeds this multiple of K(Q)"),
    "sample_every": (_int, "steps between trace samples"),
    "snapshot_every": (_int, "samples between binary snapshots (0: none)"),
    "initial": (_choice("scaled-ground-state", "gaussian", "file"), "initial datum for evolve"),
    "amplitude": (_float, "scale factor of the initial datum"),
    "initial_file": (_str, "CSV or binary snapshot used when initial = file"),
    "a": (_float, "sign/size of the unstable-mode coefficient"),
    "series_order": (_int, "order k of the exponential series"),
    "seed_tol": (_float, "series residual tolerance at t0, in units of K(Q)"),
    "forward_periods": (_float, "forward window in units of 1/lambda1"),
    "forward_dt": (_float, "time step of the forward special run"),
    "backward": (_bool, "also run the backward special run"),
    "backward_n": (_int, "nodes of the backward (dispersive) grid"),
    "backward_stretch": (_float, "stretch length of the backward grid"),
    "backward_dt": (_float, "time step of the backward run"),
    "backward_t_end": (_float, "backward window length"),
    "triples": (_triples, "virial scan lattice, 'm1,m2,m3; m1,m2,m3; ...'"),
    "virial_R": (_float, "virial cutoff radius (inf allowed)"),
    "scan_dt": (_float, "time step of virial scan runs"),
    "scan_t_end": (_float, "length of virial scan runs"),
    "weight_profile": (_choice("quintic", "septic", "curvature-bounded"), "virial blend profile"),
    "scan_initial": (_choice("gaussian", "ground-state"), "initial datum of virial scan runs"),
    "epsilon": (_float, "threshold perturbation size for modulate"),
    "perturbation_modes": (_int, "random Gaussian modes in the modulate perturbation"),
}

assert set(FIELDS) == {f.name for f in fields(ExperimentConfig)}


def _validate(cfg: ExperimentConfig) -> None:
    checks = [
        (cfg.n == 0 or cfg.n >= 16, "n must be >= 16 (or 0 for the command default)"),
        (cfg.r_max > 0, "r_max must be positive"),
        (cfg.mapping != "uniform" or math.isfinite(cfg.r_max), "uniform mapping needs a finite r_max"),
        (cfg.stretch > 0, "stretch must be positive"),
        (cfg.dt > 0, "dt must be positive"),
        (cfg.t_end >= 0, "t_end must be nonnegative"),
        (cfg.iterations >= 1, "iterations must be >= 1"),
        (cfg.sample_every >= 1, "sample_every must be >= 1"),
        (1 <= cfg.series_order <= 8, "series_order must be in 1..8"),
        (cfg.seed_tol > 0, "seed_tol must be positive"),
        (cfg.forward_periods > 0, "forward_periods must be positive"),
        (cfg.virial_R > 0, "virial_R must be positive"),
        (cfg.scan_dt > 0 and cfg.scan_t_end > 4 * cfg.scan_dt, "scan window must cover at least 5 steps"),
        (cfg.initial != "file" or cfg.initial_file, "initial = file needs initial_file"),
        (cfg.perturbation_modes >= 1, "perturbation_modes must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse config text; raises ``ConfigError`` with ``source:line`` context."""
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        parser, _ = FIELDS[key]
        try:
            values[key] = parser(val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        seen[key] = lineno
    cfg = ExperimentConfig(**values)
    _validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_text(text, str(path))


def override(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply non-``None`` overrides and re-validate."""
    kw = {k: v for k, v in kw.items() if v is not None}
    out = replace(cfg, **kw)
    _validate(out)
    return out


def _render(v) -> str:
    if isinstance(v, MassTriple):
        return str(v)
    if isinstance(v, tuple):
        return "; ".join(_render(x) for x in v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def to_text(cfg: ExperimentConfig) -> str:
    """Round-trippable rendering (``parse_text(to_text(c)) == c``)."""
    # unset optional keys are omitted so the text parses back to the same config
    return "".join(f"{f.name} = {_render(getattr(cfg, f.name))}\n" for f in fields(cfg) if getattr(cfg, f.name) is not None)


def as_dict(cfg: ExperimentConfig) -> dict:
    return {f.name: _render(getattr(cfg, f.name)) for f in fields(cfg)}


__all__ = ["FIELDS", "ConfigError", "ExperimentConfig", "as_dict", "load", "override", "parse_text", "to_text"]
