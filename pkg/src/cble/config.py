"""Flat sectioned ``key = value`` experiment configuration.

Every key has an explicit default; ``emit`` writes all of them, so the echo of
a resolved configuration reproduces a run exactly. ``parse(emit(c)) == c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Tuple

from .branching import FiniteAtoms, Stable, diffusive
from .errors import CbleError, ConfigError
from .levy_env import Atoms, LevyEnvSpec, TwoSidedExp
from .rng import DEFAULT_SEED


def parse_grid(text: str) -> Tuple[float, ...]:
    """``a:b:step`` (inclusive of b) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ValueError("grid must be a:b:step with step > 0 and b >= a")
        a, b, step = parts
        n = int(math.floor((b - a) / step + 1e-9))
        return tuple(a + i * step for i in range(n + 1))
    vals = tuple(float(p) for p in text.split(",") if p.strip())
    if not vals:
        raise ValueError("empty grid")
    return vals


def parse_pairs(text: str) -> Tuple[Tuple[float, float], ...]:
    """``u:v, u:v, ...`` pairs (empty text gives no pairs)."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        u, v = item.split(":")
        out.append((float(u), float(v)))
    return tuple(out)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{u!r}:{v!r}" for u, v in value)
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class EnvironmentSection:
    drift: float = -0.5
    sigma: float = 1.0
    jump_rate: float = 0.0
    jump_kind: str = "none"  # none | twosided_exp | atoms
    jump_params: str = ""  # "p_up, eta_up, eta_down" or "value:prob, ..."


@dataclass(frozen=True)
class BranchingSection:
    kind: str = "stable"  # stable | diffusive | atoms
    C: float = 1.0
    beta: float = 0.5
    rho2: float = 1.0
    atoms: Tuple[Tuple[float, float], ...] = ()
    psi_prime0: float = 0.0


@dataclass(frozen=True)
class RunSection:
    z: float = 1.0
    x: float = 1.0
    T: float = 10.0
    t_grid: Tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0)
    x_grid: Tuple[float, ...] = tuple(0.25 * i for i in range(65))
    n_paths: int = 100_000
    seed: int = DEFAULT_SEED
    threads: int = 1
    lam: float = 1.0
    max_step: float = 0.02
    dt: float = 0.01
    ode_tol: float = 1e-9
    root_tol: float = 1e-12
    eps_sign: float = 1e-10
    h: float = 0.04
    T_lad: float = 20_000.0
    renewal_paths: int = 2000
    drift_from: float = 40.0


@dataclass(frozen=True)
class OutputSection:
    dir: str = "."
    prefix: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    branching: BranchingSection = field(default_factory=BranchingSection)
    run: RunSection = field(default_factory=RunSection)
    output: OutputSection = field(default_factory=OutputSection)

    def env_spec(self) -> LevyEnvSpec:
        return build_env(self.environment)

    def mechanism(self):
        return build_mechanism(self.branching)


SECTIONS = {"environment": EnvironmentSection, "branching": BranchingSection,
            "run": RunSection, "output": OutputSection}

# key -> (predicate, reason)
CONSTRAINTS = {
    ("environment", "sigma"): (lambda v: v >= 0, "must be >= 0"),
    ("environment", "jump_rate"): (lambda v: v >= 0, "must be >= 0"),
    ("environment", "jump_kind"): (lambda v: v in ("none", "twosided_exp", "atoms"),
                                   "must be one of none, twosided_exp, atoms"),
    ("branching", "kind"): (lambda v: v in ("stable", "diffusive", "atoms"),
                            "must be one of stable, diffusive, atoms"),
    ("branching", "C"): (lambda v: v > 0, "must be > 0"),
    ("branching", "beta"): (lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    ("branching", "rho2"): (lambda v: v >= 0, "must be >= 0"),
    ("run", "z"): (lambda v: v >= 0, "must be >= 0"),
    ("run", "T"): (lambda v: v > 0, "must be > 0"),
    ("run", "n_paths"): (lambda v: v >= 1, "must be >= 1"),
    ("run", "threads"): (lambda v: v >= 1, "must be >= 1"),
    ("run", "lam"): (lambda v: v >= 0, "must be >= 0"),
    ("run", "max_step"): (lambda v: v > 0, "must be > 0"),
    ("run", "dt"): (lambda v: v > 0, "must be > 0"),
    ("run", "ode_tol"): (lambda v: v > 0, "must be > 0"),
    ("run", "root_tol"): (lambda v: v > 0, "must be > 0"),
    ("run", "eps_sign"): (lambda v: v > 0, "must be > 0"),
    ("run", "h"): (lambda v: v > 0, "must be > 0"),
    ("run", "T_lad"): (lambda v: v > 0, "must be > 0"),
    ("run", "renewal_paths"): (lambda v: v >= 2, "must be >= 2"),
    ("run", "t_grid"): (lambda v: all(t > 0 for t in v), "times must be > 0"),
    ("run", "x_grid"): (lambda v: all(x >= 0 for x in v), "points must be >= 0"),
}


def _convert(section_cls, key, raw):
    ftype = {f.name: f.type for f in fields(section_cls)}[key]
    if ftype == "float":
        return float(raw)
    if ftype == "int":
        val = float(raw)
        if val != int(val):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(val)
    if ftype == "str":
        return raw
    if key == "atoms":
        return parse_pairs(raw)
    return parse_grid(raw)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; all problems are collected into one ``ConfigError``."""
    errors: List[Tuple[int, str, str]] = []
    values: Dict[str, Dict[str, object]] = {s: {} for s in SECTIONS}
    seen: Dict[Tuple[str, str], int] = {}
    section_line: Dict[str, int] = {}
    section = None
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped or stripped.startswith(";"):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                errors.append((ln, stripped, "malformed section header"))
                section = None
                continue
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                errors.append((ln, name, "unknown section"))
                section = None
                continue
            section = name
            section_line.setdefault(name, ln)
            continue
        if "=" not in stripped:
            errors.append((ln, stripped, "expected 'key = value'"))
            continue
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if section is None:
            errors.append((ln, key, "key outside of a known section"))
            continue
        cls = SECTIONS[section]
        if key not in {f.name for f in fields(cls)}:
            errors.append((ln, f"{section}.{key}", "unknown key"))
            continue
        if (section, key) in seen:
            errors.append((ln, f"{section}.{key}",
                           f"duplicate key (first defined on line {seen[(section, key)]}, "
                           f"again on line {ln})"))
            continue
        seen[(section, key)] = ln
        try:
            val = _convert(cls, key, raw)
        except (ValueError, TypeError) as exc:
            errors.append((ln, f"{section}.{key}", f"type mismatch: {exc}"))
            continue
        check = CONSTRAINTS.get((section, key))
        if check and not check[0](val):
            errors.append((ln, f"{section}.{key}", f"constraint violated: {check[1]} (got {raw})"))
            continue
        values[section][key] = val
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(**{s: SECTIONS[s](**values[s]) for s in SECTIONS})
    try:
        cfg.env_spec()
    except (CbleError, ValueError) as exc:
        raise ConfigError([(section_line.get("environment", 0), "environment", str(exc))])
    try:
        cfg.mechanism()
    except (CbleError, ValueError) as exc:
        raise ConfigError([(section_line.get("branching", 0), "branching", str(exc))])
    return cfg


def emit_config(cfg: ExperimentConfig) -> str:
    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        sec = getattr(cfg, name)
        for f in fields(sec):
            out.append(f"{f.name} = {_fmt(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def with_overrides(cfg: ExperimentConfig, section: str, **kw) -> ExperimentConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    if not kw:
        return cfg
    return replace(cfg, **{section: replace(getattr(cfg, section), **kw)})


def build_env(sec: EnvironmentSection) -> LevyEnvSpec:
    if sec.jump_kind == "none":
        return LevyEnvSpec(sec.drift, sec.sigma, sec.jump_rate, None)
    if sec.jump_kind == "twosided_exp":
        params = [float(p) for p in sec.jump_params.split(",") if p.strip()]
        if len(params) != 3:
            raise ValueError("twosided_exp jump_params must be 'p_up, eta_up, eta_down'")
        law = TwoSidedExp(*params)
    else:
        law = Atoms(parse_pairs(sec.jump_params))
    return LevyEnvSpec(sec.drift, sec.sigma, sec.jump_rate, law)


def build_mechanism(sec: BranchingSection):
    if sec.kind == "stable":
        return Stable(sec.C, sec.beta, sec.psi_prime0)
    if sec.kind == "diffusive":
        return diffusive(sec.rho2, sec.psi_prime0)
    return FiniteAtoms(sec.rho2, sec.atoms, sec.psi_prime0)
