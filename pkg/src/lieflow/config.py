"""Flat key = value run configuration and its resolution into runnable objects."""
from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .containers import ContainerError, read_field
from .extensions import AnisotropySpec, BracketForcing, ContractViolation, TravellingBracketForcing, register_forcing
from .galerkin_flow import ConfigError, FlowParams
from .lie_algebra import BUILTINS, AlgebraError, LieAlgebra, load_algebra
from .spectral_domain import BasisError, DomainSpec, ModeBasis, build_basis
from .stray_field import DemagError, DemagOperator

SECTION = "run"

# config key -> dataclass attribute
KEYS = {
    "mode": "mode",
    "algebra": "algebra",
    "algebra.scale": "algebra_scale",
    "domain.kind": "domain_kind",
    "domain.lengths": "domain_lengths",
    "domain.grid": "domain_grid",
    "N": "N",
    "epsilon": "epsilon",
    "alpha": "alpha",
    "alpha0": "alpha0",
    "dt": "dt",
    "T": "T",
    "scheme": "scheme",
    "anisotropy.kind": "anisotropy_kind",
    "anisotropy.lambdas": "anisotropy_lambdas",
    "anisotropy.table": "anisotropy_table",
    "anisotropy.delta0": "anisotropy_delta0",
    "demag": "demag",
    "demag.pad_factor": "demag_pad_factor",
    "forcing": "forcing",
    "forcing.vector": "forcing_vector",
    "forcing.wavevector": "forcing_wavevector",
    "forcing.omega": "forcing_omega",
    "coupling": "coupling",
    "initial": "initial",
    "output.stride": "output_stride",
    "output.dir": "output_dir",
    "seed": "seed",
    "dealias": "dealias",
    "tolerance.l2": "tolerance_l2",
    "tolerance.verify": "tolerance_verify",
}
ATTRS = {v: k for k, v in KEYS.items()}


@dataclass(frozen=True)
class RunConfig:
    mode: str = "llg_boundary"
    algebra: str = "so3"
    algebra_scale: float | None = None
    domain_kind: str = "neumann_box"
    domain_lengths: tuple[float, ...] = (math.pi, math.pi)
    domain_grid: tuple[int, ...] = (32, 32)
    N: int = 16
    epsilon: float = 0.05
    alpha: float = 0.0
    alpha0: float = 1.0
    dt: float = 1e-3
    T: float = 1.0
    scheme: str = "rk4"
    anisotropy_kind: str = "none"
    anisotropy_lambdas: tuple[float, ...] = ()
    anisotropy_table: tuple[tuple[float, ...], ...] = ()
    anisotropy_delta0: float = 0.25
    demag: bool = False
    demag_pad_factor: int = 2
    forcing: str = "none"
    forcing_vector: tuple[float, ...] = ()
    forcing_wavevector: tuple[float, ...] = ()
    forcing_omega: float = 0.0
    coupling: str = "1"
    initial: str = "sphere_wrap"
    output_stride: int = 10
    output_dir: str = "out"
    seed: int = 0
    dealias: bool = False
    tolerance_l2: float = 1e-6
    tolerance_verify: float = 0.1

    def to_text(self) -> str:
        """Canonical serialization: every key, fixed order, round-trip exact floats."""
        lines = []
        for key, attr in KEYS.items():
            value = getattr(self, attr)
            if value is None:
                continue
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """sha256 of the canonical text without output.dir, so relocated reruns share a hash."""
        lines = [ln for ln in self.to_text().splitlines() if not ln.startswith("output.dir ")]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()


# ---------------------------------------------------------------- value parsing

_PI = re.compile(r"^([+-]?[0-9.eE+-]*?)\s*\*?\s*pi$")


def _number(text: str) -> float:
    text = text.strip().lower()
    match = _PI.match(text)
    if match:
        coeff = match.group(1)
        return (float(coeff) if coeff not in ("", "+", "-") else float(coeff + "1")) * math.pi
    if "/" in text:
        num, den = text.split("/", 1)
        return _number(num) / _number(den)
    return float(text)


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    return tuple(_number(t) for t in text.split(",")) if text else ()


def _ints(text: str) -> tuple[int, ...]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ValueError("expected integers")
    return tuple(int(v) for v in vals)


def _table(text: str) -> tuple[tuple[float, ...], ...]:
    text = text.strip()
    return tuple(_floats(row) for row in text.split(";")) if text else ()


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    v = _number(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


_PARSERS = {
    "algebra_scale": _number, "domain_lengths": _floats, "domain_grid": _ints, "N": _int,
    "epsilon": _number, "alpha": _number, "alpha0": _number, "dt": _number, "T": _number,
    "anisotropy_lambdas": _floats, "anisotropy_table": _table, "anisotropy_delta0": _number,
    "demag": _bool, "demag_pad_factor": _int, "forcing_vector": _floats, "forcing_wavevector": _floats,
    "forcing_omega": _number, "output_stride": _int, "seed": _int, "dealias": _bool,
    "tolerance_l2": _number, "tolerance_verify": _number,
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_format(row) for row in value)
        return ", ".join(_format(v) for v in value)
    return str(value)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse flat ``key = value`` lines; unknown keys and bad values name the offending key."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("config", f"malformed configuration: {exc}") from exc
    values = {}
    for key, raw in parser[SECTION].items():
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        attr = KEYS[key]
        try:
            values[attr] = _PARSERS.get(attr, str.strip)(raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from exc
    for key, value in (overrides or {}).items():
        values[KEYS.get(key, key)] = value
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


# ---------------------------------------------------------------- resolution

@dataclass
class Scenario:
    config: RunConfig
    algebra: LieAlgebra
    domain: DomainSpec
    basis: ModeBasis
    params: FlowParams
    u0: np.ndarray
    demag: DemagOperator | None = None


def _coupling(cfg: RunConfig, domain: DomainSpec):
    text = cfg.coupling.strip().lower()
    if text.startswith("sine:"):
        try:
            parts = _floats(text[5:])
        except ValueError as exc:
            raise ConfigError("coupling", str(exc)) from exc
        if len(parts) not in (2, 3):
            raise ConfigError("coupling", "sine:a,b[,axis] gives f = a + b sin(2 pi x_axis / L)")
        axis = int(parts[2]) if len(parts) == 3 else 0
        if not 0 <= axis < domain.n:
            raise ConfigError("coupling", f"axis {axis} out of range")
        x = domain.mesh()[axis]
        f = parts[0] + parts[1] * np.sin(2 * np.pi * x / domain.lengths[axis])
        if np.min(f) <= 0:
            raise ConfigError("coupling", "coupling function must be positive")
        return f
    try:
        c = _number(text)
    except ValueError as exc:
        raise ConfigError("coupling", f"expected a number or sine:a,b[,axis], got {cfg.coupling!r}") from exc
    if not c > 0:
        raise ConfigError("coupling", "must be positive")
    return None if c == 1.0 else c


def _unit(algebra: LieAlgebra, v):
    return v / algebra.norm(v)[..., None]


def _angles_field(algebra, theta, phi):
    if algebra.dim != 3:
        raise ConfigError("initial", f"this profile needs a 3-dimensional algebra, got {algebra.dim}")
    v = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], -1)
    return _unit(algebra, v)


def initial_field(cfg: RunConfig, algebra: LieAlgebra, domain: DomainSpec, base_dir: Path) -> np.ndarray:
    """Named profiles: uniform:theta,phi (degrees), sphere_wrap, polar_waves, axis:k,
    random_smooth[:modes], snapshot:path."""
    name, _, arg = cfg.initial.strip().partition(":")
    mesh = domain.mesh()
    L = domain.lengths
    x = 2 * np.pi * mesh[0] / L[0]
    y = 2 * np.pi * mesh[1] / L[1] if domain.n > 1 else np.full(domain.grid, np.pi / 2)
    try:
        if name == "uniform":
            th, ph = (np.deg2rad(v) for v in _floats(arg))
            return _angles_field(algebra, np.full(domain.grid, th), np.full(domain.grid, ph))
        if name == "sphere_wrap":
            return _angles_field(algebra, y, x)
        if name == "polar_waves":
            cx, cy = np.cos(x / 2), (np.cos(y / 2) if domain.n > 1 else 1.0)
            return _angles_field(algebra, 0.6 * cx * cy + 0.3, cy + 0.5 * np.cos(x))
        if name == "axis":
            k = int(arg or 0)
            if not 0 <= k < algebra.dim:
                raise ConfigError("initial", f"axis index {k} out of range")
            v = np.zeros(domain.grid + (algebra.dim,))
            v[..., k] = 1.0
            return _unit(algebra, v)
        if name == "random_smooth":
            return _random_smooth(algebra, domain, cfg.seed, int(arg or 4))
        if name == "snapshot":
            path = Path(arg)
            if not path.is_absolute():
                path = base_dir / path
            c = read_field(path)
            expected = domain.grid + (algebra.dim,)
            if c.data.shape != expected:
                raise ConfigError("initial", f"snapshot {path} has shape {c.data.shape}, expected {expected}")
            return c.data
    except ContainerError as exc:
        raise ConfigError("initial", str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("initial", f"cannot parse {cfg.initial!r}: {exc}") from exc
    raise ConfigError("initial", f"unknown profile {name!r}")


def _random_smooth(algebra, domain, seed, modes):
    """A unit field built from a few low Fourier harmonics around a fixed direction."""
    rng = np.random.default_rng(seed)
    v = np.zeros(domain.grid + (algebra.dim,))
    v[..., 0] = 1.5
    mesh = domain.mesh()
    for _ in range(modes):
        k = rng.integers(0, 3, domain.n)
        phase = sum(2 * np.pi * kk * xx / L for kk, xx, L in zip(k, mesh, domain.lengths)) + rng.uniform(0, 2 * np.pi)
        v += np.cos(phase)[..., None] * rng.normal(0, 0.5, algebra.dim)
    return _unit(algebra, v)


def _anisotropy(cfg: RunConfig):
    kind = cfg.anisotropy_kind
    if kind == "none":
        return None
    try:
        if kind == "quadratic_diagonal":
            return AnisotropySpec.diagonal(cfg.anisotropy_lambdas, cfg.anisotropy_delta0)
        if kind == "custom_table":
            return AnisotropySpec("custom_table", (), np.array(cfg.anisotropy_table, dtype=float), cfg.anisotropy_delta0)
    except (ContractViolation, ValueError) as exc:
        raise ConfigError("anisotropy.table" if kind == "custom_table" else "anisotropy.lambdas", str(exc)) from exc
    raise ConfigError("anisotropy.kind", f"must be none, quadratic_diagonal or custom_table, got {kind!r}")


def _forcing(cfg: RunConfig, algebra: LieAlgebra, domain: DomainSpec):
    kind = cfg.forcing
    if kind == "none":
        return None
    if kind not in ("bracket", "travelling"):
        raise ConfigError("forcing", f"must be none, bracket or travelling, got {kind!r}")
    if len(cfg.forcing_vector) != algebra.dim:
        raise ConfigError("forcing.vector", f"needs {algebra.dim} components")
    a = tuple(cfg.forcing_vector)
    if kind == "bracket":
        func = BracketForcing(algebra, a)
    else:
        if len(cfg.forcing_wavevector) != domain.n:
            raise ConfigError("forcing.wavevector", f"needs {domain.n} components")
        func = TravellingBracketForcing(algebra, a, tuple(cfg.forcing_wavevector), cfg.forcing_omega)
    try:
        return register_forcing(func, algebra, domain.lengths, kind, seed=cfg.seed, horizon=max(cfg.T, 1e-12))
    except ContractViolation as exc:
        raise ConfigError("forcing", str(exc)) from exc


def resolve(cfg: RunConfig, base_dir=".", with_initial: bool = True) -> Scenario:
    """Build algebra, domain, basis, parameters and initial field, or raise ConfigError."""
    base_dir = Path(base_dir)
    try:
        spec = cfg.algebra
        if spec not in BUILTINS and not Path(spec).is_absolute():
            spec = str(base_dir / spec)
        algebra = load_algebra(spec, cfg.algebra_scale)
    except (AlgebraError, ValueError) as exc:
        raise ConfigError("algebra.scale" if "scale" in str(exc) else "algebra", str(exc)) from exc
    if len(cfg.domain_lengths) != len(cfg.domain_grid):
        raise ConfigError("domain.lengths", "must have one entry per grid axis")
    try:
        domain = DomainSpec(cfg.domain_kind, cfg.domain_lengths, cfg.domain_grid)
    except BasisError as exc:
        field_name = "domain.kind" if "kind" in str(exc) else "domain.grid"
        raise ConfigError(field_name, str(exc)) from exc
    coupling = _coupling(cfg, domain) if cfg.domain_kind == "flat_torus" else None
    if cfg.domain_kind != "flat_torus" and cfg.coupling.strip() not in ("1", "1.0"):
        raise ConfigError("coupling", "a coupling function is only supported on flat_torus domains")
    if cfg.N < 1:
        raise ConfigError("N", f"must be >= 1, got {cfg.N}")
    try:
        basis = build_basis(domain, cfg.N, coupling)
    except BasisError as exc:
        raise ConfigError("N", str(exc)) from exc
    params = FlowParams(
        mode=cfg.mode, alpha0=cfg.alpha0, alpha=cfg.alpha, epsilon=cfg.epsilon,
        anisotropy=_anisotropy(cfg), forcing=_forcing(cfg, algebra, domain), demag=cfg.demag,
        T=cfg.T, dt=cfg.dt, scheme=cfg.scheme, stride=cfg.output_stride, dealias=cfg.dealias,
        l2_tolerance=cfg.tolerance_l2,
    )
    params.validate(basis, algebra)
    if not cfg.tolerance_verify >= 0:
        raise ConfigError("tolerance.verify", "must be >= 0")
    demag = None
    if cfg.demag:
        try:
            demag = DemagOperator(domain, cfg.demag_pad_factor)
        except DemagError as exc:
            raise ConfigError("demag", str(exc)) from exc
    u0 = initial_field(cfg, algebra, domain, base_dir) if with_initial else None
    return Scenario(cfg, algebra, domain, basis, params, u0, demag)


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **changes)


def config_fields() -> list[str]:
    return [ATTRS[f.name] for f in fields(RunConfig)]
