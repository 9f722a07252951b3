"""Scenario configuration files.

A scenario is a JSON object; every section is optional and defaults are
listed in ``SCHEMAS.md``.  Unknown keys are rejected at every level so that
typos fail loudly instead of silently falling back to defaults.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .bundle import SMGrid
from .gauge import gauge_from_spec, pair_from_spec
from .geometry import metric_from_spec
from .transport import BoundaryGrid


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file."""


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        obj = cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None
    return obj


def _positive(where, **vals):
    for k, v in vals.items():
        if v is None:
            continue
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"{where}.{k} must be a positive number, got {v!r}")


@dataclass
class GridConfig:
    nx: int = 64
    ntheta: int = 64
    kmax: int = 16
    margin: float | None = None

    def __post_init__(self):
        _positive("grid", nx=self.nx, ntheta=self.ntheta, kmax=self.kmax)

    def build(self) -> SMGrid:
        return SMGrid(int(self.nx), int(self.ntheta), int(self.kmax), self.margin)


@dataclass
class BoundaryConfig:
    n_beta: int = 64
    n_mu: int = 32
    delta: float = 0.05

    def __post_init__(self):
        _positive("boundary", n_beta=self.n_beta, n_mu=self.n_mu, delta=self.delta)

    def build(self) -> BoundaryGrid:
        return BoundaryGrid(int(self.n_beta), int(self.n_mu), float(self.delta))


@dataclass
class TransformConfig:
    """Source ``f = F_const * bump + alpha`` and the kernel-property check."""

    F: list = field(default_factory=lambda: [1.0, 0.0])
    bump_power: int = 0
    kernel_check: bool = True

    def __post_init__(self):
        if not isinstance(self.F, list) or len(self.F) != 2:
            raise ConfigError("transform.F must be [re, im]")
        if self.bump_power < 0:
            raise ConfigError("transform.bump_power must be >= 0")


@dataclass
class VerifyConfig:
    resolutions: list = field(default_factory=lambda: [32, 64, 128])
    ntheta: int = 16
    envelope_power: int = 4
    modes: list = field(default_factory=lambda: [1])
    riccati: bool = True
    riccati_dt: float = 4e-3

    def __post_init__(self):
        if not self.resolutions or any(int(r) < 8 for r in self.resolutions):
            raise ConfigError("verify.resolutions must be a non-empty list of nx >= 8")
        _positive("verify", ntheta=self.ntheta, envelope_power=self.envelope_power,
                  riccati_dt=self.riccati_dt)


@dataclass
class HoloConfig:
    margin: float = 0.15
    ridge_rel: float = 1e-9
    shift_s: list = field(default_factory=lambda: [0.5, 1.0])
    probe: bool = False

    def __post_init__(self):
        _positive("holo", margin=self.margin, ridge_rel=self.ridge_rel)


@dataclass
class KernelConfig:
    m: int = 9
    forms: list = field(default_factory=lambda: ["F", "alpha"])
    eps: float = 1e-6
    gap_min: float = 1e3
    reconstruction: str = "compatible"
    max_entries: int = 50_000_000
    recover: bool = False

    def __post_init__(self):
        _positive("kernel", m=self.m, eps=self.eps, gap_min=self.gap_min, max_entries=self.max_entries)
        if self.reconstruction not in ("compatible", "plain"):
            raise ConfigError("kernel.reconstruction must be 'compatible' or 'plain'")
        if not self.forms or not set(self.forms) <= {"F", "alpha"}:
            raise ConfigError("kernel.forms must be a non-empty subset of ['F', 'alpha']")


@dataclass
class RigidityConfig:
    h: float = 0.1
    r_max: float = 0.95
    n_dirs: int = 24
    kmax: int = 8
    fd_step: float = 2e-3
    conn_stride: int = 2

    def __post_init__(self):
        _positive("rigidity", h=self.h, r_max=self.r_max, n_dirs=self.n_dirs, kmax=self.kmax,
                  fd_step=self.fd_step, conn_stride=self.conn_stride)
        if self.r_max >= 1:
            raise ConfigError("rigidity.r_max must be < 1")


DEFAULT_TOLERANCES = {
    "closed_form": 1e-6,
    "cross_check": 1e-6,
    "kernel_property": 1e-4,
    "unitarity": 1e-8,
    "relation": 1e-6,
    "gauge_invariance": 1e-5,
    "identity_relative": 1e-2,
    "refinement_order": 1.8,
    "exact_floor": 1e-10,
    "holo_residual": 2e-2,
    "holo_wrong_mass": 2e-2,
    "shift": 1e-2,
    "curvature_shift": 1e-8,
    "probe_wrong_mass": 5e-2,
    "kernel_fit": 1e-3,
    "kernel_gap": 1e3,
    "recover": 5e-2,
    "scattering_gap": 1e-5,
    "nonzero_mode_mass": 1e-3,
    "connection_residual": 5e-3,
    "higgs_residual": 5e-3,
    "boundary_residual": 1e-3,
    "gauge_error": 5e-3,
    "lifted_residual": 1e-4,
}


_SECTIONS = {"grid": GridConfig, "boundary": BoundaryConfig, "transform": TransformConfig,
             "verify": VerifyConfig, "holo": HoloConfig, "kernel": KernelConfig,
             "rigidity": RigidityConfig}


@dataclass
class ScenarioConfig:
    """Resolved scenario: specs for metric, pair and gauge plus numeric settings."""

    name: str = "scenario"
    metric: dict = field(default_factory=lambda: {"name": "flat"})
    pair: dict = field(default_factory=lambda: {"preset": "zero"})
    gauge: dict | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    dt: float = 1e-3
    tolerances: dict = field(default_factory=dict)
    ridge: float = 1e-5
    s_values: list = field(default_factory=lambda: [1.0, 2.0, 5.0])
    seed: int = 0
    output: str = "out"
    transform: TransformConfig = field(default_factory=TransformConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    holo: HoloConfig = field(default_factory=HoloConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    rigidity: RigidityConfig = field(default_factory=RigidityConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}")
        kw = dict(data)
        for key, sub in _SECTIONS.items():
            if key in kw:
                kw[key] = _build(sub, kw[key], key)
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(data)

    def validate(self):
        _positive("scenario", dt=self.dt, ridge=self.ridge)
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        unknown = sorted(set(self.tolerances) - set(DEFAULT_TOLERANCES))
        if unknown:
            raise ConfigError(f"tolerances: unknown keys {unknown}")
        for k, v in self.tolerances.items():
            _positive("tolerances", **{k: v})
        # build the objects once so bad specs fail at parse time
        try:
            self.build_metric()
            self.build_pair()
            if self.gauge is not None:
                self.build_gauge()
            self.grid.build()
            self.boundary.build()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(str(e)) from None

    def tol(self, key) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def build_metric(self):
        return metric_from_spec(self.metric)

    def build_pair(self):
        return pair_from_spec(self.pair)

    def build_gauge(self):
        if self.gauge is None:
            raise ConfigError("scenario has no gauge")
        return gauge_from_spec(self.gauge)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """SHA-256 of the canonical resolved configuration."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()
