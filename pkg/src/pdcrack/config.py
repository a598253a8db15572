"""Run configuration: TOML sections mapped onto dataclasses with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dynamics import LoadProgram
from .geometry import SpecimenGeometry
from .material import (
    PROFILE_KINDS,
    Influence,
    MaterialModel,
    invert_calibration,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialConfig:
    profile: str = "exponential"
    influence: str = "constant"
    density: float = 1.0
    cutoff_tol: float = 1e-2
    # either calibration targets ...
    mu: float | None = 1.0
    G_c: float | None = 1.0
    # ... or explicit profile parameters (C_plus with beta or s_plus)
    C_plus: float | None = None
    beta: float | None = None
    s_plus: float | None = None

    def build_profile(self):
        if self.profile not in PROFILE_KINDS:
            raise ConfigError(f"material.profile: unknown profile {self.profile!r}")
        J = Influence(self.influence)
        if self.C_plus is not None:
            if self.profile == "exponential":
                if self.beta is None:
                    raise ConfigError("material.beta required with explicit C_plus")
                return PROFILE_KINDS["exponential"](C_plus=self.C_plus, beta=self.beta)
            if self.s_plus is None:
                raise ConfigError("material.s_plus required with explicit C_plus")
            return PROFILE_KINDS["compact"](C_plus=self.C_plus, s_plus=self.s_plus)
        if self.mu is None or self.G_c is None:
            raise ConfigError("material: give either mu and G_c or explicit profile parameters")
        return invert_calibration(self.mu, self.G_c, J, self.profile)

    def build(self, horizon: float) -> MaterialModel:
        return MaterialModel(
            profile=self.build_profile(),
            influence=Influence(self.influence),
            horizon=horizon,
            density=self.density,
            cutoff_tol=self.cutoff_tol,
        )


@dataclass(frozen=True)
class DiscretizationConfig:
    horizon: float = 0.05
    ratio: float = 4.0  # m = eps / h_grid
    horizons: tuple = (0.1, 0.05, 0.025)  # sweep levels

    def spacing(self, eps: float) -> float:
        return eps / self.ratio


@dataclass(frozen=True)
class TimeConfig:
    T: float = 0.6
    snapshot_every: float = 0.1
    dt_safety: float = 0.5


@dataclass(frozen=True)
class RunOptions:
    irreversible: bool = False
    write_snapshots: bool = True
    tip_margin: float = 0.1  # run invalid once the tip reaches a - tip_margin
    output_dir: str = "out"
    threads: int = 1


@dataclass(frozen=True)
class LocalConfig:
    spacing: float | None = None  # default: finest sweep spacing
    damping: float = 0.0
    dt_safety: float = 0.5
    mask_width: float = 1.0  # excluded strip width in units of eps


@dataclass(frozen=True)
class RunConfig:
    geometry: SpecimenGeometry = field(default_factory=SpecimenGeometry)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    load: LoadProgram = field(default_factory=LoadProgram)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    run: RunOptions = field(default_factory=RunOptions)
    local: LocalConfig = field(default_factory=LocalConfig)

    def replace(self, **sections) -> "RunConfig":
        """Section-level update: ``cfg.replace(time={"T": 0.0})``."""
        kw = {}
        for name, upd in sections.items():
            cur = getattr(self, name)
            kw[name] = _build_section(name, type(cur), {**_asdict(cur), **upd})
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: _asdict(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _asdict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.init}


def _build_section(name: str, cls, data: dict):
    allowed = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key '{name}.{key}'")
    if "horizons" in data:
        data = {**data, "horizons": tuple(data["horizons"])}
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    kw = {}
    for name, value in data.items():
        if name not in sections:
            raise ConfigError(f"unknown section '{name}'")
        if not isinstance(value, dict):
            raise ConfigError(f"section '{name}' must be a table")
        cls = type(sections[name].default_factory())
        kw[name] = _build_section(name, cls, value)
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)
