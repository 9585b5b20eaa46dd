"""Typed access to the checked-in defaults file.

The defaults live in ``defaults.cfg`` next to this module.  A user config
with the same section layout may override any subset of keys.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(";", ",").split(",") if tok.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(float(tok)) for tok in text.replace(";", ",").split(",") if tok.strip())


@dataclass(frozen=True)
class PhysicsDefaults:
    a: float = 0.1
    a_tilde: float = 0.1
    jacobi_J: float = 10.0
    mu: float = 1e-3
    eps: float = 0.04
    G0: float = 3.0
    min_jacobi: float = 5.0


@dataclass(frozen=True)
class ChartDefaults:
    sector_lo: float = 0.0
    sector_hi: float = 0.3
    chart_margin: float = 0.05
    near_origin_guard: float = 1e-6


@dataclass(frozen=True)
class Tolerances:
    flow_tol: float = 1e-12
    picard_tol: float = 1e-13
    newton_tol: float = 1e-12
    killed_coefficient: float = 1e-12
    area_defect: float = 1e-8
    involution_defect: float = 1e-8
    energy_drift: float = 1e-10


@dataclass(frozen=True)
class NormalFormDefaults:
    max_degree: int = 10
    max_harmonic: int = 8
    working_digits: int = 40


@dataclass(frozen=True)
class GlobalMapDefaults:
    b: float = 0.5
    c: float = -1.0
    d: float = 1.0


@dataclass(frozen=True)
class SweepDefaults:
    shilnikov_T: tuple[float, ...] = (250.0, 500.0, 1000.0, 2000.0, 4000.0)
    renorm_T: tuple[float, ...] = (1e5, 2e5, 4e5, 8e5, 1.6e6)
    renorm_kappa: tuple[float, ...] = (-1.0, 0.0, 1.0)
    tangency_n: tuple[int, ...] = (1000, 10000, 100000)
    G0_list: tuple[float, ...] = (2.5, 3.0, 3.5)
    sitnikov_eps: tuple[float, ...] = (0.02, 0.04, 0.08)
    lambda_q0: tuple[float, ...] = (0.05, 0.1, 0.2)
    normalform_N: tuple[int, ...] = (6, 8, 10)


@dataclass(frozen=True)
class TangencyDefaults:
    phase_constant: float = 64.0
    amplitude: float = 1.0
    n_min: float = 1000.0


@dataclass(frozen=True)
class MelnikovDefaults:
    mu: float = 0.1
    fit_G0: tuple[float, ...] = (2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 7.0, 8.0)
    n_max: int = 90


@dataclass(frozen=True)
class SitnikovDefaults:
    grid_points: int = 16
    grid_offset: float = 0.19634954084936207
    z_far: float = 60.0


@dataclass(frozen=True)
class RenormDefaults:
    grid_points: int = 41
    grid_half_width: float = 2.0
    probe_points: int = 11
    probe_half_width: float = 5.0
    cone_T: tuple[float, ...] = (1e5, 2e5, 4e5, 8e5, 1.6e6)


@dataclass(frozen=True)
class LabConfig:
    physics: PhysicsDefaults = field(default_factory=PhysicsDefaults)
    chart: ChartDefaults = field(default_factory=ChartDefaults)
    tolerances: Tolerances = field(default_factory=Tolerances)
    normalform: NormalFormDefaults = field(default_factory=NormalFormDefaults)
    global_map: GlobalMapDefaults = field(default_factory=GlobalMapDefaults)
    sweeps: SweepDefaults = field(default_factory=SweepDefaults)
    tangency: TangencyDefaults = field(default_factory=TangencyDefaults)
    melnikov: MelnikovDefaults = field(default_factory=MelnikovDefaults)
    sitnikov: SitnikovDefaults = field(default_factory=SitnikovDefaults)
    renorm: RenormDefaults = field(default_factory=RenormDefaults)


_SECTIONS = {
    "physics": PhysicsDefaults,
    "chart": ChartDefaults,
    "tolerances": Tolerances,
    "normalform": NormalFormDefaults,
    "global_map": GlobalMapDefaults,
    "sweeps": SweepDefaults,
    "tangency": TangencyDefaults,
    "melnikov": MelnikovDefaults,
    "sitnikov": SitnikovDefaults,
    "renorm": RenormDefaults,
}


def _coerce(kind: type, key: str, raw: str):
    annotation = {f.name: f.type for f in fields(kind)}[key]
    if annotation == "float":
        return float(raw)
    if annotation == "int":
        return int(float(raw))
    if "int" in annotation:
        return _ints(raw)
    return _floats(raw)


def _parse(parser: configparser.ConfigParser) -> LabConfig:
    parts = {}
    for section, kind in _SECTIONS.items():
        known = {f.name for f in fields(kind)}
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in known:
                    raise KeyError(f"unknown key [{section}] {key}")
                values[key] = _coerce(kind, key, raw)
        parts[section] = kind(**values)
    return LabConfig(**parts)


def defaults_text() -> str:
    """Return the raw text of the packaged defaults file."""
    return resources.files("parabolic_lab").joinpath("defaults.cfg").read_text()


def load_config(paths: Iterable[str | Path] = ()) -> LabConfig:
    """Load the packaged defaults, then overlay each file in ``paths``."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(defaults_text())
    for path in paths:
        with open(path) as handle:
            parser.read_file(handle)
    return _parse(parser)


DEFAULTS = load_config()
