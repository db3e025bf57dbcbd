"""JSON experiment configuration with strict validation.

Every section is a dataclass; unknown keys and wrongly typed values are
rejected before any work starts.  ``model`` keys mirror
:class:`pegp.svgp.SVGPConfig`, baseline sections mirror the baseline
config dataclasses.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import ASMConfig, RotatedGPConfig
from .errors import ValidationError

METHODS = ("asm", "rotated_gp", "pegp_lwr", "pegp_arz", "plain_se")


@dataclass
class ScenarioConfig:
    """Synthetic ground truth; ``None`` keeps the builder's default.

    ``name`` picks the builder (``default`` stop-and-go road or periodic
    ``ring``), ``solver`` the PDE (``godunov`` LWR or ``arz`` relaxation).
    ``field_path``/``trajectories_path`` load truth from CSV instead.
    """

    name: str = "default"
    solver: str = "godunov"
    grid: dict | None = None
    v_f: float | None = None
    rho_jam: float | None = None
    rho_base: float | None = None
    plateaus: list | None = None
    boundary: str | None = None
    boundary_rho: list | None = None
    signal: list | None = None
    tau: float | None = None
    refine: int | None = None
    n_vehicles: int | None = None
    trajectory_seed: int = 0
    field_path: str | None = None
    trajectories_path: str | None = None

    def validate(self):
        if self.name not in ("default", "ring"):
            raise ValidationError(f"scenario.name must be 'default' or 'ring', got {self.name!r}")
        if self.solver not in ("godunov", "arz"):
            raise ValidationError(f"scenario.solver must be 'godunov' or 'arz', got {self.solver!r}")
        if self.grid is not None:
            need = {"x_min", "x_max", "t_min", "t_max", "dx", "dt"}
            if set(self.grid) != need:
                raise ValidationError(f"scenario.grid needs exactly the keys {sorted(need)}")


@dataclass
class SamplingConfig:
    mode: str = "probe"
    penetration: float = 0.1
    penetrations: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.3, 0.5])
    positions: list = field(default_factory=lambda: [60.0, 180.0, 300.0, 420.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def validate(self):
        if self.mode not in ("probe", "loops"):
            raise ValidationError(f"sampling.mode must be 'probe' or 'loops', got {self.mode!r}")
        for p in [self.penetration, *self.penetrations]:
            if not 0.0 < p <= 1.0:
                raise ValidationError(f"penetration {p} outside (0, 1]")
        if not self.seeds:
            raise ValidationError("sampling.seeds must not be empty")


@dataclass
class BaselinesConfig:
    asm: dict = field(default_factory=dict)
    rotated_gp: dict = field(default_factory=dict)

    def validate(self):
        _check_keys(self.asm, ASMConfig, "baselines.asm")
        _check_keys(self.rotated_gp, RotatedGPConfig, "baselines.rotated_gp")

    def asm_config(self) -> ASMConfig:
        return ASMConfig(**self.asm)

    def rotated_config(self) -> RotatedGPConfig:
        return RotatedGPConfig(**self.rotated_gp)


@dataclass
class SweepConfig:
    """Methods to compare; ``overrides`` holds per-method model settings."""

    methods: list = field(default_factory=lambda: ["asm", "rotated_gp", "pegp_lwr", "pegp_arz"])
    overrides: dict = field(default_factory=dict)

    def validate(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown sweep method {m!r}; choose from {METHODS}")
        for m, ov in self.overrides.items():
            if m not in METHODS:
                raise ValidationError(f"override for unknown method {m!r}")
            if not isinstance(ov, dict):
                raise ValidationError(f"sweep.overrides.{m} must be an object")
            if m in ("asm", "rotated_gp"):
                _check_keys(ov, ASMConfig if m == "asm" else RotatedGPConfig, f"sweep.overrides.{m}")
            else:
                _check_model_keys(ov, f"sweep.overrides.{m}")


@dataclass
class DiagnosticsConfig:
    n: int = 400
    seed: int = 0
    v_threshold: float = 60.0 / 3.6

    def validate(self):
        if self.n < 2:
            raise ValidationError("diagnostics.n must be at least 2")


@dataclass
class MetricsConfig:
    speed_unit: str = "m/s"
    density_unit: str = "veh/m"

    def validate(self):
        if self.speed_unit not in ("m/s", "km/h") or self.density_unit not in ("veh/m", "veh/km"):
            raise ValidationError("metrics units must be m/s|km/h and veh/m|veh/km")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    model: dict = field(default_factory=dict)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output: str = "out"

    def validate(self):
        for sec in (self.scenario, self.sampling, self.baselines, self.sweep, self.diagnostics,
                    self.metrics):
            sec.validate()
        _check_model_keys(self.model, "model")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------------
# Validation helpers
# --------------------------------------------------------------------------

_MODEL_EXCLUDED = {"fd", "pressure"}


def model_fields() -> dict:
    from .svgp import SVGPConfig
    hints = typing.get_type_hints(SVGPConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(SVGPConfig)
            if f.name not in _MODEL_EXCLUDED}


def _check_model_keys(d: dict, where: str):
    known = model_fields()
    for k, v in d.items():
        if k not in known:
            raise ValidationError(f"unknown key {where}.{k}")
        _check_type(v, known[k], f"{where}.{k}")


def _check_keys(d: dict, cls, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k, v in d.items():
        if k not in names:
            raise ValidationError(f"unknown key {where}.{k}")
        _check_type(v, hints[k], f"{where}.{k}")


def _check_type(value, tp, where: str):
    """Loose JSON type check against a dataclass annotation."""
    options = typing.get_args(tp) if typing.get_origin(tp) in (typing.Union, _union_type()) else (tp,)
    for opt in options:
        if opt is type(None) and value is None:
            return
        base = typing.get_origin(opt) or opt
        if base is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return
        if base is int and isinstance(value, int) and not isinstance(value, bool):
            return
        if base is bool and isinstance(value, bool):
            return
        if base is str and isinstance(value, str):
            return
        if base in (list, tuple) and isinstance(value, list):
            return
        if base is dict and isinstance(value, dict):
            return
    raise ValidationError(f"{where} has the wrong type ({type(value).__name__})")


def _union_type():
    import types
    return types.UnionType


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ValidationError(f"{where or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in names:
            raise ValidationError(f"unknown key {where + '.' if where else ''}{k}")
        tp = hints[k]
        if dataclasses.is_dataclass(tp):
            kwargs[k] = _build(tp, v, f"{where + '.' if where else ''}{k}")
        else:
            _check_type(v, tp, f"{where + '.' if where else ''}{k}")
            kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file {p} not found")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ValidationError(f"config {p} is not valid JSON: {err}") from err
    return config_from_dict(data)
