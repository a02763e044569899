"""Run configuration: strict JSON schema and conversion to a ScenarioSpec."""
from __future__ import annotations

import json
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .scenarios import KINDS, ScenarioError, ScenarioSpec

ENGINES = ("approx", "exact", "both")
CHECKS = ("zeno", "povm", "residual", "cross_engine")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


PositiveFloat = Annotated[float, Field(gt=0)]


class Packet(_Strict):
    x0: float
    sigma: PositiveFloat
    k0: float = 0.0


class Slab(_Strict):
    z_min: float
    z_max: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.z_max < self.z_min:
            raise ValueError("z_max must not be smaller than z_min")
        return self


class Barrier(_Strict):
    left: float
    right: float
    height: Annotated[float, Field(ge=0)]


class Psi0Recipe(_Strict):
    kind: Literal["box_ground", "gaussian"] = "box_ground"
    x0: Optional[float] = None
    sigma: Optional[PositiveFloat] = None
    k0: float = 0.0

    @model_validator(mode="after")
    def _gaussian_fields(self):
        if self.kind == "gaussian" and (self.x0 is None or self.sigma is None):
            raise ValueError("gaussian psi0 needs x0 and sigma")
        return self


class ComplexBlock(_Strict):
    real: list
    imag: Optional[list] = None


class TwoLevelParams(_Strict):
    omega: Annotated[float, Field(ge=0)]


class WWParams(_Strict):
    m: Annotated[int, Field(ge=32)]
    g: Annotated[float, Field(ge=0)]
    band: PositiveFloat


class _Lattice(_Strict):
    a: PositiveFloat = 1.0
    mass: PositiveFloat = 1.0


class ArrivalParams(_Lattice):
    packet: Packet
    detector: Slab


class DwellParams(_Lattice):
    region: Slab
    psi0: Psi0Recipe = Psi0Recipe()
    exits: Literal["both", "left", "right"] = "both"


class TunnelingParams(_Lattice):
    barrier: Barrier
    packet: Packet
    stage2_init: Literal["median", "mean", "custom_time"] = "median"
    stage2_time: Optional[PositiveFloat] = None


class CustomParams(_Strict):
    H: ComplexBlock
    psi0: ComplexBlock
    detector: list[Annotated[int, Field(ge=0)]]


class _ScenarioBase(_Strict):
    dt: PositiveFloat
    T_max: PositiveFloat
    N: Optional[Annotated[int, Field(ge=2, le=2048)]] = None

    @model_validator(mode="after")
    def _horizon(self):
        if self.T_max < self.dt:
            raise ValueError("T_max must be at least dt")
        return self


class TwoLevelScenario(_ScenarioBase):
    kind: Literal["two_level_decay"]
    parameters: TwoLevelParams


class WWScenario(_ScenarioBase):
    kind: Literal["ww_decay"]
    parameters: WWParams


class _LatticeScenario(_ScenarioBase):
    N: Annotated[int, Field(ge=2, le=2048)]


class ArrivalScenario(_LatticeScenario):
    kind: Literal["arrival_1d"]
    parameters: ArrivalParams


class DwellScenario(_LatticeScenario):
    kind: Literal["dwell_1d"]
    parameters: DwellParams


class TunnelingScenario(_LatticeScenario):
    kind: Literal["tunneling_1d"]
    parameters: TunnelingParams


class CustomScenario(_ScenarioBase):
    kind: Literal["custom"]
    parameters: CustomParams


Scenario = Annotated[
    Union[TwoLevelScenario, WWScenario, ArrivalScenario, DwellScenario, TunnelingScenario, CustomScenario],
    Field(discriminator="kind"),
]


class Outputs(_Strict):
    csv_path: Optional[str] = None
    json_path: Optional[str] = None


class RunConfigModel(_Strict):
    scenario: Scenario
    engines: list[Literal["approx", "exact", "both"]] = Field(min_length=1)
    outputs: Outputs = Outputs()
    checks: list[Literal["zeno", "povm", "residual", "cross_engine"]] = []
    units: str = "hbar=1"
    epsilon_warn: PositiveFloat = 0.01
    survival_floor: PositiveFloat = 1e-12


class RunConfig:
    """Validated configuration plus the ScenarioSpec it describes."""

    def __init__(self, model: RunConfigModel):
        self.model = model
        sc = model.scenario
        params = sc.parameters.model_dump(exclude_none=True)
        self.scenario = ScenarioSpec(sc.kind, params, sc.dt, sc.T_max, sc.N)
        engines = set(model.engines)
        if "both" in engines:
            engines = {"approx", "exact"}
        self.engines = frozenset(engines)
        self.checks = tuple(dict.fromkeys(model.checks))
        self.outputs = model.outputs

    @property
    def units(self) -> str:
        return self.model.units

    def with_checks(self, checks) -> "RunConfig":
        data = self.model.model_dump()
        data["checks"] = list(checks)
        return RunConfig(RunConfigModel.model_validate(data))


def _format_loc(loc: tuple) -> str:
    # discriminated unions insert the tag value into the location; drop it
    parts = [str(p) for p in loc if p not in KINDS]
    return ".".join(parts) or "<root>"


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration.

    Unknown keys are rejected. The scenario is test-built so that physical
    inconsistencies (e.g. a packet overlapping the detector) surface here.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: malformed JSON ({exc})") from exc
    try:
        model = RunConfigModel.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{_format_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("; ".join(lines)) from exc
    if not model.engines:
        raise ConfigError("engines: at least one engine is required")
    try:
        cfg = RunConfig(model)
        if cfg.scenario.kind == "tunneling_1d":
            cfg.scenario.tunneling_plan().stage1()
        else:
            cfg.scenario.build()
    except (ScenarioError, ValueError, KeyError) as exc:
        raise ConfigError(f"scenario.parameters: {exc}") from exc
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
