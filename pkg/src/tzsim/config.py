"""Scenario configuration.

A scenario is a JSON document; every omitted field takes the default below,
which reproduces the reference scenario at a desk-scale density of
100 UEs/km^2. Unknown keys are rejected so a typo never silently falls back
to a default.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator

from .backhaul import DEFAULT_CLASSES, DEFAULT_CSSR, REFERENCE_TRANSITION, BackhaulChain, StateClass, validate_chain
from .mobility import AREAS, BASIC_SPEED, SPEED_FACTORS, Area, MobilityClass, MobilityParams, RegionMap, population_size
from .trust_zone import DEFAULT_TRIGGER_STATES

Probability = Annotated[float, Field(ge=0.0, le=1.0)]
PositiveFloat = Annotated[float, Field(gt=0.0)]
PositiveInt = Annotated[int, Field(ge=1)]


def _disabled_to_none(value):
    return None if value == "disabled" else value


Threshold = Annotated[Optional[Probability], BeforeValidator(_disabled_to_none)]


class ConfigError(ValueError):
    """Invalid scenario; ``path`` names the offending field (``a.b[0]``)."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class RegionConfig(_Strict):
    half_width_km: PositiveFloat = 4.0
    ec_radius_km: PositiveFloat = 2.0


class MobilityConfig(_Strict):
    step_seconds: PositiveFloat = 600.0
    substep_seconds: PositiveFloat = 10.0
    spawn: Literal["boundary", "uniform"] = "boundary"
    replacement_class: Literal["inherit", "uniform"] = "inherit"
    basic_speed: dict[Literal["LOW", "MEDIUM", "HIGH"], tuple[Annotated[float, Field(ge=0)], Annotated[float, Field(ge=0)]]] = Field(
        default_factory=lambda: {c.name: BASIC_SPEED[c] for c in MobilityClass if c is not MobilityClass.STILL}
    )
    speed_factors: dict[
        Literal["LOW", "MEDIUM", "HIGH"], dict[Literal["EC", "I", "II", "III", "IV"], Annotated[float, Field(ge=0)]]
    ] = Field(
        default_factory=lambda: {
            c.name: {a.value: SPEED_FACTORS[c][a] for a in AREAS}
            for c in MobilityClass
            if c is not MobilityClass.STILL
        }
    )

    @field_validator("speed_factors")
    @classmethod
    def _complete_factors(cls, v):
        for name, row in v.items():
            missing = {a.value for a in AREAS} - set(row)
            if missing:
                raise ValueError(f"{name} is missing areas {sorted(missing)}")
        return v


class ChainConfig(_Strict):
    file: Optional[str] = None
    transition: list[list[Annotated[float, Field(ge=0.0)]]] = Field(
        default_factory=lambda: [list(map(float, r)) for r in REFERENCE_TRANSITION]
    )
    cssr: list[Probability] = Field(default_factory=lambda: list(DEFAULT_CSSR))
    classes: list[StateClass] = Field(default_factory=lambda: list(DEFAULT_CLASSES), alias="class")
    strict: bool = True
    initial_state: Annotated[int, Field(ge=1, le=9)] = 1


class RiskConfig(_Strict):
    horizon_steps: PositiveInt = 3
    bin_width_km: PositiveFloat = 0.25
    max_distance_km: PositiveFloat = 6.0


class SyncConfig(_Strict):
    interval_steps: PositiveInt = 3
    enabled: bool = True
    threshold: Probability = 0.05
    thresholds: list[Threshold] = Field(default_factory=lambda: [None, 0.5, 0.2, 0.1, 0.05, 0.02])
    persist_until_departure: bool = False
    csso_scope: Literal["ec", "region"] = "ec"
    traffic_unit: PositiveFloat = 1.0


class TrustZoneConfig(_Strict):
    trigger_states: list[Annotated[int, Field(ge=1, le=9)]] = Field(
        default_factory=lambda: sorted(DEFAULT_TRIGGER_STATES)
    )
    handback_batch: PositiveInt = 500


class PhaseConfig(_Strict):
    warmup_hours: PositiveFloat = 40.0
    training_hours: PositiveFloat = 24.0
    testing_days: PositiveFloat = 30.0


class OutputConfig(_Strict):
    dir: str = "out"


class ScenarioConfig(_Strict):
    seed: int = 0
    density_per_km2: PositiveFloat = 100.0
    region: RegionConfig = RegionConfig()
    mobility: MobilityConfig = MobilityConfig()
    chain: ChainConfig = ChainConfig()
    risk: RiskConfig = RiskConfig()
    sync: SyncConfig = SyncConfig()
    trust_zone: TrustZoneConfig = TrustZoneConfig()
    phases: PhaseConfig = PhaseConfig()
    output: OutputConfig = OutputConfig()

    # ------------------------------------------------------------------ builders

    def region_map(self) -> RegionMap:
        return RegionMap(self.region.half_width_km, self.region.ec_radius_km)

    def mobility_params(self) -> MobilityParams:
        m = self.mobility
        basic = {MobilityClass.STILL: (0.0, 0.0)}
        basic.update({MobilityClass[k]: tuple(v) for k, v in m.basic_speed.items()})
        factors = {MobilityClass.STILL: {a: 0.0 for a in AREAS}}
        factors.update({MobilityClass[k]: {Area(a): f for a, f in row.items()} for k, row in m.speed_factors.items()})
        return MobilityParams(
            step_seconds=m.step_seconds,
            substep_seconds=m.substep_seconds,
            spawn=m.spawn,
            replacement_class=m.replacement_class,
            basic_speed=basic,
            speed_factors=factors,
        )

    def backhaul_chain(self) -> BackhaulChain:
        c = self.chain
        if c.file:
            return BackhaulChain.load(c.file)
        return BackhaulChain(c.transition, c.cssr, tuple(c.classes))

    def steps_per_hour(self) -> float:
        return 3600.0 / self.mobility.step_seconds

    def phase_steps(self) -> tuple[int, int, int]:
        per_hour = self.steps_per_hour()
        p = self.phases
        return (
            int(round(p.warmup_hours * per_hour)),
            int(round(p.training_hours * per_hour)),
            int(round(p.testing_days * 24 * per_hour)),
        )

    def population(self) -> int:
        return population_size(self.region_map(), self.density_per_km2)


def _format_loc(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out


def parse_config(document: dict | str, base_dir: str | Path | None = None) -> ScenarioConfig:
    """Resolve defaults and validate a scenario document.

    A relative ``chain.file`` is resolved against ``base_dir`` (the config
    file's directory when loaded through :func:`load_config`).

    The read-only ``derived`` block written by :func:`echo_config` is ignored,
    so an echo parses back to the same config.

    Raises:
        ConfigError: naming the first offending path.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"malformed JSON: {exc}") from None
    if not isinstance(document, dict):
        raise ConfigError("", "config document must be a JSON object")
    document = {k: v for k, v in document.items() if k != "derived"}
    try:
        cfg = ScenarioConfig.model_validate(document)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_format_loc(err["loc"]), err["msg"]) from None
    if cfg.chain.file and base_dir is not None and not Path(cfg.chain.file).is_absolute():
        resolved = str((Path(base_dir) / cfg.chain.file).resolve())
        cfg = cfg.model_copy(update={"chain": cfg.chain.model_copy(update={"file": resolved})})

    path = "chain.file" if cfg.chain.file else "chain"
    try:
        chain = cfg.backhaul_chain()
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(path, str(exc)) from None
    result = validate_chain(chain, strict=cfg.chain.strict)
    if not result:
        raise ConfigError(f"{path}.{result.rule}", result.message)
    try:
        cfg.mobility_params()
    except ValueError as exc:
        raise ConfigError("mobility", str(exc)) from None
    if cfg.region.ec_radius_km > cfg.region.half_width_km:
        raise ConfigError("region.ec_radius_km", "edge-cloud disk must fit inside the region")
    warm, train, test = cfg.phase_steps()
    if min(warm, train, test) < 1:
        raise ConfigError("phases", "every phase must last at least one step")
    if train < cfg.risk.horizon_steps + 1:
        raise ConfigError("phases.training_hours", "training must cover horizon_steps + 1 steps")
    return cfg


def echo_config(cfg: ScenarioConfig) -> dict:
    """Fully resolved config plus a read-only ``derived`` block."""
    doc = cfg.model_dump(mode="json", by_alias=True)
    warm, train, test = cfg.phase_steps()
    doc["derived"] = {
        "population": cfg.population(),
        "warmup_steps": warm,
        "training_steps": train,
        "testing_steps": test,
    }
    return doc


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)
