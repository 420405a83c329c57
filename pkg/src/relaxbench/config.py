"""Experiment configuration: a JSON document validated into typed sections.

Every field carries an explicit default so a resolved config can be echoed
back verbatim into reports.
"""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .limit import LimitConfig
from .model import Family, Grid, Heterogeneity, ModelError
from .relax import Profile, RelaxConfig
from .steady import System

Kind = Literal[
    "relax2", "relax3", "limit2", "limit3", "steady", "kp", "sweep-eps", "validate-model", "compare"
]


_IMPLIED_SYSTEM = {"relax2": "2x2", "limit2": "2x2", "relax3": "3x3", "limit3": "3x3"}


class ConfigError(ValueError):
    """Config text is not valid JSON or fails validation."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class HeterogeneitySpec(_Section):
    family: Family = Family.AFFINE
    a0: float = 2.0
    a1: float = 0.0
    c: float = 0.0
    breaks: list[float] = Field(default_factory=list)
    levels: list[float] = Field(default_factory=list)

    def build(self, length: float) -> Heterogeneity:
        try:
            return Heterogeneity(
                family=self.family,
                a0=self.a0,
                a1=self.a1,
                c=self.c,
                breaks=tuple(self.breaks),
                levels=tuple(self.levels),
                length=length,
            )
        except ModelError as exc:
            raise ValueError(str(exc)) from exc


class GridSpec(_Section):
    length: float = Field(1.0, gt=0)
    n_cells: int = Field(400, ge=2)

    def build(self) -> Grid:
        return Grid(length=self.length, n_cells=self.n_cells)


class ProfileSpec(_Section):
    kind: Literal["constant", "linear", "cosine", "step", "bump"] = "constant"
    value: float = 0.5
    amplitude: float = 0.0
    center: float = 0.5
    width: float = Field(0.1, gt=0)
    periods: float = 0.5

    def build(self) -> Profile:
        return Profile(**self.model_dump())


class ProblemSpec(_Section):
    """Boundary and initial data shared by the relaxation and limit solvers."""

    t_end: float = Field(1.0, ge=0)
    u0: float = Field(1.0, ge=0)
    alpha: float = 0.5
    c01: float = Field(1.0, ge=0)
    c02: float = Field(1.0, ge=0)
    initial: ProfileSpec = Field(default_factory=ProfileSpec)
    initial_u: Optional[ProfileSpec] = None
    well_prepared: bool = True

    @field_validator("alpha")
    @classmethod
    def _alpha_in_unit_interval(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError(f"alpha must lie in the open interval (0, 1), got {v}")
        return v

    @model_validator(mode="after")
    def _initial_u_present(self):
        if not self.well_prepared and self.initial_u is None:
            raise ValueError("well_prepared=false needs an initial_u profile")
        return self


class RelaxSpec(_Section):
    epsilon: float = Field(1e-2, gt=0)
    cfl: float = Field(1.0, gt=0, le=1)


class LimitSpec(_Section):
    cfl: float = Field(0.9, gt=0, le=1)
    rho_in: Optional[float] = Field(None, ge=0)


class SteadySpec(_Section):
    epsilon: float = Field(0.1, gt=0)
    U0: float = Field(1.0, gt=0)
    alpha: float = 0.5
    expected_K: Optional[float] = None

    @field_validator("alpha")
    @classmethod
    def _alpha_in_unit_interval(cls, v: float) -> float:
        return ProblemSpec._alpha_in_unit_interval(v)


class KpSpec(_Section):
    p: list[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0])
    system: System = System.TWO

    @field_validator("p")
    @classmethod
    def _nonnegative(cls, v: list[float]) -> list[float]:
        if any(p < 0 for p in v):
            raise ValueError("flux levels p must be nonnegative")
        return v


class ValidateSpec(_Section):
    v_max: float = Field(5.0, gt=0)
    n_v_samples: int = Field(64, ge=2)


class OutputSpec(_Section):
    dir: str = "out"
    # steps between CSV snapshots; 0 writes only the initial and final states
    snapshot_every: int = Field(0, ge=0)


class CheckSpec(_Section):
    """PASS/FAIL thresholds. Defaults are the acceptance tolerances."""

    ceiling_tol: float = 1e-8
    bv_t_step_tol: float = 1e-8
    bv_t_initial_tol: float = 1e-8
    bv_x_tol: float = 1e-6
    mass_tol: float = 1e-10
    # entropy tolerance is factor * (dx + dt); None disables the check
    entropy_factor: Optional[float] = 10.0
    limit_entropy_factor: Optional[float] = 10.0
    well_balanced_tol: float = 1e-13
    well_balanced_steps: int = Field(100, ge=1)
    eq_dev_min_order: float = 0.4
    l1_min_ratio: float = 4.0
    steady_tol: float = 1e-8
    kp_tol: float = 1e-10
    bln_tol: float = 1e-6
    # negative control on separate x-BV; None disables the check
    bv_u_growth_min: Optional[float] = None


class ExperimentConfig(_Section):
    kind: Kind
    system: System = System.TWO
    heterogeneity: HeterogeneitySpec = Field(default_factory=HeterogeneitySpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    problem: ProblemSpec = Field(default_factory=ProblemSpec)
    relax: RelaxSpec = Field(default_factory=RelaxSpec)
    limit: LimitSpec = Field(default_factory=LimitSpec)
    steady: SteadySpec = Field(default_factory=SteadySpec)
    kp: KpSpec = Field(default_factory=KpSpec)
    validate_model: ValidateSpec = Field(default_factory=ValidateSpec)
    epsilons: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    p_samples: Optional[list[float]] = None
    output: OutputSpec = Field(default_factory=OutputSpec)
    checks: CheckSpec = Field(default_factory=CheckSpec)

    @field_validator("epsilons")
    @classmethod
    def _strictly_decreasing(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("epsilons must not be empty")
        if any(e <= 0 for e in v):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError(f"epsilons must be strictly decreasing, got {v}")
        return v

    @model_validator(mode="before")
    @classmethod
    def _system_from_kind(cls, data):
        if isinstance(data, dict):
            implied = _IMPLIED_SYSTEM.get(data.get("kind"))
            if implied is not None:
                given = data.get("system", implied)
                if given != implied:
                    raise ValueError(f"kind {data['kind']!r} implies system {implied!r}, got {given!r}")
                data = {**data, "system": implied}
        return data

    @model_validator(mode="after")
    def _heterogeneity_buildable(self):
        try:
            self.heterogeneity.build(self.grid.length)
        except ValueError as exc:
            raise ValueError(f"heterogeneity: {exc}") from exc
        return self

    # -- domain objects ---------------------------------------------------

    def build_heterogeneity(self) -> Heterogeneity:
        return self.heterogeneity.build(self.grid.length)

    def build_grid(self) -> Grid:
        return self.grid.build()

    def relax_config(self, epsilon: float | None = None) -> RelaxConfig:
        pb = self.problem
        return RelaxConfig(
            epsilon=self.relax.epsilon if epsilon is None else epsilon,
            t_end=pb.t_end,
            cfl=self.relax.cfl,
            u0=pb.u0,
            alpha=pb.alpha,
            c01=pb.c01,
            c02=pb.c02,
            initial=pb.initial.build(),
            initial_u=pb.initial_u.build() if pb.initial_u else None,
            well_prepared=pb.well_prepared,
        )

    def limit_config(self) -> LimitConfig:
        pb = self.problem
        return LimitConfig(
            system=self.system,
            t_end=pb.t_end,
            cfl=self.limit.cfl,
            u0=pb.u0,
            c01=pb.c01,
            c02=pb.c02,
            initial=pb.initial.build(),
            rho_in=self.limit.rho_in,
        )

    def resolved(self) -> dict:
        """Fully expanded JSON-ready view with every default filled in."""
        return self.model_dump(mode="json")


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err["loc"])
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON config; errors name the offending JSON path."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("$: config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc
