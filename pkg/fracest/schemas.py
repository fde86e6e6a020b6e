"""
Pydantic models for reports, run configuration and manifests.
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_SEED = 20240601


# ---------------------------------------------------------------------------
# Point estimation
# ---------------------------------------------------------------------------

class PointEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    variance: float = Field(ge=0.0)
    stderr: float = Field(ge=0.0)
    ci_low: float
    ci_high: float
    level: float = Field(gt=0.0, lt=1.0)
    n: int = Field(ge=1)
    alpha: float
    x: float
    variance_clamped: bool = False

    @model_validator(mode="after")
    def _interval_brackets_value(self):
        if not self.ci_low <= self.value <= self.ci_high:
            raise ValueError("confidence interval must contain the estimate")
        return self

    def to_report(self):
        return {
            "estimate": self.value,
            "stderr": self.stderr,
            "variance": self.variance,
            "ci": [self.ci_low, self.ci_high],
            "level": self.level,
            "n": self.n,
            "alpha": self.alpha,
            "x": self.x,
            "variance_clamped": self.variance_clamped,
        }


class TailDiagnostic(BaseModel):
    """Exceedance of |G_{a,1}(x) - G^(a)(x)| over geometric levels."""

    delta: float = Field(gt=0.0, le=1.0)
    alpha: float
    x: float
    levels: List[float]
    empirical_exceedance: List[float]
    fitted_slope: float
    slope_ci: List[float]
    raw_slope: float
    expected_slope: float
    offset: float
    draws: int
    reading: Literal["gap", "xi"] = "gap"

    @field_validator("levels")
    @classmethod
    def _levels_increase(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("levels must be strictly increasing")
        return v

    @model_validator(mode="after")
    def _exceedance_nonincreasing(self):
        p = self.empirical_exceedance
        if len(p) != len(self.levels) or any(b > a for a, b in zip(p, p[1:])):
            raise ValueError("exceedance must be nonincreasing in the level")
        return self


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

class McConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    reps: int = Field(default=1000, ge=1)
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2 ** 64)
    workers: int = Field(default=1, ge=1)
    n: Optional[List[int]] = None

    @field_validator("n", mode="before")
    @classmethod
    def _listify(cls, v):
        if v is None:
            return None
        if isinstance(v, (int, float)):
            v = [v]
        if isinstance(v, str):
            v = [int(float(p)) for p in v.split(",") if p.strip()]
        out = [int(x) for x in v]
        if not out or any(x < 1 for x in out):
            raise ValueError("sample sizes must be positive")
        return out


class KsResult(BaseModel):
    statistic: float = Field(ge=0.0, le=1.0)
    pvalue: float = Field(ge=0.0, le=1.0)
    size: int
    low_power: bool = False


class SlopeFit(BaseModel):
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    r_squared: Optional[float] = None
    points: int


class McReport(BaseModel):
    experiment: str
    statistic: str
    cells: List[str]
    reps: int
    seed: int
    mean: List[float]
    variance: List[Optional[float]]
    stderr: List[Optional[float]]
    stderr_undefined: bool = False
    truth: List[Optional[float]] = Field(default_factory=list)
    ks: Optional[KsResult] = None
    slopes: Dict[str, SlopeFit] = Field(default_factory=dict)
    checks: Dict[str, bool] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)
    values: Optional[List[float]] = None
    retries: int = 0

    @property
    def passed(self):
        return all(self.checks.values()) if self.checks else None

    def to_report(self):
        out = self.model_dump(exclude={"values"} if self.values is None else set())
        out["pass"] = self.passed
        return out


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

class LqNormResult(BaseModel):
    value: float
    q: float
    levels: List[int]
    history: List[float]
    diverging: bool


class RunManifest(BaseModel):
    """Everything needed to reproduce a CLI run; carries no timestamps."""

    subcommand: str
    parameters: Dict[str, Any]
    input_digests: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    seed: Optional[int] = None
    version: str
