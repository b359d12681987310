# backend/app/models.py

from enum import Enum
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator


class Method(str, Enum):
    WMF = "wmf"
    PECF = "pecf"
    L2BOOST = "l2boost"
    RANDEM = "randem"


class AlphaStrategy(str, Enum):
    DYNAMIC = "dynamic_line_search"
    FIXED = "fixed"


DEFAULT_ALPHA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_CUTOFFS = (50, 100, 200)


class EvalReport(BaseModel):
    round: int = 0
    recall_at: dict[int, float]
    recall_at_all_items: dict[int, float] = Field(default_factory=dict)
    wmse: float = Field(ge=0)

    @field_validator("recall_at", "recall_at_all_items")
    @classmethod
    def _recall_in_unit_interval(cls, v):
        for m, r in v.items():
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"recall@{m}={r} outside [0, 1]")
        return v


class RunConfig(BaseModel):
    """
    Flat experiment configuration; every CLI flag and config-file key maps to one field.

    Defaults: c = 1.0 / 0.01, ν = 10, σ = 1, at most 15 rounds, d = 50 (MovieLens scale).
    """

    # data
    dataset_path: str | None = None
    dataset_format: Literal["movielens_tabular", "triplet_csv"] = "triplet_csv"
    prepared_path: str | None = None
    binarize_threshold: float = 5.0
    c_pos: float = Field(1.0, gt=0)
    c_zero: float = Field(0.01, gt=0)
    zero_sample_rate: float | None = Field(None, gt=0, le=1)
    zero_ratio: float = Field(5.0, ge=0)
    split_ratios: tuple[float, float, float] = Field((3.0, 1.0, 1.0), validate_default=True)
    seed: int = Field(0, ge=0)

    # training
    method: Method = Method.PECF
    d: int = Field(50, ge=1)
    lambda_u: float = Field(0.1, ge=0)
    lambda_v: float = Field(0.1, ge=0)
    sigma0: float | None = Field(None, gt=0)
    sigma_r: float | None = Field(None, gt=0)
    sweeps: int = Field(15, ge=1)
    init_scale: float | None = Field(None, gt=0)
    n_jobs: int | None = Field(None, ge=1)
    nu: float = Field(10.0, gt=0)
    sigma: float = Field(1.0, gt=0)
    rounds: int = Field(15, ge=0)
    shrinkage: float = Field(0.5, gt=0, le=1)
    k: int = Field(4, ge=1)
    em_iters: int = Field(10, ge=0)
    alpha_strategy: AlphaStrategy = AlphaStrategy.DYNAMIC
    alpha: float = Field(0.5, gt=0, lt=1)
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    patience: int | None = Field(None, ge=1)

    # evaluation / output
    cutoffs: tuple[int, ...] = DEFAULT_CUTOFFS
    exclude_seen: bool = True
    output_dir: str = "runs/default"

    @field_validator("split_ratios")
    @classmethod
    def _normalize_split(cls, v):
        if any(r < 0 for r in v) or sum(v) <= 0:
            raise ValueError("split_ratios must be non-negative with a positive sum")
        total = float(sum(v))
        return tuple(r / total for r in v)

    @field_validator("alpha_grid")
    @classmethod
    def _valid_grid(cls, v):
        if not v:
            raise ValueError("alpha_grid must not be empty")
        if any(not 0.0 < a <= 1.0 for a in v):
            raise ValueError("alpha_grid values must lie in (0, 1]")
        if list(v) != sorted(v):
            raise ValueError("alpha_grid must be sorted ascending")
        return v

    @field_validator("cutoffs")
    @classmethod
    def _valid_cutoffs(cls, v):
        if not v or any(m < 1 for m in v):
            raise ValueError("cutoffs must be a non-empty list of positive integers")
        return tuple(sorted(set(v)))

    @model_validator(mode="after")
    def _one_data_source(self):
        if (self.dataset_path is None) == (self.prepared_path is None):
            raise ValueError("exactly one of dataset_path or prepared_path must be set")
        if (self.sigma0 is None) != (self.sigma_r is None):
            raise ValueError("sigma0 and sigma_r must be given together")
        return self


class ExperimentResult(BaseModel):
    method: Method
    reports: list[EvalReport]
    summary: dict
    artifacts: dict[str, str]

    @property
    def final_report(self) -> EvalReport:
        """Report of the saved model's round, which early stopping may place before the last one."""
        best = self.summary.get("best_round", self.reports[-1].round)
        return next(r for r in self.reports if r.round == best)
