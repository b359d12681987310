# backend/app/ensembles/pecf.py

from typing import Callable

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..data_loader import RatingDataset
from ..evaluation import EvalConfig, evaluate, format_report, wmse
from ..models import DEFAULT_ALPHA_GRID, AlphaStrategy, EvalReport
from ..telemetry import ENSEMBLE_ROUNDS
from ..wmf import FactorModel, TrainWeights, WmfConfig, solve_wmf
from .mixture import EnsembleModel, rho_weight

# relative slack under which two line-search losses count as a tie
ALPHA_TIE_TOL = 1e-12


class PecfConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    nu: float = Field(10.0, gt=0)
    sigma: float = Field(1.0, gt=0)
    max_rounds: int = Field(15, ge=0)
    alpha_strategy: AlphaStrategy = AlphaStrategy.DYNAMIC
    alpha: float = Field(0.5, gt=0, lt=1)
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    patience: int | None = Field(None, ge=1)
    wmf: WmfConfig = Field(default_factory=WmfConfig)

    @field_validator("alpha_grid")
    @classmethod
    def _valid_grid(cls, v):
        if any(not 0.0 < a <= 1.0 for a in v):
            raise ValueError("alpha_grid values must lie in (0, 1]")
        if list(v) != sorted(v):
            raise ValueError("alpha_grid must be sorted ascending")
        return v

    @model_validator(mode="after")
    def _grid_for_line_search(self):
        if self.alpha_strategy == AlphaStrategy.DYNAMIC and not self.alpha_grid:
            raise ValueError("dynamic line search needs a non-empty alpha_grid")
        return self


def choose_alpha(current: EnsembleModel, candidate: FactorModel, dataset: RatingDataset, config: PecfConfig) -> float:
    """
    Weight of the new component.

    Dynamic mode scans the grid and keeps the α whose blended mean prediction
    has the lowest validation WMSE; ties go to the smallest α.
    """
    if config.alpha_strategy == AlphaStrategy.FIXED:
        return config.alpha

    val = dataset.validation
    if len(val) == 0:
        raise ValueError("validation split is empty; use alpha_strategy=fixed")

    cur = current.predict_entries(val.users, val.items)
    new = candidate.predict_entries(val.users, val.items)
    losses = np.array([wmse((1.0 - a) * cur + a * new, val) for a in config.alpha_grid])
    best = losses.min()
    chosen = int(np.flatnonzero(losses <= best + ALPHA_TIE_TOL * max(1.0, best))[0])
    logger.debug(f"alpha line search: {dict(zip(config.alpha_grid, np.round(losses, 8)))}")
    return float(config.alpha_grid[chosen])


def pecf_round(current: EnsembleModel, dataset: RatingDataset, config: PecfConfig) -> EnsembleModel:
    """
    Add one component fitted on c·ρ, where ρ grows with the current ensemble's
    training error. Existing components are carried over untouched.
    """
    train = dataset.train
    errors = train.ratings - current.predict_entries(train.users, train.items)
    rho = rho_weight(errors, config.nu, config.sigma)

    # component k is seeded with init seed + k, so round 0 matches plain WMF
    wmf_config = config.wmf.with_seed(config.wmf.seed + current.size)
    candidate = solve_wmf(dataset, TrainWeights(rho), wmf_config)
    alpha = choose_alpha(current, candidate, dataset, config)
    logger.info(f"PECF component {current.size}: mean ρ={rho.mean():.4f} α={alpha:.2f}")
    return current.extended(candidate, alpha)


def train_pecf(
    dataset: RatingDataset,
    config: PecfConfig,
    eval_config: EvalConfig | None = None,
    on_round: Callable[[int, EnsembleModel], None] | None = None,
) -> tuple[EnsembleModel, list[EvalReport]]:
    """
    Progressive construction: a unit-weight WMF, then up to max_rounds
    pecf_round calls, evaluating on the test split after each one.

    With `patience`, construction stops once validation WMSE has not improved
    for that many rounds and the best-on-validation ensemble is returned.
    """
    base = solve_wmf(dataset, TrainWeights.uniform(len(dataset.train)), config.wmf)
    model = EnsembleModel.single(base, noise_sigma=config.sigma)
    ENSEMBLE_ROUNDS.labels(method="pecf").inc()
    reports = [evaluate(model, dataset, eval_config, round_index=0)]
    logger.info(f"PECF round 0: {format_report(reports[0])}")
    if on_round is not None:
        on_round(0, model)

    track = config.patience is not None and len(dataset.validation) > 0
    best_model, best_val, stale = model, np.inf, 0
    if track:
        val = dataset.validation
        best_val = wmse(model.predict_entries(val.users, val.items), val)

    for r in range(1, config.max_rounds + 1):
        model = pecf_round(model, dataset, config)
        ENSEMBLE_ROUNDS.labels(method="pecf").inc()
        reports.append(evaluate(model, dataset, eval_config, round_index=r))
        logger.info(f"PECF round {r}: {format_report(reports[-1])}")
        if on_round is not None:
            on_round(r, model)

        if track:
            score = wmse(model.predict_entries(val.users, val.items), val)
            if score < best_val:
                best_model, best_val, stale = model, score, 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info(f"PECF: validation WMSE flat for {stale} rounds, stopping at round {r}")
                    break

    return (best_model if track else model), reports
