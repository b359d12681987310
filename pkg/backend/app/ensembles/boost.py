# backend/app/ensembles/boost.py

from dataclasses import dataclass
from typing import Callable

import numpy as np
from loguru import logger

from ..data_loader import RatingDataset
from ..evaluation import EvalConfig, evaluate, format_report
from ..models import EvalReport
from ..telemetry import ENSEMBLE_ROUNDS
from ..wmf import DimensionMismatchError, FactorModel, TrainWeights, WmfConfig, solve_wmf


@dataclass(frozen=True, eq=False)
class BoostModel:
    """Additive ensemble: f_0 + shrinkage · Σ_{k≥1} f_k (the first stage is not shrunk)."""

    components: tuple[FactorModel, ...]
    shrinkage: float = 0.5

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a boosted model needs at least one stage")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")
        shape = (comps[0].num_users, comps[0].num_items)
        if any((c.num_users, c.num_items) != shape for c in comps):
            raise DimensionMismatchError("all stages must share m and n")
        object.__setattr__(self, "components", comps)

    @property
    def size(self) -> int:
        return len(self.components)

    @property
    def num_items(self) -> int:
        return self.components[0].num_items

    def with_stage(self, component: FactorModel) -> "BoostModel":
        return BoostModel(self.components + (component,), self.shrinkage)

    def predict(self, user: int, item: int) -> float:
        out = self.components[0].predict(user, item)
        for c in self.components[1:]:
            out += self.shrinkage * c.predict(user, item)
        return out

    def predict_entries(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        out = self.components[0].predict_entries(users, items)
        for c in self.components[1:]:
            out = out + self.shrinkage * c.predict_entries(users, items)
        return out

    def predict_users(self, users: np.ndarray) -> np.ndarray:
        out = self.components[0].predict_users(users)
        for c in self.components[1:]:
            out = out + self.shrinkage * c.predict_users(users)
        return out


def boost_predict(model: BoostModel, user: int, item: int) -> float:
    return model.predict(user, item)


def boost_residuals(model: BoostModel, dataset: RatingDataset) -> np.ndarray:
    train = dataset.train
    return train.ratings - model.predict_entries(train.users, train.items)


def train_l2boost(
    dataset: RatingDataset,
    rounds: int,
    shrinkage: float,
    wmf_config: WmfConfig,
    eval_config: EvalConfig | None = None,
    on_stage: Callable[[int, BoostModel, np.ndarray | None], None] | None = None,
) -> tuple[BoostModel, list[EvalReport]]:
    """
    Stage-wise residual fitting. Stage 0 is WMF on the ratings; stage k fits
    the residual of stages < k with the base confidences unchanged.
    `on_stage(k, model, targets)` receives the targets each stage was fit to.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if not 0.0 < shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in (0, 1]")

    unit = TrainWeights.uniform(len(dataset.train))
    model = BoostModel((solve_wmf(dataset, unit, wmf_config),), shrinkage)
    ENSEMBLE_ROUNDS.labels(method="l2boost").inc()
    reports = [evaluate(model, dataset, eval_config, round_index=0)]
    logger.info(f"L2Boost round 0: {format_report(reports[0])}")
    if on_stage is not None:
        on_stage(0, model, None)

    for k in range(1, rounds + 1):
        residual = boost_residuals(model, dataset)
        stage = solve_wmf(dataset, unit, wmf_config.with_seed(wmf_config.seed + k), targets=residual)
        model = model.with_stage(stage)
        ENSEMBLE_ROUNDS.labels(method="l2boost").inc()
        reports.append(evaluate(model, dataset, eval_config, round_index=k))
        logger.info(f"L2Boost round {k}: {format_report(reports[-1])}")
        if on_stage is not None:
            on_stage(k, model, residual)

    return model, reports
