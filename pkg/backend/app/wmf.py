# backend/app/wmf.py

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data_loader import RatingDataset
from .telemetry import WMF_SOLVE_SECONDS

load_dotenv()

N_JOBS = int(os.getenv("PECF_N_JOBS", "1"))

# below this many rows a half-sweep is solved inline
PARALLEL_MIN_ROWS = 256


# ------------------------------------------------------------------------------------
# ERRORS
# ------------------------------------------------------------------------------------

class DimensionMismatchError(ValueError):
    pass


class WmfSolveError(RuntimeError):
    pass


# ------------------------------------------------------------------------------------
# CONFIG
# ------------------------------------------------------------------------------------

class PriorConfig(BaseModel):
    """Gaussian embedding prior (sigma0) and rating noise (sigma_r)."""

    model_config = ConfigDict(frozen=True)

    sigma0: float = Field(1.0, gt=0)
    sigma_r: float = Field(1.0, gt=0)

    @property
    def regularization(self) -> float:
        # MAP estimate under the prior is WMF with lambda_u = lambda_v = sigma_r^2 / sigma0^2
        return self.sigma_r**2 / self.sigma0**2


class WmfConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(20, ge=1)
    lambda_u: float = Field(0.1, ge=0)
    lambda_v: float = Field(0.1, ge=0)
    sweeps: int = Field(15, ge=1)
    init_scale: float | None = None
    seed: int = 0
    n_jobs: int = Field(N_JOBS, ge=1)

    @field_validator("init_scale")
    @classmethod
    def _positive_scale(cls, v):
        if v is not None and v <= 0:
            raise ValueError("init_scale must be > 0")
        return v

    @property
    def scale(self) -> float:
        return self.init_scale if self.init_scale is not None else 0.1 / math.sqrt(self.d)

    @classmethod
    def from_prior(cls, prior: PriorConfig, **kwargs) -> "WmfConfig":
        lam = prior.regularization
        return cls(lambda_u=lam, lambda_v=lam, **kwargs)

    def with_seed(self, seed: int) -> "WmfConfig":
        return self.model_copy(update={"seed": seed})


# ------------------------------------------------------------------------------------
# MODEL
# ------------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FactorModel:
    """One WMF component: U is d × m, V is d × n; f_ij = u_i · v_j."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        U, V = self.user_factors, self.item_factors
        if U.ndim != 2 or V.ndim != 2 or U.shape[0] != V.shape[0]:
            raise DimensionMismatchError(f"factor shapes {U.shape} and {V.shape} are inconsistent")
        if not (np.isfinite(U).all() and np.isfinite(V).all()):
            raise ValueError("factor matrices contain non-finite values")

    @property
    def d(self) -> int:
        return int(self.user_factors.shape[0])

    @property
    def num_users(self) -> int:
        return int(self.user_factors.shape[1])

    @property
    def num_items(self) -> int:
        return int(self.item_factors.shape[1])

    @classmethod
    def zeros(cls, d: int, m: int, n: int) -> "FactorModel":
        return cls(np.zeros((d, m)), np.zeros((d, n)))

    def _check_user(self, user: int) -> None:
        if not 0 <= user < self.num_users:
            raise IndexError(f"user index {user} out of range [0, {self.num_users})")

    def _check_item(self, item: int) -> None:
        if not 0 <= item < self.num_items:
            raise IndexError(f"item index {item} out of range [0, {self.num_items})")

    def predict(self, user: int, item: int) -> float:
        self._check_user(user)
        self._check_item(item)
        return float(self.user_factors[:, user] @ self.item_factors[:, item])

    def predict_scores_for_user(self, user: int) -> np.ndarray:
        self._check_user(user)
        return self.item_factors.T @ self.user_factors[:, user]

    def predict_entries(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->j", self.user_factors[:, users], self.item_factors[:, items])

    def predict_users(self, users: np.ndarray) -> np.ndarray:
        """Score matrix of shape (len(users), n)."""
        return self.user_factors[:, users].T @ self.item_factors


def predict(model: FactorModel, user: int, item: int) -> float:
    return model.predict(user, item)


def predict_scores_for_user(model: FactorModel, user: int) -> np.ndarray:
    return model.predict_scores_for_user(user)


@dataclass(frozen=True, eq=False)
class TrainWeights:
    """Multiplicative per-entry weights over the training split, in training order."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("train weights must be a 1-D array")
        if not np.isfinite(v).all() or (v < 0).any():
            raise ValueError("train weights must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, size: int) -> "TrainWeights":
        return cls(np.ones(size))

    def __len__(self) -> int:
        return int(self.values.size)


# ------------------------------------------------------------------------------------
# OBJECTIVE
# ------------------------------------------------------------------------------------

def _check_dimensions(model: FactorModel, dataset: RatingDataset, weights: TrainWeights | None, config: WmfConfig):
    if model.num_users != dataset.num_users or model.num_items != dataset.num_items:
        raise DimensionMismatchError(
            f"model is {model.num_users}×{model.num_items}, dataset is {dataset.num_users}×{dataset.num_items}"
        )
    if model.d != config.d:
        raise DimensionMismatchError(f"model has d={model.d}, config has d={config.d}")
    if weights is not None and len(weights) != len(dataset.train):
        raise DimensionMismatchError(f"{len(weights)} weights for {len(dataset.train)} training entries")


def wmf_objective(
    model: FactorModel,
    dataset: RatingDataset,
    weights: TrainWeights,
    config: WmfConfig,
    targets: np.ndarray | None = None,
) -> float:
    """Σ c·w·(r − u·v)² + (λ_u/2)‖U‖² + (λ_v/2)‖V‖² over the training split."""
    _check_dimensions(model, dataset, weights, config)
    train = dataset.train
    r = train.ratings if targets is None else targets
    residual = r - model.predict_entries(train.users, train.items)
    data_term = float(np.sum(train.confidences * weights.values * residual**2))
    reg_term = 0.5 * config.lambda_u * float(np.sum(model.user_factors**2)) + 0.5 * config.lambda_v * float(
        np.sum(model.item_factors**2)
    )
    return data_term + reg_term


# ------------------------------------------------------------------------------------
# SOLVER
# ------------------------------------------------------------------------------------

class _Rows(NamedTuple):
    """CSR-style grouping of training entries by user (or by item)."""

    indptr: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    targets: np.ndarray


def _group_rows(rows: np.ndarray, cols: np.ndarray, weights: np.ndarray, targets: np.ndarray, count: int) -> _Rows:
    order = np.argsort(rows, kind="stable")
    indptr = np.zeros(count + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=count), out=indptr[1:])
    return _Rows(indptr, cols[order], weights[order], targets[order])


def _solve_block(this: np.ndarray, other: np.ndarray, rows: _Rows, half_reg: float, start: int, stop: int) -> None:
    d = other.shape[0]
    ridge = half_reg * np.eye(d)
    for i in range(start, stop):
        lo, hi = rows.indptr[i], rows.indptr[i + 1]
        if lo == hi and half_reg > 0:
            this[:, i] = 0.0
            continue
        O = other[:, rows.cols[lo:hi]]
        w = rows.weights[lo:hi]
        A = (O * w) @ O.T + ridge
        b = O @ (w * rows.targets[lo:hi])
        try:
            factor = cho_factor(A, check_finite=False)
        except LinAlgError:
            raise WmfSolveError(
                f"normal matrix for row {i} is singular; use a regularization coefficient λ > 0"
            ) from None
        this[:, i] = cho_solve(factor, b, check_finite=False)


def _solve_half(
    this: np.ndarray,
    other: np.ndarray,
    rows: _Rows,
    reg: float,
    pool: ThreadPoolExecutor | None,
    n_jobs: int,
) -> None:
    """Exact block minimization over every column of `this` with `other` fixed."""
    count = this.shape[1]
    half_reg = 0.5 * reg
    if pool is None or count < PARALLEL_MIN_ROWS:
        _solve_block(this, other, rows, half_reg, 0, count)
        return
    bounds = np.linspace(0, count, 4 * n_jobs + 1, dtype=np.int64)
    futures = [
        pool.submit(_solve_block, this, other, rows, half_reg, int(lo), int(hi))
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    for f in futures:
        f.result()


def init_factors(config: WmfConfig, m: int, n: int) -> FactorModel:
    rng = np.random.default_rng(config.seed)
    U = rng.normal(0.0, config.scale, size=(config.d, m))
    V = rng.normal(0.0, config.scale, size=(config.d, n))
    return FactorModel(U, V)


def solve_wmf(
    dataset: RatingDataset,
    weights: TrainWeights,
    config: WmfConfig,
    *,
    targets: np.ndarray | None = None,
    init: FactorModel | None = None,
    callback: Callable[[FactorModel], None] | None = None,
) -> FactorModel:
    """
    Weighted ALS on the training split.

    Each half-sweep solves (O W Oᵀ + (λ/2) I) x = O W r per row, which is the
    exact minimizer of the objective in that row, so the objective never
    increases between half-sweeps. `targets` replaces the observed ratings
    (residual fitting); `init` warm-starts from an existing model; `callback`
    receives a snapshot after every half-sweep.
    """
    train = dataset.train
    if len(train) == 0:
        raise ValueError("training split is empty")
    if len(weights) != len(train):
        raise DimensionMismatchError(f"{len(weights)} weights for {len(train)} training entries")
    r = train.ratings if targets is None else np.asarray(targets, dtype=np.float64)
    if r.shape != train.ratings.shape:
        raise DimensionMismatchError(f"{r.size} targets for {len(train)} training entries")

    m, n = dataset.num_users, dataset.num_items
    start_model = init if init is not None else init_factors(config, m, n)
    _check_dimensions(start_model, dataset, None, config)
    U = np.array(start_model.user_factors, dtype=np.float64, copy=True)
    V = np.array(start_model.item_factors, dtype=np.float64, copy=True)

    cw = train.confidences * weights.values
    by_user = _group_rows(train.users, train.items, cw, r, m)
    by_item = _group_rows(train.items, train.users, cw, r, n)

    started = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=config.n_jobs) if config.n_jobs > 1 else None
    try:
        for sweep in range(config.sweeps):
            _solve_half(U, V, by_user, config.lambda_u, pool, config.n_jobs)
            if callback is not None:
                callback(FactorModel(U.copy(), V.copy()))
            _solve_half(V, U, by_item, config.lambda_v, pool, config.n_jobs)
            if callback is not None:
                callback(FactorModel(U.copy(), V.copy()))
            logger.opt(lazy=True).debug(
                "wmf sweep {} objective={:.10g}",
                lambda: sweep + 1,
                lambda: wmf_objective(FactorModel(U, V), dataset, weights, config, targets=r),
            )
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    elapsed = time.perf_counter() - started
    WMF_SOLVE_SECONDS.observe(elapsed)
    logger.debug(f"solve_wmf: d={config.d} sweeps={config.sweeps} in {elapsed:.2f}s")
    return FactorModel(U, V)
