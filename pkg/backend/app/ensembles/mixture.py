# backend/app/ensembles/mixture.py

from dataclasses import dataclass
from typing import Callable

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from ..data_loader import RatingDataset
from ..telemetry import ENSEMBLE_ROUNDS
from ..wmf import DimensionMismatchError, FactorModel, TrainWeights, WmfConfig, solve_wmf, wmf_objective


# ------------------------------------------------------------------------------------
# MODEL
# ------------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """Mixture of WMF components with prior weights π; point prediction is the mixture mean."""

    components: tuple[FactorModel, ...]
    weights: np.ndarray
    noise_sigma: float = 1.0

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("an ensemble needs at least one component")
        shape = (comps[0].d, comps[0].num_users, comps[0].num_items)
        for c in comps[1:]:
            if (c.d, c.num_users, c.num_items) != shape:
                raise DimensionMismatchError("all components must share d, m and n")
        pi = np.array(self.weights, dtype=np.float64)
        if pi.shape != (len(comps),):
            raise ValueError(f"{pi.size} weights for {len(comps)} components")
        if (pi < 0).any() or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got {pi.sum()}")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")
        pi.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", pi)

    @classmethod
    def single(cls, model: FactorModel, noise_sigma: float = 1.0) -> "EnsembleModel":
        return cls((model,), np.ones(1), noise_sigma)

    @property
    def size(self) -> int:
        return len(self.components)

    @property
    def num_users(self) -> int:
        return self.components[0].num_users

    @property
    def num_items(self) -> int:
        return self.components[0].num_items

    def extended(self, component: FactorModel, alpha: float) -> "EnsembleModel":
        """(1 − α)·current ⊕ α·component; existing factor matrices are shared, not copied."""
        pi = np.append((1.0 - alpha) * self.weights, alpha)
        return EnsembleModel(self.components + (component,), pi, self.noise_sigma)

    def predict(self, user: int, item: int) -> float:
        return float(sum(w * c.predict(user, item) for w, c in zip(self.weights, self.components)))

    def predict_entries(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        out = np.zeros(len(users))
        for w, c in zip(self.weights, self.components):
            out += w * c.predict_entries(users, items)
        return out

    def predict_users(self, users: np.ndarray) -> np.ndarray:
        out = np.zeros((len(users), self.num_items))
        for w, c in zip(self.weights, self.components):
            out += w * c.predict_users(users)
        return out

    def component_errors(self, users: np.ndarray, items: np.ndarray, ratings: np.ndarray) -> np.ndarray:
        """(entries × K) matrix of r − f^(k)."""
        return np.column_stack([ratings - c.predict_entries(users, items) for c in self.components])


def ensemble_predict(model: EnsembleModel, user: int, item: int) -> float:
    return model.predict(user, item)


# ------------------------------------------------------------------------------------
# DENSITIES
# ------------------------------------------------------------------------------------

def component_density(error, sigma: float):
    """Unnormalized Gaussian density exp(−e²/σ²); the normalizer is absorbed into ν."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return np.exp(-np.square(error) / sigma**2)


def rho_weight(error, nu: float, sigma: float):
    """
    Posterior weight of an entry for a prospective new component, 1 / (1 + ν·p(r|i,j)).

    Increases with |e| from 1/(1+ν) at e = 0 and saturates to 1.
    """
    if nu <= 0:
        raise ValueError("nu must be > 0")
    return 1.0 / (1.0 + nu * component_density(error, sigma))


def rho_curve(nu: float, sigma: float, e_max: float | None = None, points: int = 101) -> np.ndarray:
    """(points × 2) table of (e, ρ(e)) on [0, e_max]; e_max defaults to 5σ."""
    e = np.linspace(0.0, 5.0 * sigma if e_max is None else e_max, points)
    return np.column_stack([e, rho_weight(e, nu, sigma)])


# ------------------------------------------------------------------------------------
# EM
# ------------------------------------------------------------------------------------

def em_e_step(model: EnsembleModel, dataset: RatingDataset) -> np.ndarray:
    """Responsibilities q (entries × K) over the training split; rows sum to 1."""
    train = dataset.train
    errors = model.component_errors(train.users, train.items, train.ratings)
    with np.errstate(divide="ignore"):
        log_q = np.log(model.weights)[None, :] - np.square(errors) / model.noise_sigma**2
    norm = logsumexp(log_q, axis=1, keepdims=True)
    bad = ~np.isfinite(norm[:, 0])
    norm[bad] = 0.0
    q = np.exp(log_q - norm)
    if bad.any():
        logger.warning(f"em_e_step: {int(bad.sum())} entries had no finite density, using uniform responsibilities")
        q[bad] = 1.0 / model.size
    return q


def _check_responsibilities(q: np.ndarray, entries: int) -> None:
    if q.ndim != 2 or q.shape[0] != entries:
        raise DimensionMismatchError(f"responsibilities of shape {q.shape} for {entries} training entries")
    if (q < 0).any() or not np.allclose(q.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("responsibility rows must be non-negative and sum to 1")


def mixture_priors(confidences: np.ndarray, q: np.ndarray) -> np.ndarray:
    """π_k ∝ Σ c_ij q_ij^(k)."""
    mass = confidences @ q
    total = mass.sum()
    if total <= 0:
        return np.full(q.shape[1], 1.0 / q.shape[1])
    return mass / total


def em_m_step(
    dataset: RatingDataset,
    q: np.ndarray,
    config: WmfConfig,
    previous: EnsembleModel | None = None,
    noise_sigma: float | None = None,
) -> EnsembleModel:
    """
    Re-solve component k on confidences c·q^(k) and refresh π.

    With `previous`, each component warm-starts from its last factors, so the
    penalized complete-data objective cannot increase.
    """
    train = dataset.train
    _check_responsibilities(q, len(train))
    K = q.shape[1]
    if previous is not None and previous.size != K:
        raise DimensionMismatchError(f"previous ensemble has {previous.size} components, q has {K}")

    components = []
    for k in range(K):
        init = previous.components[k] if previous is not None else None
        components.append(solve_wmf(dataset, TrainWeights(q[:, k]), config.with_seed(config.seed + k), init=init))

    sigma = noise_sigma if noise_sigma is not None else (previous.noise_sigma if previous is not None else 1.0)
    return EnsembleModel(tuple(components), mixture_priors(train.confidences, q), sigma)


def em_surrogate_objective(model: EnsembleModel, dataset: RatingDataset, q: np.ndarray, config: WmfConfig) -> float:
    """Σ_k [Σ c q^(k) e^(k)² + regularizers] for fixed responsibilities."""
    return float(
        sum(wmf_objective(c, dataset, TrainWeights(q[:, k]), config) for k, c in enumerate(model.components))
    )


def random_partition(entries: int, K: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, K, size=entries)


def train_rand_em(
    dataset: RatingDataset,
    K: int,
    config: WmfConfig,
    em_iters: int,
    *,
    noise_sigma: float = 1.0,
    partition_seed: int = 0,
    on_round: Callable[[int, EnsembleModel], None] | None = None,
) -> EnsembleModel:
    """
    EM over a K-component mixture started from a random hard partition of the
    training entries. `on_round(t, model)` sees the initial fit (t = 0) and the
    model after every EM iteration.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    train = dataset.train
    groups = random_partition(len(train), K, partition_seed)
    hard = np.zeros((len(train), K))
    hard[np.arange(len(train)), groups] = 1.0

    components = tuple(
        solve_wmf(dataset, TrainWeights(hard[:, k]), config.with_seed(config.seed + k)) for k in range(K)
    )
    model = EnsembleModel(components, mixture_priors(train.confidences, hard), noise_sigma)
    ENSEMBLE_ROUNDS.labels(method="randem").inc(K)
    if on_round is not None:
        on_round(0, model)

    if K == 1:
        # q is identically 1, so an EM pass would only re-solve the same problem
        return model

    for t in range(1, em_iters + 1):
        q = em_e_step(model, dataset)
        model = em_m_step(dataset, q, config, previous=model)
        logger.info(f"RandEM iteration {t}/{em_iters}: π={np.round(model.weights, 4).tolist()}")
        if on_round is not None:
            on_round(t, model)
    return model
