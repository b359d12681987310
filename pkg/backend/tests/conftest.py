import numpy as np
import pandas as pd
import pytest

from backend.app.data_loader import RatingDataset
from backend.app.synthetic import generate_synthetic
from backend.app.utils.logger_utils import configure_logging


@pytest.fixture(autouse=True, scope="session")
def _quiet_logs():
    configure_logging("WARNING")


def build_dataset(users, items, ratings, confidences=None, splits=None, m=None, n=None) -> RatingDataset:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    confidences = np.ones(users.size) if confidences is None else np.asarray(confidences, dtype=np.float64)
    splits = ["train"] * users.size if splits is None else list(splits)
    m = int(users.max()) + 1 if m is None else m
    n = int(items.max()) + 1 if n is None else n
    frame = pd.DataFrame(
        {"user": users, "item": items, "rating": ratings, "confidence": confidences, "split": splits}
    )
    return RatingDataset(
        frame=frame,
        user_index={str(u): u for u in range(m)},
        item_index={str(i): i for i in range(n)},
    )


def dense_dataset(R: np.ndarray, C: np.ndarray | None = None, splits=None) -> RatingDataset:
    """Every cell of R observed (train unless `splits` says otherwise)."""
    m, n = R.shape
    users, items = np.divmod(np.arange(m * n), n)
    conf = None if C is None else C.ravel()
    return build_dataset(users, items, R.ravel(), conf, splits, m, n)


@pytest.fixture
def make_dataset():
    return build_dataset


@pytest.fixture
def make_dense_dataset():
    return dense_dataset


@pytest.fixture
def random_instance():
    """Fully observed m × n instance with random ratings and confidences, all in train."""

    def _make(seed: int, m: int = 10, n: int = 8):
        rng = np.random.default_rng(seed)
        R = rng.normal(size=(m, n))
        C = rng.uniform(0.5, 1.5, size=(m, n))
        return dense_dataset(R, C)

    return _make


@pytest.fixture
def low_rank_instance():
    """Fully observed rank-`rank` matrix plus small Gaussian noise, random confidences, all in train."""

    def _make(seed: int, m: int = 10, n: int = 8, rank: int = 3, noise: float = 0.1):
        rng = np.random.default_rng(seed)
        R = rng.normal(size=(rank, m)).T @ rng.normal(size=(rank, n)) + noise * rng.normal(size=(m, n))
        C = rng.uniform(0.5, 1.5, size=(m, n))
        return dense_dataset(R, C)

    return _make


@pytest.fixture
def small_synthetic(tmp_path):
    return generate_synthetic(tmp_path / "synthetic.csv", m=80, n=60, blocks=2, d_true=3, noise=0.3, seed=11)


SPLIT_TAGS = np.array(["train", "validation", "test"], dtype=object)


@pytest.fixture
def split_instance():
    """Dense random binary matrix with entries split 3:1:1."""

    def _make(seed: int, m: int = 12, n: int = 10):
        rng = np.random.default_rng(seed)
        R = (rng.random((m, n)) < 0.3).astype(float)
        tags = SPLIT_TAGS[rng.choice(3, size=m * n, p=[0.6, 0.2, 0.2])]
        return dense_dataset(R, splits=tags)

    return _make
