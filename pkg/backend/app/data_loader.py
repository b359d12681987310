# backend/app/data_loader.py

import os
import zipfile
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Literal, NamedTuple

import httpx
import numpy as np
import pandas as pd
import scipy.sparse as sp
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, field_validator
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

load_dotenv()

DATA_ROOT = Path(__file__).parent.parent.parent / "data"

ML100K_URL = os.getenv("ML100K_URL", "https://files.grouplens.org/datasets/movielens/ml-100k.zip")
FETCH_RETRIES = int(os.getenv("PECF_FETCH_RETRIES", "3"))
HTTP_TIMEOUT = int(os.getenv("PECF_HTTP_TIMEOUT_SECS", "60"))

# unobserved pairs are scanned in fixed-size chunks so the draw sequence
# (and therefore the sample) does not depend on available memory
DENSIFY_CHUNK = 1 << 22

RatingFormat = Literal["movielens_tabular", "triplet_csv"]
_SEPARATORS = {"movielens_tabular": "\t", "triplet_csv": ","}


# ------------------------------------------------------------------------------------
# ERRORS
# ------------------------------------------------------------------------------------

class RatingParseError(ValueError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------------------------
# TYPES
# ------------------------------------------------------------------------------------

class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


SPLIT_ORDER = (Split.TRAIN, Split.VALIDATION, Split.TEST)


class Observation(NamedTuple):
    user: int
    item: int
    rating: float
    confidence: float
    split: Split


class SplitArrays(NamedTuple):
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    confidences: np.ndarray

    def __len__(self) -> int:
        return int(self.users.size)


class SplitSpec(BaseModel):
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    @field_validator("ratios")
    @classmethod
    def _ratios_are_a_distribution(cls, v):
        if any(r < 0 for r in v):
            raise ValueError("split ratios must be non-negative")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(v)}")
        return v

    @classmethod
    def from_parts(cls, train: float, validation: float, test: float, seed: int = 0) -> "SplitSpec":
        """Build from unnormalized parts, e.g. 3:1:1."""
        total = float(train + validation + test)
        if total <= 0:
            raise ValueError("split parts must have a positive sum")
        return cls(ratios=(train / total, validation / total, test / total), seed=seed)


@dataclass(frozen=True, eq=False)
class RatingRecords:
    """Indexed records before splitting: columns user_id, item_id, user, item, rating[, confidence]."""

    frame: pd.DataFrame
    user_index: dict[str, int]
    item_index: dict[str, int]

    @property
    def num_users(self) -> int:
        return len(self.user_index)

    @property
    def num_items(self) -> int:
        return len(self.item_index)

    def _with_frame(self, frame: pd.DataFrame) -> "RatingRecords":
        return RatingRecords(frame=frame, user_index=self.user_index, item_index=self.item_index)


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """
    Immutable, split-tagged implicit-feedback dataset.

    frame columns: user, item, rating, confidence, split
    """

    frame: pd.DataFrame
    user_index: dict[str, int]
    item_index: dict[str, int]

    def __post_init__(self):
        f = self.frame
        m, n = self.num_users, self.num_items
        if len(f) and ((f["user"] < 0).any() or (f["user"] >= m).any()):
            raise ValueError("user index out of range")
        if len(f) and ((f["item"] < 0).any() or (f["item"] >= n).any()):
            raise ValueError("item index out of range")
        if (f["confidence"] <= 0).any():
            raise ValueError("every confidence must be > 0")
        if not f["split"].isin([s.value for s in Split]).all():
            raise ValueError("unknown split tag")
        if f.duplicated(["user", "item", "split"]).any():
            raise ValueError("duplicate (user, item) pair within a split")

    @property
    def num_users(self) -> int:
        return len(self.user_index)

    @property
    def num_items(self) -> int:
        return len(self.item_index)

    @cached_property
    def _split_arrays(self) -> dict[Split, SplitArrays]:
        out = {}
        for s in SPLIT_ORDER:
            part = self.frame[self.frame["split"] == s.value]
            arrays = SplitArrays(
                users=part["user"].to_numpy(dtype=np.int64),
                items=part["item"].to_numpy(dtype=np.int64),
                ratings=part["rating"].to_numpy(dtype=np.float64),
                confidences=part["confidence"].to_numpy(dtype=np.float64),
            )
            for a in arrays:
                a.setflags(write=False)
            out[s] = arrays
        return out

    def arrays(self, split: Split | str) -> SplitArrays:
        return self._split_arrays[Split(split)]

    @property
    def train(self) -> SplitArrays:
        return self.arrays(Split.TRAIN)

    @property
    def validation(self) -> SplitArrays:
        return self.arrays(Split.VALIDATION)

    @property
    def test(self) -> SplitArrays:
        return self.arrays(Split.TEST)

    @property
    def entries(self) -> list[Observation]:
        return [
            Observation(int(u), int(i), float(r), float(c), Split(s))
            for u, i, r, c, s in self.frame[["user", "item", "rating", "confidence", "split"]].itertuples(
                index=False, name=None
            )
        ]

    def positive_matrix(self, splits: tuple[Split, ...]) -> sp.csr_matrix:
        """Binary user × item CSR matrix of positive entries in the given splits."""
        users, items = [], []
        for s in splits:
            a = self.arrays(s)
            mask = a.ratings > 0.5
            users.append(a.users[mask])
            items.append(a.items[mask])
        users = np.concatenate(users) if users else np.empty(0, dtype=np.int64)
        items = np.concatenate(items) if items else np.empty(0, dtype=np.int64)
        data = np.ones(users.size, dtype=np.float64)
        mat = sp.csr_matrix((data, (users, items)), shape=(self.num_users, self.num_items))
        mat.sum_duplicates()
        mat.data[:] = 1.0
        return mat


# ------------------------------------------------------------------------------------
# LOADING
# ------------------------------------------------------------------------------------

def load_ratings(path: str | Path, fmt: RatingFormat = "triplet_csv") -> pd.DataFrame:
    """
    Parse a rating file into raw records (user_id, item_id, rating).

    Original ids are kept as strings; no re-indexing happens here.
    Columns beyond the third are ignored.
    """
    path = Path(path)
    if fmt not in _SEPARATORS:
        raise ConfigError(f"unknown rating format '{fmt}'")
    if not path.exists():
        raise FileNotFoundError(f"rating file not found: {path}")

    sep = _SEPARATORS[fmt]
    user_ids, item_ids, ratings = [], [], []

    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\r\n").split(sep)
            if len(fields) < 3:
                raise RatingParseError(line_number, f"expected at least 3 fields, got {len(fields)}")
            try:
                rating = float(fields[2])
            except ValueError:
                raise RatingParseError(line_number, f"rating '{fields[2].strip()}' is not numeric") from None
            if not np.isfinite(rating):
                raise RatingParseError(line_number, "rating must be finite")
            user_ids.append(fields[0].strip())
            item_ids.append(fields[1].strip())
            ratings.append(rating)

    if not ratings:
        raise ValueError(f"{path} contains no rating records")

    logger.info(f"Loaded {len(ratings)} raw ratings from {path}")
    return pd.DataFrame({"user_id": user_ids, "item_id": item_ids, "rating": np.asarray(ratings, dtype=np.float64)})


def binarize(frame: pd.DataFrame, threshold: float) -> pd.DataFrame:
    """rating ← 1.0 if rating ≥ threshold else 0.0; a second call is a no-op."""
    if frame.attrs.get("binarized_at") is not None:
        return frame.copy()
    out = frame.copy()
    out["rating"] = np.where(out["rating"].to_numpy() >= threshold, 1.0, 0.0)
    out.attrs["binarized_at"] = float(threshold)
    return out


def _id_sort_key(external_id: str):
    return (0, int(external_id), "") if external_id.isdigit() else (1, 0, external_id)


def index_ratings(frame: pd.DataFrame) -> RatingRecords:
    """Attach dense user/item indices; duplicate (user, item) pairs keep the last rating."""
    frame = frame.astype({"user_id": str, "item_id": str})
    dupes = frame.duplicated(["user_id", "item_id"], keep="last")
    if dupes.any():
        logger.warning(f"Dropping {int(dupes.sum())} duplicate (user, item) records")
        frame = frame[~dupes]

    user_index = {uid: k for k, uid in enumerate(sorted(frame["user_id"].unique(), key=_id_sort_key))}
    item_index = {iid: k for k, iid in enumerate(sorted(frame["item_id"].unique(), key=_id_sort_key))}

    out = frame.reset_index(drop=True).copy()
    out["user"] = out["user_id"].map(user_index).astype(np.int64)
    out["item"] = out["item_id"].map(item_index).astype(np.int64)
    return RatingRecords(frame=out, user_index=user_index, item_index=item_index)


def densify_zeros(records: RatingRecords, sample_rate: float, seed: int) -> RatingRecords:
    """
    Add rating-0 observations for a seeded Bernoulli(sample_rate) sample of the
    unobserved (user, item) pairs. Existing pairs are never duplicated.
    """
    if not (0.0 < sample_rate <= 1.0):
        raise ConfigError(f"sample_rate must be in (0, 1], got {sample_rate}")
    if "confidence" in records.frame.columns:
        raise ValueError("densify_zeros must run before assign_confidence")

    m, n = records.num_users, records.num_items
    frame = records.frame
    observed = np.unique(frame["user"].to_numpy(np.int64) * n + frame["item"].to_numpy(np.int64))

    rng = np.random.default_rng(seed)
    total = m * n
    picked = []
    for start in range(0, total, DENSIFY_CHUNK):
        stop = min(start + DENSIFY_CHUNK, total)
        hits = np.flatnonzero(rng.random(stop - start) < sample_rate) + start
        if observed.size and hits.size:
            pos = np.minimum(np.searchsorted(observed, hits), observed.size - 1)
            hits = hits[observed[pos] != hits]
        picked.append(hits)

    pairs = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    users, items = pairs // n, pairs % n

    user_ids = np.empty(m, dtype=object)
    for uid, k in records.user_index.items():
        user_ids[k] = uid
    item_ids = np.empty(n, dtype=object)
    for iid, k in records.item_index.items():
        item_ids[k] = iid

    zeros = pd.DataFrame(
        {
            "user_id": user_ids[users],
            "item_id": item_ids[items],
            "rating": np.zeros(pairs.size),
            "user": users.astype(np.int64),
            "item": items.astype(np.int64),
        }
    )
    logger.info(f"densify_zeros: added {len(zeros)} zero entries (rate={sample_rate:.6g})")
    merged = pd.concat([frame, zeros], ignore_index=True)
    merged.attrs = dict(frame.attrs)
    return records._with_frame(merged)


def zero_rate_for_ratio(records: RatingRecords, zero_ratio: float = 5.0) -> float | None:
    """
    Sample rate that brings the zero count to zero_ratio × positives.
    None when the observed zeros already reach the target.
    """
    ratings = records.frame["rating"].to_numpy()
    positives = int((ratings > 0.5).sum())
    zeros = int(ratings.size - positives)
    unobserved = records.num_users * records.num_items - ratings.size
    needed = zero_ratio * positives - zeros
    if needed <= 0 or unobserved <= 0:
        return None
    return min(1.0, needed / unobserved)


def assign_confidence(records: RatingRecords, c_pos: float, c_zero: float) -> RatingRecords:
    if c_pos <= 0 or c_zero <= 0:
        raise ConfigError(f"confidence coefficients must be > 0 (c_pos={c_pos}, c_zero={c_zero})")
    out = records.frame.copy()
    out["confidence"] = np.where(out["rating"].to_numpy() > 0.5, float(c_pos), float(c_zero))
    return records._with_frame(out)


def split(records: RatingRecords, spec: SplitSpec) -> RatingDataset:
    """Tag every entry train/validation/test by an independent seeded draw."""
    if "confidence" not in records.frame.columns:
        raise ValueError("assign_confidence must run before split")

    rng = np.random.default_rng(spec.seed)
    draws = rng.random(len(records.frame))
    cumulative = np.cumsum(spec.ratios)
    cumulative[-1] = 1.0
    codes = np.minimum(np.searchsorted(cumulative, draws, side="right"), 2)

    frame = records.frame[["user", "item", "rating", "confidence"]].copy()
    frame["split"] = np.asarray([s.value for s in SPLIT_ORDER], dtype=object)[codes]
    return RatingDataset(frame=frame.reset_index(drop=True), user_index=records.user_index, item_index=records.item_index)


# ------------------------------------------------------------------------------------
# MANIFEST / PREPARED IO
# ------------------------------------------------------------------------------------

def dataset_manifest(dataset: RatingDataset) -> dict:
    m, n = dataset.num_users, dataset.num_items
    f = dataset.frame
    manifest = {
        "num_users": m,
        "num_items": n,
        "entries": int(len(f)),
        "positives": int((f["rating"] > 0.5).sum()),
        "density": float(len(f) / (m * n)) if m * n else 0.0,
    }
    for s in SPLIT_ORDER:
        a = dataset.arrays(s)
        manifest[f"{s.value}_entries"] = len(a)
        manifest[f"{s.value}_positives"] = int((a.ratings > 0.5).sum())
    return manifest


def save_prepared(dataset: RatingDataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    user_ids = {k: uid for uid, k in dataset.user_index.items()}
    item_ids = {k: iid for iid, k in dataset.item_index.items()}
    out = dataset.frame.copy()
    out.insert(0, "item_id", out["item"].map(item_ids))
    out.insert(0, "user_id", out["user"].map(user_ids))
    out.to_csv(path, index=False)
    return path


def load_prepared(path: str | Path) -> RatingDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"prepared dataset not found: {path}")
    df = pd.read_csv(path, dtype={"user_id": str, "item_id": str, "split": str})
    users = df[["user_id", "user"]].drop_duplicates("user").sort_values("user")
    items = df[["item_id", "item"]].drop_duplicates("item").sort_values("item")
    user_index = {uid: int(k) for uid, k in zip(users["user_id"], users["user"])}
    item_index = {iid: int(k) for iid, k in zip(items["item_id"], items["item"])}
    frame = df[["user", "item", "rating", "confidence", "split"]].copy()
    frame["user"] = frame["user"].astype(np.int64)
    frame["item"] = frame["item"].astype(np.int64)
    return RatingDataset(frame=frame, user_index=user_index, item_index=item_index)


# ------------------------------------------------------------------------------------
# MOVIELENS-100K FETCH
# ------------------------------------------------------------------------------------

@retry(
    stop=stop_after_attempt(FETCH_RETRIES),
    wait=wait_exponential(multiplier=0.5),
    retry=retry_if_exception_type(httpx.HTTPError),
    reraise=True,
)
def _download(url: str, target: Path) -> None:
    logger.info(f"Downloading {url}")
    with httpx.stream("GET", url, timeout=HTTP_TIMEOUT, follow_redirects=True) as r:
        r.raise_for_status()
        with open(target, "wb") as f:
            for chunk in r.iter_bytes():
                f.write(chunk)


def fetch_movielens_100k(dest_dir: str | Path | None = None, url: str = ML100K_URL) -> Path:
    """Return the path to ml-100k/u.data, downloading the public archive if needed."""
    dest_dir = Path(dest_dir) if dest_dir is not None else DATA_ROOT
    data_file = dest_dir / "ml-100k" / "u.data"
    if data_file.exists():
        return data_file

    dest_dir.mkdir(parents=True, exist_ok=True)
    archive = dest_dir / "ml-100k.zip"
    _download(url, archive)
    with zipfile.ZipFile(archive) as zf:
        zf.extract("ml-100k/u.data", dest_dir)
    logger.info(f"Extracted {data_file}")
    return data_file
