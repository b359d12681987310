# backend/app/evaluation.py

from typing import Protocol, Sequence

import numpy as np
import scipy.sparse as sp
from loguru import logger
from pydantic import BaseModel, Field, field_validator

from .data_loader import RatingDataset, Split, SplitArrays
from .models import DEFAULT_CUTOFFS, EvalReport


class Scorer(Protocol):
    def predict_entries(self, users: np.ndarray, items: np.ndarray) -> np.ndarray: ...

    def predict_users(self, users: np.ndarray) -> np.ndarray: ...


class EvalConfig(BaseModel):
    cutoffs: tuple[int, ...] = DEFAULT_CUTOFFS
    exclude_seen: bool = True
    user_block: int = Field(1024, ge=1)

    @field_validator("cutoffs")
    @classmethod
    def _positive(cls, v):
        if not v or any(m < 1 for m in v):
            raise ValueError("cutoffs must be positive")
        return tuple(sorted(set(v)))


IndexRows = sp.csr_matrix | Sequence[np.ndarray]


def _row(rows: IndexRows | None, u: int) -> np.ndarray:
    if rows is None:
        return np.empty(0, dtype=np.int64)
    if sp.issparse(rows):
        return rows.indices[rows.indptr[u]:rows.indptr[u + 1]]
    return np.asarray(rows[u], dtype=np.int64)


def _user_recalls(
    scores: np.ndarray,
    positives: np.ndarray,
    excluded: np.ndarray,
    cutoffs: Sequence[int],
) -> np.ndarray:
    """Recall of one user at each cutoff; ties rank by ascending item index."""
    n = scores.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[excluded] = False
    candidates = np.flatnonzero(mask)
    top = max(cutoffs)
    if top > candidates.size:
        raise ValueError(f"cutoff M={top} exceeds the {candidates.size} candidate items")
    order = candidates[np.argsort(-scores[candidates], kind="stable")[:top]]
    hit = np.isin(order, positives)
    hits_at = np.cumsum(hit)
    return np.array([hits_at[m - 1] for m in cutoffs], dtype=np.float64) / positives.size


def recall_at_cutoffs(
    scores_by_user: np.ndarray,
    positives_by_user: IndexRows,
    cutoffs: Sequence[int],
    exclusions_by_user: IndexRows | None = None,
) -> dict[int, float]:
    """Mean Recall@M over users with at least one positive, for each M."""
    cutoffs = sorted(set(int(m) for m in cutoffs))
    if cutoffs[0] < 1:
        raise ValueError("M must be >= 1")
    per_user = []
    for u in range(scores_by_user.shape[0]):
        pos = _row(positives_by_user, u)
        if pos.size == 0:
            continue
        per_user.append(_user_recalls(scores_by_user[u], pos, _row(exclusions_by_user, u), cutoffs))
    if not per_user:
        raise ValueError("no user has a positive item to recall")
    means = np.mean(np.vstack(per_user), axis=0)
    return {m: float(r) for m, r in zip(cutoffs, means)}


def recall_at_m(
    scores_by_user: np.ndarray,
    positives_by_user: IndexRows,
    M: int,
    exclusions_by_user: IndexRows | None = None,
) -> float:
    return recall_at_cutoffs(scores_by_user, positives_by_user, [M], exclusions_by_user)[M]


def wmse(predictions: np.ndarray, entries: SplitArrays) -> float:
    """Σ c (r̂ − r)² / Σ c over the given entries."""
    if len(entries) == 0:
        raise ValueError("cannot compute WMSE over an empty split")
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape != entries.ratings.shape:
        raise ValueError(f"{predictions.size} predictions for {len(entries)} entries")
    c = entries.confidences
    return float(np.sum(c * (predictions - entries.ratings) ** 2) / np.sum(c))


def evaluate(
    model: Scorer,
    dataset: RatingDataset,
    config: EvalConfig | None = None,
    round_index: int = 0,
    split: Split = Split.TEST,
) -> EvalReport:
    """Recall@M (seen-filtered and unfiltered) plus WMSE of `model` on one split."""
    config = config or EvalConfig()
    entries = dataset.arrays(split)
    error = wmse(model.predict_entries(entries.users, entries.items), entries)

    positives = dataset.positive_matrix((split,))
    seen = dataset.positive_matrix(tuple(s for s in (Split.TRAIN, Split.VALIDATION) if s != split))
    users = np.flatnonzero(np.diff(positives.indptr) > 0)
    if users.size == 0:
        raise ValueError(f"no user has a positive entry in the {split.value} split")

    cutoffs = list(config.cutoffs)
    filtered, unfiltered = [], []
    for lo in range(0, users.size, config.user_block):
        block = users[lo:lo + config.user_block]
        scores = model.predict_users(block)
        for row, u in enumerate(block):
            pos = _row(positives, u)
            excl = _row(seen, u) if config.exclude_seen else np.empty(0, dtype=np.int64)
            filtered.append(_user_recalls(scores[row], pos, excl, cutoffs))
            unfiltered.append(_user_recalls(scores[row], pos, np.empty(0, dtype=np.int64), cutoffs))

    recall = np.mean(np.vstack(filtered), axis=0)
    recall_all = np.mean(np.vstack(unfiltered), axis=0)
    report = EvalReport(
        round=round_index,
        recall_at={m: float(r) for m, r in zip(cutoffs, recall)},
        recall_at_all_items={m: float(r) for m, r in zip(cutoffs, recall_all)},
        wmse=error,
    )
    logger.debug(f"evaluate round={round_index}: {format_report(report)}")
    return report


def format_report(report: EvalReport) -> str:
    parts = [f"recall@{m}={r:.4f}" for m, r in sorted(report.recall_at.items())]
    parts.append(f"wmse={report.wmse:.6f}")
    return " ".join(parts)


def metrics_rows(reports: Sequence[EvalReport]) -> list[dict]:
    """One row per round: round, recall@M..., wmse."""
    rows = []
    for r in reports:
        row = {"round": r.round}
        for m in sorted(r.recall_at):
            row[f"recall@{m}"] = r.recall_at[m]
        row["wmse"] = r.wmse
        rows.append(row)
    return rows


def comparison_table(results: dict[str, EvalReport]) -> str:
    """Plain-text grid: one line per method/setting, one column per Recall@M, then WMSE."""
    if not results:
        return ""
    cutoffs = sorted(next(iter(results.values())).recall_at)
    label_width = max(12, max(len(k) for k in results))
    header = " | ".join([f"{'':<{label_width}}"] + [f"Recall@{m:<4}" for m in cutoffs] + ["WMSE"])
    lines = [header, "-" * len(header)]
    for label, report in results.items():
        cells = [f"{label:<{label_width}}"] + [f"{report.recall_at[m]:<10.4f}" for m in cutoffs]
        cells.append(f"{report.wmse:.6f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"
