# backend/app/synthetic.py

from pathlib import Path

import numpy as np
from loguru import logger

# written for positives so the default 5-star binarization keeps them
POSITIVE_RATING = 5.0


def generate_synthetic(
    path: str | Path,
    m: int,
    n: int,
    blocks: int,
    d_true: int,
    noise: float,
    seed: int,
    positive_rate: float = 0.1,
) -> Path:
    """
    Write a user,item,rating triplet file with block-diverse preferences.

    Users and items are split into `blocks` groups; the pair (i, j) belongs to
    block (group(i) + group(j)) mod blocks, and every block scores its pairs
    with its own random rank-d_true factor pair. Within each block the top
    `positive_rate` fraction of noisy scores become positives. Only positives
    are written; zeros are sampled later by the data pipeline.
    """
    if blocks < 1 or d_true < 1:
        raise ValueError("blocks and d_true must be >= 1")
    if m < blocks or n < blocks:
        raise ValueError(f"cannot split {m} users / {n} items into {blocks} groups")
    if noise < 0 or not 0.0 < positive_rate < 1.0:
        raise ValueError("noise must be >= 0 and positive_rate in (0, 1)")

    rng = np.random.default_rng(seed)
    user_group = rng.permutation(np.arange(m) % blocks)
    item_group = rng.permutation(np.arange(n) % blocks)
    block_of = (user_group[:, None] + item_group[None, :]) % blocks

    scores = np.zeros((m, n))
    for b in range(blocks):
        P = rng.normal(size=(d_true, m))
        Q = rng.normal(size=(d_true, n))
        scores = np.where(block_of == b, P.T @ Q, scores)
    scores += noise * np.sqrt(d_true) * rng.normal(size=(m, n))

    positive = np.zeros((m, n), dtype=bool)
    for b in range(blocks):
        in_block = block_of == b
        threshold = np.quantile(scores[in_block], 1.0 - positive_rate)
        positive |= in_block & (scores >= threshold)

    users, items = np.nonzero(positive)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for u, i in zip(users, items):
            f.write(f"{u + 1},{i + 1},{POSITIVE_RATING}\n")

    logger.info(f"Synthetic data: {m}×{n}, {blocks} blocks, {users.size} positives → {path}")
    return path
