# backend/app/utils/seeding.py

import numpy as np

# One stream per pipeline stage; adding a stage must not shift the others.
STAGES = {
    "split": 1,
    "zeros": 2,
    "init": 3,
    "partition": 4,
}


def derive_seed(root_seed: int, stage: str) -> int:
    """Deterministically derive a per-stage 32-bit seed from the run's root seed."""
    if stage not in STAGES:
        raise ValueError(f"unknown seed stage '{stage}'")
    seq = np.random.SeedSequence([int(root_seed), STAGES[stage]])
    return int(seq.generate_state(1)[0])
