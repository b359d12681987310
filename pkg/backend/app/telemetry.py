# backend/app/telemetry.py

from prometheus_client import Counter, Histogram

EXPERIMENT_RUNS = Counter(
    "pecf_experiment_runs_total",
    "Experiments completed, by training method",
    ["method"],
)

ENSEMBLE_ROUNDS = Counter(
    "pecf_ensemble_rounds_total",
    "Components added to an ensemble, by training method",
    ["method"],
)

WMF_SOLVE_SECONDS = Histogram(
    "pecf_wmf_solve_seconds",
    "Wall time of a single weighted ALS solve",
    buckets=(0.01, 0.05, 0.1, 0.5, 1, 2, 5, 10, 30, 60, 120),
)
