# backend/app/orchestrator.py

import itertools
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd
from loguru import logger

from .data_loader import (
    RatingDataset,
    SplitSpec,
    assign_confidence,
    binarize,
    dataset_manifest,
    densify_zeros,
    index_ratings,
    load_prepared,
    load_ratings,
    save_prepared,
    split,
    zero_rate_for_ratio,
)
from .ensembles.boost import train_l2boost
from .ensembles.mixture import train_rand_em
from .ensembles.pecf import PecfConfig, train_pecf
from .evaluation import EvalConfig, comparison_table, evaluate, format_report, metrics_rows
from .model_store import load_model, save_model
from .models import AlphaStrategy, EvalReport, ExperimentResult, Method, RunConfig
from .telemetry import EXPERIMENT_RUNS
from .utils.logger_utils import format_key_values, save_json_log, write_key_values
from .utils.seeding import derive_seed
from .wmf import N_JOBS, PriorConfig, TrainWeights, WmfConfig, solve_wmf

# sweepable parameter → RunConfig field
SWEEP_PARAMETERS = {
    "d": "d",
    "nu": "nu",
    "sigma": "sigma",
    "alpha": "alpha",
    "rounds": "rounds",
    "K": "k",
}

METRICS_FLOAT_FORMAT = "%.8f"


def wmf_config_for(config: RunConfig) -> WmfConfig:
    common = dict(
        d=config.d,
        sweeps=config.sweeps,
        init_scale=config.init_scale,
        seed=derive_seed(config.seed, "init"),
        n_jobs=config.n_jobs or N_JOBS,
    )
    if config.sigma0 is not None:
        return WmfConfig.from_prior(PriorConfig(sigma0=config.sigma0, sigma_r=config.sigma_r), **common)
    return WmfConfig(lambda_u=config.lambda_u, lambda_v=config.lambda_v, **common)


def pecf_config_for(config: RunConfig) -> PecfConfig:
    return PecfConfig(
        nu=config.nu,
        sigma=config.sigma,
        max_rounds=config.rounds,
        alpha_strategy=config.alpha_strategy,
        alpha=config.alpha,
        alpha_grid=config.alpha_grid,
        patience=config.patience,
        wmf=wmf_config_for(config),
    )


def eval_config_for(config: RunConfig) -> EvalConfig:
    return EvalConfig(cutoffs=config.cutoffs, exclude_seen=config.exclude_seen)


class Orchestrator:
    def __init__(self, output_root: str | Path | None = None):
        """
        Orchestrator wires together:
        - the data pipeline (load → binarize → index → zeros → confidence → split)
        - one of the four trainers (wmf, pecf, l2boost, randem)
        - evaluation and the on-disk artifacts of a run

        Relative output directories are resolved under `output_root` when given.
        """
        self.output_root = Path(output_root) if output_root is not None else None

    def _output_dir(self, config: RunConfig) -> Path:
        out = Path(config.output_dir)
        if self.output_root is not None and not out.is_absolute():
            out = self.output_root / out
        return out

    # --------------------------------------------------------------------------------
    # DATA
    # --------------------------------------------------------------------------------

    def build_dataset(self, config: RunConfig) -> RatingDataset:
        if config.prepared_path is not None:
            return load_prepared(config.prepared_path)

        raw = binarize(load_ratings(config.dataset_path, config.dataset_format), config.binarize_threshold)
        records = index_ratings(raw)

        rate = config.zero_sample_rate
        if rate is None and config.zero_ratio > 0:
            rate = zero_rate_for_ratio(records, config.zero_ratio)
        if rate is not None:
            records = densify_zeros(records, rate, derive_seed(config.seed, "zeros"))

        records = assign_confidence(records, config.c_pos, config.c_zero)
        spec = SplitSpec(ratios=config.split_ratios, seed=derive_seed(config.seed, "split"))
        dataset = split(records, spec)
        logger.info("Dataset manifest:\n" + format_key_values(dataset_manifest(dataset)))
        return dataset

    def prepare(self, config: RunConfig) -> Dict[str, str]:
        """Run the data pipeline only and write dataset.csv + manifest.txt."""
        out = self._output_dir(config)
        dataset = self.build_dataset(config)
        return {
            "dataset": str(save_prepared(dataset, out / "dataset.csv")),
            "manifest": str(write_key_values(out / "manifest.txt", dataset_manifest(dataset))),
        }

    # --------------------------------------------------------------------------------
    # TRAINING
    # --------------------------------------------------------------------------------

    def _train(self, config: RunConfig, dataset: RatingDataset):
        eval_config = eval_config_for(config)
        wmf_config = wmf_config_for(config)

        if config.method == Method.WMF:
            model = solve_wmf(dataset, TrainWeights.uniform(len(dataset.train)), wmf_config)
            return model, [evaluate(model, dataset, eval_config, round_index=0)]

        if config.method == Method.PECF:
            return train_pecf(dataset, pecf_config_for(config), eval_config)

        if config.method == Method.L2BOOST:
            return train_l2boost(dataset, config.rounds, config.shrinkage, wmf_config, eval_config)

        reports: List[EvalReport] = []

        def record(t, model):
            reports.append(evaluate(model, dataset, eval_config, round_index=t))
            logger.info(f"RandEM round {t}: {format_report(reports[-1])}")

        model = train_rand_em(
            dataset,
            config.k,
            wmf_config,
            config.em_iters,
            noise_sigma=config.sigma,
            partition_seed=derive_seed(config.seed, "partition"),
            on_round=record,
        )
        return model, reports

    def run_experiment(self, config: RunConfig) -> ExperimentResult:
        """
        Main pipeline entrypoint.

        Writes manifest.txt, model.bin, metrics.csv, summary.txt and config.json
        into the run's output directory; everything is determined by the config
        and its root seed.
        """
        out = self._output_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        logger.info(f"Orchestrator: method={config.method.value} output={out}")

        dataset = self.build_dataset(config)
        manifest = dataset_manifest(dataset)
        model, reports = self._train(config, dataset)

        artifacts = {
            "manifest": str(write_key_values(out / "manifest.txt", manifest)),
            "model": str(save_model(model, out / "model.bin")),
            "metrics": str(self._write_metrics(reports, out / "metrics.csv")),
            "config": str(save_json_log(out, "config", config.model_dump(mode="json"))),
        }
        final = self._final_report(config, model, reports)
        summary = self._summary(config, final, rounds_completed=reports[-1].round)
        summary_path = out / "summary.txt"
        with open(summary_path, "w", encoding="utf-8") as f:
            f.write(format_key_values(summary))
            f.write("\n")
            f.write(comparison_table({config.method.value: final}))
        artifacts["summary"] = str(summary_path)

        EXPERIMENT_RUNS.labels(method=config.method.value).inc()
        logger.info(f"Final ({config.method.value}): {format_report(final)}")
        return ExperimentResult(method=config.method, reports=reports, summary=summary, artifacts=artifacts)

    @staticmethod
    def _write_metrics(reports: List[EvalReport], path: Path) -> Path:
        pd.DataFrame(metrics_rows(reports)).to_csv(path, index=False, float_format=METRICS_FLOAT_FORMAT)
        return path

    @staticmethod
    def _final_report(config: RunConfig, model, reports: List[EvalReport]) -> EvalReport:
        """Report of the round the returned model comes from (early stopping may rewind PECF)."""
        if config.method == Method.PECF:
            return reports[model.size - 1]
        return reports[-1]

    @staticmethod
    def _summary(config: RunConfig, final: EvalReport, rounds_completed: int) -> Dict[str, Any]:
        summary: Dict[str, Any] = {
            "method": config.method.value,
            "rounds_completed": rounds_completed,
            "best_round": final.round,
            "d": config.d,
            "seed": config.seed,
            "exclude_seen": config.exclude_seen,
        }
        if config.method == Method.PECF:
            summary.update(nu=config.nu, sigma=config.sigma, alpha_strategy=config.alpha_strategy.value)
        elif config.method == Method.L2BOOST:
            summary.update(shrinkage=config.shrinkage)
        elif config.method == Method.RANDEM:
            summary.update(k=config.k, em_iters=config.em_iters, sigma=config.sigma)
        for m in sorted(final.recall_at):
            summary[f"recall@{m}"] = final.recall_at[m]
        for m in sorted(final.recall_at_all_items):
            summary[f"recall@{m}_all_items"] = final.recall_at_all_items[m]
        summary["wmse"] = final.wmse
        return summary

    # --------------------------------------------------------------------------------
    # EVALUATE / SWEEP
    # --------------------------------------------------------------------------------

    def evaluate_saved(
        self,
        prepared_path: str | Path,
        model_path: str | Path,
        eval_config: EvalConfig,
        output_dir: str | Path,
    ) -> EvalReport:
        dataset = load_prepared(prepared_path)
        model = load_model(model_path)
        report = evaluate(model, dataset, eval_config)
        out = Path(output_dir)
        if self.output_root is not None and not out.is_absolute():
            out = self.output_root / out
        out.mkdir(parents=True, exist_ok=True)
        self._write_metrics([report], out / "metrics.csv")
        logger.info(f"Evaluated {model_path}: {format_report(report)}")
        return report

    def sweep(self, config: RunConfig, grid: Dict[str, List[Any]]) -> pd.DataFrame:
        """
        One run per point of the cartesian product of `grid`, all sharing the
        config's seed; writes sweep.csv and sweep_summary.txt.
        """
        if not grid:
            raise ValueError("sweep needs at least one parameter")
        for name in grid:
            if name not in SWEEP_PARAMETERS:
                raise ValueError(f"cannot sweep '{name}'; choose from {sorted(SWEEP_PARAMETERS)}")

        base_out = self._output_dir(config)
        names = list(grid)
        rows, finals = [], {}
        for values in itertools.product(*(grid[n] for n in names)):
            label = "_".join(f"{n}={v}" for n, v in zip(names, values))
            update: Dict[str, Any] = {"output_dir": str(base_out / "sweep" / label)}
            for name, value in zip(names, values):
                if name == "alpha":
                    if str(value) == "dynamic":
                        update["alpha_strategy"] = AlphaStrategy.DYNAMIC
                    else:
                        update.update(alpha_strategy=AlphaStrategy.FIXED, alpha=float(value))
                else:
                    update[SWEEP_PARAMETERS[name]] = value
            run_config = RunConfig.model_validate({**config.model_dump(), **update})
            result = Orchestrator().run_experiment(run_config)
            final = result.final_report
            finals[label] = final

            row: Dict[str, Any] = {"method": config.method.value}
            row.update({n: v for n, v in zip(names, values)})
            row.update({f"recall@{m}": final.recall_at[m] for m in sorted(final.recall_at)})
            row["wmse"] = final.wmse
            rows.append(row)

        table = pd.DataFrame(rows)
        base_out.mkdir(parents=True, exist_ok=True)
        table.to_csv(base_out / "sweep.csv", index=False, float_format=METRICS_FLOAT_FORMAT)
        with open(base_out / "sweep_summary.txt", "w", encoding="utf-8") as f:
            f.write(comparison_table(finals))
        logger.info("Sweep results:\n" + comparison_table(finals))
        return table
