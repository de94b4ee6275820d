"""
Experiment orchestration: seeded runs per system, the EDMD ablation grid and
the five-system comparison.
"""
import asyncio
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .errors import DataError, ExperimentError, KoopmanEcgError
from .models import (
    AblationGrid,
    AblationRow,
    ClassifierKind,
    ExperimentConfig,
    ExperimentReport,
    KoopmanConfig,
    Metrics,
    RunResult,
    SystemName,
)
from .services.classifiers import Classifier, build_classifier
from .services.dataset import Dataset, DatasetSplit, labeled_splits, split_dataset, system_inputs
from .services.training import TrainResult, evaluate, train

logger = logging.getLogger(__name__)

REPORT_FILE = "report.csv"
SUMMARY_FILE = "summary.csv"
ABLATION_FILE = "ablation.csv"
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class AblationResult:
    rows: List[AblationRow]
    winner: KoopmanConfig
    winner_row: AblationRow


def build_model(
    system: SystemName, cfg: ExperimentConfig, n_classes: int, inputs: np.ndarray, seed: int
) -> Classifier:
    if system is SystemName.rnn_raw:
        return build_classifier(
            ClassifierKind.rnn, seed, rnn=cfg.rnn.model_copy(update={"n_classes": n_classes})
        )
    transformer = cfg.transformer.model_copy(
        update={"n_classes": n_classes, "max_tokens": inputs.shape[1]}
    )
    return build_classifier(
        ClassifierKind.transformer, seed, transformer=transformer, feature_dim=inputs.shape[2]
    )


def fit_and_score(
    system: SystemName,
    inputs: np.ndarray,
    labels: np.ndarray,
    split: DatasetSplit,
    cfg: ExperimentConfig,
    seed: int,
    n_classes: int,
    max_epochs: Optional[int] = None,
    score_on_val: bool = False,
) -> Tuple[Metrics, TrainResult]:
    """
    Train one seeded model and score it.

    Args:
        system: Which pipeline the inputs belong to
        inputs: Tokens (records, tokens, features) or raw excerpts (records, samples)
        labels: Class index per record
        split: Record indices per split
        cfg: Experiment configuration
        seed: Initialisation and shuffling seed
        n_classes: Number of classes of the task
        max_epochs: Optional cap below ``cfg.train.max_epochs``
        score_on_val: Score the validation split instead of the test split

    Returns:
        Tuple[Metrics, TrainResult]: Scores on the chosen split and the training outcome
    """
    train_set, val_set, test_set = labeled_splits(
        inputs, labels, split, standardize=system is not SystemName.rnn_raw
    )
    target = val_set if score_on_val else test_set
    if train_set is None or val_set is None or target is None:
        raise DataError(
            f"split sizes train={len(split.train)} val={len(split.val)} test={len(split.test)} "
            "leave a required split empty"
        )
    update = {"seed": seed}
    if max_epochs is not None:
        update["max_epochs"] = min(max_epochs, cfg.train.max_epochs)
    train_cfg = cfg.train.model_copy(update=update)
    model = build_model(system, cfg, n_classes, inputs, seed)
    result = train(model, train_set, val_set, train_cfg, n_classes)
    return evaluate(result.model, target, n_classes), result


def run_seed(
    system: SystemName,
    inputs: np.ndarray,
    dataset: Dataset,
    split: DatasetSplit,
    cfg: ExperimentConfig,
    seed: int,
) -> RunResult:
    started = time.perf_counter()
    try:
        metrics, result = fit_and_score(
            system, inputs, dataset.labels, split, cfg, seed, dataset.task.n_classes
        )
    except ExperimentError:
        raise
    except KoopmanEcgError as e:
        raise ExperimentError(str(e), system.value, seed) from e
    elapsed = time.perf_counter() - started
    logger.debug(
        f"{system.value} seed {seed}: macro-F1 {metrics.macro_f1:.4f} "
        f"after {len(result.history)} epochs (best {result.best_epoch})"
    )
    return RunResult(
        run_seed=seed,
        macro_f1=metrics.macro_f1,
        per_class_f1=metrics.f1,
        wall_clock_s=elapsed if cfg.pipeline.include_wall_clock else 0.0,
    )


def _ablation_cell(
    cell: KoopmanConfig,
    data: Dataset,
    split: DatasetSplit,
    cfg: ExperimentConfig,
) -> AblationRow:
    axes = dict(
        delay=cell.delay, rbf_centers=cell.rbf_centers, rbf_sigma=cell.rbf_sigma, svd_rank=cell.svd_rank
    )
    try:
        inputs = system_inputs(SystemName.koopman_tx_ablated, data, cfg, koopman=cell)
        metrics, _ = fit_and_score(
            SystemName.koopman_tx_ablated,
            inputs,
            data.labels,
            split,
            cfg,
            cfg.train.seed,
            data.task.n_classes,
            max_epochs=cfg.ablation.max_epochs,
            score_on_val=True,
        )
    except Exception as e:
        logger.warning(f"Ablation cell {axes} failed: {e}")
        return AblationRow(**axes, val_macro_f1=math.nan, error=str(e))
    logger.debug(f"Ablation cell {axes}: val macro-F1 {metrics.macro_f1:.4f}")
    return AblationRow(**axes, val_macro_f1=metrics.macro_f1)


async def run_ablation(
    grid: AblationGrid,
    data: Dataset,
    train_idx: Sequence[int],
    val_idx: Sequence[int],
    cfg: ExperimentConfig,
) -> AblationResult:
    """
    Evaluate every grid cell with one seeded run and pick the winner on validation.

    Only training and validation records are passed in, so test labels are
    never read here.

    Raises:
        ExperimentError: If every cell failed
    """
    split = DatasetSplit(list(train_idx), list(val_idx), [], cfg.pipeline.split_ratios, cfg.pipeline.split_seed)
    cells = grid.cells(cfg.koopman)
    logger.info(f"Ablation grid: {len(cells)} cells on {len(split.train)} train / {len(split.val)} val records")
    semaphore = asyncio.Semaphore(cfg.pipeline.max_workers)
    bar = tqdm(total=len(cells), desc="ablation", disable=not cfg.train.progress, leave=False)

    async def evaluate_cell(cell: KoopmanConfig) -> AblationRow:
        async with semaphore:
            row = await asyncio.to_thread(_ablation_cell, cell, data, split, cfg)
        bar.update(1)
        return row

    rows = await asyncio.gather(*(evaluate_cell(c) for c in cells))
    bar.close()

    scored = [(row, cell) for row, cell in zip(rows, cells) if math.isfinite(row.val_macro_f1)]
    if not scored:
        raise ExperimentError("every ablation cell failed", SystemName.koopman_tx_ablated.value)
    winner_row, winner = min(
        scored,
        key=lambda pair: (
            -pair[0].val_macro_f1,
            pair[0].delay,
            pair[0].rbf_centers,
            pair[0].svd_rank,
            pair[0].rbf_sigma,
        ),
    )
    logger.info(
        f"Ablation winner: delay={winner.delay} rbf_centers={winner.rbf_centers} "
        f"rbf_sigma={winner.rbf_sigma} svd_rank={winner.svd_rank} "
        f"(val macro-F1 {winner_row.val_macro_f1:.4f})"
    )
    return AblationResult(rows=list(rows), winner=winner, winner_row=winner_row)


async def ablate(dataset: Dataset, split: DatasetSplit, cfg: ExperimentConfig) -> AblationResult:
    """Run the grid on the train and validation records of ``split``."""
    pool = list(split.train) + list(split.val)
    n_train = len(split.train)
    return await run_ablation(
        cfg.ablation, dataset.subset(pool), range(n_train), range(n_train, len(pool)), cfg
    )


async def run_system(
    system: SystemName,
    dataset: Dataset,
    split: DatasetSplit,
    cfg: ExperimentConfig,
    ablation: Optional[AblationResult] = None,
) -> ExperimentReport:
    """
    Run one system end to end once per run seed.

    KoopmanTxAblated resolves the ablation grid first unless ``ablation`` is
    supplied.
    """
    system = SystemName(system)
    logger.info(f"Running {system.value} on the {dataset.task.value} task")
    koopman = None
    if system is SystemName.koopman_tx_ablated:
        if ablation is None:
            ablation = await ablate(dataset, split, cfg)
        koopman = ablation.winner

    try:
        inputs = await asyncio.to_thread(system_inputs, system, dataset, cfg, koopman)
    except KoopmanEcgError as e:
        raise ExperimentError(str(e), system.value) from e

    semaphore = asyncio.Semaphore(cfg.pipeline.max_workers)

    async def one(seed: int) -> RunResult:
        async with semaphore:
            return await asyncio.to_thread(run_seed, system, inputs, dataset, split, cfg, seed)

    runs = await asyncio.gather(*(one(seed) for seed in cfg.pipeline.run_seeds))
    report = ExperimentReport(system=system, task=dataset.task, runs=list(runs), winner=koopman)
    logger.info(f"{system.value}: macro-F1 {report.mean:.4f} ± {report.std:.4f}")
    return report


async def compare(
    dataset: Dataset,
    cfg: ExperimentConfig,
    out_dir: Optional[str | Path] = None,
    systems: Sequence[SystemName] = tuple(SystemName),
) -> List[ExperimentReport]:
    """
    Run every system on one stratified split and write the report CSVs.

    Args:
        dataset: Assembled records
        cfg: Experiment configuration
        out_dir: Where report.csv, summary.csv and ablation.csv go; nothing is written when None
        systems: Systems to run, in report order

    Returns:
        List[ExperimentReport]: One report per system
    """
    split = split_dataset(dataset.labels, cfg.pipeline.split_ratios, cfg.pipeline.split_seed)
    logger.info(f"Split: {len(split.train)} train / {len(split.val)} val / {len(split.test)} test")
    ablation = None
    if SystemName.koopman_tx_ablated in systems:
        ablation = await ablate(dataset, split, cfg)

    reports = []
    for system in systems:
        reports.append(await run_system(system, dataset, split, cfg, ablation=ablation))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(reports, out / REPORT_FILE)
        write_summary_csv(reports, out / SUMMARY_FILE)
        if ablation is not None:
            write_ablation_csv(ablation.rows, out / ABLATION_FILE)
        logger.info(f"Reports written to {out}")
    return reports


def report_frame(reports: Sequence[ExperimentReport]) -> pd.DataFrame:
    n_classes = max(len(r.per_class_f1) for r in reports)
    rows = []
    for report in reports:
        for run in report.runs:
            row = {
                "system": report.system.value,
                "task": report.task.value,
                "run_seed": run.run_seed,
                "macro_f1": run.macro_f1,
            }
            row.update({f"f1_class_{i}": f for i, f in enumerate(run.per_class_f1)})
            row["wall_clock_s"] = run.wall_clock_s
            rows.append(row)
    columns = (
        ["system", "task", "run_seed", "macro_f1"]
        + [f"f1_class_{i}" for i in range(n_classes)]
        + ["wall_clock_s"]
    )
    return pd.DataFrame(rows, columns=columns)


def write_report_csv(reports: Sequence[ExperimentReport], path: str | Path) -> None:
    report_frame(reports).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_summary_csv(reports: Sequence[ExperimentReport], path: str | Path) -> None:
    frame = pd.DataFrame(
        [
            {
                "system": r.system.value,
                "task": r.task.value,
                "mean_macro_f1": r.mean,
                "std_macro_f1": r.std,
                "reference_f1": r.reference_f1,
            }
            for r in reports
        ],
        columns=["system", "task", "mean_macro_f1", "std_macro_f1", "reference_f1"],
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_ablation_csv(rows: Sequence[AblationRow], path: str | Path) -> None:
    frame = pd.DataFrame(
        [r.model_dump() for r in rows],
        columns=["delay", "rbf_centers", "rbf_sigma", "svd_rank", "val_macro_f1", "error"],
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
