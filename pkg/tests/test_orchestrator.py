"""Tests for the experiment orchestrator."""
import math
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from koopman_ecg.errors import DataError, ExperimentError
from koopman_ecg.models import AblationRow, KoopmanConfig, SystemName
from koopman_ecg.orchestrator import (
    _ablation_cell,
    ablate,
    build_model,
    compare,
    fit_and_score,
    report_frame,
    run_ablation,
    run_seed,
    run_system,
)
from koopman_ecg.services.classifiers import RNNClassifier, TransformerClassifier
from koopman_ecg.services.dataset import DatasetSplit, build_dataset, split_dataset, system_inputs


@pytest.fixture
def dataset(tiny_config):
    return build_dataset(tiny_config)


@pytest.fixture
def split(dataset, tiny_config):
    return split_dataset(dataset.labels, tiny_config.pipeline.split_ratios, tiny_config.pipeline.split_seed)


async def test_compare_writes_all_reports(tmp_path, dataset, tiny_config):
    reports = await compare(dataset, tiny_config, out_dir=tmp_path)
    assert [r.system for r in reports] == list(SystemName)
    assert all(len(r.runs) == 5 for r in reports)
    assert all(0.0 <= r.mean <= 1.0 for r in reports)
    assert reports[3].winner is not None

    report = pd.read_csv(tmp_path / "report.csv")
    assert list(report.columns) == [
        "system", "task", "run_seed", "macro_f1",
        "f1_class_0", "f1_class_1", "f1_class_2", "f1_class_3", "wall_clock_s",
    ]
    assert len(report) == 25
    assert report["run_seed"].tolist()[:5] == [42, 43, 44, 45, 46]
    assert (report["wall_clock_s"] == 0.0).all()

    summary = pd.read_csv(tmp_path / "summary.csv")
    assert summary["system"].tolist() == [s.value for s in SystemName]
    assert summary["reference_f1"].tolist()[0] == 0.700

    ablation = pd.read_csv(tmp_path / "ablation.csv")
    assert len(ablation) == 2
    assert list(ablation.columns[:5]) == ["delay", "rbf_centers", "rbf_sigma", "svd_rank", "val_macro_f1"]


async def test_compare_is_byte_identical_across_runs(tmp_path, dataset, tiny_config):
    systems = [SystemName.koopman_tx, SystemName.rnn_raw]
    await compare(dataset, tiny_config, out_dir=tmp_path / "a", systems=systems)
    await compare(dataset, tiny_config, out_dir=tmp_path / "b", systems=systems)
    for name in ("report.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert not (tmp_path / "a" / "ablation.csv").exists()


async def test_run_system_reports_five_seeds(dataset, split, tiny_config):
    report = await run_system(SystemName.wavelet_tx, dataset, split, tiny_config)
    assert [r.run_seed for r in report.runs] == [42, 43, 44, 45, 46]
    assert all(len(r.per_class_f1) == 4 for r in report.runs)
    assert report.winner is None


async def test_ablation_picks_highest_then_smallest(dataset, split, tiny_config):
    scores = {0: 0.5, 5: 0.5}

    def fake_cell(cell, data, cell_split, cfg):
        return AblationRow(
            delay=cell.delay, rbf_centers=cell.rbf_centers, rbf_sigma=cell.rbf_sigma,
            svd_rank=cell.svd_rank, val_macro_f1=scores[cell.rbf_centers],
        )

    with patch("koopman_ecg.orchestrator._ablation_cell", side_effect=fake_cell):
        result = await ablate(dataset, split, tiny_config)
        assert result.winner.rbf_centers == 0
        scores[5] = 0.75
        result = await ablate(dataset, split, tiny_config)
        assert result.winner.rbf_centers == 5
        assert result.winner_row.val_macro_f1 == 0.75
    assert len(result.rows) == 2


async def test_ablation_never_sees_test_records(dataset, split, tiny_config):
    seen = []

    def spy(cell, data, cell_split, cfg):
        seen.append((set(data.names), cell_split))
        return AblationRow(
            delay=cell.delay, rbf_centers=cell.rbf_centers, rbf_sigma=cell.rbf_sigma,
            svd_rank=cell.svd_rank, val_macro_f1=0.5,
        )

    with patch("koopman_ecg.orchestrator._ablation_cell", side_effect=spy):
        await ablate(dataset, split, tiny_config)
    test_names = {dataset.names[i] for i in split.test}
    for names, cell_split in seen:
        assert not names & test_names
        assert cell_split.test == []
        assert len(names) == len(split.train) + len(split.val)


def test_failed_cell_becomes_nan_row(dataset, split, tiny_config):
    pool = split.train + split.val
    data = dataset.subset(pool)
    cell_split = DatasetSplit(
        list(range(len(split.train))), list(range(len(split.train), len(pool))), [], (0.7, 0.15, 0.15), 0
    )
    row = _ablation_cell(KoopmanConfig(delay=400, poly_deg=1), data, cell_split, tiny_config)
    assert math.isnan(row.val_macro_f1)
    assert row.error
    assert row.delay == 400


async def test_all_cells_failing_raises(dataset, split, tiny_config):
    def broken(cell, data, cell_split, cfg):
        return AblationRow(
            delay=cell.delay, rbf_centers=cell.rbf_centers, rbf_sigma=cell.rbf_sigma,
            svd_rank=cell.svd_rank, val_macro_f1=math.nan, error="boom",
        )

    with patch("koopman_ecg.orchestrator._ablation_cell", side_effect=broken):
        with pytest.raises(ExperimentError):
            await run_ablation(tiny_config.ablation, dataset, split.train, split.val, tiny_config)


def test_run_seed_attaches_context(dataset, split, tiny_config):
    inputs = system_inputs(SystemName.rnn_raw, dataset, tiny_config)
    with patch("koopman_ecg.orchestrator.fit_and_score", side_effect=DataError("bad window")):
        with pytest.raises(ExperimentError) as info:
            run_seed(SystemName.rnn_raw, inputs, dataset, split, tiny_config, 44)
    assert info.value.system == "RnnRaw"
    assert info.value.run_seed == 44
    assert "run_seed=44" in str(info.value)


def test_fit_and_score_requires_validation_records(dataset, tiny_config):
    inputs = system_inputs(SystemName.rnn_raw, dataset, tiny_config)
    split = DatasetSplit(list(range(20)), [], list(range(20, 24)), (0.7, 0.15, 0.15), 0)
    with pytest.raises(DataError):
        fit_and_score(SystemName.rnn_raw, inputs, dataset.labels, split, tiny_config, 42, 4)


def test_fit_and_score_caps_epochs(dataset, split, tiny_config):
    inputs = system_inputs(SystemName.wavelet_tx, dataset, tiny_config)
    metrics, result = fit_and_score(
        SystemName.wavelet_tx, inputs, dataset.labels, split, tiny_config, 42, 4, max_epochs=1
    )
    assert len(result.history) == 1
    assert len(metrics.f1) == 4


async def test_report_frame_columns(dataset, split, tiny_config):
    report = await run_system(SystemName.koopman_tx, dataset, split, tiny_config)
    frame = report_frame([report])
    assert frame["system"].unique().tolist() == ["KoopmanTx"]
    assert frame["macro_f1"].tolist() == [r.macro_f1 for r in report.runs]


def test_build_model_sizes_classifier_from_inputs(tiny_config):
    tokens = np.zeros((3, 9, 20))
    model = build_model(SystemName.wavelet_tx, tiny_config, 4, tokens, seed=7)
    assert isinstance(model, TransformerClassifier)
    assert (model.feature_dim, model.cfg.max_tokens, model.cfg.n_classes, model.seed) == (20, 9, 4, 7)

    rnn = build_model(SystemName.rnn_raw, tiny_config, 2, np.zeros((3, 1250)), seed=7)
    assert isinstance(rnn, RNNClassifier)
    assert rnn.cfg.n_classes == 2
