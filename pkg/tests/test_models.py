"""Tests for configuration and report models."""
import json

import numpy as np
import pytest
from pydantic import ValidationError

from koopman_ecg.errors import ConfigError
from koopman_ecg.models import (
    AblationGrid,
    DictionaryConfig,
    ExperimentReport,
    KoopmanConfig,
    PipelineConfig,
    RunResult,
    SignalConfig,
    SynthClass,
    SystemName,
    Task,
    TransformerConfig,
    load_config,
)


def test_synth_class_enum():
    """SynthClass values and their free-text diagnoses."""
    assert SynthClass.normal == "Normal"
    assert SynthClass.afib == "AFib"
    assert SynthClass.block.diagnosis == "Second degree atrioventricular block"
    assert Task.binary.n_classes == 2
    assert Task.four.class_names == ["Normal", "AFib", "Ventricular", "Block"]


def test_default_config_values():
    cfg = load_config()
    assert cfg.koopman.delay == 8
    assert cfg.koopman.svd_rank == 16
    assert cfg.koopman.ridge_reg == 1e-4
    assert cfg.koopman.rbf_centers == 0
    assert cfg.transformer.heads == 8
    assert cfg.transformer.emb_dim == 128
    assert cfg.train.betas == (0.9, 0.999)
    assert cfg.pipeline.run_seeds == [42, 43, 44, 45, 46]
    assert cfg.pipeline.include_wall_clock is False


def test_signal_config_derived_lengths():
    cfg = SignalConfig()
    assert cfg.window_len == 250
    assert cfg.stride == 125
    assert cfg.excerpt_len == 1250
    assert cfg.tokens_per_record == 9


def test_dictionary_size_counts_constant_and_monomials():
    assert DictionaryConfig(delay=1, poly_deg=2).size == 3
    assert DictionaryConfig(delay=8, poly_deg=2).n_monomials == 44
    assert DictionaryConfig(delay=8, poly_deg=2, rbf_centers=10).size == 55


def test_transformer_heads_must_divide_embedding():
    with pytest.raises(ValidationError):
        TransformerConfig(emb_dim=10, heads=3)


def test_split_ratios_must_sum_to_one():
    with pytest.raises(ValidationError):
        PipelineConfig(split_ratios=(0.7, 0.2, 0.2))


def test_ablation_grid_is_full_product():
    cells = AblationGrid().cells(KoopmanConfig())
    assert len(cells) == 3 * 4 * 3 * 3
    assert len({(c.delay, c.rbf_centers, c.rbf_sigma, c.svd_rank) for c in cells}) == 108
    assert all(c.ridge_reg == 1e-4 for c in cells)


def test_load_config_reads_json_and_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"koopman": {"delay": 4}, "train": {"max_epochs": 7}}))
    cfg = load_config(path, train={"patience": 3})
    assert cfg.koopman.delay == 4
    assert cfg.train.max_epochs == 7
    assert cfg.train.patience == 3


@pytest.mark.parametrize(
    "document",
    ['{"koopman": {"delay": 0}}', '{"unknown_section": {}}', "[1, 2]", "not json"],
)
def test_invalid_config_raises_config_error(tmp_path, document):
    path = tmp_path / "config.json"
    path.write_text(document)
    with pytest.raises(ConfigError):
        load_config(path)


def test_report_statistics_recomputed_from_runs():
    values = [0.80, 0.82, 0.78, 0.85, 0.75]
    report = ExperimentReport(
        system=SystemName.koopman_tx_ablated,
        task=Task.binary,
        runs=[RunResult(run_seed=42 + i, macro_f1=v, per_class_f1=[v, v]) for i, v in enumerate(values)],
    )
    assert abs(report.mean - np.mean(values)) < 1e-12
    assert abs(report.std - np.std(values)) < 1e-12
    assert report.reference_f1 == 0.786
    assert "mean" in report.model_dump()


def test_report_requires_five_runs():
    with pytest.raises(ValidationError):
        ExperimentReport(
            system=SystemName.rnn_raw,
            task=Task.four,
            runs=[RunResult(run_seed=42, macro_f1=0.5, per_class_f1=[0.5])],
        )
