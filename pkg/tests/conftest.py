"""Pytest configuration and shared fixtures."""
import os
import sys

import numpy as np
import pytest
from fastapi.testclient import TestClient

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from api import app  # noqa: E402
from koopman_ecg.models import (  # noqa: E402
    AblationGrid,
    ExperimentConfig,
    KoopmanConfig,
    PipelineConfig,
    RnnConfig,
    SignalConfig,
    SynthClass,
    TrainConfig,
    TransformerConfig,
)
from koopman_ecg.services.signal import preprocess, synth_ecg  # noqa: E402


@pytest.fixture
def test_client():
    """Create a test client for the FastAPI application."""
    with TestClient(app) as client:
        yield client


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def normal_windows():
    """Standardized 2 s windows at 125 Hz cut from synthetic Normal records."""
    cfg = SignalConfig()
    windows = []
    for seed in range(6):
        signal = synth_ecg(SynthClass.normal, 10.0, 250.0, seed)
        windows.extend(preprocess(signal, cfg)[1].windows)
    return np.asarray(windows[:50])


@pytest.fixture
def tiny_transformer_config():
    return TransformerConfig(layers=1, heads=2, emb_dim=8, ff_dim=16, dropout=0.0, n_classes=2, max_tokens=2)


@pytest.fixture
def tiny_config():
    """A configuration small enough for end-to-end runs inside unit tests."""
    return ExperimentConfig(
        koopman=KoopmanConfig(delay=4, poly_deg=1, svd_rank=4, top_k=4),
        transformer=TransformerConfig(layers=1, heads=2, emb_dim=8, ff_dim=16, dropout=0.1),
        rnn=RnnConfig(hidden=8),
        train=TrainConfig(lr=1e-2, batch=8, max_epochs=3, patience=2),
        ablation=AblationGrid(delay=[4], rbf_centers=[0, 5], rbf_sigma=[1.0], svd_rank=[4], max_epochs=2),
        pipeline=PipelineConfig(records_per_class=6, include_wall_clock=False),
    )
