# Import key components to make them easily accessible
from .errors import ConfigError, DataError, ExperimentError, KoopmanEcgError, TrainingError
from .models import (
    ExperimentConfig,
    ExperimentReport,
    KoopmanConfig,
    SynthClass,
    SystemName,
    Task,
    load_config,
)
from .orchestrator import compare, run_ablation, run_system

# Version
__version__ = "0.1.0"
