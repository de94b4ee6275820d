import json
import math
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    computed_field,
    field_validator,
    model_validator,
)

from .errors import ConfigError


class SynthClass(str, Enum):
    normal = "Normal"
    afib = "AFib"
    ventricular = "Ventricular"
    block = "Block"

    @property
    def diagnosis(self) -> str:
        """Free-text note the label rules map back onto this class."""
        return _DIAGNOSES[self]


_DIAGNOSES = {
    SynthClass.normal: "Normal sinus rhythm",
    SynthClass.afib: "Atrial fibrillation",
    SynthClass.ventricular: "Ventricular tachycardia",
    SynthClass.block: "Second degree atrioventricular block",
}


class Task(str, Enum):
    binary = "binary"
    four = "four"

    @property
    def class_names(self) -> List[str]:
        if self is Task.binary:
            return ["Normal", "Non-normal"]
        return [c.value for c in SynthClass]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


class SystemName(str, Enum):
    wavelet_tx = "WaveletTx"
    koopman_tx = "KoopmanTx"
    hybrid_tx = "HybridTx"
    koopman_tx_ablated = "KoopmanTxAblated"
    rnn_raw = "RnnRaw"


# Reference macro-F1 (binary, four-class) at full scale. Printed next to desk-scale
# results, never used as thresholds.
REFERENCE_F1: Dict[SystemName, Tuple[float, float]] = {
    SystemName.wavelet_tx: (0.750, 0.700),
    SystemName.koopman_tx: (0.697, 0.771),
    SystemName.hybrid_tx: (0.677, 0.533),
    SystemName.koopman_tx_ablated: (0.786, 0.764),
    SystemName.rnn_raw: (0.782, 0.700),
}


class ClassifierKind(str, Enum):
    transformer = "Transformer"
    rnn = "RNN"


class WaveletFamily(str, Enum):
    haar = "haar"
    db4 = "db4"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SignalConfig(_Section):
    fs: float = Field(125.0, gt=0, description="Target sampling rate in Hz")
    window_sec: float = Field(2.0, gt=0)
    stride_sec: float = Field(1.0, gt=0)
    excerpt_sec: float = Field(10.0, gt=0, description="Leading excerpt kept per record")
    synth_fs: float = Field(250.0, ge=50)
    synth_duration_sec: float = Field(10.0, ge=4)

    @property
    def window_len(self) -> int:
        return int(round(self.window_sec * self.fs))

    @property
    def stride(self) -> int:
        return int(round(self.stride_sec * self.fs))

    @property
    def excerpt_len(self) -> int:
        return int(round(self.excerpt_sec * self.fs))

    @property
    def tokens_per_record(self) -> int:
        return (self.excerpt_len - self.window_len) // self.stride + 1


class DictionaryConfig(_Section):
    delay: int = Field(8, ge=1, description="Delay-embedding dimension")
    poly_deg: int = Field(2, ge=1)
    rbf_centers: int = Field(0, ge=0)
    rbf_sigma: float = Field(0.3, gt=0)
    center_seed: int = 0

    @property
    def n_monomials(self) -> int:
        """Monomials of total degree 1..poly_deg over ``delay`` variables."""
        return math.comb(self.delay + self.poly_deg, self.poly_deg) - 1

    @property
    def size(self) -> int:
        return 1 + self.n_monomials + self.rbf_centers


class KoopmanConfig(_Section):
    delay: int = Field(8, ge=1)
    poly_deg: int = Field(2, ge=1)
    rbf_centers: int = Field(0, ge=0)
    rbf_sigma: float = Field(0.3, gt=0)
    center_seed: int = 0
    svd_rank: int = Field(16, ge=1)
    ridge_reg: float = Field(1e-4, ge=0)
    top_k: int = Field(8, ge=1)

    @property
    def dictionary(self) -> DictionaryConfig:
        return DictionaryConfig(
            delay=self.delay,
            poly_deg=self.poly_deg,
            rbf_centers=self.rbf_centers,
            rbf_sigma=self.rbf_sigma,
            center_seed=self.center_seed,
        )


class WaveletSpec(_Section):
    family: WaveletFamily = WaveletFamily.db4
    levels: int = Field(4, ge=1)


class TransformerConfig(_Section):
    layers: int = Field(4, ge=1)
    heads: int = Field(8, ge=1)
    emb_dim: int = Field(128, ge=2)
    ff_dim: int = Field(256, ge=1)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    n_classes: int = Field(4, ge=2)
    max_tokens: int = Field(9, ge=1)

    @model_validator(mode="after")
    def heads_divide_embedding(self):
        if self.emb_dim % self.heads != 0:
            raise ValueError(f"emb_dim={self.emb_dim} is not divisible by heads={self.heads}")
        if self.emb_dim % 2 != 0:
            raise ValueError("emb_dim must be even for the sinusoidal positional encoding")
        return self


class RnnConfig(_Section):
    hidden: int = Field(64, ge=1)
    n_classes: int = Field(4, ge=2)


class TrainConfig(_Section):
    lr: float = Field(1e-4, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    batch: int = Field(32, ge=1)
    max_epochs: int = Field(100, ge=1)
    patience: int = Field(10, ge=1)
    min_delta: float = Field(1e-6, ge=0)
    seed: int = 42
    progress: bool = False

    @field_validator("betas")
    @classmethod
    def betas_in_unit_interval(cls, v):
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError(f"betas must lie in [0, 1): {v}")
        return v


class AblationGrid(_Section):
    delay: List[int] = [4, 8, 16]
    rbf_centers: List[int] = [0, 10, 25, 50]
    rbf_sigma: List[float] = [0.1, 0.3, 1.0]
    svd_rank: List[int] = [8, 16, 32]
    max_epochs: Optional[int] = Field(None, ge=1, description="Epoch cap for grid cells")

    @field_validator("delay", "rbf_centers", "rbf_sigma", "svd_rank")
    @classmethod
    def axis_not_empty(cls, v):
        if not v:
            raise ValueError("ablation axes must be non-empty")
        return v

    def cells(self, base: KoopmanConfig) -> List[KoopmanConfig]:
        """Full Cartesian product, each cell layered over ``base``."""
        return [
            base.model_copy(
                update={"delay": d, "rbf_centers": c, "rbf_sigma": s, "svd_rank": r}
            )
            for d, c, s, r in product(self.delay, self.rbf_centers, self.rbf_sigma, self.svd_rank)
        ]


class PipelineConfig(_Section):
    task: Task = Task.four
    run_seeds: List[int] = [42, 43, 44, 45, 46]
    split_ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15)
    split_seed: int = 0
    records_per_class: int = Field(50, ge=1)
    synth_seed: int = 1000
    max_workers: int = Field(1, ge=1)
    include_wall_clock: bool = False  # true writes measured seconds, so report.csv differs per run

    @field_validator("run_seeds")
    @classmethod
    def five_runs(cls, v):
        if len(v) != 5:
            raise ValueError(f"exactly 5 run seeds are required, got {len(v)}")
        return v

    @field_validator("split_ratios")
    @classmethod
    def ratios_sum_to_one(cls, v):
        if any(r < 0 for r in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be non-negative and sum to 1: {v}")
        return v


class ExperimentConfig(_Section):
    signal: SignalConfig = SignalConfig()
    koopman: KoopmanConfig = KoopmanConfig()
    wavelet: WaveletSpec = WaveletSpec()
    transformer: TransformerConfig = TransformerConfig()
    rnn: RnnConfig = RnnConfig()
    train: TrainConfig = TrainConfig()
    ablation: AblationGrid = AblationGrid()
    pipeline: PipelineConfig = PipelineConfig()


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_macro_f1: float


class Metrics(BaseModel):
    precision: List[float]
    recall: List[float]
    f1: List[float]
    macro_f1: float
    accuracy: float
    confusion: List[List[int]]


class RunResult(BaseModel):
    run_seed: int
    macro_f1: float
    per_class_f1: List[float]
    wall_clock_s: float = 0.0


class ExperimentReport(BaseModel):
    system: SystemName
    task: Task
    runs: List[RunResult]
    winner: Optional[KoopmanConfig] = None

    @field_validator("runs")
    @classmethod
    def exactly_five_runs(cls, v):
        if len(v) != 5:
            raise ValueError(f"an experiment report holds exactly 5 runs, got {len(v)}")
        return v

    @computed_field
    @property
    def mean(self) -> float:
        return float(np.mean([r.macro_f1 for r in self.runs]))

    @computed_field
    @property
    def std(self) -> float:
        return float(np.std([r.macro_f1 for r in self.runs]))

    @computed_field
    @property
    def per_class_f1(self) -> List[float]:
        return np.mean([r.per_class_f1 for r in self.runs], axis=0).tolist()

    @computed_field
    @property
    def wall_clock_s(self) -> float:
        return float(sum(r.wall_clock_s for r in self.runs))

    @property
    def reference_f1(self) -> float:
        binary, four = REFERENCE_F1[self.system]
        return binary if self.task is Task.binary else four


class AblationRow(BaseModel):
    delay: int
    rbf_centers: int
    rbf_sigma: float
    svd_rank: int
    val_macro_f1: float
    error: Optional[str] = None


class ComplexArray(BaseModel):
    re: List[float]
    im: List[float]


class KoopmanModelDump(BaseModel):
    """JSON form of a fitted EDMD model."""

    K: List[List[float]]
    eigvals: ComplexArray
    eigvecs_re: List[List[float]]
    eigvecs_im: List[List[float]]
    C: List[List[float]]
    dictionary: DictionaryConfig
    centers: List[List[float]]
    dt: float
    svd_rank: int
    ridge_reg: float
    effective_rank: int


def load_config(path: Optional[str | Path] = None, **overrides) -> ExperimentConfig:
    """
    Build an experiment configuration.

    Args:
        path: Optional JSON document; every key is optional and defaults to the
            field default.
        **overrides: Section-level overrides, e.g. ``train={"max_epochs": 5}``.

    Returns:
        ExperimentConfig: Validated configuration

    Raises:
        ConfigError: If the document is unreadable or fails validation
    """
    data: Dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    for section, values in overrides.items():
        merged = dict(data.get(section, {}))
        merged.update(values)
        data[section] = merged
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
