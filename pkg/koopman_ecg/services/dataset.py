"""Labels, stratified splits, record assembly and per-system model inputs."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from sklearn.preprocessing import StandardScaler
from tqdm import tqdm

from ..errors import ConfigError, DataError
from ..models import ExperimentConfig, KoopmanConfig, SignalConfig, SynthClass, SystemName, Task, WaveletSpec
from .koopman import koopman_features
from .signal import Signal, load_csv, preprocess, synth_ecg
from .training import LabeledSet
from .wavelet import wavelet_window_features

logger = logging.getLogger(__name__)

LABELS_FILE = "labels.csv"


@dataclass(frozen=True)
class LabelRule:
    """
    Ordered (substring patterns -> class name) rules; first match wins.

    Matching is case-insensitive. Block patterns precede the ventricular one
    because "atrioventricular" contains "ventricular".
    """

    task: Task
    mapping: Tuple[Tuple[Tuple[str, ...], str], ...]

    @classmethod
    def binary(cls) -> "LabelRule":
        return cls(
            Task.binary,
            (
                (("normal sinus",), "Normal"),
                (("non-normal", "fibrillation", "ventricular", "block", "arrhythm"), "Non-normal"),
            ),
        )

    @classmethod
    def four(cls) -> "LabelRule":
        return cls(
            Task.four,
            (
                (("atrial fibrillation",), SynthClass.afib.value),
                (("block", "atrioventricular", "bundle branch"), SynthClass.block.value),
                (("ventricular",), SynthClass.ventricular.value),
                (("normal sinus",), SynthClass.normal.value),
            ),
        )

    @classmethod
    def for_task(cls, task: Task) -> "LabelRule":
        return cls.binary() if Task(task) is Task.binary else cls.four()

    def classify(self, diagnosis: str) -> Optional[str]:
        text = diagnosis.lower()
        for patterns, name in self.mapping:
            if any(p in text for p in patterns):
                return name
        return None


@dataclass(frozen=True)
class LabelAssignment:
    labels: List[Optional[int]]  # class index, None when no rule matched
    excluded: int


def generate_labels(diagnoses: Sequence[str], rule: LabelRule) -> LabelAssignment:
    if not rule.mapping:
        raise DataError("label rule has no patterns")
    names = rule.task.class_names
    labels: List[Optional[int]] = []
    for diagnosis in diagnoses:
        name = rule.classify(diagnosis)
        labels.append(None if name is None else names.index(name))
    excluded = sum(label is None for label in labels)
    if excluded:
        logger.warning(f"{excluded} of {len(labels)} records matched no label rule and were excluded")
    return LabelAssignment(labels=labels, excluded=excluded)


@dataclass(frozen=True)
class DatasetSplit:
    train: List[int]
    val: List[int]
    test: List[int]
    ratios: Tuple[float, float, float]
    split_seed: int


def _allocate(n: int, ratios: Tuple[float, float, float]) -> List[int]:
    # Largest remainder; ties go to the earlier split.
    exact = [n * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _class_counts(sizes: List[int], ratios: Tuple[float, float, float]) -> List[List[int]]:
    """
    Per-class (train, val, test) counts whose column sums hit the dataset-wide
    largest-remainder totals.

    Every class gets floor(n_c * r) per split plus at most one extra record,
    so each count stays within one record of its exact share.
    """
    totals = _allocate(sum(sizes), ratios)
    exact = [[n * r for r in ratios] for n in sizes]
    counts = [[int(np.floor(e)) for e in row] for row in exact]
    open_slots = [totals[s] - sum(row[s] for row in counts) for s in range(3)]
    needs = [n - sum(row) for n, row in zip(sizes, counts)]
    # Classes with the most extras pick first, each from the splits still missing the most.
    for c in sorted(range(len(sizes)), key=lambda c: (-needs[c], c)):
        order = sorted(
            range(3), key=lambda s: (-open_slots[s], -(exact[c][s] - counts[c][s]), s)
        )
        for s in order[: needs[c]]:
            counts[c][s] += 1
            open_slots[s] -= 1
    return counts


def split_dataset(
    labels: Sequence[int], ratios: Tuple[float, float, float], split_seed: int
) -> DatasetSplit:
    """Stratified shuffle per class; classes under 3 records go whole to train."""
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be non-negative and sum to 1: {ratios}")
    labels = np.asarray(labels)
    train: List[int] = []
    val: List[int] = []
    test: List[int] = []
    groups = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        rng = np.random.default_rng([split_seed, int(c)])
        members = members[rng.permutation(len(members))]
        if len(members) < 3:
            logger.warning(f"class {int(c)} has {len(members)} records; all routed to train")
            train.extend(members.tolist())
            continue
        groups.append(members)

    counts = _class_counts([len(m) for m in groups], ratios) if groups else []
    for members, (n_train, n_val, _) in zip(groups, counts):
        train.extend(members[:n_train].tolist())
        val.extend(members[n_train : n_train + n_val].tolist())
        test.extend(members[n_train + n_val :].tolist())
    return DatasetSplit(sorted(train), sorted(val), sorted(test), tuple(ratios), split_seed)


@dataclass(frozen=True)
class Record:
    name: str
    signal: Signal
    diagnosis: str


@dataclass(frozen=True)
class Dataset:
    names: List[str]
    excerpts: np.ndarray  # (records, excerpt_len), z-scored
    windows: np.ndarray  # (records, tokens, window_len)
    labels: np.ndarray
    task: Task
    fs: float
    excluded: int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = list(indices)
        return Dataset(
            names=[self.names[i] for i in idx],
            excerpts=self.excerpts[idx],
            windows=self.windows[idx],
            labels=self.labels[idx],
            task=self.task,
            fs=self.fs,
            excluded=self.excluded,
        )


def _class_diagnosis(name: str) -> str:
    # A bare class column goes through the same label rules as free text.
    try:
        return SynthClass(name).diagnosis
    except ValueError:
        return name


def load_records(directory: str | Path) -> List[Record]:
    """
    Read every record listed in ``<directory>/labels.csv``.

    The manifest needs a ``file`` column plus ``diagnosis`` free text or a
    ``class`` name; ``diagnosis`` wins when both are present.
    """
    directory = Path(directory)
    try:
        manifest = pd.read_csv(directory / LABELS_FILE)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {directory / LABELS_FILE}: {e}") from e
    columns = set(manifest.columns)
    if "file" not in columns or not {"diagnosis", "class"} & columns:
        raise DataError(f"{LABELS_FILE} needs a file column and a diagnosis or class column")
    if "diagnosis" in columns:
        diagnoses = manifest["diagnosis"].astype(str).tolist()
    else:
        diagnoses = [_class_diagnosis(str(name)) for name in manifest["class"]]
    return [
        Record(str(file), load_csv(directory / str(file)), diagnosis)
        for file, diagnosis in zip(manifest["file"], diagnoses)
    ]


def synthetic_records(records_per_class: int, cfg: SignalConfig, base_seed: int) -> List[Record]:
    return [
        Record(
            f"{kind.value}_{base_seed + i}",
            synth_ecg(kind, cfg.synth_duration_sec, cfg.synth_fs, base_seed + i),
            kind.diagnosis,
        )
        for kind in SynthClass
        for i in range(records_per_class)
    ]


def assemble_dataset(records: Sequence[Record], rule: LabelRule, cfg: SignalConfig) -> Dataset:
    """Label, preprocess and stack records; unmatched diagnoses are dropped."""
    assignment = generate_labels([r.diagnosis for r in records], rule)
    names, excerpts, windows, labels = [], [], [], []
    for record, label in zip(records, assignment.labels):
        if label is None:
            continue
        excerpt, window_set = preprocess(record.signal, cfg)
        names.append(record.name)
        excerpts.append(excerpt.samples)
        windows.append(window_set.windows)
        labels.append(label)
    if not labels:
        raise DataError("no records left after labeling")
    dataset = Dataset(
        names=names,
        excerpts=np.stack(excerpts),
        windows=np.stack(windows),
        labels=np.asarray(labels, dtype=np.int64),
        task=rule.task,
        fs=cfg.fs,
        excluded=assignment.excluded,
    )
    logger.info(
        f"Assembled {len(dataset)} records ({dataset.windows.shape[1]} windows each) "
        f"for the {rule.task.value} task, {assignment.excluded} excluded"
    )
    return dataset


def koopman_tokens(dataset: Dataset, cfg: KoopmanConfig, progress: bool = False) -> np.ndarray:
    """(records, tokens, 4 * top_k) spectral features, one EDMD fit per window."""
    return np.stack(
        [
            np.stack([koopman_features(w, dataset.fs, cfg) for w in record])
            for record in tqdm(dataset.windows, desc="koopman", disable=not progress, leave=False)
        ]
    )


def wavelet_tokens(dataset: Dataset, spec: WaveletSpec) -> np.ndarray:
    return np.stack(
        [np.stack([wavelet_window_features(w, spec) for w in record]) for record in dataset.windows]
    )


def system_inputs(
    system: SystemName,
    dataset: Dataset,
    cfg: ExperimentConfig,
    koopman: Optional[KoopmanConfig] = None,
) -> np.ndarray:
    """
    Model inputs for one system.

    Transformer systems get (records, tokens, features); RnnRaw gets the raw
    (records, samples) excerpt. ``koopman`` overrides ``cfg.koopman`` for the
    ablated system.
    """
    system = SystemName(system)
    koopman = koopman or cfg.koopman
    if system is SystemName.rnn_raw:
        return dataset.excerpts.copy()
    if system is SystemName.wavelet_tx:
        return wavelet_tokens(dataset, cfg.wavelet)
    if system in (SystemName.koopman_tx, SystemName.koopman_tx_ablated):
        return koopman_tokens(dataset, koopman, cfg.train.progress)
    return np.concatenate(
        [wavelet_tokens(dataset, cfg.wavelet), koopman_tokens(dataset, koopman, cfg.train.progress)],
        axis=-1,
    )


def labeled_splits(
    inputs: np.ndarray, labels: np.ndarray, split: DatasetSplit, standardize: bool
) -> Tuple[LabeledSet, LabeledSet, LabeledSet]:
    """
    Tensors for train/val/test; token features are standardized with a scaler
    fit on the training split only.
    """
    x = inputs.astype(np.float64)
    if standardize:
        n_features = x.shape[-1]
        scaler = StandardScaler().fit(x[split.train].reshape(-1, n_features))
        x = scaler.transform(x.reshape(-1, n_features)).reshape(x.shape)

    def to_set(idx: List[int]) -> Optional[LabeledSet]:
        if not idx:
            return None
        return LabeledSet(torch.from_numpy(x[idx]), torch.from_numpy(labels[idx].astype(np.int64)))

    return to_set(split.train), to_set(split.val), to_set(split.test)


def build_dataset(cfg: ExperimentConfig, data_dir: Optional[str | Path] = None) -> Dataset:
    """Records from ``data_dir`` when given, else the in-memory synthetic set."""
    if data_dir is not None:
        records = load_records(data_dir)
    else:
        records = synthetic_records(cfg.pipeline.records_per_class, cfg.signal, cfg.pipeline.synth_seed)
    return assemble_dataset(records, LabelRule.for_task(cfg.pipeline.task), cfg.signal)
