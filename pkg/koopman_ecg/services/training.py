"""Seeded mini-batch training with early stopping, and F1 evaluation."""
import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, precision_score, recall_score
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from ..errors import DataError, TrainingDivergedError
from ..models import EpochRecord, Metrics, TrainConfig
from .classifiers import AdamW, cross_entropy, predict

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


@dataclass(frozen=True)
class LabeledSet:
    """Model inputs (tokens or raw samples) with integer class labels."""

    inputs: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise DataError("labeled set is empty")
        if len(self.inputs) != len(self.labels):
            raise DataError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class TrainResult:
    model: nn.Module
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf


def evaluate_loss(model: nn.Module, data: LabeledSet, n_classes: int) -> Tuple[float, float]:
    """Mean cross-entropy and macro-F1 over ``data`` with dropout off."""
    model.eval()
    total = 0.0
    preds = []
    with torch.no_grad():
        for i in range(0, len(data), EVAL_BATCH):
            logits = model(data.inputs[i : i + EVAL_BATCH])
            labels = data.labels[i : i + EVAL_BATCH]
            total += cross_entropy(logits, labels).item() * len(labels)
            preds.append(logits.argmax(dim=-1))
    macro = f1_score(
        data.labels.numpy(),
        torch.cat(preds).numpy(),
        labels=list(range(n_classes)),
        average="macro",
        zero_division=0,
    )
    return total / len(data), float(macro)


def train(
    model: nn.Module,
    train_set: LabeledSet,
    val_set: LabeledSet,
    cfg: TrainConfig,
    n_classes: int,
) -> TrainResult:
    """
    Train with AdamW and stop early on validation loss.

    Args:
        model: Freshly initialised classifier
        train_set: Training inputs and labels
        val_set: Validation inputs and labels
        cfg: Optimiser, batching and stopping settings
        n_classes: Number of classes for the validation macro-F1

    Returns:
        TrainResult: The model carrying its best-validation weights and the epoch history

    Raises:
        TrainingDivergedError: If a training or validation loss turns non-finite
    """
    optimizer = AdamW.from_config(model.parameters(), cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    loader = DataLoader(
        TensorDataset(train_set.inputs, train_set.labels),
        batch_size=cfg.batch,
        shuffle=True,
        generator=gen,
    )
    result = TrainResult(model=model)
    best_state = copy.deepcopy(model.state_dict())
    stale = 0

    for epoch in tqdm(range(1, cfg.max_epochs + 1), desc="epochs", disable=not cfg.progress, leave=False):
        model.train()
        running = 0.0
        for xb, yb in loader:
            optimizer.zero_grad(set_to_none=True)
            loss = cross_entropy(model(xb), yb)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"training loss became {loss.item()} at epoch {epoch} (lr={cfg.lr}, batch={cfg.batch})"
                )
            loss.backward()
            optimizer.step()
            running += loss.item() * len(yb)

        val_loss, val_f1 = evaluate_loss(model, val_set, n_classes)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"validation loss became {val_loss} at epoch {epoch}")
        record = EpochRecord(
            epoch=epoch,
            train_loss=running / len(train_set),
            val_loss=val_loss,
            val_macro_f1=val_f1,
        )
        result.history.append(record)
        logger.debug(
            "epoch %d train_loss=%.6f val_loss=%.6f val_macro_f1=%.4f",
            epoch, record.train_loss, val_loss, val_f1,
        )

        if val_loss < result.best_val_loss - cfg.min_delta:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug("early stop at epoch %d, best epoch %d", epoch, result.best_epoch)
                break

    model.load_state_dict(best_state)
    model.eval()
    return result


def metrics_from_predictions(y_true, y_pred, n_classes: int) -> Metrics:
    labels = list(range(n_classes))
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    f1 = f1_score(y_true, y_pred, labels=labels, average=None, zero_division=0)
    return Metrics(
        precision=precision_score(y_true, y_pred, labels=labels, average=None, zero_division=0).tolist(),
        recall=recall_score(y_true, y_pred, labels=labels, average=None, zero_division=0).tolist(),
        f1=f1.tolist(),
        macro_f1=float(np.mean(f1)),
        accuracy=float(accuracy_score(y_true, y_pred)),
        confusion=confusion_matrix(y_true, y_pred, labels=labels).tolist(),
    )


def evaluate(model: nn.Module, test_set: LabeledSet, n_classes: int) -> Metrics:
    """Argmax predictions scored per class; 0/0 rates count as 0."""
    preds = predict(model, test_set.inputs)
    return metrics_from_predictions(test_set.labels.numpy(), preds.numpy(), n_classes)


def write_history_csv(history: List[EpochRecord], path: str | Path) -> None:
    frame = pd.DataFrame(
        [r.model_dump() for r in history],
        columns=["epoch", "train_loss", "val_loss", "val_macro_f1"],
    )
    frame.to_csv(path, index=False, float_format="%.17g")
