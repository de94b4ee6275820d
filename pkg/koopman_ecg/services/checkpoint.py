"""Classifier checkpoints: a JSON manifest beside a flat little-endian float64 blob."""
import json
import logging
from pathlib import Path
from typing import Dict, List

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from ..errors import DataError
from ..models import ClassifierKind, RnnConfig, TransformerConfig
from .classifiers import Classifier, build_classifier

logger = logging.getLogger(__name__)

BLOB_DTYPE = "<f8"


class ParameterEntry(BaseModel):
    offset: int  # in elements, not bytes
    shape: List[int]


class CheckpointManifest(BaseModel):
    kind: ClassifierKind
    seed: int
    feature_dim: int | None = None
    transformer: TransformerConfig | None = None
    rnn: RnnConfig | None = None
    dtype: str = BLOB_DTYPE
    blob: str
    parameters: Dict[str, ParameterEntry]


def _paths(path: str | Path):
    base = Path(path)
    return base.with_suffix(".json"), base.with_suffix(".bin")


def save_checkpoint(model: Classifier, path: str | Path) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
    manifest_path, blob_path = _paths(path)
    entries: Dict[str, ParameterEntry] = {}
    chunks = []
    offset = 0
    for name, p in model.named_parameters():
        values = p.detach().cpu().numpy().astype(BLOB_DTYPE).ravel()
        entries[name] = ParameterEntry(offset=offset, shape=list(p.shape))
        chunks.append(values)
        offset += values.size

    manifest = CheckpointManifest(
        kind=model.kind,
        seed=model.seed,
        feature_dim=getattr(model, "feature_dim", None),
        transformer=model.cfg if model.kind is ClassifierKind.transformer else None,
        rnn=model.cfg if model.kind is ClassifierKind.rnn else None,
        blob=blob_path.name,
        parameters=entries,
    )
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    np.concatenate(chunks).tofile(blob_path)
    manifest_path.write_text(manifest.model_dump_json(indent=2))
    logger.info("Saved %s checkpoint with %d values to %s", model.kind.value, offset, manifest_path)
    return manifest_path


def load_checkpoint(path: str | Path) -> Classifier:
    manifest_path, _ = _paths(path)
    try:
        manifest = CheckpointManifest.model_validate(json.loads(manifest_path.read_text()))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise DataError(f"cannot read checkpoint manifest {manifest_path}: {e}") from e

    blob_path = manifest_path.parent / manifest.blob
    if not blob_path.exists():
        raise DataError(f"checkpoint blob {blob_path} is missing")
    blob = np.fromfile(blob_path, dtype=manifest.dtype)
    try:
        model = build_classifier(
            manifest.kind,
            manifest.seed,
            transformer=manifest.transformer,
            rnn=manifest.rnn,
            feature_dim=manifest.feature_dim,
        )
    except ValueError as e:
        raise DataError(f"{manifest.kind.value} checkpoint {manifest_path} lacks its config: {e}") from e

    params = dict(model.named_parameters())
    if set(params) != set(manifest.parameters):
        raise DataError(f"checkpoint {manifest_path} does not match a {manifest.kind.value} model")
    with torch.no_grad():
        for name, entry in manifest.parameters.items():
            if list(params[name].shape) != entry.shape:
                raise DataError(f"parameter {name} has shape {entry.shape}, model expects {list(params[name].shape)}")
            size = int(np.prod(entry.shape))
            if entry.offset + size > blob.size:
                raise DataError(f"checkpoint blob is truncated at parameter {name}")
            values = blob[entry.offset : entry.offset + size].reshape(entry.shape)
            params[name].copy_(torch.from_numpy(values.astype(np.float64)))
    model.eval()
    return model
