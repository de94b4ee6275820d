"""Command-line entry point: ``python -m koopman_ecg <command> [flags]``."""
import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from .errors import ConfigError, DataError, ExperimentError, KoopmanEcgError
from .models import ExperimentConfig, SynthClass, SystemName, Task, load_config
from .orchestrator import (
    ABLATION_FILE,
    ablate,
    compare,
    fit_and_score,
    write_ablation_csv,
)
from .services.checkpoint import load_checkpoint, save_checkpoint
from .services.dataset import build_dataset, labeled_splits, split_dataset, system_inputs
from .services.koopman import (
    aligned_target,
    fit_window,
    koopman_feature_names,
    koopman_features,
    load_model_json,
    mode_amplitudes,
    one_step_reconstruct,
    save_model_json,
)
from .services.plots import emit_eigen_plot, emit_mode_heatmap, emit_reconstruction_overlay
from .services.signal import emit_synthetic_dataset, load_csv, preprocess, synth_ecg
from .services.training import evaluate, write_history_csv
from .services.wavelet import wavelet_feature_names, wavelet_window_features

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
RUN_FILE = "run.json"
CHECKPOINT_NAME = "model"
KOOPMAN_MODEL_FILE = "koopman_model.json"


def _config(args: argparse.Namespace) -> ExperimentConfig:
    path = args.config or os.getenv("KOOPMAN_ECG_CONFIG")
    overrides = {}
    if args.task:
        overrides["pipeline"] = {"task": args.task}
    return load_config(path, **overrides)


def _out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_paths(data: Optional[str]) -> List[Path]:
    if data is None:
        raise DataError("--data is required for this command")
    path = Path(data)
    if path.is_dir():
        return sorted(p for p in path.glob("*.csv") if p.name != "labels.csv")
    if not path.exists():
        raise DataError(f"{path} does not exist")
    return [path]


def cmd_synth(args, cfg: ExperimentConfig) -> int:
    seed = cfg.pipeline.synth_seed if args.seed is None else args.seed
    rows = emit_synthetic_dataset(
        _out(args),
        cfg.pipeline.records_per_class,
        cfg.signal.synth_fs,
        cfg.signal.synth_duration_sec,
        seed,
    )
    print(f"Wrote {len(rows)} records to {args.out}")
    return EXIT_OK


def cmd_features(args, cfg: ExperimentConfig) -> int:
    out = _out(args)
    for path in _record_paths(args.data):
        _, windows = preprocess(load_csv(path), cfg.signal)
        columns = []
        blocks = []
        if args.kind in ("wavelet", "hybrid"):
            columns += wavelet_feature_names(cfg.wavelet.levels)
            blocks.append(np.stack([wavelet_window_features(w, cfg.wavelet) for w in windows.windows]))
        if args.kind in ("koopman", "hybrid"):
            columns += koopman_feature_names(cfg.koopman.top_k)
            blocks.append(
                np.stack([koopman_features(w, cfg.signal.fs, cfg.koopman) for w in windows.windows])
            )
        frame = pd.DataFrame(np.concatenate(blocks, axis=1), columns=columns)
        frame.insert(0, "window_index", np.arange(len(frame)))
        target = out / f"{path.stem}_{args.kind}.csv"
        frame.to_csv(target, index=False, float_format="%.17g")
        logger.info(f"Wrote {target}")
    return EXIT_OK


def _window_for_plot(args, cfg: ExperimentConfig) -> np.ndarray:
    if args.data is None:
        seed = cfg.pipeline.synth_seed if args.seed is None else args.seed
        signal = synth_ecg(SynthClass.normal, cfg.signal.synth_duration_sec, cfg.signal.synth_fs, seed)
    else:
        signal = load_csv(_record_paths(args.data)[0])
    _, windows = preprocess(signal, cfg.signal)
    if not 0 <= args.window < len(windows):
        raise DataError(f"window {args.window} out of range, record has {len(windows)} windows")
    return windows.windows[args.window]


def _figures(model, window: np.ndarray, fs: float, out: Path) -> None:
    emit_eigen_plot(model, out / "eigenvalues.svg")
    emit_mode_heatmap(mode_amplitudes(model, window), out / "mode_amplitudes.svg")
    recon = one_step_reconstruct(model, window)
    emit_reconstruction_overlay(
        aligned_target(window, recon), recon.samples, fs, out / "reconstruction.svg", one_step=recon.one_step
    )


def cmd_fit_koopman(args, cfg: ExperimentConfig) -> int:
    out = _out(args)
    window = _window_for_plot(args, cfg)
    model = fit_window(window, cfg.signal.fs, cfg.koopman)
    save_model_json(model, out / KOOPMAN_MODEL_FILE)
    _figures(model, window, cfg.signal.fs, out)
    print(f"Fitted {len(model.eigvals)} modes (effective rank {model.effective_rank}); wrote {out}")
    return EXIT_OK


def cmd_plot(args, cfg: ExperimentConfig) -> int:
    out = _out(args)
    model_path = Path(args.model) if args.model else out / KOOPMAN_MODEL_FILE
    model = load_model_json(model_path)
    _figures(model, _window_for_plot(args, cfg), cfg.signal.fs, out)
    return EXIT_OK


def _prepare(args, cfg: ExperimentConfig, system: SystemName):
    dataset = build_dataset(cfg, args.data)
    split = split_dataset(dataset.labels, cfg.pipeline.split_ratios, cfg.pipeline.split_seed)
    return dataset, split, system_inputs(system, dataset, cfg)


def cmd_train(args, cfg: ExperimentConfig) -> int:
    out = _out(args)
    system = SystemName(args.system)
    seed = cfg.train.seed if args.seed is None else args.seed
    dataset, split, inputs = _prepare(args, cfg, system)
    metrics, result = fit_and_score(system, inputs, dataset.labels, split, cfg, seed, dataset.task.n_classes)
    save_checkpoint(result.model, out / CHECKPOINT_NAME)
    write_history_csv(result.history, out / "history.csv")
    (out / RUN_FILE).write_text(
        json.dumps({"system": system.value, "seed": seed, "config": cfg.model_dump(mode="json")}, indent=2)
    )
    print(f"{system.value} seed {seed}: best epoch {result.best_epoch}, test macro-F1 {metrics.macro_f1:.4f}")
    return EXIT_OK


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    out = _out(args)
    try:
        run = json.loads((out / RUN_FILE).read_text())
        cfg = ExperimentConfig.model_validate(run["config"])
        system = SystemName(run["system"])
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise DataError(f"no usable training run in {out}: {e}") from e
    dataset, split, inputs = _prepare(args, cfg, system)
    _, _, test_set = labeled_splits(inputs, dataset.labels, split, standardize=system is not SystemName.rnn_raw)
    if test_set is None:
        raise DataError("test split is empty")
    model = load_checkpoint(out / CHECKPOINT_NAME)
    metrics = evaluate(model, test_set, dataset.task.n_classes)
    (out / "metrics.json").write_text(metrics.model_dump_json(indent=2))
    print(f"{system.value}: test macro-F1 {metrics.macro_f1:.4f}, accuracy {metrics.accuracy:.4f}")
    return EXIT_OK


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    if args.seed is not None:
        cfg = cfg.model_copy(update={"pipeline": cfg.pipeline.model_copy(update={"synth_seed": args.seed})})
    dataset = build_dataset(cfg, args.data)
    reports = asyncio.run(compare(dataset, cfg, _out(args)))
    for r in reports:
        print(f"{r.system.value:<18} {r.mean:.3f} ± {r.std:.3f}   (reference {r.reference_f1:.3f})")
    return EXIT_OK


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    out = _out(args)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"seed": args.seed})})
    dataset = build_dataset(cfg, args.data)
    split = split_dataset(dataset.labels, cfg.pipeline.split_ratios, cfg.pipeline.split_seed)
    result = asyncio.run(ablate(dataset, split, cfg))
    write_ablation_csv(result.rows, out / ABLATION_FILE)
    (out / "winner.json").write_text(result.winner.model_dump_json(indent=2))
    print(f"Winner: {result.winner_row.model_dump(exclude={'error'})}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "fit-koopman": cmd_fit_koopman,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--data", help="Record CSV or a directory with labels.csv")
    common.add_argument("--out", default="out", help="Output directory")
    common.add_argument("--seed", type=int, help="Seed override")
    common.add_argument("--task", choices=[t.value for t in Task], help="Task override")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="koopman_ecg", description="Koopman and wavelet features for ECG rhythm classification"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="Write a synthetic labeled dataset")
    features = sub.add_parser("features", parents=[common], help="Per-window feature CSVs")
    features.add_argument("kind", choices=["koopman", "wavelet", "hybrid"])
    for name, help_text in (("fit-koopman", "Fit EDMD on one window and draw figures"),
                            ("plot", "Draw figures from a saved Koopman model")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--window", type=int, default=0, help="Window index within the record")
        if name == "plot":
            p.add_argument("--model", help=f"Koopman model JSON (default <out>/{KOOPMAN_MODEL_FILE})")
    train = sub.add_parser("train", parents=[common], help="Train one system with one seed")
    train.add_argument("--system", choices=[s.value for s in SystemName], default=SystemName.koopman_tx.value)
    sub.add_parser("eval", parents=[common], help="Evaluate the run saved in --out on the test split")
    sub.add_parser("compare", parents=[common], help="Run all five systems and write the reports")
    sub.add_parser("ablate", parents=[common], help="Run the EDMD ablation grid")
    return parser


def _configure_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else os.getenv("KOOPMAN_ECG_LOG_LEVEL", "INFO")
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except ExperimentError as e:
        logger.error(f"Experiment failed: {e}", exc_info=True)
        if isinstance(e.__cause__, DataError):
            return EXIT_DATA
        if isinstance(e.__cause__, ConfigError):
            return EXIT_CONFIG
        return EXIT_FAILURE
    except KoopmanEcgError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
