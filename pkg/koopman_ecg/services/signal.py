"""
Signal representation, preprocessing and the synthetic ECG generator.

All functions are pure; a ``Signal`` is immutable once built.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import find_peaks, peak_widths

from ..errors import DataError, DegenerateInputError, DimensionMismatchError, EmptyWindowSetError
from ..models import SignalConfig, SynthClass

logger = logging.getLogger(__name__)

# Beat morphology, all times in seconds and amplitudes in mV. Each wave is a
# Gaussian bump; Q and S scale with the R width so the QRS keeps its shape.
QRS_SIGMA = 0.016
QRS_SIGMA_JITTER = 0.05
BLOCK_QRS_FACTOR = 1.8
VENTRICULAR_QRS_FACTOR = 2.8
R_AMPLITUDE = 1.0
Q_AMPLITUDE = -0.12
S_AMPLITUDE = -0.25
QS_OFFSET = 2.2  # in units of the R sigma
QS_WIDTH = 0.8  # in units of the R sigma
P_AMPLITUDE = 0.15
P_SIGMA = 0.025
PR_INTERVAL = 0.16
BLOCK_PR_INTERVAL = 0.30
T_AMPLITUDE = 0.30
T_SIGMA = 0.06
T_OFFSET = 0.26
VENTRICULAR_T_AMPLITUDE = -0.35
VENTRICULAR_T_SIGMA = 0.05
VENTRICULAR_T_OFFSET = 0.22
VENTRICULAR_R_AMPLITUDE = 1.2
F_WAVE_AMPLITUDE = 0.04
NOISE_STD = 0.01

# Rhythm
NORMAL_BPM = (60.0, 90.0)
NORMAL_RR_JITTER = 0.015
AFIB_BPM = (80.0, 110.0)
AFIB_RR_SPREAD = (0.25, 0.35)
MIN_RR = 0.30
VENTRICULAR_BPM = (110.0, 140.0)
VENTRICULAR_RR_JITTER = 0.01
BLOCK_ATRIAL_BPM = (70.0, 90.0)
BLOCK_CONDUCTION_RATIO = (3, 4)  # every 3rd or 4th P wave is not conducted

R_PEAK_REFRACTORY = 0.25


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled single-lead waveform."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise DimensionMismatchError(f"samples must be 1-D, got shape {samples.shape}")
        if not self.fs > 0:
            raise DataError(f"sampling rate must be positive, got {self.fs}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs


@dataclass(frozen=True)
class WindowSet:
    windows: np.ndarray
    window_len: int
    stride: int
    source_fs: float

    @property
    def starts(self) -> np.ndarray:
        return np.arange(len(self.windows)) * self.stride

    def __len__(self) -> int:
        return len(self.windows)


@dataclass(frozen=True)
class RhythmSummary:
    r_peaks: np.ndarray
    rr_intervals: np.ndarray
    rr_cv: float
    qrs_width_sec: float
    heart_rate_bpm: float


@dataclass(frozen=True)
class _Beats:
    r_times: np.ndarray
    p_times: np.ndarray = field(default_factory=lambda: np.empty(0))


def _require_samples(signal: Signal, minimum: int = 1) -> np.ndarray:
    if len(signal.samples) < minimum:
        raise DataError(f"signal needs at least {minimum} samples, got {len(signal.samples)}")
    return signal.samples


def resample(signal: Signal, target_fs: float) -> Signal:
    """Linear-interpolation resample onto a ``target_fs`` grid starting at t = 0."""
    if not target_fs > 0:
        raise DataError(f"target_fs must be positive, got {target_fs}")
    x = _require_samples(signal)
    if target_fs == signal.fs:
        return Signal(x.copy(), signal.fs)
    n_out = int(round(len(x) * target_fs / signal.fs))
    if n_out < 1:
        raise DataError(f"resampling {len(x)} samples to {target_fs} Hz leaves nothing")
    t_in = np.arange(len(x)) / signal.fs
    t_out = np.arange(n_out) / target_fs
    return Signal(np.interp(t_out, t_in, x), target_fs)


def zscore(signal: Signal) -> Signal:
    """Standardize with the population standard deviation."""
    x = _require_samples(signal, minimum=2)
    mean = x.mean()
    std = x.std()
    if std <= np.finfo(float).eps * max(1.0, abs(mean)):
        raise DegenerateInputError("cannot z-score a constant signal (std = 0)")
    return Signal((x - mean) / std, signal.fs)


def segment(signal: Signal, window_sec: float, stride_sec: float) -> WindowSet:
    """Cut overlapping fixed-length windows; a trailing partial window is dropped."""
    window_len = int(round(window_sec * signal.fs))
    stride = int(round(stride_sec * signal.fs))
    if window_len < 2:
        raise DataError(f"window of {window_sec}s at {signal.fs} Hz has fewer than 2 samples")
    if stride < 1:
        raise DataError(f"stride of {stride_sec}s at {signal.fs} Hz is below one sample")
    x = signal.samples
    if len(x) < window_len:
        raise EmptyWindowSetError(
            f"signal of {len(x)} samples is shorter than one window ({window_len})"
        )
    windows = sliding_window_view(x, window_len)[::stride].copy()
    return WindowSet(windows=windows, window_len=window_len, stride=stride, source_fs=signal.fs)


def preprocess(signal: Signal, cfg: SignalConfig) -> Tuple[Signal, WindowSet]:
    """
    Resample to ``cfg.fs``, keep the leading excerpt, z-score it and segment it.

    Returns:
        The standardized excerpt and its window set.

    Raises:
        DataError: If the record is shorter than the excerpt
    """
    resampled = resample(signal, cfg.fs)
    if len(resampled) < cfg.excerpt_len:
        raise DataError(
            f"record of {resampled.duration:.2f}s is shorter than the {cfg.excerpt_sec}s excerpt"
        )
    excerpt = zscore(Signal(resampled.samples[: cfg.excerpt_len], cfg.fs))
    return excerpt, segment(excerpt, cfg.window_sec, cfg.stride_sec)


def _rr_sequence(base_rr: float, jitter: float, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.maximum(base_rr * (1.0 + rng.normal(0.0, jitter, n)), MIN_RR)


def _afib_rr(n: int, rng: np.random.Generator) -> np.ndarray:
    # Deviations come in +/- pairs in random order so every stretch of a few
    # beats stays irregular.
    base_rr = 60.0 / rng.uniform(*AFIB_BPM)
    spread = rng.uniform(*AFIB_RR_SPREAD)
    n_pairs = (n + 1) // 2
    signs = np.concatenate([rng.permutation([1.0, -1.0]) for _ in range(n_pairs)])[:n]
    magnitudes = rng.uniform(0.6, 1.4, n)
    return np.maximum(base_rr * (1.0 + spread * signs * magnitudes), MIN_RR)


def _beat_times(kind: SynthClass, duration: float, rng: np.random.Generator) -> _Beats:
    n = int(duration / MIN_RR) + 4
    start = rng.uniform(0.15, 0.6)
    if kind is SynthClass.normal:
        rr = _rr_sequence(60.0 / rng.uniform(*NORMAL_BPM), NORMAL_RR_JITTER, n, rng)
        r_times = start + np.concatenate([[0.0], np.cumsum(rr)])
        return _Beats(r_times, r_times - PR_INTERVAL)
    if kind is SynthClass.afib:
        rr = _afib_rr(n, rng)
        return _Beats(start + np.concatenate([[0.0], np.cumsum(rr)]))
    if kind is SynthClass.ventricular:
        rr = _rr_sequence(60.0 / rng.uniform(*VENTRICULAR_BPM), VENTRICULAR_RR_JITTER, n, rng)
        return _Beats(start + np.concatenate([[0.0], np.cumsum(rr)]))
    pp = _rr_sequence(60.0 / rng.uniform(*BLOCK_ATRIAL_BPM), NORMAL_RR_JITTER, n, rng)
    p_times = start - BLOCK_PR_INTERVAL + np.concatenate([[0.0], np.cumsum(pp)])
    ratio = int(rng.integers(BLOCK_CONDUCTION_RATIO[0], BLOCK_CONDUCTION_RATIO[1] + 1))
    phase = int(rng.integers(0, ratio))
    conducted = (np.arange(len(p_times)) + phase) % ratio != ratio - 1
    return _Beats(p_times[conducted] + BLOCK_PR_INTERVAL, p_times)


def _bumps(t: np.ndarray, centers: np.ndarray, sigma: float, amplitude: float) -> np.ndarray:
    if len(centers) == 0:
        return np.zeros_like(t)
    d = t[:, None] - centers[None, :]
    return amplitude * np.exp(-(d**2) / (2.0 * sigma**2)).sum(axis=1)


def synth_ecg(kind: SynthClass, duration_sec: float, fs: float, seed: int) -> Signal:
    """
    Generate a labeled synthetic ECG-like record.

    Args:
        kind: Rhythm class to synthesize
        duration_sec: Record length, at least 4 s
        fs: Sampling rate, at least 50 Hz
        seed: Seed; output is bit-identical for identical arguments

    Returns:
        Signal: The raw (unstandardized) record in mV
    """
    if duration_sec < 4:
        raise DataError(f"synthetic records need at least 4 s, got {duration_sec}")
    if fs < 50:
        raise DataError(f"synthetic records need fs >= 50 Hz, got {fs}")
    kind = SynthClass(kind)
    class_index = list(SynthClass).index(kind)
    rng = np.random.default_rng([seed, class_index])

    n = int(round(duration_sec * fs))
    t = np.arange(n) / fs
    beats = _beat_times(kind, duration_sec, rng)
    r = beats.r_times

    width_factor = {
        SynthClass.block: BLOCK_QRS_FACTOR,
        SynthClass.ventricular: VENTRICULAR_QRS_FACTOR,
    }.get(kind, 1.0)
    sigma_r = QRS_SIGMA * width_factor * rng.uniform(1 - QRS_SIGMA_JITTER, 1 + QRS_SIGMA_JITTER)
    sigma_qs = QS_WIDTH * sigma_r

    if kind is SynthClass.ventricular:
        r_amp, t_amp, t_sigma, t_offset = (
            VENTRICULAR_R_AMPLITUDE,
            VENTRICULAR_T_AMPLITUDE,
            VENTRICULAR_T_SIGMA,
            VENTRICULAR_T_OFFSET,
        )
    else:
        r_amp, t_amp, t_sigma, t_offset = R_AMPLITUDE, T_AMPLITUDE, T_SIGMA, T_OFFSET

    x = _bumps(t, r, sigma_r, r_amp)
    x += _bumps(t, r - QS_OFFSET * sigma_r, sigma_qs, Q_AMPLITUDE)
    x += _bumps(t, r + QS_OFFSET * sigma_r, sigma_qs, S_AMPLITUDE)
    x += _bumps(t, r + t_offset, t_sigma, t_amp)
    x += _bumps(t, beats.p_times, P_SIGMA, P_AMPLITUDE)

    if kind is SynthClass.afib:
        for _ in range(2):
            f = rng.uniform(5.0, 7.0)
            x += F_WAVE_AMPLITUDE * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))

    x += rng.normal(0.0, NOISE_STD, n)
    return Signal(x, fs)


def rhythm_summary(signal: Signal) -> RhythmSummary:
    """R-peak timing and QRS width (half prominence) of a record."""
    x = _require_samples(signal, minimum=3)
    x = x - np.median(x)
    distance = max(1, int(R_PEAK_REFRACTORY * signal.fs))
    peaks, _ = find_peaks(x, height=0.5 * x.max(), distance=distance)
    if len(peaks) < 3:
        raise DataError(f"found {len(peaks)} R peaks, need at least 3 for rhythm statistics")
    rr = np.diff(peaks) / signal.fs
    widths = peak_widths(x, peaks, rel_height=0.5)[0] / signal.fs
    return RhythmSummary(
        r_peaks=peaks,
        rr_intervals=rr,
        rr_cv=float(rr.std() / rr.mean()),
        qrs_width_sec=float(np.median(widths)),
        heart_rate_bpm=float(60.0 / rr.mean()),
    )


def load_csv(path: str | Path) -> Signal:
    """
    Read a ``t,value`` CSV (header required) into a Signal.

    The sampling rate is 1 / median(Δt); every Δt must lie within 1 % of the median.
    """
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if list(df.columns[:2]) != ["t", "value"]:
        raise DataError(f"{path}: expected header 't,value', got {list(df.columns)}")
    t = df["t"].to_numpy(dtype=float)
    values = df["value"].to_numpy(dtype=float)
    if len(t) < 2:
        raise DataError(f"{path}: need at least 2 samples")
    if not (np.isfinite(t).all() and np.isfinite(values).all()):
        raise DataError(f"{path}: non-finite entries")
    dt = np.diff(t)
    median = float(np.median(dt))
    if median <= 0:
        raise DataError(f"{path}: time column must be increasing")
    if np.any(np.abs(dt - median) > 0.01 * median):
        raise DataError(f"{path}: sampling is not uniform within 1% of the median step")
    return Signal(values, 1.0 / median)


def write_csv(signal: Signal, path: str | Path) -> None:
    t = np.arange(len(signal)) / signal.fs
    pd.DataFrame({"t": t, "value": signal.samples}).to_csv(path, index=False)


def emit_synthetic_dataset(
    directory: str | Path,
    records_per_class: int,
    fs: float,
    duration_sec: float,
    base_seed: int,
) -> List[Tuple[str, SynthClass]]:
    """
    Write ``<class>_<seed>.csv`` records plus a ``labels.csv`` manifest.

    Returns:
        (file name, class) pairs in manifest order
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in SynthClass:
        for i in range(records_per_class):
            seed = base_seed + i
            name = f"{kind.value}_{seed}.csv"
            write_csv(synth_ecg(kind, duration_sec, fs, seed), directory / name)
            rows.append((name, kind))
    pd.DataFrame(
        {
            "file": [name for name, _ in rows],
            "class": [kind.value for _, kind in rows],
            "diagnosis": [kind.diagnosis for _, kind in rows],
        }
    ).to_csv(directory / "labels.csv", index=False)
    logger.info(f"Wrote {len(rows)} synthetic records to {directory}")
    return rows
