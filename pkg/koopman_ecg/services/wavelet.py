"""Discrete wavelet filter bank with periodic boundary extension."""
from dataclasses import dataclass
from typing import List

import numpy as np
import pywt

from ..errors import DimensionMismatchError, WaveletSpecError
from ..models import WaveletSpec

LOG_ENERGY_FLOOR = 1e-12
MODE = "periodization"


@dataclass(frozen=True)
class WaveletDecomposition:
    approx: np.ndarray
    details: List[np.ndarray]  # coarsest first, finest last
    spec: WaveletSpec
    length: int

    @property
    def subbands(self) -> List[np.ndarray]:
        return [self.approx, *self.details]


def max_level(window_len: int, spec: WaveletSpec) -> int:
    return pywt.dwt_max_level(window_len, pywt.Wavelet(spec.family.value).dec_len)


def dwt(window, spec: WaveletSpec) -> WaveletDecomposition:
    x = np.asarray(window, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError(f"window must be 1-D, got shape {x.shape}")
    wavelet = pywt.Wavelet(spec.family.value)
    if len(x) < wavelet.dec_len:
        raise WaveletSpecError(
            f"{len(x)} samples is shorter than the {spec.family.value} filter ({wavelet.dec_len})"
        )
    if spec.levels > max_level(len(x), spec):
        raise WaveletSpecError(
            f"{spec.levels} levels requested, {len(x)} samples support at most "
            f"{max_level(len(x), spec)} for {spec.family.value}"
        )
    coeffs = pywt.wavedec(x, wavelet, mode=MODE, level=spec.levels)
    return WaveletDecomposition(approx=coeffs[0], details=coeffs[1:], spec=spec, length=len(x))


def idwt(decomp: WaveletDecomposition, spec: WaveletSpec) -> np.ndarray:
    if decomp.spec != spec or len(decomp.details) != spec.levels:
        raise WaveletSpecError(f"decomposition built with {decomp.spec}, not {spec}")
    x = pywt.waverec(decomp.subbands, spec.family.value, mode=MODE)
    return x[: decomp.length]


def wavelet_features(decomp: WaveletDecomposition) -> np.ndarray:
    """[log-energy, mean, std, max-abs] per subband, coarsest first."""
    rows = []
    for band in decomp.subbands:
        energy = float(np.sum(band**2))
        rows.append(
            [
                np.log(max(energy, LOG_ENERGY_FLOOR)),
                band.mean(),
                band.std(),
                np.abs(band).max(),
            ]
        )
    return np.asarray(rows, dtype=float).ravel()


def wavelet_feature_names(levels: int) -> List[str]:
    return [
        f"band_{b}_{stat}"
        for b in range(levels + 1)
        for stat in ("logE", "mean", "std", "maxabs")
    ]


def wavelet_window_features(window, spec: WaveletSpec) -> np.ndarray:
    return wavelet_features(dwt(window, spec))
