"""
EDMD approximation of the Koopman operator on delay-embedded windows.

Snapshots are stored column-wise: column ``j`` of a delay embedding is
``[x_{j+d-1}, ..., x_j]`` (newest sample first). The dictionary is a constant,
every monomial of the embedded state up to ``poly_deg`` in graded
lexicographic order, then Gaussian RBFs centred on sampled snapshots.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import ValidationError
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.preprocessing import PolynomialFeatures

from ..errors import (
    DataError,
    DegenerateInputError,
    DimensionMismatchError,
    NonFiniteError,
    UnderdeterminedFitError,
)
from ..models import ComplexArray, DictionaryConfig, KoopmanConfig, KoopmanModelDump

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
DEFECTIVE_CONDITION = 1e12
MAGNITUDE_FLOOR = 1e-12


@dataclass(frozen=True)
class Dictionary:
    config: DictionaryConfig
    centers: np.ndarray  # (rbf_centers, delay)


@dataclass(frozen=True)
class KoopmanModel:
    K: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    C: np.ndarray  # (1, M)
    dictionary: Dictionary
    dt: float
    svd_rank: int
    ridge_reg: float
    effective_rank: int


@dataclass(frozen=True)
class Reconstruction:
    samples: np.ndarray
    start_index: int  # window index aligned with samples[0]
    used_eigenbasis: bool
    one_step: bool = False


@dataclass(frozen=True)
class ReconstructionError:
    rmse: float
    nrmse: float
    max_abs: float


@dataclass(frozen=True)
class ModeAmplitudes:
    matrix: np.ndarray  # (modes, time)
    eigvals: np.ndarray


def _as_window(window) -> np.ndarray:
    x = np.asarray(window, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError(f"window must be 1-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteError("window contains non-finite samples")
    return x


def delay_embed(window, delay: int) -> np.ndarray:
    """Hankel snapshot matrix of shape (delay, N - delay + 1), newest sample first."""
    x = _as_window(window)
    if delay < 1:
        raise DataError(f"delay must be >= 1, got {delay}")
    if len(x) < delay + 1:
        raise DataError(f"window of {len(x)} samples is too short for delay {delay}")
    return sliding_window_view(x, delay)[:, ::-1].T.copy()


@lru_cache(maxsize=None)
def _monomials(delay: int, poly_deg: int) -> PolynomialFeatures:
    return PolynomialFeatures(degree=poly_deg, include_bias=True).fit(np.zeros((1, delay)))


def build_dictionary(config: DictionaryConfig, snapshots: np.ndarray) -> Dictionary:
    """Pick RBF centres as distinct snapshot columns, uniformly without replacement."""
    if snapshots.ndim != 2 or snapshots.shape[0] != config.delay:
        raise DimensionMismatchError(
            f"snapshots of shape {snapshots.shape} do not match delay {config.delay}"
        )
    n_cols = snapshots.shape[1]
    if n_cols < max(1, config.rbf_centers):
        raise DataError(
            f"{config.rbf_centers} RBF centres requested from {n_cols} snapshot columns"
        )
    rng = np.random.default_rng(config.center_seed)
    idx = rng.choice(n_cols, size=config.rbf_centers, replace=False)
    return Dictionary(config=config, centers=snapshots[:, idx].T.copy())


def lift(dictionary: Dictionary, snapshots: np.ndarray) -> np.ndarray:
    """Evaluate every observable on every snapshot; returns Psi of shape (M, n)."""
    cfg = dictionary.config
    if snapshots.ndim != 2 or snapshots.shape[0] != cfg.delay:
        raise DimensionMismatchError(
            f"snapshots of shape {snapshots.shape} do not match delay {cfg.delay}"
        )
    z = snapshots.T
    blocks = [_monomials(cfg.delay, cfg.poly_deg).transform(z)]
    if cfg.rbf_centers > 0:
        blocks.append(rbf_kernel(z, dictionary.centers, gamma=1.0 / (2.0 * cfg.rbf_sigma**2)))
    psi = np.hstack(blocks).T
    if not np.isfinite(psi).all():
        raise NonFiniteError("lifted snapshots contain non-finite values")
    return psi


def _spectral_order(eigvals: np.ndarray) -> np.ndarray:
    # descending |lambda|, then descending Re, then Im >= 0 first
    mag = np.round(np.abs(eigvals), 9)
    re = np.round(eigvals.real, 9)
    return np.lexsort((eigvals.imag < 0, -re, -mag))


def edmd_fit(
    window,
    fs: float,
    dict_cfg: DictionaryConfig,
    svd_rank: int,
    ridge_reg: float,
) -> KoopmanModel:
    """
    Fit the Koopman matrix K on one window.

    K minimizes ||Psi(H') - K Psi(H)||_F^2 + ridge_reg ||K||_F^2 over the leading
    singular directions of Psi(H), truncated to min(svd_rank, numerical rank).
    The readout C maps lifted states to the newest delay coordinate on the same basis.

    Raises:
        UnderdeterminedFitError: If the window has fewer than M + 1 snapshots
        NonFiniteError: If the lifted data is not finite
    """
    if not fs > 0:
        raise DataError(f"fs must be positive, got {fs}")
    if svd_rank < 1 or ridge_reg < 0:
        raise DataError(f"invalid svd_rank={svd_rank} or ridge_reg={ridge_reg}")
    snapshots = delay_embed(window, dict_cfg.delay)
    n = snapshots.shape[1]
    if n < dict_cfg.size + 1:
        raise UnderdeterminedFitError(
            f"{n} snapshots cannot determine a dictionary of size {dict_cfg.size}"
        )
    dictionary = build_dictionary(dict_cfg, snapshots)
    psi = lift(dictionary, snapshots)
    psi_x, psi_y = psi[:, :-1], psi[:, 1:]

    U, s, Vt = np.linalg.svd(psi_x, full_matrices=False)
    numerical_rank = int(np.sum(s > RANK_TOLERANCE * s[0]))
    r = max(1, min(svd_rank, numerical_rank))
    gain = s[:r] / (s[:r] ** 2 + ridge_reg)
    pinv = (Vt[:r].T * gain) @ U[:, :r].T

    K = psi_y @ pinv
    C = snapshots[:1, :-1] @ pinv
    eigvals, eigvecs = np.linalg.eig(K)
    order = _spectral_order(eigvals)
    return KoopmanModel(
        K=K,
        eigvals=eigvals[order].astype(complex),
        eigvecs=eigvecs[:, order].astype(complex),
        C=C,
        dictionary=dictionary,
        dt=1.0 / fs,
        svd_rank=svd_rank,
        ridge_reg=ridge_reg,
        effective_rank=r,
    )


def fit_window(window, fs: float, cfg: KoopmanConfig) -> KoopmanModel:
    return edmd_fit(window, fs, cfg.dictionary, cfg.svd_rank, cfg.ridge_reg)


def fit_residual(model: KoopmanModel, window) -> float:
    """Frobenius residual ||Psi(H') - K Psi(H)|| of ``model`` on ``window``."""
    psi = lift(model.dictionary, delay_embed(window, model.dictionary.config.delay))
    return float(np.linalg.norm(psi[:, 1:] - model.K @ psi[:, :-1]))


def spectrum_features(model: KoopmanModel, top_k: int) -> np.ndarray:
    """(re, im, |lambda|, ln|lambda| / dt) per leading eigenvalue, zero-padded to 4 * top_k."""
    if top_k < 1:
        raise DataError(f"top_k must be >= 1, got {top_k}")
    lam = model.eigvals[:top_k]
    mag = np.abs(lam)
    growth = np.log(np.maximum(mag, MAGNITUDE_FLOOR)) / model.dt
    features = np.zeros((top_k, 4))
    features[: len(lam)] = np.column_stack([lam.real, lam.imag, mag, growth])
    return features.ravel()


def koopman_feature_names(top_k: int) -> List[str]:
    return [f"{name}_{k}" for k in range(1, top_k + 1) for name in ("re", "im", "mag", "growth")]


def koopman_features(window, fs: float, cfg: KoopmanConfig) -> np.ndarray:
    return spectrum_features(fit_window(window, fs, cfg), cfg.top_k)


def _initial_lift(model: KoopmanModel, window) -> np.ndarray:
    snapshots = delay_embed(window, model.dictionary.config.delay)
    return lift(model.dictionary, snapshots[:, :1])[:, 0]


def _well_conditioned(model: KoopmanModel) -> bool:
    return bool(np.linalg.cond(model.eigvecs) <= DEFECTIVE_CONDITION)


def modal_contributions(model: KoopmanModel, window, steps: int) -> np.ndarray:
    """
    Signed (complex) contribution of each mode to the readout, shape (M, steps).

    Row k is (C v_k) b_k lambda_k^t with b = V^-1 Psi(h_0); the real part of the
    column sum is the reconstruction.
    """
    psi0 = _initial_lift(model, window)
    V = model.eigvecs
    if _well_conditioned(model):
        b = np.linalg.solve(V, psi0.astype(complex))
    else:
        b = np.linalg.lstsq(V, psi0.astype(complex), rcond=None)[0]
    readout = (model.C @ V)[0]
    powers = model.eigvals[:, None] ** np.arange(steps)[None, :]
    return (readout * b)[:, None] * powers


def reconstruct(model: KoopmanModel, window, steps: int) -> Reconstruction:
    """
    Free-run prediction C K^t Psi(h_0) for t = 0..steps-1.

    Evaluated through the eigendecomposition; when the eigenvector matrix is
    numerically defective the powers of K are applied directly instead.
    """
    if steps < 1:
        raise DataError(f"steps must be >= 1, got {steps}")
    start = model.dictionary.config.delay - 1
    if _well_conditioned(model):
        values = modal_contributions(model, window, steps).sum(axis=0).real
        return Reconstruction(values, start_index=start, used_eigenbasis=True)

    logger.warning("Defective Koopman eigenbasis, reconstructing by repeated multiplication")
    z = _initial_lift(model, window)
    values = np.empty(steps)
    for t in range(steps):
        values[t] = (model.C @ z)[0]
        z = model.K @ z
    return Reconstruction(values, start_index=start, used_eigenbasis=False)


def one_step_reconstruct(model: KoopmanModel, window) -> Reconstruction:
    """C Psi(h_0) followed by one-step predictions C K Psi(h_{t-1}) along the window."""
    psi = lift(model.dictionary, delay_embed(window, model.dictionary.config.delay))
    first = model.C @ psi[:, :1]
    rest = model.C @ model.K @ psi[:, :-1]
    values = np.concatenate([first[0], rest[0]])
    return Reconstruction(
        values,
        start_index=model.dictionary.config.delay - 1,
        used_eigenbasis=False,
        one_step=True,
    )


def mode_amplitudes(model: KoopmanModel, window) -> ModeAmplitudes:
    """|amplitude| of each retained mode at every snapshot time of ``window``."""
    steps = delay_embed(window, model.dictionary.config.delay).shape[1]
    rows = min(model.svd_rank, len(model.eigvals))
    contributions = modal_contributions(model, window, steps)[:rows]
    return ModeAmplitudes(matrix=np.abs(contributions), eigvals=model.eigvals[:rows])


def reconstruction_error(original, reconstructed) -> ReconstructionError:
    original = np.asarray(original, dtype=float)
    reconstructed = np.asarray(reconstructed, dtype=float)
    if original.shape != reconstructed.shape:
        raise DimensionMismatchError(
            f"length mismatch: {original.shape} vs {reconstructed.shape}"
        )
    if original.size == 0:
        raise DataError("cannot score empty signals")
    diff = reconstructed - original
    rmse = float(np.sqrt(np.mean(diff**2)))
    std = float(original.std())
    if std == 0:
        raise DegenerateInputError("NRMSE is undefined for a zero-variance original")
    return ReconstructionError(rmse=rmse, nrmse=rmse / std, max_abs=float(np.abs(diff).max()))


def aligned_target(window, reconstruction: Reconstruction) -> np.ndarray:
    """Window samples aligned with ``reconstruction.samples``."""
    x = _as_window(window)
    start = reconstruction.start_index
    return x[start : start + len(reconstruction.samples)]


def dump_model(model: KoopmanModel) -> KoopmanModelDump:
    return KoopmanModelDump(
        K=model.K.tolist(),
        eigvals=ComplexArray(re=model.eigvals.real.tolist(), im=model.eigvals.imag.tolist()),
        eigvecs_re=model.eigvecs.real.tolist(),
        eigvecs_im=model.eigvecs.imag.tolist(),
        C=model.C.tolist(),
        dictionary=model.dictionary.config,
        centers=model.dictionary.centers.tolist(),
        dt=model.dt,
        svd_rank=model.svd_rank,
        ridge_reg=model.ridge_reg,
        effective_rank=model.effective_rank,
    )


def load_model(dump: KoopmanModelDump) -> KoopmanModel:
    cfg = dump.dictionary
    centers = np.asarray(dump.centers, dtype=float).reshape(cfg.rbf_centers, cfg.delay)
    return KoopmanModel(
        K=np.asarray(dump.K, dtype=float),
        eigvals=np.asarray(dump.eigvals.re) + 1j * np.asarray(dump.eigvals.im),
        eigvecs=np.asarray(dump.eigvecs_re) + 1j * np.asarray(dump.eigvecs_im),
        C=np.asarray(dump.C, dtype=float),
        dictionary=Dictionary(config=cfg, centers=centers),
        dt=dump.dt,
        svd_rank=dump.svd_rank,
        ridge_reg=dump.ridge_reg,
        effective_rank=dump.effective_rank,
    )


def save_model_json(model: KoopmanModel, path: str | Path) -> None:
    Path(path).write_text(dump_model(model).model_dump_json(indent=2))


def load_model_json(path: str | Path) -> KoopmanModel:
    try:
        dump = KoopmanModelDump.model_validate_json(Path(path).read_text())
    except (OSError, ValidationError) as e:
        raise DataError(f"cannot read Koopman model {path}: {e}") from e
    return load_model(dump)
