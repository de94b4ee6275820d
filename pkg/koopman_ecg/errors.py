"""Exception hierarchy for koopman_ecg.

The CLI maps ``ConfigError`` to exit code 2 and ``DataError`` to exit code 3;
the HTTP API maps them to 422 and 400.
"""


class KoopmanEcgError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(KoopmanEcgError):
    """Invalid or inconsistent configuration."""


class DataError(KoopmanEcgError):
    """Invalid, malformed or insufficient input data."""


class DegenerateInputError(DataError):
    """Input has zero variance where a non-degenerate signal is required."""


class EmptyWindowSetError(DataError):
    """Signal too short to yield a single window."""


class DimensionMismatchError(DataError):
    """Array shapes do not conform."""


class UnderdeterminedFitError(DataError):
    """Too few snapshots for the requested dictionary size."""


class NonFiniteError(DataError):
    """NaN or infinite values where finite values are required."""


class WaveletSpecError(DataError):
    """Wavelet level/family incompatible with the data or decomposition."""


class TrainingError(KoopmanEcgError):
    """Training could not complete."""


class TrainingDivergedError(TrainingError):
    """Loss became NaN or infinite."""


class NonFiniteGradientError(TrainingError):
    """An optimizer step received non-finite gradients and was aborted."""


class ExperimentError(KoopmanEcgError):
    """A component failure with the experiment context attached."""

    def __init__(self, message: str, system: str, run_seed: int | None = None):
        super().__init__(message)
        self.system = system
        self.run_seed = run_seed

    def __str__(self) -> str:
        where = f"system={self.system}"
        if self.run_seed is not None:
            where += f", run_seed={self.run_seed}"
        return f"{super().__str__()} ({where})"
