"""SVG figures: eigenvalue scatter, modal amplitude heatmap, reconstruction overlay."""
import logging
import math
from html import escape
from pathlib import Path

import numpy as np

from .. import templates
from ..errors import DataError, DimensionMismatchError
from .koopman import KoopmanModel, ModeAmplitudes, reconstruction_error

logger = logging.getLogger(__name__)

FRAME = 1.2
EIGEN_SIZE = 400
MARGIN = 30
MARKER_HALF = 4.0
ORIGINAL_COLOR = "#1f77b4"
RECONSTRUCTION_COLOR = "#ff7f0e"


def _write(svg: str, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot write figure {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path


def _document(width: int, height: int, title: str, body: list) -> str:
    return templates.svg_document.format(
        width=width, height=height, title_x=width / 2, title=escape(title), body="\n".join(body)
    )


def emit_eigen_plot(model: KoopmanModel, path: str | Path, title: str = "Koopman eigenvalues") -> Path:
    """
    Scatter the eigenvalues over a dashed unit circle on [-1.2, 1.2]^2.

    Eigenvalues outside the frame are clamped to its edge and drawn as a
    triangle pointing outward.
    """
    plot = EIGEN_SIZE - 2 * MARGIN
    scale = plot / (2 * FRAME)

    def to_px(re: float, im: float):
        return MARGIN + (re + FRAME) * scale, MARGIN + (FRAME - im) * scale

    cx, cy = to_px(0.0, 0.0)
    body = [
        templates.axis_line.format(x1=MARGIN, y1=cy, x2=MARGIN + plot, y2=cy),
        templates.axis_line.format(x1=cx, y1=MARGIN, x2=cx, y2=MARGIN + plot),
        templates.axis_label.format(x=MARGIN + plot / 2, y=EIGEN_SIZE - 8, text="Re"),
        templates.axis_label.format(x=12, y=MARGIN + plot / 2, text="Im"),
        templates.unit_circle.format(cx=cx, cy=cy, r=scale),
    ]
    for lam in np.asarray(model.eigvals, dtype=complex):
        re, im = float(lam.real), float(lam.imag)
        if abs(re) <= FRAME and abs(im) <= FRAME:
            x, y = to_px(re, im)
            body.append(
                templates.eigen_marker.format(
                    css="eig", re=re, im=im, x=x, y=y,
                    top=y - MARKER_HALF, bottom=y + MARKER_HALF,
                    left=x - MARKER_HALF, right=x + MARKER_HALF,
                    fill=ORIGINAL_COLOR,
                )
            )
            continue
        # Scale onto the square frame along the ray from the origin.
        shrink = FRAME / max(abs(re), abs(im))
        x, y = to_px(re * shrink, im * shrink)
        angle = math.atan2(-im, re)  # screen y points down
        ux, uy = math.cos(angle), math.sin(angle)
        px, py = -uy, ux
        size = 2 * MARKER_HALF
        body.append(
            templates.overflow_marker.format(
                css="eig overflow", re=re, im=im,
                tip_x=x, tip_y=y,
                b1_x=x - size * ux + MARKER_HALF * px, b1_y=y - size * uy + MARKER_HALF * py,
                b2_x=x - size * ux - MARKER_HALF * px, b2_y=y - size * uy - MARKER_HALF * py,
                fill="crimson",
            )
        )
    return _write(_document(EIGEN_SIZE, EIGEN_SIZE, title, body), path)


def emit_mode_heatmap(
    amps: ModeAmplitudes, path: str | Path, title: str = "Modal amplitudes", cell: float = 4.0
) -> Path:
    """One row per mode, one column per time index; linear grayscale 0..max."""
    matrix = np.asarray(amps.matrix, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        raise DataError(f"amplitude matrix must be non-empty 2-D, got shape {matrix.shape}")
    n_modes, n_steps = matrix.shape
    row_h = max(cell, 12.0)
    peak = matrix.max()
    levels = np.zeros_like(matrix, dtype=int) if peak <= 0 else np.rint(255 * matrix / peak).astype(int)
    body = []
    for k in range(n_modes):
        for t in range(n_steps):
            body.append(
                templates.heat_cell.format(
                    x=MARGIN + t * cell, y=MARGIN + k * row_h, w=cell, h=row_h, v=levels[k, t]
                )
            )
    body.append(
        templates.axis_label.format(x=MARGIN + n_steps * cell / 2, y=MARGIN + n_modes * row_h + 20, text="time index")
    )
    width = int(math.ceil(2 * MARGIN + n_steps * cell))
    height = int(math.ceil(2 * MARGIN + n_modes * row_h + 10))
    return _write(_document(width, height, title, body), path)


def emit_reconstruction_overlay(
    original,
    reconstructed,
    fs: float,
    path: str | Path,
    width: int = 720,
    height: int = 300,
    one_step: bool = False,
) -> Path:
    """
    Original (blue) against reconstruction (orange), NRMSE in the title.

    ``one_step`` labels the orange trace as one-step predictions rather than a free run.
    """
    original = np.asarray(original, dtype=float)
    reconstructed = np.asarray(reconstructed, dtype=float)
    if original.shape != reconstructed.shape:
        raise DimensionMismatchError(
            f"original has {original.shape} samples, reconstruction {reconstructed.shape}"
        )
    err = reconstruction_error(original, reconstructed)
    n = len(original)
    tmax = n / fs
    plot_w = width - 2 * MARGIN
    plot_h = height - 3 * MARGIN
    lo = float(min(original.min(), reconstructed.min()))
    hi = float(max(original.max(), reconstructed.max()))
    span = hi - lo if hi > lo else 1.0

    def points(y: np.ndarray) -> str:
        t = np.arange(n) / fs
        xs = MARGIN + t / tmax * plot_w
        ys = MARGIN + (hi - y) / span * plot_h
        return " ".join(f"{x:.3f},{v:.3f}" for x, v in zip(xs, ys))

    ticks = []
    for t in np.linspace(0.0, tmax, 5):
        ticks.append(
            templates.time_tick.format(x=MARGIN + t / tmax * plot_w, y=MARGIN + plot_h + 16, label=f"{t:g}")
        )
    legend_y = height - 18
    body = [
        templates.trace.format(css="original", stroke=ORIGINAL_COLOR, points=points(original)),
        templates.trace.format(css="reconstruction", stroke=RECONSTRUCTION_COLOR, points=points(reconstructed)),
        templates.time_axis.format(tmin=0.0, tmax=tmax, ticks="\n".join(ticks)),
        templates.axis_label.format(x=MARGIN + plot_w / 2, y=MARGIN + plot_h + 32, text="time (s)"),
        templates.legend_entry.format(
            x=MARGIN, x2=MARGIN + 24, y=legend_y, tx=MARGIN + 30, ty=legend_y + 4,
            stroke=ORIGINAL_COLOR, label="original",
        ),
        templates.legend_entry.format(
            x=MARGIN + 140, x2=MARGIN + 164, y=legend_y, tx=MARGIN + 170, ty=legend_y + 4,
            stroke=RECONSTRUCTION_COLOR, label="one-step EDMD prediction" if one_step else "EDMD reconstruction",
        ),
    ]
    kind = "One-step prediction" if one_step else "Reconstruction"
    title = f"{kind} NRMSE = {err.nrmse:.4f}"
    return _write(_document(width, height, title, body), path)
