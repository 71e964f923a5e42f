"""Grayscale heatmaps: binary PGM for pixels, SVG for annotated figures."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core import ScalarField

MID_GRAY = 128


def normalize_to_bytes(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max scale to 0..255. A constant array maps to mid-gray and the
    second return value is True."""
    a = np.asarray(values, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.full(a.shape, MID_GRAY, dtype=np.uint8), True
    return np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8), False


def write_pgm(values: np.ndarray, path) -> bool:
    """P5 image, one pixel per node, rows in array order. Returns True if the
    field was constant."""
    pix, constant = normalize_to_bytes(values)
    h, w = pix.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pix.tobytes())
    return constant


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_svg(field: ScalarField, path, sensors: np.ndarray | None = None, title: str = "",
              cell: int = 8) -> bool:
    """Heatmap with a colorbar legend; sensor positions drawn as red dots.

    The image is drawn with y increasing upwards. Returns True if constant.
    """
    g = field.grid
    pix, constant = normalize_to_bytes(field.values)
    lo, hi = float(field.values.min()), float(field.values.max())
    W, H = g.nx * cell, g.ny * cell
    bar_x = W + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W + 110}" height="{H + 40}" '
           f'viewBox="0 0 {W + 110} {H + 40}">']
    if title:
        out.append(f'<text x="0" y="14" font-size="12" font-family="sans-serif">{title}</text>')
    out.append('<g transform="translate(0,24)">')
    for j in range(g.ny):
        row_y = (g.ny - 1 - j) * cell
        for i in range(g.nx):
            p = int(pix[j, i])
            out.append(f'<rect x="{i * cell}" y="{row_y}" width="{cell}" height="{cell}" '
                       f'fill="rgb({p},{p},{p})"/>')
    if sensors is not None and len(sensors):
        sx = (np.asarray(sensors)[:, 0] - g.x_min) / (g.x_max - g.x_min)
        sy = (np.asarray(sensors)[:, 1] - g.y_min) / (g.y_max - g.y_min)
        for a, b in zip(sx, sy):
            out.append(f'<circle cx="{a * W:.2f}" cy="{(1 - b) * H:.2f}" r="{max(cell / 3, 2):.1f}" '
                       f'fill="red" stroke="white" stroke-width="0.5"/>')
    # colorbar: 32 bands from max (top) to min (bottom)
    bands = 32
    for b in range(bands):
        p = int(round(255 * (bands - 1 - b) / (bands - 1)))
        out.append(f'<rect x="{bar_x}" y="{b * H / bands:.2f}" width="16" height="{H / bands + 0.5:.2f}" '
                   f'fill="rgb({p},{p},{p})"/>')
    out.append(f'<text x="{bar_x + 22}" y="10" font-size="10" font-family="sans-serif">{hi:.3g}</text>')
    out.append(f'<text x="{bar_x + 22}" y="{H}" font-size="10" font-family="sans-serif">{lo:.3g}</text>')
    out.append("</g></svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return constant
