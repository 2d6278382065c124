"""Figure emission without third-party renderers.

Images become binary portable graymaps (P5) or pixmaps (P6); 2-D point sets
and metric bars become standalone SVG.  Output bytes are a pure function of
the inputs, so figure files take part in determinism checks.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def to_gray(img: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to u8 gray levels."""
    return np.clip((np.asarray(img) + 1.0) * 127.5, 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    gray = to_gray(img)
    if gray.ndim != 2:
        raise ValueError(f"pgm wants a 2-d image, got {gray.shape}")
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + gray.tobytes())


def write_image_grid(path, images: list[np.ndarray], cols: int, pad: int = 1) -> None:
    """Tile equally sized [-1,1] images into one PGM grid file."""
    if not images:
        raise ValueError("no images to tile")
    h, w = images[0].shape
    rows = (len(images) + cols - 1) // cols
    canvas = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad), dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        canvas[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = to_gray(img)
    header = f"P5\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + canvas.tobytes())


def _svg_header(width: int, height: int) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>']


def write_scatter_svg(path, point_sets: dict[str, np.ndarray], size: int = 480,
                      margin: int = 40) -> None:
    """Overlayed 2-D scatters, one color per named set, shared axes."""
    allpts = np.concatenate(list(point_sets.values()), axis=0)
    lo = allpts.min(axis=0) - 0.5
    hi = allpts.max(axis=0) + 0.5
    span = np.maximum(hi - lo, 1e-9)
    inner = size - 2 * margin

    def sx(x):
        return margin + (x - lo[0]) / span[0] * inner

    def sy(y):
        return size - margin - (y - lo[1]) / span[1] * inner

    parts = _svg_header(size, size)
    parts.append(f'<rect x="{margin}" y="{margin}" width="{inner}" height="{inner}" '
                 'fill="none" stroke="#888"/>')
    for i, (name, pts) in enumerate(point_sets.items()):
        color = PALETTE[i % len(PALETTE)]
        for x, y in np.asarray(pts):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.2" '
                         f'fill="{color}" fill-opacity="0.55"/>')
        parts.append(f'<text x="{margin + 6}" y="{margin + 16 + 14 * i}" '
                     f'font-size="12" fill="{color}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def write_bars_svg(path, labels: list[str], values: list[float], title: str,
                   width: int = 480, height: int = 300, log_floor: float = 1e-12) -> None:
    """One bar per label; heights scaled to the max value."""
    margin = 48
    inner_w = width - 2 * margin
    inner_h = height - 2 * margin
    vmax = max(max(values), log_floor)
    parts = _svg_header(width, height)
    parts.append(f'<text x="{width // 2}" y="20" font-size="14" text-anchor="middle">'
                 f'{title}</text>')
    slot = inner_w / max(len(values), 1)
    for i, (label, v) in enumerate(zip(labels, values)):
        h = 0.0 if vmax <= 0 else max(v, 0.0) / vmax * inner_h
        x = margin + i * slot + 0.15 * slot
        y = height - margin - h
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{0.7 * slot:.1f}" '
                     f'height="{h:.1f}" fill="{PALETTE[i % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 0.35 * slot:.1f}" y="{height - margin + 16}" '
                     f'font-size="11" text-anchor="middle">{label}</text>')
        parts.append(f'<text x="{x + 0.35 * slot:.1f}" y="{y - 4:.1f}" '
                     f'font-size="10" text-anchor="middle">{v:.3g}</text>')
    parts.append(f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
                 f'y2="{height - margin}" stroke="#333"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
