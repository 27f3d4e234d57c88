"""Procedural grayscale test corpus.

Stands in for a photographic collection when none is available: each image
is a smooth background gradient overlaid with a few filled ellipses,
rectangles and triangles of random gray levels. Output is fully determined
by ``seed``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw


def synth_image(rng: np.random.Generator, height: int = 64, width: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    angle = rng.uniform(0, 2 * np.pi)
    base = rng.uniform(0.1, 0.6)
    grad = base + rng.uniform(-0.3, 0.3) * (np.cos(angle) * xx + np.sin(angle) * yy)
    canvas = Image.fromarray(np.clip(grad * 255, 0, 255).astype(np.uint8), mode="L")
    draw = ImageDraw.Draw(canvas)
    for _ in range(int(rng.integers(2, 7))):
        kind = rng.integers(3)
        level = int(rng.integers(0, 256))
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        rx, ry = rng.uniform(0.1, 0.35) * width, rng.uniform(0.1, 0.35) * height
        if kind == 0:
            draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=level)
        elif kind == 1:
            draw.rectangle([cx - rx, cy - ry, cx + rx, cy + ry], fill=level)
        else:
            pts = [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in rng.uniform(0, 2 * np.pi, 3)]
            draw.polygon(pts, fill=level)
    return np.asarray(canvas, dtype=np.uint8)


def write_corpus(directory: str | Path, count: int, seed: int = 0, height: int = 64, width: int = 64) -> list[Path]:
    """Write ``count`` images named ``synth_00000.pgm`` ... into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(count):
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, k]))
        px = synth_image(rng, height, width)
        path = d / f"synth_{k:05d}.pgm"
        path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + px.tobytes())
        paths.append(path)
    return paths
