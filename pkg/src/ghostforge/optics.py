"""Simulated differential ghost-imaging measurements.

A pattern ``I_i`` shown on the modulator is split in two arms. The object
arm bucket detector sees ``S_i = sum(I_i * T)`` for object transmittance
``T``; the reference arm sees the pattern's total energy ``R_i = sum(I_i)``.

Patterns come from a counter-based Philox generator whose key is the
experiment seed and whose counter's high word is the pattern index, so
pattern ``i`` can be regenerated on its own without replaying the first
``i - 1``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateMeasurementError, LoadError, ShapeError
from .fileio import atomic_write_text
from .parallel import thread_count

_KEY_MASK = (1 << 128) - 1
_NOISE_STREAM = 1


@dataclass(frozen=True)
class Pattern:
    index: int
    pixels: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class MeasurementRecord:
    index: int
    s: float
    r: float


@dataclass(frozen=True)
class NoiseModel:
    """Relative Gaussian noise on the object-arm bucket: ``S <- S * (1 + eps)``."""

    kind: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "additive-gaussian"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.sigma}")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.sigma > 0

    def to_dict(self) -> dict:
        return asdict(self)


NO_NOISE = NoiseModel()


def _stream(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    if index < 0:
        raise ValueError("pattern index must be non-negative")
    counter = [0, 0, stream, index]
    return np.random.Generator(np.random.Philox(key=seed & _KEY_MASK, counter=counter))


def pattern_pixels(seed: int, index: int, h: int, w: int, binary: bool = False) -> np.ndarray:
    """Pixels of pattern ``index``: i.i.d. uniform [0, 1), or {0, 1} if ``binary``."""
    u = _stream(seed, index).random((h, w))
    if binary:
        return (u >= 0.5).astype(np.float64)
    return u


def generate_patterns(seed: int, count: int, h: int, w: int, binary: bool = False) -> list[Pattern]:
    if count < 0:
        raise ConfigError(f"pattern count must be >= 0, got {count}")
    if h < 1 or w < 1:
        raise ConfigError(f"pattern grid must be at least 1x1, got {h}x{w}")
    return [Pattern(i, pattern_pixels(seed, i, h, w, binary)) for i in range(count)]


def pattern_stack(seed: int, count: int, h: int, w: int, binary: bool = False) -> np.ndarray:
    """Patterns 0..count-1 as one (count, h, w) array."""
    out = np.empty((count, h, w))
    for i in range(count):
        out[i] = pattern_pixels(seed, i, h, w, binary)
    return out


def _as_pixels(p) -> np.ndarray:
    return p.pixels if isinstance(p, Pattern) else np.asarray(p, dtype=np.float64)


def check_object(obj) -> np.ndarray:
    t = np.asarray(obj, dtype=np.float64)
    if t.ndim != 2:
        raise ShapeError(f"object must be a 2-D grid, got shape {t.shape}")
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise ShapeError("object transmittance must lie in [0, 1]")
    return t


def _bucket(pixels: np.ndarray, t: np.ndarray) -> tuple[float, float]:
    # one fixed reduction order (numpy pairwise sum over the flattened grid)
    return float(np.sum((pixels * t).ravel())), float(np.sum(pixels.ravel()))


def _noisy(s: float, index: int, noise: NoiseModel) -> float:
    if not noise.active:
        return s
    eps = _stream(noise.seed, index, _NOISE_STREAM).standard_normal() * noise.sigma
    return max(0.0, s * (1.0 + eps))


def measure(obj, pattern: Pattern, noise: NoiseModel = NO_NOISE, index: int | None = None) -> MeasurementRecord:
    """Bucket intensities for one pattern.

    Raises:
        ShapeError: object and pattern grids differ.
        DegenerateMeasurementError: the pattern carries no energy (R = 0).
    """
    t = check_object(obj)
    pixels = _as_pixels(pattern)
    i = pattern.index if isinstance(pattern, Pattern) else (index or 0)
    if pixels.shape != t.shape:
        raise ShapeError(f"pattern shape {pixels.shape} does not match object shape {t.shape}")
    s, r = _bucket(pixels, t)
    if not r > 0:
        raise DegenerateMeasurementError("reference intensity is zero", i)
    return MeasurementRecord(i, _noisy(s, i, noise), r)


def measure_sequence(obj, patterns: Sequence[Pattern] | np.ndarray, noise: NoiseModel = NO_NOISE,
                     threads: int | None = None) -> list[MeasurementRecord]:
    """Apply :func:`measure` to every pattern, preserving order.

    Work is split into contiguous chunks across ``threads`` workers
    (default: ``GHOSTFORGE_THREADS``); each record is computed by exactly the
    same code path regardless of the split, so results are bit-identical.
    """
    t = check_object(obj)
    if isinstance(patterns, np.ndarray):
        items = [Pattern(i, patterns[i]) for i in range(patterns.shape[0])]
    else:
        items = list(patterns)
    if not items:
        return []
    workers = min(thread_count(threads), len(items))
    if workers <= 1:
        return [measure(t, p, noise) for p in items]
    bounds = np.linspace(0, len(items), workers + 1).astype(int)
    chunks = [items[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(lambda chunk: [measure(t, p, noise) for p in chunk], chunks))
    return [rec for part in parts for rec in part]


def bucket_arrays(records: Iterable[MeasurementRecord]) -> tuple[np.ndarray, np.ndarray]:
    recs = list(records)
    return np.array([r.s for r in recs], dtype=np.float64), np.array([r.r for r in recs], dtype=np.float64)


# ---------------------------------------------------------------------------
# measurement log


@dataclass
class MeasurementLog:
    seed: int
    h: int
    w: int
    noise: NoiseModel
    records: list[MeasurementRecord]
    binary: bool = False

    @property
    def n(self) -> int:
        return len(self.records)

    def header(self) -> dict:
        return {"format": "ghostforge-measurements", "version": 1, "seed": self.seed, "N": self.n,
                "H": self.h, "W": self.w, "binary": self.binary, "noise": self.noise.to_dict()}

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [f"{r.index},{r.s:.17g},{r.r:.17g}" for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, self.dumps())

    @classmethod
    def loads(cls, text: str) -> MeasurementLog:
        lines = text.splitlines()
        if not lines:
            raise LoadError("empty measurement log")
        try:
            head = json.loads(lines[0])
            noise = NoiseModel(**head["noise"])
            records = []
            for k, line in enumerate(lines[1:]):
                i, s, r = line.split(",")
                if int(i) != k:
                    raise LoadError(f"measurement log out of order at line {k + 2}")
                records.append(MeasurementRecord(int(i), float(s), float(r)))
            log = cls(int(head["seed"]), int(head["H"]), int(head["W"]), noise, records, bool(head.get("binary", False)))
        except (ValueError, KeyError, TypeError) as exc:
            raise LoadError(f"malformed measurement log: {exc}") from exc
        if log.n != head["N"]:
            raise LoadError(f"header declares N={head['N']} but log holds {log.n} records")
        return log

    @classmethod
    def load(cls, path: str | Path) -> MeasurementLog:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise LoadError(f"cannot read {path}: {exc}") from exc
        return cls.loads(text)

    def patterns(self, count: int | None = None) -> np.ndarray:
        n = self.n if count is None else count
        return pattern_stack(self.seed, n, self.h, self.w, self.binary)


def simulate(obj, seed: int, count: int, noise: NoiseModel = NO_NOISE, binary: bool = False,
             threads: int | None = None) -> MeasurementLog:
    t = check_object(obj)
    h, w = t.shape
    recs = measure_sequence(t, generate_patterns(seed, count, h, w, binary), noise, threads)
    return MeasurementLog(seed, h, w, noise, recs, binary)

