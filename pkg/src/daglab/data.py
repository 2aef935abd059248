"""Synthetic mixture datasets with known modes, and the evaluation metrics.

Two dataset kinds share one type: ``points`` (isotropic Gaussian blobs in the
plane) and ``grid`` (noisy 8x8 glyph templates, flattened to 64 values and
clipped to [0, 1]).  Mode centres are chosen so that none of the catalogue
transforms maps a centre onto another centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import transforms as tf
from .divergence import kl

DEFAULT_CENTERS = ((1.0, 0.5), (2.0, 0.5), (1.5, 1.5), (0.5, 2.0), (2.5, 2.0))

# 8x8 glyphs; none of them is fixed by, or mapped onto another by, any
# rotation/flip in the catalogue.
_GLYPHS = {
    "F": ["........", ".######.", ".#......", ".#####..", ".#......", ".#......", ".#......", "........"],
    "L": ["........", ".#......", ".#......", ".#......", ".#......", ".#......", ".####...", "........"],
    "P": ["........", ".#####..", ".#....#.", ".#....#.", ".#####..", ".#......", ".#......", "........"],
    "G": ["........", "..####..", ".#......", ".#......", ".#..###.", ".#....#.", "..####..", "........"],
    "R": ["........", ".#####..", ".#....#.", ".#####..", ".#..#...", ".#...#..", ".#....#.", "........"],
}
GRID_SHAPE = (8, 8, 1)


def glyph_templates() -> np.ndarray:
    rows = []
    for art in _GLYPHS.values():
        rows.append(np.array([[1.0 if c == "#" else 0.0 for c in line] for line in art]).reshape(-1))
    return np.stack(rows)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "points"
    centers: tuple = DEFAULT_CENTERS
    sigma: float = 0.05
    weights: tuple | None = None
    n_samples: int = 2000
    fraction: float = 1.0
    seed: int = 0


@dataclass
class MixtureDataset:
    spec: DatasetSpec
    centers: np.ndarray
    weights: np.ndarray
    samples: np.ndarray
    labels: np.ndarray
    grid_shape: tuple | None = None

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_modes(self) -> int:
        return self.centers.shape[0]

    @property
    def sigma(self) -> float:
        return self.spec.sigma

    def radius(self, multiplier: float) -> float:
        # for grids the per-pixel noise accumulates over sqrt(d) coordinates
        scale = 1.0 if self.grid_shape is None else math.sqrt(self.dim)
        return multiplier * self.sigma * scale

    def draw(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.choice(self.n_modes, size=n, p=self.weights)
        x = self.centers[labels] + self.sigma * rng.standard_normal((n, self.dim))
        if self.grid_shape is not None:
            x = np.clip(x, 0.0, 1.0)
        return x, labels

    def reference(self, n: int = 10000) -> np.ndarray:
        """Fresh draws from the full mixture on a stream independent of the training data."""
        rng = np.random.default_rng(np.random.SeedSequence([self.spec.seed, 0xE7A1]))
        return self.draw(n, rng)[0]

    def transformed_centers(self, family: list) -> np.ndarray:
        out = []
        for t in family:
            if _is_identity(t):
                continue
            out.append(tf.apply_batch(t, self.centers, self.grid_shape))
        if not out:
            return np.empty((0, self.dim))
        return np.concatenate(out)


def _is_identity(t) -> bool:
    return t.kind in (tf.Kind.IDENTITY, tf.PointKind.IDENTITY)


def make_dataset(spec: DatasetSpec) -> MixtureDataset:
    if spec.kind == "points":
        centers = np.asarray(spec.centers, dtype=np.float64)
        grid_shape = None
    elif spec.kind == "grid":
        centers = glyph_templates()
        grid_shape = GRID_SHAPE
    else:
        raise ValueError(f"unknown dataset kind {spec.kind!r}")
    if len({tuple(c) for c in centers}) != len(centers):
        raise ValueError("mode centres must be distinct")
    if not 0.0 < spec.fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if spec.sigma <= 0:
        raise ValueError("sigma must be positive")
    m = centers.shape[0]
    weights = np.full(m, 1.0 / m) if spec.weights is None else np.asarray(spec.weights, dtype=np.float64)
    if weights.shape != (m,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability vector over the modes")
    ds = MixtureDataset(spec, centers, weights, np.empty((0, centers.shape[1])), np.empty(0, dtype=np.int64), grid_shape)
    rng = np.random.default_rng(spec.seed)
    x, labels = ds.draw(spec.n_samples, rng)
    order = rng.permutation(spec.n_samples)
    keep = order[: int(math.floor(spec.fraction * spec.n_samples))]
    if keep.size == 0:
        raise ValueError("no samples left after subsampling")
    ds.samples, ds.labels = x[keep], labels[keep]
    return ds


# ----------------------------------------------------------------------------
# metrics


@dataclass
class ModeReport:
    modes_covered: int
    mode_kl: float
    counts: np.ndarray = field(repr=False)
    unassigned: int = 0


def _nearest(samples: np.ndarray, centers: np.ndarray, radius: float):
    """Index of the nearest centre per sample, or -1 when farther than radius."""
    d2 = (
        np.sum(samples**2, axis=1)[:, None]
        - 2.0 * samples @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    idx = np.argmin(d2, axis=1)
    best = np.sqrt(np.maximum(d2[np.arange(len(samples)), idx], 0.0))
    return np.where(best <= radius, idx, -1)


def mode_report(samples, dataset: MixtureDataset, radius_multiplier: float = 3.0) -> ModeReport:
    if radius_multiplier <= 0:
        raise ValueError("radius_multiplier must be positive")
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    idx = _nearest(samples, dataset.centers, dataset.radius(radius_multiplier))
    assigned = idx[idx >= 0]
    counts = np.bincount(assigned, minlength=dataset.n_modes)
    unassigned = n - assigned.size
    threshold = max(1.0, 0.1 * n / dataset.n_modes)
    covered = int(np.sum(counts >= threshold))
    if assigned.size == 0:
        return ModeReport(0, math.inf, counts, unassigned)
    return ModeReport(covered, kl(counts / assigned.size, dataset.weights), counts, unassigned)


def frechet_gaussian(samples_a, samples_b) -> float:
    """Squared 2-Wasserstein distance between Gaussians fitted to two sample sets."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    d = a.shape[1]
    if b.shape[1] != d:
        raise ValueError("sample sets differ in dimension")
    if a.shape[0] < d + 1 or b.shape[0] < d + 1:
        raise ValueError(f"need at least {d + 1} samples per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    reg = 1e-9 * np.eye(d)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False)) + reg
    cov_b = np.atleast_2d(np.cov(b, rowvar=False)) + reg
    w_a, v_a = np.linalg.eigh(cov_a)
    if not np.all(np.isfinite(w_a)) or np.min(w_a) <= 0 or np.min(np.linalg.eigvalsh(cov_b)) <= 0:
        raise np.linalg.LinAlgError("degenerate covariance")
    root_a = (v_a * np.sqrt(w_a)) @ v_a.T
    # tr((A B)^1/2) == tr((A^1/2 B A^1/2)^1/2), the latter symmetric PSD
    inner = np.linalg.eigvalsh(root_a @ cov_b @ root_a)
    tr_sqrt = float(np.sum(np.sqrt(np.clip(inner, 0.0, None))))
    diff = mu_a - mu_b
    value = float(diff @ diff) + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * tr_sqrt
    return max(value, 0.0)


def leakage(samples, dataset: MixtureDataset, family: list, radius_multiplier: float = 3.0) -> float:
    """Share of assigned samples that land on transformed-only mode centres."""
    moved = dataset.transformed_centers(family)
    if moved.shape[0] == 0:
        return 0.0
    gap = _nearest(moved, dataset.centers, 0.0)
    if np.any(gap >= 0):
        raise ValueError("a transformed centre coincides with an original centre")
    candidates = np.concatenate([dataset.centers, moved])
    idx = _nearest(np.asarray(samples, dtype=np.float64), candidates, dataset.radius(radius_multiplier))
    assigned = idx[idx >= 0]
    if assigned.size == 0:
        return 0.0
    return float(np.sum(assigned >= dataset.n_modes)) / assigned.size


# ----------------------------------------------------------------------------
# sample dumps


def write_points_csv(path: Path, samples: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("x,y\n")
        for x, y in samples:
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def write_pgm_mosaic(path: Path, samples: np.ndarray, grid_shape=GRID_SHAPE, per_row: int = 8) -> None:
    """Tile up to per_row**2 single-channel grids into one binary P5 image."""
    h, w = grid_shape[0], grid_shape[1]
    tiles = np.clip(samples[: per_row * per_row], 0.0, 1.0).reshape(-1, h, w)
    rows = math.ceil(len(tiles) / per_row)
    canvas = np.zeros((rows * h, per_row * w))
    for i, tile in enumerate(tiles):
        r, c = divmod(i, per_row)
        canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = tile
    pixels = np.round(canvas * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
