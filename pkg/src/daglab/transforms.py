"""Augmentation transforms for image grids and 2D point batches.

Image transforms act on the two spatial axes of an ``(H, W, C)`` grid.
Rotations, flips and flip+rotation combinations are pixel permutations and
therefore exactly invertible; translation (zero padded) and corner cropping
(nearest-neighbour resize) are not.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Kind",
    "PointKind",
    "Transform",
    "PointTransform",
    "ImageGrid",
    "NonInvertible",
    "apply",
    "invert",
    "build_augmentation_set",
    "linear_action",
    "FAMILIES",
    "POINT_FAMILIES",
    "IMAGE_FAMILIES",
    "catalogue_size",
]


class NonInvertible(ValueError):
    pass


class Kind(enum.Enum):
    IDENTITY = "identity"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"
    FLIP_LR = "flip_lr"
    FLIP_UD = "flip_ud"
    FLIP_BOTH = "flip_both"
    FLIPROT90_LR = "fliprot90_lr"  # FlipLR after Rot90
    FLIPROT90_UD = "fliprot90_ud"  # FlipUD after Rot90
    TRANSLATE_UP = "translate_up"
    TRANSLATE_DOWN = "translate_down"
    TRANSLATE_LEFT = "translate_left"
    TRANSLATE_RIGHT = "translate_right"
    CROP_CORNER = "crop_corner"


class PointKind(enum.Enum):
    IDENTITY = "identity"
    ROT90 = "plane_rot90"
    ROT180 = "plane_rot180"
    ROT270 = "plane_rot270"
    REFLECT_X = "reflect_x"  # (x, y) -> (x, -y)
    REFLECT_Y = "reflect_y"  # (x, y) -> (-x, y)
    REFLECT_ANTIDIAG = "reflect_antidiag"  # (x, y) -> (-y, -x), ReflectX after PlaneRot90
    TRANSLATE = "translate"
    SCALE = "scale"


_PERMUTATION_KINDS = {
    Kind.IDENTITY,
    Kind.ROT90,
    Kind.ROT180,
    Kind.ROT270,
    Kind.FLIP_LR,
    Kind.FLIP_UD,
    Kind.FLIP_BOTH,
    Kind.FLIPROT90_LR,
    Kind.FLIPROT90_UD,
}

CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")


@dataclass(frozen=True)
class Transform:
    kind: Kind
    n_t: int = 5
    corner: str = "top_left"
    n_c: float = 0.75

    @property
    def invertible(self) -> bool:
        return self.kind in _PERMUTATION_KINDS

    def __str__(self) -> str:
        if self.kind.name.startswith("TRANSLATE"):
            return f"{self.kind.value}({self.n_t})"
        if self.kind is Kind.CROP_CORNER:
            return f"crop_{self.corner}({self.n_c})"
        return self.kind.value


@dataclass(frozen=True)
class PointTransform:
    kind: PointKind
    offset: tuple[float, float] = (0.0, 0.0)
    factor: float = 1.0

    @property
    def invertible(self) -> bool:
        return not (self.kind is PointKind.SCALE and self.factor == 0.0)

    @property
    def jacobian_det(self) -> float:
        if self.kind is PointKind.SCALE:
            return self.factor * self.factor
        if self.kind in (PointKind.REFLECT_X, PointKind.REFLECT_Y, PointKind.REFLECT_ANTIDIAG):
            return -1.0
        return 1.0

    def __str__(self) -> str:
        if self.kind is PointKind.TRANSLATE:
            return f"translate({self.offset[0]:g},{self.offset[1]:g})"
        if self.kind is PointKind.SCALE:
            return f"scale({self.factor:g})"
        return self.kind.value


@dataclass
class ImageGrid:
    """Pixel grid of shape (height, width, channels), values in [0, 1]."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or min(px.shape) < 1:
            raise ValueError(f"grid must be (H, W, C) with positive dims, got {px.shape}")
        if np.any(px < 0.0) or np.any(px > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageGrid) and np.array_equal(self.pixels, other.pixels)


# ----------------------------------------------------------------------------
# image kernels on arbitrary leading/trailing axes; spatial axes given explicitly


def _shift(a: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Shift content by n along axis (positive: towards higher index), zero fill."""
    out = np.zeros_like(a)
    size = a.shape[axis]
    if abs(n) >= size:
        return out
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if n >= 0:
        src[axis] = slice(0, size - n)
        dst[axis] = slice(n, size)
    else:
        src[axis] = slice(-n, size)
        dst[axis] = slice(0, size + n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _crop(a: np.ndarray, t: Transform, ax: tuple[int, int]) -> np.ndarray:
    h, w = a.shape[ax[0]], a.shape[ax[1]]
    if t.n_c * min(h, w) < 1:
        raise ValueError(f"grid {h}x{w} too small for crop scale {t.n_c}")
    if t.corner not in CORNERS:
        raise ValueError(f"unknown corner {t.corner!r}")
    ch, cw = max(1, int(t.n_c * h)), max(1, int(t.n_c * w))
    r0 = 0 if t.corner.startswith("top") else h - ch
    c0 = 0 if t.corner.endswith("left") else w - cw
    rows = r0 + (np.arange(h) * ch) // h
    cols = c0 + (np.arange(w) * cw) // w
    return np.take(np.take(a, rows, axis=ax[0]), cols, axis=ax[1])


def _image_apply(t: Transform, a: np.ndarray, ax: tuple[int, int]) -> np.ndarray:
    k = t.kind
    if k is Kind.IDENTITY:
        return a.copy()
    if k is Kind.ROT90:
        return np.rot90(a, 1, axes=ax)
    if k is Kind.ROT180:
        return np.rot90(a, 2, axes=ax)
    if k is Kind.ROT270:
        return np.rot90(a, 3, axes=ax)
    if k is Kind.FLIP_LR:
        return np.flip(a, axis=ax[1])
    if k is Kind.FLIP_UD:
        return np.flip(a, axis=ax[0])
    if k is Kind.FLIP_BOTH:
        return np.flip(a, axis=ax)
    if k is Kind.FLIPROT90_LR:
        return np.flip(np.rot90(a, 1, axes=ax), axis=ax[1])
    if k is Kind.FLIPROT90_UD:
        return np.flip(np.rot90(a, 1, axes=ax), axis=ax[0])
    if k is Kind.TRANSLATE_UP:
        return _shift(a, -t.n_t, ax[0])
    if k is Kind.TRANSLATE_DOWN:
        return _shift(a, t.n_t, ax[0])
    if k is Kind.TRANSLATE_LEFT:
        return _shift(a, -t.n_t, ax[1])
    if k is Kind.TRANSLATE_RIGHT:
        return _shift(a, t.n_t, ax[1])
    if k is Kind.CROP_CORNER:
        return _crop(a, t, ax)
    raise ValueError(f"unhandled transform {k}")


_IMAGE_INVERSE = {
    Kind.IDENTITY: Kind.IDENTITY,
    Kind.ROT90: Kind.ROT270,
    Kind.ROT180: Kind.ROT180,
    Kind.ROT270: Kind.ROT90,
    Kind.FLIP_LR: Kind.FLIP_LR,
    Kind.FLIP_UD: Kind.FLIP_UD,
    Kind.FLIP_BOTH: Kind.FLIP_BOTH,
    Kind.FLIPROT90_LR: Kind.FLIPROT90_LR,
    Kind.FLIPROT90_UD: Kind.FLIPROT90_UD,
}


# ----------------------------------------------------------------------------
# points


def _point_apply(t: PointTransform, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"point batch must have shape (n, 2), got {p.shape}")
    x, y = p[:, 0], p[:, 1]
    k = t.kind
    if k is PointKind.IDENTITY:
        return p.copy()
    if k is PointKind.ROT90:
        return np.stack([-y, x], axis=1)
    if k is PointKind.ROT180:
        return np.stack([-x, -y], axis=1)
    if k is PointKind.ROT270:
        return np.stack([y, -x], axis=1)
    if k is PointKind.REFLECT_X:
        return np.stack([x, -y], axis=1)
    if k is PointKind.REFLECT_Y:
        return np.stack([-x, y], axis=1)
    if k is PointKind.REFLECT_ANTIDIAG:
        return np.stack([-y, -x], axis=1)
    if k is PointKind.TRANSLATE:
        return p + np.asarray(t.offset, dtype=np.float64)
    if k is PointKind.SCALE:
        return p * t.factor
    raise ValueError(f"unhandled point transform {k}")


def _point_inverse(t: PointTransform) -> PointTransform:
    k = t.kind
    if k is PointKind.ROT90:
        return PointTransform(PointKind.ROT270)
    if k is PointKind.ROT270:
        return PointTransform(PointKind.ROT90)
    if k is PointKind.TRANSLATE:
        return PointTransform(PointKind.TRANSLATE, offset=(-t.offset[0], -t.offset[1]))
    if k is PointKind.SCALE:
        if t.factor == 0.0:
            raise NonInvertible("scale(0) collapses the plane")
        return PointTransform(PointKind.SCALE, factor=1.0 / t.factor)
    return t  # identity, rot180 and reflections are involutions


# ----------------------------------------------------------------------------
# public API


def apply(t, x):
    """Apply a transform to an ImageGrid or to an ``(n, 2)`` point batch."""
    if isinstance(t, PointTransform):
        return _point_apply(t, x)
    if isinstance(x, ImageGrid):
        return ImageGrid(_image_apply(t, x.pixels, (0, 1)))
    raise TypeError("image transforms take an ImageGrid; use apply_batch for arrays")


def apply_batch(t, x: np.ndarray, grid_shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Apply to a flat data batch of shape ``(n, d)``.

    Points need ``d == 2``; image transforms need ``grid_shape`` with
    ``H*W*C == d``.
    """
    if isinstance(t, PointTransform):
        return _point_apply(t, x)
    if grid_shape is None:
        raise ValueError("image transforms need the grid shape")
    n = x.shape[0]
    out = _image_apply(t, x.reshape((n, *grid_shape)), (1, 2))
    return np.ascontiguousarray(out).reshape(n, -1)


def invert(t, y):
    """Exact inverse of ``apply``; raises NonInvertible for lossy transforms."""
    if isinstance(t, PointTransform):
        return _point_apply(_point_inverse(t), y)
    if not t.invertible:
        raise NonInvertible(f"{t} is not invertible")
    inv = Transform(_IMAGE_INVERSE[t.kind])
    if isinstance(y, ImageGrid):
        return ImageGrid(_image_apply(inv, y.pixels, (0, 1)))
    raise TypeError("image transforms take an ImageGrid")


def linear_action(t, dim: int, grid_shape: tuple[int, int, int] | None = None):
    """Return ``(matrix, offset)`` with ``apply(t, x) == x @ matrix + offset`` row-wise.

    Every transform in the catalogue is affine on flattened data; the training
    loop uses this form so that gradients can flow through transformed fakes.
    """
    if isinstance(t, PointTransform):
        if dim != 2:
            raise ValueError("point transforms act on 2D data")
        basis = np.eye(2)
        shift = _point_apply(t, np.zeros((1, 2)))[0]
        matrix = _point_apply(t, basis) - shift
        return matrix, shift
    if grid_shape is None or math.prod(grid_shape) != dim:
        raise ValueError("grid_shape must match data dimension")
    # Track where each source pixel lands: transform a one-hot per input coordinate.
    matrix = apply_batch(t, np.eye(dim), grid_shape)
    return matrix, np.zeros(dim)


# ----------------------------------------------------------------------------
# catalogue


def _image_family(family: str, n_t: int, n_c: float) -> list[Transform]:
    if family == "rotation":
        kinds = [Kind.IDENTITY, Kind.ROT90, Kind.ROT180, Kind.ROT270]
        return [Transform(k) for k in kinds]
    if family == "flipping":
        kinds = [Kind.IDENTITY, Kind.FLIP_LR, Kind.FLIP_UD, Kind.FLIP_BOTH]
        return [Transform(k) for k in kinds]
    if family == "fliprot":
        kinds = [Kind.IDENTITY, Kind.FLIPROT90_LR, Kind.FLIPROT90_UD, Kind.FLIP_LR]
        return [Transform(k) for k in kinds]
    if family == "translation":
        kinds = [
            Kind.IDENTITY,
            Kind.TRANSLATE_UP,
            Kind.TRANSLATE_DOWN,
            Kind.TRANSLATE_LEFT,
            Kind.TRANSLATE_RIGHT,
        ]
        return [Transform(k, n_t=n_t) for k in kinds]
    if family == "cropping":
        return [Transform(Kind.IDENTITY)] + [
            Transform(Kind.CROP_CORNER, corner=c, n_c=n_c) for c in CORNERS
        ]
    if family == "combined":
        # larger-K ablation order: identity + 3 rotations + 3 flips + 3 corner crops
        kinds = [Kind.IDENTITY, Kind.ROT90, Kind.ROT180, Kind.ROT270]
        kinds += [Kind.FLIP_LR, Kind.FLIP_UD, Kind.FLIP_BOTH]
        out = [Transform(k) for k in kinds]
        out += [Transform(Kind.CROP_CORNER, corner=c, n_c=n_c) for c in CORNERS[:3]]
        return out
    raise ValueError(f"unknown family {family!r}")


POINT_MIXED_OFFSETS = ((3.0, 0.0), (0.0, 3.0), (-3.0, -3.0))


def _point_family(family: str) -> list[PointTransform]:
    rotations = [PointTransform(k) for k in (PointKind.ROT90, PointKind.ROT180, PointKind.ROT270)]
    if family == "point_rotation":
        return [PointTransform(PointKind.IDENTITY)] + rotations
    if family == "point_mixed":
        reflections = [
            PointTransform(k)
            for k in (PointKind.REFLECT_X, PointKind.REFLECT_Y, PointKind.REFLECT_ANTIDIAG)
        ]
        shifts = [PointTransform(PointKind.TRANSLATE, offset=o) for o in POINT_MIXED_OFFSETS]
        return [PointTransform(PointKind.IDENTITY)] + rotations + reflections + shifts
    raise ValueError(f"unknown family {family!r}")


IMAGE_FAMILIES = ("rotation", "flipping", "translation", "cropping", "fliprot", "combined")
POINT_FAMILIES = ("point_rotation", "point_mixed")
FAMILIES = IMAGE_FAMILIES + POINT_FAMILIES


def catalogue_size(family: str) -> int:
    if family in POINT_FAMILIES:
        return len(_point_family(family))
    return len(_image_family(family, 5, 0.75))


def build_augmentation_set(family: str, K: int, n_t: int = 5, n_c: float = 0.75) -> list:
    """First ``K`` transforms of a family; element 0 is always the identity."""
    if family in POINT_FAMILIES:
        catalogue = _point_family(family)
    else:
        catalogue = _image_family(family, n_t, n_c)
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > len(catalogue):
        raise ValueError(f"family {family!r} holds {len(catalogue)} transforms, asked for K={K}")
    return catalogue[:K]
