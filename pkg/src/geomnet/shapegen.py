"""Procedural triangle/circle/square corpus, augmentation, and IDX file I/O.

Images are 28x28 ``uint8`` arrays with values in {0, 255}. Pixel (row r, col c)
has its center at continuous coordinates ``(x, y) = (c + 0.5, r + 0.5)``.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, GenerationError
from .tensor import Rng, make_rng

SIZE = 28
MARGIN = 2
MIN_FOREGROUND = 30
MAX_SHIFT = 4
MAX_ATTEMPTS = 100

TRIANGLE, CIRCLE, SQUARE = 0, 1, 2
NUM_CLASSES = 3

_CY, _CX = np.mgrid[0:SIZE, 0:SIZE] + 0.5


@dataclass
class LabeledDataset:
    images: np.ndarray  # [N, 28, 28] uint8
    labels: np.ndarray  # [N] uint8, values in {0, 1, 2}

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8).reshape(-1, SIZE, SIZE)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(self.images) != len(self.labels):
            raise ConfigError(f"{len(self.images)} images but {len(self.labels)} labels")
        if np.any(self.labels >= NUM_CLASSES):
            raise ConfigError("labels must be 0, 1 or 2")

    def __len__(self):
        return len(self.labels)

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=NUM_CLASSES).tolist()


@dataclass(frozen=True)
class AugmentOp:
    kind: str  # "rotate" | "flip_h" | "flip_v" | "translate"
    angle: float = 0.0
    dx: int = 0
    dy: int = 0

    def __post_init__(self):
        if self.kind not in ("rotate", "flip_h", "flip_v", "translate"):
            raise ConfigError(f"unknown augmentation {self.kind!r}")
        if not -180.0 <= self.angle < 180.0:
            raise ConfigError(f"angle {self.angle} outside [-180, 180)")
        if abs(self.dx) > MAX_SHIFT or abs(self.dy) > MAX_SHIFT:
            raise ConfigError(f"shift ({self.dx}, {self.dy}) exceeds {MAX_SHIFT} pixels")


# -- rasterization ---------------------------------------------------------

def points_in_polygon(px: np.ndarray, py: np.ndarray, vertices) -> np.ndarray:
    """Even-odd crossing test for arrays of points against a closed polygon."""
    inside = np.zeros(px.shape, dtype=bool)
    verts = [tuple(map(float, v)) for v in vertices]
    for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
        crosses = (y0 <= py) != (y1 <= py)
        if not np.any(crosses):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_hit = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < x_hit)
    return inside


def raster_polygon(vertices) -> np.ndarray:
    return np.where(points_in_polygon(_CX, _CY, vertices), 255, 0).astype(np.uint8)


def raster_circle(cx: float, cy: float, r: float) -> np.ndarray:
    inside = (_CX - cx) ** 2 + (_CY - cy) ** 2 <= r * r
    return np.where(inside, 255, 0).astype(np.uint8)


def square_vertices(cx: float, cy: float, side: float, angle_deg: float):
    t = math.radians(angle_deg)
    h = side / 2.0
    corners = [(-h, -h), (h, -h), (h, h), (-h, h)]
    cos_t, sin_t = math.cos(t), math.sin(t)
    return [(cx + u * cos_t - v * sin_t, cy + u * sin_t + v * cos_t) for u, v in corners]


def foreground(img: np.ndarray) -> np.ndarray:
    return img > 127


def is_contained(img: np.ndarray, margin: int = 1) -> bool:
    """True if no foreground pixel lies within ``margin`` pixels of the frame edge."""
    fg = foreground(img)
    inner = fg[margin:SIZE - margin, margin:SIZE - margin]
    return int(inner.sum()) == int(fg.sum())


def _triangle_ok(v) -> bool:
    (x0, y0), (x1, y1), (x2, y2) = v
    area = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)) / 2.0
    if area < 40.0:
        return False
    # reject slivers that rasterize to little more than a line
    for i in range(3):
        p, q, r = v[i], v[(i + 1) % 3], v[(i + 2) % 3]
        ax, ay = q[0] - p[0], q[1] - p[1]
        bx, by = r[0] - p[0], r[1] - p[1]
        cos_a = (ax * bx + ay * by) / math.hypot(ax, ay) / math.hypot(bx, by)
        if math.degrees(math.acos(max(-1.0, min(1.0, cos_a)))) < 20.0:
            return False
    return True


def raster_shape(label: int, rng: Rng) -> np.ndarray:
    """Draw a random filled shape of class ``label`` inside a 2-pixel margin."""
    lo, hi = float(MARGIN), float(SIZE - MARGIN)
    for _ in range(MAX_ATTEMPTS):
        if label == TRIANGLE:
            v = [tuple(rng.uniform(lo, hi, size=2)) for _ in range(3)]
            if not _triangle_ok(v):
                continue
            img = raster_polygon(v)
        elif label == CIRCLE:
            r = rng.uniform(5.0, 10.0)
            cx, cy = rng.uniform(lo + r, hi - r, size=2)
            img = raster_circle(cx, cy, r)
        elif label == SQUARE:
            side = rng.uniform(10.0, 18.0)
            angle = rng.uniform(0.0, 90.0)
            t = math.radians(angle)
            extent = side / 2.0 * (abs(math.cos(t)) + abs(math.sin(t)))
            if 2 * extent > hi - lo:
                continue
            cx, cy = rng.uniform(lo + extent, hi - extent, size=2)
            img = raster_polygon(square_vertices(cx, cy, side, angle))
        else:
            raise ConfigError(f"unknown class id {label}")
        if foreground(img).sum() >= MIN_FOREGROUND and is_contained(img, MARGIN):
            return img
    raise GenerationError(f"no valid shape of class {label} after {MAX_ATTEMPTS} attempts")


# -- augmentation ----------------------------------------------------------

def _rotate(img: np.ndarray, angle_deg: float):
    t = math.radians(angle_deg)
    cos_t, sin_t = math.cos(t), math.sin(t)
    c = SIZE / 2.0
    # every source foreground center must land inside the frame
    fy, fx = np.nonzero(foreground(img))
    ux, uy = fx + 0.5 - c, fy + 0.5 - c
    dx = c + ux * cos_t - uy * sin_t
    dy = c + ux * sin_t + uy * cos_t
    if np.any((dx < 0) | (dx >= SIZE) | (dy < 0) | (dy >= SIZE)):
        return None
    # inverse map destination centers, nearest-neighbor sample
    vx, vy = _CX - c, _CY - c
    sx = np.floor(c + vx * cos_t + vy * sin_t).astype(int)
    sy = np.floor(c - vx * sin_t + vy * cos_t).astype(int)
    valid = (sx >= 0) & (sx < SIZE) & (sy >= 0) & (sy < SIZE)
    out = np.zeros_like(img)
    out[valid] = img[sy[valid], sx[valid]]
    return out


def apply_augment(img: np.ndarray, op: AugmentOp):
    """Apply one augmentation. Returns ``None`` when the result would clip the shape.

    A result is rejected if any foreground would touch the outermost pixel
    ring or leave the frame, or if fewer than the minimum foreground pixels remain.
    """
    if op.kind == "flip_h":
        out = img[:, ::-1].copy()
    elif op.kind == "flip_v":
        out = img[::-1, :].copy()
    elif op.kind == "translate":
        fy, fx = np.nonzero(foreground(img))
        if fy.size and (fy.min() + op.dy < 1 or fy.max() + op.dy > SIZE - 2
                        or fx.min() + op.dx < 1 or fx.max() + op.dx > SIZE - 2):
            return None
        out = np.zeros_like(img)
        ys, yd = (slice(0, SIZE - op.dy), slice(op.dy, SIZE)) if op.dy >= 0 else (slice(-op.dy, SIZE), slice(0, SIZE + op.dy))
        xs, xd = (slice(0, SIZE - op.dx), slice(op.dx, SIZE)) if op.dx >= 0 else (slice(-op.dx, SIZE), slice(0, SIZE + op.dx))
        out[yd, xd] = img[ys, xs]
        if foreground(out).sum() != foreground(img).sum():
            return None
    else:
        out = _rotate(img, op.angle)
        if out is None:
            return None
    if not is_contained(out, 1) or foreground(out).sum() < MIN_FOREGROUND:
        return None
    return out


def random_augment_op(rng: Rng) -> AugmentOp:
    kind = ("rotate", "flip_h", "flip_v", "translate")[int(rng.integers(4))]
    if kind == "rotate":
        return AugmentOp("rotate", angle=float(rng.uniform(-180.0, 180.0)))
    if kind == "translate":
        dx, dy = rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=2)
        return AugmentOp("translate", dx=int(dx), dy=int(dy))
    return AugmentOp(kind)


def augment_variants(base: np.ndarray, count: int, rng: Rng) -> list[np.ndarray]:
    """``count`` distinct random compositions of 1-3 augmentations of ``base``."""
    seen = {base.tobytes()}
    variants = []
    for _ in range(count):
        for _ in range(MAX_ATTEMPTS):
            img = base
            for _ in range(int(rng.integers(1, 4))):
                img = apply_augment(img, random_augment_op(rng))
                if img is None:
                    break
            if img is not None and img.tobytes() not in seen:
                break
        else:
            raise GenerationError(f"could not produce a new augmentation after {MAX_ATTEMPTS} attempts")
        seen.add(img.tobytes())
        variants.append(img)
    return variants


# -- dataset assembly ------------------------------------------------------

# stream keys passed to make_rng alongside the root seed
_TEST_KEY, _TRAIN_AUG_KEY, _HOLDOUT_BASE_KEY, _HOLDOUT_AUG_KEY = range(4)


def build_datasets(seed: int, n_test: int = 300, aug_factor: int = 7, holdout: bool = False):
    """Generate ``(train, test)`` datasets.

    Test image ``i`` has class ``i % 3``. By default the training set is the
    test set expanded by augmentation: each test image followed by
    ``aug_factor - 1`` augmented copies. With ``holdout`` the training bases are
    freshly generated images that do not occur in the test set.
    """
    if n_test < 0 or n_test % NUM_CLASSES:
        raise ConfigError(f"n_test must be a non-negative multiple of 3, got {n_test}")
    if aug_factor < 1:
        raise ConfigError(f"aug_factor must be >= 1, got {aug_factor}")
    labels = np.arange(n_test) % NUM_CLASSES
    test_imgs = [raster_shape(int(lab), make_rng(seed, _TEST_KEY, i)) for i, lab in enumerate(labels)]

    if holdout:
        taken = {img.tobytes() for img in test_imgs}
        bases = []
        for i, lab in enumerate(labels):
            rng = make_rng(seed, _HOLDOUT_BASE_KEY, i)
            for _ in range(MAX_ATTEMPTS):
                img = raster_shape(int(lab), rng)
                if img.tobytes() not in taken:
                    break
            else:
                raise GenerationError("could not generate a holdout image distinct from the test set")
            bases.append(img)
        aug_key = _HOLDOUT_AUG_KEY
    else:
        bases = test_imgs
        aug_key = _TRAIN_AUG_KEY

    train_imgs, train_labels = [], []
    for i, (img, lab) in enumerate(zip(bases, labels)):
        train_imgs.append(img)
        train_imgs.extend(augment_variants(img, aug_factor - 1, make_rng(seed, aug_key, i)))
        train_labels.extend([lab] * aug_factor)

    def pack(imgs, labs):
        arr = np.stack(imgs) if imgs else np.zeros((0, SIZE, SIZE), np.uint8)
        return LabeledDataset(arr, np.asarray(labs, dtype=np.uint8))

    return pack(train_imgs, train_labels), pack(test_imgs, labels)


# -- IDX files -------------------------------------------------------------

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def images_path(directory, split: str) -> Path:
    return Path(directory) / f"{split}-images-idx3-ubyte"


def labels_path(directory, split: str) -> Path:
    return Path(directory) / f"{split}-labels-idx1-ubyte"


def encode_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    return struct.pack(">IIII", IMAGES_MAGIC, len(images), SIZE, SIZE) + images.tobytes()


def encode_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes()


def decode_images(buf: bytes) -> np.ndarray:
    if len(buf) < 16:
        raise FormatError("truncated image header", offset=len(buf))
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IMAGES_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x}", offset=0)
    if (rows, cols) != (SIZE, SIZE):
        raise FormatError(f"expected {SIZE}x{SIZE} images, got {rows}x{cols}", offset=8)
    need = 16 + n * SIZE * SIZE
    if len(buf) < need:
        raise FormatError(f"truncated image payload: need {need} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after image payload", offset=need)
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(n, SIZE, SIZE).copy()


def decode_labels(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise FormatError("truncated label header", offset=len(buf))
    magic, n = struct.unpack(">II", buf[:8])
    if magic != LABELS_MAGIC:
        raise FormatError(f"bad label magic 0x{magic:08x}", offset=0)
    need = 8 + n
    if len(buf) < need:
        raise FormatError(f"truncated label payload: need {need} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after label payload", offset=need)
    labels = np.frombuffer(buf, dtype=np.uint8, offset=8).copy()
    bad = np.nonzero(labels >= NUM_CLASSES)[0]
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} out of range", offset=8 + int(bad[0]))
    return labels


def read_images(path) -> np.ndarray:
    return decode_images(Path(path).read_bytes())


def write_idx(dataset: LabeledDataset, directory, split: str = "train") -> None:
    os.makedirs(directory, exist_ok=True)
    images_path(directory, split).write_bytes(encode_images(dataset.images))
    labels_path(directory, split).write_bytes(encode_labels(dataset.labels))


def read_idx(directory, split: str = "train") -> LabeledDataset:
    images = read_images(images_path(directory, split))
    labels = decode_labels(labels_path(directory, split).read_bytes())
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    return LabeledDataset(images, labels)
