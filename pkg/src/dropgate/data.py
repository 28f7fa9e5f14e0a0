"""MNIST ingestion and the permuted / rotated task streams.

Raw MNIST ships as big-endian IDX files. A task stream derives T
classification tasks from the same base images: task 0 is always the
untouched data, later tasks either shuffle the 784 pixel positions with
a per-task permutation or rotate the digits by ``10 * task_id`` degrees.
Pixels are normalized to [0, 1] (division by 255); labels never change.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, TruncationError, ValidationError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

RNG_NAME = "numpy-pcg64"  # default_rng; permutations use its Fisher-Yates shuffle

IMAGE_SIDE = 28
N_PIXELS = IMAGE_SIDE * IMAGE_SIDE


def parse_idx(data: bytes) -> np.ndarray:
    """Decode one IDX file: images -> (N, rows, cols) uint8, labels -> (N,) uint8."""
    if len(data) < 4:
        raise TruncationError("IDX input shorter than its magic number")
    (magic,) = struct.unpack(">i", data[:4])
    if magic == IMAGE_MAGIC:
        ndim = 3
    elif magic == LABEL_MAGIC:
        ndim = 1
    else:
        raise FormatError(f"bad IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncationError("IDX input shorter than its dimension header")
    dims = struct.unpack(f">{ndim}i", data[4:header])
    count = int(np.prod(dims))
    if len(data) - header != count:
        raise TruncationError(
            f"IDX payload has {len(data) - header} bytes, header declares {count}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(arr: np.ndarray) -> bytes:
    """Encode a uint8 array as IDX bytes (inverse of parse_idx)."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 3:
        magic = IMAGE_MAGIC
    elif arr.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise ValidationError(f"IDX arrays must be 1-D or 3-D, got {arr.ndim}-D")
    header = struct.pack(f">{arr.ndim + 1}i", magic, *arr.shape)
    return header + arr.tobytes()


@dataclass
class ImageSet:
    """Raw images (count, 28, 28) uint8 with integer labels in [0, 10)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValidationError("images must be (count, rows, cols)")
        if self.labels.shape != (self.images.shape[0],):
            raise ValidationError(
                f"{self.images.shape[0]} images but {self.labels.shape} labels"
            )
        self.labels = self.labels.astype(np.int64)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ValidationError("labels must be in [0, 10)")

    def __len__(self):
        return self.images.shape[0]


def _read_maybe_gzip(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _find_file(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        p = data_dir / name
        if p.exists():
            return p
    raise DataError(
        f"missing MNIST file {stem}[.gz] in {data_dir} -- "
        "run scripts/fetch_mnist.py or point --data-dir at the IDX files"
    )


def load_image_set(images_path: Path, labels_path: Path) -> ImageSet:
    images = parse_idx(_read_maybe_gzip(Path(images_path)))
    labels = parse_idx(_read_maybe_gzip(Path(labels_path)))
    return ImageSet(images, labels)


def load_mnist(data_dir) -> tuple[ImageSet, ImageSet]:
    """Load the four canonical files; returns (train, test) sets."""
    data_dir = Path(data_dir)
    train = load_image_set(
        _find_file(data_dir, "train-images-idx3-ubyte"),
        _find_file(data_dir, "train-labels-idx1-ubyte"),
    )
    test = load_image_set(
        _find_file(data_dir, "t10k-images-idx3-ubyte"),
        _find_file(data_dir, "t10k-labels-idx1-ubyte"),
    )
    return train, test


def normalize(images: np.ndarray) -> np.ndarray:
    """uint8 pixels -> float32 in [0, 1]."""
    return images.astype(np.float32) / 255.0


def rotate_images(images: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate each image counterclockwise about its center.

    Inverse-mapped bilinear interpolation; source pixels falling outside
    the frame read as 0. Matches scipy.ndimage.rotate(reshape=False,
    order=1, cval=0) up to interpolation details.
    """
    images = np.asarray(images)
    squeeze = images.ndim == 2
    if squeeze:
        images = images[None]
    n, h, w = images.shape
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dr, dc = rr - cy, cc - cx
    # Output pixel (r, c) samples the source at the backward-rotated coords.
    src_r = cy + cos * dr + sin * dc
    src_c = cx - sin * dr + cos * dc

    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = (src_r - r0).astype(np.float32)
    fc = (src_c - c0).astype(np.float32)

    def sample(ri, ci):
        inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        ri_c = np.clip(ri, 0, h - 1)
        ci_c = np.clip(ci, 0, w - 1)
        vals = images[:, ri_c, ci_c].astype(np.float32)
        return vals * inside.astype(np.float32)

    out = (
        sample(r0, c0) * (1 - fr) * (1 - fc)
        + sample(r0, c0 + 1) * (1 - fr) * fc
        + sample(r0 + 1, c0) * fr * (1 - fc)
        + sample(r0 + 1, c0 + 1) * fr * fc
    )
    out = out.astype(images.dtype if images.dtype.kind == "f" else np.float32)
    return out[0] if squeeze else out


@dataclass
class Task:
    """One task of a stream; datasets materialize on demand.

    ``transform_spec`` is a permutation of the 784 pixel indices for
    permuted streams or the rotation angle in degrees for rotated ones.
    ``train()`` and ``validation()`` return (x, y) with x float32 in
    [0, 1], flattened to 784 columns.
    """

    id: int
    kind: str  # "permuted" | "rotated"
    transform_spec: np.ndarray | float
    base_train: ImageSet = field(repr=False)
    base_val: ImageSet = field(repr=False)

    def __post_init__(self):
        if self.kind == "permuted":
            perm = np.asarray(self.transform_spec)
            if sorted(perm.tolist()) != list(range(N_PIXELS)):
                raise ValidationError("transform_spec is not a permutation of 0..783")
            self.transform_spec = perm
        elif self.kind == "rotated":
            self.transform_spec = float(self.transform_spec)
        else:
            raise ValidationError(f"unknown task kind {self.kind!r}")

    def _materialize(self, base: ImageSet) -> np.ndarray:
        if self.kind == "permuted":
            flat = normalize(base.images).reshape(len(base), N_PIXELS)
            return flat[:, self.transform_spec]
        if self.transform_spec == 0.0:
            return normalize(base.images).reshape(len(base), N_PIXELS)
        rot = rotate_images(normalize(base.images), self.transform_spec)
        return rot.reshape(len(base), N_PIXELS)

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self._materialize(self.base_train), self.base_train.labels

    def validation(self) -> tuple[np.ndarray, np.ndarray]:
        return self._materialize(self.base_val), self.base_val.labels


@dataclass
class TaskStream:
    """Ordered tasks derived from one base dataset."""

    tasks: list[Task]
    kind: str
    seed: int
    rng_name: str = RNG_NAME

    @property
    def count(self) -> int:
        return len(self.tasks)

    def __post_init__(self):
        if not self.tasks:
            raise ValidationError("a task stream needs at least one task")
        for i, task in enumerate(self.tasks):
            if task.id != i:
                raise ValidationError("task ids must be 0..T-1 in order")


def make_permuted_stream(base_train: ImageSet, base_val: ImageSet, T: int, seed: int) -> TaskStream:
    """Task 0 is the identity; tasks 1..T-1 get independent random pixel shuffles."""
    if T < 1:
        raise ValidationError("T must be >= 1")
    rng = np.random.default_rng(seed)
    tasks = []
    for k in range(T):
        perm = np.arange(N_PIXELS) if k == 0 else rng.permutation(N_PIXELS)
        tasks.append(Task(k, "permuted", perm, base_train, base_val))
    return TaskStream(tasks, "permuted", seed)


def make_rotated_stream(base_train: ImageSet, base_val: ImageSet, T: int) -> TaskStream:
    """Task k rotates the base images by 10*k degrees."""
    if T < 1:
        raise ValidationError("T must be >= 1")
    tasks = [Task(k, "rotated", 10.0 * k, base_train, base_val) for k in range(T)]
    return TaskStream(tasks, "rotated", seed=0)
