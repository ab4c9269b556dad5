"""Dataset ingestion: IDX files and a seeded synthetic generator."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import IdxCountMismatchError, IdxMagicError, IdxTruncatedError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    """Images [N, C, H, W] scaled to [0, 1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N, C, H, W], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape} labels"
            )
        if self.images.shape[0] < 1:
            raise ValueError("dataset is empty")
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def n(self):
        return self.images.shape[0]


def _read_be32(buf, off, path):
    if off + 4 > len(buf):
        raise IdxTruncatedError(f"{path}: header truncated at byte {len(buf)}")
    return struct.unpack_from(">i", buf, off)[0]


def load_idx(images_path, labels_path, split=""):
    """Parse big-endian IDX image/label files into a Dataset.

    Accepts exactly magic 2051 (images: N, H, W of unsigned bytes) and 2049
    (labels); pixels are divided by 255. The two files must agree on N.
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{images_path}: magic {magic}, expected {IDX_IMAGES_MAGIC}")
    n = _read_be32(raw, 4, images_path)
    h = _read_be32(raw, 8, images_path)
    w = _read_be32(raw, 12, images_path)
    want = 16 + n * h * w
    if len(raw) < want:
        raise IdxTruncatedError(
            f"{images_path}: expected {want} bytes, file has {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=16)
    images = (pixels.astype(np.float32) / 255.0).reshape(n, 1, h, w)

    with open(labels_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{labels_path}: magic {magic}, expected {IDX_LABELS_MAGIC}")
    n_labels = _read_be32(raw, 4, labels_path)
    want = 8 + n_labels
    if len(raw) < want:
        raise IdxTruncatedError(
            f"{labels_path}: expected {want} bytes, file has {len(raw)}"
        )
    if n_labels != n:
        raise IdxCountMismatchError(
            f"{images_path} has {n} items but {labels_path} has {n_labels}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return Dataset(images, labels, split=split)


def synthetic_dataset(
    classes,
    n_per_class,
    seed,
    image_hw=(28, 28),
    channels=1,
    proto_seed=None,
    noise=0.15,
    jitter=0,
    split="synth",
):
    """Seeded Gaussian-blob class prototypes rendered into noisy images.

    Every class gets a fixed prototype built from a few random blobs; samples
    are the prototype plus pixel noise (and an optional whole-image shift of
    up to ``jitter`` pixels). ``proto_seed`` decouples the prototypes from the
    sample noise so train and test splits can share class shapes.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    h, w = image_hw
    proto_rng = np.random.default_rng(seed if proto_seed is None else proto_seed)
    yy, xx = np.mgrid[0:h, 0:w]
    protos = []
    for _ in range(classes):
        img = np.zeros((h, w))
        for _ in range(3):
            cy = proto_rng.uniform(0.2 * h, 0.8 * h)
            cx = proto_rng.uniform(0.2 * w, 0.8 * w)
            s = proto_rng.uniform(1.5, 4.0)
            a = proto_rng.uniform(0.5, 1.0)
            img += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        protos.append(np.clip(img, 0.0, 1.0))

    rng = np.random.default_rng(seed)
    images = np.empty((classes * n_per_class, channels, h, w), dtype=np.float32)
    labels = np.empty(classes * n_per_class, dtype=np.int64)
    row = 0
    for c in range(classes):
        for _ in range(n_per_class):
            img = protos[c]
            if jitter:
                dy, dx = rng.integers(-jitter, jitter + 1, size=2)
                img = np.roll(img, (dy, dx), axis=(0, 1))
            img = np.clip(img + noise * rng.standard_normal((h, w)), 0.0, 1.0)
            images[row] = img.astype(np.float32)
            labels[row] = c
            row += 1
    return Dataset(images, labels, split=split)
