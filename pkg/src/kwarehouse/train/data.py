"""IDX (MNIST-style) image/label files."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
SPLIT_PREFIX = {"train": "train", "test": "t10k", "t10k": "t10k"}


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, H, W), standardized
    labels: np.ndarray  # (N,), int64

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, count: int) -> "Dataset":
        return Dataset(self.images[:count], self.labels[:count])

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.images.astype(dtype), self.labels)


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path: str | Path, expected_magic: int) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)}, need 4 bytes of magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)}, need {header_end} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims)) if dims else 1
    if len(raw) < header_end + count:
        raise IdxFormatError(
            f"{path}: truncated payload at byte {len(raw)}, expected {header_end + count} bytes for dims {dims}")
    if len(raw) > header_end + count:
        raise IdxFormatError(f"{path}: {len(raw) - header_end - count} trailing bytes after byte {header_end + count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the compressed bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def _find(directory: Path, prefix: str, kind: str, ndim: int) -> Path:
    for sep in ("-", "."):
        for suffix in ("", ".gz"):
            p = directory / f"{prefix}-{kind}{sep}idx{ndim}-ubyte{suffix}"
            if p.is_file():
                return p
    raise FileNotFoundError(f"no {prefix} {kind} IDX file in {directory}")


def write_idx_dataset(directory: str | Path, images: np.ndarray, labels: np.ndarray,
                      split: str = "train", compress: bool = True) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = SPLIT_PREFIX[split]
    ext = ".gz" if compress else ""
    write_idx(directory / f"{prefix}-images-idx3-ubyte{ext}", images)
    write_idx(directory / f"{prefix}-labels-idx1-ubyte{ext}", labels)


def load_idx_dataset(path: str | Path, split: str = "train", limit: int | None = None) -> Dataset:
    """Load images and labels, standardize pixels to zero mean / unit variance.

    Statistics are computed over the samples actually returned (after ``limit``).
    """
    directory = Path(path)
    prefix = SPLIT_PREFIX.get(split, split)
    images = read_idx(_find(directory, prefix, "images", 3), IMAGES_MAGIC)
    labels = read_idx(_find(directory, prefix, "labels", 1), LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{directory}: {images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.astype(np.float64)
    if x.size:
        std = x.std()
        x = (x - x.mean()) / (std if std > 0 else 1.0)
    return Dataset(x[:, None, :, :], labels.astype(np.int64))
