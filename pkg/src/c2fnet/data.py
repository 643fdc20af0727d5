"""Dataset tree loading, image decode/resize, seeded batching, and the
synthetic red/blue generator used for desk-scale runs and tests.

Expected tree layout::

    root/{train,test,valid}/{autistic,non_autistic}/*.{png,jpg,jpeg,ppm}

Class folders map to labels 0 (autistic) and 1 (non_autistic); folder names
are matched case-insensitively. File order inside each class is lexicographic,
so a manifest is a pure function of the tree.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

SPLITS = ("train", "test", "valid")
CLASS_DIRS = ("autistic", "non_autistic")
LABEL_NAMES = ("autistic", "non_autistic")
IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".ppm"}


class DataError(Exception):
    """Dataset tree or image content problem."""


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    splits: dict[str, tuple[tuple[Path, int], ...]]

    def entries(self, split: str) -> tuple[tuple[Path, int], ...]:
        if split not in self.splits:
            raise DataError(f"unknown split: {split}")
        return self.splits[split]

    def counts(self, split: str) -> tuple[int, int]:
        labels = [label for _, label in self.entries(split)]
        return labels.count(0), labels.count(1)

    def size(self, split: str) -> int:
        return len(self.entries(split))


def load_manifest(root) -> DatasetManifest:
    """Scan the dataset tree into a manifest with stable file ordering."""
    root = Path(root)
    splits: dict[str, tuple[tuple[Path, int], ...]] = {}
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            raise DataError(f"missing split: {split}")
        entries: list[tuple[Path, int]] = []
        subdirs = {d.name.lower(): d for d in split_dir.iterdir() if d.is_dir()}
        for label, class_name in enumerate(CLASS_DIRS):
            class_dir = subdirs.get(class_name)
            if class_dir is None:
                raise DataError(f"missing class folder: {split_dir / class_name}")
            files = sorted(
                p for p in class_dir.iterdir()
                if p.is_file() and p.suffix.lower() in IMAGE_EXTS
            )
            if not files:
                raise DataError(f"empty class folder: {class_dir}")
            entries.extend((p, label) for p in files)
        splits[split] = tuple(entries)
    return DatasetManifest(root=root, splits=splits)


def resize_bilinear(chw: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a [C,H,W] float array, sampling at pixel centers."""
    c, h, w = chw.shape

    def grid(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, (src - i0).astype(np.float32)

    y0, y1, ty = grid(h, out_h)
    x0, x1, tx = grid(w, out_w)
    wy = ty[None, :, None]
    wx = tx[None, None, :]
    out = (
        chw[:, y0[:, None], x0[None, :]] * (1 - wy) * (1 - wx)
        + chw[:, y0[:, None], x1[None, :]] * (1 - wy) * wx
        + chw[:, y1[:, None], x0[None, :]] * wy * (1 - wx)
        + chw[:, y1[:, None], x1[None, :]] * wy * wx
    )
    return out.astype(np.float32)


def decode_image(data: bytes, target_size: int = 128) -> np.ndarray:
    """Decode raster bytes to a [3,S,S] float32 array in [0,1]."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DataError(f"undecodable image bytes: {e}") from e
    if img.width == 0 or img.height == 0:
        raise DataError("zero-dimension image")
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return resize_bilinear(arr.transpose(2, 0, 1), target_size, target_size)


def load_image(path, target_size: int = 128) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image file {path}: {e}") from e
    return decode_image(data, target_size)


@dataclass
class Batch:
    images: np.ndarray      # [N,3,S,S] float32 in [0,1]
    labels: list[int]
    indices: list[int]      # positions in the manifest entry list


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded order for one epoch; fully determined by (seed, epoch)."""
    rng = np.random.Generator(np.random.PCG64(seed ^ epoch))
    return rng.permutation(n)


def _decode_cached(path: Path, img_size: int, cache: dict | None) -> np.ndarray:
    if cache is None:
        return load_image(path, img_size)
    key = (str(path), img_size)
    img = cache.get(key)
    if img is None:
        img = cache[key] = load_image(path, img_size)
    return img


def batches(manifest: DatasetManifest, split: str, batch_size: int, seed: int = 0,
            shuffle: bool = False, epoch: int = 0, img_size: int = 128,
            cache: dict | None = None):
    """Yield Batch objects covering the split; the final short batch is kept."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    entries = manifest.entries(split)
    n = len(entries)
    order = epoch_permutation(n, seed, epoch) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        images = np.stack([_decode_cached(entries[i][0], img_size, cache) for i in idx])
        yield Batch(
            images=images,
            labels=[entries[i][1] for i in idx],
            indices=[int(i) for i in idx],
        )


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

# class 0 is red-dominant, class 1 blue-dominant; the 0.24 channel-mean gap
# with +-0.28 pixel noise keeps the task learnable for adaptive small-step
# optimizers while leaving large-step ones visibly unstable
_CLASS_BASE = (
    (0.62, 0.35, 0.38),
    (0.38, 0.35, 0.62),
)
_NOISE = 0.28


def _synthetic_image(rng: np.random.Generator, size: int, label: int) -> np.ndarray:
    base = np.array(_CLASS_BASE[label], dtype=np.float64)[:, None, None]
    img = base + rng.uniform(-_NOISE, _NOISE, size=(3, size, size))
    img = np.clip(img, 0.0, 1.0)
    return np.round(img * 255.0).astype(np.uint8)


def _write_ppm(path: Path, chw_u8: np.ndarray) -> None:
    c, h, w = chw_u8.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    try:
        path.write_bytes(header + chw_u8.transpose(1, 2, 0).tobytes())
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def generate_synthetic(n_per_class: int, size: int, seed: int, out_root) -> Path:
    """Write a small deterministic dataset tree; returns its root path.

    train gets n_per_class images per class, test and valid get
    max(2, n_per_class // 4) each.
    """
    if n_per_class < 1:
        raise DataError(f"n_per_class must be >= 1, got {n_per_class}")
    out_root = Path(out_root)
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = {
        "train": n_per_class,
        "test": max(2, n_per_class // 4),
        "valid": max(2, n_per_class // 4),
    }
    for split in SPLITS:
        for label, class_name in enumerate(CLASS_DIRS):
            class_dir = out_root / split / class_name
            try:
                class_dir.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise DataError(f"cannot create {class_dir}: {e}") from e
            for i in range(counts[split]):
                _write_ppm(class_dir / f"img_{i:04d}.ppm", _synthetic_image(rng, size, label))
    return out_root
