"""IDX dataset loading, stratified splitting, and sequential-task construction.

All image data is carried as N x H x W x C float arrays with values in
[0, 1]; labels are integer class ids. IDX files may be gzip-compressed
(sniffed from the magic bytes).
"""

from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConsistencyError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class LabeledDataset:
    """Images in [0, 1] with integer labels.

    ``num_classes`` is the size of the label alphabet, which a class-subset
    inherits from its parent so downstream readout shapes stay stable.
    """

    images: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    name: str = ""
    num_classes: int = field(default=0)

    def __post_init__(self):
        if self.num_classes <= 0:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        self.validate()

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def validate(self) -> None:
        if self.images.ndim != 4:
            raise ConsistencyError(f"images must be N x H x W x C, got shape {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConsistencyError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if len(self) and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ConsistencyError("pixel values outside [0, 1]")
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConsistencyError("labels outside [0, num_classes)")

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == GZIP_MAGIC:
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path) -> np.ndarray:
    """Parse one IDX file (images or labels) into a uint8 array."""
    with _open_maybe_gzip(path) as fh:
        header = fh.read(4)
        if len(header) < 4:
            raise FormatError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">i", header)
        if magic == IMAGE_MAGIC:
            ndim = 3
        elif magic == LABEL_MAGIC:
            ndim = 1
        else:
            raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
        dims_raw = fh.read(4 * ndim)
        if len(dims_raw) < 4 * ndim:
            raise FormatError(f"{path}: truncated IDX dimensions")
        dims = struct.unpack(f">{ndim}i", dims_raw)
        if any(d <= 0 for d in dims):
            raise FormatError(f"{path}: non-positive IDX dimension {dims}")
        payload = fh.read()
        expected = int(np.prod(dims))
        if len(payload) != expected:
            raise FormatError(
                f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
            )
        return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, name: str = "", num_classes: int = 0) -> LabeledDataset:
    """Load an IDX image/label file pair into a normalized dataset.

    Pixels are divided by 255 into [0, 1]; images gain a trailing channel
    axis of size 1. Raises FormatError for malformed files and
    ConsistencyError when the two files disagree on the sample count.
    """
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected an image file (magic 0x{IMAGE_MAGIC:08x})")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected a label file (magic 0x{LABEL_MAGIC:08x})")
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    data = images.astype(np.float64) / 255.0
    return LabeledDataset(
        images=data[..., np.newaxis],
        labels=labels.astype(np.int64),
        name=name,
        num_classes=num_classes,
    )


def save_idx(ds: LabeledDataset, images_path, labels_path) -> None:
    """Write a dataset back to raw IDX files (de-normalized to uint8)."""
    if ds.images.shape[3] != 1:
        raise ConsistencyError("IDX image files hold single-channel data")
    n, h, w, _ = ds.images.shape
    pixels = np.rint(ds.images[..., 0] * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGE_MAGIC, n, h, w))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", LABEL_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def split_train_test(ds: LabeledDataset, ratio: float, seed: int = 0):
    """Stratified split: per-class counts deviate from ``ratio`` by <= 1.

    Deterministic under a fixed seed; returns (train, test).
    """
    if not 0.0 < ratio < 1.0:
        raise ConsistencyError(f"split ratio must lie in (0, 1), got {ratio}")
    if len(ds) == 0:
        raise ConsistencyError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) == 0:
            continue
        idx = rng.permutation(idx)
        n_train = int(round(ratio * len(idx)))
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    mk = lambda sel, tag: LabeledDataset(
        images=ds.images[sel],
        labels=ds.labels[sel],
        name=f"{ds.name}-{tag}" if ds.name else tag,
        num_classes=ds.num_classes,
    )
    return mk(train_idx, "train"), mk(test_idx, "test")


def subset_by_classes(ds: LabeledDataset, classes) -> LabeledDataset:
    """Order-preserving restriction to samples whose label is in ``classes``."""
    classes = set(int(c) for c in classes)
    if not classes:
        raise ConsistencyError("class set must be nonempty")
    mask = np.isin(ds.labels, sorted(classes))
    if not mask.any():
        raise ConsistencyError(f"no samples with labels in {sorted(classes)}")
    return LabeledDataset(
        images=ds.images[mask],
        labels=ds.labels[mask],
        name=ds.name,
        num_classes=ds.num_classes,
    )


def stratified_subset(ds: LabeledDataset, n: int, seed: int = 0) -> LabeledDataset:
    """Seeded subset of ~n samples with per-class proportions preserved."""
    if n >= len(ds):
        return ds
    rng = np.random.default_rng(seed)
    frac = n / len(ds)
    keep = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) == 0:
            continue
        k = max(1, int(round(frac * len(idx))))
        keep.append(rng.permutation(idx)[:k])
    keep = np.sort(np.concatenate(keep))
    return LabeledDataset(
        images=ds.images[keep], labels=ds.labels[keep], name=ds.name, num_classes=ds.num_classes
    )


def merge_datasets(a: LabeledDataset, b: LabeledDataset, name: str = "") -> LabeledDataset:
    """Concatenate two datasets over the same label alphabet."""
    if a.image_shape != b.image_shape:
        raise ConsistencyError(f"image shapes differ: {a.image_shape} vs {b.image_shape}")
    return LabeledDataset(
        images=np.concatenate([a.images, b.images], axis=0),
        labels=np.concatenate([a.labels, b.labels], axis=0),
        name=name or a.name,
        num_classes=max(a.num_classes, b.num_classes),
    )


@dataclass(frozen=True)
class Slt:
    """An ordered partition of class ids into disjoint sub-tasks."""

    name: str
    sub_tasks: tuple[frozenset, ...]

    @property
    def all_classes(self) -> frozenset:
        out = frozenset()
        for s in self.sub_tasks:
            out |= s
        return out


def _slt(name, *groups):
    return Slt(name=name, sub_tasks=tuple(frozenset(g) for g in groups))


SLT_TABLE = {
    "D10": _slt("D10", range(10)),
    "D9-1a": _slt("D9-1a", range(9), {9}),
    "D9-1b": _slt("D9-1b", {0, 1, 2, 4, 5, 6, 7, 8, 9}, {3}),
    "D5-5a": _slt("D5-5a", {0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}),
    "D5-5b": _slt("D5-5b", {0, 1, 2, 6, 7}, {3, 4, 5, 8, 9}),
    "D3-3-3-1": _slt("D3-3-3-1", {0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {9}),
    "D2-2-2-2-2a": _slt("D2-2-2-2-2a", {0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}),
    "D2-2-2-2-2b": _slt("D2-2-2-2-2b", {1, 7}, {0, 2}, {6, 8}, {4, 5}, {3, 9}),
    "D1x10a": _slt("D1x10a", *({d} for d in range(10))),
    "D1x10b": _slt("D1x10b", {7}, {1}, {2}, {0}, {6}, {8}, {4}, {5}, {9}, {3}),
}


def _normalize_slt_name(name: str) -> str:
    flat = name.strip().replace("×", "x").replace("…", "...")
    if flat in SLT_TABLE:
        return flat
    # long or elided forms like D1-1-1-1-1-1-1-1-1-1a and D1-...-1b
    m = re.fullmatch(r"D1(?:[-.]+1?)*([ab])", flat)
    if m:
        return "D1x10" + m.group(1)
    return flat


def build_slt(name: str) -> Slt:
    """Look up a named sequential learning task (class partition)."""
    key = _normalize_slt_name(name)
    try:
        return SLT_TABLE[key]
    except KeyError:
        raise KeyError(
            f"unknown SLT {name!r}; known: {', '.join(sorted(SLT_TABLE))}"
        ) from None


def random_class_subset(ds: LabeledDataset, k: int, seed: int = 0) -> LabeledDataset:
    """Keep k randomly chosen classes and relabel them to 0..k-1.

    Used for corpora that ship more classes than the task needs.
    """
    rng = np.random.default_rng(seed)
    present = np.unique(ds.labels)
    if k > len(present):
        raise ConsistencyError(f"asked for {k} classes, dataset has {len(present)}")
    chosen = np.sort(rng.choice(present, size=k, replace=False))
    sub = subset_by_classes(ds, chosen)
    remap = {int(c): i for i, c in enumerate(chosen)}
    labels = np.array([remap[int(l)] for l in sub.labels], dtype=np.int64)
    return LabeledDataset(images=sub.images, labels=labels, name=ds.name, num_classes=k)


def synthetic_dataset(
    n: int = 1000, hw: int = 28, num_classes: int = 10, seed: int = 0, name: str = "synthetic"
) -> LabeledDataset:
    """Class-conditional blob images, a stand-in where real corpora are absent.

    Each class is a fixed pair of Gaussian bumps at class-specific positions
    plus pixel noise, so the classes are learnable but not trivial.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    proto = np.zeros((num_classes, hw, hw))
    anchor = np.random.default_rng(12345)  # class geometry fixed across seeds
    for c in range(num_classes):
        for _ in range(2):
            cy, cx = anchor.uniform(hw * 0.2, hw * 0.8, size=2)
            s = anchor.uniform(hw * 0.08, hw * 0.16)
            proto[c] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        proto[c] /= proto[c].max()
    labels = rng.integers(0, num_classes, size=n)
    images = proto[labels] * rng.uniform(0.7, 1.0, size=(n, 1, 1))
    images = images + rng.normal(0.0, 0.08, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    return LabeledDataset(
        images=images[..., np.newaxis],
        labels=labels.astype(np.int64),
        name=name,
        num_classes=num_classes,
    )


def load_mnist_style(
    data_dir,
    split: str = "official",
    ratio: float = 0.9,
    seed: int = 0,
    prefix_train=("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    prefix_test=("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    name: str = "mnist",
):
    """Load an MNIST-layout directory into (train, test).

    ``split="official"`` keeps the archive's own train/test division;
    ``split="pooled"`` pools both archives and applies a stratified
    ``ratio`` split (seeded).
    """
    from pathlib import Path

    d = Path(data_dir)

    def find(stem):
        for cand in (d / stem, d / (stem + ".gz")):
            if cand.exists():
                return cand
        raise FileNotFoundError(f"missing {stem}[.gz] under {d}")

    train = load_idx(find(prefix_train[0]), find(prefix_train[1]), name=f"{name}-train")
    test = load_idx(find(prefix_test[0]), find(prefix_test[1]), name=f"{name}-test")
    num_classes = max(train.num_classes, test.num_classes)
    train = replace(train, num_classes=num_classes)
    test = replace(test, num_classes=num_classes)
    if split == "official":
        return train, test
    if split == "pooled":
        pooled = merge_datasets(train, test, name=name)
        return split_train_test(pooled, ratio, seed=seed)
    raise ConsistencyError(f"unknown split mode {split!r}")
