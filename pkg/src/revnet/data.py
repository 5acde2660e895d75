"""Dataset ingestion and preparation.

Covers the two classic binary formats (big-endian IDX for MNIST-style
files, CIFAR record files of label byte(s) + raw pixel bytes), channel
normalization, crop/flip augmentation, and a class-imbalance composer
that subsamples a source dataset to a per-class count profile. A small
synthetic seven-segment digit generator provides a dependency-free
stand-in dataset for desk-scale runs and tests.

Loaders are pure functions of the file bytes. All randomness comes in
through explicit numpy Generators.
"""

import gzip
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, ConsistencyError, DataError, DomainError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    images: np.ndarray  # [n, C, H, W] float32, [0,1] before normalization
    labels: np.ndarray  # [n] int64
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise FormatError(f"images must be [n,C,H,W], got {self.images.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise ConsistencyError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConsistencyError(f"labels outside [0,{self.class_count})")

    def __len__(self):
        return self.images.shape[0]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)

    def take(self, indices):
        return LabeledDataset(self.images[indices], self.labels[indices], self.class_count)


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        rest = fh.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw, path, magic_want, ndim):
    need = 4 * (1 + ndim)
    if len(raw) < need:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    fields = struct.unpack(f">{1 + ndim}I", raw[:need])
    if fields[0] != magic_want:
        raise FormatError(f"{path}: bad magic 0x{fields[0]:08x}, want 0x{magic_want:08x}")
    return fields[1:], need


def load_idx_images(path):
    raw = _read_bytes(path)
    (n, h, w), off = _idx_header(raw, path, IDX_IMAGES_MAGIC, 3)
    need = off + n * h * w
    if len(raw) < need:
        raise FormatError(f"{path}: truncated at byte {len(raw)}, want {need}")
    pix = np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=off)
    return (pix.reshape(n, 1, h, w).astype(np.float32) / 255.0)


def load_idx_labels(path):
    raw = _read_bytes(path)
    (n,), off = _idx_header(raw, path, IDX_LABELS_MAGIC, 1)
    need = off + n
    if len(raw) < need:
        raise FormatError(f"{path}: truncated at byte {len(raw)}, want {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).astype(np.int64)


def load_mnist_idx(images_path, labels_path, class_count=10):
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} has {images.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels"
        )
    return LabeledDataset(images, labels, class_count)


def write_idx_images(path, images_u8):
    """images_u8: [n, H, W] uint8."""
    n, h, w = images_u8.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def mnist_paths(root):
    """Locate the four standard MNIST files under root (plain or .gz).
    Raises DataError naming whatever is missing."""
    found = {}
    missing = []
    for key, names in MNIST_FILES.items():
        for name in names:
            for cand in (name, name + ".gz"):
                p = os.path.join(root, cand)
                if os.path.exists(p):
                    found[key] = p
                    break
            if key in found:
                break
        if key not in found:
            missing.append(names[0])
    if missing:
        raise DataError(f"MNIST files not found under {root}: {', '.join(missing)}")
    return found


def load_mnist_dir(root):
    paths = mnist_paths(root)
    train = load_mnist_idx(paths["train_images"], paths["train_labels"])
    test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    return train, test


# -- CIFAR-style records ----------------------------------------------------


def load_cifar_binary(paths, coarse=False, shape=(3, 32, 32), class_count=None):
    """Concatenate CIFAR batch files. CIFAR-10 records are 1 label byte +
    3072 pixels; CIFAR-100 records carry a coarse and a fine label byte."""
    # CIFAR-100 files carry a coarse byte then a fine byte per record
    two_byte = class_count in (20, 100)
    label_bytes = 2 if two_byte else 1
    c, h, w = shape
    rec = label_bytes + c * h * w
    all_images, all_labels = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) % rec != 0:
            raise FormatError(
                f"{path}: {len(raw)} bytes is not a multiple of the {rec}-byte record"
            )
        n = len(raw) // rec
        block = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
        if two_byte:
            labels = block[:, 0] if coarse else block[:, 1]
        else:
            labels = block[:, 0]
        all_labels.append(labels.astype(np.int64))
        all_images.append(
            block[:, label_bytes:].reshape(n, c, h, w).astype(np.float32) / 255.0
        )
    images = np.concatenate(all_images)
    labels = np.concatenate(all_labels)
    if class_count is None:
        class_count = 10
    return LabeledDataset(images, labels, class_count)


def save_records(path, ds):
    """Write a dataset as CIFAR-style records: 1 label byte + u8 pixels."""
    if ds.class_count > 256:
        raise ConfigError("record layout holds one label byte; class_count > 256")
    n, c, h, w = ds.images.shape
    pix = np.clip(np.rint(ds.images * 255.0), 0, 255).astype(np.uint8).reshape(n, -1)
    lab = ds.labels.astype(np.uint8).reshape(n, 1)
    with open(path, "wb") as fh:
        fh.write(np.concatenate([lab, pix], axis=1).tobytes())


def save_composed(out_dir, ds, profile=None, source_note=""):
    """Records plus a sidecar manifest describing geometry and provenance."""
    os.makedirs(out_dir, exist_ok=True)
    rec_path = os.path.join(out_dir, "records.bin")
    save_records(rec_path, ds)
    n, c, h, w = ds.images.shape
    manifest = {
        "n": n, "channels": c, "height": h, "width": w,
        "class_count": ds.class_count,
        "per_class": [int(v) for v in ds.class_counts()],
        "source": source_note,
    }
    if profile is not None:
        manifest["profile_counts"] = [int(v) for v in profile.counts]
        manifest["seed"] = profile.seed
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return rec_path


def load_composed(out_dir):
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    shape = (manifest["channels"], manifest["height"], manifest["width"])
    ds = load_cifar_binary(
        [os.path.join(out_dir, "records.bin")],
        shape=shape, class_count=manifest["class_count"],
    )
    if len(ds) != manifest["n"]:
        raise ConsistencyError(
            f"{out_dir}: manifest says {manifest['n']} records, file has {len(ds)}"
        )
    return ds


# -- preparation ------------------------------------------------------------


def normalize_channelwise(ds, stats=None, mode="divide_mean"):
    """Channel normalization; stats from the training set are reused for
    the test set. mode 'divide_mean' divides each channel by its mean;
    'standardize' applies (x - mean) / std."""
    if mode not in ("divide_mean", "standardize"):
        raise ConfigError(f"unknown normalization mode {mode!r}")
    if stats is None:
        mean = ds.images.mean(axis=(0, 2, 3))
        std = ds.images.std(axis=(0, 2, 3))
        stats = (mean, std)
    mean, std = stats
    if mode == "divide_mean":
        if np.any(mean <= 0):
            raise DomainError(f"channel mean must be positive, got {mean}")
        images = ds.images / mean.reshape(1, -1, 1, 1)
    else:
        if np.any(std <= 0):
            raise DomainError(f"channel std must be positive, got {std}")
        images = (ds.images - mean.reshape(1, -1, 1, 1)) / std.reshape(1, -1, 1, 1)
    out = LabeledDataset(images.astype(np.float32), ds.labels, ds.class_count)
    return out, stats


def augment(batch, rng, pad=4, flip_p=0.5):
    """Per image: zero-pad by `pad`, crop back to the original size at a
    uniform offset, then flip horizontally with probability flip_p. Draws
    two offsets and one coin per image in batch order."""
    b, c, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(batch)
    for i in range(b):
        dy, dx = rng.integers(0, 2 * pad + 1, size=2)
        img = padded[i, :, dy:dy + h, dx:dx + w]
        if rng.random() < flip_p:
            img = img[:, :, ::-1]
        out[i] = img
    return out


@dataclass
class ImbalanceProfile:
    class_count: int
    counts: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.class_count,):
            raise ConfigError(
                f"profile needs {self.class_count} counts, got {self.counts.shape}"
            )
        if self.counts.min() < 2:
            raise ConfigError("profile counts must be >= 2 per class")

    @classmethod
    def parse(cls, text, class_count, seed=0):
        """Accepts '5000,5000,50,...' or the compact '5000x5,50x5' form."""
        counts = []
        for part in str(text).split(","):
            part = part.strip()
            if "x" in part:
                value, reps = part.split("x")
                counts.extend([int(value)] * int(reps))
            elif part:
                counts.append(int(part))
        if len(counts) != class_count:
            raise ConfigError(
                f"profile {text!r} lists {len(counts)} classes, need {class_count}"
            )
        return cls(class_count, np.asarray(counts), seed)


def compose_imbalanced(source, profile):
    """Subsample source per class to the profile counts, without
    replacement, deterministically under profile.seed. Source record
    order is preserved, so a profile equal to the source counts returns
    the dataset unchanged."""
    if profile.class_count != source.class_count:
        raise ConfigError(
            f"profile has {profile.class_count} classes, source {source.class_count}"
        )
    have = source.class_counts()
    short = [c for c in range(source.class_count) if profile.counts[c] > have[c]]
    if short:
        detail = ", ".join(f"class {c}: want {profile.counts[c]}, have {have[c]}" for c in short)
        raise CapacityError(f"profile infeasible ({detail})")
    rng = np.random.default_rng(np.random.SeedSequence(profile.seed))
    keep = []
    for c in range(source.class_count):
        idx = np.flatnonzero(source.labels == c)
        chosen = rng.choice(idx, size=int(profile.counts[c]), replace=False)
        keep.append(np.sort(chosen))
    order = np.sort(np.concatenate(keep))
    return source.take(order)


# -- synthetic digits -------------------------------------------------------

# seven-segment encoding: segments A (top), B (upper right), C (lower
# right), D (bottom), E (lower left), F (upper left), G (middle)
_SEGMENTS = {
    0: "ABCDEF", 1: "BC", 2: "ABGED", 3: "ABGCD", 4: "FGBC",
    5: "AFGCD", 6: "AFGEDC", 7: "ABC", 8: "ABCDEFG", 9: "ABCDFG",
}


def _digit_template(d, size=28):
    img = np.zeros((size, size), dtype=np.float32)
    r0, rm, rb = 5, size // 2 - 1, size - 7
    c0, c1 = 9, size - 9
    t = 2
    spans = {
        "A": (slice(r0, r0 + t), slice(c0, c1 + 1)),
        "G": (slice(rm, rm + t), slice(c0, c1 + 1)),
        "D": (slice(rb - t + 1, rb + 1), slice(c0, c1 + 1)),
        "F": (slice(r0, rm + t), slice(c0, c0 + t)),
        "B": (slice(r0, rm + t), slice(c1 - t + 1, c1 + 1)),
        "E": (slice(rm, rb + 1), slice(c0, c0 + t)),
        "C": (slice(rm, rb + 1), slice(c1 - t + 1, c1 + 1)),
    }
    for seg in _SEGMENTS[d]:
        img[spans[seg]] = 1.0
    return img


def synthetic_digits(n_per_class, seed=0, size=28, noise=0.1, jitter=2):
    """Seven-segment digit images with per-sample jitter and pixel noise.
    Returns a LabeledDataset with 10 classes, images [n,1,size,size]."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    templates = [_digit_template(d, size) for d in range(10)]
    n = 10 * n_per_class
    images = np.zeros((n, 1, size, size), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    i = 0
    for d in range(10):
        for _ in range(n_per_class):
            img = templates[d]
            if jitter:
                dy, dx = rng.integers(-jitter, jitter + 1, size=2)
                img = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
            if noise:
                img = img + rng.normal(0.0, noise, size=img.shape).astype(np.float32)
            images[i, 0] = np.clip(img, 0.0, 1.0)
            labels[i] = d
            i += 1
    return LabeledDataset(images, labels, 10)
