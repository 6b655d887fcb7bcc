"""Loading labeled image corpora, class statistics, splits and feature files."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

LABELS = (0, 1)


class DataError(ValueError):
    """Raised for malformed corpora, splits or feature files."""


@dataclass
class LabeledSample:
    image: np.ndarray  # (C, H, W) float64 in [0, 1]
    label: int
    origin: str = "real"  # "real" | "synthetic"
    source_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if self.origin not in ("real", "synthetic"):
            raise DataError(f"unknown origin {self.origin!r}")
        if self.origin == "synthetic" and not self.source_id:
            raise DataError("synthetic samples need a source_id")
        if self.image.ndim != 3:
            raise DataError(f"image must be C x H x W, got shape {self.image.shape}")


@dataclass
class Dataset:
    samples: list[LabeledSample]

    @property
    def class_counts(self) -> dict[int, int]:
        counts = Counter(s.label for s in self.samples)
        return {k: counts.get(k, 0) for k in LABELS}

    def __len__(self):
        return len(self.samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into an (N, C, H, W) image array and an (N,) label array."""
        if not self.samples:
            raise DataError("dataset is empty")
        x = np.stack([s.image for s in self.samples]).astype(np.float64)
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        return x, y


def load_image(path, target_size=(64, 64)) -> np.ndarray:
    """Decode one image as grayscale replicated over 3 channels, resized and scaled to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            h, w = target_size
            if im.size != (w, h):
                im = im.resize((w, h), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return np.repeat(arr[None], 3, axis=0)


def save_image(path, image: np.ndarray) -> None:
    """Write the first channel of a (C, H, W) image in [0, 1] as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(image)[0], 0.0, 1.0)
    Image.fromarray(np.round(arr * 255).astype(np.uint8), mode="L").save(path)


def load_dataset(root, target_size=(64, 64)) -> Dataset:
    """Load ``root/<label>/*.png`` for labels 0 and 1, ordered by path."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data root {root} is not a directory")
    samples = []
    for label in LABELS:
        class_dir = root / str(label)
        files = sorted(class_dir.glob("*.png")) if class_dir.is_dir() else []
        if not files:
            raise DataError(f"class {label} has no samples")
        for f in files:
            samples.append(
                LabeledSample(
                    image=load_image(f, target_size),
                    label=label,
                    origin="real",
                    source_id=f"{label}/{f.name}",
                    meta={"path": str(f.resolve())},
                )
            )
    log.info("loaded %d images from %s", len(samples), root)
    return Dataset(samples)


def load_manifest(path, target_size=(64, 64)) -> Dataset:
    """Load images listed in a ``path,label`` CSV manifest."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            f = Path(row["path"])
            label = int(row["label"])
            samples.append(
                LabeledSample(load_image(f, target_size), label, "real", f"{label}/{f.name}", {"path": str(f)})
            )
    return Dataset(samples)


def write_manifest(path, d: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label"])
        for s in d.samples:
            if "path" not in s.meta:
                raise DataError(f"sample {s.source_id} has no file path")
            w.writerow([s.meta["path"], s.label])


def class_distribution(d: Dataset) -> tuple[int, int, float, int]:
    """Return ``(n_maj, n_min, n_maj / n_min, minority_label)``.

    Ties name label 1 as the minority, matching the positive-class convention.
    """
    counts = d.class_counts
    for label, n in counts.items():
        if n == 0:
            raise DataError(f"class {label} has no samples")
    minority = 0 if counts[0] < counts[1] else 1
    n_min = counts[minority]
    n_maj = counts[1 - minority]
    return n_maj, n_min, n_maj / n_min, minority


def stratified_indices(labels, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    """Per-class train/val/test index arrays, each sorted ascending."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    parts = [[], [], []]
    for label in LABELS:
        idx = np.flatnonzero(labels == label)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        for name, cnt in (("train", n_train), ("val", n_val), ("test", n - n_train - n_val)):
            if cnt <= 0:
                raise DataError(f"{name} split receives no samples of class {label}")
        parts[0].extend(idx[:n_train])
        parts[1].extend(idx[n_train : n_train + n_val])
        parts[2].extend(idx[n_train + n_val :])
    return tuple(np.sort(np.array(p, dtype=np.int64)) for p in parts)


def stratified_split(d: Dataset, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    """Split per class into train/val/test partitions, preserving sample order."""
    parts = stratified_indices([s.label for s in d.samples], fractions, seed)
    return tuple(Dataset([d.samples[i] for i in p]) for p in parts)


def export_features(path, matrix, labels) -> None:
    """Write an N x D feature matrix as CSV with a ``D=<dim>,N=<rows>`` header line."""
    matrix = np.asarray(matrix, dtype=np.float64)
    labels = np.asarray(labels)
    if matrix.ndim != 2:
        raise DataError("feature matrix must be 2-D")
    if len(labels) != matrix.shape[0]:
        raise DataError("labels and matrix rows differ in length")
    n, dim = matrix.shape
    bad = ~np.isfinite(matrix).all(axis=1)
    if bad.any():
        raise DataError(f"row {int(np.flatnonzero(bad)[0]) + 1}: non-finite feature value")
    with open(path, "w", newline="") as fh:
        fh.write(f"D={dim},N={n}\n")
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f_{j}" for j in range(dim)])
        for lab, row in zip(labels, matrix):
            # repr round-trips doubles exactly
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def _parse_header(line: str) -> tuple[int, int]:
    try:
        fields = dict(part.split("=", 1) for part in line.strip().split(","))
        return int(fields["D"]), int(fields["N"])
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad feature header {line.strip()!r}") from exc


def is_feature_file(path) -> bool:
    with open(path) as fh:
        return fh.readline().startswith("D=")


def import_features(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a feature CSV written by :func:`export_features`."""
    with open(path, newline="") as fh:
        dim, n = _parse_header(fh.readline())
        reader = csv.reader(fh)
        next(reader, None)  # column names
        rows, labels = [], []
        for i, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) - 1 != dim:
                raise DataError(f"row {i}: expected {dim} features, got {len(rec) - 1}")
            vals = [float(v) for v in rec[1:]]
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"row {i}: non-finite feature value")
            labels.append(int(rec[0]))
            rows.append(vals)
    if len(rows) != n:
        raise DataError(f"header declares N={n} rows, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(n, dim), np.array(labels, dtype=np.int64)
