"""Datasets: a synthetic 25-component Gaussian mixture and an IDX loader.

The toy generator places 25 isotropic Gaussians (covariance 0.1 * I) on
the 5x5 grid {-4, -2, 0, 2, 4}^2 and draws 200 points from each, so
components sit ~6 standard deviations apart and are visually separable.
Image data loads from the standard big-endian IDX containers with
class-subset filtering. Loading and generation stay single-threaded and
fully seeded; the resulting datasets are immutable carriers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError
from .ioutil import atomic_write_text, fmt_float
from .rng import RunRng

log = logging.getLogger(__name__)

GMM_GRID = (-4.0, -2.0, 0.0, 2.0, 4.0)
GMM_VARIANCE = 0.1
GMM_SAMPLES_PER_COMPONENT = 200

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


@dataclass
class LabeledDataset:
    """Rows of features with an integer label each.

    ``centers`` holds the true component means for synthetic data and is
    absent for image data.
    """

    x: np.ndarray
    labels: np.ndarray
    centers: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.x.ndim != 2 or self.labels.ndim != 1 or self.x.shape[0] != self.labels.shape[0]:
            raise ContractError("dataset: x must be (N, d) with one label per row")
        if self.centers is not None:
            self.centers = np.asarray(self.centers, dtype=np.float64)
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.centers.shape[0]):
                raise ContractError("dataset: labels must index into centers")

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.x[idx], self.labels[idx], self.centers)


def gen_gmm(seed: int) -> LabeledDataset:
    """Generate the 25-component mixture, 200 samples per component.

    Deterministic given the seed: components are visited in grid
    row-major order and each consumes exactly 200 x 2 normal draws.
    """
    rng = RunRng(seed)
    centers = np.array([(gx, gy) for gy in GMM_GRID for gx in GMM_GRID])
    xs = []
    labels = []
    std = np.sqrt(GMM_VARIANCE)
    for c, center in enumerate(centers):
        pts = center + std * rng.normal((GMM_SAMPLES_PER_COMPONENT, 2))
        xs.append(pts)
        labels.append(np.full(GMM_SAMPLES_PER_COMPONENT, c, dtype=np.intp))
    return LabeledDataset(np.vstack(xs), np.concatenate(labels), centers)


def save_gmm_csv(ds: LabeledDataset, csv_path, meta_path, seed: int) -> None:
    """Persist the toy dataset as CSV plus a JSON sidecar with the truth."""
    if ds.centers is None:
        raise ContractError("save_gmm_csv: dataset has no centers")
    d = ds.x.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [f"x{i}" for i in range(d)] + ["label"] + [f"center_x{i}" for i in range(d)]
    w.writerow(header)
    for row, lab in zip(ds.x, ds.labels):
        c = ds.centers[lab]
        w.writerow([fmt_float(v) for v in row] + [int(lab)] + [fmt_float(v) for v in c])
    atomic_write_text(csv_path, buf.getvalue())
    meta = {
        "seed": int(seed),
        "covariance": GMM_VARIANCE,
        "samples_per_component": GMM_SAMPLES_PER_COMPONENT,
        "centers": [[float(v) for v in c] for c in ds.centers],
    }
    atomic_write_text(meta_path, json.dumps(meta, indent=2) + "\n")


def load_gmm_csv(csv_path, meta_path=None) -> LabeledDataset:
    """Read a dataset written by :func:`save_gmm_csv`."""
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "label" not in header:
            raise FormatError(f"{csv_path}: missing header with a 'label' column")
        lab_col = header.index("label")
        x_cols = [i for i, name in enumerate(header) if name.startswith("x")]
        rows, labels = [], []
        for rec in reader:
            rows.append([float(rec[i]) for i in x_cols])
            labels.append(int(rec[lab_col]))
    centers = None
    if meta_path is not None:
        with open(meta_path) as fh:
            meta = json.load(fh)
        centers = np.asarray(meta["centers"], dtype=np.float64)
    return LabeledDataset(np.asarray(rows), np.asarray(labels, dtype=np.intp), centers)


# --- IDX container -------------------------------------------------------------

def read_idx(path) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IDX_MAGIC_IMAGES, IDX_MAGIC_LABELS):
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise OSError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims))
    if len(raw) - header_len < count:
        raise OSError(f"{path}: truncated IDX payload ({len(raw) - header_len} of {count} bytes)")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_len)
    return data.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte array in IDX layout (bit-exact round-trip)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if array.ndim == 1:
        magic = IDX_MAGIC_LABELS
    elif array.ndim == 3:
        magic = IDX_MAGIC_IMAGES
    else:
        raise ContractError(f"write_idx: only 1-D labels or 3-D images, got ndim={array.ndim}")
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", s) for s in array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.tobytes())


def load_mnist_subset(images_path, labels_path, keep_digits, max_n: int | None = 18000) -> LabeledDataset:
    """Load IDX image/label files filtered to a digit subset.

    Pixels are scaled to [0, 1]; retained rows keep file order and are
    truncated to ``max_n``. Labels are re-indexed densely following the
    sorted digit list (e.g. {1, 3, 4} -> 0, 1, 2).
    """
    keep = sorted(set(int(v) for v in keep_digits))
    if not keep:
        raise ContractError("load_mnist_subset: keep_digits is empty")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected a 3-D image file")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected a 1-D label file")
    if images.shape[0] != labels.shape[0]:
        raise FormatError("image and label files disagree on the number of rows")
    mask = np.isin(labels, keep)
    flat = images.reshape(images.shape[0], -1)[mask].astype(np.float64) / 255.0
    kept = labels[mask]
    if max_n is not None:
        if flat.shape[0] < max_n:
            log.warning("requested %d rows but only %d match the digit filter", max_n, flat.shape[0])
        flat = flat[:max_n]
        kept = kept[:max_n]
    remap = {digit: i for i, digit in enumerate(keep)}
    dense = np.asarray([remap[int(v)] for v in kept], dtype=np.intp)
    return LabeledDataset(flat, dense, None)


# --- splitting and batching ----------------------------------------------------

def split(ds: LabeledDataset, fractions, seed: int):
    """Stratified two-way split: seeded shuffle within each class, then slice."""
    if len(fractions) != 2:
        raise ContractError("split: exactly two fractions are supported")
    f0, f1 = float(fractions[0]), float(fractions[1])
    if abs(f0 + f1 - 1.0) > 1e-9 or f0 <= 0 or f1 <= 0:
        raise ContractError("split: fractions must be positive and sum to 1")
    rng = RunRng(seed)
    first, second = [], []
    for lab in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == lab)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(f0 * idx.size))
        first.append(idx[:cut])
        second.append(idx[cut:])
    a = np.concatenate(first)
    b = np.concatenate(second)
    if a.size == 0 or b.size == 0:
        raise ContractError("split: a part came out empty")
    return ds.take(np.sort(a)), ds.take(np.sort(b))


def batches(ds: LabeledDataset, batch_size: int, seed: int, epoch: int):
    """Index slices for one epoch: seeded shuffle, final short batch kept."""
    if batch_size < 1:
        raise ContractError("batches: batch_size must be >= 1")
    n = len(ds)
    order = RunRng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
