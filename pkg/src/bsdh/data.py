"""Dataset containers and loaders (IDX, labeled-vector CSV, synthetic clusters)."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Items with class labels or tag sets.

    ``x`` has shape ``(n, ...)``: ``(n, 1, h, w)`` for images, ``(n, d)``
    for vectors.  ``labels`` is an integer array for single-label data or a
    list of frozensets for multi-label data.
    """

    x: np.ndarray
    labels: object
    ids: np.ndarray = None
    multi_label: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        n = self.x.shape[0]
        if self.multi_label:
            self.labels = [frozenset(s) for s in self.labels]
            if any(len(s) == 0 for s in self.labels):
                raise DataError("every multi-label item needs at least one tag")
        else:
            self.labels = np.asarray(self.labels)
        if len(self.labels) != n:
            raise DataError(f"{n} items but {len(self.labels)} labels")
        self.ids = np.arange(n, dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (n,):
            raise DataError("ids must have one entry per item")
        if len(np.unique(self.ids)) != n:
            raise DataError("item ids must be unique")

    def __len__(self):
        return self.x.shape[0]

    @property
    def item_shape(self):
        return self.x.shape[1:]

    @cached_property
    def label_index(self):
        """label (or tag) -> positions of the items carrying it, ascending."""
        index = {}
        if self.multi_label:
            for pos, tags in enumerate(self.labels):
                for t in tags:
                    index.setdefault(t, []).append(pos)
            return {k: np.asarray(v, dtype=np.int64) for k, v in index.items()}
        for lab in np.unique(self.labels):
            index[lab.item() if hasattr(lab, "item") else lab] = np.flatnonzero(self.labels == lab)
        return index

    def subset(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        labels = [self.labels[i] for i in positions] if self.multi_label else self.labels[positions]
        return Dataset(self.x[positions], labels, self.ids[positions], self.multi_label)

    def split(self, query_per_class, seed=0):
        """Deterministic (train, query) split taking ``query_per_class`` items of each class."""
        if self.multi_label:
            raise DataError("per-class split needs single-label data")
        rng = np.random.default_rng(seed)
        query = []
        for lab in sorted(self.label_index):
            members = self.label_index[lab]
            take = min(query_per_class, len(members))
            query.extend(rng.choice(members, take, replace=False).tolist())
        mask = np.zeros(len(self), dtype=bool)
        mask[query] = True
        return self.subset(np.flatnonzero(~mask)), self.subset(np.flatnonzero(mask))


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as fh:
        blob = fh.read()
    hdr = 4 + 4 * ndim
    if len(blob) < hdr:
        raise FormatError(f"{path}: truncated IDX header")
    (got,) = struct.unpack_from(">I", blob, 0)
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack_from(">" + "I" * ndim, blob, 4)
    size = int(np.prod(dims))
    if len(blob) != hdr + size:
        raise FormatError(f"{path}: expected {size} data bytes, found {len(blob) - hdr}")
    return np.frombuffer(blob, dtype=np.uint8, offset=hdr).reshape(dims)


def load_idx(images_path, labels_path, limit=None):
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1].

    Images come back as ``(n, 1, rows, cols)``.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images[:, None, :, :].astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64))


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(n, rows, cols)`` and labels as an uncompressed IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def synthetic_clusters(num_classes, per_class, dim, sigma, seed=0, radius=1.0, max_tries=10_000):
    """Gaussian blobs around class centers placed on a sphere.

    Centers are uniform on the sphere of the given radius, redrawn until all
    pairwise distances are at least ``4 * sigma``.
    """
    if sigma <= 0:
        raise DataError("sigma must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        c = rng.standard_normal((num_classes, dim))
        c *= radius / np.linalg.norm(c, axis=1, keepdims=True)
        d = np.linalg.norm(c[:, None] - c[None, :], axis=-1)
        if num_classes < 2 or d[np.triu_indices(num_classes, 1)].min() >= 4 * sigma:
            break
    else:
        raise DataError(f"could not place {num_classes} centers {4 * sigma:.3g} apart on radius {radius}")
    labels = np.repeat(np.arange(num_classes), per_class)
    x = c[labels] + sigma * rng.standard_normal((labels.size, dim))
    return Dataset(x, labels)


def load_vector_csv(path, header=False):
    """Rows ``id,label,v1,...,vd``; set ``header`` to skip a first line."""
    ids, labels, rows = [], [], []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        for lineno, row in enumerate(reader, start=2 if header else 1):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: need id,label and at least one value")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                ids.append(int(row[0]))
                labels.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    x = np.asarray(rows)
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite values")
    return Dataset(x, labels, ids)


def save_vector_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i, lab, v in zip(dataset.ids, dataset.labels, dataset.x.reshape(len(dataset), -1)):
            w.writerow([int(i), int(lab), *(repr(float(a)) for a in v)])
