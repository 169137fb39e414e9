"""Partition: assignment of item ids to cluster labels.

The common currency of segmentation, dynamic clustering, and evaluation.
Label -1 is reserved for masked/unlabeled items.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NULL_LABEL = -1


@dataclass
class Partition:
    items: np.ndarray   # int64 item ids
    labels: np.ndarray  # int64 cluster labels, -1 = null

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.items.shape != self.labels.shape:
            raise ValueError("items and labels must have the same length")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def n_clusters(self) -> int:
        lab = self.labels[self.labels != NULL_LABEL]
        return len(np.unique(lab))

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.items.tolist(), self.labels.tolist()))

    def clusters(self) -> dict[int, np.ndarray]:
        """Label -> array of item ids (null label excluded)."""
        out = {}
        order = np.argsort(self.labels, kind="stable")
        lab = self.labels[order]
        its = self.items[order]
        bounds = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1], True])
        for b, e in zip(bounds[:-1], bounds[1:]):
            if lab[b] != NULL_LABEL:
                out[int(lab[b])] = its[b:e]
        return out

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w") as fh:
            fh.write("item_id,cluster\n")
            for i, l in zip(self.items.tolist(), self.labels.tolist()):
                fh.write(f"{i},{l}\n")
        tmp.replace(path)

    @classmethod
    def load_csv(cls, path: str | Path) -> "Partition":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        if data.size == 0:
            return cls(items=np.empty(0, np.int64), labels=np.empty(0, np.int64))
        return cls(items=data[:, 0], labels=data[:, 1])


_RLE_MAGIC = b"PLRL"


def save_label_grid_rle(grid: np.ndarray, path: str | Path) -> None:
    """Run-length encode a (H, W) int label grid, row-major, little-endian."""
    grid = np.asarray(grid, dtype=np.int64)
    h, w = grid.shape
    flat = grid.ravel()
    change = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1]])
    lengths = np.diff(np.r_[change, len(flat)])
    values = flat[change]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_RLE_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(struct.pack("<Q", len(values)))
        fh.write(np.ascontiguousarray(lengths.astype("<u4")).tobytes())
        fh.write(np.ascontiguousarray(values.astype("<i4")).tobytes())
    tmp.replace(path)


def load_label_grid_rle(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _RLE_MAGIC:
            raise ValueError(f"{path} is not a label-grid RLE file")
        h, w = struct.unpack("<II", fh.read(8))
        (n,) = struct.unpack("<Q", fh.read(8))
        lengths = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int64)
        values = np.frombuffer(fh.read(4 * n), dtype="<i4").astype(np.int64)
    return np.repeat(values, lengths).reshape(h, w)
