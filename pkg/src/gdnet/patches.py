"""3×r×r patch assembly around pixels and minibatch iteration."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError
from .preclassification import SampleSet
from .sar_data import SarImagePair


def mirror_pad(grid: np.ndarray, margin: int) -> np.ndarray:
    """Symmetric reflection with edge repetition on the last two axes.

    Index -1 maps to 0 and H maps to H-1. Leading axes are left alone.
    """
    grid = np.asarray(grid)
    if margin < 0 or margin > min(grid.shape[-2:]):
        raise ConfigurationError(f"margin {margin} invalid for grid of shape {grid.shape[-2:]}")
    if margin == 0:
        return grid.copy()
    pad = [(0, 0)] * (grid.ndim - 2) + [(margin, margin), (margin, margin)]
    return np.pad(grid, pad, mode="symmetric")


def window_offsets(r: int) -> tuple[int, int]:
    """Rows before and after the centre pixel; even r puts the extra row after."""
    return (r - 1) // 2, r // 2


def patch_margin(r: int) -> int:
    return -(-r // 2)


class PatchSource:
    """Mirror-padded (t1, t2, di) stack with fast window lookup.

    Each pixel's 3×r×r patch is a view into a shared sliding-window array;
    indexing with coordinate arrays copies only the requested patches.
    """

    def __init__(self, pair: SarImagePair, di: np.ndarray, r: int, dtype=np.float32):
        if r < 1:
            raise ConfigurationError("patch size r must be positive")
        di = np.asarray(di)
        if di.shape != pair.shape:
            raise DimensionError(f"difference image {di.shape} does not match pair {pair.shape}")
        self.r = r
        self.shape = di.shape
        self.margin = patch_margin(r)
        stack = np.stack([pair.t1.pixels, pair.t2.pixels, di]).astype(dtype)
        self.padded = mirror_pad(stack, self.margin)
        self._windows = sliding_window_view(self.padded, (r, r), axis=(1, 2))  # 3,H',W',r,r
        self._start = self.margin - window_offsets(r)[0]

    def patches(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        h, w = self.shape
        if rows.size and (rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w):
            raise IndexError(f"pixel coordinates outside the {h}×{w} image")
        win = self._windows[:, rows + self._start, cols + self._start]  # 3,B,r,r
        return np.ascontiguousarray(win.transpose(1, 0, 2, 3))

    def patch(self, i: int, j: int) -> np.ndarray:
        return self.patches(np.array([i]), np.array([j]))[0]


def extract_patch(pair: SarImagePair, di: np.ndarray, pixel: tuple[int, int], r: int) -> np.ndarray:
    """The 3×r×r (t1, t2, di) window centred on ``pixel``."""
    return PatchSource(pair, di, r).patch(*pixel)


@dataclass
class PatchBatch:
    inputs: np.ndarray   # B×3×r×r
    labels: np.ndarray   # B×2 soft labels
    coords: np.ndarray   # B×2 pixel coordinates

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DimensionError("inputs and labels disagree on batch size")

    def __len__(self):
        return self.inputs.shape[0]


def one_hot(labels: np.ndarray, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), 2), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def make_minibatches(samples: SampleSet, source: PatchSource, batch_size: int,
                     epoch_seed: int) -> Iterator[PatchBatch]:
    """Shuffle the samples with ``epoch_seed`` and yield batches; the last may be short."""
    if batch_size < 2:
        raise ConfigurationError("batch_size must be at least 2 so mixup can pair samples")
    if len(samples) == 0:
        raise ConfigurationError("sample set is empty")
    order = np.random.default_rng(epoch_seed).permutation(len(samples))
    dtype = source.padded.dtype
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        coords = samples.coords[idx]
        yield PatchBatch(source.patches(coords[:, 0], coords[:, 1]),
                         one_hot(samples.labels[idx], dtype), coords)
