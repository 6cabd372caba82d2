"""Fuzzy c-means preclassification of the difference image into reliable
pseudo-labels."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, InsufficientSamplesError
from .sar_data import write_pgm


class PseudoLabel(enum.IntEnum):
    UNCHANGED = 0
    INTERMEDIATE = 1
    CHANGED = 2


# byte value per label in exported pseudo-label maps
PGM_ENCODING = {PseudoLabel.UNCHANGED: 0, PseudoLabel.INTERMEDIATE: 128, PseudoLabel.CHANGED: 255}

MIN_CLASS_PIXELS = 10


@dataclass
class FcmResult:
    centers: np.ndarray        # (c,) ascending
    memberships: np.ndarray    # (N, c); rows sum to 1
    objective_history: list
    iterations: int


def _memberships(values, centers, fuzziness):
    d = np.abs(values[:, None] - centers[None, :])
    zero = d == 0
    hit = zero.any(axis=1)
    u = np.empty_like(d)
    if hit.any():
        # a point sitting on a center belongs to it entirely (split on exact ties)
        u[hit] = zero[hit] / zero[hit].sum(axis=1, keepdims=True)
    miss = ~hit
    if miss.any():
        # distance ratios to the nearest center are >= 1, so the power cannot overflow
        dm = d[miss]
        with np.errstate(over="ignore", under="ignore"):
            inv = (dm / dm.min(axis=1, keepdims=True)) ** (-2.0 / (fuzziness - 1.0))
        u[miss] = inv / inv.sum(axis=1, keepdims=True)
    return u


def _level_keys(x, lo, span):
    """Positions on a 1e-9 grid of the data range; equal keys are one level."""
    return np.round((np.asarray(x, dtype=np.float64) - lo) / span, 9)


def resolvable_levels(values) -> int:
    """Number of distinct values at a resolution of 1e-9 of the data range."""
    v = np.asarray(values, dtype=np.float64).ravel()
    span = v.max() - v.min()
    if span == 0:
        return 1
    return np.unique(_level_keys(v, v.min(), span)).size


def _objective(values, centers, u, fuzziness):
    d2 = (values[:, None] - centers[None, :]) ** 2
    return float(((u ** fuzziness) * d2).sum())


def fcm_cluster(values, c: int = 3, fuzziness: float = 2.0, tol: float = 1e-5,
                max_iter: int = 100, seed: int | None = None) -> FcmResult:
    """One-dimensional fuzzy c-means with deterministic quantile initialization.

    ``seed`` is accepted for interface symmetry but unused; the quantile start
    makes clustering deterministic.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if resolvable_levels(v) < c:
        raise DegenerateInputError(f"need at least {c} distinct values to form {c} clusters")
    levels = (2 * np.arange(c) + 1) / (2 * c)
    centers = np.quantile(v, levels)
    lo, span = v.min(), v.max() - v.min()
    if np.unique(_level_keys(centers, lo, span)).size < c:
        # heavy ties start two centers on one level, where they would stay forever;
        # spread from the smallest to the largest distinct level instead
        distinct = lo + np.unique(_level_keys(v, lo, span)) * span
        centers = np.quantile(distinct, np.linspace(0.0, 1.0, c))
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        u = _memberships(v, centers, fuzziness)
        w = u ** fuzziness
        mass = w.sum(axis=0)
        # a cluster whose memberships all underflow keeps its previous center
        new_centers = np.where(mass > 0, (w * v[:, None]).sum(axis=0) / np.where(mass > 0, mass, 1.0), centers)
        history.append(_objective(v, new_centers, u, fuzziness))
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift < tol:
            break
    u = _memberships(v, centers, fuzziness)
    order = np.argsort(centers, kind="stable")
    return FcmResult(centers[order], u[:, order], history, it)


@dataclass
class PseudoLabelMap:
    labels: np.ndarray  # H×W of PseudoLabel values

    @property
    def counts(self) -> dict:
        return {lab: int((self.labels == lab).sum()) for lab in PseudoLabel}


def assign_labels(di: np.ndarray, fcm: FcmResult) -> PseudoLabelMap:
    """Hard-assign every pixel to its max-membership cluster.

    ``np.argmax`` returns the first maximum, which with ascending centers
    breaks ties toward the lower cluster.
    """
    di = np.asarray(di)
    if fcm.memberships.shape[0] != di.size:
        raise DimensionError(f"{fcm.memberships.shape[0]} membership rows for {di.size} pixels")
    if fcm.memberships.shape[1] != 3:
        raise DimensionError("label assignment expects three clusters")
    idx = np.argmax(fcm.memberships, axis=1)
    return PseudoLabelMap(idx.reshape(di.shape).astype(np.uint8))


def preclassify(di: np.ndarray, **fcm_kwargs) -> tuple[PseudoLabelMap, FcmResult]:
    fcm = fcm_cluster(np.asarray(di).ravel(), **fcm_kwargs)
    return assign_labels(di, fcm), fcm


def write_label_map(path, labels: PseudoLabelMap) -> None:
    lut = np.zeros(3, dtype=np.uint8)
    for lab, byte in PGM_ENCODING.items():
        lut[lab] = byte
    write_pgm(path, lut[labels.labels])


@dataclass
class SampleSet:
    coords: np.ndarray  # (N, 2) int rows/cols
    labels: np.ndarray  # (N,) 0 = unchanged, 1 = changed
    seed: int

    def __len__(self):
        return len(self.labels)


def select_samples(labels: PseudoLabelMap, per_class_cap: int = 8000, seed: int = 0) -> SampleSet:
    """Balanced random draw of reliable pixels; intermediate pixels never appear."""
    rng = np.random.default_rng(seed)
    flat = labels.labels.ravel()
    width = labels.labels.shape[1]
    picks = []
    for pseudo, target in ((PseudoLabel.UNCHANGED, 0), (PseudoLabel.CHANGED, 1)):
        idx = np.flatnonzero(flat == pseudo)
        if idx.size < MIN_CLASS_PIXELS:
            raise InsufficientSamplesError(
                f"{pseudo.name} class has {idx.size} pixels; at least {MIN_CLASS_PIXELS} are required")
        take = min(per_class_cap, idx.size)
        chosen = np.sort(rng.choice(idx, size=take, replace=False))
        picks.append((chosen, np.full(take, target, dtype=np.int64)))
    flat_idx = np.concatenate([p[0] for p in picks])
    coords = np.stack([flat_idx // width, flat_idx % width], axis=1)
    return SampleSet(coords, np.concatenate([p[1] for p in picks]), seed)
