"""Whole-scene inference and change-detection metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .model import GDNetModel
from .patches import PatchSource
from .sar_data import SarImagePair

REPORT_KEYS = ("tp", "tn", "fp", "fn", "oe_percent", "pcc_percent", "kc_percent")


def predict_map(model: GDNetModel, pair: SarImagePair, di: np.ndarray, r: int | None = None,
                chunk: int = 4096) -> np.ndarray:
    """Classify every pixel by the argmax of its patch logits."""
    r = model.config.r if r is None else r
    if r != model.config.r:
        raise DimensionError(f"patch size {r} does not match model r={model.config.r}")
    source = PatchSource(pair, di, r, dtype=model.dtype)
    h, w = source.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    out = np.empty(h * w, dtype=np.uint8)
    for start in range(0, h * w, chunk):
        sl = slice(start, start + chunk)
        logits, _, _ = model.forward(source.patches(rows[sl], cols[sl]))
        out[sl] = np.argmax(logits, axis=1)
    return out.reshape(h, w)


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    """(TP, TN, FP, FN) with "changed" (1) as the positive class."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    tp = int(np.count_nonzero(pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, tn, fp, fn


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int
    oe_percent: float
    pcc_percent: float
    kc_percent: float

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def as_dict(self) -> dict:
        return {key: getattr(self, key) for key in REPORT_KEYS}


def compute_metrics(tp: int, tn: int, fp: int, fn: int) -> MetricsReport:
    n = tp + tn + fp + fn
    if n <= 0:
        raise ConfigurationError("metrics need at least one pixel")
    oe = (fp + fn) / n
    po = (tp + tn) / n
    pe = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n)
    kc = 0.0 if pe == 1 else (po - pe) / (1 - pe)
    # PCC as 100 - OE keeps the pair summing to exactly 100
    return MetricsReport(tp, tn, fp, fn, 100 * oe, 100 - 100 * oe, 100 * kc)


def evaluate(pred: np.ndarray, gt: np.ndarray) -> MetricsReport:
    return compute_metrics(*confusion_counts(pred, gt))


def format_report(report: MetricsReport) -> str:
    values = [f"{getattr(report, k):.4f}" for k in REPORT_KEYS]
    lines = [",".join(REPORT_KEYS), ",".join(values), ""]
    lines += [f"{k} = {v}" for k, v in zip(REPORT_KEYS, values)]
    return "\n".join(lines) + "\n"


def write_report(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(report))


def read_report(path) -> dict:
    """Parse the key-value block of a report back into floats."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if " = " in line:
                key, val = line.split(" = ", 1)
                values[key.strip()] = float(val)
    return values
