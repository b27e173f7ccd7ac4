"""Alignment and norm diagnostics, accuracy, and the per-epoch CSV log."""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import UndefinedMetricError
from .feedback import BP, DirectFeedback, ProductFeedback, transposed_weight

CSV_HEADER = (
    "epoch",
    "layer",
    "algo",
    "angle_deg",
    "norm_ratio",
    "train_loss",
    "test_loss",
    "test_acc",
)
INCOMPLETE_MARKER = "INCOMPLETE"


def alignment_angle(x, y):
    """Angle in degrees between two tensors after flattening.

    Uses ``2 * atan2(|u - v|, |u + v|)`` on the unit vectors, which equals
    ``arccos(u . v)`` but stays exact at 0 and 180 degrees where the
    arccos of a rounded cosine loses about half the digits.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise UndefinedMetricError(f"cannot compare {x.size} and {y.size} elements")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise UndefinedMetricError("angle with a zero tensor is undefined")
    u, v = x / nx, y / ny
    return math.degrees(2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def _matrix_norm(t, kind):
    t = np.asarray(t, dtype=np.float64)
    if kind == "fro":
        return float(np.linalg.norm(t.ravel()))
    if kind == "spectral":
        return float(np.linalg.norm(t.reshape(t.shape[0], -1), ord=2))
    raise ValueError(f"unknown norm {kind!r}")


def norm_ratio(feedback, wt, norm="fro"):
    """``||feedback|| / ||W^T||`` (Frobenius by default, ``norm="spectral"`` optional)."""
    denom = _matrix_norm(wt, norm)
    if denom == 0.0:
        raise UndefinedMetricError("forward weights have zero norm")
    return _matrix_norm(feedback, norm) / denom


def weight_correlation(forward, backward):
    """Pearson correlation over paired synapses (absent synapses enter as 0)."""
    f = np.asarray(forward, dtype=np.float64).ravel()
    b = np.asarray(backward, dtype=np.float64).ravel()
    if f.shape != b.shape:
        raise UndefinedMetricError("forward and backward weights must pair up")
    if f.std() == 0.0 or b.std() == 0.0:
        raise UndefinedMetricError("correlation with a constant vector is undefined")
    return float(np.corrcoef(f, b)[0, 1])


def accuracy(logits, targets):
    """Fraction of rows whose argmax (lowest index on ties) hits the target.

    ``targets`` may be integer labels or one-hot rows.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    labels = targets.argmax(axis=1) if targets.ndim == 2 else targets
    if logits.shape[0] == 0:
        return float("nan")
    return float(np.mean(logits.argmax(axis=1) == labels))


def weight_alignment(layer, feedback: DirectFeedback):
    """Angle between ``W^T`` and a direct feedback matrix.

    Product-rule feedback has no synapse parallel to ``W``; asking for its
    weight alignment is a type error, use :func:`path_alignment`.
    """
    if not isinstance(feedback, DirectFeedback):
        raise TypeError("weight alignment needs a direct feedback matrix; use path_alignment")
    return alignment_angle(transposed_weight(layer), feedback.B)


def path_alignment(layer, feedback):
    """Angle between ``W^T`` and the composed feedback path (``R B`` or ``B``)."""
    return alignment_angle(transposed_weight(layer), feedback.path())


def layer_diagnostics(net, state, i, norm="fro"):
    """``(angle_deg, norm_ratio)`` for layer ``i``, or ``(None, None)`` when undefined.

    BP transports ``W^T`` itself.  DFA only has a feedback matrix shaped like
    ``W^T`` at the output layer.
    """
    layer = net.layers[i]
    wt = transposed_weight(layer)
    if state.tag == BP:
        path = wt
    else:
        fb = state.layers[i]
        if not isinstance(fb, (DirectFeedback, ProductFeedback)):
            return None, None
        path = fb.path()
    if path.shape != wt.shape:
        return None, None
    try:
        return alignment_angle(wt, path), norm_ratio(path, wt, norm)
    except UndefinedMetricError:
        return None, None


@dataclass
class MetricRecord:
    epoch: int
    layer: int
    algo: str
    angle_deg: Optional[float]
    norm_ratio: Optional[float]
    train_loss: float
    test_loss: float
    test_acc: float

    def __post_init__(self):
        if self.angle_deg is not None and not 0.0 <= self.angle_deg <= 180.0:
            raise ValueError(f"angle {self.angle_deg} outside [0, 180]")
        if self.norm_ratio is not None and self.norm_ratio < 0:
            raise ValueError("norm ratio must be non-negative")

    def row(self):
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [
            str(self.epoch),
            str(self.layer),
            self.algo,
            fmt(self.angle_deg),
            fmt(self.norm_ratio),
            fmt(self.train_loss),
            fmt(self.test_loss),
            fmt(self.test_acc),
        ]


class MetricWriter:
    """Append-only CSV log, flushed after every epoch.

    Leaving the context with an exception appends a row whose ``epoch``
    field is ``INCOMPLETE``.
    """

    def __init__(self, path):
        self.path = path
        self._fh = None
        self._writer = None

    def __enter__(self):
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_HEADER)
        return self

    def write(self, records):
        for rec in records:
            self._writer.writerow(rec.row())
        self._fh.flush()

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self._writer.writerow([INCOMPLETE_MARKER] + [""] * (len(CSV_HEADER) - 1))
        self._fh.close()
        return False


def read_records(path):
    """Parse a metrics CSV back into records; raises if the run was incomplete."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected header in {path}")
        for row in reader:
            if row["epoch"] == INCOMPLETE_MARKER:
                raise ValueError(f"{path} is from an incomplete run")

            def opt(v):
                return float(v) if v != "" else None

            out.append(
                MetricRecord(
                    epoch=int(row["epoch"]),
                    layer=int(row["layer"]),
                    algo=row["algo"],
                    angle_deg=opt(row["angle_deg"]),
                    norm_ratio=opt(row["norm_ratio"]),
                    train_loss=float(row["train_loss"]),
                    test_loss=float(row["test_loss"]),
                    test_acc=float(row["test_acc"]),
                )
            )
    return out
