"""Desk-scale diagnostics: sliced-W2 traces, exact nearest neighbours and
per-class statistics of conditional runs."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .sliced_ot import _unit_directions, sw2_from_directions


@dataclass(frozen=True)
class ConvergenceTrace:
    steps: np.ndarray
    sw2: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64)
        sw2 = np.asarray(self.sw2, dtype=np.float64)
        if steps.shape != sw2.shape or steps.ndim != 1:
            raise InvalidArgument("trace steps and values must be 1-D of equal length")
        if not np.all(np.isfinite(sw2)):
            raise InvalidArgument("trace values must be finite")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "sw2", sw2)

    def __len__(self):
        return self.steps.size

    def window_means(self, width: int) -> np.ndarray:
        """Means over consecutive full windows of ``width`` entries."""
        full = len(self) // width
        return self.sw2[: full * width].reshape(full, width).mean(axis=1)


def _as_points(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def convergence_trace(snapshots, reference, projections: int = 200, seed: int = 0,
                      steps=None) -> ConvergenceTrace:
    """Sliced W2 of every snapshot against ``reference`` on one shared set of directions."""
    ref = _as_points(reference)
    snaps = [_as_points(s) for s in snapshots]
    for s in snaps:
        if s.shape[1] != ref.shape[1]:
            raise InvalidArgument(f"snapshot dimension {s.shape[1]} != reference {ref.shape[1]}")
    theta = _unit_directions(ref.shape[1], projections, seed)
    values = [sw2_from_directions(s, ref, theta) for s in snaps]
    steps = np.arange(len(snaps)) if steps is None else steps
    return ConvergenceTrace(steps, values)


class TraceRecorder:
    """Flow callback that records sliced W2 to a reference every ``every`` steps."""

    def __init__(self, reference, projections: int = 200, seed: int = 0, every: int = 1):
        self.reference = _as_points(reference)
        self.theta = _unit_directions(self.reference.shape[1], projections, seed)
        self.every = every
        self.steps: list[int] = []
        self.values: list[float] = []

    def measure(self, x, step: int):
        self.steps.append(step)
        self.values.append(sw2_from_directions(_as_points(x), self.reference, self.theta))

    def __call__(self, particles):
        if particles.step % self.every == 0:
            self.measure(particles.x, particles.step)

    def trace(self) -> ConvergenceTrace:
        return ConvergenceTrace(self.steps, self.values)


def write_trace_csv(trace: ConvergenceTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "sw2"])
        for s, v in zip(trace.steps, trace.sw2):
            w.writerow([int(s), repr(float(v))])


def read_trace_csv(path) -> ConvergenceTrace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ConvergenceTrace([int(r["step"]) for r in rows], [float(r["sw2"]) for r in rows])


def nearest_neighbor(sample, dataset, k: int = 1, return_distances: bool = False):
    """Indices of the ``k`` closest dataset rows in Euclidean distance.

    Exhaustive search; ties go to the lower index.  ``dataset`` is a
    :class:`~cswf.data_io.DatasetView` or an (N, d) array.
    """
    data = np.asarray(getattr(dataset, "x", dataset), dtype=np.float64)
    s = np.asarray(sample, dtype=np.float64).ravel()
    if data.ndim != 2 or s.size != data.shape[1]:
        raise InvalidArgument(f"sample has {s.size} dims, dataset rows have {data.shape[-1]}")
    if not 1 <= k <= data.shape[0]:
        raise InvalidArgument(f"k must lie in 1..{data.shape[0]}, got {k}")
    diff = data - s
    dist2 = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(dist2, kind="stable")[:k]
    if return_distances:
        return order, np.sqrt(dist2[order])
    return order


@dataclass(frozen=True)
class ClassStats:
    count: int
    mean: np.ndarray


def class_mean_report(particles, class_count: int | None = None) -> dict[int, ClassStats]:
    """Per-class particle count and mean X, grouping by the one-hot Y.

    Classes without particles are left out of the result.
    """
    y = np.asarray(particles.y, dtype=np.float64)
    x = np.asarray(particles.x, dtype=np.float64)
    if class_count is not None and y.shape[1] != class_count:
        raise InvalidArgument(f"Y has {y.shape[1]} columns, expected {class_count}")
    ones = (y == 1.0).sum(axis=1)
    zeros = (y == 0.0).sum(axis=1)
    if y.shape[1] == 0 or np.any(ones != 1) or np.any(ones + zeros != y.shape[1]):
        raise InvalidArgument("class_mean_report needs one-hot Y rows")
    cls = np.argmax(y, axis=1)
    report = {}
    for c in np.unique(cls):
        sel = cls == c
        report[int(c)] = ClassStats(int(sel.sum()), x[sel].mean(axis=0))
    return report
