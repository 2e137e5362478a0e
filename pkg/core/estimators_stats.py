"""
Streaming log-domain statistics shared by all samplers.

LogAccumulator keeps a shifted Welford state for the values exp(v): the shift
`ref` is the largest log value seen so far, so the linear-space mean and second
moment stay in [0, 1] no matter how large |v| gets.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

LOG = logging.getLogger("estimators_stats")

CSV_HEADER = ("sample", "log_running_mean", "std_err", "free_energy_per_site")

# Trace rows: every sample up to this L, thinned above it.
FULL_TRACE_MAX_L = 10_000
MAX_TRACE_ROWS = 2_000


class EmptyAccumulatorError(RuntimeError):
    """Mean or standard error requested before any value was pushed."""


def logmeanexp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(logsumexp(values) - math.log(values.size))


@dataclass(slots=True)
class LogAccumulator:
    count: int = 0
    ref: float = -math.inf
    mean: float = 0.0
    m2: float = 0.0

    def _rescale(self, new_ref: float) -> None:
        if new_ref <= self.ref:
            return
        if self.count and self.ref > -math.inf:
            factor = math.exp(self.ref - new_ref)
            self.mean *= factor
            self.m2 *= factor * factor
        self.ref = new_ref

    def push(self, log_value: float) -> "LogAccumulator":
        v = float(log_value)
        if math.isnan(v) or v == math.inf:
            raise ValueError(f"log value must be finite or -inf, got {v}")
        self._rescale(v)
        w = 0.0 if v == -math.inf else math.exp(v - self.ref)
        self.count += 1
        delta = w - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (w - self.mean)
        return self

    def push_many(self, log_values: Iterable[float]) -> "LogAccumulator":
        v = np.asarray(log_values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            return self
        if np.any(np.isnan(v)) or np.any(v == np.inf):
            raise ValueError("log values must be finite or -inf")
        top = float(v.max())
        if top > -math.inf:
            self._rescale(top)
        if self.ref == -math.inf:
            other = LogAccumulator(count=int(v.size))
        else:
            w = np.exp(v - self.ref)
            m = float(w.mean())
            other = LogAccumulator(count=int(v.size), ref=self.ref, mean=m, m2=float(((w - m) ** 2).sum()))
        self._absorb(other)
        return self

    def _absorb(self, other: "LogAccumulator") -> None:
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.ref, self.mean, self.m2 = other.count, other.ref, other.mean, other.m2
            return
        ref = max(self.ref, other.ref)
        self._rescale(ref)
        om, om2 = other.mean, other.m2
        if other.ref < ref and other.ref > -math.inf:
            factor = math.exp(other.ref - ref)
            om *= factor
            om2 *= factor * factor
        n = self.count + other.count
        delta = om - self.mean
        self.mean += delta * other.count / n
        self.m2 += om2 + delta * delta * self.count * other.count / n
        self.count = n

    def merge(self, other: "LogAccumulator") -> "LogAccumulator":
        """Combined accumulator; equals accumulating both streams in sequence."""
        out = self.copy()
        out._absorb(other)
        return out

    def copy(self) -> "LogAccumulator":
        return LogAccumulator(count=self.count, ref=self.ref, mean=self.mean, m2=self.m2)

    def log_mean(self) -> float:
        if self.count == 0:
            raise EmptyAccumulatorError("log_mean of an empty accumulator")
        if self.mean <= 0.0:
            return -math.inf
        return self.ref + math.log(self.mean)

    def relative_variance(self) -> float:
        """Sample variance of exp(v) divided by the squared mean."""
        if self.count == 0:
            raise EmptyAccumulatorError("variance of an empty accumulator")
        if self.count < 2 or self.mean <= 0.0:
            return math.nan
        return max(self.m2, 0.0) / (self.count - 1) / (self.mean * self.mean)

    def std_err(self) -> float:
        """Delta-method standard error of log_mean."""
        rv = self.relative_variance()
        if math.isnan(rv):
            return math.nan
        return math.sqrt(rv / self.count)


def push(acc: LogAccumulator, log_value: float) -> LogAccumulator:
    return acc.push(log_value)


def log_mean(acc: LogAccumulator) -> float:
    return acc.log_mean()


def std_err(acc: LogAccumulator) -> float:
    return acc.std_err()


def emission_points(L: int) -> np.ndarray:
    """Sample indices (1-based) at which trace rows are written."""
    if L <= FULL_TRACE_MAX_L:
        return np.arange(1, L + 1, dtype=np.int64)
    pts = np.unique(np.round(np.geomspace(1, L, MAX_TRACE_ROWS - 1)).astype(np.int64))
    if pts[-1] != L:
        pts = np.append(pts, L)
    return pts


@dataclass
class EstimateTrace:
    """Running log-Z estimate of one sampler run.

    log Z = sign * log_mean + offset; sign is -1 for reciprocal estimators.
    """

    sampler: str
    seed: Any
    L: int
    n_sites: int
    sign: float = 1.0
    offset: float = 0.0
    rows: List[Tuple[int, float, float, float]] = field(default_factory=list)
    acc: LogAccumulator = field(default_factory=LogAccumulator)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def log_running_mean(self) -> float:
        return self.acc.log_mean()

    @property
    def log_Z(self) -> float:
        return self.sign * self.acc.log_mean() + self.offset

    @property
    def std_err(self) -> float:
        return self.acc.std_err()

    @property
    def free_energy_per_site(self) -> float:
        return self.log_Z / self.n_sites

    def write_csv(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for sample, lm, se, fe in self.rows:
                writer.writerow((sample, repr(lm), repr(se), repr(fe)))
        return path

    def summary(self) -> Dict[str, Any]:
        se = self.std_err
        return {
            "sampler": self.sampler,
            "seed": self.seed,
            "L": self.L,
            "samples": self.acc.count,
            "log_Z": self.log_Z,
            "free_energy_per_site": self.free_energy_per_site,
            "std_err": None if math.isnan(se) else se,
            **self.metadata,
        }


class TraceRecorder:
    """Feeds batches of log values into an EstimateTrace, emitting rows on cadence."""

    def __init__(self, trace: EstimateTrace):
        self.trace = trace
        self._points = emission_points(trace.L)
        self._next = 0

    @property
    def done(self) -> bool:
        return self.trace.acc.count >= self.trace.L

    def remaining(self) -> int:
        return self.trace.L - self.trace.acc.count

    def push(self, log_values: Sequence[float]) -> None:
        v = np.asarray(log_values, dtype=np.float64).reshape(-1)
        v = v[: self.remaining()]
        acc = self.trace.acc
        pos = 0
        while pos < v.size:
            if self._next >= self._points.size:
                acc.push_many(v[pos:])
                break
            target = int(self._points[self._next])
            take = min(target - acc.count, v.size - pos)
            if take == 1:
                acc.push(v[pos])
            else:
                acc.push_many(v[pos : pos + take])
            pos += take
            if acc.count == target:
                self._emit()
                self._next += 1

    def _emit(self) -> None:
        t = self.trace
        lm = t.acc.log_mean()
        t.rows.append((t.acc.count, lm, t.acc.std_err(), (t.sign * lm + t.offset) / t.n_sites))


def merge_traces(traces: Sequence[EstimateTrace]) -> Dict[str, Any]:
    """Reduce independent chains of one sampler into a single estimate."""
    if not traces:
        raise EmptyAccumulatorError("no traces to merge")
    first = traces[0]
    for t in traces[1:]:
        if t.sign != first.sign or not math.isclose(t.offset, first.offset, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(f"Cannot merge traces of different estimators ({first.sampler} vs {t.sampler})")
    acc = LogAccumulator()
    for t in traces:
        acc = acc.merge(t.acc)
    log_Z = first.sign * acc.log_mean() + first.offset
    se = acc.std_err()
    return {
        "sampler": first.sampler,
        "chains": len(traces),
        "samples": acc.count,
        "log_Z": log_Z,
        "free_energy_per_site": log_Z / first.n_sites,
        "std_err": None if math.isnan(se) else se,
    }
