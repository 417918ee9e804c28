"""Wall-clock cost of computing one detector metric on one record.

Only the metric computation is timed; fitting, loading and file output all
happen outside the timed region.  BLAS and OpenMP pools are pinned to one
thread while timing so every detector gets the same CPU resources.
"""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

from threadpoolctl import threadpool_limits

from .errors import ConfigInvalid
from .io import write_csv
from .series import Protocol

BENCH_HEADER = ("detector", "protocol", "phi_ratio", "median_s")


@dataclass(frozen=True)
class Timing:
    per_repeat: Tuple[float, ...]

    @property
    def median_s(self) -> float:
        return statistics.median(self.per_repeat)

    @property
    def min_s(self) -> float:
        return min(self.per_repeat)

    @property
    def max_s(self) -> float:
        return max(self.per_repeat)

    def to_dict(self) -> dict:
        return {
            "median_s": self.median_s,
            "min_s": self.min_s,
            "max_s": self.max_s,
            "per_repeat": list(self.per_repeat),
        }


def time_detector(detector, record, repeats: int = 3) -> Timing:
    """Time ``detector.metric(record)``; one untimed warm-up precedes the repeats."""
    if repeats < 3:
        raise ConfigInvalid("repeats must be >= 3")
    times: List[float] = []
    with threadpool_limits(limits=1):
        detector.metric(record)
        for _ in range(repeats):
            start = time.perf_counter()
            detector.metric(record)
            times.append(time.perf_counter() - start)
    return Timing(tuple(times))


@dataclass(frozen=True)
class BenchRow:
    detector: str
    protocol: str
    phi_ratio: float
    timing: Timing


def bench_suite(detectors: Sequence, protocols: Sequence[Protocol], repeats: int = 3) -> List[BenchRow]:
    """Detectors x records, serially, in input order."""
    rows = []
    for det in detectors:
        for protocol in protocols:
            for rec in protocol.records:
                rows.append(BenchRow(det.kind, protocol.name, rec.phi_ratio, time_detector(det, rec, repeats)))
    return rows


def write_bench_csv(path, rows: Iterable[BenchRow]) -> None:
    write_csv(path, BENCH_HEADER, ((r.detector, r.protocol, r.phi_ratio, r.timing.median_s) for r in rows))


def environment() -> dict:
    return {
        "python": platform.python_version(),
        "machine": platform.machine(),
        "cpu_count": os.cpu_count(),
        "timed_threads": 1,
    }
