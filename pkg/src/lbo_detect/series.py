"""Time-series containers, windowing, scaling, splits and the RMSE metric."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigInvalid,
    ConstantSeries,
    EmptyInput,
    LabelMissing,
    LengthMismatch,
    SeriesTooShort,
)

# Grid ratios are compared with this absolute tolerance (JSON round-trips are
# exact, but hand-typed manifests are not always).
RATIO_ATOL = 1e-9

DEFAULT_TX = 32


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class Label(str, enum.Enum):
    HEALTHY = "healthy"
    UNHEALTHY = "unhealthy"

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise LabelMissing(f"unknown label {value!r}") from None


@dataclass(frozen=True)
class TimeSeries:
    """A univariate pressure signal sampled at ``sample_rate_hz``."""

    samples: np.ndarray
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        arr = _frozen(self.samples)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if arr.size == 0:
            raise EmptyInput("time series is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("time series contains NaN or Inf")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class QuasiStaticRecord:
    """A series recorded at one fixed Φ/Φ_LBO ratio."""

    phi_ratio: float
    series: TimeSeries
    label: Optional[Label] = None

    def __post_init__(self):
        if not math.isfinite(self.phi_ratio) or self.phi_ratio < 1.0:
            raise ValueError(f"phi_ratio must be >= 1, got {self.phi_ratio}")
        object.__setattr__(self, "phi_ratio", float(self.phi_ratio))
        if self.label is not None:
            object.__setattr__(self, "label", Label.parse(self.label))


def expected_label(phi_ratio: float, transition_ratio: float) -> Label:
    """Records strictly below the transition are unhealthy; the rest healthy."""
    if phi_ratio < transition_ratio - RATIO_ATOL:
        return Label.UNHEALTHY
    return Label.HEALTHY


@dataclass(frozen=True)
class Protocol:
    """Quasi-static records for one air-flow setting, ascending in Φ/Φ_LBO."""

    name: str
    air_flow_slpm: float
    records: Tuple[QuasiStaticRecord, ...]
    transition_ratio: float

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not records:
            raise ValueError("protocol has no records")
        if not self.air_flow_slpm > 0:
            raise ValueError("air_flow_slpm must be positive")
        ratios = [r.phi_ratio for r in records]
        if ratios[0] != 1.0:
            raise ValueError("protocol records must start at phi_ratio = 1")
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise ValueError("phi_ratio values must be strictly increasing")
        if not any(abs(r - self.transition_ratio) <= RATIO_ATOL for r in ratios):
            raise ValueError(
                f"transition_ratio {self.transition_ratio} is not a grid point"
            )
        for rec in records:
            if rec.label is None:
                continue
            want = expected_label(rec.phi_ratio, self.transition_ratio)
            if rec.label is not want:
                raise ValueError(
                    f"record at {rec.phi_ratio} labelled {rec.label.value}, "
                    f"expected {want.value}"
                )

    @property
    def phi_ratios(self) -> list:
        return [r.phi_ratio for r in self.records]

    def record_at(self, phi_ratio: float) -> QuasiStaticRecord:
        for rec in self.records:
            if abs(rec.phi_ratio - phi_ratio) <= RATIO_ATOL:
                return rec
        raise KeyError(phi_ratio)

    @property
    def blowout_record(self) -> QuasiStaticRecord:
        return self.records[0]


@dataclass(frozen=True)
class ScalingParams:
    min_val: float
    max_val: float

    def __post_init__(self):
        if not (math.isfinite(self.min_val) and math.isfinite(self.max_val)):
            raise ValueError("scaling bounds must be finite")
        if not self.max_val > self.min_val:
            raise ConstantSeries("max_val must exceed min_val")
        object.__setattr__(self, "min_val", float(self.min_val))
        object.__setattr__(self, "max_val", float(self.max_val))


@dataclass(frozen=True)
class WindowSet:
    """Supervised next-step pairs cut from a scaled series.

    ``inputs[k]`` holds ``t_x`` consecutive samples and ``targets[k]`` is the
    sample right after them.
    """

    inputs: np.ndarray
    targets: np.ndarray
    t_x: int
    scaling: Optional[ScalingParams] = None

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.t_x:
            raise ValueError(f"inputs must have shape (N, {self.t_x})")
        if targets.shape != (inputs.shape[0],):
            raise LengthMismatch("one target per window required")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return int(self.targets.size)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.intp)
        return WindowSet(self.inputs[idx], self.targets[idx], self.t_x, self.scaling)


def _as_samples(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.samples
    return np.asarray(series, dtype=np.float64)


def minmax_scale(series) -> Tuple[np.ndarray, ScalingParams]:
    """Map samples affinely onto [0, 1] and return the fitted bounds."""
    x = _as_samples(series)
    if x.size == 0:
        raise EmptyInput("cannot scale an empty series")
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi == lo:
        raise ConstantSeries(f"all samples equal {lo}")
    params = ScalingParams(lo, hi)
    return apply_scale(x, params), params


def apply_scale(series, params: ScalingParams) -> np.ndarray:
    """Apply previously fitted bounds; out-of-range inputs land outside [0, 1]."""
    x = _as_samples(series)
    return (x - params.min_val) / (params.max_val - params.min_val)


def make_windows(scaled, t_x: int = DEFAULT_TX, scaling: Optional[ScalingParams] = None) -> WindowSet:
    x = np.asarray(scaled, dtype=np.float64)
    if t_x < 1:
        raise ConfigInvalid("t_x must be positive")
    if x.size < t_x + 1:
        raise SeriesTooShort(f"need at least {t_x + 1} samples, got {x.size}")
    view = np.lib.stride_tricks.sliding_window_view(x, t_x)[:-1]
    return WindowSet(np.ascontiguousarray(view), x[t_x:].copy(), t_x, scaling)


def chrono_split(series: TimeSeries, train_frac: float) -> Tuple[TimeSeries, TimeSeries]:
    """Split in time order: the first ``floor(train_frac * T)`` samples train."""
    if not 0.0 < train_frac < 1.0:
        raise ConfigInvalid("train_frac must lie in (0, 1)")
    x = series.samples
    cut = int(math.floor(train_frac * x.size))
    if cut == 0 or cut == x.size:
        raise EmptyInput("split would leave one side empty")
    return (
        TimeSeries(x[:cut], series.sample_rate_hz),
        TimeSeries(x[cut:], series.sample_rate_hz),
    )


def random_split(windows: WindowSet, val_frac: float, seed: int) -> Tuple[WindowSet, WindowSet]:
    """Seeded random partition; ``floor(val_frac * N)`` windows go to validation."""
    if not 0.0 < val_frac < 1.0:
        raise ConfigInvalid("val_frac must lie in (0, 1)")
    n = len(windows)
    n_val = int(math.floor(val_frac * n))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return windows.subset(train_idx), windows.subset(val_idx)


def rmse(predictions: Sequence[float], targets: Sequence[float]) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise EmptyInput("rmse of empty vectors")
    return float(np.sqrt(np.mean((p - t) ** 2)))
