"""Threshold calibration, healthy/unhealthy classification and confusion tallies.

A detector maps each quasi-static record to one scalar metric.  The metric
of the reference protocol's transition record becomes the threshold, and
every test record is labelled by which side of it the record falls on.
Unhealthy is the positive class throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import ConfigInvalid, EmptyInput, LabelMissing, LengthMismatch, RatioNotFound
from .series import RATIO_ATOL, Label, Protocol


class Direction(str, enum.Enum):
    BELOW_IS_UNHEALTHY = "below_is_unhealthy"
    ABOVE_IS_UNHEALTHY = "above_is_unhealthy"

    @classmethod
    def parse(cls, value) -> "Direction":
        try:
            return cls(value)
        except ValueError:
            raise ConfigInvalid(f"unknown direction {value!r}") from None


@dataclass(frozen=True)
class MetricCurve:
    """One metric value per record, ascending in phi ratio."""

    detector: str
    phi_ratios: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.phi_ratios)
        values = tuple(float(v) for v in self.values)
        if len(ratios) != len(values):
            raise LengthMismatch("one value per phi ratio required")
        if not ratios:
            raise EmptyInput("metric curve is empty")
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise ConfigInvalid("phi ratios must be strictly increasing")
        if not all(math.isfinite(v) for v in values):
            raise ConfigInvalid("metric values must be finite")
        object.__setattr__(self, "phi_ratios", ratios)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def value_at(self, phi_ratio: float) -> float:
        for r, v in zip(self.phi_ratios, self.values):
            if abs(r - phi_ratio) <= RATIO_ATOL:
                return v
        raise RatioNotFound(phi_ratio)

    def argmin_ratio(self) -> float:
        return self.phi_ratios[int(np.argmin(self.values))]

    def to_dict(self) -> dict:
        return {"detector": self.detector, "phi_ratios": list(self.phi_ratios), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricCurve":
        return cls(d["detector"], tuple(d["phi_ratios"]), tuple(d["values"]))


@dataclass(frozen=True)
class TransitionThreshold:
    value: float
    direction: Direction
    source_ratio: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ConfigInvalid("threshold must be finite")
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "direction", Direction.parse(self.direction))
        object.__setattr__(self, "source_ratio", float(self.source_ratio))

    def to_dict(self) -> dict:
        return {"value": self.value, "direction": self.direction.value, "source_ratio": self.source_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionThreshold":
        try:
            return cls(d["value"], d["direction"], d["source_ratio"])
        except KeyError as exc:
            raise ConfigInvalid(f"threshold lacks {exc}") from None


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for key in ("tp", "fp", "tn", "fn"):
            value = getattr(self, key)
            if int(value) != value or value < 0:
                raise ConfigInvalid(f"{key} must be a non-negative integer")
            object.__setattr__(self, key, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            return math.nan
        return (self.tp + self.tn) / self.total

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls(d["tp"], d["fp"], d["tn"], d["fn"])

    @classmethod
    def tally(cls, actual: Iterable[Label], predicted: Iterable[Label]) -> "ConfusionMatrix":
        counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
        for a, p in zip(actual, predicted, strict=True):
            if p is Label.UNHEALTHY:
                counts["tp" if a is Label.UNHEALTHY else "fp"] += 1
            else:
                counts["fn" if a is Label.UNHEALTHY else "tn"] += 1
        return cls(**counts)


def calibrate(curve: MetricCurve, transition_ratio: float, direction) -> TransitionThreshold:
    """The threshold is the curve's value at the transition ratio."""
    return TransitionThreshold(curve.value_at(transition_ratio), Direction.parse(direction), transition_ratio)


def classify(metric: float, threshold: TransitionThreshold) -> Label:
    """Strictly beyond the threshold is Unhealthy; the boundary itself is Healthy."""
    if not math.isfinite(metric):
        raise ConfigInvalid("metric must be finite")
    if threshold.direction is Direction.BELOW_IS_UNHEALTHY:
        unhealthy = metric < threshold.value
    else:
        unhealthy = metric > threshold.value
    return Label.UNHEALTHY if unhealthy else Label.HEALTHY


def evaluate_protocol(protocol: Protocol, curve: MetricCurve,
                      threshold: TransitionThreshold) -> Tuple[List[Label], ConfusionMatrix]:
    actual = []
    for rec in protocol.records:
        if rec.label is None:
            raise LabelMissing(f"{protocol.name}: record at {rec.phi_ratio} has no label")
        actual.append(rec.label)
    try:
        metrics = [curve.value_at(r) for r in protocol.phi_ratios]
    except RatioNotFound as exc:
        raise LengthMismatch(f"{protocol.name}: curve lacks ratio {exc}") from None
    predicted = [classify(m, threshold) for m in metrics]
    return predicted, ConfusionMatrix.tally(actual, predicted)


def aggregate_confusion(matrices: Sequence[ConfusionMatrix]) -> ConfusionMatrix:
    matrices = list(matrices)
    if not matrices:
        raise EmptyInput("nothing to aggregate")
    return reduce(lambda a, b: a + b, matrices)


@dataclass(frozen=True)
class ProtocolResult:
    name: str
    curve: MetricCurve
    predictions: Tuple[Label, ...]
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "curve": self.curve.to_dict(),
            "predictions": [p.value for p in self.predictions],
            "confusion": self.confusion.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolResult":
        return cls(
            d["name"],
            MetricCurve.from_dict(d["curve"]),
            tuple(Label.parse(p) for p in d["predictions"]),
            ConfusionMatrix.from_dict(d["confusion"]),
        )


@dataclass(frozen=True)
class EvaluationReport:
    detector: str
    threshold: TransitionThreshold
    per_protocol: Tuple[ProtocolResult, ...]

    @property
    def overall(self) -> ConfusionMatrix:
        return aggregate_confusion([p.confusion for p in self.per_protocol])

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "threshold": self.threshold.value,
            "direction": self.threshold.direction.value,
            "source_ratio": self.threshold.source_ratio,
            "per_protocol": [p.to_dict() for p in self.per_protocol],
            "overall_confusion": self.overall.to_dict(),
            "overall_accuracy": self.overall.accuracy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        threshold = TransitionThreshold(d["threshold"], d["direction"], d["source_ratio"])
        return cls(d["detector"], threshold, tuple(ProtocolResult.from_dict(p) for p in d["per_protocol"]))


def evaluate(detector: str, threshold: TransitionThreshold, protocols: Sequence[Protocol],
             curves: Sequence[MetricCurve]) -> EvaluationReport:
    if len(protocols) != len(curves):
        raise LengthMismatch("one curve per protocol required")
    results = []
    for protocol, curve in zip(protocols, curves):
        predicted, cm = evaluate_protocol(protocol, curve, threshold)
        results.append(ProtocolResult(protocol.name, curve, tuple(predicted), cm))
    return EvaluationReport(detector, threshold, tuple(results))
