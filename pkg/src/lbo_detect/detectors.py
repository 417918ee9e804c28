"""Uniform handles over the four detectors: fit on the reference, score records.

Every detector is fitted from the blowout (phi = 1) record of the reference
protocol.  That record is split chronologically; the leading part trains the
detector and fixes the min-max scaling, and the held-out tail stands in for
the phi = 1 point of the reference metric curve.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple, Union

import numpy as np

from . import hmm as hmm_mod
from .detection import Direction, MetricCurve
from .dynamics import EmbeddingConfig, fit_embedding, translational_error
from .errors import ConfigInvalid, RatioNotFound
from .io import scaling_from_dict, scaling_to_dict
from .neural import EpochRecord, SequenceModel, TrainConfig, predict_rmse, train
from .series import (
    DEFAULT_TX,
    Protocol,
    QuasiStaticRecord,
    ScalingParams,
    TimeSeries,
    apply_scale,
    chrono_split,
    make_windows,
    minmax_scale,
    random_split,
)

DETECTOR_KINDS = ("lstm", "rnn", "hmm", "trans-error")


@dataclass(frozen=True)
class HmmSettings:
    n_min: int = 2
    n_max: int = 10
    max_iters: int = 100
    tol: float = 1e-6


@dataclass(frozen=True)
class EmbeddingSettings:
    k_neighbors: int = 5
    n_anchors: int = 100
    n_runs: int = 3
    tau_d: Optional[int] = None
    dim: Optional[int] = None


@dataclass(frozen=True)
class FitSettings:
    """Everything needed to fit any detector from a reference protocol.

    ``seed`` drives every random choice (validation split, weight init,
    shuffling, HMM initialisation, anchor sampling); ``train.seed`` is
    overridden by it.
    """

    seed: int = 0
    t_x: int = DEFAULT_TX
    train_frac: float = 0.9
    val_frac: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)
    hmm: HmmSettings = field(default_factory=HmmSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitSettings":
        d = dict(d)
        nested = {"train": TrainConfig, "hmm": HmmSettings, "embedding": EmbeddingSettings}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown settings: {sorted(unknown)}")
        for key, typ in nested.items():
            if key in d:
                sub = dict(d[key])
                bad = set(sub) - {f.name for f in fields(typ)}
                if bad:
                    raise ConfigInvalid(f"unknown {key} settings: {sorted(bad)}")
                d[key] = typ(**sub)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None


@dataclass(frozen=True)
class ReferenceSplit:
    train: TimeSeries
    held_out: TimeSeries
    scaling: ScalingParams

    @property
    def scaled_train(self) -> np.ndarray:
        return apply_scale(self.train, self.scaling)


def split_reference(protocol: Protocol, train_frac: float = 0.9) -> ReferenceSplit:
    try:
        record = protocol.record_at(1.0)
    except KeyError:
        raise RatioNotFound(f"{protocol.name} has no phi_ratio = 1 record") from None
    train_part, held_out = chrono_split(record.series, train_frac)
    _, scaling = minmax_scale(train_part)
    return ReferenceSplit(train_part, held_out, scaling)


def _series(record) -> TimeSeries:
    return record.series if isinstance(record, QuasiStaticRecord) else record


@dataclass(frozen=True)
class NeuralDetector:
    model: SequenceModel
    scaling: ScalingParams
    direction = Direction.BELOW_IS_UNHEALTHY

    @property
    def kind(self) -> str:
        return self.model.kind.value

    def metric(self, record) -> float:
        return predict_rmse(self.model, _series(record), self.scaling)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scaling": scaling_to_dict(self.scaling), "model": self.model.to_dict()}


@dataclass(frozen=True)
class HmmDetector:
    hmm: hmm_mod.GaussianHmm
    table: hmm_mod.LikelihoodTable
    scaling: ScalingParams
    t_x: int
    direction = Direction.BELOW_IS_UNHEALTHY
    kind = "hmm"

    def metric(self, record) -> float:
        return hmm_mod.hmm_predict_rmse(self.hmm, self.table, _series(record), self.scaling, self.t_x)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "scaling": scaling_to_dict(self.scaling),
            "t_x": self.t_x,
            "hmm": self.hmm.to_dict(),
            "table": {
                "logliks": self.table.logliks.tolist(),
                "last": self.table.last.tolist(),
                "targets": self.table.targets.tolist(),
            },
        }


@dataclass(frozen=True)
class TransErrorDetector:
    config: EmbeddingConfig
    scaling: ScalingParams
    direction = Direction.ABOVE_IS_UNHEALTHY
    kind = "trans-error"

    def metric(self, record) -> float:
        return translational_error(apply_scale(_series(record), self.scaling), self.config).mean

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scaling": scaling_to_dict(self.scaling), "embedding": asdict(self.config)}


Detector = Union[NeuralDetector, HmmDetector, TransErrorDetector]


def detector_from_dict(d: dict) -> Detector:
    try:
        kind = d["kind"]
        scaling = scaling_from_dict(d["scaling"])
        if kind in ("lstm", "rnn"):
            return NeuralDetector(SequenceModel.from_dict(d["model"]), scaling)
        if kind == "hmm":
            t = d["table"]
            table = hmm_mod.LikelihoodTable(t["logliks"], t["last"], t["targets"])
            return HmmDetector(hmm_mod.GaussianHmm.from_dict(d["hmm"]), table, scaling, int(d["t_x"]))
        if kind == "trans-error":
            return TransErrorDetector(EmbeddingConfig(**d["embedding"]), scaling)
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid(f"malformed detector checkpoint ({exc!r})") from None
    raise ConfigInvalid(f"unknown detector kind {kind!r}")


@dataclass(frozen=True)
class FitResult:
    detector: Detector
    history: Tuple[EpochRecord, ...] = ()
    bic_rows: Tuple[hmm_mod.BicRow, ...] = ()


def fit_detector(kind: str, reference: Protocol, settings: FitSettings = FitSettings()) -> FitResult:
    """Fit one detector from the reference protocol's blowout record."""
    if kind not in DETECTOR_KINDS:
        raise ConfigInvalid(f"unknown detector kind {kind!r}")
    split = split_reference(reference, settings.train_frac)
    scaled = split.scaled_train
    if kind in ("lstm", "rnn"):
        windows = make_windows(scaled, settings.t_x, split.scaling)
        train_set, val_set = random_split(windows, settings.val_frac, settings.seed)
        model, history = train(kind, train_set, val_set, replace(settings.train, seed=settings.seed))
        return FitResult(NeuralDetector(model, split.scaling), tuple(history))
    if kind == "hmm":
        h = settings.hmm
        model, rows = hmm_mod.select_states_bic(scaled, h.n_min, h.n_max, settings.seed, h.max_iters, h.tol)
        table = hmm_mod.build_table(model, make_windows(scaled, settings.t_x, split.scaling))
        return FitResult(HmmDetector(model, table, split.scaling, settings.t_x), bic_rows=tuple(rows))
    e = settings.embedding
    config = fit_embedding(scaled, e.k_neighbors, e.n_anchors, e.n_runs, settings.seed, e.tau_d, e.dim)
    return FitResult(TransErrorDetector(config, split.scaling))


def protocol_curve(detector: Detector, protocol: Protocol,
                   blowout_override: Optional[TimeSeries] = None) -> MetricCurve:
    """Metric of every record; ``blowout_override`` replaces the phi = 1 series."""
    values: List[float] = []
    for rec in protocol.records:
        series = rec.series
        if blowout_override is not None and rec.phi_ratio == 1.0:
            series = blowout_override
        values.append(detector.metric(series))
    return MetricCurve(detector.kind, tuple(protocol.phi_ratios), tuple(values))


def reference_curve(detector: Detector, reference: Protocol, train_frac: float = 0.9) -> MetricCurve:
    """Reference curve whose phi = 1 point is scored on the held-out tail only."""
    return protocol_curve(detector, reference, split_reference(reference, train_frac).held_out)
