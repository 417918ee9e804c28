"""Delay embedding and the translational-error statistic.

The translational error of an anchor point measures how much the
displacement vectors ``v(t) = P(t + tau) - P(t)`` of the anchor and its
``K`` nearest phase-space neighbours disagree in direction::

    E = 1/(K+1) * sum_k |v_k - v_mean|^2 / |v_mean|^2

Regular (deterministic, low-noise) dynamics give E close to 0; irregular
dynamics push E toward and beyond 1.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigInvalid, NoDelayFound, SeriesTooShort, ZeroMeanDisplacement

log = logging.getLogger(__name__)

AMI_BINS = 16
FNN_RATIO = 15.0
# Kennel's second test: a neighbour is also false when the distance in the
# extended space exceeds this multiple of the attractor size (series std).
FNN_SIZE_RATIO = 2.0
FNN_FRACTION = 0.01
MAX_DIM = 10
MIN_DISPLACEMENT = 1e-12


@dataclass(frozen=True)
class EmbeddingConfig:
    tau_d: int = 1
    dim: int = 2
    k_neighbors: int = 5
    n_anchors: int = 100
    n_runs: int = 3
    seed: int = 0

    def __post_init__(self):
        for key in ("tau_d", "dim", "k_neighbors", "n_anchors", "n_runs"):
            value = getattr(self, key)
            if int(value) != value or value < 1:
                raise ConfigInvalid(f"{key} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class PhaseSpace:
    vectors: np.ndarray
    tau_d: int
    dim: int

    def __len__(self) -> int:
        return int(self.vectors.shape[0])


@dataclass(frozen=True)
class TransErrorResult:
    run_medians: np.ndarray
    mean: float
    std: float


def delay_embed(samples, tau_d: int, dim: int) -> PhaseSpace:
    """Rows are ``[x(i), x(i + tau), ..., x(i + (dim - 1) tau)]``."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if tau_d < 1 or dim < 1:
        raise ConfigInvalid("tau_d and dim must be >= 1")
    span = (dim - 1) * tau_d
    if x.size < span + 1:
        raise SeriesTooShort(f"need at least {span + 1} samples for tau={tau_d}, dim={dim}")
    n = x.size - span
    vectors = np.empty((n, dim))
    for j in range(dim):
        vectors[:, j] = x[j * tau_d : j * tau_d + n]
    return PhaseSpace(vectors, tau_d, dim)


def average_mutual_information(samples, lag: int, bins: int = AMI_BINS) -> float:
    """Histogram estimate (nats) of I(x_t; x_{t+lag}) with equal-width bins."""
    x = np.asarray(samples, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return 0.0
    idx = np.minimum(((x - lo) / (hi - lo) * bins).astype(np.intp), bins - 1)
    a, b = idx[:-lag] if lag else idx, idx[lag:]
    joint = np.bincount(a * bins + b, minlength=bins * bins).reshape(bins, bins) / a.size
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz])))


def autocorrelation(samples, lag: int) -> float:
    x = np.asarray(samples, dtype=np.float64)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x[:-lag], x[lag:]) / denom)


def estimate_delay(samples, bins: int = AMI_BINS) -> int:
    """First local minimum of AMI over lags 1..T/10.

    Differences below the plug-in estimator's bias ``(bins - 1)^2 / (2 N)``
    are treated as noise.  A series whose lag-1 AMI is already within that
    bias of the overall minimum gets lag 1 (white noise would otherwise
    yield a random small lag).  Otherwise the first minimum is widened to
    the surrounding basin of lags within the bias and its centre is
    returned; a sampled sine's AMI is flat around the quarter period, and
    the raw first dip lands anywhere on that plateau.  Falls back to the
    first lag whose autocorrelation drops below 1/e.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise SeriesTooShort("delay estimation needs at least 100 samples")
    max_lag = x.size // 10
    ami = np.array([average_mutual_information(x, lag, bins) for lag in range(1, max_lag + 2)])
    slack = (bins - 1) ** 2 / (2.0 * x.size)
    if ami[0] <= ami.min() + slack:
        return 1
    for i in range(max_lag):
        if ami[i] <= ami[i + 1]:
            lo = hi = i
            while lo > 0 and ami[lo - 1] <= ami[i] + slack:
                lo -= 1
            while hi < max_lag - 1 and ami[hi + 1] <= ami[i] + slack:
                hi += 1
            return (lo + hi) // 2 + 1
    for lag in range(1, max_lag + 1):
        if autocorrelation(x, lag) < 1.0 / math.e:
            return lag
    raise NoDelayFound("neither AMI minimum nor autocorrelation decay found")


def false_neighbor_fraction(samples, tau_d: int, dim: int) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size - dim * tau_d
    if n < 2:
        raise SeriesTooShort(f"series too short for FNN at dim={dim}")
    emb = delay_embed(x, tau_d, dim).vectors[:n]
    ext = x[dim * tau_d : dim * tau_d + n]
    dist, idx = cKDTree(emb).query(emb, k=2)
    r_d, nn = dist[:, 1], idx[:, 1]
    gap = np.abs(ext - ext[nn])
    size = np.std(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_false = np.where(r_d > 0, gap / r_d > FNN_RATIO, gap > 0)
    r_ext = np.sqrt(r_d**2 + gap**2)
    size_false = r_ext / size > FNN_SIZE_RATIO if size > 0 else np.zeros(n, bool)
    return float(np.mean(ratio_false | size_false))


def estimate_dimension(samples, tau_d: int, max_dim: int = MAX_DIM) -> Tuple[int, bool]:
    """Smallest dimension whose false-neighbour fraction is below 1%.

    Returns ``(dim, capped)``; ``capped`` is True (and a warning is issued)
    when no dimension up to ``max_dim`` qualifies.
    """
    for dim in range(1, max_dim + 1):
        if false_neighbor_fraction(samples, tau_d, dim) < FNN_FRACTION:
            return dim, False
    warnings.warn(f"FNN fraction never fell below {FNN_FRACTION}; using dim={max_dim}")
    return max_dim, True


def _nearest(vectors: np.ndarray, candidates: np.ndarray, anchor: int, k: int, exclusion: int) -> np.ndarray:
    keep = candidates[np.abs(candidates - anchor) > exclusion]
    if keep.size < k:
        raise SeriesTooShort(f"only {keep.size} admissible neighbours, need {k}")
    diff = vectors[keep] - vectors[anchor]
    d2 = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(d2, kind="stable")[:k]
    return keep[order]


def anchor_error(phase: PhaseSpace, tau_d: int, k: int, anchor: int, candidates: np.ndarray) -> float:
    """E_trans of one anchor; raises ZeroMeanDisplacement on a null mean."""
    vec = phase.vectors
    group = np.concatenate(([anchor], _nearest(vec, candidates, anchor, k, tau_d)))
    v = vec[group + tau_d] - vec[group]
    v_mean = v.mean(axis=0)
    norm2 = float(np.dot(v_mean, v_mean))
    if math.sqrt(norm2) < MIN_DISPLACEMENT:
        raise ZeroMeanDisplacement(f"anchor {anchor}")
    dev = v - v_mean
    return float(np.einsum("ij,ij->", dev, dev) / (k + 1) / norm2)


def translational_error_once(
    phase: PhaseSpace, tau_d: int, k: int, n_anchors: int, rng: np.random.Generator
) -> float:
    """Median E_trans over randomly drawn anchors (without replacement).

    Neighbours within ``tau_d`` samples of the anchor are excluded so that
    neighbours are geometric rather than temporal successors.
    """
    candidates = np.arange(len(phase) - tau_d)
    if candidates.size < k + 1:
        raise SeriesTooShort("not enough phase-space vectors with a tau-ahead image")
    if candidates.size < n_anchors:
        warnings.warn(f"only {candidates.size} usable anchors, fewer than {n_anchors}")
    order = rng.permutation(candidates)
    values = []
    for anchor in order:
        try:
            values.append(anchor_error(phase, tau_d, k, int(anchor), candidates))
        except ZeroMeanDisplacement:
            log.debug("resampling anchor %d: zero mean displacement", anchor)
            continue
        if len(values) == n_anchors:
            break
    if not values:
        raise ZeroMeanDisplacement("every candidate anchor has zero mean displacement")
    return float(np.median(values))


def translational_error(samples, config: EmbeddingConfig) -> TransErrorResult:
    """Repeat :func:`translational_error_once` ``n_runs`` times and summarize."""
    phase = delay_embed(samples, config.tau_d, config.dim)
    children = np.random.SeedSequence(config.seed).spawn(config.n_runs)
    medians = np.array(
        [
            translational_error_once(
                phase, config.tau_d, config.k_neighbors, config.n_anchors, np.random.default_rng(child)
            )
            for child in children
        ]
    )
    return TransErrorResult(medians, float(medians.mean()), float(medians.std()))


def fit_embedding(samples, k_neighbors: int = 5, n_anchors: int = 100, n_runs: int = 3, seed: int = 0,
                  tau_d: Optional[int] = None, dim: Optional[int] = None) -> EmbeddingConfig:
    """Estimate (tau_d, dim) from training data unless given explicitly."""
    if tau_d is None:
        tau_d = estimate_delay(samples)
    if dim is None:
        dim, _ = estimate_dimension(samples, tau_d)
    return EmbeddingConfig(tau_d, dim, k_neighbors, n_anchors, n_runs, seed)
