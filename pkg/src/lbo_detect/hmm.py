"""Gaussian hidden Markov model baseline.

The model is fitted with Baum-Welch on the concatenated training split and
then scores every training window with the forward algorithm.  A test window
is forecast by finding the training window whose log-likelihood is closest to
its own and transplanting that window's last-step change::

    y_hat_k = x^k_last + (y_j - x^j_last),   j = argmin_j |l_j - l_k|
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .errors import ConfigInvalid, DegenerateFit, EmptyInput, ShapeMismatch
from .series import QuasiStaticRecord, ScalingParams, WindowSet, apply_scale, make_windows, rmse

VARIANCE_FLOOR = 1e-6
# A state whose expected occupancy (in samples) drops below this is dead.
MIN_STATE_MASS = 1e-6
PROB_ATOL = 1e-9
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianHmm:
    """Start probabilities, row-stochastic transitions and per-state N(mean, var)."""

    start: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        start = np.array(self.start, dtype=np.float64).ravel()
        n = start.size
        trans = np.array(self.trans, dtype=np.float64).reshape(n, n) if n else start
        means = np.array(self.means, dtype=np.float64).ravel()
        variances = np.array(self.variances, dtype=np.float64).ravel()
        if n < 1:
            raise ConfigInvalid("an HMM needs at least one state")
        if means.size != n or variances.size != n:
            raise ShapeMismatch("means and variances need one entry per state")
        for name, arr in (("start", start), ("trans", trans), ("means", means), ("variances", variances)):
            if not np.all(np.isfinite(arr)):
                raise ConfigInvalid(f"{name} contains NaN or Inf")
        if np.any(start < 0) or abs(start.sum() - 1.0) > PROB_ATOL:
            raise ConfigInvalid("start probabilities must be non-negative and sum to 1")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1.0) > PROB_ATOL):
            raise ConfigInvalid("transition rows must be non-negative and sum to 1")
        if np.any(variances < VARIANCE_FLOOR):
            raise ConfigInvalid(f"variances must be >= {VARIANCE_FLOOR}")
        for name, arr in (("start", start), ("trans", trans), ("means", means), ("variances", variances)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return int(self.start.size)

    @property
    def n_free_params(self) -> int:
        n = self.n_states
        return (n - 1) + n * (n - 1) + 2 * n

    def permuted(self, perm: Sequence[int]) -> "GaussianHmm":
        """Relabel states so that new state ``i`` is old state ``perm[i]``."""
        p = np.asarray(perm, dtype=np.intp)
        return GaussianHmm(self.start[p], self.trans[np.ix_(p, p)], self.means[p], self.variances[p])

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "start": self.start.tolist(),
            "trans": self.trans.tolist(),
            "means": self.means.tolist(),
            "vars": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianHmm":
        try:
            hmm = cls(d["start"], d["trans"], d["means"], d["vars"])
        except KeyError as exc:
            raise ConfigInvalid(f"HMM checkpoint lacks {exc}") from None
        if hmm.n_states != int(d.get("n_states", hmm.n_states)):
            raise ConfigInvalid("n_states disagrees with the parameter arrays")
        return hmm


def log_emissions(hmm: GaussianHmm, x) -> np.ndarray:
    """``(T, N)`` log-densities of each sample under each state."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return -0.5 * (_LOG_2PI + np.log(hmm.variances) + (x - hmm.means) ** 2 / hmm.variances)


def _forward(start, trans, logb):
    """Scaled forward pass.

    Emissions are shifted by their per-step maximum before exponentiation so
    that no step underflows.  Returns the normalized alphas, the shifted
    emissions ``b`` and the per-step scale factors ``c``; the sequence
    log-likelihood is ``sum(log c) + sum(shift)``.
    """
    t_len, n = logb.shape
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    alpha = np.empty((t_len, n))
    c = np.empty(t_len)
    a = start * b[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, t_len):
        a = (alpha[t - 1] @ trans) * b[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    return alpha, b, c, float(np.log(c).sum() + shift.sum())


def forward_loglik(hmm: GaussianHmm, window) -> float:
    """log P(window | hmm) by the scaled forward algorithm."""
    x = np.asarray(window, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInput("forward_loglik needs at least one sample")
    return _forward(hmm.start, hmm.trans, log_emissions(hmm, x))[3]


# -- Baum-Welch ---------------------------------------------------------------


def _kmeans_1d(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 50) -> np.ndarray:
    """Labels from Lloyd iterations started at k-means++ seeds."""
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)) ** 2, axis=1)
        total = d2.sum()
        if total == 0:
            raise DegenerateFit(f"fewer than {k} distinct sample values")
        centers.append(x[rng.choice(x.size, p=d2 / total)])
    c = np.sort(np.array(centers))
    labels = np.zeros(x.size, dtype=np.intp)
    for _ in range(iters):
        labels = np.argmin(np.abs(x[:, None] - c), axis=1)
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            raise DegenerateFit("k-means initialisation left a state empty")
        new = np.bincount(labels, weights=x, minlength=k) / counts
        if np.array_equal(new, c):
            break
        c = new
    return labels


def init_hmm(x, n_states: int, seed: int) -> GaussianHmm:
    """Partition sample values with seeded k-means and read off parameters."""
    x = np.asarray(x, dtype=np.float64).ravel()
    labels = _kmeans_1d(x, n_states, np.random.default_rng(seed))
    counts = np.bincount(labels, minlength=n_states).astype(np.float64)
    means = np.bincount(labels, weights=x, minlength=n_states) / counts
    var = np.bincount(labels, weights=(x - means[labels]) ** 2, minlength=n_states) / counts
    # Transition counts between consecutive labels, with one pseudo-count each.
    pairs = np.zeros((n_states, n_states))
    np.add.at(pairs, (labels[:-1], labels[1:]), 1.0)
    pairs += 1.0
    return GaussianHmm(
        np.full(n_states, 1.0 / n_states),
        pairs / pairs.sum(axis=1, keepdims=True),
        means,
        np.maximum(var, VARIANCE_FLOOR),
    )


@dataclass(frozen=True)
class BaumWelchResult:
    hmm: GaussianHmm
    loglik_history: Tuple[float, ...]
    n_iter: int
    converged: bool

    @property
    def loglik(self) -> float:
        return self.loglik_history[-1]


@njit(cache=True)
def _forward_backward(start, trans, b):  # pragma: no cover - compiled
    t_len, n = b.shape
    alpha = np.empty((t_len, n))
    c = np.empty(t_len)
    s = 0.0
    for j in range(n):
        alpha[0, j] = start[j] * b[0, j]
        s += alpha[0, j]
    c[0] = s
    for j in range(n):
        alpha[0, j] /= s
    for t in range(1, t_len):
        s = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += alpha[t - 1, i] * trans[i, j]
            acc *= b[t, j]
            alpha[t, j] = acc
            s += acc
        c[t] = s
        for j in range(n):
            alpha[t, j] /= s
    beta = np.empty((t_len, n))
    beta[t_len - 1, :] = 1.0
    xi = np.zeros((n, n))
    bb = np.empty(n)
    for t in range(t_len - 2, -1, -1):
        for j in range(n):
            bb[j] = b[t + 1, j] * beta[t + 1, j] / c[t + 1]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += trans[i, j] * bb[j]
                xi[i, j] += alpha[t, i] * bb[j]
            beta[t, i] = acc
    return alpha * beta, xi * trans, c


def _e_step(hmm: GaussianHmm, x: np.ndarray):
    """Posteriors ``gamma`` (T, N), expected transition counts and the log-likelihood."""
    logb = log_emissions(hmm, x)
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    gamma, xi, c = _forward_backward(np.ascontiguousarray(hmm.start), np.ascontiguousarray(hmm.trans), b)
    return gamma, xi, float(np.log(c).sum() + shift.sum())


def _m_step(hmm: GaussianHmm, x: np.ndarray, gamma: np.ndarray, xi: np.ndarray) -> GaussianHmm:
    mass = gamma.sum(axis=0)
    if np.any(mass < MIN_STATE_MASS):
        dead = np.flatnonzero(mass < MIN_STATE_MASS).tolist()
        raise DegenerateFit(f"state(s) {dead} lost all responsibility mass")
    start = gamma[0] / gamma[0].sum()
    rows = xi.sum(axis=1, keepdims=True)
    # A state seen only at the final sample has no outgoing evidence; keep its row.
    trans = np.where(rows > 0, xi / np.where(rows > 0, rows, 1.0), hmm.trans)
    trans /= trans.sum(axis=1, keepdims=True)
    means = gamma.T @ x / mass
    var = np.einsum("tn,tn->n", gamma, (x[:, None] - means) ** 2) / mass
    return GaussianHmm(start, trans, means, np.maximum(var, VARIANCE_FLOOR))


def baum_welch(data, n_states: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-6) -> BaumWelchResult:
    """Fit by EM on one observation sequence.

    ``loglik_history[i]`` is the log-likelihood of the parameters after ``i``
    M-steps (entry 0 is the initialisation).  Iteration stops once the
    relative improvement falls below ``tol`` or after ``max_iters`` M-steps.
    """
    x = np.asarray(data, dtype=np.float64).ravel()
    if n_states < 1:
        raise ConfigInvalid("n_states must be >= 1")
    if x.size < 10 * n_states:
        raise EmptyInput(f"{x.size} samples is too few for {n_states} states")
    if not np.all(np.isfinite(x)):
        raise ConfigInvalid("training data contains NaN or Inf")
    hmm = init_hmm(x, n_states, seed)
    gamma, xi, ll = _e_step(hmm, x)
    history = [ll]
    converged = False
    for _ in range(max_iters):
        hmm_next = _m_step(hmm, x, gamma, xi)
        gamma_next, xi_next, ll_next = _e_step(hmm_next, x)
        history.append(ll_next)
        hmm, gamma, xi = hmm_next, gamma_next, xi_next
        if abs(ll_next - ll) <= tol * abs(ll):
            converged = True
            break
        ll = ll_next
    return BaumWelchResult(hmm, tuple(history), len(history) - 1, converged)


def fit_baum_welch(data, n_states: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-6) -> GaussianHmm:
    return baum_welch(data, n_states, seed, max_iters, tol).hmm


def total_loglik(hmm: GaussianHmm, data) -> float:
    return forward_loglik(hmm, data)


def bic(hmm: GaussianHmm, data, loglik: Optional[float] = None) -> float:
    """``-2 logL + kappa ln(n_obs)`` with kappa counting start, transition and emission parameters."""
    x = np.asarray(data, dtype=np.float64).ravel()
    if loglik is None:
        loglik = forward_loglik(hmm, x)
    return float(-2.0 * loglik + hmm.n_free_params * math.log(x.size))


@dataclass(frozen=True)
class BicRow:
    n_states: int
    loglik: float
    bic: float
    failed: bool = False


def select_states_bic(data, n_min: int = 2, n_max: int = 10, seed: int = 0,
                      max_iters: int = 100, tol: float = 1e-6) -> Tuple[GaussianHmm, List[BicRow]]:
    """Fit every candidate state count and keep the lowest BIC (ties: fewer states).

    A count whose fit degenerates is recorded as a failed row and skipped.
    """
    if not 1 <= n_min <= n_max:
        raise ConfigInvalid("need 1 <= n_min <= n_max")
    x = np.asarray(data, dtype=np.float64).ravel()
    rows: List[BicRow] = []
    best: Optional[Tuple[float, GaussianHmm]] = None
    for n in range(n_min, n_max + 1):
        try:
            result = baum_welch(x, n, seed, max_iters, tol)
        except DegenerateFit as exc:
            warnings.warn(f"skipping n_states={n}: {exc}")
            rows.append(BicRow(n, math.nan, math.nan, failed=True))
            continue
        score = bic(result.hmm, x, result.loglik)
        rows.append(BicRow(n, result.loglik, score))
        if best is None or score < best[0]:
            best = (score, result.hmm)
    if best is None:
        raise DegenerateFit(f"every state count in [{n_min}, {n_max}] degenerated")
    return best[1], rows


# -- likelihood table and forecasting -------------------------------------------


@dataclass(frozen=True)
class LikelihoodTable:
    logliks: np.ndarray
    last: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        arrays = [np.array(a, dtype=np.float64).ravel() for a in (self.logliks, self.last, self.targets)]
        if len({a.size for a in arrays}) != 1:
            raise ShapeMismatch("table columns must have equal length")
        if arrays[0].size == 0:
            raise EmptyInput("likelihood table is empty")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ConfigInvalid("likelihood table contains NaN or Inf")
        for name, arr in zip(("logliks", "last", "targets"), arrays):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.logliks.size)


def build_table(hmm: GaussianHmm, windows: WindowSet) -> LikelihoodTable:
    lls = np.array([forward_loglik(hmm, w) for w in windows.inputs])
    return LikelihoodTable(lls, windows.inputs[:, -1], windows.targets)


def hmm_forecast(hmm: GaussianHmm, table: LikelihoodTable, window) -> float:
    """Next-sample forecast from the training window with the closest log-likelihood."""
    x = np.asarray(window, dtype=np.float64).ravel()
    ll = forward_loglik(hmm, x)
    j = int(np.argmin(np.abs(table.logliks - ll)))
    return float(x[-1] + (table.targets[j] - table.last[j]))


def hmm_predict(hmm: GaussianHmm, table: LikelihoodTable, inputs) -> np.ndarray:
    return np.array([hmm_forecast(hmm, table, w) for w in np.asarray(inputs, dtype=np.float64)])


def hmm_predict_rmse(hmm: GaussianHmm, table: LikelihoodTable, record, scaling: ScalingParams,
                     t_x: int) -> float:
    series = record.series if isinstance(record, QuasiStaticRecord) else record
    windows = make_windows(apply_scale(series, scaling), t_x, scaling)
    return rmse(hmm_predict(hmm, table, windows.inputs), windows.targets)
