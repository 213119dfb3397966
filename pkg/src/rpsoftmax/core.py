"""Shared primitives: privacy parameters, dyadic blocks, gaps and softmax sampling.

Rounds are 1-based and blocks 0-based: block ``r`` covers rounds
``2**r, ..., 2**(r + 1) - 1``.  All logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ETA_CAP = 0.125
MAX_BLOCK = 62


class InvalidParameterError(ValueError):
    """Raised when an argument falls outside an operation's domain."""


class NoUniqueBestActionError(InvalidParameterError):
    """Raised when several actions share the minimal mean loss."""


class ProtocolViolationError(RuntimeError):
    """Raised when a policy is driven out of the choose/observe order."""


class InvalidLossError(InvalidParameterError):
    """Raised when an observed loss vector leaves [0, 1]^K."""


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    eta: float


def eta_from_epsilon(epsilon: float) -> PrivacyParams:
    """Return the softmax inverse temperature ``min(epsilon / 2, 1 / 8)``."""
    try:
        epsilon = float(epsilon)
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(f"epsilon must be a real number, got {epsilon!r}") from exc
    if not math.isfinite(epsilon) or epsilon <= 0:
        raise InvalidParameterError(f"epsilon must be positive and finite, got {epsilon!r}")
    return PrivacyParams(epsilon=epsilon, eta=min(epsilon / 2, ETA_CAP))


def _check_round(t) -> int:
    if isinstance(t, bool) or not isinstance(t, (int, np.integer)):
        raise InvalidParameterError(f"round index must be an integer, got {t!r}")
    t = int(t)
    if t < 1:
        raise InvalidParameterError(f"round index must be >= 1, got {t}")
    if t >= 2 ** (MAX_BLOCK + 1):
        raise InvalidParameterError(f"round index {t} exceeds the supported horizon 2^{MAX_BLOCK + 1}")
    return t


def _check_block(r) -> int:
    if isinstance(r, bool) or not isinstance(r, (int, np.integer)):
        raise InvalidParameterError(f"block index must be an integer, got {r!r}")
    r = int(r)
    if r < 0 or r > MAX_BLOCK:
        raise InvalidParameterError(f"block index must lie in [0, {MAX_BLOCK}], got {r}")
    return r


def block_of(t: int) -> int:
    """Index ``r`` of the block containing round ``t``, i.e. ``2**r <= t < 2**(r+1)``."""
    return _check_round(t).bit_length() - 1


def block_start(r: int) -> int:
    return 1 << _check_block(r)


def block_end(r: int) -> int:
    """Last round of block ``r``."""
    return (1 << (_check_block(r) + 1)) - 1


def prefix_window(r: int) -> range:
    """Support of the random prefix length used at the end of block ``r``.

    ``{1}`` for ``r = 0`` and ``{2**(r-1) + 1, ..., 2**r}`` otherwise.
    """
    r = _check_block(r)
    if r == 0:
        return range(1, 2)
    return range((1 << (r - 1)) + 1, (1 << r) + 1)


def softmax_weights(losses, eta: float) -> np.ndarray:
    """Exponential-weights distribution ``p_j ∝ exp(-eta * losses_j)``.

    Scores are shifted by their maximum before exponentiation, so huge loss
    differences underflow to zero instead of producing NaN.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size == 0:
        raise InvalidParameterError("losses must be a non-empty vector")
    if not np.all(np.isfinite(losses)):
        raise InvalidParameterError("losses must be finite")
    if not (math.isfinite(eta) and eta > 0):
        raise InvalidParameterError(f"eta must be positive and finite, got {eta!r}")
    scores = -eta * losses
    w = np.exp(scores - scores.max())
    return w / w.sum()


def softmax_rows(losses: np.ndarray, eta: float) -> np.ndarray:
    """Row-wise :func:`softmax_weights` for a ``(n, K)`` array (no validation)."""
    scores = -eta * np.asarray(losses, dtype=float)
    w = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def softmax_list(losses: Sequence[float], eta: float) -> list[float]:
    """Scalar twin of :func:`softmax_weights` for short Python sequences (no validation)."""
    scores = [-eta * v for v in losses]
    top = max(scores)
    w = [math.exp(v - top) for v in scores]
    total = math.fsum(w)
    return [v / total for v in w]


def _categorical_index(p: Sequence[float], u: float) -> int:
    # first j with cdf_j > u; residual mass goes to the last index carrying probability
    cdf = 0.0
    last = 0
    for j, pj in enumerate(p.tolist() if isinstance(p, np.ndarray) else p):
        if pj > 0:
            last = j
        cdf += pj
        if u < cdf:
            return j
    return last


def sample_categorical(p, rng: np.random.Generator) -> int:
    """Draw index ``j`` with probability ``p[j]`` by inverting the CDF.

    Consumes exactly one uniform from ``rng`` per call.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)):
        raise InvalidParameterError("p must be a non-empty finite vector")
    if np.any(p < 0):
        raise InvalidParameterError("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidParameterError(f"probabilities must sum to 1, got {p.sum()!r}")
    return _categorical_index(p, rng.random())


@dataclass(frozen=True)
class GapProfile:
    K: int
    means: tuple[float, ...]
    gaps: tuple[float, ...]
    best_action: int
    delta_min: float

    @property
    def max_gap(self) -> float:
        return max(self.gaps)


def gap_profile_from_means(means: Sequence[float]) -> GapProfile:
    """Locate the unique best action and the gaps, keeping caller indices."""
    mu = np.asarray(means, dtype=float)
    if mu.ndim != 1 or mu.size < 2:
        raise InvalidParameterError("need at least two action means")
    if not np.all(np.isfinite(mu)) or np.any(mu < 0) or np.any(mu > 1):
        raise InvalidParameterError(f"means must lie in [0, 1], got {mu.tolist()}")
    best = int(np.argmin(mu))
    if int(np.count_nonzero(mu == mu[best])) > 1:
        raise NoUniqueBestActionError(f"minimum mean {mu[best]} is attained by several actions")
    gaps = mu - mu[best]
    gaps[best] = 0.0
    delta_min = float(np.min(np.delete(gaps, best)))
    return GapProfile(
        K=int(mu.size),
        means=tuple(float(v) for v in mu),
        gaps=tuple(float(v) for v in gaps),
        best_action=best,
        delta_min=delta_min,
    )


def _check_bound_domain(K, delta_min) -> None:
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)) or K < 2:
        raise InvalidParameterError(f"K must be an integer >= 2, got {K!r}")
    if not (math.isfinite(delta_min) and 0 < delta_min <= 1):
        raise InvalidParameterError(f"delta_min must lie in (0, 1], got {delta_min!r}")


def theorem_bound(K: int, delta_min: float, epsilon: float) -> tuple[float, float]:
    """Explicit regret bounds ``(tight, relaxed)`` valid for every horizon.

    ``tight = 1 + 800 ln K / delta_min + 16 ln K / eta`` and
    ``relaxed = 1000 (ln K / delta_min + ln K / epsilon)``.
    """
    _check_bound_domain(K, delta_min)
    params = eta_from_epsilon(epsilon)
    log_k = math.log(K)
    # grouping keeps tight == 1 + 4 * master_bound_value bit-for-bit
    tight = 1.0 + (800 * log_k / delta_min + 16 * log_k / params.eta)
    relaxed = 1000 * (log_k / delta_min + log_k / params.epsilon)
    return tight, relaxed
