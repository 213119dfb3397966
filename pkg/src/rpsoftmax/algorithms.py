"""Online policies and the episode harness.

A policy is driven round by round: ``choose(t)`` returns the action for round
``t`` using only rounds before ``t``, then ``observe(t, x)`` feeds the full loss
vector of round ``t``.  Block-constant policies additionally accept a whole
block segment at once through ``observe_block``, which is what makes long
horizons affordable; it is equivalent to calling ``observe`` on every row.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    InvalidLossError,
    InvalidParameterError,
    ProtocolViolationError,
    _categorical_index,
    block_of,
    eta_from_epsilon,
    softmax_list,
    softmax_weights,
)
from .environments import Environment


def _check_K(K) -> int:
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)) or K < 2:
        raise InvalidParameterError(f"K must be an integer >= 2, got {K!r}")
    return int(K)


def _check_law(law, K: int):
    if law is None:
        return [1.0 / K] * K
    law = np.asarray(law, dtype=float)
    if law.shape != (K,) or not np.all(np.isfinite(law)) or np.any(law < 0):
        raise InvalidParameterError("initial action law must be a nonnegative vector of length K")
    if abs(law.sum() - 1.0) > 1e-9:
        raise InvalidParameterError(f"initial action law must sum to 1, got {law.sum()!r}")
    return law


def _check_losses(x, K: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (K,) or x.ndim > 2:
        raise InvalidLossError(f"expected loss vectors of length {K}, got shape {x.shape}")
    if x.size > _SMALL:
        # NaN fails both comparisons
        ok = x.min() >= 0.0 and x.max() <= 1.0
    else:
        flat = x.ravel().tolist()
        # the sum turns any NaN or mixed infinities into NaN
        total = sum(flat)
        ok = min(flat) >= 0.0 and max(flat) <= 1.0 and total == total
    if not ok:
        raise InvalidLossError("loss entries must lie in [0, 1]")
    return x


def _add_rows(acc: list[float], rows: np.ndarray) -> list[float]:
    """Row-by-row running sum, so block and single-round updates round identically."""
    if rows.size <= _SMALL:
        for row in rows.tolist():
            acc = [a + v for a, v in zip(acc, row)]
        return acc
    return np.cumsum(np.vstack([np.array(acc), rows]), axis=0)[-1].tolist()


_SMALL = 64


def laplace_noise(rng: np.random.Generator, scale: float, size) -> np.ndarray:
    return rng.laplace(0.0, scale, size)


class Policy:
    """Round-by-round choose-then-observe contract with order checking."""

    block_constant = False

    def __init__(self, K: int):
        self.K = _check_K(K)
        self._next_t = 1

    def _expect(self, t) -> int:
        if t != self._next_t:
            raise ProtocolViolationError(f"expected round {self._next_t}, got {t}")
        return t

    def choose(self, t: int) -> int:
        raise NotImplementedError

    def observe(self, t: int, x) -> None:
        raise NotImplementedError


class FixedAction(Policy):
    """Plays one action forever; used as a reference in tests and sweeps."""

    block_constant = True

    def __init__(self, K: int, action: int):
        super().__init__(K)
        if not 0 <= action < self.K:
            raise InvalidParameterError(f"action {action} out of range")
        self.action = int(action)

    def choose(self, t):
        self._expect(t)
        return self.action

    def observe(self, t, x):
        self._expect(t)
        _check_losses(x, self.K)
        self._next_t += 1

    def observe_block(self, t, rows):
        self._expect(t)
        rows = _check_losses(rows, self.K)
        self._next_t += len(rows)


class _DyadicBlockPolicy(Policy):
    """One action per dyadic block; the next one is selected at each block end."""

    block_constant = True

    def __init__(self, K: int, rng: np.random.Generator, initial_law=None):
        super().__init__(K)
        self._rng = rng
        self.initial_law = _check_law(initial_law, self.K)
        self.action = _categorical_index(self.initial_law, rng.random())
        self.block = 0
        self._block_end = 1
        self._start_block()

    def _start_block(self):
        pass

    def _accumulate(self, s0: int, rows: np.ndarray) -> None:
        """Absorb block positions ``s0, s0 + 1, ...`` (1-based) of the current block."""
        raise NotImplementedError

    def _select(self) -> int:
        raise NotImplementedError

    def choose(self, t):
        if t != self._next_t:
            self._expect(t)
        return self.action

    def observe(self, t, x):
        x = np.asarray(x, dtype=float)
        self.observe_block(t, x[None, :] if x.ndim == 1 else x)

    def observe_block(self, t, rows):
        if t != self._next_t:
            self._expect(t)
        rows = _check_losses(rows, self.K)
        if rows.ndim != 2:
            raise InvalidLossError("observe_block expects a 2-d array of rows")
        last = t + len(rows) - 1
        if last > self._block_end:
            raise ProtocolViolationError(f"rows {t}..{last} cross the end of block {self.block}")
        self._accumulate(t - (1 << self.block) + 1, rows)
        self._next_t = last + 1
        if last == self._block_end:
            self.action = self._select()
            self.block += 1
            self._block_end = (1 << (self.block + 1)) - 1
            self._start_block()


class RpSoftmax(_DyadicBlockPolicy):
    """Randomized-prefix softmax policy.

    At the start of block ``r`` a prefix length ``M_r`` is drawn uniformly from
    ``prefix_window(r)``, independently of the data.  Only the first ``M_r``
    loss vectors of the block are summed; at the block end the next action is
    drawn from the softmax of the prefix sums and held for the whole next
    block.  Later rows of the block are validated and discarded.
    """

    def __init__(self, K: int, epsilon: float, rng: np.random.Generator, initial_law=None):
        self.params = eta_from_epsilon(epsilon)
        self.eta = self.params.eta
        super().__init__(K, rng, initial_law)

    @property
    def prefix_sums(self) -> np.ndarray:
        return np.array(self._prefix)

    def next_action_law(self) -> np.ndarray:
        """Law of the action for the next block given the current prefix sums."""
        return softmax_weights(self._prefix, self.eta)

    def _start_block(self):
        r = self.block
        if r <= 1:
            self.prefix_index = r + 1
        else:
            size = 1 << (r - 1)
            if size <= 1 << 53:
                # size is a power of two, so scaling a 53-bit uniform is exactly uniform
                offset = int(self._rng.random() * size)
            else:
                offset = int(self._rng.integers(size))
            self.prefix_index = size + 1 + offset
        self._prefix = [0.0] * self.K

    def _accumulate(self, s0, rows):
        k = min(len(rows), self.prefix_index - s0 + 1)
        if k > 0:
            self._prefix = _add_rows(self._prefix, rows[:k])

    def _select(self):
        return _categorical_index(softmax_list(self._prefix, self.eta), self._rng.random())


class DyadicLaplaceRNM(_DyadicBlockPolicy):
    """Dyadic report-noisy-max baseline with Laplace(2/epsilon) noise on full-block losses."""

    def __init__(self, K: int, epsilon: float, rng: np.random.Generator, initial_law=None):
        self.params = eta_from_epsilon(epsilon)
        self.scale = 2.0 / self.params.epsilon
        super().__init__(K, rng, initial_law)

    def _start_block(self):
        self.block_sums = [0.0] * self.K

    def _accumulate(self, s0, rows):
        self.block_sums = _add_rows(self.block_sums, rows)

    def _select(self):
        noisy = np.array(self.block_sums) + laplace_noise(self._rng, self.scale, self.K)
        return int(np.argmin(noisy))


class FollowTheLeader(Policy):
    """Non-private leader on all past losses; ties go to the lowest index."""

    def __init__(self, K: int):
        super().__init__(K)
        self.cumulative = np.zeros(self.K)

    def choose(self, t):
        self._expect(t)
        return int(np.argmin(self.cumulative))

    def observe(self, t, x):
        self._expect(t)
        self.cumulative = self.cumulative + _check_losses(x, self.K)
        self._next_t += 1


class Hedge(Policy):
    """Non-private exponential weights resampled every round."""

    def __init__(self, K: int, eta_h: float, rng: np.random.Generator):
        super().__init__(K)
        if not (math.isfinite(eta_h) and eta_h > 0):
            raise InvalidParameterError(f"eta_h must be positive, got {eta_h!r}")
        self.eta_h = float(eta_h)
        self.cumulative = np.zeros(self.K)
        self._rng = rng
        self._choice: Optional[int] = None

    def weights(self) -> np.ndarray:
        return softmax_weights(self.cumulative, self.eta_h)

    def choose(self, t):
        self._expect(t)
        if self._choice is None:
            self._choice = _categorical_index(self.weights(), self._rng.random())
        return self._choice

    def observe(self, t, x):
        self._expect(t)
        if self._choice is None:
            # keep the stream schedule fixed even if choose was skipped
            self.choose(t)
        self.cumulative = self.cumulative + _check_losses(x, self.K)
        self._choice = None
        self._next_t += 1


POLICY_NAMES = ("rp_softmax", "ftl", "hedge", "laplace_rnm", "fixed")


@dataclass(frozen=True)
class PolicySpec:
    """Picklable recipe for a policy, used to fan trials out to workers."""

    name: str
    epsilon: Optional[float] = None
    eta: Optional[float] = None
    action: Optional[int] = None

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise InvalidParameterError(f"unknown algorithm {self.name!r}")
        if self.name in ("rp_softmax", "laplace_rnm"):
            eta_from_epsilon(self.epsilon if self.epsilon is not None else float("nan"))
        if self.name == "hedge" and not (self.eta is not None and self.eta > 0):
            raise InvalidParameterError("hedge needs a positive eta")
        if self.name == "fixed" and self.action is None:
            raise InvalidParameterError("fixed needs an action")

    @property
    def private(self) -> bool:
        return self.name in ("rp_softmax", "laplace_rnm")

    @property
    def label(self) -> str:
        if self.private:
            return f"{self.name}@eps={self.epsilon!r}"
        if self.name == "hedge":
            return f"hedge@eta={self.eta!r}"
        if self.name == "fixed":
            return f"fixed@{self.action}"
        return self.name

    def build(self, K: int, rng: np.random.Generator) -> Policy:
        if self.name == "rp_softmax":
            return RpSoftmax(K, self.epsilon, rng)
        if self.name == "laplace_rnm":
            return DyadicLaplaceRNM(K, self.epsilon, rng)
        if self.name == "hedge":
            return Hedge(K, self.eta, rng)
        if self.name == "fixed":
            return FixedAction(K, self.action)
        return FollowTheLeader(K)


@dataclass
class RegretTrace:
    t: np.ndarray
    regret: np.ndarray
    max_gap: float
    actions: Optional[np.ndarray] = None

    @property
    def final(self) -> float:
        return float(self.regret[-1])


def default_checkpoints(T: int) -> list[int]:
    """Powers of two up to ``T``, plus ``T`` itself."""
    pts = [1 << r for r in range(block_of(T) + 1)]
    if pts[-1] != T:
        pts.append(T)
    return pts


def _check_checkpoints(checkpoints, T: int) -> np.ndarray:
    if checkpoints is None:
        return np.array(default_checkpoints(T))
    cps = np.asarray(checkpoints, dtype=np.int64)
    if cps.ndim != 1 or cps.size == 0 or np.any(np.diff(cps) <= 0) or cps[0] < 1 or cps[-1] > T:
        raise InvalidParameterError("checkpoints must be strictly increasing within [1, T]")
    return cps


def run_episode(
    policy: Policy,
    env: Environment,
    T: int,
    rng: np.random.Generator,
    checkpoints: Optional[Sequence[int]] = None,
    record_actions: bool = False,
    per_round: bool = False,
) -> RegretTrace:
    """Play ``T`` rounds and accrue pseudoregret from the exact gaps.

    Loss vectors are drawn one dyadic block at a time from ``rng``.  Policies
    with ``block_constant`` get whole blocks through ``observe_block`` unless
    ``per_round`` is set.
    """
    if isinstance(T, bool) or not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidParameterError(f"T must be a positive integer, got {T!r}")
    if policy.K != env.K:
        raise InvalidParameterError(f"policy has K={policy.K} but environment has K={env.K}")
    gaps = env.gap_profile().gaps
    cps = _check_checkpoints(checkpoints, T)
    out = np.empty(len(cps))
    actions = np.empty(T, dtype=np.int64) if record_actions else None
    fast = policy.block_constant and not per_round
    ci = 0
    cum = 0.0
    for r in range(block_of(T) + 1):
        t0 = 1 << r
        t1 = min((t0 << 1) - 1, T)
        rows = env.sample(rng, t1 - t0 + 1)
        if fast:
            a = policy.choose(t0)
            g = gaps[a]
            while ci < len(cps) and cps[ci] <= t1:
                out[ci] = cum + g * (cps[ci] - t0 + 1)
                ci += 1
            cum += g * (t1 - t0 + 1)
            if record_actions:
                actions[t0 - 1 : t1] = a
            policy.observe_block(t0, rows)
            continue
        for i, t in enumerate(range(t0, t1 + 1)):
            a = policy.choose(t)
            cum += gaps[a]
            if record_actions:
                actions[t - 1] = a
            policy.observe(t, rows[i])
            if ci < len(cps) and cps[ci] == t:
                out[ci] = cum
                ci += 1
    return RegretTrace(t=cps, regret=out, max_gap=max(gaps), actions=actions)


def _run_trial(args) -> RegretTrace:
    spec, env, T, env_seed, policy_seed, checkpoints = args
    policy = spec.build(env.K, np.random.default_rng(policy_seed))
    return run_episode(policy, env, T, np.random.default_rng(env_seed), checkpoints)


def run_trials(
    spec: PolicySpec,
    env: Environment,
    T: int,
    seeds: Sequence[tuple[int, int]],
    checkpoints: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> list[RegretTrace]:
    """Run one episode per ``(env_seed, policy_seed)`` pair, in seed order.

    With ``workers > 1`` episodes are spread over worker processes; each trial
    owns its seeds, so results do not depend on the worker count.
    """
    jobs = [(spec, env, T, int(es), int(ps), checkpoints) for es, ps in seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_trial(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
