"""I.i.d. loss-vector generators with exactly known means.

Every built-in environment has a finite support, which lets the analysis code
compute expectations by exact enumeration instead of simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import GapProfile, InvalidParameterError, gap_profile_from_means

KINDS = ("bernoulli", "deterministic", "finite_support", "correlated")
MAX_PRODUCT_ACTIONS = 20


def _as_loss_vector(values, what: str = "loss vector") -> tuple[float, ...]:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidParameterError(f"{what} must have at least two entries")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise InvalidParameterError(f"{what} entries must lie in [0, 1], got {arr.tolist()}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class Environment:
    """Round law of the loss process; immutable and safe to share."""

    kind: str
    means: tuple[float, ...]
    coupling: float = 0.0
    atoms: tuple[tuple[float, ...], ...] = ()
    probs: tuple[float, ...] = ()
    _means_arr: np.ndarray = field(init=False, repr=False, compare=False)
    _atoms_arr: np.ndarray = field(init=False, repr=False, compare=False)
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown environment kind {self.kind!r}")
        object.__setattr__(self, "_means_arr", np.array(self.means, dtype=float))
        if self.kind == "finite_support":
            object.__setattr__(self, "_atoms_arr", np.array(self.atoms, dtype=float))
            object.__setattr__(self, "_cdf", np.cumsum(self.probs))
        else:
            object.__setattr__(self, "_atoms_arr", np.empty((0, len(self.means))))
            object.__setattr__(self, "_cdf", np.empty(0))

    @property
    def K(self) -> int:
        return len(self.means)

    def gap_profile(self) -> GapProfile:
        return gap_profile_from_means(self.means)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. rounds as an ``(n, K)`` array.

        Stream consumption depends only on ``kind``, ``K`` and ``n``.
        """
        mu = self._means_arr
        if self.kind == "deterministic":
            return np.tile(mu, (n, 1))
        if self.kind == "bernoulli":
            return (rng.random((n, self.K)) < mu).astype(float)
        if self.kind == "correlated":
            u = rng.random((n, self.K + 2))
            shared = u[:, 1:2] < mu
            indep = u[:, 2:] < mu
            coupled = (u[:, 0] < self.coupling)[:, None]
            return np.where(coupled, shared, indep).astype(float)
        idx = np.searchsorted(self._cdf, rng.random(n), side="right")
        last = int(np.flatnonzero(np.asarray(self.probs) > 0)[-1])
        return self._atoms_arr[np.minimum(idx, last)]

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact finite-support form of the round law: ``(atoms (n, K), probs (n,))``."""
        if self.kind == "finite_support":
            return self._atoms_arr.copy(), np.array(self.probs)
        if self.kind == "deterministic":
            return self._means_arr[None, :].copy(), np.ones(1)
        acc: dict[tuple[float, ...], float] = {}
        weight_indep = 1.0 - self.coupling if self.kind == "correlated" else 1.0
        if weight_indep > 0:
            if self.K > MAX_PRODUCT_ACTIONS:
                raise InvalidParameterError(f"product support over K={self.K} actions is too large")
            for vec, p in _product_atoms(self.means):
                acc[vec] = acc.get(vec, 0.0) + weight_indep * p
        if self.kind == "correlated" and self.coupling > 0:
            for vec, p in _comonotone_atoms(self.means):
                acc[vec] = acc.get(vec, 0.0) + self.coupling * p
        keys = [k for k, p in acc.items() if p > 0]
        return np.array(keys, dtype=float), np.array([acc[k] for k in keys])


def _product_atoms(means: Sequence[float]) -> Iterable[tuple[tuple[float, ...], float]]:
    K = len(means)
    for bits in range(1 << K):
        vec = tuple(float((bits >> j) & 1) for j in range(K))
        p = math.prod(m if b else 1.0 - m for m, b in zip(means, vec))
        if p > 0:
            yield vec, p


def _comonotone_atoms(means: Sequence[float]) -> Iterable[tuple[tuple[float, ...], float]]:
    # coordinate j is 1{U < mu_j}; constant on each interval between sorted means
    cuts = sorted(set(means) | {0.0, 1.0})
    for lo, hi in zip(cuts, cuts[1:]):
        yield tuple(1.0 if m >= hi else 0.0 for m in means), hi - lo


def make_bernoulli(means: Sequence[float]) -> Environment:
    """Independent Bernoulli(mu_j) coordinates in every round."""
    return Environment("bernoulli", _as_loss_vector(means, "means"))


def make_correlated(base_means: Sequence[float], coupling: float) -> Environment:
    """Mixture of a shared-uniform (comonotone) draw and independent Bernoulli coordinates.

    With probability ``coupling`` one uniform ``U`` drives every coordinate as
    ``1{U < mu_j}``; otherwise coordinates are independent.  Marginal means are
    ``base_means`` either way.
    """
    means = _as_loss_vector(base_means, "means")
    coupling = float(coupling)
    if not (0.0 <= coupling <= 1.0):
        raise InvalidParameterError(f"coupling must lie in [0, 1], got {coupling}")
    return Environment("correlated", means, coupling=coupling)


def make_deterministic(vector: Sequence[float]) -> Environment:
    return Environment("deterministic", _as_loss_vector(vector))


def make_finite_support(atoms: Sequence[tuple[Sequence[float], float]]) -> Environment:
    """I.i.d. draws from a finite list of ``(loss_vector, probability)`` pairs."""
    if len(atoms) == 0:
        raise InvalidParameterError("need at least one atom")
    vectors = [_as_loss_vector(v, "atom") for v, _ in atoms]
    probs = [float(p) for _, p in atoms]
    if len({len(v) for v in vectors}) != 1:
        raise InvalidParameterError("atoms must share one length")
    if any(not math.isfinite(p) or p < 0 for p in probs):
        raise InvalidParameterError("atom probabilities must be nonnegative")
    if abs(math.fsum(probs) - 1.0) > 1e-12:
        raise InvalidParameterError(f"atom probabilities must sum to 1, got {math.fsum(probs)!r}")
    K = len(vectors[0])
    means = tuple(min(1.0, math.fsum(p * v[j] for v, p in zip(vectors, probs))) for j in range(K))
    return Environment("finite_support", means, atoms=tuple(vectors), probs=tuple(probs))


def sample_round(env: Environment, rng: np.random.Generator) -> np.ndarray:
    return env.sample(rng, 1)[0]


def enumerate_outcomes(env: Environment, m: int, budget: int = 10**6) -> tuple[np.ndarray, np.ndarray]:
    """All ``n**m`` outcome sequences of length ``m``.

    Returns ``(probs, totals)`` where ``totals[i]`` is the coordinatewise sum
    of the i-th sequence.  Sequences are ordered lexicographically by atom index.
    """
    atoms, probs = env.support()
    n = len(probs)
    if m < 0:
        raise InvalidParameterError("m must be nonnegative")
    if n**m > budget:
        raise InvalidParameterError(f"{n}^{m} = {n**m} sequences exceed the enumeration budget {budget}")
    seq_p = np.ones(1)
    totals = np.zeros((1, env.K))
    for _ in range(m):
        seq_p = (seq_p[:, None] * probs[None, :]).reshape(-1)
        totals = (totals[:, None, :] + atoms[None, :, :]).reshape(-1, env.K)
    return seq_p, totals


def environment_from_spec(spec: dict) -> Environment:
    """Build an environment from its JSON config form."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InvalidParameterError("environment: expected an object with a 'kind' field")
    kind = spec["kind"]
    allowed = {
        "bernoulli": {"kind", "means"},
        "correlated": {"kind", "means", "coupling"},
        "deterministic": {"kind", "vector"},
        "finite_support": {"kind", "atoms"},
    }
    if kind not in allowed:
        raise InvalidParameterError(f"environment.kind: unknown kind {kind!r}")
    extra = set(spec) - allowed[kind]
    missing = allowed[kind] - set(spec)
    if extra:
        raise InvalidParameterError(f"environment: unknown keys {sorted(extra)}")
    if missing:
        raise InvalidParameterError(f"environment: missing keys {sorted(missing)}")
    if kind == "bernoulli":
        return make_bernoulli(spec["means"])
    if kind == "correlated":
        return make_correlated(spec["means"], spec["coupling"])
    if kind == "deterministic":
        return make_deterministic(spec["vector"])
    atoms = []
    for i, atom in enumerate(spec["atoms"]):
        if not isinstance(atom, dict) or set(atom) != {"vector", "prob"}:
            raise InvalidParameterError(f"environment.atoms[{i}]: expected keys 'vector' and 'prob'")
        atoms.append((atom["vector"], atom["prob"]))
    return make_finite_support(atoms)


def environment_to_spec(env: Environment) -> dict:
    if env.kind == "bernoulli":
        return {"kind": "bernoulli", "means": list(env.means)}
    if env.kind == "correlated":
        return {"kind": "correlated", "means": list(env.means), "coupling": env.coupling}
    if env.kind == "deterministic":
        return {"kind": "deterministic", "vector": list(env.means)}
    return {
        "kind": "finite_support",
        "atoms": [{"vector": list(v), "prob": p} for v, p in zip(env.atoms, env.probs)],
    }
