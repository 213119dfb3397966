"""Exact output laws of the randomized-prefix policy and neighbor-ratio audits.

For a fixed loss prefix ``x_1..x_t`` the played actions are a function of the
block actions ``(A_0, ..., A_s)`` with ``s = block_of(t)``, so the audit works
with the law of that tuple, stored densely as a ``K**(s+1)`` array.  Pure DP
at level ``2*eta`` means every pointwise ratio between neighbor laws is at most
``exp(2*eta)``; for discrete laws the pointwise maximum dominates every event.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .algorithms import RpSoftmax, _check_law, _check_losses
from .core import InvalidParameterError, block_of, prefix_window, softmax_rows

RATIO_SLACK = 1e-9
LAW_BUDGET = 10**7
CACHE_LIMIT = 200_000


class AuditBudgetError(InvalidParameterError):
    """Raised when an exhaustive audit would evaluate too many laws."""


@dataclass
class OutputLaw:
    s: int
    probabilities: np.ndarray

    @property
    def K(self) -> int:
        return self.probabilities.shape[0]

    def total(self) -> float:
        return math.fsum(self.probabilities.ravel().tolist())


def _block_cumsums(block_rows, r: int) -> np.ndarray:
    rows = _check_losses(block_rows, np.shape(block_rows)[-1])
    if rows.ndim != 2 or len(rows) != 1 << r:
        raise InvalidParameterError(f"block {r} needs exactly {1 << r} rows, got {len(rows)}")
    return np.cumsum(rows, axis=0)


def prefix_laws(block_rows, r: int, eta: float) -> tuple[range, np.ndarray]:
    """Softmax law of the next action for each prefix length in ``prefix_window(r)``."""
    window = prefix_window(r)
    cums = _block_cumsums(block_rows, r)
    return window, softmax_rows(cums[window.start - 1 : window.stop - 1], eta)


def exact_block_law(block_rows, r: int, eta: float) -> np.ndarray:
    """Law of the action selected at the end of block ``r`` from its rows.

    Uniform average, over the prefix lengths the policy may draw, of the
    softmax of the corresponding prefix sums.
    """
    _, laws = prefix_laws(block_rows, r, eta)
    return laws.mean(axis=0)


def exact_output_law(rows, eta: float, initial_law=None) -> OutputLaw:
    """Exact law of ``(A_0, ..., A_s)`` for the deterministic prefix ``rows``."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or len(rows) < 1:
        raise InvalidParameterError("dataset must be a non-empty (t, K) array")
    K = rows.shape[1]
    s = block_of(len(rows))
    law = np.asarray(_check_law(initial_law, K), dtype=float)
    # rows of the current block s never enter a completed selection
    for r in range(s):
        law = np.multiply.outer(law, exact_block_law(rows[(1 << r) - 1 : (1 << (r + 1)) - 1], r, eta))
    return OutputLaw(s=s, probabilities=law)


def _ratio_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a / b
    out[(a == 0) & (b == 0)] = 1.0
    out[(a > 0) & (b == 0)] = np.inf
    return out


def pointwise_ratio(law1, law2) -> float:
    """``max_a law1(a) / law2(a)`` with ``0/0 = 1``; ``inf`` flags a support mismatch."""
    a = np.asarray(getattr(law1, "probabilities", law1), dtype=float)
    b = np.asarray(getattr(law2, "probabilities", law2), dtype=float)
    if a.shape != b.shape:
        raise InvalidParameterError(f"laws live on different outcome spaces {a.shape} vs {b.shape}")
    return float(_ratio_array(a, b).max())


def total_variation(law1, law2) -> float:
    a = np.asarray(getattr(law1, "probabilities", law1), dtype=float)
    b = np.asarray(getattr(law2, "probabilities", law2), dtype=float)
    return 0.5 * float(np.abs(a - b).sum())


@dataclass
class AuditReport:
    K: int
    t: int
    eta: float
    grid: list[float]
    dataset_count: int
    exhaustive: bool
    pairs_checked: int
    max_ratio: float
    bound: float
    witness: Optional[dict]
    passed: bool
    current_block_max_ratio: float
    current_block_identical: bool
    max_ratio_by_block: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_ratio_by_block"] = {str(k): v for k, v in self.max_ratio_by_block.items()}
        d["pass"] = d.pop("passed")
        return d


def _grid_rows(K: int, grid: Sequence[float]) -> np.ndarray:
    vals = sorted({float(g) for g in grid})
    if not vals or vals[0] < 0 or vals[-1] > 1:
        raise InvalidParameterError(f"grid values must lie in [0, 1], got {list(grid)}")
    return np.array(list(itertools.product(vals, repeat=K)), dtype=float)


def check_enumeration_size(K: int, t: int) -> None:
    s = block_of(t)
    if s > 4 or K ** (s + 1) > 125:
        raise AuditBudgetError(
            f"dense output law over {K}^{s + 1} = {K ** (s + 1)} block-action tuples is too large "
            "(need s <= 4 and K^(s+1) <= 125)"
        )


def audit_sweep(
    K: int,
    t: int,
    eta: float,
    grid: Sequence[float] = (0.0, 1.0),
    base_dataset_count: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    initial_law=None,
    budget: int = LAW_BUDGET,
) -> AuditReport:
    """Compare exact output laws of every one-row neighbor of each base dataset.

    Base datasets have entries from ``grid``.  ``base_dataset_count=None`` (or a
    count at least the number of grid datasets) enumerates all of them;
    otherwise that many are drawn with ``rng``.  Every position is replaced by
    every other grid row.
    """
    if isinstance(t, bool) or not isinstance(t, (int, np.integer)) or t < 1:
        raise InvalidParameterError(f"t must be a positive integer, got {t!r}")
    if not (math.isfinite(eta) and eta > 0):
        raise InvalidParameterError(f"eta must be positive, got {eta!r}")
    check_enumeration_size(K, t)
    rows_grid = _grid_rows(K, grid)
    G = len(rows_grid)
    total = G**t
    exhaustive = base_dataset_count is None or base_dataset_count >= total
    n_base = total if exhaustive else int(base_dataset_count)
    estimate = n_base * (1 + t * (G - 1))
    if estimate > budget:
        raise AuditBudgetError(f"audit would evaluate about {estimate} laws (budget {budget})")
    if exhaustive:
        bases = itertools.product(range(G), repeat=t)
    else:
        if rng is None:
            raise InvalidParameterError("sampling base datasets needs an rng")
        bases = (tuple(int(v) for v in rng.integers(G, size=t)) for _ in range(n_base))

    s = block_of(t)
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def law_of(key):
        law = cache.get(key)
        if law is None:
            if len(cache) >= CACHE_LIMIT:
                cache.clear()
            law = exact_output_law(rows_grid[list(key)], eta, initial_law).probabilities
            cache[key] = law
        return law

    bound = math.exp(2 * eta)
    max_ratio = 1.0
    witness = None
    by_block = {r: 1.0 for r in range(s + 1)}
    current_identical = True
    pairs = 0
    positions = [(u, g) for u in range(t) for g in range(G)]
    pos_block = np.array([block_of(u + 1) for u, _ in positions])
    for base in bases:
        base_law = law_of(base)
        keep = [i for i, (u, g) in enumerate(positions) if g != base[u]]
        if not keep:
            continue
        nbs = [base[:u] + (g,) + base[u + 1 :] for u, g in (positions[i] for i in keep)]
        nb_laws = np.stack([law_of(nb) for nb in nbs])
        blocks = pos_block[keep]
        pairs += len(nbs)
        flat_base = np.broadcast_to(base_law, nb_laws.shape)
        fwd = _ratio_array(flat_base, nb_laws).reshape(len(nbs), -1)
        bwd = _ratio_array(nb_laws, flat_base).reshape(len(nbs), -1)
        worst = np.maximum(fwd.max(axis=1), bwd.max(axis=1))
        current = blocks == s
        if current.any() and not np.all(nb_laws[current] == base_law):
            current_identical = False
        for r in range(s + 1):
            sel = worst[blocks == r]
            if sel.size:
                by_block[r] = max(by_block[r], float(sel.max()))
        i = int(np.argmax(worst))
        if worst[i] > max_ratio:
            max_ratio = float(worst[i])
            forward = fwd[i].max() >= bwd[i].max()
            ratios, first, second = (fwd[i], base, nbs[i]) if forward else (bwd[i], nbs[i], base)
            witness = {
                "dataset": rows_grid[list(first)].tolist(),
                "neighbor": rows_grid[list(second)].tolist(),
                "position": positions[keep[i]][0] + 1,
                "outcome": [int(v) for v in np.unravel_index(int(np.argmax(ratios)), base_law.shape)],
            }
    return AuditReport(
        K=K,
        t=t,
        eta=float(eta),
        grid=sorted({float(g) for g in grid}),
        dataset_count=n_base,
        exhaustive=exhaustive,
        pairs_checked=pairs,
        max_ratio=max_ratio,
        bound=bound,
        witness=witness,
        passed=max_ratio <= bound * (1 + RATIO_SLACK),
        current_block_max_ratio=by_block[s],
        current_block_identical=current_identical,
        max_ratio_by_block=by_block,
    )


@dataclass
class PrefixAuditReport:
    K: int
    m: int
    eta: float
    max_ratio: float
    bound: float
    pairs_checked: int
    passed: bool


def prefix_mechanism_audit(K: int, m: int, eta: float, grid: Sequence[float] = (0.0, 1.0)) -> PrefixAuditReport:
    """Neighbor ratios of the softmax map at one fixed prefix length ``m``.

    The law depends on the data only through the prefix sum, so every neighbor
    pair is represented by ``(rest + x, rest + x')`` where ``rest`` ranges over
    all sums of ``m - 1`` grid rows and ``x, x'`` over all grid rows.
    """
    if m < 1:
        raise InvalidParameterError("m must be >= 1")
    rows_grid = _grid_rows(K, grid)
    rest = np.zeros((1, K))
    for _ in range(m - 1):
        rest = np.unique((rest[:, None, :] + rows_grid[None, :, :]).reshape(-1, K), axis=0)
    G = len(rows_grid)
    shape = (len(rest), G, G, K)
    a = np.broadcast_to(rest[:, None, None, :] + rows_grid[None, :, None, :], shape).reshape(-1, K)
    b = np.broadcast_to(rest[:, None, None, :] + rows_grid[None, None, :, :], shape).reshape(-1, K)
    ratios = _ratio_array(softmax_rows(a, eta), softmax_rows(b, eta))
    max_ratio = float(ratios.max())
    bound = math.exp(2 * eta)
    return PrefixAuditReport(
        K=K,
        m=m,
        eta=float(eta),
        max_ratio=max_ratio,
        bound=bound,
        pairs_checked=len(rest) * G * G,
        passed=max_ratio <= bound * (1 + RATIO_SLACK),
    )


def sample_output_law(
    rows, epsilon: float, n_runs: int, rng: np.random.Generator, initial_law=None
) -> np.ndarray:
    """Empirical law of ``(A_0, ..., A_s)`` from ``n_runs`` runs of :class:`RpSoftmax`."""
    rows = np.asarray(rows, dtype=float)
    t, K = rows.shape
    s = block_of(t)
    segments = [((1 << r), rows[(1 << r) - 1 : min((1 << (r + 1)) - 1, t)]) for r in range(s + 1)]
    counts = np.zeros(K ** (s + 1), dtype=np.int64)
    strides = [K ** (s - r) for r in range(s + 1)]
    for _ in range(n_runs):
        policy = RpSoftmax(K, epsilon, rng, initial_law)
        cell = 0
        for stride, (t0, seg) in zip(strides, segments):
            cell += stride * policy.choose(t0)
            policy.observe_block(t0, seg)
        counts[cell] += 1
    return (counts / n_runs).reshape((K,) * (s + 1))
