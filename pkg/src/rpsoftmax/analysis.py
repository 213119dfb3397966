"""Analytical quantities of the regret analysis and their empirical checks.

``F_m`` is the expected gap-weighted softmax mass after ``m`` i.i.d. rounds:
``E[sum_j gap_j * P_mj]`` with ``P_m = softmax(-eta * D_m)`` and ``D_mj`` the
cumulative loss of action ``j`` minus that of the best action.  Confidence
intervals are two-sided Hoeffding intervals at 99%; empirical-variance
intervals are reported alongside for diagnostics only.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .algorithms import PolicySpec, RegretTrace, run_trials
from .core import (
    GapProfile,
    InvalidParameterError,
    _check_bound_domain,
    eta_from_epsilon,
    softmax_rows,
    theorem_bound,
)
from .environments import Environment, enumerate_outcomes

CONFIDENCE = 0.99
STATE_BUDGET = 10**6
SEQUENCE_BUDGET = 2 * 10**5
TAIL_STOP = 1e-6
Z_99 = 2.5758293035489004


def hoeffding_halfwidth(value_range: float, n: int, confidence: float = CONFIDENCE) -> float:
    """Two-sided Hoeffding halfwidth for a mean of ``n`` variables in an interval of length ``value_range``."""
    return value_range * math.sqrt(math.log(2 / (1 - confidence)) / (2 * n))


@dataclass
class FmEstimate:
    m: int
    value: float
    method: str
    ci_halfwidth: float
    samples: int


@dataclass
class BoundCheck:
    """``passed`` iff ``lhs_upper <= rhs + slack_used``."""

    name: str
    lhs: float
    lhs_upper: float
    rhs: float
    slack_used: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_eta(eta: float) -> float:
    if not (math.isfinite(eta) and eta > 0):
        raise InvalidParameterError(f"eta must be positive, got {eta!r}")
    return float(eta)


def gap_weighted_mass(diffs: np.ndarray, eta: float, gaps: Sequence[float]) -> np.ndarray:
    """``sum_j gap_j * P_mj`` for each row of cumulative gaps ``diffs``."""
    return softmax_rows(diffs, eta) @ np.asarray(gaps, dtype=float)


def _diff_support(env: Environment, profile: GapProfile) -> tuple[np.ndarray, np.ndarray]:
    atoms, probs = env.support()
    return atoms - atoms[:, [profile.best_action]], probs


def fm_exact_curve(
    env: Environment,
    m_max: int,
    eta: float,
    profile: Optional[GapProfile] = None,
    state_budget: int = STATE_BUDGET,
    stop_at_budget: bool = False,
) -> list[FmEstimate]:
    """Exact ``F_1, ..., F_m_max`` by propagating the law of the cumulative gaps.

    Identical gap vectors are merged after every round, so binary losses stay
    polynomial in ``m``.  When the number of candidate states would exceed
    ``state_budget`` this raises, or with ``stop_at_budget`` returns the
    estimates computed so far.  ``samples`` holds the number of distinct states.
    """
    eta = _check_eta(eta)
    profile = profile or env.gap_profile()
    steps, step_p = _diff_support(env, profile)
    states = np.zeros((1, env.K))
    probs = np.ones(1)
    out = []
    for m in range(1, m_max + 1):
        if len(states) * len(step_p) > state_budget:
            if stop_at_budget:
                break
            raise InvalidParameterError(
                f"exact F_{m} needs {len(states) * len(step_p)} states (budget {state_budget})"
            )
        cand = (states[:, None, :] + steps[None, :, :]).reshape(-1, env.K)
        cand_p = (probs[:, None] * step_p[None, :]).reshape(-1)
        states, inverse = np.unique(cand, axis=0, return_inverse=True)
        probs = np.bincount(inverse.reshape(-1), weights=cand_p, minlength=len(states))
        terms = gap_weighted_mass(states, eta, profile.gaps)
        value = math.fsum((probs * terms).tolist())
        out.append(FmEstimate(m=m, value=value, method="exact", ci_halfwidth=0.0, samples=len(states)))
    return out


def fm_exact(
    env: Environment,
    m: int,
    eta: float,
    profile: Optional[GapProfile] = None,
    strategy: str = "merge",
    budget: int = STATE_BUDGET,
) -> FmEstimate:
    """Exact ``F_m``.

    ``strategy="merge"`` propagates merged gap states (see :func:`fm_exact_curve`);
    ``strategy="enumerate"`` sums over all ``|support|**m`` outcome sequences
    and refuses when that count exceeds ``budget``.
    """
    if m < 1:
        raise InvalidParameterError("m must be >= 1")
    if strategy == "merge":
        return fm_exact_curve(env, m, eta, profile, budget)[-1]
    if strategy != "enumerate":
        raise InvalidParameterError(f"unknown strategy {strategy!r}")
    eta = _check_eta(eta)
    profile = profile or env.gap_profile()
    probs, totals = enumerate_outcomes(env, m, budget)
    diffs = totals - totals[:, [profile.best_action]]
    value = math.fsum((probs * gap_weighted_mass(diffs, eta, profile.gaps)).tolist())
    return FmEstimate(m=m, value=value, method="exact", ci_halfwidth=0.0, samples=len(probs))


def fm_monte_carlo_curve(
    env: Environment,
    m_max: int,
    eta: float,
    n_samples: int,
    rng: np.random.Generator,
    profile: Optional[GapProfile] = None,
    m_min: int = 1,
    chunk: int = 64,
) -> list[FmEstimate]:
    """Monte Carlo ``F_m`` for ``m_min <= m <= m_max`` from ``n_samples`` shared paths.

    Each estimate is an average over independent paths; estimates at different
    ``m`` reuse the same paths and are therefore correlated.
    """
    eta = _check_eta(eta)
    if n_samples < 100:
        raise InvalidParameterError("n_samples must be >= 100")
    profile = profile or env.gap_profile()
    best = profile.best_action
    hw = hoeffding_halfwidth(profile.max_gap, n_samples)
    totals = np.zeros((n_samples, env.K))
    out = []
    m = 0
    while m < m_max:
        n_rows = min(chunk, m_max - m)
        rows = env.sample(rng, n_samples * n_rows).reshape(n_samples, n_rows, env.K)
        paths = totals[:, None, :] + np.cumsum(rows, axis=1)
        for k in range(n_rows):
            m += 1
            if m >= m_min:
                diffs = paths[:, k, :] - paths[:, k, [best]]
                terms = gap_weighted_mass(diffs, eta, profile.gaps)
                out.append(FmEstimate(m, math.fsum(terms.tolist()) / n_samples, "monte_carlo", hw, n_samples))
        totals = paths[:, -1, :]
    return out


def fm_monte_carlo(
    env: Environment,
    m: int,
    eta: float,
    n_samples: int,
    rng: np.random.Generator,
    profile: Optional[GapProfile] = None,
) -> FmEstimate:
    """Monte Carlo ``F_m`` from ``n_samples`` independent ``m``-round prefixes."""
    eta = _check_eta(eta)
    if m < 1:
        raise InvalidParameterError("m must be >= 1")
    if n_samples < 100:
        raise InvalidParameterError("n_samples must be >= 100")
    profile = profile or env.gap_profile()
    best = profile.best_action
    batch = max(1, 2_000_000 // (m * env.K))
    parts = []
    done = 0
    while done < n_samples:
        n = min(batch, n_samples - done)
        totals = env.sample(rng, n * m).reshape(n, m, env.K).sum(axis=1)
        parts.extend(gap_weighted_mass(totals - totals[:, [best]], eta, profile.gaps).tolist())
        done += n
    return FmEstimate(
        m=m,
        value=math.fsum(parts) / n_samples,
        method="monte_carlo",
        ci_halfwidth=hoeffding_halfwidth(profile.max_gap, n_samples),
        samples=n_samples,
    )


def fm_sequence(
    env: Environment,
    m_min: int,
    eta: float,
    rng: Optional[np.random.Generator],
    mc_samples: int = 10**4,
    stop_below: float = TAIL_STOP,
    m_cap: int = 1 << 16,
    state_budget: int = SEQUENCE_BUDGET,
    profile: Optional[GapProfile] = None,
) -> tuple[list[FmEstimate], dict]:
    """``F_m`` for ``m = 1, 2, ...`` up to at least ``m_min``, extended until ``F_M < stop_below``.

    Exact values are used while the state budget allows, Monte Carlo (on
    shared paths, needs ``rng``) after that.  Returns the estimates and a tail
    report: the tail beyond ``M`` is bounded by ``F_M * 2 / (eta * delta_min)``.
    """
    profile = profile or env.gap_profile()
    target = max(1, m_min)
    while True:
        est = fm_exact_curve(env, target, eta, profile, state_budget, stop_at_budget=True)
        if len(est) < target or est[-1].value < stop_below or target >= m_cap:
            break
        target = min(2 * target, m_cap)
    if not est or (len(est) < target and est[-1].value >= stop_below):
        if rng is None:
            raise InvalidParameterError("exact F_m exceeds the state budget; pass rng to continue by simulation")
        m_done = len(est)
        while True:
            est += fm_monte_carlo_curve(env, target, eta, mc_samples, rng, profile, m_min=m_done + 1)
            m_done = target
            if est[-1].value < stop_below or target >= m_cap:
                break
            target = min(2 * target, m_cap)
    last = est[-1]
    mc_terms = [e for e in est if e.method == "monte_carlo"]
    report = {
        "M": last.m,
        "F_M": last.value,
        "tail_allowance": last.value * 2 / (eta * profile.delta_min),
        "converged": last.value < stop_below,
        "exact_terms": len(est) - len(mc_terms),
        "monte_carlo_terms": len(mc_terms),
        # the Monte Carlo part of the sum is one average over shared paths, so
        # its Hoeffding halfwidth is the sum of the per-term halfwidths
        "monte_carlo_sum_halfwidth": math.fsum(e.ci_halfwidth for e in mc_terms),
    }
    return est, report


def master_bound_value(K: int, delta_min: float, eta: float) -> float:
    """``200 ln K / delta_min + 4 ln K / eta``: bound on the sum of all ``F_m``."""
    _check_bound_domain(K, delta_min)
    eta = _check_eta(eta)
    log_k = math.log(K)
    return 200 * log_k / delta_min + 4 * log_k / eta


def hoeffding_bound(m: int, mu: float) -> float:
    """``exp(-m mu^2 / 8)``: bound on ``P(sum of m [-1,1] variables with mean mu <= m mu / 2)``."""
    if m < 1 or not (0 < mu <= 1):
        raise InvalidParameterError(f"need m >= 1 and mu in (0, 1], got m={m}, mu={mu}")
    return math.exp(-m * mu * mu / 8)


def hoeffding_check(
    env: Environment,
    m: int,
    n_trials: int,
    rng: np.random.Generator,
    action: Optional[int] = None,
    batch: int = 20_000,
) -> BoundCheck:
    """Empirical ``P(sum_s U_s <= m mu / 2)`` with ``U_s = X_s[action] - X_s[best]``.

    Passes when the empirical frequency exceeds ``hoeffding_bound`` by at most
    three binomial standard deviations computed at the bound.
    """
    profile = env.gap_profile()
    best = profile.best_action
    if action is None:
        # the suboptimal action with the smallest gap is the hardest case
        action = min((j for j in range(env.K) if j != best), key=lambda j: profile.gaps[j])
    if action == best:
        raise InvalidParameterError("action must differ from the best action")
    mu = profile.gaps[action]
    bound = hoeffding_bound(m, mu)
    hits = 0
    done = 0
    while done < n_trials:
        n = min(batch, n_trials - done)
        rows = env.sample(rng, n * m).reshape(n, m, env.K)
        sums = (rows[:, :, action] - rows[:, :, best]).sum(axis=1)
        hits += int(np.count_nonzero(sums <= m * mu / 2))
        done += n
    freq = hits / n_trials
    slack = 3 * math.sqrt(bound * (1 - bound) / n_trials)
    return BoundCheck(
        name="hoeffding",
        lhs=freq,
        lhs_upper=freq,
        rhs=bound,
        slack_used=slack,
        passed=freq <= bound + slack,
        details={"m": m, "mu": mu, "action": action, "trials": n_trials},
    )


# elementary inequalities: each item maps to (points, margins); margins must be >= 0

def _item_i(n):
    x = np.linspace(0.0, 1.0, n)
    return x, -np.expm1(-x) - x / 2


def _item_ii(n):
    x = np.linspace(0.0, 1.0, n)
    return x, 1 - x / 2 - np.exp(-x)


def _item_iii(n):
    u = np.linspace(0.0, 1.0, n, endpoint=False)
    return u, -u - np.log1p(-u)


def _geometric_tail(x: float) -> float:
    """``sum_{k>=1} exp(-k x)`` by direct summation until terms fall below 1e-17 of the sum."""
    n_terms = int(math.ceil((math.log(1e17) + max(0.0, math.log(1 / x)) + 1) / x))
    return math.fsum(np.exp(-x * np.arange(1, n_terms + 1)).tolist())


def _item_iv(n, n_max: int = 50):
    x = np.linspace(0.0, 1.0, n + 1)[1:]
    base = np.array([_geometric_tail(v) for v in x])
    ns = np.arange(n_max + 1)
    # sum_{m>k} e^{-mx} = e^{-kx} * sum_{j>=1} e^{-jx}
    scale = np.exp(-np.outer(ns, x))
    margins = 2 * scale / x - scale * base
    # report margins relative to the right-hand side so tiny e^{-kx} do not hide violations
    rel = margins / (2 * scale / x)
    pts = np.stack(np.broadcast_arrays(ns[:, None], x[None, :]), axis=-1).reshape(-1, 2)
    return pts, rel.reshape(-1)


def _item_v(n_max: int = 10**6):
    K = np.arange(2, n_max + 1, dtype=float)
    return K, 2 * np.log(K) - np.log(K + 1)


INEQUALITIES: dict[str, Callable[[int], tuple[np.ndarray, np.ndarray]]] = {
    "i": _item_i,
    "ii": _item_ii,
    "iii": _item_iii,
    "iv": _item_iv,
    "v": lambda n: _item_v(),
}


def inequality_suite(n_grid: int = 10**4, items: Optional[dict] = None) -> dict:
    """Grid-check the elementary inequalities; report the worst margin of each item."""
    items = INEQUALITIES if items is None else items
    report = {}
    for name, fn in items.items():
        pts, margins = fn(n_grid)
        k = int(np.argmin(margins))
        worst_at = pts[k].tolist() if np.ndim(pts) > 1 else float(pts[k])
        report[name] = {
            "worst_margin": float(margins[k]),
            "worst_at": worst_at,
            "points": int(len(margins)),
            "passed": bool(np.all(margins >= 0)),
        }
    report["passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    return report


@dataclass
class RegretSummary:
    t: np.ndarray
    mean: np.ndarray
    hoeffding_halfwidth: np.ndarray
    normal_halfwidth: np.ndarray
    n: int

    @property
    def upper(self) -> np.ndarray:
        return self.mean + self.hoeffding_halfwidth

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "mean": self.mean.tolist(),
            "hoeffding_halfwidth": self.hoeffding_halfwidth.tolist(),
            "normal_halfwidth": self.normal_halfwidth.tolist(),
            "n": self.n,
        }


def regret_summary(traces: Sequence[RegretTrace], confidence: float = CONFIDENCE) -> RegretSummary:
    """Per-checkpoint mean with Hoeffding (range ``[0, t * max_gap]``) and normal CIs."""
    if not traces:
        raise InvalidParameterError("need at least one trace")
    t = traces[0].t
    for tr in traces[1:]:
        if not np.array_equal(tr.t, t):
            raise InvalidParameterError("traces have mismatched checkpoints")
    data = np.stack([tr.regret for tr in traces])
    n = len(traces)
    mean = np.array([math.fsum(col) / n for col in data.T.tolist()])
    max_gap = max(tr.max_gap for tr in traces)
    hw = np.array([hoeffding_halfwidth(float(ti) * max_gap, n, confidence) for ti in t])
    sd = data.std(axis=0, ddof=1) if n > 1 else np.zeros(len(t))
    z = Z_99 if confidence == CONFIDENCE else _normal_quantile(0.5 + confidence / 2)
    return RegretSummary(t=np.array(t), mean=mean, hoeffding_halfwidth=hw, normal_halfwidth=z * sd / math.sqrt(n), n=n)


def _normal_quantile(p: float) -> float:
    from statistics import NormalDist

    return NormalDist().inv_cdf(p)


def _seed_pairs(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    raw = rng.integers(0, 2**63 - 1, size=(n, 2))
    return [(int(a), int(b)) for a, b in raw]


def clock_bound_check(
    env: Environment,
    epsilon: float,
    T: int,
    n_trials: int,
    rng: np.random.Generator,
    workers: int = 1,
    fm_samples: int = 10**4,
) -> BoundCheck:
    """Monte Carlo regret of the policy against ``1 + 4 * sum_m F_m``.

    The sum runs to ``M >= T`` and is extended until ``F_M < 1e-6``; the
    remaining tail allowance is added and reported.
    """
    params = eta_from_epsilon(epsilon)
    profile = env.gap_profile()
    traces = run_trials(PolicySpec("rp_softmax", epsilon=params.epsilon), env, T, _seed_pairs(rng, n_trials), [T], workers)
    finals = [tr.final for tr in traces]
    mean = math.fsum(finals) / n_trials
    hw = hoeffding_halfwidth(T * profile.max_gap, n_trials)
    est, tail = fm_sequence(env, T, params.eta, rng, mc_samples=fm_samples, profile=profile)
    fm_sum = math.fsum(e.value for e in est)
    # with Monte Carlo terms the right-hand side is itself an estimate; its
    # halfwidth (4 * monte_carlo_sum_halfwidth) is reported in the details
    rhs = 1 + 4 * (fm_sum + tail["tail_allowance"])
    return BoundCheck(
        name="clock_reduction",
        lhs=mean,
        lhs_upper=mean + hw,
        rhs=rhs,
        slack_used=0.0,
        passed=mean + hw <= rhs,
        details={"T": T, "trials": n_trials, "eta": params.eta, "fm_sum": fm_sum, **tail},
    )


def master_bound_check(
    env: Environment,
    eta: float,
    tail_tol: float = 1e-4,
    rng: Optional[np.random.Generator] = None,
    mc_samples: int = 10**4,
    m_cap: int = 1 << 16,
    state_budget: int = SEQUENCE_BUDGET,
) -> BoundCheck:
    """``sum_m F_m`` against the master-lemma value.

    The sum is extended until the tail allowance drops below ``tail_tol``.
    Terms are exact while the state budget allows; any Monte Carlo terms (which
    need ``rng``) add their 99% halfwidth to the upper confidence value.
    """
    eta = _check_eta(eta)
    if eta > 0.125:
        raise InvalidParameterError("the master-lemma value assumes eta <= 1/8")
    profile = env.gap_profile()
    stop = tail_tol * eta * profile.delta_min / 2
    est, tail = fm_sequence(env, 64, eta, rng, mc_samples, stop, m_cap, state_budget, profile)
    total = math.fsum(e.value for e in est)
    upper = total + tail["monte_carlo_sum_halfwidth"] + tail["tail_allowance"]
    rhs = master_bound_value(profile.K, profile.delta_min, eta)
    return BoundCheck(
        name="master_lemma",
        lhs=total,
        lhs_upper=upper,
        rhs=rhs,
        slack_used=0.0,
        passed=upper <= rhs,
        details={"eta": eta, **tail},
    )


def theorem_bound_check(
    env: Environment,
    epsilon: float,
    T: int,
    n_trials: int,
    rng: np.random.Generator,
    workers: int = 1,
    checkpoints: Optional[Sequence[int]] = None,
) -> tuple[BoundCheck, RegretSummary]:
    """Upper 99% confidence limit of the mean regret at ``T`` against the explicit bound."""
    profile = env.gap_profile()
    cps = sorted(set(checkpoints or []) | {T})
    traces = run_trials(PolicySpec("rp_softmax", epsilon=epsilon), env, max(cps), _seed_pairs(rng, n_trials), cps, workers)
    summary = regret_summary(traces)
    i = cps.index(T)
    tight, relaxed = theorem_bound(profile.K, profile.delta_min, epsilon)
    upper = float(summary.upper[i])
    check = BoundCheck(
        name="theorem",
        lhs=float(summary.mean[i]),
        lhs_upper=upper,
        rhs=tight,
        slack_used=0.0,
        passed=upper <= tight,
        details={"T": T, "trials": n_trials, "relaxed": relaxed},
    )
    return check, summary
