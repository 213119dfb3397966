"""Command-line front end: ``rpsoftmax {simulate,audit,fm,bounds,selftest}``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 a check or
audit failed, 3 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .algorithms import PolicySpec, default_checkpoints, run_trials
from .analysis import (
    fm_exact_curve,
    fm_monte_carlo_curve,
    inequality_suite,
    master_bound_value,
    regret_summary,
)
from .core import (
    ETA_CAP,
    InvalidParameterError,
    block_end,
    block_of,
    block_start,
    eta_from_epsilon,
    prefix_window,
    softmax_weights,
    theorem_bound,
)
from .environments import environment_from_spec, environment_to_spec
from .privacy_audit import audit_sweep

EXIT_OK, EXIT_INVALID, EXIT_FAILED, EXIT_IO = 0, 1, 2, 3
MASK64 = (1 << 64) - 1
CSV_HEADER = "algorithm,trial,t,pseudoregret\n"
FM_HEADER = "m,value,method,ci_halfwidth,samples\n"


class ConfigError(InvalidParameterError):
    pass


# ---------------------------------------------------------------- seeding

def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, algorithm_id: str, trial_index: int) -> int:
    """Stateless 64-bit seed for one (stream, trial).

    ``h = blake2b-64(algorithm_id)`` (little endian) and
    ``seed = sm(sm(sm(master) ^ h) ^ trial)`` with ``sm`` the splitmix64
    finalizer applied to ``x + 0x9E3779B97F4A7C15``; all arithmetic mod 2^64.
    """
    h = int.from_bytes(hashlib.blake2b(algorithm_id.encode("utf-8"), digest_size=8).digest(), "little")
    x = _splitmix64(int(master_seed) & MASK64)
    x = _splitmix64(x ^ h)
    return _splitmix64(x ^ (int(trial_index) & MASK64))


# ---------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    environment: dict
    epsilons: list[float]
    checkpoints: list[int]
    algorithms: list[PolicySpec]
    trials: int
    master_seed: int
    sections: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.checkpoints[-1]

    def resolved(self) -> dict:
        return {
            "environment": self.environment,
            "epsilon": self.epsilons,
            "checkpoints": self.checkpoints,
            "algorithms": [
                {k: v for k, v in asdict(a).items() if v is not None and k != "epsilon"} for a in self.algorithms
            ],
            "trials": self.trials,
            "master_seed": self.master_seed,
            **self.sections,
        }


TOP_KEYS = {
    "environment", "K", "epsilon", "horizon", "checkpoints", "algorithms",
    "trials", "master_seed", "audit", "fm", "bounds", "output_dir",
}
SECTION_KEYS = {
    "audit": {"K", "t", "epsilon", "grid", "base_dataset_count"},
    "fm": {"m_max", "epsilon", "samples", "method"},
    "bounds": {"K", "delta_min", "epsilon"},
}


def _int_field(value, name: str, lo: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < lo:
        raise ConfigError(f"{name}: expected an integer >= {lo}, got {value!r}")
    return value


def _parse_algorithm(item, i: int) -> PolicySpec:
    where = f"algorithms[{i}]"
    if isinstance(item, str):
        item = {"name": item}
    if not isinstance(item, dict) or "name" not in item:
        raise ConfigError(f"{where}: expected a name or an object with 'name'")
    allowed = {"name", "eta", "action"}
    extra = set(item) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    if item["name"] in ("rp_softmax", "laplace_rnm") and set(item) - {"name"}:
        raise ConfigError(f"{where}: private algorithms take epsilon from the top-level 'epsilon'")
    try:
        return PolicySpec(item["name"], epsilon=1.0 if item["name"] in ("rp_softmax", "laplace_rnm") else None,
                          eta=item.get("eta"), action=item.get("action"))
    except InvalidParameterError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_keys(raw: dict) -> dict:
    """Reject unknown top-level and section keys; return the known sections."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    extra = set(raw) - TOP_KEYS
    if extra:
        raise ConfigError(f"config: unknown keys {sorted(extra)}")
    sections = {}
    for name, keys in SECTION_KEYS.items():
        if name in raw:
            sec = raw[name]
            if not isinstance(sec, dict):
                raise ConfigError(f"{name}: expected an object")
            bad = set(sec) - keys
            if bad:
                raise ConfigError(f"{name}: unknown keys {sorted(bad)}")
            sections[name] = sec
    return sections


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a JSON experiment config; every error names the offending field."""
    sections = _check_keys(raw)
    if "environment" not in raw:
        raise ConfigError("environment: required")
    try:
        env = environment_from_spec(raw["environment"])
    except InvalidParameterError as exc:
        raise ConfigError(str(exc) if str(exc).startswith("environment") else f"environment: {exc}") from None
    if "K" in raw and raw["K"] != env.K:
        raise ConfigError(f"K: {raw['K']!r} does not match the environment's {env.K} actions")
    try:
        env.gap_profile()
    except InvalidParameterError as exc:
        raise ConfigError(f"environment: {exc}") from None

    eps = raw.get("epsilon", [1.0])
    eps = eps if isinstance(eps, list) else [eps]
    if not eps:
        raise ConfigError("epsilon: empty sweep")
    for i, e in enumerate(eps):
        if isinstance(e, bool) or not isinstance(e, (int, float)) or not math.isfinite(e) or e <= 0:
            raise ConfigError(f"epsilon[{i}]: expected a positive number, got {e!r}")
    eps = [float(e) for e in eps]
    if len(set(eps)) != len(eps):
        raise ConfigError("epsilon: duplicate values")

    if "checkpoints" in raw:
        cps = raw["checkpoints"]
        if not isinstance(cps, list) or not cps:
            raise ConfigError("checkpoints: expected a non-empty list")
        cps = [_int_field(c, f"checkpoints[{i}]", 1) for i, c in enumerate(cps)]
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigError("checkpoints: must be strictly increasing")
        if "horizon" in raw and _int_field(raw["horizon"], "horizon", 1) != cps[-1]:
            raise ConfigError("horizon: must equal the last checkpoint")
    else:
        if "horizon" not in raw:
            raise ConfigError("horizon: required when 'checkpoints' is absent")
        cps = default_checkpoints(_int_field(raw["horizon"], "horizon", 1))

    algs = raw.get("algorithms", ["rp_softmax"])
    if not isinstance(algs, list) or not algs:
        raise ConfigError("algorithms: expected a non-empty list")
    specs = [_parse_algorithm(a, i) for i, a in enumerate(algs)]
    for s in specs:
        if s.name == "fixed" and not (isinstance(s.action, int) and 0 <= s.action < env.K):
            raise ConfigError(f"algorithms: fixed action {s.action!r} out of range for K={env.K}")

    trials = _int_field(raw.get("trials", 1), "trials", 1)
    seed = _int_field(raw.get("master_seed", 0), "master_seed", 0)
    if seed > MASK64:
        raise ConfigError("master_seed: must fit in 64 bits")
    return ExperimentConfig(environment_to_spec(env), eps, cps, specs, trials, seed, sections)


def load_config(path: str) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from None
    return parse_config(raw)


# ---------------------------------------------------------------- output helpers

def _workers(n: int) -> int:
    if n < 0:
        raise ConfigError("--threads: must be >= 0")
    return n or (os.cpu_count() or 1)


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _eps_key(e: float) -> str:
    return f"epsilon={e!r}"


# ---------------------------------------------------------------- commands

def cmd_simulate(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> dict:
    """Run every (algorithm, epsilon, trial) episode; write ``results.csv`` and ``summary.json``.

    Non-private algorithms ignore epsilon and run once.  Within a trial all
    algorithms see the same loss sequence.
    """
    env = environment_from_spec(config.environment)
    profile = env.gap_profile()
    T = config.horizon
    env_seeds = [derive_seed(config.master_seed, "environment", i) for i in range(config.trials)]

    runs: list[tuple[Optional[float], PolicySpec]] = []
    for spec in config.algorithms:
        if spec.private:
            runs.extend((e, PolicySpec(spec.name, epsilon=e)) for e in config.epsilons)
        else:
            runs.append((None, spec))

    lines = [CSV_HEADER]
    summaries: dict[str, dict] = {}
    for eps, spec in runs:
        label = spec.label
        seeds = [(es, derive_seed(config.master_seed, label, i)) for i, es in enumerate(env_seeds)]
        traces = run_trials(spec, env, T, seeds, config.checkpoints, workers)
        for i, tr in enumerate(traces):
            for t, v in zip(tr.t.tolist(), tr.regret.tolist()):
                lines.append(f"{label},{i},{t},{v:.17g}\n")
        key = _eps_key(eps) if eps is not None else "non_private"
        summaries.setdefault(key, {})[label] = regret_summary(traces).to_dict()

    bounds = {}
    for e in config.epsilons:
        tight, relaxed = theorem_bound(profile.K, profile.delta_min, e)
        bounds[_eps_key(e)] = {"eta": eta_from_epsilon(e).eta, "tight": tight, "relaxed": relaxed}
    summary = {
        "version": __version__,
        "config": config.resolved(),
        "gap_profile": asdict(profile),
        "theorem_bounds": bounds,
        "summaries": summaries,
    }
    _write(out_dir / "results.csv", "".join(lines))
    _write(out_dir / "summary.json", _dump_json(summary))
    return summary


def cmd_audit(K: int, t: int, epsilon: float, grid: Sequence[float], seed: int,
              base_dataset_count: Optional[int] = None, out_dir: Optional[Path] = None,
              config: Optional[dict] = None) -> dict:
    eta = eta_from_epsilon(epsilon).eta
    rng = np.random.default_rng(derive_seed(seed, "audit", 0))
    report = audit_sweep(K, t, eta, grid, base_dataset_count=base_dataset_count, rng=rng)
    doc = {"version": __version__, "config": config or {}, "epsilon": float(epsilon), **report.to_dict()}
    if out_dir is not None:
        _write(out_dir / "audit.json", _dump_json(doc))
    return doc


def cmd_fm(env_spec: dict, m_max: int, epsilon: float, samples: int, seed: int,
           method: str = "auto", out_dir: Optional[Path] = None) -> list:
    """``F_1..F_m_max``; ``auto`` uses exact values while feasible, Monte Carlo after."""
    if m_max < 0:
        raise InvalidParameterError("m_max must be >= 0")
    if method not in ("auto", "exact", "monte_carlo"):
        raise InvalidParameterError(f"unknown method {method!r}")
    env = environment_from_spec(env_spec)
    eta = eta_from_epsilon(epsilon).eta
    rng = np.random.default_rng(derive_seed(seed, "fm", 0))
    est = []
    if m_max and method != "monte_carlo":
        m = m_max
        while m > 0:
            try:
                est = fm_exact_curve(env, m, eta)
                break
            except InvalidParameterError:
                if method == "exact":
                    raise
                m //= 2
    if len(est) < m_max:
        est += fm_monte_carlo_curve(env, m_max, eta, samples, rng, m_min=len(est) + 1)
    if out_dir is not None:
        rows = [FM_HEADER] + [
            f"{e.m},{e.value:.17g},{e.method},{e.ci_halfwidth:.17g},{e.samples}\n" for e in est
        ]
        _write(out_dir / "fm.csv", "".join(rows))
    return est


def cmd_bounds(K: int, delta_min: float, epsilon: float, out_dir: Optional[Path] = None) -> dict:
    params = eta_from_epsilon(epsilon)
    tight, relaxed = theorem_bound(K, delta_min, epsilon)
    doc = {
        "version": __version__,
        "config": {"K": K, "delta_min": delta_min, "epsilon": epsilon},
        "eta": params.eta,
        "tight": tight,
        "relaxed": relaxed,
        "master": master_bound_value(K, delta_min, params.eta),
    }
    if out_dir is not None:
        _write(out_dir / "bounds.json", _dump_json(doc))
    return doc


def _core_invariants() -> dict:
    """Grid checks of the block structure, eta map, softmax and bound consistency."""
    failures = []
    for t in range(1, 1 << 12):
        r = block_of(t)
        if not (block_start(r) <= t <= block_end(r)):
            failures.append(f"block_of({t})")
    for r in range(0, 40):
        w = prefix_window(r)
        if len(w) != (1 if r == 0 else 1 << (r - 1)) or w[-1] != 1 << r:
            failures.append(f"prefix_window({r})")
    for e in np.geomspace(1e-4, 1e3, 200).tolist():
        eta = eta_from_epsilon(e).eta
        if not (0 < eta <= ETA_CAP and eta <= e / 2):
            failures.append(f"eta({e})")
        for K in (2, 3, 10, 1000):
            for d in (0.01, 0.2, 1.0):
                if 1 + 4 * master_bound_value(K, d, eta) != theorem_bound(K, d, e)[0]:
                    failures.append(f"bound consistency K={K} d={d} e={e}")
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = softmax_weights(rng.normal(0, 50, size=5), 0.125)
        if abs(p.sum() - 1) > 1e-12 or np.any(p < 0):
            failures.append("softmax normalization")
    return {"passed": not failures, "failures": failures[:20]}


def run_selftest(items: Optional[dict] = None) -> dict:
    """Inequality suite plus core invariant grids; ``items`` overrides the inequality set."""
    ineq = inequality_suite(items=items)
    core = _core_invariants()
    return {"version": __version__, "inequalities": ineq, "core": core, "passed": ineq["passed"] and core["passed"]}


# ---------------------------------------------------------------- argparse

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory (default: config 'output_dir', else current)")
    common.add_argument("--threads", type=int, default=1, help="worker processes; 0 = one per CPU")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")

    p = _Parser(prog="rpsoftmax", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="run regret experiments from a config")

    a = sub.add_parser("audit", parents=[common], help="exact privacy audit over neighboring datasets")
    a.add_argument("--K", type=int)
    a.add_argument("--t", type=int)
    a.add_argument("--epsilon", type=float)
    a.add_argument("--grid", type=_grid)
    a.add_argument("--base-count", type=int, dest="base_dataset_count")

    f = sub.add_parser("fm", parents=[common], help="tabulate F_m for the configured environment")
    f.add_argument("--env", help="inline JSON environment (instead of --config)")
    f.add_argument("--m-max", type=int, dest="m_max")
    f.add_argument("--epsilon", type=float)
    f.add_argument("--samples", type=int)
    f.add_argument("--method", choices=("auto", "exact", "monte_carlo"))

    b = sub.add_parser("bounds", parents=[common], help="print the explicit regret bounds")
    b.add_argument("--K", type=int)
    b.add_argument("--delta-min", type=float, dest="delta_min")
    b.add_argument("--epsilon", type=float)

    sub.add_parser("selftest", parents=[common], help="run the inequality and invariant suites")
    return p


def _pick(args, section: dict, name: str, default=None, required=True):
    v = getattr(args, name, None)
    if v is None:
        v = section.get(name, default)
    if v is None and required:
        raise ConfigError(f"{name}: required (flag or config section)")
    return v


def _raw_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from None
    _check_keys(raw)
    return raw


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        workers = _workers(args.threads)
        raw = _raw_config(args.config)
        out = Path(args.out or raw.get("output_dir") or ".")
        if args.command == "simulate":
            if not args.config:
                raise ConfigError("simulate: --config is required")
            cfg = parse_config(raw)
            if args.seed is not None:
                cfg.master_seed = _int_field(args.seed, "--seed") & MASK64
            cmd_simulate(cfg, out, workers)
            print(f"wrote {out / 'results.csv'} and {out / 'summary.json'}")
            return EXIT_OK

        seed = args.seed if args.seed is not None else raw.get("master_seed", 0)

        if args.command == "audit":
            sec = raw.get("audit", {})
            K = _pick(args, sec, "K", raw.get("K"))
            t = _pick(args, sec, "t")
            eps = _pick(args, sec, "epsilon")
            grid = _pick(args, sec, "grid", [0.0, 1.0])
            count = _pick(args, sec, "base_dataset_count", required=False)
            resolved = {"K": K, "t": t, "epsilon": eps, "grid": grid, "base_dataset_count": count, "seed": seed}
            doc = cmd_audit(K, t, eps, grid, seed, count, out, resolved)
            print(json.dumps({k: doc[k] for k in ("K", "t", "eta", "max_ratio", "bound", "pass")}))
            return EXIT_OK if doc["pass"] else EXIT_FAILED

        if args.command == "fm":
            sec = raw.get("fm", {})
            if args.env:
                try:
                    env_spec = json.loads(args.env)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"--env: not valid JSON ({exc})") from None
            elif "environment" in raw:
                env_spec = raw["environment"]
            else:
                raise ConfigError("environment: give --env or a config with 'environment'")
            m_max = _pick(args, sec, "m_max")
            eps = _pick(args, sec, "epsilon", raw.get("epsilon") if not isinstance(raw.get("epsilon"), list) else None)
            samples = _pick(args, sec, "samples", 10**4)
            method = _pick(args, sec, "method", "auto")
            est = cmd_fm(env_spec, m_max, eps, samples, seed, method, out)
            print(f"wrote {len(est)} rows to {out / 'fm.csv'}")
            return EXIT_OK

        if args.command == "bounds":
            sec = raw.get("bounds", {})
            K = _pick(args, sec, "K", raw.get("K"))
            d = _pick(args, sec, "delta_min")
            eps = _pick(args, sec, "epsilon")
            print(_dump_json(cmd_bounds(K, d, eps, out)), end="")
            return EXIT_OK

        report = run_selftest()
        print(_dump_json(report), end="")
        return EXIT_OK if report["passed"] else EXIT_FAILED
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
