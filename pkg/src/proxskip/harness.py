"""Experiment harness: JSON configs in, CSV metric files plus a manifest out.

Every run is a pure function of the config (problems are synthesized or
loaded deterministically, all randomness is counter-based), so re-running a
config reproduces every CSV byte for byte, regardless of ``--jobs``.  The
manifest additionally records wall-clock times, which are the one
intentionally non-reproducible field.
"""

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._backend import backend_name
from . import decentralized as dec
from .federated import run_gd_baseline, run_local_gd, run_scaffnew, run_scaffold
from .problems import (LogisticProblem, heterogeneous_split, parse_libsvm,
                       synthetic_logistic, synthetic_quadratic)
from .prox import L1
from .records import read_csv
from .solvers import (ExactOracle, GaussianOracle, MinibatchOracle,
                      ProxSkipConfig, expected_smoothness_constants,
                      optimal_probability, reference_minimizer, run_proxskip,
                      run_sproxskip)

DEFAULT_SEEDS = list(range(1, 12))
DEFAULT_TARGET = 1e-6
DEFAULT_LAMBDA_RULE = 1e-4
MAX_AUTO_T = 20_000_000

CENTRAL_METHODS = {"proxskip", "sproxskip"}
FEDERATED_METHODS = {"gd", "local_gd", "scaffold", "scaffnew"}
DECENTRALIZED_METHODS = {"decentralized_scaffnew"}
ALL_METHODS = CENTRAL_METHODS | FEDERATED_METHODS | DECENTRALIZED_METHODS

# Floats exchanged per client per communication round (reported, not derived).
FLOATS_PER_ROUND = {"gd": "d", "local_gd": "d", "scaffold": "2d",
                    "scaffnew": "d", "proxskip": "d", "sproxskip": "d",
                    "decentralized_scaffnew": "d"}


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


@dataclass
class MethodSpec:
    name: str
    stepsize: object = "theoretical"  # "theoretical" | "tuned" | float
    p: float = None
    tau: int = None

    def label(self):
        return self.name


@dataclass
class ExperimentConfig:
    problem: dict
    methods: list
    seeds: list
    split: dict = None
    p_grid: list = None
    T: int = None
    rounds: int = None
    target: float = None
    oracle: dict = None
    topology: dict = None
    comm_budget: int = None
    log_every: int = 1
    out: str = "results"
    raw: dict = None


def _reject_unknown(section, allowed, path):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _norm_kind(kind):
    return str(kind).replace("-", "_")


def load_config(path):
    """Read, validate and apply defaults to a JSON experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    return parse_config(raw)


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    allowed = {"problem", "split", "methods", "p_grid", "T", "rounds", "target",
               "oracle", "topology", "seeds", "comm_budget", "log_every", "out"}
    _reject_unknown(raw, allowed, "config")

    problem = raw.get("problem")
    if not isinstance(problem, dict) or "kind" not in problem:
        raise ConfigError("problem: required object with a 'kind'")
    kind = _norm_kind(problem["kind"])
    prob_keys = {
        "synthetic_quadratic": {"kind", "d", "kappa", "n_samples", "seed",
                                "heterogeneity", "rotate"},
        "synthetic_logistic": {"kind", "n_samples", "d", "seed", "separation",
                               "flip", "lambda", "lambda_rule"},
        "libsvm": {"kind", "path", "max_samples", "max_features", "lambda",
                   "lambda_rule"},
    }
    if kind not in prob_keys:
        raise ConfigError(f"problem.kind: unknown kind {problem['kind']!r}")
    _reject_unknown(problem, prob_keys[kind], "problem")
    problem = dict(problem, kind=kind)

    methods_raw = raw.get("methods")
    if not methods_raw:
        raise ConfigError("methods: at least one method is required")
    methods = []
    for k, entry in enumerate(methods_raw):
        if isinstance(entry, str):
            entry = {"name": entry}
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError(f"methods[{k}]: expected a name or an object with one")
        _reject_unknown(entry, {"name", "stepsize", "p", "tau"}, f"methods[{k}]")
        name = _norm_kind(entry["name"])
        if name not in ALL_METHODS:
            raise ConfigError(f"methods[{k}].name: unknown method {entry['name']!r}")
        step = entry.get("stepsize", "theoretical")
        if not (step in ("theoretical", "tuned") or isinstance(step, (int, float))):
            raise ConfigError(f"methods[{k}].stepsize: expected "
                              f"'theoretical', 'tuned' or a number")
        methods.append(MethodSpec(name=name, stepsize=step,
                                  p=entry.get("p"), tau=entry.get("tau")))

    split = raw.get("split")
    if split is not None:
        _reject_unknown(split, {"n_clients", "mode", "seed"}, "split")
        if "n_clients" not in split:
            raise ConfigError("split.n_clients: required")

    oracle = raw.get("oracle")
    if oracle is not None:
        _reject_unknown(oracle, {"kind", "sigma", "batch"}, "oracle")
        okind = _norm_kind(oracle.get("kind", "exact"))
        if okind not in ("exact", "gaussian", "minibatch"):
            raise ConfigError(f"oracle.kind: unknown kind {oracle.get('kind')!r}")
        oracle = dict(oracle, kind=okind)

    topology = raw.get("topology")
    if topology is not None:
        _reject_unknown(topology, {"kind", "n", "rows", "cols", "edges"}, "topology")

    seeds = raw.get("seeds", DEFAULT_SEEDS)
    if not seeds:
        raise ConfigError("seeds: must be nonempty")

    target = raw.get("target")
    T = raw.get("T")
    if target is None and T is None:
        target = DEFAULT_TARGET
    log_every = int(raw.get("log_every", 1))
    if log_every < 1:
        raise ConfigError("log_every: must be >= 1")

    return ExperimentConfig(
        problem=problem, methods=methods, seeds=list(seeds), split=split,
        p_grid=raw.get("p_grid"), T=T, rounds=raw.get("rounds"), target=target,
        oracle=oracle, topology=topology, comm_budget=raw.get("comm_budget"),
        log_every=log_every, out=raw.get("out", "results"), raw=raw,
    )


def config_hash(cfg):
    blob = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_problem(spec):
    kind = spec["kind"]
    if kind == "synthetic_quadratic":
        return synthetic_quadratic(
            d=spec.get("d", 10), kappa=spec.get("kappa", 100.0),
            n_samples=spec.get("n_samples"), seed=spec.get("seed", 0),
            heterogeneity=spec.get("heterogeneity", 1.0),
            rotate=spec.get("rotate", True),
        )
    if kind == "synthetic_logistic":
        prob = synthetic_logistic(
            n_samples=spec.get("n_samples", 200), d=spec.get("d", 20),
            seed=spec.get("seed", 0), lam_rule=spec.get("lambda_rule", DEFAULT_LAMBDA_RULE),
            separation=spec.get("separation", 2.0), flip=spec.get("flip", 0.05),
        )
        if spec.get("lambda") is not None:
            prob = LogisticProblem(prob.data, prob.labels, float(spec["lambda"]))
        return prob
    if kind == "libsvm":
        text = Path(spec["path"]).read_bytes()
        X, y = parse_libsvm(text)
        if spec.get("max_samples"):
            X, y = X[: spec["max_samples"]], y[: spec["max_samples"]]
        if spec.get("max_features"):
            X = X[:, : spec["max_features"]]
        keep = np.abs(X).sum(axis=1) > 0
        X, y = X[keep], y[keep]
        if spec.get("lambda") is not None:
            return LogisticProblem(X, y, float(spec["lambda"]))
        plain = LogisticProblem(X, y, 0.0)
        lam = spec.get("lambda_rule", DEFAULT_LAMBDA_RULE) * plain.smoothness_constants().L
        return LogisticProblem(X, y, lam)
    raise ConfigError(f"problem.kind: unknown kind {kind!r}")


def build_split(cfg, problem):
    if cfg.split is None:
        return None
    labels = problem.labels if isinstance(problem, LogisticProblem) else None
    return heterogeneous_split(
        problem.n_samples, cfg.split["n_clients"],
        mode=cfg.split.get("mode", "round-robin"),
        seed=cfg.split.get("seed", 0), labels=labels,
    )


def build_topology(cfg, n_clients):
    spec = cfg.topology or {"kind": "ring", "n": n_clients}
    kind = _norm_kind(spec.get("kind", "ring"))
    if kind == "ring":
        return dec.ring(spec.get("n", n_clients))
    if kind == "complete":
        return dec.complete(spec.get("n", n_clients))
    if kind == "star":
        return dec.star(spec.get("n", n_clients))
    if kind == "grid":
        return dec.grid(spec["rows"], spec["cols"])
    if kind == "custom":
        return dec.custom(spec["n"], spec["edges"])
    raise ConfigError(f"topology.kind: unknown kind {spec.get('kind')!r}")


def build_oracle(cfg):
    if cfg.oracle is None or cfg.oracle["kind"] == "exact":
        return ExactOracle()
    if cfg.oracle["kind"] == "gaussian":
        return GaussianOracle(sigma=float(cfg.oracle.get("sigma", 1.0)))
    return MinibatchOracle(batch=int(cfg.oracle.get("batch", 1)))


def _auto_T(zeta, target):
    T = math.ceil(math.log(1.0 / target) / -math.log1p(-min(zeta, 0.5)))
    if T > MAX_AUTO_T:
        raise ConfigError(f"target implies T={T} > {MAX_AUTO_T}; set T explicitly")
    return T


def resolve_hyperparameters(cfg, method, problem, split, mix=None, p_override=None,
                            tuned_gamma=None):
    """Fill in gamma/p/tau/T for one method from its stepsize mode.

    Theoretical stepsizes: 1/L for gd, prox-skipping and its gossip variant,
    1/(tau L) for local_gd and scaffold.
    """
    info = problem.smoothness_constants()
    name = method.name
    p = p_override if p_override is not None else method.p
    oracle = build_oracle(cfg)

    if name in ("proxskip", "scaffnew", "gd"):
        gamma_theory = 1.0 / info.L
    elif name == "sproxskip":
        es = expected_smoothness_constants(oracle, problem)
        gamma_theory = 1.0 / es.A
    elif name in ("local_gd", "scaffold"):
        tau = method.tau or max(1, round(math.sqrt(info.kappa)))
        gamma_theory = 1.0 / (tau * info.L)
    elif name == "decentralized_scaffnew":
        gamma_theory = 1.0 / info.L
    else:
        raise ConfigError(f"unknown method {name}")

    if isinstance(method.stepsize, (int, float)):
        gamma = float(method.stepsize)
    elif method.stepsize == "tuned":
        if tuned_gamma is None:
            raise ConfigError(f"{name}: tuned stepsize requested but not tuned yet")
        gamma = tuned_gamma
    else:
        gamma = gamma_theory

    params = {"gamma": gamma}
    if name in ("proxskip", "sproxskip", "scaffnew"):
        if p is None:
            p = optimal_probability(info)
        params["p"] = p
        # expected number of local steps (or gradient steps) per round;
        # the round-based baselines use a fixed tau instead
        params["expected_local_steps"] = 1.0 / p
        zeta = min(gamma * info.mu, p * p)
    elif name == "gd":
        zeta = 1.0 - (1.0 - gamma * info.mu) ** 2
        params["p"] = 1.0
    elif name in ("local_gd", "scaffold"):
        tau = method.tau or max(1, round(math.sqrt(info.kappa)))
        params["tau"] = tau
        zeta = gamma * info.mu
    else:  # decentralized_scaffnew
        if mix is None:
            raise ConfigError("decentralized method needs a topology")
        if p is None:
            p = min(1.0, math.sqrt(1.0 / (mix.delta * info.kappa)))
        tau = method.tau or p / gamma
        params.update({"p": p, "tau": tau, "delta": mix.delta})
        zeta = min(gamma * info.mu, p * gamma * tau * mix.delta)

    if cfg.T is not None:
        T = int(cfg.T)
    else:
        T = _auto_T(zeta, cfg.target)
    if name in ("local_gd", "scaffold"):
        tau = params["tau"]
        params["rounds"] = int(cfg.rounds) if cfg.rounds is not None else max(1, math.ceil(T / tau))
    else:
        params["T"] = T
    return params


def execute_run(cfg, method, problem, split, mix, probe, seed, params):
    name = method.name
    oracle = build_oracle(cfg)
    if name == "proxskip":
        c = ProxSkipConfig(gamma=params["gamma"], p=params["p"], T=params["T"], seed=seed)
        return run_proxskip(problem, L1(0.0), c, probe=probe)
    if name == "sproxskip":
        c = ProxSkipConfig(gamma=params["gamma"], p=params["p"], T=params["T"], seed=seed)
        return run_sproxskip(problem, L1(0.0), oracle, c, probe=probe)
    if name == "gd":
        return run_gd_baseline(problem, params["gamma"], params["T"], probe=probe)
    if name == "scaffnew":
        c = ProxSkipConfig(gamma=params["gamma"], p=params["p"], T=params["T"], seed=seed)
        if isinstance(oracle, ExactOracle):
            return run_scaffnew(problem, split, c)
        return run_scaffnew(problem, split, c, oracle=oracle)
    if name == "local_gd":
        return run_local_gd(problem, split, params["gamma"], params["tau"],
                            params["rounds"], oracle=oracle, probe=probe, seed=seed)
    if name == "scaffold":
        return run_scaffold(problem, split, params["gamma"], params["tau"],
                            params["rounds"], oracle=oracle, probe=probe, seed=seed)
    if name == "decentralized_scaffnew":
        c = dec.DecentralizedConfig(gamma=params["gamma"], p=params["p"],
                                    T=params["T"], tau=params["tau"], seed=seed)
        return dec.run_decentralized_scaffnew(problem, split, mix, c, probe=probe)
    raise ConfigError(f"unknown method {name}")


def _error_at_budget(record, budget):
    """dist2 at the first row where the communication count reaches budget."""
    hits = np.nonzero(record.comm >= budget)[0]
    if len(hits) == 0:
        return float(record.dist2[-1])
    return float(record.dist2[hits[0]])


def tune_stepsize(cfg, method, problem, split, mix, probe, budget, grid=None):
    """Grid-search gamma in {2^k / L : k = -3..6}; best error at the budget.

    Deterministic: ties break toward the smaller stepsize; runs use the
    first configured seed.  Raises if every grid point diverges.
    """
    info = problem.smoothness_constants()
    if grid is None:
        grid = [2.0 ** k / info.L for k in range(-3, 7)]
    if not grid:
        raise ConfigError("tune: empty stepsize grid")
    seed = cfg.seeds[0]
    best_gamma, best_err = None, np.inf
    for gamma in sorted(grid):
        trial = MethodSpec(name=method.name, stepsize=gamma, p=method.p, tau=method.tau)
        try:
            params = resolve_hyperparameters(cfg, trial, problem, split, mix)
            rec = execute_run(cfg, trial, problem, split, mix, probe, seed, params)
        except (ValueError, FloatingPointError):
            continue
        if rec.diverged or not np.isfinite(rec.dist2[-1]):
            continue
        err = _error_at_budget(rec, budget)
        if np.isfinite(err) and err < best_err:
            best_gamma, best_err = gamma, err
    if best_gamma is None:
        raise RuntimeError(f"{method.name}: every stepsize in the grid diverged")
    return best_gamma


def _run_name(method, p_override, seed):
    tag = f"_p{p_override:g}" if p_override is not None else ""
    return f"{method.name}{tag}_s{seed}"


def run_experiment(cfg, out_dir=None, jobs=1):
    """Execute all (method [, p], seed) runs; write CSVs and a manifest.

    Divergent runs are truncated and flagged in the manifest; sibling runs
    are unaffected.  Returns the manifest dict.
    """
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg.problem)
    split = build_split(cfg, problem)
    mix = None
    if any(m.name in DECENTRALIZED_METHODS for m in cfg.methods):
        if split is None:
            raise ConfigError("decentralized methods need a split")
        mix = dec.mixing_matrix(build_topology(cfg, split.n))
    needs_split = {m.name for m in cfg.methods} & (FEDERATED_METHODS | DECENTRALIZED_METHODS)
    if needs_split - {"gd"} and split is None:
        raise ConfigError(f"split: required by methods {sorted(needs_split - {'gd'})}")
    probe = reference_minimizer(problem)

    budget = cfg.comm_budget or 200
    tuned = {}
    for method in cfg.methods:
        if method.stepsize == "tuned":
            tuned[method.name] = tune_stepsize(cfg, method, problem, split, mix,
                                               probe, budget)

    tasks = []
    for method in cfg.methods:
        p_values = [None]
        if cfg.p_grid and method.name in ("proxskip", "sproxskip", "scaffnew",
                                          "decentralized_scaffnew"):
            p_values = list(cfg.p_grid)
        for p_override in p_values:
            params = resolve_hyperparameters(cfg, method, problem, split, mix,
                                             p_override=p_override,
                                             tuned_gamma=tuned.get(method.name))
            for seed in cfg.seeds:
                tasks.append((method, p_override, seed, params))

    chash = config_hash(cfg)

    def _one(task):
        method, p_override, seed, params = task
        t0 = time.perf_counter()
        rec = execute_run(cfg, method, problem, split, mix, probe, seed, params)
        wall = time.perf_counter() - t0
        rec = rec.thin(cfg.log_every)
        name = _run_name(method, p_override, seed)
        path = out / f"{name}.csv"
        rec.write_csv(path)
        entry = {
            "file": path.name, "method": method.name, "seed": seed,
            "params": {k: params[k] for k in sorted(params)},
            "p_override": p_override, "diverged": bool(rec.diverged),
            "floats_per_round": FLOATS_PER_ROUND[method.name],
            "wall_clock_s": round(wall, 6),
        }
        return entry

    t0 = time.perf_counter()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_one, tasks))
    else:
        entries = [_one(task) for task in tasks]
    entries.sort(key=lambda e: e["file"])

    manifest = {
        "config": cfg.raw,
        "config_hash": chash,
        "backend": backend_name(),
        "tuned_stepsizes": tuned,
        "runs": entries,
        "total_wall_clock_s": round(time.perf_counter() - t0, 6),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


AXIS_COLUMNS = {"comm": "comm", "grad": "grads", "iter": "t"}


def emit_plot_data(records, axis):
    """Long-format ``method,seed,x,y`` CSV; y is dist2 clamped to 1e-30.

    On the comm axis, repeated x values are collapsed to the last row of
    each communication round.
    """
    if axis not in AXIS_COLUMNS:
        raise ValueError(f"axis must be one of {sorted(AXIS_COLUMNS)}, got {axis!r}")
    lines = ["method,seed,x,y"]
    for rec in records:
        xs = getattr(rec, AXIS_COLUMNS[axis])
        ys = np.maximum(rec.dist2, 1e-30)
        if axis == "comm":
            keep = np.ones(len(xs), dtype=bool)
            keep[:-1] = xs[1:] != xs[:-1]
            xs, ys = xs[keep], ys[keep]
        for x, y in zip(xs, ys):
            lines.append(f"{rec.method},{rec.seed},{int(x)},{float(y)!r}")
    return "\n".join(lines) + "\n"


def plotdata_from_manifest(manifest_path, axis):
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    records = []
    for entry in manifest["runs"]:
        rec = read_csv(manifest_path.parent / entry["file"],
                       method=entry["method"], seed=entry["seed"],
                       params=entry["params"])
        records.append(rec)
    return emit_plot_data(records, axis)
