"""Single-process prox-skipping solvers.

The central algorithm takes a gradient step shifted by a control variate
every iteration and applies the prox only on coin-flip iterations: with
probability p the iterate is pulled through prox_{(gamma/p) psi} and the
control variate absorbs the correction, otherwise the prox is skipped
outright.  The control variate converges to grad f at the solution, which
is what makes the optimum a fixed point despite all the skipping.

``run_proxskip``/``run_sproxskip`` drive the compiled loop; the step
functions mirror the same arithmetic at python level for tests and for the
exact one-step expectation verifier.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels, rng
from .prox import L1
from .problems import LogisticProblem, QuadraticProblem
from .records import build_record

DIV_LIMIT_SQ = 1e24  # squared norm threshold treated as divergence

_EMPTY_NOISE = np.empty((0, 0))
_EMPTY_BATCH = np.empty((0, 0), dtype=np.int64)


@dataclass(frozen=True)
class ProxSkipConfig:
    gamma: float
    p: float
    T: int
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.T < 0:
            raise ValueError("T must be >= 0")


@dataclass(frozen=True)
class Probe:
    """Known minimizer data used to evaluate distances and Lyapunov values."""

    x_star: np.ndarray
    h_star: np.ndarray


@dataclass
class SolverState:
    x: np.ndarray
    h: np.ndarray
    t: int = 0
    seed: int = 0
    prox_calls: int = 0
    grad_calls: int = 0

    def __post_init__(self):
        if self.x.shape != self.h.shape:
            raise ValueError("x and h must share a dimension")


# Stochastic gradient oracles.


@dataclass(frozen=True)
class ExactOracle:
    pass


@dataclass(frozen=True)
class GaussianOracle:
    """Adds isotropic noise scaled so that E||noise||^2 = sigma^2."""

    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class MinibatchOracle:
    """Mean loss gradient over ``batch`` samples drawn without replacement."""

    batch: int

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass(frozen=True)
class ExpectedSmoothness:
    """Constants (A, C) bounding E||g - grad f(x*)||^2 <= 2 A D_f(x, x*) + C.

    C is None when it cannot be evaluated (minibatch without a known
    minimizer); parameter rules then fall back to the 1/A stepsize.
    """

    A: float
    C: Optional[float]


def stochastic_gradient(oracle, problem, x, seed=0, t=0):
    """One oracle draw at iteration t; deterministic in (seed, t)."""
    if isinstance(oracle, ExactOracle):
        return problem.gradient(x)
    if isinstance(oracle, GaussianOracle):
        g = problem.gradient(x)
        if oracle.sigma == 0.0:
            return g
        d = problem.dim
        return g + rng.step_normals(seed, t, d) * (oracle.sigma / math.sqrt(d))
    if isinstance(oracle, MinibatchOracle):
        if oracle.batch > problem.n_samples:
            raise ValueError("batch exceeds the sample count")
        idx = rng.batch_indices(seed, t, 0, problem.n_samples, oracle.batch)
        return problem.subset_gradient(idx, 1.0 / oracle.batch, x)
    raise TypeError(f"unknown oracle {oracle!r}")


def expected_smoothness_constants(oracle, problem, x_star=None):
    info = problem.smoothness_constants()
    if isinstance(oracle, ExactOracle):
        return ExpectedSmoothness(A=info.L, C=0.0)
    if isinstance(oracle, GaussianOracle):
        return ExpectedSmoothness(A=info.L, C=oracle.sigma ** 2)
    if isinstance(oracle, MinibatchOracle):
        if isinstance(problem, QuadraticProblem):
            a_max = info.L
        elif isinstance(problem, LogisticProblem):
            row_sq = np.sum(problem.data ** 2, axis=1)
            a_max = float(row_sq.max()) / 4.0 + problem.lam
        else:
            raise TypeError("minibatch constants need a quadratic or logistic problem")
        if oracle.batch == problem.n_samples:
            return ExpectedSmoothness(A=a_max, C=0.0)
        if x_star is None:
            return ExpectedSmoothness(A=a_max, C=None)
        N = problem.n_samples
        total = 0.0
        for j in range(N):
            gj = problem.subset_gradient(np.array([j], dtype=np.int64), 1.0, x_star)
            total += float(gj @ gj)
        return ExpectedSmoothness(A=a_max, C=(2.0 / oracle.batch) * total / N)
    raise TypeError(f"unknown oracle {oracle!r}")


def lyapunov(x, h, x_star, h_star, gamma, p):
    """||x - x*||^2 + (gamma^2/p^2) ||h - h*||^2."""
    dx = np.asarray(x) - np.asarray(x_star)
    dh = np.asarray(h) - np.asarray(h_star)
    if dx.shape != dh.shape:
        raise ValueError("mismatched dimensions")
    ratio = gamma / p
    return float(dx @ dx) + ratio * ratio * float(dh @ dh)


def optimal_probability(info):
    """The prox-frequency sqrt(mu/L) that balances both rate terms."""
    if not info.mu > 0:
        raise ValueError("optimal probability needs mu > 0")
    return min(1.0, math.sqrt(info.mu / info.L))


def sproxskip_parameter_rule(info, es, epsilon, psi0):
    """Stepsize, prox probability and horizon hitting E[Psi_T] <= epsilon.

    gamma = min(1/A, eps*mu/(2C)), p = sqrt(gamma*mu) and
    T = ceil(max(A/mu, 2C/(eps*mu^2)) * log(2*psi0/eps)); with C = 0 (or
    unknown) the deterministic branch gamma = 1/A applies.
    """
    if not info.mu > 0:
        raise ValueError("parameter rule needs mu > 0")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if psi0 <= 0:
        raise ValueError("psi0 must be positive")
    log_term = math.log(2.0 * psi0 / epsilon)
    if es.C is None or es.C == 0.0:
        gamma = 1.0 / es.A
        T = math.ceil((es.A / info.mu) * log_term)
    else:
        gamma = min(1.0 / es.A, epsilon * info.mu / (2.0 * es.C))
        T = math.ceil(max(es.A / info.mu, 2.0 * es.C / (epsilon * info.mu ** 2)) * log_term)
    p = math.sqrt(gamma * info.mu)
    return gamma, min(p, 1.0), max(T, 1)


def prox_gd_step(problem, psi, gamma, x):
    """One forward-backward step x <- prox_{gamma psi}(x - gamma grad f(x))."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=np.float64)
    return psi.prox(gamma, x - gamma * problem.gradient(x))


def proxskip_step(state, problem, psi, cfg, coin=None):
    """One prox-skipping iteration; ``coin`` forces the branch when given."""
    x, h = state.x, state.h
    g = problem.gradient(x)
    xhat = x - cfg.gamma * (g - h)
    if coin is None:
        u = rng.uniforms(rng.stream_key(state.seed, rng.STREAM_COIN), state.t, 1)[0]
        coin = 1 if u < cfg.p else 0
    if coin:
        ratio = cfg.gamma / cfg.p
        x_new = psi.prox(ratio, xhat - ratio * h)
        h_new = h + (cfg.p / cfg.gamma) * (x_new - xhat)
        prox_calls = state.prox_calls + 1
    else:
        x_new = xhat
        h_new = h
        prox_calls = state.prox_calls
    return SolverState(x_new, h_new, state.t + 1, state.seed,
                       prox_calls, state.grad_calls + 1)


def one_step_expected_lyapunov(state, problem, psi, cfg, x_star, h_star):
    """E[Psi_{t+1}] computed exactly by enumerating both coin branches."""
    hit = proxskip_step(state, problem, psi, cfg, coin=1)
    skip = proxskip_step(state, problem, psi, cfg, coin=0)
    val_hit = lyapunov(hit.x, hit.h, x_star, h_star, cfg.gamma, cfg.p)
    val_skip = lyapunov(skip.x, skip.h, x_star, h_star, cfg.gamma, cfg.p)
    return cfg.p * val_hit + (1.0 - cfg.p) * val_skip


def _oracle_tables(oracle, seed, T, dim, n_samples):
    if isinstance(oracle, ExactOracle):
        return _EMPTY_NOISE, _EMPTY_BATCH
    if isinstance(oracle, GaussianOracle):
        if oracle.sigma == 0.0:
            return _EMPTY_NOISE, _EMPTY_BATCH
        noise = rng.noise_table(seed, T, dim) * (oracle.sigma / math.sqrt(dim))
        return noise, _EMPTY_BATCH
    if isinstance(oracle, MinibatchOracle):
        if oracle.batch > n_samples:
            raise ValueError("batch exceeds the sample count")
        table = rng.batch_table(seed, T, [0], [n_samples], oracle.batch)
        return _EMPTY_NOISE, np.ascontiguousarray(table[:, 0, :])
    raise TypeError(f"unknown oracle {oracle!r}")


def run_sproxskip(problem, psi, oracle, cfg, x0=None, h0=None, probe=None,
                  method="sproxskip"):
    """Run T prox-skipping iterations with a stochastic gradient oracle.

    With the exact oracle this is bit-identical to the deterministic
    algorithm under the same seed.  Returns a RunRecord with per-iteration
    distance and Lyapunov columns (NaN without a probe).
    """
    d = problem.dim
    x = np.zeros(d) if x0 is None else np.ascontiguousarray(x0, dtype=np.float64).copy()
    h = np.zeros(d) if h0 is None else np.ascontiguousarray(h0, dtype=np.float64).copy()
    if x.shape != (d,) or h.shape != (d,):
        raise ValueError(f"x0/h0 must have dimension {d}")
    s = problem.kernel_spec()
    pk, pw, pb = psi.kernel_code()
    coins = rng.coin_flips(cfg.seed, cfg.p, cfg.T)
    noise, batch = _oracle_tables(oracle, cfg.seed, cfg.T, d, problem.n_samples)
    if batch.shape[0] > 0 and s.kind > 1:
        raise ValueError("minibatch oracle is not defined for stacked problems")
    n_rows = cfg.T + 1
    dist2 = np.empty(n_rows)
    lyap = np.empty(n_rows)
    prox_calls = np.zeros(n_rows, dtype=np.int64)
    grad_calls = np.zeros(n_rows, dtype=np.int64)
    has_probe = 1 if probe is not None else 0
    x_star = probe.x_star if probe is not None else np.zeros(0)
    h_star = probe.h_star if probe is not None else np.zeros(0)
    t_stop = _kernels.central_loop(
        s.kind, s.A, s.bvec, s.S, s.ylab, s.lam, s.cvec, s.Bt, s.perm, s.offs,
        s.scale, s.nblocks, s.blockdim,
        x, h, cfg.gamma, cfg.p, cfg.T, coins, noise, batch,
        pk, pw, pb, has_probe,
        np.ascontiguousarray(x_star, dtype=np.float64),
        np.ascontiguousarray(h_star, dtype=np.float64),
        dist2, lyap, prox_calls, grad_calls, DIV_LIMIT_SQ,
    )
    params = {"gamma": cfg.gamma, "p": cfg.p, "T": cfg.T, "seed": cfg.seed}
    rec = build_record(method, cfg.seed, params, t_stop, prox_calls, grad_calls,
                       dist2, lyap, None, diverged=t_stop < cfg.T,
                       final_x=x, final_h=h)
    return rec


def run_proxskip(problem, psi, cfg, x0=None, h0=None, probe=None):
    """Deterministic-gradient prox skipping (the base algorithm)."""
    return run_sproxskip(problem, psi, ExactOracle(), cfg, x0=x0, h0=h0,
                         probe=probe, method="proxskip")


def run_prox_gd(problem, psi, gamma, T, x0=None, probe=None, step_tol=0.0,
                method="proxgd"):
    """Forward-backward iteration; one prox per step.

    ``step_tol`` > 0 stops once the gradient-mapping norm drops below it,
    which is the reference-solver mode.
    """
    d = problem.dim
    x = np.zeros(d) if x0 is None else np.ascontiguousarray(x0, dtype=np.float64).copy()
    s = problem.kernel_spec()
    pk, pw, pb = psi.kernel_code()
    dist2 = np.empty(T + 1)
    has_probe = 1 if probe is not None else 0
    x_star = probe.x_star if probe is not None else np.zeros(0)
    t_stop = _kernels.proxgd_loop(
        s.kind, s.A, s.bvec, s.S, s.ylab, s.lam, s.cvec, s.Bt, s.perm, s.offs,
        s.scale, s.nblocks, s.blockdim,
        x, gamma, T, pk, pw, pb, step_tol, has_probe,
        np.ascontiguousarray(x_star, dtype=np.float64), dist2, DIV_LIMIT_SQ,
    )
    steps = np.arange(T + 1, dtype=np.int64)
    diverged = bool(t_stop < T and step_tol == 0.0)
    params = {"gamma": gamma, "T": T}
    return build_record(method, 0, params, t_stop, steps, steps, dist2, None,
                        None, diverged=diverged, final_x=x)


_ZERO_PSI = L1(0.0)


def reference_minimizer(problem, psi=None, tol=1e-13):
    """High-accuracy (x*, h* = grad f(x*)) probe for a composite problem.

    Quadratics with no regularizer are solved directly; logistic problems
    run gradient descent then Newton polishing; composites run a long
    forward-backward iteration to gradient-mapping norm <= tol.  Results
    are cached on the problem instance.
    """
    key = psi.kernel_code() if psi is not None else None
    cache = getattr(problem, "_probe_cache", None)
    if cache is None:
        cache = {}
        problem._probe_cache = cache
    if key in cache:
        return cache[key]
    info = problem.smoothness_constants()
    gamma = 1.0 / info.L
    if key is None:
        if isinstance(problem, QuadraticProblem):
            x_star = problem.solve_minimizer()
        else:
            rec = run_prox_gd(problem, _ZERO_PSI, gamma, 200_000, step_tol=1e-9)
            x_star = rec.final_x
            if isinstance(problem, LogisticProblem):
                for _ in range(60):
                    g = problem.gradient(x_star)
                    if float(np.linalg.norm(g)) <= 1e-14:
                        break
                    x_star = x_star - np.linalg.solve(problem.hessian(x_star), g)
    else:
        rec = run_prox_gd(problem, psi, gamma, 1_000_000, step_tol=tol)
        x_star = rec.final_x
    probe = Probe(x_star=x_star, h_star=problem.gradient(x_star))
    cache[key] = probe
    return probe
