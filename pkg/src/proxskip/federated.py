"""In-process federated simulation: prox-skipping rounds plus baselines.

Communication is modeled as the averaging event itself, which is the thing
round-counting experiments measure; no transport is simulated.  All
methods run every client every round.  The n client updates within a round
are pure functions of the pre-round state and are merged in ascending
client order, so results are bit-reproducible regardless of how runs are
scheduled.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, rng
from .prox import L1, consensus_mean
from .problems import StackedProblem, client_gradient
from .records import build_record
from .solvers import (DIV_LIMIT_SQ, ExactOracle, GaussianOracle,
                      MinibatchOracle, Probe, reference_minimizer,
                      run_prox_gd)

_EMPTY_NOISE = np.empty((0, 0))
_EMPTY_BATCH = np.empty((0, 0, 0), dtype=np.int64)


@dataclass(frozen=True)
class CoinSchedule:
    """Pre-flipped skip/communicate bits shared by all clients."""

    theta: np.ndarray
    p: float
    seed: int

    def __len__(self):
        return len(self.theta)


def make_coin_schedule(p, T, seed):
    """T Bernoulli(p) bits; identical to the bits any solver draws for the
    same seed, so separately-built schedules stay in lockstep with runs."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    return CoinSchedule(theta=rng.coin_flips(seed, p, T), p=p, seed=seed)


@dataclass
class FederatedState:
    """Per-client iterates and control variates, client-major (n, d)."""

    x: np.ndarray
    h: np.ndarray
    t: int = 0
    seed: int = 0
    comm_rounds: int = 0
    local_grad_steps: int = 0

    def __post_init__(self):
        if self.x.shape != self.h.shape or self.x.ndim != 2:
            raise ValueError("x and h must both be (n, d)")
        tol = 1e-9 * self.x.shape[0]
        drift = np.abs(self.h.sum(axis=0)).max() if self.h.size else 0.0
        if drift > tol:
            raise ValueError(f"control variates must sum to zero (drift {drift:.2e})")

    @property
    def n(self):
        return self.x.shape[0]


def init_federated_state(problem, split, x0=None, h0=None, seed=0):
    d = problem.dim
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64)
    x = np.tile(x0, (split.n, 1))
    h = np.zeros((split.n, d)) if h0 is None else np.array(h0, dtype=np.float64)
    return FederatedState(x=x, h=h, seed=seed)


def _client_noise(oracle, seed, t, n, d):
    if isinstance(oracle, GaussianOracle) and oracle.sigma > 0.0:
        return rng.step_normals(seed, t, n * d).reshape(n, d) * (oracle.sigma / math.sqrt(d))
    return None


def scaffnew_round(state, problem, split, gamma, p_prob, theta, oracle=None):
    """One federated prox-skipping round (all clients, one local step each).

    theta = 0 skips communication entirely; theta = 1 averages the
    drift-adjusted iterates x_hat - (gamma/p) h, which coincides with
    averaging the x_hat themselves because the control variates sum to
    zero, and keeps the simulation bit-identical to the stacked solver.
    """
    n, d = state.x.shape
    oracle = oracle or ExactOracle()
    gains = _client_noise(oracle, state.seed, state.t, n, d)
    xhat = np.empty_like(state.x)
    for i in range(n):
        if isinstance(oracle, MinibatchOracle):
            group = split.groups[i]
            draws = rng.batch_indices(state.seed, state.t, i, len(group), oracle.batch)
            g = problem.subset_gradient(group[draws], 1.0 / oracle.batch, state.x[i])
        else:
            g = client_gradient(problem, split, i, state.x[i])
            if gains is not None:
                g = g + gains[i]
        xhat[i] = state.x[i] - gamma * (g - state.h[i])
    if theta:
        ratio = gamma / p_prob
        zbar = consensus_mean(xhat - ratio * state.h)
        x_new = np.tile(zbar, (n, 1))
        h_new = state.h + (p_prob / gamma) * (x_new - xhat)
        comm = state.comm_rounds + 1
    else:
        x_new = xhat
        h_new = state.h
        comm = state.comm_rounds
    return FederatedState(x=x_new, h=h_new, t=state.t + 1, seed=state.seed,
                          comm_rounds=comm, local_grad_steps=state.local_grad_steps + n)


def stacked_probe(problem, split):
    """(x*, per-client h* = grad f_i(x*)) in stacked form."""
    base = reference_minimizer(problem)
    h_star = np.concatenate([
        client_gradient(problem, split, i, base.x_star) for i in range(split.n)
    ])
    return Probe(x_star=base.x_star, h_star=h_star)


def _federated_tables(oracle, seed, steps, split, d):
    oracle = oracle or ExactOracle()
    n = split.n
    if isinstance(oracle, ExactOracle) or (
        isinstance(oracle, GaussianOracle) and oracle.sigma == 0.0
    ):
        return _EMPTY_NOISE, _EMPTY_BATCH, 0.0
    if isinstance(oracle, GaussianOracle):
        noise = rng.noise_table(seed, steps, n * d) * (oracle.sigma / math.sqrt(d))
        return noise, _EMPTY_BATCH, 0.0
    sizes = {len(g) for g in split.groups}
    if len(sizes) != 1:
        raise ValueError("minibatch oracle requires equal-size client groups")
    size = sizes.pop()
    if oracle.batch > size:
        raise ValueError("batch exceeds the client sample count")
    table = rng.batch_table(seed, steps, list(range(n)), [size] * n, oracle.batch)
    for i in range(n):
        table[:, i, :] = split.groups[i][table[:, i, :]]
    return _EMPTY_NOISE, table, 1.0 / oracle.batch


def run_scaffnew(problem, split, cfg, oracle=None, probe=None, x0=None, h0=None):
    """Full federated prox-skipping run driven by a pregenerated schedule.

    Records the mean-iterate error, consensus dispersion, the Lyapunov
    value in the stacked space, and communication/gradient counters.
    """
    stacked = StackedProblem(problem, split)
    s = stacked.kernel_spec()
    n, d = split.n, problem.dim
    state = init_federated_state(problem, split, x0=x0, h0=h0, seed=cfg.seed)
    x = np.ascontiguousarray(state.x.reshape(-1))
    h = np.ascontiguousarray(state.h.reshape(-1))
    schedule = make_coin_schedule(cfg.p, cfg.T, cfg.seed)
    noise, batch, bcoef = _federated_tables(oracle, cfg.seed, cfg.T, split, d)
    rows = cfg.T + 1
    dist2 = np.empty(rows)
    lyap = np.empty(rows)
    disp = np.empty(rows)
    comm = np.zeros(rows, dtype=np.int64)
    grads = np.zeros(rows, dtype=np.int64)
    if probe is None:
        probe = stacked_probe(problem, split)
    t_stop = _kernels.scaffnew_loop(
        s.kind, s.A, s.S, s.ylab, s.lam, s.cvec, s.Bt, s.perm, s.offs, s.scale,
        n, d, x, h, cfg.gamma, cfg.p, cfg.T, schedule.theta, noise, batch, bcoef,
        1, np.ascontiguousarray(probe.x_star), np.ascontiguousarray(probe.h_star),
        dist2, lyap, comm, grads, disp, DIV_LIMIT_SQ,
    )
    params = {"gamma": cfg.gamma, "p": cfg.p, "T": cfg.T, "seed": cfg.seed,
              "n_clients": n}
    return build_record("scaffnew", cfg.seed, params, t_stop, comm, grads,
                        dist2, lyap, disp, diverged=t_stop < cfg.T,
                        final_x=x.reshape(n, d), final_h=h.reshape(n, d))


def _run_local_rounds(method, use_control, problem, split, gamma, tau, rounds,
                      oracle=None, probe=None, x0=None, seed=0):
    stacked = StackedProblem(problem, split)
    s = stacked.kernel_spec()
    n, d = split.n, problem.dim
    x = np.zeros(d) if x0 is None else np.ascontiguousarray(x0, dtype=np.float64).copy()
    noise, batch, bcoef = _federated_tables(oracle, seed, rounds * tau, split, d)
    if probe is None:
        probe = reference_minimizer(problem)
    dist2 = np.empty(rounds + 1)
    comm = np.zeros(rounds + 1, dtype=np.int64)
    grads = np.zeros(rounds + 1, dtype=np.int64)
    r_stop = _kernels.local_rounds_loop(
        s.kind, s.A, s.S, s.ylab, s.lam, s.cvec, s.Bt, s.perm, s.offs, s.scale,
        n, d, x, gamma, tau, rounds, use_control, noise, batch, bcoef,
        1, np.ascontiguousarray(probe.x_star), dist2, comm, grads, DIV_LIMIT_SQ,
    )
    params = {"gamma": gamma, "tau": tau, "rounds": rounds, "seed": seed,
              "n_clients": n}
    return build_record(method, seed, params, r_stop, comm, grads, dist2,
                        None, np.zeros(rounds + 1), diverged=r_stop < rounds,
                        final_x=x)


def run_local_gd(problem, split, gamma, tau, rounds, oracle=None, probe=None,
                 x0=None, seed=0):
    """LocalGD: tau plain local steps per round, then averaging.

    Converges only to a neighborhood under heterogeneous data; that plateau
    is the phenomenon the drift-corrected methods remove.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return _run_local_rounds("local_gd", 0, problem, split, gamma, tau, rounds,
                             oracle, probe, x0, seed)


def run_scaffold(problem, split, gamma, tau, rounds, oracle=None, probe=None,
                 x0=None, seed=0):
    """Scaffold (option II control variates, no client sampling).

    Local steps use x_i <- x_i - gamma (g_i - c_i + c); after tau steps the
    client variate moves to c_i - c + (x_start - x_end)/(tau gamma), and
    the server averages both iterates and variates.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return _run_local_rounds("scaffold", 1, problem, split, gamma, tau, rounds,
                             oracle, probe, x0, seed)


def run_gd_baseline(problem, gamma, T, probe=None, x0=None):
    """Centralized gradient descent; every step is one communication round."""
    if probe is None:
        probe = reference_minimizer(problem)
    return run_prox_gd(problem, L1(0.0), gamma, T, x0=x0, probe=probe, method="gd")
