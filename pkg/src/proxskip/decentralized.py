"""Gossip topologies, mixing matrices, and decentralized prox skipping.

The communication graph enters through a symmetric doubly stochastic PSD
mixing matrix W built with lazy Metropolis weights, W = (I + M)/2, which
keeps the sparsity pattern of the graph plus self-loops and guarantees
positive semidefiniteness.  One gossip exchange replaces the exact
averaging of the federated setting; its quality is the spectral gap
delta = 1 - lambda_2(W).

The same updates can be written as a primal-dual iteration on
min f(x) + psi(Lx) with L = sqrt(I - W) acting blockwise and psi the
indicator of {0}; ``equivalence_check`` runs both formulations in lockstep
and reports their maximum disagreement.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng
from .linalg import matrix_sqrt_psd, symmetric_eigenvalues
from .problems import StackedProblem, client_gradient
from .prox import IndicatorZero
from .records import build_record
from .solvers import DIV_LIMIT_SQ, reference_minimizer


@dataclass(frozen=True)
class Topology:
    kind: str
    n: int
    edges: tuple

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a topology needs at least 2 nodes")
        seen = set()
        for i, j in self.edges:
            if i == j or not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"bad edge ({i}, {j})")
            seen.add((min(i, j), max(i, j)))
        if not _connected(self.n, seen):
            raise ValueError("topology must be connected")
        object.__setattr__(self, "edges", tuple(sorted(seen)))


def _connected(n, edges):
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for k in adj[stack.pop()]:
            if k not in seen:
                seen.add(k)
                stack.append(k)
    return len(seen) == n


def ring(n):
    return Topology("ring", n, tuple((i, (i + 1) % n) for i in range(n)))


def complete(n):
    return Topology("complete", n,
                    tuple((i, j) for i in range(n) for j in range(i + 1, n)))


def star(n):
    return Topology("star", n, tuple((0, i) for i in range(1, n)))


def grid(rows, cols):
    def node(r, c):
        return r * cols + c

    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((node(r, c), node(r, c + 1)))
            if r + 1 < rows:
                edges.append((node(r, c), node(r + 1, c)))
    return Topology("grid", rows * cols, tuple(edges))


def custom(n, edges):
    return Topology("custom", n, tuple(tuple(e) for e in edges))


@dataclass(frozen=True)
class MixingMatrix:
    W: np.ndarray
    delta: float
    eigenvalues: np.ndarray = field(repr=False, default=None)

    @property
    def n(self):
        return self.W.shape[0]


def mixing_matrix(top):
    """Lazy Metropolis mixing matrix of a connected topology.

    M_ij = 1/(1 + max(deg_i, deg_j)) on edges with the diagonal filling
    rows to one; W = (I + M)/2 is then symmetric, doubly stochastic and
    PSD, with spectral gap delta = 1 - lambda_2(W) > 0.
    """
    n = top.n
    deg = np.zeros(n, dtype=np.int64)
    for i, j in top.edges:
        deg[i] += 1
        deg[j] += 1
    M = np.zeros((n, n))
    for i, j in top.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        M[i, j] = w
        M[j, i] = w
    np.fill_diagonal(M, 1.0 - M.sum(axis=1))
    W = (np.eye(n) + M) / 2.0
    W = np.ascontiguousarray(0.5 * (W + W.T))
    eigs = symmetric_eigenvalues(W)
    if eigs[-1] < -1e-10:
        raise ValueError("mixing matrix is not PSD")
    delta = 1.0 - eigs[1]
    if delta <= 1e-12:
        raise ValueError("zero spectral gap (disconnected graph?)")
    return MixingMatrix(W=W, delta=float(delta), eigenvalues=eigs)


@dataclass(frozen=True)
class DecentralizedConfig:
    gamma: float
    p: float
    T: int
    tau: float = None
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.tau is None:
            object.__setattr__(self, "tau", self.p / self.gamma)
        if self.tau * self.gamma > self.p * (1 + 1e-12):
            raise ValueError("need tau <= p/gamma (cannot extrapolate past neighbors)")


def decentralized_scaffnew_round(x, h, problem, split, W, gamma, tau, p_prob, theta):
    """One round of gossip prox skipping on (n, d) node states."""
    if tau * gamma > p_prob * (1 + 1e-12):
        raise ValueError("need tau <= p/gamma")
    n, d = x.shape
    xhat = np.empty_like(x)
    for i in range(n):
        g = client_gradient(problem, split, i, x[i])
        xhat[i] = x[i] - gamma * (g - h[i])
    if theta:
        alpha = gamma * tau / p_prob
        mixed = W @ xhat
        x_new = (1.0 - alpha) * xhat + alpha * mixed
        h_new = h + (p_prob / gamma) * (x_new - xhat)
    else:
        x_new = xhat
        h_new = h.copy()
    return x_new, h_new


def run_decentralized_scaffnew(problem, split, mix, cfg, probe=None):
    """Gossip prox-skipping run; rate target (1 - min(gamma mu, p gamma tau delta))."""
    stacked = StackedProblem(problem, split)
    s = stacked.kernel_spec()
    n, d = split.n, problem.dim
    if n != mix.n:
        raise ValueError("mixing matrix size must match the client count")
    x = np.zeros(n * d)
    h = np.zeros(n * d)
    coins = rng.coin_flips(cfg.seed, cfg.p, cfg.T)
    if probe is None:
        probe = reference_minimizer(problem)
    rows = cfg.T + 1
    dist2 = np.empty(rows)
    disp = np.empty(rows)
    comm = np.zeros(rows, dtype=np.int64)
    grads = np.zeros(rows, dtype=np.int64)
    t_stop = _kernels.dec_scaffnew_loop(
        s.kind, s.A, s.S, s.ylab, s.lam, s.cvec, s.Bt, s.perm, s.offs, s.scale,
        n, d, mix.W, x, h, cfg.gamma, cfg.tau, cfg.p, cfg.T, coins,
        1, np.ascontiguousarray(probe.x_star), dist2, comm, grads, disp,
        DIV_LIMIT_SQ,
    )
    params = {"gamma": cfg.gamma, "tau": cfg.tau, "p": cfg.p, "T": cfg.T,
              "seed": cfg.seed, "n_clients": n, "delta": mix.delta}
    return build_record("decentralized_scaffnew", cfg.seed, params, t_stop,
                        comm, grads, dist2, None, disp,
                        diverged=t_stop < cfg.T,
                        final_x=x.reshape(n, d), final_h=h.reshape(n, d))


@dataclass
class DualState:
    """Primal iterate and dual control variate of the split formulation."""

    x: np.ndarray
    y: np.ndarray
    t: int = 0


def splitskip_step(state, problem, Lmat, psi, gamma, tau, p_prob, theta):
    """One primal-dual prox-skipping step on min f(x) + psi(L x).

    theta = 1 updates the dual through prox of the conjugate of psi and
    pulls the primal back along L^T; theta = 0 leaves the dual untouched.
    """
    x, y = state.x, state.y
    g = problem.gradient(x)
    xhat = x - gamma * (g + Lmat.T @ y)
    if theta:
        y_new = psi.conjugate_prox(tau, y + tau * (Lmat @ xhat))
        x_new = xhat - (gamma / p_prob) * (Lmat.T @ (y_new - y))
    else:
        y_new = y.copy()
        x_new = xhat
    return DualState(x=x_new, y=y_new, t=state.t + 1)


def run_splitskip_consensus(problem, split, mix, cfg, probe=None, y_star=None):
    """Split-form run with blockwise L = sqrt(I - W) and psi = indicator{0}.

    Records the dual-space Lyapunov value when both x* and y* probes are
    available; the final dual iterate serves as the y* reference after a
    long p = 1 run.
    """
    stacked = StackedProblem(problem, split)
    s = stacked.kernel_spec()
    n, d = split.n, problem.dim
    Lt = np.ascontiguousarray(matrix_sqrt_psd(np.eye(n) - mix.W))
    x = np.zeros(n * d)
    y = np.zeros(n * d)
    coins = rng.coin_flips(cfg.seed, cfg.p, cfg.T)
    if probe is None:
        probe = reference_minimizer(problem)
    ystar_flat = (np.ascontiguousarray(y_star, dtype=np.float64).reshape(-1)
                  if y_star is not None else np.zeros(n * d))
    rows = cfg.T + 1
    dist2 = np.empty(rows)
    phi = np.empty(rows)
    disp = np.empty(rows)
    comm = np.zeros(rows, dtype=np.int64)
    grads = np.zeros(rows, dtype=np.int64)
    t_stop = _kernels.splitskip_consensus_loop(
        s.kind, s.A, s.S, s.ylab, s.lam, s.cvec, s.Bt, s.perm, s.offs, s.scale,
        n, d, Lt, x, y, cfg.gamma, cfg.tau, cfg.p, cfg.T, coins,
        1, np.ascontiguousarray(probe.x_star), ystar_flat,
        dist2, phi, comm, grads, disp, DIV_LIMIT_SQ,
    )
    if y_star is None:
        phi[:] = np.nan
    params = {"gamma": cfg.gamma, "tau": cfg.tau, "p": cfg.p, "T": cfg.T,
              "seed": cfg.seed, "n_clients": n}
    return build_record("splitskip", cfg.seed, params, t_stop, comm, grads,
                        dist2, phi, disp, diverged=t_stop < cfg.T,
                        final_x=x.reshape(n, d), final_h=y.reshape(n, d))


def decentralized_lyapunov(x, y, x_star, y_star, gamma, p_prob, tau):
    """Phi = sum_i ||x_i - x*||^2 + gamma/(p tau) ||y - y*||^2."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0] if x.ndim == 2 else x.size // x_star.size
    X = x.reshape(n, -1)
    dy = np.asarray(y, dtype=np.float64).reshape(-1) - np.asarray(y_star).reshape(-1)
    tot = sum(float((X[i] - x_star) @ (X[i] - x_star)) for i in range(n))
    return tot + gamma / (p_prob * tau) * float(dy @ dy)


def equivalence_check(top, problem, split, cfg, steps=200):
    """Run the gossip form and the split form in lockstep; max |x| deviation.

    The two coincide under h = -L^T y when L = sqrt(I - W) and the dual
    prox is the identity, so the deviation is pure floating-point drift.
    """
    mix = mixing_matrix(top)
    n, d = split.n, problem.dim
    Ltilde = matrix_sqrt_psd(np.eye(n) - mix.W)
    Lfull = np.kron(Ltilde, np.eye(d))
    stacked = StackedProblem(problem, split)
    psi = IndicatorZero()
    coins = rng.coin_flips(cfg.seed, cfg.p, steps)
    x3 = np.zeros((n, d))
    h3 = np.zeros((n, d))
    dual = DualState(x=np.zeros(n * d), y=np.zeros(n * d))
    dev = 0.0
    for t in range(steps):
        x3, h3 = decentralized_scaffnew_round(
            x3, h3, problem, split, mix.W, cfg.gamma, cfg.tau, cfg.p, coins[t])
        dual = splitskip_step(dual, stacked, Lfull, psi, cfg.gamma, cfg.tau,
                              cfg.p, coins[t])
        dev = max(dev, float(np.abs(x3.reshape(-1) - dual.x).max()))
    return dev
