"""Built-in invariant suite behind ``proxskip verify``.

Quick desk-scale checks of the package's core guarantees on synthetic
problems; each prints one PASS/FAIL line.  The full acceptance suite lives
in the test tree; this is the smoke-check edition.
"""

import numpy as np

from . import decentralized as dec
from .federated import make_coin_schedule, run_scaffnew, stacked_probe
from .problems import StackedProblem, heterogeneous_split, synthetic_quadratic
from .prox import L1, Consensus, SquaredL2
from .solvers import (Probe, ProxSkipConfig, SolverState, lyapunov,
                      one_step_expected_lyapunov, proxskip_step,
                      reference_minimizer, run_proxskip)


def _check_firm_nonexpansiveness():
    rng = np.random.default_rng(0)
    ops = [L1(0.7), SquaredL2(1.3), Consensus(4, 3)]
    for op in ops:
        d = 12
        for _ in range(200):
            x = rng.standard_normal(d)
            y = rng.standard_normal(d)
            scale = float(rng.uniform(0.01, 10.0))
            px, py = op.prox(scale, x), op.prox(scale, y)
            qx, qy = x - px, y - py
            lhs = np.sum((px - py) ** 2) + np.sum((qx - qy) ** 2)
            rhs = np.sum((x - y) ** 2) + 1e-12
            if lhs > rhs:
                return False, f"{type(op).__name__}: {lhs} > {rhs}"
    return True, "600 random (x, y, scale) triples"


def _check_one_step_contraction():
    prob = synthetic_quadratic(d=8, kappa=100.0, n_samples=4, seed=3,
                               heterogeneity=1.0)
    split = heterogeneous_split(4, 4)
    stacked = StackedProblem(prob, split)
    info = prob.smoothness_constants()
    psi = Consensus(4, 8)
    cfg = ProxSkipConfig(gamma=1.0 / info.L, p=0.1, T=100, seed=5)
    base = stacked_probe(prob, split)
    x_star = np.tile(base.x_star, 4)
    zeta = min(cfg.gamma * info.mu, cfg.p ** 2)
    state = SolverState(x=np.ones(32), h=np.zeros(32), seed=cfg.seed)
    for _ in range(100):
        psi_t = lyapunov(state.x, state.h, x_star, base.h_star, cfg.gamma, cfg.p)
        expected = one_step_expected_lyapunov(state, stacked, psi, cfg,
                                              x_star, base.h_star)
        if expected > (1.0 - zeta) * psi_t + 1e-12:
            return False, f"E[Psi+] = {expected} > (1-zeta) Psi = {(1 - zeta) * psi_t}"
        state = proxskip_step(state, stacked, psi, cfg)
    return True, "100 states along a trajectory"


def _check_forward_step_contraction():
    prob = synthetic_quadratic(d=10, kappa=50.0, seed=7)
    info = prob.smoothness_constants()
    probe = reference_minimizer(prob)
    gamma = 1.0 / info.L
    w_star = probe.x_star - gamma * prob.gradient(probe.x_star)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = probe.x_star + rng.standard_normal(10) * rng.uniform(0.1, 10)
        w = x - gamma * prob.gradient(x)
        lhs = np.sum((w - w_star) ** 2)
        rhs = (1.0 - gamma * info.mu) * np.sum((x - probe.x_star) ** 2)
        if lhs > rhs * (1 + 1e-12):
            return False, f"{lhs} > {rhs}"
    return True, "200 random points"


def _check_federated_equivalence():
    prob = synthetic_quadratic(d=4, kappa=20.0, n_samples=6, seed=2,
                               heterogeneity=1.0)
    split = heterogeneous_split(6, 3)
    info = prob.smoothness_constants()
    cfg = ProxSkipConfig(gamma=1.0 / info.L, p=0.25, T=150, seed=9)
    fed = run_scaffnew(prob, split, cfg)
    stacked = StackedProblem(prob, split)
    base = stacked_probe(prob, split)
    cen = run_proxskip(stacked, Consensus(3, 4), cfg,
                       x0=np.zeros(12), h0=np.zeros(12),
                       probe=Probe(np.tile(base.x_star, 3), base.h_star))
    dev = float(np.abs(fed.final_x.reshape(-1) - cen.final_x).max())
    return dev == 0.0, f"max deviation {dev}"


def _check_decentralized_equivalence():
    prob = synthetic_quadratic(d=3, kappa=25.0, n_samples=5, seed=6,
                               heterogeneity=1.0)
    split = heterogeneous_split(5, 5)
    info = prob.smoothness_constants()
    cfg = dec.DecentralizedConfig(gamma=1.0 / info.L, p=0.4, T=150, seed=1)
    deviation = dec.equivalence_check(dec.ring(5), prob, split, cfg, steps=150)
    return deviation <= 1e-9, f"max deviation {deviation:.2e}"


def _check_schedule_determinism():
    a = make_coin_schedule(0.3, 5000, 42).theta
    b = make_coin_schedule(0.3, 5000, 42).theta
    frac = a.mean()
    if not np.array_equal(a, b):
        return False, "schedules differ between calls"
    return abs(frac - 0.3) < 0.03, f"ones fraction {frac:.4f}"


CHECKS = [
    ("firm nonexpansiveness of prox operators", _check_firm_nonexpansiveness),
    ("exact one-step Lyapunov contraction", _check_one_step_contraction),
    ("forward-step contraction bound", _check_forward_step_contraction),
    ("federated == stacked solver (bitwise)", _check_federated_equivalence),
    ("gossip == primal-dual form (1e-9)", _check_decentralized_equivalence),
    ("coin schedule determinism", _check_schedule_determinism),
]


def run_verify(out=print):
    failures = 0
    for label, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # pragma: no cover - defensive
            ok, detail = False, f"raised {exc!r}"
        status = "PASS" if ok else "FAIL"
        out(f"[{status}] {label} ({detail})")
        if not ok:
            failures += 1
    return failures
