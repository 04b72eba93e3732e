"""Hot numeric loops shared by every solver.

Each function is written once in numba-compatible numpy style and compiled
with ``@kernel`` (njit by default, plain numpy under
``PROXSKIP_BACKEND=numpy``).  No randomness is generated here: coin flips,
gradient noise and minibatch index tables are produced up front by
``rng`` and passed in as arrays, so trajectories are a pure function of
their inputs under either backend.

Problem encoding (see ``problems.KernelSpec``): kind 0 is a quadratic
(A, bvec), kind 1 logistic (S rows, ylab, lam), kinds 2/3 their
client-stacked forms where block i holds client i's local objective.
The federated loop and the stacked central loop deliberately route every
floating-point operation through the same helpers, in the same order, so
the two produce bit-identical trajectories under shared coins.
"""

import numpy as np

from ._backend import kernel


# ---------------------------------------------------------------- helpers


@kernel
def _block_mean(Z):
    """Mean over rows, accumulated in ascending row order.

    Rows that are already all identical are returned as-is so that
    consensus points are exact fixed points of the averaging step.
    """
    n, d = Z.shape
    out = Z[0].copy()
    if n == 1:
        return out
    same = True
    for i in range(1, n):
        for k in range(d):
            if Z[i, k] != Z[0, k]:
                same = False
                break
        if not same:
            break
    if same:
        return out
    for i in range(1, n):
        out += Z[i]
    out /= n
    return out


@kernel
def _logistic_subset_grad(S, ylab, lam, idx, scale, x, out):
    """scale * sum_{j in idx} grad log-loss_j(x) + lam * x."""
    Ssub = S[idx]
    ysub = ylab[idx]
    s = -ysub * np.dot(Ssub, x)
    t = np.exp(-np.abs(s))
    sig = np.where(s >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    coef = (-scale) * (ysub * sig)
    out[:] = np.dot(coef, Ssub) + lam * x


@kernel
def _logistic_full_grad(S, ylab, lam, scale, x, out):
    s = -ylab * np.dot(S, x)
    t = np.exp(-np.abs(s))
    sig = np.where(s >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    coef = (-scale) * (ylab * sig)
    out[:] = np.dot(coef, S) + lam * x


@kernel
def _quad_subset_grad(A, S, idx, scale, x, out):
    out[:] = (scale * idx.shape[0]) * np.dot(A, x) - scale * np.sum(S[idx], axis=0)


@kernel
def _client_grad(kind, A, S, ylab, lam, cvec, Bt, perm, offs, scale, i, xb, out):
    """Gradient of client i's local objective at the block iterate xb."""
    if kind == 2:
        out[:] = cvec[i] * np.dot(A, xb) - Bt[i]
    else:
        idx = perm[offs[i]:offs[i + 1]]
        _logistic_subset_grad(S, ylab, lam, idx, scale, xb, out)


@kernel
def _gradient(kind, A, bvec, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db, x, out):
    """Full gradient dispatch over the four problem encodings."""
    if kind == 0:
        out[:] = np.dot(A, x) - bvec
    elif kind == 1:
        _logistic_full_grad(S, ylab, lam, scale, x, out)
    else:
        for i in range(nb):
            _client_grad(kind, A, S, ylab, lam, cvec, Bt, perm, offs, scale,
                         i, x[i * db:(i + 1) * db], out[i * db:(i + 1) * db])


@kernel
def _subset_gradient(kind, A, S, ylab, lam, idx, scale, x, out):
    """Minibatch gradient (kinds 0/1 only)."""
    if kind == 0:
        _quad_subset_grad(A, S, idx, scale, x, out)
    else:
        _logistic_subset_grad(S, ylab, lam, idx, scale, x, out)


@kernel
def _prox(kind, weight, blocks, scale, z, out):
    """prox of scale*psi at z, written to out (may alias nothing)."""
    if kind == 1:
        t = scale * weight
        out[:] = np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    elif kind == 2:
        out[:] = z / (1.0 + 2.0 * scale * weight)
    elif kind == 3:
        d = z.shape[0] // blocks
        mean = _block_mean(z.reshape(blocks, d))
        for i in range(blocks):
            out[i * d:(i + 1) * d] = mean
    else:
        out[:] = 0.0


@kernel
def _sqdist(a, b):
    diff = a - b
    return float(np.dot(diff, diff))


@kernel
def _stacked_metrics(x, h, nb, db, gamma, p, has_probe, x_star, h_star):
    """(dist2 of mean iterate, stacked Lyapunov, dispersion) for (nb*db,) state."""
    X = x.reshape(nb, db)
    xbar = _block_mean(X)
    disp = 0.0
    for i in range(nb):
        disp += _sqdist(X[i], xbar)
    disp /= nb
    if has_probe == 0:
        return np.nan, np.nan, disp
    dist2 = _sqdist(xbar, x_star)
    lyap = 0.0
    for i in range(nb):
        lyap += _sqdist(X[i], x_star)
    lyap += (gamma * gamma) / (p * p) * _sqdist(h, h_star)
    return dist2, lyap, disp


# ---------------------------------------------------------------- solvers


@kernel
def central_loop(kind, A, bvec, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db,
                 x, h, gamma, p, T, coins, noise, batch,
                 prox_kind, prox_weight, prox_blocks,
                 has_probe, x_star, h_star,
                 dist2, lyap, prox_calls, grad_calls, div_limit):
    """Prox-skipping loop: gradient step with control-variate shift, then a
    prox applied only on coin-flip iterations.  Returns the number of steps
    completed (< T only on divergence)."""
    d = x.shape[0]
    ratio = gamma / p
    g = np.empty(d)
    xhat = np.empty(d)
    z = np.empty(d)
    pc = 0
    gc = 0
    if has_probe == 1:
        dist2[0] = _sqdist(x, x_star)
        lyap[0] = dist2[0] + (ratio * ratio) * _sqdist(h, h_star)
    else:
        dist2[0] = np.nan
        lyap[0] = np.nan
    prox_calls[0] = 0
    grad_calls[0] = 0
    for t in range(T):
        if batch.shape[0] > 0:
            _subset_gradient(kind, A, S, ylab, lam, batch[t], 1.0 / batch.shape[1], x, g)
        else:
            _gradient(kind, A, bvec, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db, x, g)
            if noise.shape[0] > 0:
                g += noise[t]
        gc += 1
        xhat[:] = x - gamma * (g - h)
        if coins[t] == 1:
            z[:] = xhat - ratio * h
            _prox(prox_kind, prox_weight, prox_blocks, ratio, z, x)
            h[:] = h + (p / gamma) * (x - xhat)
            pc += 1
        else:
            x[:] = xhat
        if has_probe == 1:
            dist2[t + 1] = _sqdist(x, x_star)
            lyap[t + 1] = dist2[t + 1] + (ratio * ratio) * _sqdist(h, h_star)
        else:
            dist2[t + 1] = np.nan
            lyap[t + 1] = np.nan
        prox_calls[t + 1] = pc
        grad_calls[t + 1] = gc
        if np.dot(x, x) > div_limit:
            return t + 1
    return T


@kernel
def proxgd_loop(kind, A, bvec, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db,
                x, gamma, T, prox_kind, prox_weight, prox_blocks,
                step_tol, has_probe, x_star, dist2, div_limit):
    """Forward-backward iteration, one prox (= one communication) per step.

    Stops early once ||x_new - x|| <= step_tol * gamma, i.e. the gradient
    mapping norm falls below step_tol (for psi = 0 this is ||grad f||)."""
    d = x.shape[0]
    g = np.empty(d)
    z = np.empty(d)
    xn = np.empty(d)
    if has_probe == 1:
        dist2[0] = _sqdist(x, x_star)
    else:
        dist2[0] = np.nan
    for t in range(T):
        _gradient(kind, A, bvec, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db, x, g)
        z[:] = x - gamma * g
        _prox(prox_kind, prox_weight, prox_blocks, gamma, z, xn)
        moved = _sqdist(xn, x)
        x[:] = xn
        if has_probe == 1:
            dist2[t + 1] = _sqdist(x, x_star)
        else:
            dist2[t + 1] = np.nan
        if step_tol > 0.0 and moved <= (step_tol * gamma) ** 2:
            return t + 1
        if np.dot(x, x) > div_limit:
            return t + 1
    return T


@kernel
def scaffnew_loop(kind, A, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db,
                  x, h, gamma, p, T, coins, noise, batch, bcoef,
                  has_probe, x_star, h_star,
                  dist2, lyap, comm, grads, disp, div_limit):
    """Federated prox-skipping rounds over nb clients (client-major state).

    Every iteration each client takes one control-variate-adjusted local
    step; on coin iterations the drift-adjusted iterates are averaged (the
    communication event) and the control variates absorb the correction.
    """
    ratio = gamma / p
    bv = np.empty(0)
    g = np.empty(nb * db)
    xhat = np.empty(nb * db)
    z = np.empty(nb * db)
    cm = 0
    gc = 0
    d0, l0, s0 = _stacked_metrics(x, h, nb, db, gamma, p, has_probe, x_star, h_star)
    dist2[0] = d0
    lyap[0] = l0
    disp[0] = s0
    comm[0] = 0
    grads[0] = 0
    for t in range(T):
        if batch.shape[0] > 0:
            for i in range(nb):
                _subset_gradient(kind - 2, A, S, ylab, lam, batch[t, i], bcoef,
                                 x[i * db:(i + 1) * db], g[i * db:(i + 1) * db])
        else:
            _gradient(kind, A, bv, S, ylab, lam, cvec, Bt, perm, offs, scale,
                      nb, db, x, g)
            if noise.shape[0] > 0:
                g += noise[t]
        gc += nb
        xhat[:] = x - gamma * (g - h)
        if coins[t] == 1:
            z[:] = xhat - ratio * h
            mean = _block_mean(z.reshape(nb, db))
            for i in range(nb):
                x[i * db:(i + 1) * db] = mean
            h[:] = h + (p / gamma) * (x - xhat)
            cm += 1
        else:
            x[:] = xhat
        dt, lt, st = _stacked_metrics(x, h, nb, db, gamma, p, has_probe, x_star, h_star)
        dist2[t + 1] = dt
        lyap[t + 1] = lt
        disp[t + 1] = st
        comm[t + 1] = cm
        grads[t + 1] = gc
        if np.dot(x, x) > div_limit:
            return t + 1
    return T


@kernel
def local_rounds_loop(kind, A, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db,
                      x, gamma, tau, rounds, use_control, noise, batch, bcoef,
                      has_probe, x_star, dist2, comm, grads, div_limit):
    """LocalGD / Scaffold rounds: tau local steps per client, then averaging.

    With use_control=1 this is Scaffold option II without client sampling;
    the server and client control variates start at zero.
    """
    X = np.zeros((nb, db))
    ci = np.zeros((nb, db))
    cg = np.zeros(db)
    g = np.empty(db)
    if has_probe == 1:
        dist2[0] = _sqdist(x, x_star)
    else:
        dist2[0] = np.nan
    comm[0] = 0
    grads[0] = 0
    for r in range(rounds):
        for i in range(nb):
            X[i] = x
        for s in range(tau):
            t = r * tau + s
            for i in range(nb):
                if batch.shape[0] > 0:
                    _subset_gradient(kind - 2, A, S, ylab, lam, batch[t, i], bcoef, X[i], g)
                else:
                    _client_grad(kind, A, S, ylab, lam, cvec, Bt, perm, offs, scale, i, X[i], g)
                    if noise.shape[0] > 0:
                        g += noise[t, i * db:(i + 1) * db]
                if use_control == 1:
                    X[i] = X[i] - gamma * (g - ci[i] + cg)
                else:
                    X[i] = X[i] - gamma * g
        if use_control == 1:
            for i in range(nb):
                ci[i] = ci[i] - cg + (x - X[i]) / (tau * gamma)
        xn = _block_mean(X)
        x[:] = xn
        if use_control == 1:
            cg[:] = _block_mean(ci)
        if has_probe == 1:
            dist2[r + 1] = _sqdist(x, x_star)
        else:
            dist2[r + 1] = np.nan
        comm[r + 1] = r + 1
        grads[r + 1] = (r + 1) * nb * tau
        if np.dot(x, x) > div_limit:
            return r + 1
    return rounds


@kernel
def dec_scaffnew_loop(kind, A, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db,
                      W, x, h, gamma, tau, p, T, coins,
                      has_probe, x_star, dist2, comm, grads, disp, div_limit):
    """Gossip variant: communication mixes neighbor iterates through W.

    On coin iterations each node moves a gamma*tau/p fraction toward the
    W-weighted average of the drift-adjusted iterates.
    """
    alpha = gamma * tau / p
    bv = np.empty(0)
    hzero = np.zeros(nb * db)
    g = np.empty(nb * db)
    xhat = np.empty(nb * db)
    cm = 0
    gc = 0
    d0, _, s0 = _stacked_metrics(x, h, nb, db, gamma, p, has_probe, x_star,
                                 hzero)
    dist2[0] = d0
    disp[0] = s0
    comm[0] = 0
    grads[0] = 0
    for t in range(T):
        _gradient(kind, A, bv, S, ylab, lam, cvec, Bt, perm, offs, scale,
                  nb, db, x, g)
        gc += nb
        xhat[:] = x - gamma * (g - h)
        if coins[t] == 1:
            Xh = xhat.reshape(nb, db)
            mixed = np.dot(W, Xh)
            for i in range(nb):
                x[i * db:(i + 1) * db] = (1.0 - alpha) * Xh[i] + alpha * mixed[i]
            h[:] = h + (p / gamma) * (x - xhat)
            cm += 1
        else:
            x[:] = xhat
        dt, _, st = _stacked_metrics(x, h, nb, db, gamma, p, has_probe, x_star,
                                     hzero)
        dist2[t + 1] = dt
        disp[t + 1] = st
        comm[t + 1] = cm
        grads[t + 1] = gc
        if np.dot(x, x) > div_limit:
            return t + 1
    return T


@kernel
def splitskip_consensus_loop(kind, A, S, ylab, lam, cvec, Bt, perm, offs, scale, nb, db,
                             Lt, x, y, gamma, tau, p, T, coins,
                             has_probe, x_star, y_star,
                             dist2, phi, comm, grads, disp, div_limit):
    """Primal-dual prox-skipping specialized to psi = indicator of {0}, with
    the coupling operator acting blockwise through the n x n matrix Lt.

    The dual prox is the identity (the conjugate of the indicator of {0} is
    identically zero), so the dual update on coin iterations is a plain
    ascent step y + tau * L xhat.
    """
    bv = np.empty(0)
    hzero = np.zeros(nb * db)
    g = np.empty(nb * db)
    xhat = np.empty(nb * db)
    cm = 0
    gc = 0
    d0, _, s0 = _stacked_metrics(x, hzero, nb, db, gamma, p, has_probe,
                                 x_star, hzero)
    dist2[0] = d0
    disp[0] = s0
    comm[0] = 0
    grads[0] = 0
    if has_probe == 1:
        tot = 0.0
        X = x.reshape(nb, db)
        for i in range(nb):
            tot += _sqdist(X[i], x_star)
        phi[0] = tot + (gamma / (p * tau)) * _sqdist(y, y_star)
    else:
        phi[0] = np.nan
    for t in range(T):
        _gradient(kind, A, bv, S, ylab, lam, cvec, Bt, perm, offs, scale,
                  nb, db, x, g)
        gc += nb
        lty = np.dot(Lt, y.reshape(nb, db))
        xhat[:] = x - gamma * (g + lty.reshape(nb * db))
        if coins[t] == 1:
            ly = np.dot(Lt, xhat.reshape(nb, db))
            ynew = y + tau * ly.reshape(nb * db)
            ltdy = np.dot(Lt, (ynew - y).reshape(nb, db))
            x[:] = xhat - (gamma / p) * ltdy.reshape(nb * db)
            y[:] = ynew
            cm += 1
        else:
            x[:] = xhat
        dt, _, st = _stacked_metrics(x, hzero, nb, db, gamma, p,
                                     has_probe, x_star, hzero)
        dist2[t + 1] = dt
        disp[t + 1] = st
        comm[t + 1] = cm
        grads[t + 1] = gc
        if has_probe == 1:
            tot = 0.0
            X = x.reshape(nb, db)
            for i in range(nb):
                tot += _sqdist(X[i], x_star)
            phi[t + 1] = tot + (gamma / (p * tau)) * _sqdist(y, y_star)
        else:
            phi[t + 1] = np.nan
        if np.dot(x, x) > div_limit:
            return t + 1
    return T
