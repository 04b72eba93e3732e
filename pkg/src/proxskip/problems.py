"""Objective oracles, client splits, and dataset plumbing.

Problems expose a value/gradient oracle plus per-sample structure so they
can be partitioned across simulated clients.  A client's local objective is
the (n/N)-weighted sum of its samples' losses plus the full ridge term, so
the average of the n client objectives reconstructs the global objective
exactly, for every partition.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .linalg import require_symmetric, symmetric_eigenvalues

# Argument bundle consumed by the run kernels.  kind: 0 quadratic,
# 1 logistic, 2 stacked-quadratic, 3 stacked-logistic.
KernelSpec = namedtuple(
    "KernelSpec",
    "kind A bvec S ylab lam cvec Bt perm offs scale nblocks blockdim",
)

_EMPTY_M = np.empty((0, 0))
_EMPTY_V = np.empty(0)
_EMPTY_I = np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class SmoothnessInfo:
    """Smoothness L and strong-convexity mu of an objective (L >= mu >= 0)."""

    L: float
    mu: float

    def __post_init__(self):
        if not (self.L >= self.mu >= 0.0):
            raise ValueError(f"need L >= mu >= 0, got L={self.L}, mu={self.mu}")

    @property
    def kappa(self):
        return self.L / self.mu if self.mu > 0 else np.inf


class ClientSplit:
    """Partition of sample indices into nonempty client groups."""

    def __init__(self, groups, n_samples):
        groups = [np.asarray(g, dtype=np.int64) for g in groups]
        if not groups or any(len(g) == 0 for g in groups):
            raise ValueError("every client group must be nonempty")
        flat = np.concatenate(groups)
        if len(flat) != n_samples or not np.array_equal(np.sort(flat), np.arange(n_samples)):
            raise ValueError("groups must partition range(n_samples)")
        self.groups = groups
        self.n_samples = int(n_samples)
        self.perm = flat
        self.offsets = np.zeros(len(groups) + 1, dtype=np.int64)
        np.cumsum([len(g) for g in groups], out=self.offsets[1:])

    @property
    def n(self):
        return len(self.groups)


def heterogeneous_split(n_samples, n_clients, mode="round-robin", seed=0, labels=None):
    """Deterministic partition of sample indices across clients.

    round-robin interleaves samples (near-homogeneous clients);
    shard-by-label stable-sorts by label and cuts contiguous blocks
    (maximally heterogeneous).  Both modes are deterministic; ``seed`` is
    accepted for interface stability but not consumed by either.
    """
    if n_clients > n_samples:
        raise ValueError(f"cannot split {n_samples} samples across {n_clients} clients")
    if mode == "round-robin":
        groups = [np.arange(i, n_samples, n_clients, dtype=np.int64) for i in range(n_clients)]
    elif mode == "shard-by-label":
        if labels is None:
            raise ValueError("shard-by-label needs the label vector")
        labels = np.asarray(labels)
        if len(labels) != n_samples:
            raise ValueError("labels length must equal n_samples")
        order = np.argsort(labels, kind="stable")
        base, rem = divmod(n_samples, n_clients)
        sizes = [base + 1 if i < rem else base for i in range(n_clients)]
        cuts = np.cumsum([0] + sizes)
        groups = [order[cuts[i]:cuts[i + 1]] for i in range(n_clients)]
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return ClientSplit(groups, n_samples)


class Problem:
    """Base class: a smooth objective with per-sample decomposition.

    Gradients are evaluated through the shared compute kernels so that a
    hand-rolled loop calling ``problem.gradient`` reproduces a kernel run
    bit for bit.
    """

    dim = 0
    n_samples = 0

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        x = self._check_x(x)
        out = np.empty_like(x)
        s = self.kernel_spec()
        _kernels._gradient(s.kind, s.A, s.bvec, s.S, s.ylab, s.lam, s.cvec, s.Bt,
                           s.perm, s.offs, s.scale, s.nblocks, s.blockdim, x, out)
        return out

    def subset_gradient(self, idx, scale, x):
        """scale * sum of per-sample loss gradients over idx, plus the ridge term."""
        x = self._check_x(x)
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        out = np.empty_like(x)
        s = self.kernel_spec()
        _kernels._subset_gradient(s.kind, s.A, s.S, s.ylab, s.lam, idx, float(scale), x, out)
        return out

    def smoothness_constants(self):
        raise NotImplementedError

    def kernel_spec(self):
        raise NotImplementedError

    def _check_x(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of dimension {self.dim}, got shape {x.shape}")
        return x


class QuadraticProblem(Problem):
    """f(x) = 0.5 x'Ax - bbar'x with per-sample linear terms.

    ``b`` may be a single d-vector or an (N, d) matrix of per-sample rows;
    every sample shares the curvature A and owns one linear term, so client
    heterogeneity lives entirely in the rows of b.
    """

    def __init__(self, A, b):
        self.A = np.ascontiguousarray(require_symmetric(A))
        b = np.asarray(b, dtype=np.float64)
        if b.ndim == 1:
            b = b[None, :]
        if b.ndim != 2 or b.shape[1] != self.A.shape[0]:
            raise ValueError(f"b rows must have dimension {self.A.shape[0]}")
        self.b_rows = np.ascontiguousarray(b)
        self.b = self.b_rows.mean(axis=0)
        self.dim = self.A.shape[0]
        self.n_samples = self.b_rows.shape[0]
        self._info = None
        self._spec = None

    def value(self, x):
        x = self._check_x(x)
        return 0.5 * float(x @ (self.A @ x)) - float(self.b @ x)

    def solve_minimizer(self):
        return np.linalg.solve(self.A, self.b)

    def smoothness_constants(self):
        if self._info is None:
            w = symmetric_eigenvalues(self.A)
            self._info = SmoothnessInfo(L=float(w[0]), mu=float(max(w[-1], 0.0)))
        return self._info

    def kernel_spec(self):
        if self._spec is None:
            self._spec = KernelSpec(
                kind=0, A=self.A, bvec=self.b, S=self.b_rows, ylab=_EMPTY_V, lam=0.0,
                cvec=_EMPTY_V, Bt=_EMPTY_M, perm=_EMPTY_I, offs=_EMPTY_I,
                scale=1.0 / self.n_samples, nblocks=1, blockdim=self.dim,
            )
        return self._spec


class LogisticProblem(Problem):
    """Regularized logistic regression over (data, +/-1 labels)."""

    def __init__(self, data, labels, lam):
        data = np.ascontiguousarray(data, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.float64)
        if data.ndim != 2 or labels.shape != (data.shape[0],):
            raise ValueError("data must be (N, d) with one label per row")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if lam < 0:
            raise ValueError("lam must be >= 0")
        self.data = data
        self.labels = labels
        self.lam = float(lam)
        self.n_samples, self.dim = data.shape
        self._info = None
        self._spec = None

    def value(self, x):
        x = self._check_x(x)
        margins = self.labels * (self.data @ x)
        loss = float(np.mean(np.logaddexp(0.0, -margins)))
        return loss + 0.5 * self.lam * float(x @ x)

    def hessian(self, x):
        x = self._check_x(x)
        s = -self.labels * (self.data @ x)
        t = np.exp(-np.abs(s))
        sig = np.where(s >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
        w = sig * (1.0 - sig)
        return (self.data.T * w) @ self.data / self.n_samples + self.lam * np.eye(self.dim)

    def data_curvature(self):
        """lambda_max(X'X) by power iteration (50 sweeps, rel tol 1e-6)."""
        v = np.ones(self.dim) + 1e-3 * np.arange(self.dim)
        v /= np.linalg.norm(v)
        lam_prev = 0.0
        for _ in range(50):
            w = self.data.T @ (self.data @ v)
            lam = float(np.linalg.norm(w))
            if lam == 0.0:
                return 0.0
            v = w / lam
            if abs(lam - lam_prev) <= 1e-6 * lam:
                break
            lam_prev = lam
        return lam

    def smoothness_constants(self):
        if self._info is None:
            L = self.data_curvature() / (4.0 * self.n_samples) + self.lam
            self._info = SmoothnessInfo(L=L, mu=self.lam)
        return self._info

    def kernel_spec(self):
        if self._spec is None:
            self._spec = KernelSpec(
                kind=1, A=_EMPTY_M, bvec=_EMPTY_V, S=self.data, ylab=self.labels,
                lam=self.lam, cvec=_EMPTY_V, Bt=_EMPTY_M, perm=_EMPTY_I, offs=_EMPTY_I,
                scale=1.0 / self.n_samples, nblocks=1, blockdim=self.dim,
            )
        return self._spec


def client_gradient(problem, split, i, x):
    """Gradient of client i's local objective f_i.

    f_i is the (n/N)-scaled sum of the client's sample losses plus the full
    regularizer, which for equal-size groups is exactly the sample mean.
    With this weighting (1/n) sum_i grad f_i(x) == grad f(x) for any split.
    """
    if not 0 <= i < split.n:
        raise IndexError(f"client index {i} out of range for {split.n} clients")
    scale = split.n / problem.n_samples
    return problem.subset_gradient(split.groups[i], scale, x)


def client_value(problem, split, i, x):
    scale = split.n / problem.n_samples
    idx = split.groups[i]
    if isinstance(problem, QuadraticProblem):
        quad = 0.5 * float(x @ (problem.A @ x))
        return scale * (len(idx) * quad - float(problem.b_rows[idx].sum(axis=0) @ x))
    margins = problem.labels[idx] * (problem.data[idx] @ x)
    loss = scale * float(np.sum(np.logaddexp(0.0, -margins)))
    return loss + 0.5 * problem.lam * float(x @ x)


class StackedProblem(Problem):
    """Consensus lift of a split problem: F(x_1..x_n) = sum_i f_i(x_i).

    Lives on client-major stacked vectors of dimension n*d.  Each block
    objective is L-smooth and mu-strongly convex with the base problem's
    constants, so F inherits them; pairing F with a Consensus prox makes
    prox-skipping on F identical to the federated simulation.
    """

    def __init__(self, problem, split):
        self.base = problem
        self.split = split
        self.dim = problem.dim * split.n
        self.n_samples = problem.n_samples
        self._spec = None

    def value(self, x):
        x = self._check_x(x)
        d = self.base.dim
        return sum(
            client_value(self.base, self.split, i, x[i * d:(i + 1) * d])
            for i in range(self.split.n)
        )

    def smoothness_constants(self):
        # Each block objective shares the base constants (quadratics exactly;
        # logistic clients use the single global L, matching the stepsize
        # convention of the federated solvers).
        return self.base.smoothness_constants()

    def kernel_spec(self):
        if self._spec is not None:
            return self._spec
        base = self.base
        split = self.split
        scale = split.n / base.n_samples
        if isinstance(base, QuadraticProblem):
            sizes = np.array([len(g) for g in split.groups], dtype=np.float64)
            Bt = np.stack([scale * base.b_rows[g].sum(axis=0) for g in split.groups])
            self._spec = KernelSpec(
                kind=2, A=base.A, bvec=_EMPTY_V, S=base.b_rows, ylab=_EMPTY_V, lam=0.0,
                cvec=scale * sizes, Bt=np.ascontiguousarray(Bt),
                perm=split.perm, offs=split.offsets, scale=scale,
                nblocks=split.n, blockdim=base.dim,
            )
        else:
            self._spec = KernelSpec(
                kind=3, A=_EMPTY_M, bvec=_EMPTY_V, S=base.data, ylab=base.labels,
                lam=base.lam, cvec=_EMPTY_V, Bt=_EMPTY_M,
                perm=split.perm, offs=split.offsets, scale=scale,
                nblocks=split.n, blockdim=base.dim,
            )
        return self._spec


class LibsvmParseError(ValueError):
    pass


def parse_libsvm(text):
    """Parse LIBSVM sparse text into a dense (N, d) matrix and +/-1 labels.

    Indices are 1-based; d is the largest index seen.  Labels may be
    +1/-1 or 0/1 (0 maps to -1).  Comments are not supported; a '#'
    anywhere is a parse error, as is any malformed field.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii")
    rows = []
    labels = []
    max_idx = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if "#" in line:
            raise LibsvmParseError(f"line {lineno}: comments are not supported")
        fields = line.split()
        if not fields:
            continue
        token = fields[0]
        if token in ("+1", "1", "1.0", "+1.0"):
            label = 1.0
        elif token in ("-1", "-1.0"):
            label = -1.0
        elif token in ("0", "0.0"):
            label = -1.0
        else:
            raise LibsvmParseError(f"line {lineno}: bad label {token!r}")
        feats = {}
        for field in fields[1:]:
            try:
                idx_s, val_s = field.split(":", 1)
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(f"line {lineno}: bad feature {field!r}") from None
            if idx < 1:
                raise LibsvmParseError(f"line {lineno}: index {idx} is not 1-based")
            feats[idx] = val
            max_idx = max(max_idx, idx)
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise LibsvmParseError("no samples")
    X = np.zeros((len(rows), max_idx))
    for i, feats in enumerate(rows):
        for idx, val in feats.items():
            X[i, idx - 1] = val
    return X, np.asarray(labels)


def serialize_libsvm(X, labels):
    """Inverse of ``parse_libsvm`` on its own output (zeros are dropped)."""
    lines = []
    for row, label in zip(np.asarray(X), labels):
        fields = ["+1" if label > 0 else "-1"]
        fields += [f"{j + 1}:{float(row[j])!r}" for j in np.nonzero(row)[0]]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def synthetic_quadratic(d, kappa, n_samples=None, seed=0, heterogeneity=0.0, rotate=True):
    """Quadratic with eigenvalues spanning [1/kappa, 1] (so L = 1).

    Per-sample linear terms are spread around a common center with standard
    deviation ``heterogeneity``, giving clients genuinely different optima.
    """
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    rng = np.random.default_rng(seed)
    eigs = np.geomspace(1.0 / kappa, 1.0, d) if d > 1 else np.ones(1)
    if rotate and d > 1:
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        A = (Q * eigs) @ Q.T
        A = 0.5 * (A + A.T)
    else:
        A = np.diag(eigs)
    center = A @ rng.standard_normal(d)
    n_samples = n_samples or 1
    offsets = rng.standard_normal((n_samples, d)) * heterogeneity
    offsets -= offsets.mean(axis=0)
    return QuadraticProblem(A, center + offsets)


def synthetic_logistic(n_samples, d, seed=0, lam_rule=1e-4, separation=2.0, flip=0.05):
    """Gaussian features with a planted separator; lam = lam_rule * L_data.

    Samples are shifted by +/- separation/2 along the separator before
    labeling, so ``separation`` controls the class margin; ``flip`` is the
    label-noise fraction.  Together they set how strongly clients disagree
    at the optimum under heterogeneous splits.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_samples, d)) / np.sqrt(d)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    signs = np.where(rng.random(n_samples) < 0.5, -1.0, 1.0)
    X += np.outer(signs, w) * (separation / (2.0 * np.sqrt(d)))
    y = np.sign(X @ w + 1e-12)
    n_flip = int(flip * n_samples)
    if n_flip:
        y[rng.choice(n_samples, size=n_flip, replace=False)] *= -1.0
    plain = LogisticProblem(X, y, 0.0)
    lam = lam_rule * plain.smoothness_constants().L
    return LogisticProblem(X, y, lam)
