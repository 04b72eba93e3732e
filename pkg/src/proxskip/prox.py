"""Proximity operators.

Each operator maps x to argmin_y 0.5*||y - x||^2 + scale * psi(y) for its
regularizer psi.  The consensus operator treats its input as n stacked
d-blocks in client-major order and projects onto the subspace where all
blocks agree; that averaging step is the package-wide model of one
communication round.
"""

import numpy as np


class UnsupportedProxError(NotImplementedError):
    """Raised when an operator has no implemented conjugate prox."""


def consensus_mean(blocks):
    """Mean over the rows of an (n, d) array, accumulated in row order.

    If all rows are already identical the first row is returned as-is, so
    projecting a consensus point is exactly the identity.
    """
    n = blocks.shape[0]
    if n == 1:
        return blocks[0].copy()
    for i in range(1, n):
        if not np.array_equal(blocks[i], blocks[0]):
            break
    else:
        return blocks[0].copy()
    acc = blocks[0].copy()
    for i in range(1, n):
        acc += blocks[i]
    acc /= n
    return acc


class ProxOperator:
    """Base class; subclasses implement ``prox`` and optionally its conjugate."""

    def prox(self, scale, x):
        raise NotImplementedError

    def conjugate_prox(self, scale, y):
        raise UnsupportedProxError(
            f"{type(self).__name__} has no implemented conjugate prox"
        )

    def _check(self, scale, x):
        if not scale > 0:
            raise ValueError(f"prox scale must be positive, got {scale}")
        return np.asarray(x, dtype=np.float64)

    def kernel_code(self):
        """(kind, weight, blocks) triple understood by the run kernels."""
        raise NotImplementedError


class L1(ProxOperator):
    """psi(x) = weight * ||x||_1; prox is soft-thresholding.

    ``L1(0.0)`` is the zero regularizer: its prox is the identity.
    """

    def __init__(self, weight):
        if weight < 0:
            raise ValueError("L1 weight must be >= 0")
        self.weight = float(weight)

    def prox(self, scale, x):
        x = self._check(scale, x)
        t = scale * self.weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    def conjugate_prox(self, scale, y):
        # Conjugate of a scaled L1 norm is the indicator of the inf-ball of
        # radius ``weight``; its prox is the clip, independent of scale.
        y = self._check(scale, y)
        return np.clip(y, -self.weight, self.weight)

    def value(self, x):
        return self.weight * float(np.sum(np.abs(x)))

    def kernel_code(self):
        return 1, self.weight, 1


class SquaredL2(ProxOperator):
    """psi(x) = weight * ||x||^2; prox shrinks by 1/(1 + 2*scale*weight)."""

    def __init__(self, weight):
        if weight < 0:
            raise ValueError("SquaredL2 weight must be >= 0")
        self.weight = float(weight)

    def prox(self, scale, x):
        x = self._check(scale, x)
        return x / (1.0 + 2.0 * scale * self.weight)

    def value(self, x):
        return self.weight * float(np.dot(x, x))

    def kernel_code(self):
        return 2, self.weight, 1


class Consensus(ProxOperator):
    """Indicator of {x_1 = ... = x_n} on client-major stacked vectors."""

    def __init__(self, n, d):
        if n < 1 or d < 1:
            raise ValueError("Consensus needs n >= 1 and d >= 1")
        self.n = int(n)
        self.d = int(d)

    def prox(self, scale, x):
        x = self._check(scale, x)
        if x.size != self.n * self.d:
            raise ValueError(
                f"expected a stacked vector of size {self.n * self.d}, got {x.size}"
            )
        mean = consensus_mean(x.reshape(self.n, self.d))
        return np.tile(mean, self.n)

    def value(self, x):
        return 0.0

    def kernel_code(self):
        return 3, 0.0, self.n


class IndicatorZero(ProxOperator):
    """Indicator of the singleton {0}; prox maps everything to zero."""

    def prox(self, scale, x):
        x = self._check(scale, x)
        return np.zeros_like(x)

    def conjugate_prox(self, scale, y):
        # The conjugate is identically zero, so its prox is the identity.
        y = self._check(scale, y)
        return y.copy()

    def value(self, x):
        return 0.0 if not np.any(x) else np.inf

    def kernel_code(self):
        return 4, 0.0, 1
