"""Counter-based splittable random number generation.

Every random quantity in this package is addressed, never sampled from
mutable state: a 64-bit value is a pure function of ``(seed, stream,
counter)``.  Streams keep independent uses of randomness apart (coin flips,
gradient noise, minibatch sampling), and the counter is the iteration
index, so any draw can be regenerated in isolation.  This is what makes
runs reproducible regardless of execution order or parallelism.

The generator is a SplitMix-style construction: the counter is multiplied
onto an odd increment and passed through an avalanching finalizer.  All
arithmetic is uint64 with wraparound, done on numpy arrays so the exact
same bits are produced under either compute backend.
"""

import numpy as np

# Streams, by convention across the package.
STREAM_COIN = 0
STREAM_NOISE = 1
STREAM_BATCH = 2

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_SEED_MUL = np.uint64(0xA24BAED4963EE407)
_STREAM_MUL = np.uint64(0x9FB21C651E98DF25)
_KEY_SALT = np.uint64(0x5851F42D4C957F2D)

_U53_INV = np.float64(2.0 ** -53)


def _mix(z):
    """SplitMix64 finalizer on a uint64 array."""
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def stream_key(seed, stream):
    """Derive the uint64 key for a (seed, stream) pair."""
    s = np.asarray([seed], dtype=np.uint64)
    t = np.asarray([stream], dtype=np.uint64)
    return _mix(s * _SEED_MUL ^ t * _STREAM_MUL ^ _KEY_SALT)[0]


def derive(key, counters):
    """Raw uint64 words at the given counters under ``key``.

    Also serves as sub-key derivation: feeding the result back in as a key
    splits off an independent generator for nested draws.
    """
    c = np.atleast_1d(np.asarray(counters, dtype=np.uint64))
    return _mix(np.uint64(key) + (c + np.uint64(1)) * _GAMMA)


def uniforms(key, start, count):
    """float64 values in [0, 1) at counters start .. start+count-1."""
    c = np.arange(start, start + count, dtype=np.uint64)
    return (derive(key, c) >> np.uint64(11)).astype(np.float64) * _U53_INV


def coin_flips(seed, p, T, start=0):
    """Bernoulli(p) bits for iterations start .. start+T-1 (uint8)."""
    u = uniforms(stream_key(seed, STREAM_COIN), start, T)
    return (u < p).astype(np.uint8)


def normals(key, count):
    """Standard normal draws at counters 0 .. count-1 via Box-Muller."""
    n_pairs = (count + 1) // 2
    u = uniforms(key, 0, 2 * n_pairs)
    u1 = u[0::2]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * np.pi) * u2
    out = np.empty(2 * n_pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count]


def step_normals(seed, t, count):
    """Normals attached to iteration t of the noise stream."""
    subkey = derive(stream_key(seed, STREAM_NOISE), t)[0]
    return normals(subkey, count)


def noise_table(seed, T, count):
    """(T, count) normals, row t identical to ``step_normals(seed, t, count)``."""
    key = stream_key(seed, STREAM_NOISE)
    subkeys = derive(key, np.arange(T, dtype=np.uint64))
    n_pairs = (count + 1) // 2
    ctrs = np.arange(2 * n_pairs, dtype=np.uint64)
    bits = _mix(subkeys[:, None] + (ctrs[None, :] + np.uint64(1)) * _GAMMA)
    u = (bits >> np.uint64(11)).astype(np.float64) * _U53_INV
    u1 = u[:, 0::2]
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * np.pi) * u2
    out = np.empty((T, 2 * n_pairs))
    out[:, 0::2] = r * np.cos(theta)
    out[:, 1::2] = r * np.sin(theta)
    return out[:, :count]


def batch_indices(seed, t, tag, pool_size, batch):
    """Uniform sample of ``batch`` distinct indices from range(pool_size).

    Partial Fisher-Yates driven by the batch stream; ``tag`` separates
    callers sharing an iteration (e.g. clients within a round).
    """
    subkey = derive(derive(stream_key(seed, STREAM_BATCH), t)[0], tag)[0]
    words = derive(subkey, np.arange(batch, dtype=np.uint64))
    idx = np.arange(pool_size, dtype=np.int64)
    for j in range(batch):
        r = j + int(words[j] % np.uint64(pool_size - j))
        idx[j], idx[r] = idx[r], idx[j]
    return idx[:batch]


def batch_table(seed, T, tags, pool_sizes, batch):
    """(T, len(tags), batch) minibatch index table for a whole run."""
    n = len(tags)
    out = np.empty((T, n, batch), dtype=np.int64)
    for t in range(T):
        for k in range(n):
            out[t, k] = batch_indices(seed, t, tags[k], pool_sizes[k], batch)
    return out
