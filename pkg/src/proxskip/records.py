"""Per-run metric records and their CSV form.

A RunRecord is one solver trajectory: row k describes the state after k
iterations (or rounds).  Columns are fixed across all methods; metrics
that do not apply to a method are NaN.  Floats are serialized with
``repr`` (shortest round-trip form) so identical runs produce identical
bytes on any platform.
"""

import io
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ("t", "comm_rounds", "grad_evals", "dist2", "lyapunov", "dispersion")


@dataclass
class RunRecord:
    method: str
    seed: int
    params: dict
    t: np.ndarray
    comm: np.ndarray
    grads: np.ndarray
    dist2: np.ndarray
    lyapunov: np.ndarray
    dispersion: np.ndarray
    diverged: bool = False
    final_x: np.ndarray = None
    final_h: np.ndarray = None
    config_hash: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("comm", "grads", "dist2", "lyapunov", "dispersion"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")
        if np.any(np.diff(self.comm) < 0) or np.any(np.diff(self.grads) < 0):
            raise ValueError("counters must be nondecreasing")

    @property
    def rows(self):
        return len(self.t)

    def thin(self, every):
        """Keep every ``every``-th row plus the final row."""
        if every <= 1:
            return self
        keep = np.zeros(self.rows, dtype=bool)
        keep[::every] = True
        keep[-1] = True
        return RunRecord(
            self.method, self.seed, self.params,
            self.t[keep], self.comm[keep], self.grads[keep],
            self.dist2[keep], self.lyapunov[keep], self.dispersion[keep],
            self.diverged, self.final_x, self.final_h, self.config_hash,
            dict(self.extras),
        )

    def to_csv(self):
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        for k in range(self.rows):
            buf.write(
                f"{int(self.t[k])},{int(self.comm[k])},{int(self.grads[k])},"
                f"{float(self.dist2[k])!r},{float(self.lyapunov[k])!r},"
                f"{float(self.dispersion[k])!r}\n"
            )
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def read_csv(path, method="", seed=0, params=None):
    """Load a RunRecord written by ``write_csv`` (metrics only)."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != ",".join(COLUMNS):
            raise ValueError(f"{path}: unexpected header {header!r}")
        raw = np.loadtxt(fh, delimiter=",", ndmin=2)
    if raw.size == 0:
        raise ValueError(f"{path}: empty record")
    return RunRecord(
        method=method, seed=seed, params=params or {},
        t=raw[:, 0].astype(np.int64), comm=raw[:, 1].astype(np.int64),
        grads=raw[:, 2].astype(np.int64), dist2=raw[:, 3],
        lyapunov=raw[:, 4], dispersion=raw[:, 5],
    )


def build_record(method, seed, params, t_stop, comm, grads, dist2, lyap, disp,
                 diverged, final_x=None, final_h=None):
    """Assemble a RunRecord from kernel output arrays, truncated at t_stop."""
    n = t_stop + 1
    nan = np.full(n, np.nan)
    return RunRecord(
        method=method, seed=seed, params=params,
        t=np.arange(n, dtype=np.int64),
        comm=np.asarray(comm[:n], dtype=np.int64),
        grads=np.asarray(grads[:n], dtype=np.int64),
        dist2=np.asarray(dist2[:n], dtype=np.float64) if dist2 is not None else nan,
        lyapunov=np.asarray(lyap[:n], dtype=np.float64) if lyap is not None else nan,
        dispersion=np.asarray(disp[:n], dtype=np.float64) if disp is not None else nan.copy(),
        diverged=diverged,
        final_x=final_x, final_h=final_h,
    )
