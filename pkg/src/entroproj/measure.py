"""Particle representation of path-space probability measures.

A reference path law is approximated by ``N`` sampled paths discretized on a
:class:`TimeGrid` (a :class:`PathEnsemble`).  Measures that are absolutely
continuous with respect to the reference are carried as normalized weights
over the same particles (:class:`WeightedMeasure`), obtained by exponential
tilting.  Nonnegative multiplier measures over the time grid are stored
atomically, one atom per grid node (:class:`Multiplier`); a continuous
density is encoded through trapezoidal node weights.

All weight arithmetic is done in the log domain: multiplier-times-observable
sums reach magnitudes at which naive exponentials overflow.  Zero weights are
legal (conditioning produces them) and entropy uses the 0*log(0) = 0
convention.  All types are immutable value objects; reductions rely on
numpy's pairwise summation so results do not depend on reduction order.
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ._validation import as_float_array, check_finite, check_nonnegative

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "WeightedMeasure",
    "Multiplier",
    "tilt",
    "tilt_weights",
    "relative_entropy",
    "time_marginal_moment",
    "wasserstein1_1d",
]

_BINARY_MAGIC = b"PENS"


def _frozen_array(values, name, ndim=None):
    arr = as_float_array(values, name, ndim=ndim).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes t_0 = 0 < t_1 < ... < t_M = T."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = _frozen_array(self.nodes, "nodes", ndim=1)
        check_finite(nodes, "nodes")
        if nodes.size < 3:
            raise ValueError("nodes: need at least 3 nodes (two intervals)")
        if nodes[0] != 0.0:
            raise ValueError(f"nodes: first node must be exactly 0, got {nodes[0]!r}")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes: must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, horizon, num_intervals):
        if num_intervals < 2:
            raise ValueError("num_intervals: must be >= 2")
        return cls(np.linspace(0.0, float(horizon), num_intervals + 1))

    @property
    def num_intervals(self):
        return self.nodes.size - 1

    @property
    def horizon(self):
        return float(self.nodes[-1])

    @property
    def dt(self):
        return np.diff(self.nodes)

    @property
    def trapezoid_weights(self):
        """Node weights of the trapezoid rule on [0, T]."""
        w = np.zeros_like(self.nodes)
        dt = self.dt
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        return w

    def node_index(self, t, tol=1e-12):
        """Index of the node equal to ``t`` (within ``tol``), or None."""
        j = int(np.searchsorted(self.nodes, t))
        for k in (j - 1, j, j + 1):
            if 0 <= k <= self.num_intervals and abs(self.nodes[k] - t) <= tol:
                return k
        return None


@dataclass(frozen=True)
class PathEnsemble:
    """N sampled paths on a grid; states has shape (N, M+1, d), d in {1, 2}."""

    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:  # accept (N, M+1) for d = 1
            states = states[:, :, None]
        if states.ndim != 3:
            raise ValueError(f"states: expected 3-d array, got shape {states.shape}")
        n, m_plus_1, d = states.shape
        if n < 1:
            raise ValueError("states: need at least one path")
        if d not in (1, 2):
            raise ValueError(f"states: state dimension must be 1 or 2, got {d}")
        if m_plus_1 != self.grid.nodes.size:
            raise ValueError(
                f"states: {m_plus_1} time slices but grid has {self.grid.nodes.size} nodes"
            )
        check_finite(states, "states")
        states = states.copy()
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[2]

    def states_at(self, node_index):
        """State values at one grid node: shape (N,) for d=1, else (N, d)."""
        m = self.grid.num_intervals
        if not 0 <= node_index <= m:
            raise IndexError(f"node_index {node_index} out of range [0, {m}]")
        block = self.states[:, node_index, :]
        return block[:, 0] if self.dim == 1 else block

    # -- serialization -----------------------------------------------------
    # Flat binary container: magic, then N, M, d as little-endian int64,
    # then the grid nodes and the row-major path values as float64.

    def to_binary(self):
        buf = io.BytesIO()
        buf.write(_BINARY_MAGIC)
        n, m_plus_1, d = self.states.shape
        buf.write(struct.pack("<qqq", n, m_plus_1 - 1, d))
        buf.write(np.ascontiguousarray(self.grid.nodes).tobytes())
        buf.write(np.ascontiguousarray(self.states).tobytes())
        return buf.getvalue()

    @classmethod
    def from_binary(cls, payload):
        buf = io.BytesIO(payload)
        magic = buf.read(4)
        if magic != _BINARY_MAGIC:
            raise ValueError(f"bad magic {magic!r} in binary path container")
        n, m, d = struct.unpack("<qqq", buf.read(24))
        nodes = np.frombuffer(buf.read(8 * (m + 1)), dtype="<f8")
        states = np.frombuffer(buf.read(8 * n * (m + 1) * d), dtype="<f8")
        return cls(TimeGrid(nodes), states.reshape(n, m + 1, d))

    def to_csv(self, max_paths=1000):
        """Long-format CSV (path, node, t, x1[, x2]); only for small N."""
        if self.n_paths > max_paths:
            raise ValueError(
                f"CSV export limited to {max_paths} paths, got {self.n_paths}"
            )
        cols = "path,node,t,x1" + (",x2" if self.dim == 2 else "")
        lines = [cols]
        for i in range(self.n_paths):
            for j, t in enumerate(self.grid.nodes):
                vals = ",".join(repr(float(v)) for v in self.states[i, j])
                lines.append(f"{i},{j},{float(t)!r},{vals}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
        n = max(int(r[0]) for r in rows) + 1
        m_plus_1 = max(int(r[1]) for r in rows) + 1
        d = len(rows[0]) - 3
        nodes = np.zeros(m_plus_1)
        states = np.zeros((n, m_plus_1, d))
        for r in rows:
            i, j = int(r[0]), int(r[1])
            nodes[j] = float(r[2])
            states[i, j] = [float(v) for v in r[3:]]
        return cls(TimeGrid(nodes), states)


@dataclass(frozen=True)
class WeightedMeasure:
    """Normalized particle weights plus the tilt's log-normalizer.

    ``log_normalizer`` records log((1/N) sum_i exp(-V_i)) for the potential V
    that produced the weights; it is 0 for the uniform measure.
    """

    weights: np.ndarray
    log_normalizer: float = 0.0

    def __post_init__(self):
        w = _frozen_array(self.weights, "weights", ndim=1)
        check_finite(w, "weights")
        check_nonnegative(w, "weights")
        s = float(w.sum())
        if abs(s - 1.0) > 1e-12:
            raise ValueError(f"weights: sum to {s!r}, expected 1 within 1e-12")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "log_normalizer", float(self.log_normalizer))

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / n), 0.0)

    @property
    def n_particles(self):
        return self.weights.size

    def effective_sample_size(self):
        return float(1.0 / np.sum(self.weights**2))

    def to_json(self):
        return json.dumps(
            {"weights": self.weights.tolist(), "log_normalizer": self.log_normalizer}
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(np.asarray(doc["weights"]), doc["log_normalizer"])


@dataclass(frozen=True)
class Multiplier:
    """Nonnegative atomic measure on the grid nodes, one atom per node."""

    atoms: np.ndarray

    def __post_init__(self):
        atoms = _frozen_array(self.atoms, "atoms", ndim=1)
        check_finite(atoms, "atoms")
        check_nonnegative(atoms, "atoms")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def zero(cls, num_nodes):
        return cls(np.zeros(num_nodes))

    @property
    def mass(self):
        return float(self.atoms.sum())

    def nonzero_pairs(self, threshold=0.0):
        """(node index, weight) pairs of the atoms above ``threshold``."""
        return [(int(j), float(a)) for j, a in enumerate(self.atoms) if a > threshold]

    def to_json(self):
        return json.dumps({"atoms": self.atoms.tolist()})

    @classmethod
    def from_json(cls, text):
        return cls(np.asarray(json.loads(text)["atoms"]))


def tilt_weights(potential):
    """Exponential tilt w_i = exp(-V_i) / sum_j exp(-V_j), max-shifted.

    Entries of ``potential`` may be +inf (the particle gets weight zero);
    NaN or -inf entries, or an all-infinite potential, are rejected.
    """
    v = as_float_array(potential, "potential", ndim=1)
    if np.any(np.isnan(v)) or np.any(np.isneginf(v)):
        raise ValueError("potential: entries must be finite or +inf")
    neg_v = -v
    log_total = logsumexp(neg_v)
    if not np.isfinite(log_total):
        raise ValueError("degenerate tilt: all potential values are infinite")
    with np.errstate(invalid="ignore"):
        w = np.exp(neg_v - log_total)
    w[np.isposinf(v)] = 0.0
    w = w / w.sum()
    log_normalizer = float(log_total - np.log(v.size))
    return WeightedMeasure(w, log_normalizer)


def tilt(ensemble, potential):
    """Tilt the uniform measure on ``ensemble`` by exp(-potential)."""
    v = as_float_array(potential, "potential", ndim=1)
    if v.size != ensemble.n_paths:
        raise ValueError(
            f"potential: length {v.size} does not match {ensemble.n_paths} paths"
        )
    return tilt_weights(v)


def relative_entropy(measure):
    """Entropy of the weights relative to the uniform ensemble measure.

    Returns sum_i w_i log(N w_i) >= 0, with 0*log(0) = 0.
    """
    w = measure.weights
    n = w.size
    pos = w > 0
    return float(np.sum(w[pos] * np.log(n * w[pos])))


def time_marginal_moment(ensemble, measure, f, node_index):
    """Weighted moment sum_i w_i f(x^i at node) of a time marginal.

    ``f`` is vectorized over particles: it receives an (N,) array for d = 1
    (an (N, d) array for d = 2) and must return an (N,) array or a scalar.
    """
    if measure.n_particles != ensemble.n_paths:
        raise ValueError("measure and ensemble particle counts differ")
    values = np.broadcast_to(
        np.asarray(f(ensemble.states_at(node_index)), dtype=float), (ensemble.n_paths,)
    )
    return float(np.dot(measure.weights, values))


def wasserstein1_1d(values_a, values_b, weights_a=None, weights_b=None):
    """W1 distance between two weighted 1-d empirical measures.

    Computed by quantile coupling (the integrated CDF difference), which is
    exact for discrete measures.
    """
    a = as_float_array(values_a, "values_a", ndim=1)
    b = as_float_array(values_b, "values_b", ndim=1)
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1_1d: empty sample set")
    check_finite(a, "values_a")
    check_finite(b, "values_b")
    return float(stats.wasserstein_distance(a, b, weights_a, weights_b))
