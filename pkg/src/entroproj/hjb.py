"""Feynman-Kac evaluation of the drift-correction potential and its checks.

The corrected process of the projection problem has drift b - sigma sigma^T
grad(phi) where phi is the value-style potential

    phi_t(x) = -log E exp[ -int_t^T c_s(Z_s) ds - int_[t,T] psi_s(Z_s) lam(ds) ],

the expectation running over the reference diffusion restarted at (t, x).
The multiplier integral is over the closed interval: an atom sitting exactly
at the query time is included (right-limit convention; at atom times the
potential is discontinuous in t and no other claim is made there).

``feynman_kac_value`` estimates phi by Monte Carlo; the generator is rebuilt
from the query seed on every call, so evaluations at shifted states reuse
the same noise (common random numbers) and central differences in
``feynman_kac_gradient`` see almost no Monte Carlo variance.

``girsanov_density_check`` compares the two available expressions for the
path density on reference-sampled paths -- the direct exponential tilt
versus the initial-potential-plus-stochastic-integral form -- and
``mild_residual`` verifies a lattice potential against the integrated
(semigroup) form of the correction equation, valid for state-independent
diffusion where the semigroup is an exact Gaussian convolution.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from ._validation import as_float_array, check_finite, check_positive
from .measure import Multiplier, TimeGrid, tilt_weights
from .reference import _rng, _simulate

__all__ = [
    "HjbQuery",
    "GirsanovReport",
    "MildResidualReport",
    "feynman_kac_value",
    "feynman_kac_value_with_se",
    "feynman_kac_gradient",
    "girsanov_density_check",
    "mild_residual",
]


@dataclass(frozen=True)
class HjbQuery:
    """Inputs of a Feynman-Kac evaluation.

    ``observable(t, values)`` and optional ``running_cost(t, values)`` are
    vectorized over particle states ((N,) for d = 1, (N, d) otherwise).
    """

    sde: object
    grid: TimeGrid
    multiplier: Multiplier
    observable: Callable
    running_cost: Optional[Callable] = None
    mc_paths: int = 10_000
    seed: int = 0
    fd_step: float = 1e-3
    k_sub: int = 1

    def __post_init__(self):
        if self.mc_paths < 1:
            raise ValueError("mc_paths: must be >= 1")
        check_positive(self.fd_step, "fd_step")
        if self.multiplier.atoms.size != self.grid.nodes.size:
            raise ValueError("multiplier length does not match the grid")


def _field_values(func, t, states, name):
    vals = np.asarray(func(t, states[:, 0] if states.shape[1] == 1 else states), dtype=float)
    vals = np.broadcast_to(vals, (states.shape[0],))
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{name}: non-finite value at t={t!r}")
    return vals


def _restart_nodes(q, t):
    """Fine simulation nodes from t to T and the multiplier atoms they carry.

    Each interval between consecutive retained grid nodes is refined
    ``k_sub`` times (the running-cost trapezoid uses the fine nodes).  The
    atom at t itself is included when t coincides with a grid node (closed
    multiplier interval).
    """
    horizon = q.grid.horizon
    if not -1e-12 <= t <= horizon + 1e-12:
        raise ValueError(f"query time {t!r} outside [0, {horizon}]")
    t = min(max(t, 0.0), horizon)
    coarse = [t] + [float(s) for s in q.grid.nodes if s > t + 1e-12]
    fine = [coarse[0]]
    positions = {0: 0}
    for i in range(len(coarse) - 1):
        seg = np.linspace(coarse[i], coarse[i + 1], q.k_sub + 1)
        fine.extend(float(v) for v in seg[1:])
        positions[i + 1] = len(fine) - 1
    atoms = []
    for j, s in enumerate(q.grid.nodes):
        if q.multiplier.atoms[j] == 0.0:
            continue
        if abs(s - t) <= 1e-12:
            atoms.append((0, float(q.multiplier.atoms[j])))
        elif s > t + 1e-12:
            atoms.append((positions[coarse.index(float(s))], float(q.multiplier.atoms[j])))
    return np.asarray(fine), atoms


def _exponent_samples(q, t, x):
    """Per-path exponent -int c - sum lam psi for paths restarted at (t, x)."""
    nodes, atoms = _restart_nodes(q, t)
    d = q.sde.dim
    x_block = np.broadcast_to(np.asarray(x, dtype=float).reshape(-1), (d,))
    if nodes.size == 1:
        states = np.broadcast_to(x_block, (q.mc_paths, 1, d)).copy()
    else:
        rng = _rng(q.seed)
        start = lambda _rng_, n: np.broadcast_to(x_block, (n, d)).copy()
        states = _simulate(q.sde, nodes, q.mc_paths, rng, 1, tilted_initial=start)
    exponent = np.zeros(q.mc_paths)
    if q.running_cost is not None and nodes.size > 1:
        cost = np.stack(
            [_field_values(q.running_cost, s, states[:, j], "running_cost")
             for j, s in enumerate(nodes)],
            axis=1,
        )
        exponent -= np.trapezoid(cost, nodes, axis=1)
    for pos, mass in atoms:
        exponent -= mass * _field_values(q.observable, nodes[pos], states[:, pos], "observable")
    return exponent


def feynman_kac_value(q, t, x):
    """Monte Carlo estimate of the potential phi_t(x); deterministic in seed."""
    exponent = _exponent_samples(q, t, x)
    return float(-(logsumexp(exponent) - math.log(q.mc_paths)))


def feynman_kac_value_with_se(q, t, x):
    """Value plus its delta-method standard error."""
    exponent = _exponent_samples(q, t, x)
    shift = exponent.max()
    scaled = np.exp(exponent - shift)
    mean = scaled.mean()
    se = float(scaled.std(ddof=1) / (mean * math.sqrt(q.mc_paths)))
    return float(-(math.log(mean) + shift)), se


def feynman_kac_gradient(q, t, x):
    """Central-difference gradient of the potential with common random numbers.

    Returns a float for d = 1, else an array of shape (d,).  The error is
    O(fd_step^2) plus the (small, CRN-suppressed) Monte Carlo term.
    """
    d = q.sde.dim
    x_vec = np.broadcast_to(np.asarray(x, dtype=float).reshape(-1), (d,)).astype(float)
    grad = np.empty(d)
    for k in range(d):
        shift = np.zeros(d)
        shift[k] = q.fd_step
        plus = feynman_kac_value(q, t, x_vec + shift)
        minus = feynman_kac_value(q, t, x_vec - shift)
        grad[k] = (plus - minus) / (2.0 * q.fd_step)
    return float(grad[0]) if d == 1 else grad


@dataclass(frozen=True)
class GirsanovReport:
    correlation: float
    tv_distance: float
    mean_abs_deviation: float
    ess_direct: float
    ess_girsanov: float

    def to_dict(self):
        return {
            "correlation": self.correlation,
            "tv_distance": self.tv_distance,
            "mean_abs_deviation": self.mean_abs_deviation,
            "ess_direct": self.ess_direct,
            "ess_girsanov": self.ess_girsanov,
        }


def girsanov_density_check(q, potential0, potential_grad, reference):
    """Compare the two path-density expressions on reference paths (d = 1).

    Route A tilts by exp[-int c - sum_j lam_j psi(t_j, x_j)] directly; route
    B uses exp[-phi_0(x_0) - int grad sigma dB - 1/2 int |sigma grad|^2 dt]
    with the stochastic integral discretized along the path.  Reports the
    correlation and the total-variation-style deviation of the two
    normalized weight vectors.
    """
    if reference.dim != 1:
        raise ValueError("girsanov_density_check requires d = 1")
    grid = reference.grid
    nodes = grid.nodes
    states = reference.states[:, :, 0]
    n = reference.n_paths

    exponent_a = np.zeros(n)
    if q.running_cost is not None:
        cost = np.stack(
            [_field_values(q.running_cost, s, reference.states[:, j], "running_cost")
             for j, s in enumerate(nodes)],
            axis=1,
        )
        exponent_a -= np.trapezoid(cost, nodes, axis=1)
    psi_vals = np.stack(
        [_field_values(q.observable, s, reference.states[:, j], "observable")
         for j, s in enumerate(nodes)],
        axis=1,
    )
    exponent_a -= psi_vals @ q.multiplier.atoms

    exponent_b = -np.asarray(potential0(states[:, 0]), dtype=float)
    for j in range(grid.num_intervals):
        t_j = nodes[j]
        dt = nodes[j + 1] - t_j
        x_j = reference.states[:, j]
        g = np.broadcast_to(np.asarray(potential_grad(t_j, x_j[:, 0]), dtype=float), (n,))
        b = np.broadcast_to(np.asarray(q.sde.drift(t_j, x_j), dtype=float), (n, 1))[:, 0]
        sig = np.broadcast_to(np.asarray(q.sde.diffusion(t_j, x_j), dtype=float), (n,))
        increment = states[:, j + 1] - states[:, j] - b * dt
        exponent_b -= g * increment + 0.5 * (sig * g) ** 2 * dt

    w_a = tilt_weights(-exponent_a).weights
    w_b = tilt_weights(-exponent_b).weights
    corr = float(np.corrcoef(w_a, w_b)[0, 1])
    tv = 0.5 * float(np.abs(w_a - w_b).sum())
    return GirsanovReport(
        correlation=corr,
        tv_distance=tv,
        mean_abs_deviation=float(np.mean(np.abs(n * w_a - n * w_b))),
        ess_direct=float(1.0 / np.sum(w_a**2)),
        ess_girsanov=float(1.0 / np.sum(w_b**2)),
    )


@dataclass(frozen=True)
class MildResidualReport:
    applicable: bool
    max_residual: float
    interp_estimate: float
    inconclusive: bool
    n_checked: int

    def to_dict(self):
        return {
            "applicable": self.applicable,
            "max_residual": self.max_residual,
            "interp_estimate": self.interp_estimate,
            "inconclusive": self.inconclusive,
            "n_checked": self.n_checked,
        }


def _interp_linear_extrap(xs, ys, points):
    out = np.interp(points, xs, ys)
    lo = points < xs[0]
    hi = points > xs[-1]
    if np.any(lo):
        slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        out[lo] = ys[0] + slope * (points[lo] - xs[0])
    if np.any(hi):
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        out[hi] = ys[-1] + slope * (points[hi] - xs[-1])
    return out


def mild_residual(q, times, xs, values, interior_fraction=0.5, quad_points=21):
    """Residual of a lattice potential in the integrated (semigroup) form.

    ``values[i, k]`` is the potential at (times[i], xs[k]); d = 1 and
    state-independent diffusion are required (the semigroup is then an exact
    Gaussian convolution, evaluated with Gauss-Hermite quadrature and linear
    interpolation).  Returns the max residual over interior lattice nodes at
    non-atom times, together with a coarseness estimate; when the residual
    is dominated by the interpolation estimate the check is inconclusive.
    """
    if q.sde.dim != 1:
        raise ValueError("mild_residual requires d = 1")
    times = as_float_array(times, "times", ndim=1)
    xs = as_float_array(xs, "xs", ndim=1)
    values = as_float_array(values, "values", ndim=2)
    check_finite(values, "values")
    if values.shape != (times.size, xs.size):
        raise ValueError("values shape does not match (times, xs)")

    probes = np.array([xs[0], 0.5 * (xs[0] + xs[-1]), xs[-1]])
    sig = []
    for t in times:
        svals = {float(np.asarray(q.sde.diffusion(t, np.array([[p]])), dtype=float).ravel()[0])
                 for p in probes}
        if len({round(v, 14) for v in svals}) > 1:
            return MildResidualReport(False, math.nan, math.nan, True, 0)
        sig.append(next(iter(svals)))
    sig = np.asarray(sig)

    hz_nodes, hz_weights = np.polynomial.hermite_e.hermegauss(quad_points)
    hz_weights = hz_weights / hz_weights.sum()

    dx = xs[1] - xs[0]
    grad = np.gradient(values, xs, axis=1)
    drift = np.stack(
        [np.broadcast_to(np.asarray(q.sde.drift(t, xs[:, None]), dtype=float), (xs.size, 1))[:, 0]
         for t in times]
    )
    cost = np.zeros_like(values)
    if q.running_cost is not None:
        cost = np.stack([_field_values(q.running_cost, t, xs[:, None], "running_cost")
                         for t in times])
    integrand = drift * grad - 0.5 * (sig[:, None] * grad) ** 2 + cost
    psi_field = np.stack([_field_values(q.observable, t, xs[:, None], "observable")
                          for t in times])

    # variance accumulated by the constant-in-x diffusion between two times
    var_rate = sig**2

    def convolve(field_row, variance):
        if variance <= 0:
            return field_row.copy()
        sd = math.sqrt(variance)
        pts = xs[:, None] + sd * hz_nodes[None, :]
        vals = _interp_linear_extrap(xs, field_row, pts.ravel()).reshape(pts.shape)
        return vals @ hz_weights

    atom_masses = np.zeros(times.size)
    for j, s in enumerate(q.grid.nodes):
        mass = q.multiplier.atoms[j]
        if mass == 0.0:
            continue
        hits = np.where(np.abs(times - s) <= 1e-12)[0]
        if hits.size == 0:
            raise ValueError(
                f"multiplier atom at t={s!r} does not sit on the residual lattice"
            )
        atom_masses[hits[0]] += mass

    lo = int(np.floor(xs.size * (1.0 - interior_fraction) / 2.0))
    hi = xs.size - lo
    sel = slice(lo, hi)

    max_residual = 0.0
    interp_est = 0.0
    n_checked = 0
    second_diff = np.abs(np.diff(values, n=2, axis=1)).max() / 8.0 if xs.size > 2 else 0.0
    for i, t in enumerate(times[:-1]):
        if atom_masses[i] > 0.0:
            continue  # the potential is discontinuous at atom times
        # cumulative variance from t to each later lattice time
        variances = np.concatenate(
            [[0.0], np.cumsum(0.5 * (var_rate[i:-1] + var_rate[i + 1:]) * np.diff(times[i:]))]
        )
        conv_rows = np.stack(
            [convolve(integrand[i + k], variances[k]) for k in range(times.size - i)]
        )
        rhs = np.trapezoid(conv_rows, times[i:], axis=0)
        for k in range(times.size - i):
            if atom_masses[i + k] > 0.0:
                rhs += atom_masses[i + k] * convolve(psi_field[i + k], variances[k])
        resid = np.abs(values[i, sel] - rhs[sel])
        max_residual = max(max_residual, float(resid.max()))
        time_second = np.abs(np.diff(conv_rows[:, sel], n=2, axis=0)).max() / 12.0 \
            if conv_rows.shape[0] > 2 else 0.0
        interp_est = max(interp_est, second_diff + time_second)
        n_checked += resid.size
    inconclusive = bool(max_residual < 2.0 * interp_est)
    return MildResidualReport(True, max_residual, interp_est, inconclusive, n_checked)
