"""Reference diffusion sampling, corrected-SDE simulation, and Gaussian oracles.

Two Gaussian families ship with exact transition samplers so that
discretization bias never pollutes checks against closed forms:

* drifted Brownian motion   dX = mdot(t) dt + dB,   X_0 ~ N(x0, s2),
* Ornstein-Uhlenbeck        dX = (1 - X) dt + dB,   X_0 ~ N(x0, s2).

Arbitrary coefficients are handled by an Euler-Maruyama stepper with a
configurable sub-stepping factor.  ``corrected_sde_sample`` simulates the
drift-corrected process  dX = (b - sigma sigma^T grad) dt + sigma dB  started
from a tilted initial law; for the Gaussian families the Brownian part of
each sub-step is still sampled exactly and only the correction term is
integrated numerically (mid-point rule), so a vanishing correction reproduces
the reference sampler bit for bit.

``gaussian_oracle_*`` return the closed-form solution of the projection
problem with the running-mean constraint (observable psi(x) = x): the optimal
multiplier, the drift-correction gradient, the tilted initial law, and the
mean/variance curves, for each of the three qualitative regimes

* ``terminal_atom``        multiplier is a single atom at the horizon,
* ``interior_activation``  a density switches on at an activation time,
* ``initial_atom``         an atom at time 0 pushes the initial law onto the
                           constraint before the dynamics start.

Randomness is counter-based (Philox) keyed by the caller's seed; each
particle consumes a fixed, index-determined block of the counter space, so
results are reproducible and independent of how reductions are scheduled.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from ._validation import check_positive
from .measure import Multiplier, PathEnsemble, TimeGrid

__all__ = [
    "SdeSpec",
    "OracleSolution",
    "drifted_brownian_spec",
    "ornstein_uhlenbeck_spec",
    "custom_sde_spec",
    "sample_paths",
    "corrected_sde_sample",
    "gaussian_oracle_drifted_bm",
    "gaussian_oracle_ou",
]


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class SdeSpec:
    """Coefficients and initial law of a reference diffusion.

    ``drift(t, x)`` maps an (N, d) state block to (N, d); ``diffusion(t, x)``
    may return a scalar, a (d,) diagonal, a (d, d) matrix, or an (N, d, d)
    stack.  The initial law is Gaussian (``init_mean``/``init_var``) unless
    ``init_sampler(rng, n) -> (n, d)`` is given.  ``family`` selects an exact
    transition sampler ("drifted_bm", "ou") or "custom" for Euler-Maruyama.
    """

    dim: int
    drift: Callable
    diffusion: Callable
    init_mean: np.ndarray
    init_var: np.ndarray
    init_sampler: Optional[Callable] = None
    lipschitz_hint: float = 1.0
    family: str = "custom"
    mean_path: Optional[Callable] = None
    mean_path_dot: Optional[Callable] = None
    mean_path_ddot: Optional[Callable] = None


def drifted_brownian_spec(x0_mean, x0_var, mean_path, mean_path_dot, mean_path_ddot=None):
    """Unit-diffusion Brownian motion with deterministic mean path m(t)."""

    def drift(t, x):
        return np.full_like(x, mean_path_dot(t))

    return SdeSpec(
        dim=1,
        drift=drift,
        diffusion=lambda t, x: 1.0,
        init_mean=np.array([float(x0_mean)]),
        init_var=np.array([float(x0_var)]),
        family="drifted_bm",
        mean_path=mean_path,
        mean_path_dot=mean_path_dot,
        mean_path_ddot=mean_path_ddot,
    )


def ornstein_uhlenbeck_spec(x0_mean, x0_var):
    """Unit-diffusion OU process dX = (1 - X) dt + dB."""
    return SdeSpec(
        dim=1,
        drift=lambda t, x: 1.0 - x,
        diffusion=lambda t, x: 1.0,
        init_mean=np.array([float(x0_mean)]),
        init_var=np.array([float(x0_var)]),
        lipschitz_hint=1.0,
        family="ou",
    )


def custom_sde_spec(dim, drift, diffusion, init_mean, init_var, init_sampler=None,
                    lipschitz_hint=1.0):
    if dim not in (1, 2):
        raise ValueError(f"dim: must be 1 or 2, got {dim}")
    return SdeSpec(
        dim=dim,
        drift=drift,
        diffusion=diffusion,
        init_mean=np.broadcast_to(np.asarray(init_mean, dtype=float), (dim,)).copy(),
        init_var=np.broadcast_to(np.asarray(init_var, dtype=float), (dim,)).copy(),
        init_sampler=init_sampler,
        lipschitz_hint=lipschitz_hint,
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _draw_initial(spec, rng, n, tilted=None):
    """Initial states (n, d).  ``tilted`` overrides the spec's law: either a
    callable (rng, n) -> (n, d) or a (mean, var) pair for d = 1."""
    if tilted is None:
        if spec.init_sampler is not None:
            x0 = np.asarray(spec.init_sampler(rng, n), dtype=float)
            return x0.reshape(n, spec.dim)
        mean, var = spec.init_mean, spec.init_var
    elif callable(tilted):
        return np.asarray(tilted(rng, n), dtype=float).reshape(n, spec.dim)
    else:
        mean, var = tilted
        mean = np.broadcast_to(np.asarray(mean, dtype=float), (spec.dim,))
        var = np.broadcast_to(np.asarray(var, dtype=float), (spec.dim,))
    noise = rng.standard_normal((n, spec.dim))
    return mean + np.sqrt(var) * noise


def _apply_sigma(sig, dw):
    sig = np.asarray(sig, dtype=float)
    if sig.ndim == 0 or sig.ndim == 1:
        return sig * dw
    if sig.ndim == 2:
        return dw @ sig.T
    return np.einsum("nij,nj->ni", sig, dw)


def _apply_a(sig, g):
    """sigma sigma^T g for the drift correction."""
    sig = np.asarray(sig, dtype=float)
    if sig.ndim == 0 or sig.ndim == 1:
        return (sig**2) * g
    if sig.ndim == 2:
        return g @ (sig @ sig.T).T
    return np.einsum("nij,nkj,nk->ni", sig, sig, g)


def _check_drift(b, t, x):
    if not np.all(np.isfinite(b)):
        i = int(np.argmax(~np.all(np.isfinite(b), axis=1)))
        raise ValueError(f"non-finite drift at t={t!r}, x={x[i]!r} (path {i})")
    return b


def _grad_block(potential_grad, t, x):
    g = np.asarray(potential_grad(t, x), dtype=float)
    if g.ndim == 1 and g.shape[0] == x.shape[0] and x.shape[1] == 1:
        g = g[:, None]
    g = np.broadcast_to(g, x.shape)
    if not np.all(np.isfinite(g)):
        raise ValueError(f"non-finite drift correction at t={t!r}")
    return g


def _simulate(spec, nodes, n, rng, k_sub, potential_grad=None, tilted_initial=None):
    """March the diffusion on ``nodes`` and return states (n, len(nodes), d).

    Gaussian families use exact transitions on each sub-step; the optional
    correction -sigma sigma^T potential_grad is integrated with a mid-point
    rule so that a zero correction consumes the identical random stream.
    """
    d = spec.dim
    x = _draw_initial(spec, rng, n, tilted=tilted_initial)
    out = np.empty((n, len(nodes), d))
    out[:, 0] = x
    exact = spec.family in ("drifted_bm", "ou")
    for j in range(len(nodes) - 1):
        sub = np.linspace(nodes[j], nodes[j + 1], k_sub + 1)
        noise = rng.standard_normal((n, k_sub, d))
        for k in range(k_sub):
            t0, t1 = sub[k], sub[k + 1]
            h = t1 - t0
            if exact:
                if spec.family == "drifted_bm":
                    x = x + (spec.mean_path(t1) - spec.mean_path(t0)) + math.sqrt(h) * noise[:, k]
                    if potential_grad is not None:
                        x = x - h * _grad_block(potential_grad, 0.5 * (t0 + t1), x)
                else:  # ou
                    decay = math.exp(-h)
                    sd = math.sqrt(0.5 * (1.0 - math.exp(-2.0 * h)))
                    x = 1.0 + (x - 1.0) * decay + sd * noise[:, k]
                    if potential_grad is not None:
                        x = x - (1.0 - decay) * _grad_block(potential_grad, 0.5 * (t0 + t1), x)
            else:
                b = _check_drift(np.broadcast_to(np.asarray(spec.drift(t0, x), dtype=float), x.shape), t0, x)
                if potential_grad is not None:
                    g = _grad_block(potential_grad, t0, x)
                    b = b - _apply_a(spec.diffusion(t0, x), g)
                x = x + b * h + _apply_sigma(spec.diffusion(t0, x), math.sqrt(h) * noise[:, k])
        out[:, j + 1] = x
    return out


def sample_paths(spec, grid, n_paths, seed, k_sub=4):
    """Sample ``n_paths`` reference paths on ``grid``; deterministic in seed."""
    if n_paths < 1:
        raise ValueError("n_paths: must be >= 1")
    rng = _rng(seed)
    states = _simulate(spec, grid.nodes, n_paths, rng, k_sub)
    return PathEnsemble(grid, states)


def corrected_sde_sample(spec, potential_grad, tilted_initial, grid, n_paths, seed, k_sub=4):
    """Simulate the corrected process: drift b - sigma sigma^T potential_grad,
    initial law ``tilted_initial`` (callable or (mean, var); None keeps the
    reference initial law).  Same random stream layout as ``sample_paths``.
    """
    if n_paths < 1:
        raise ValueError("n_paths: must be >= 1")
    rng = _rng(seed)
    grad = potential_grad if potential_grad is not None else (lambda t, x: np.zeros_like(x))
    states = _simulate(spec, grid.nodes, n_paths, rng, k_sub,
                       potential_grad=grad, tilted_initial=tilted_initial)
    return PathEnsemble(grid, states)


# ---------------------------------------------------------------------------
# closed-form oracles for the running-mean constraint
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSolution:
    """Closed-form solution of the mean-constrained projection problem.

    ``potential_grad(t, x)`` is the drift-correction gradient consumed by the
    corrected simulation; at an initial atom it is the right limit (the atom
    itself acts through the tilted initial law).  ``density_value(t)`` is the
    continuous part of the multiplier and ``potential_grad_dt(t)`` its exact
    time derivative on smooth pieces, used by the affine residual check.
    """

    case_label: str
    family: str  # "drifted_bm" | "ou"
    x0: float
    multiplier: Multiplier
    potential_grad: Callable
    potential_grad_dt: Callable
    density_value: Callable  # dm/dt of the multiplier, zero off its support
    density_support: tuple
    atom_masses: tuple  # (mass at node 0, mass at node M)
    initial_mean: float
    initial_var: float
    mean_curve: Callable
    var_curve: Callable
    activation_time: Optional[float]
    grid: TimeGrid
    relative_entropy: float
    notes: tuple = ()

    def mean_curve_nodes(self):
        return np.array([self.mean_curve(t) for t in self.grid.nodes])

    def var_curve_nodes(self):
        return np.array([self.var_curve(t) for t in self.grid.nodes])

    def tilted_initial(self):
        return (self.initial_mean, self.initial_var)

    def to_dict(self):
        return {
            "case": self.case_label,
            "multiplier_pairs": self.multiplier.nonzero_pairs(),
            "multiplier_mass": self.multiplier.mass,
            "initial_mean": self.initial_mean,
            "initial_var": self.initial_var,
            "activation_time": self.activation_time,
            "mean_curve": self.mean_curve_nodes().tolist(),
            "var_curve": self.var_curve_nodes().tolist(),
            "grad_on_nodes": [float(self.potential_grad(t, 0.0)) for t in self.grid.nodes],
            "relative_entropy": self.relative_entropy,
            "notes": list(self.notes),
        }


def _bisect(f, lo, hi, tol=1e-12):
    """Bisection for the root of a non-decreasing sign change on [lo, hi]."""
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise ValueError(f"bisection bracket invalid: f({lo})={flo}, f({hi})={fhi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _density_atoms(grid, density, support_lo):
    """Trapezoidal node weights for a density supported on [support_lo, T].

    Partial intervals at the support boundary send their mass to the inside
    node so that atoms sit where the constraint is active, up to one node.
    """
    atoms = np.zeros(grid.nodes.size)
    nodes = grid.nodes
    for j in range(grid.num_intervals):
        a, b = nodes[j], nodes[j + 1]
        lo = max(a, support_lo)
        if lo >= b:
            continue
        mass = 0.5 * (density(lo) + density(b)) * (b - lo)
        if lo > a:
            atoms[j + 1] += mass
        else:
            atoms[j] += 0.5 * mass
            atoms[j + 1] += 0.5 * mass
    return atoms


def _entropy_vs_reference(init_mean, init_var, ref_mean, grad, horizon):
    """Relative entropy of the corrected law w.r.t. the reference: Gaussian
    initial-law term plus the quadratic cost of the deterministic correction."""
    kl0 = (init_mean - ref_mean) ** 2 / (2.0 * init_var)
    cost, _ = quad(lambda t: grad(t) ** 2, 0.0, horizon, limit=200)
    return float(kl0 + 0.5 * cost)


def _sanity_mean_curve(mean_curve, grid, tol=1e-9):
    worst = max(mean_curve(t) for t in grid.nodes)
    if worst > tol:
        raise AssertionError(f"oracle mean curve positive ({worst}) at a grid node")


def gaussian_oracle_drifted_bm(x0, sigma2, grid, mean_path, mean_path_dot, mean_path_ddot):
    """Closed-form projection of drifted Brownian motion under E[X_t] <= 0.

    The mean path m must satisfy m(0) = 0, mdot >= 0, mddot <= 0 (checked on
    the grid nodes), together with x0 + m(T) > 0 so the reference violates
    the constraint.  The case split is decided by the non-decreasing curve
    x0 + m(t) - (sigma2 + t) mdot(t).
    """
    check_positive(sigma2, "sigma2")
    T = grid.horizon
    m, dm, ddm = mean_path, mean_path_dot, mean_path_ddot
    if abs(m(0.0)) > 1e-10:
        raise ValueError(f"mean_path: m(0) must be 0, got {m(0.0)!r}")
    for t in grid.nodes:
        if dm(t) < -1e-10:
            raise ValueError(f"mean_path_dot: negative ({dm(t)!r}) at t={t!r}")
        if ddm(t) > 1e-10:
            raise ValueError(f"mean_path_ddot: positive ({ddm(t)!r}) at t={t!r}")
    if not x0 + m(T) > 0:
        raise ValueError("x0 + m(T) must be > 0 (reference must violate the constraint)")

    def switch(t):
        return x0 + m(t) - (sigma2 + t) * dm(t)

    var_curve = lambda t: sigma2 + t
    notes = ()

    if switch(T) < 0:
        case = "terminal_atom"
        slope = (x0 + m(T)) / (sigma2 + T)
        atoms = np.zeros(grid.nodes.size)
        atoms[-1] = slope
        init_mean = x0 - sigma2 * slope
        grad = lambda t, x=None: slope
        grad_dt = lambda t: 0.0
        density = lambda t: 0.0
        support = (T, T)
        atom0, atomT = 0.0, slope
        mean_curve = lambda t: init_mean + m(t) - slope * t
        activation = None
    elif switch(0.0) <= 0.0:
        case = "interior_activation"
        tau = _bisect(switch, 0.0, T)
        rate = dm(tau)
        density = lambda t: max(-ddm(t), 0.0) if t >= tau else 0.0
        atoms = _density_atoms(grid, density, tau)
        atoms[-1] += dm(T)
        init_mean = x0 - sigma2 * rate
        grad = lambda t, x=None: rate if t <= tau else dm(t)
        grad_dt = lambda t: 0.0 if t <= tau else ddm(t)
        support = (tau, T)
        atom0, atomT = 0.0, dm(T)
        mean_curve = lambda t: min(x0 + m(t) - (sigma2 + t) * rate, 0.0) if t <= tau else 0.0
        activation = tau
    else:
        case = "initial_atom"
        atom0 = (x0 - sigma2 * dm(0.0)) / sigma2
        density = lambda t: max(-ddm(t), 0.0)
        atoms = _density_atoms(grid, density, 0.0)
        atoms[0] += atom0
        atoms[-1] += dm(T)
        init_mean = 0.0
        grad = lambda t, x=None: dm(t)  # right limit at t = 0; atom acts via the initial tilt
        grad_dt = lambda t: ddm(t)
        support = (0.0, T)
        atomT = dm(T)
        mean_curve = lambda t: 0.0
        activation = 0.0

    sol = OracleSolution(
        case_label=case,
        family="drifted_bm",
        x0=float(x0),
        multiplier=Multiplier(atoms),
        potential_grad=grad,
        potential_grad_dt=grad_dt,
        density_value=density,
        density_support=support,
        atom_masses=(atom0, atomT),
        initial_mean=float(init_mean),
        initial_var=float(sigma2),
        mean_curve=mean_curve,
        var_curve=var_curve,
        activation_time=activation,
        grid=grid,
        relative_entropy=_entropy_vs_reference(init_mean, sigma2, x0,
                                               lambda t: grad(t), T),
        notes=notes,
    )
    _sanity_mean_curve(sol.mean_curve, grid)
    return sol


def _ou_mean_family(x0, sigma2, tau, lam):
    """Mean curve of the OU process corrected by the gradient lam*exp(t-tau)
    (capped at lam after tau) and the matching tilted initial law."""

    def curve(t):
        return 1.0 + (x0 - 1.0 - sigma2 * lam * math.exp(-tau)) * math.exp(-t) \
            - lam * math.exp(-tau) * math.sinh(t)

    return curve


def gaussian_oracle_ou(x0, sigma2, grid):
    """Closed-form projection of the OU reference dX = (1-X) dt + dB under
    E[X_t] <= 0, with initial law N(x0, sigma2).

    Requires 1 + (x0 - 1) exp(-T) > 0 (the reference mean stays positive).
    The split is decided by the activation time tau of the unit-strength
    correction: x0 <= sigma2 with T < tau gives a single terminal atom of
    mass in (0, 1); x0 <= sigma2 with tau <= T activates a unit interior
    density on [tau, T]; x0 > sigma2 starts with an atom at time 0.
    """
    check_positive(sigma2, "sigma2")
    T = grid.horizon
    if not 1.0 + (x0 - 1.0) * math.exp(-T) > 0.0:
        raise ValueError("1 + (x0 - 1) exp(-T) must be > 0")
    var_curve = lambda t: sigma2 * math.exp(-2.0 * t) + 0.5 * (1.0 - math.exp(-2.0 * t))

    if x0 > sigma2:
        case = "initial_atom"
        atom0 = (x0 - sigma2) / sigma2
        density = lambda t: 1.0
        atoms = _density_atoms(grid, density, 0.0)
        atoms[0] += atom0
        atoms[-1] += 1.0
        grad = lambda t, x=None: 1.0  # right limit at t = 0
        grad_dt = lambda t: 0.0
        init_mean = 0.0
        mean_curve = lambda t: 0.0
        activation = 0.0
        support = (0.0, T)
        atomT = 1.0
        notes = (
            "interior density sign resolved to +1: the affine residual check "
            "requires d/dt grad - grad + density = 0, and the corrected mean "
            "only stays on the constraint with the positive sign",
        )
    else:
        # activation time of the unit-strength correction
        def g(tau):
            return _ou_mean_family(x0, sigma2, tau, 1.0)(tau)

        hi = 1.0
        while g(hi) <= 0.0:
            hi *= 2.0
            if hi > 1e6:
                raise ValueError("failed to bracket the activation time")
        tau_bar = _bisect(g, 0.0, hi)
        if T < tau_bar:
            case = "terminal_atom"
            lam_T = _bisect(lambda lam: -_ou_mean_family(x0, sigma2, T, lam)(T), 0.0, 1.0)
            atoms = np.zeros(grid.nodes.size)
            atoms[-1] = lam_T
            grad = lambda t, x=None: lam_T * math.exp(t - T)
            grad_dt = lambda t: lam_T * math.exp(t - T)
            density = lambda t: 0.0
            init_mean = x0 - lam_T * sigma2 * math.exp(-T)
            curve = _ou_mean_family(x0, sigma2, T, lam_T)
            mean_curve = lambda t: min(curve(t), 0.0)
            activation = None
            support = (T, T)
            atom0, atomT = 0.0, lam_T
            notes = ()
        else:
            case = "interior_activation"
            density = lambda t: 1.0 if t >= tau_bar else 0.0
            atoms = _density_atoms(grid, density, tau_bar)
            atoms[-1] += 1.0
            grad = lambda t, x=None: math.exp(t - tau_bar) if t <= tau_bar else 1.0
            grad_dt = lambda t: math.exp(t - tau_bar) if t < tau_bar else 0.0
            init_mean = x0 - sigma2 * math.exp(-tau_bar)
            curve = _ou_mean_family(x0, sigma2, tau_bar, 1.0)
            mean_curve = lambda t: min(curve(t), 0.0) if t <= tau_bar else 0.0
            activation = tau_bar
            support = (tau_bar, T)
            atom0, atomT = 0.0, 1.0
            notes = ()

    sol = OracleSolution(
        case_label=case,
        family="ou",
        x0=float(x0),
        multiplier=Multiplier(atoms),
        potential_grad=grad,
        potential_grad_dt=grad_dt,
        density_value=density,
        density_support=support,
        atom_masses=(atom0, atomT),
        initial_mean=float(init_mean),
        initial_var=float(sigma2),
        mean_curve=mean_curve,
        var_curve=var_curve,
        activation_time=activation,
        grid=grid,
        relative_entropy=_entropy_vs_reference(init_mean, sigma2, x0,
                                               lambda t: grad(t), T),
        notes=notes,
    )
    _sanity_mean_curve(sol.mean_curve, grid)
    return sol
