"""Declarative run configs: schema validation and object construction.

Configs are TOML or JSON documents with blocks

    instance   - Gaussian family (drifted_bm | ou) or bridge chain settings
    constraint - linear_mean | linear_custom | variance_cap | quadratic_W
    solver     - tolerances and iteration limits
    experiment - command-specific knobs
    seed, output_dir

Unknown keys are rejected with the offending path; values are type-checked
before any computation runs.
"""

import json
import sys
from pathlib import Path

import numpy as np

from .constraints import LinearConstraint, quadratic_interaction_constraint, variance_cap_constraint
from .dual_solver import DualConfig
from .measure import TimeGrid
from .reference import drifted_brownian_spec, ornstein_uhlenbeck_spec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version shim
    import tomli as tomllib

__all__ = ["ConfigError", "load_config", "validate_config", "build_instance",
           "build_constraint", "build_dual_config", "polynomial_from_coeffs"]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` points at the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


_SCHEMA = {
    "seed": int,
    "output_dir": str,
    "command": str,
    "instance": {
        "family": str,       # drifted_bm | ou
        "x0_mean": float,
        "x0_var": float,
        "T": float,
        "M": int,
        "m_poly": list,      # ascending coefficients of m(t), constant term 0
    },
    "constraint": {
        "kind": str,         # linear_mean | linear_custom | variance_cap | quadratic_W
        "c": float,
        "coeffs": list,
        "cap": float,
    },
    "solver": {
        "n_paths": int,
        "k_sub": int,
        "step_size": float,
        "max_iters": int,
        "grad_tol": float,
        "feas_tol": float,
        "slack_tol": float,
        "outer_max": int,
        "outer_damping": float,
        "mass_cap": float,
        "mc_paths": int,
        "fd_step": float,
        "allow_nonconvex": bool,
    },
    "bridge": {
        "S": int,
        "x_min": float,
        "x_max": float,
        "family": str,       # gaussian_rw
        "step_var": float,
        "M": int,
        "target_initial": list,   # explicit vector, or use *_gaussian below
        "target_final": list,
        "initial_gaussian": list,  # [mean, var]
        "final_gaussian": list,
        "sinkhorn_tol": float,
    },
    "experiment": {
        "n_values": list,
        "target_accepted": int,
        "relax": float,
        "relax_values": list,
        "k_values": list,
        "max_blocks": int,
    },
    "hjb": {
        "t": float,
        "x": float,
        "lattice_t": int,
        "lattice_x": int,
        "x_span": float,
    },
}


def _check_block(doc, schema, path):
    if not isinstance(doc, dict):
        raise ConfigError(path or "<root>", f"expected a table, got {type(doc).__name__}")
    for key, value in doc.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(here, "unknown key")
        expected = schema[key]
        if isinstance(expected, dict):
            _check_block(value, expected, here)
        elif expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(here, f"expected a number, got {value!r}")
        elif expected is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(here, f"expected an integer, got {value!r}")
        elif not isinstance(value, expected):
            raise ConfigError(here, f"expected {expected.__name__}, got {value!r}")


def validate_config(doc):
    _check_block(doc, _SCHEMA, "")
    return doc


def load_config(path):
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    elif path.suffix.lower() == ".toml":
        doc = tomllib.loads(text)
    else:
        raise ConfigError(str(path), "config must be a .toml or .json file")
    return validate_config(doc)


def polynomial_from_coeffs(coeffs):
    """Callables (p, p', p'') for ascending coefficients [c0, c1, ...]."""
    poly = np.polynomial.Polynomial(list(coeffs))
    d1 = poly.deriv(1)
    d2 = poly.deriv(2)
    return (lambda t: float(poly(t))), (lambda t: float(d1(t))), (lambda t: float(d2(t)))


def build_instance(doc):
    """(spec, grid, oracle_builder) from the ``instance`` block."""
    block = doc.get("instance")
    if block is None:
        raise ConfigError("instance", "missing block")
    for key in ("family", "x0_mean", "x0_var", "T", "M"):
        if key not in block:
            raise ConfigError(f"instance.{key}", "missing")
    family = block["family"]
    x0_mean = float(block["x0_mean"])
    x0_var = float(block["x0_var"])
    if x0_var < 0:
        raise ConfigError("instance.x0_var", "must be >= 0")
    grid = TimeGrid.uniform(float(block["T"]), int(block["M"]))
    if family == "drifted_bm":
        coeffs = [float(c) for c in block.get("m_poly", [0.0])] or [0.0]
        if coeffs[0] != 0.0:
            raise ConfigError("instance.m_poly", "constant term must be 0 (m(0) = 0)")
        m, dm, ddm = polynomial_from_coeffs(coeffs)
        spec = drifted_brownian_spec(x0_mean, x0_var, m, dm, ddm)

        def oracle(grid=grid):
            from .reference import gaussian_oracle_drifted_bm

            if x0_var <= 0:
                raise ConfigError("instance.x0_var", "oracle requires x0_var > 0")
            return gaussian_oracle_drifted_bm(x0_mean, x0_var, grid, m, dm, ddm)

        return spec, grid, oracle
    if family == "ou":
        if "m_poly" in block:
            raise ConfigError("instance.m_poly", "not valid for the ou family")
        spec = ornstein_uhlenbeck_spec(x0_mean, x0_var)

        def oracle(grid=grid):
            from .reference import gaussian_oracle_ou

            if x0_var <= 0:
                raise ConfigError("instance.x0_var", "oracle requires x0_var > 0")
            return gaussian_oracle_ou(x0_mean, x0_var, grid)

        return spec, grid, oracle
    raise ConfigError("instance.family", f"unknown family {family!r}")


def build_constraint(doc):
    block = doc.get("constraint", {"kind": "linear_mean", "c": 0.0})
    kind = block.get("kind")
    if kind == "linear_mean":
        shift = float(block.get("c", 0.0))
        return LinearConstraint(lambda x: x - shift, growth_bound=1.0 + abs(shift))
    if kind == "linear_custom":
        coeffs = block.get("coeffs")
        if not coeffs:
            raise ConfigError("constraint.coeffs", "missing for linear_custom")
        poly = np.polynomial.Polynomial([float(c) for c in coeffs])
        degree = len(coeffs) - 1
        bound = None
        if degree <= 1:
            bound = sum(abs(float(c)) for c in coeffs)
        return LinearConstraint(lambda x: poly(x), growth_bound=bound)
    if kind == "variance_cap":
        if "cap" not in block:
            raise ConfigError("constraint.cap", "missing for variance_cap")
        return variance_cap_constraint(float(block["cap"]))
    if kind == "quadratic_W":
        coeffs = block.get("coeffs")
        if not coeffs:
            raise ConfigError("constraint.coeffs", "missing for quadratic_W")
        poly = np.polynomial.Polynomial([float(c) for c in coeffs])
        return quadratic_interaction_constraint(lambda z: poly(z))
    raise ConfigError("constraint.kind", f"unknown kind {kind!r}")


def build_dual_config(doc, **overrides):
    block = dict(doc.get("solver", {}))
    for key in ("n_paths", "k_sub", "mc_paths", "fd_step", "allow_nonconvex"):
        block.pop(key, None)
    block.update(overrides)
    allowed = {"step_size", "max_iters", "grad_tol", "feas_tol", "slack_tol",
               "outer_max", "outer_damping", "mass_cap", "keep_trace"}
    bad = set(block) - allowed
    if bad:
        raise ConfigError(f"solver.{sorted(bad)[0]}", "not a solver tolerance")
    try:
        return DualConfig(**block)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from exc
