"""Config-driven command line: run one computation, emit files, exit coded.

    entroproj <command> --config run.toml [--out DIR] [--quick]

Commands: oracle, solve-dual, bridge, hjb, condition, stability,
weak-stability, verify.  Each run writes manifest.json (config, seed,
versions, timestamp), results.json, command-specific CSV tables, and a
human-readable summary.txt into the output directory.  Result files are
byte-identical across reruns with the same config and seed; only the
manifest carries a timestamp.

Exit codes: 0 success, 2 config validation error, 3 solver non-convergence,
4 internal identity violation.  Failures print a JSON diagnostic to stderr.
"""

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import ALL_CRITERIA, QUICK_CRITERIA, run_criteria
from .bridge import EquivalenceError, discretize_gaussian, gaussian_random_walk_reference, solve_constrained_bridge
from .config import ConfigError, build_constraint, build_dual_config, build_instance, load_config
from .constraints import EndpointEquality, LinearConstraint, NonlinearConstraint, evaluate_psi_matrix
from .dual_solver import (
    DualUnboundedError,
    IdentityViolationError,
    solution_report,
    solve_mean_field,
    solve_projected_ascent,
)
from .experiments import condition_by_rejection, stability_sweep, weak_stability_run
from .hjb import HjbQuery, feynman_kac_gradient, feynman_kac_value
from .ioutil import dump_json, write_csv
from .measure import TimeGrid
from .reference import sample_paths

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_IDENTITY = 4


class NonConvergenceError(RuntimeError):
    pass


def _manifest(command, doc, out_dir):
    dump_json(
        {
            "command": command,
            "config": doc,
            "seed": doc.get("seed", 0),
            "versions": {
                "entroproj": __version__,
                "numpy": np.__version__,
                "python": sys.version.split()[0],
            },
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        },
        out_dir / "manifest.json",
    )


def _summary(out_dir, lines):
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")


def _solver_block(doc):
    return doc.get("solver", {})


def _cmd_oracle(doc, out_dir):
    _, grid, make_oracle = build_instance(doc)
    oracle = make_oracle()
    results = oracle.to_dict()
    dump_json(results, out_dir / "results.json")
    rows = []
    for series, values in (
        ("mean_curve", results["mean_curve"]),
        ("var_curve", results["var_curve"]),
        ("grad", results["grad_on_nodes"]),
        ("multiplier_atoms", oracle.multiplier.atoms),
    ):
        rows.extend((series, t, v) for t, v in zip(grid.nodes, values))
    write_csv(out_dir / "curves.csv", ["series", "t", "value"], rows)
    _summary(out_dir, [
        f"case: {results['case']}",
        f"multiplier mass: {results['multiplier_mass']!r}",
        f"initial law: N({results['initial_mean']!r}, {results['initial_var']!r})",
        f"activation time: {results['activation_time']!r}",
        f"relative entropy vs reference: {results['relative_entropy']!r}",
    ] + [f"note: {n}" for n in results["notes"]])
    return EXIT_OK


def _cmd_solve_dual(doc, out_dir):
    spec, grid, _ = build_instance(doc)
    constraint = build_constraint(doc)
    solver = _solver_block(doc)
    seed = doc.get("seed", 0)
    n_paths = solver.get("n_paths", 20_000)
    k_sub = solver.get("k_sub", 4)
    overrides = {"keep_trace": True}
    if "mass_cap" not in solver:
        overrides["mass_cap"] = 1e4  # stop cleanly on infeasible instances
    cfg = build_dual_config(doc, **overrides)
    ens = sample_paths(spec, grid, n_paths, seed=seed, k_sub=k_sub)
    if isinstance(constraint, LinearConstraint):
        psi = evaluate_psi_matrix(ens, constraint)
        sol = solve_projected_ascent(psi, cfg=cfg)
    else:
        sol = solve_mean_field(ens, None, constraint, cfg,
                               allow_nonconvex=bool(solver.get("allow_nonconvex", False)))
    report = solution_report(sol, grid=grid, cfg=cfg)
    dump_json(report, out_dir / "results.json")
    if sol.trace:
        write_csv(out_dir / "trace.csv", ["iter", "free_energy", "grad_norm", "mass"],
                  sol.trace)
    write_csv(out_dir / "multiplier.csv", ["node", "t", "atom"],
              [(j, grid.nodes[j], a) for j, a in enumerate(sol.multiplier.atoms)])
    _summary(out_dir, [
        f"converged: {sol.converged} ({sol.status})",
        f"iterations: {sol.iterations}",
        f"dual value: {sol.dual_value!r}",
        f"primal value: {sol.primal_value!r}",
        f"multiplier mass: {sol.mass!r}",
        f"KKT: {sol.kkt.to_dict()}",
    ])
    if not sol.converged:
        raise NonConvergenceError(sol.status)
    return EXIT_OK


def _build_bridge(doc):
    block = doc.get("bridge")
    if block is None:
        raise ConfigError("bridge", "missing block")
    for key in ("S", "x_min", "x_max", "step_var", "M"):
        if key not in block:
            raise ConfigError(f"bridge.{key}", "missing")
    if block.get("family", "gaussian_rw") != "gaussian_rw":
        raise ConfigError("bridge.family", f"unknown family {block.get('family')!r}")
    ref = gaussian_random_walk_reference(
        int(block["S"]), float(block["x_min"]), float(block["x_max"]),
        float(block["step_var"]), int(block["M"]),
    )

    def target(key_vec, key_gauss, name):
        if key_vec in block:
            return np.asarray(block[key_vec], dtype=float)
        if key_gauss in block:
            mean, var = block[key_gauss]
            return discretize_gaussian(ref.states, float(mean), float(var))
        raise ConfigError(f"bridge.{name}", "missing (give a vector or a gaussian pair)")

    targets = EndpointEquality(
        target_initial=target("target_initial", "initial_gaussian", "target_initial"),
        target_final=target("target_final", "final_gaussian", "target_final"),
    )
    constraint = build_constraint(doc)
    if not isinstance(constraint, LinearConstraint):
        raise ConfigError("constraint.kind", "bridge supports linear observables only")
    node_vals = np.asarray(constraint.observable(ref.states), dtype=float)
    psi_values = np.tile(node_vals, (ref.n_steps + 1, 1))
    return ref, targets, psi_values, float(block.get("sinkhorn_tol", 1e-10))


def _cmd_bridge(doc, out_dir):
    ref, targets, psi_values, sinkhorn_tol = _build_bridge(doc)
    overrides = {"keep_trace": True}
    if "mass_cap" not in _solver_block(doc):
        overrides["mass_cap"] = 1e4  # stop cleanly on infeasible targets
    cfg = build_dual_config(doc, **overrides)
    sol = solve_constrained_bridge(ref, targets, psi_values, cfg, sinkhorn_tol=sinkhorn_tol)
    dump_json(sol.to_dict(), out_dir / "results.json")
    rows = []
    for j in range(sol.marginals.shape[0]):
        rows.extend((j, s, w) for s, w in zip(ref.states, sol.marginals[j]))
    write_csv(out_dir / "marginals.csv", ["node", "state", "weight"], rows)
    if sol.trace:
        write_csv(out_dir / "trace.csv", ["iter", "dual_value", "grad_norm", "mass"],
                  sol.trace)
    _summary(out_dir, [
        f"converged: {sol.converged} ({sol.status})",
        f"entropy value: {sol.value!r}",
        f"multiplier mass: {sol.multiplier.mass!r}",
        f"endpoint TV error: {sol.endpoint_error!r}",
        f"KKT: {sol.kkt.to_dict()}",
    ])
    if not sol.converged:
        raise NonConvergenceError(sol.status)
    return EXIT_OK


def _cmd_hjb(doc, out_dir):
    spec, grid, make_oracle = build_instance(doc)
    constraint = build_constraint(doc)
    if not isinstance(constraint, LinearConstraint):
        raise ConfigError("constraint.kind", "hjb evaluation needs a linear observable")
    oracle = make_oracle()
    block = doc.get("hjb", {})
    solver = _solver_block(doc)
    q = HjbQuery(
        sde=spec, grid=grid, multiplier=oracle.multiplier,
        observable=lambda t, x: constraint.observable(x),
        mc_paths=int(solver.get("mc_paths", 20_000)),
        seed=doc.get("seed", 0),
        fd_step=float(solver.get("fd_step", 1e-3)),
        k_sub=int(solver.get("k_sub", 1)),
    )
    t_query = float(block.get("t", 0.0))
    x_query = float(block.get("x", 0.0))
    value = feynman_kac_value(q, t_query, x_query)
    grad = feynman_kac_gradient(q, t_query, x_query)
    results = {"t": t_query, "x": x_query, "phi": value, "grad_phi": grad,
               "oracle_grad": oracle.potential_grad(t_query, x_query),
               "multiplier_pairs": oracle.multiplier.nonzero_pairs()}
    dump_json(results, out_dir / "results.json")
    n_t = int(block.get("lattice_t", 5))
    n_x = int(block.get("lattice_x", 5))
    span = float(block.get("x_span", 2.0))
    rows = []
    for t in np.linspace(0.0, grid.horizon, n_t):
        for x in np.linspace(x_query - span, x_query + span, n_x):
            rows.append((t, x, feynman_kac_value(q, t, x), feynman_kac_gradient(q, t, x)))
    write_csv(out_dir / "lattice.csv", ["t", "x", "phi", "grad_phi"], rows)
    _summary(out_dir, [
        f"phi({t_query!r}, {x_query!r}) = {value!r}",
        f"grad_phi = {grad!r} (closed form {results['oracle_grad']!r})",
    ])
    return EXIT_OK


def _cmd_condition(doc, out_dir):
    spec, grid, make_oracle = build_instance(doc)
    constraint = build_constraint(doc)
    if not isinstance(constraint, LinearConstraint):
        raise ConfigError("constraint.kind", "conditioning needs a linear observable")
    block = doc.get("experiment", {})
    oracle = make_oracle()
    rows = []
    for n in block.get("n_values", [4, 16, 64]):
        rows.append(
            condition_by_rejection(
                spec, constraint, grid, n_particles=int(n),
                target_accepted=int(block.get("target_accepted", 500)),
                relax=float(block.get("relax", 0.0)),
                seed=doc.get("seed", 0) + int(n),
                oracle=oracle,
                max_blocks=int(block.get("max_blocks", 5_000_000)),
            )
        )
    dump_json({"rows": [r.to_dict() for r in rows]}, out_dir / "results.json")
    write_csv(
        out_dir / "conditioning.csv",
        ["n_particles", "acceptance_rate", "w1_terminal", "csiszar_lhs", "csiszar_rhs"],
        [(r.n_particles, r.acceptance_rate, r.w1_terminal,
          r.csiszar.lhs if r.csiszar else float("nan"),
          r.csiszar.rhs if r.csiszar else float("nan")) for r in rows],
    )
    _summary(out_dir, [
        f"N={r.n_particles}: rate={r.acceptance_rate:.3g}, W1={r.w1_terminal!r}, "
        f"bound {'holds' if r.csiszar and r.csiszar.passed else 'inconclusive/failed'}"
        for r in rows
    ])
    return EXIT_OK


def _cmd_stability(doc, out_dir):
    spec, grid, _ = build_instance(doc)
    constraint = build_constraint(doc)
    if not isinstance(constraint, LinearConstraint):
        raise ConfigError("constraint.kind", "the sweep needs a linear observable")
    block = doc.get("experiment", {})
    solver = _solver_block(doc)
    seed = doc.get("seed", 0)
    ens = sample_paths(spec, grid, int(solver.get("n_paths", 20_000)), seed=seed)
    psi = evaluate_psi_matrix(ens, constraint)
    cfg = build_dual_config(doc, grad_tol=float(solver.get("grad_tol", 1e-9)))
    relax_values = [float(e) for e in block.get("relax_values", [0.01 * k for k in range(11)])]
    rows = stability_sweep(psi, relax_values, cfg)
    dump_json({"rows": [r.to_dict() for r in rows]}, out_dir / "results.json")
    write_csv(out_dir / "sweep.csv", ["relax", "value", "mass", "entropy_gap"],
              [(r.relax, r.value, r.mass, r.entropy_gap) for r in rows])
    _summary(out_dir, [
        f"eps={r.relax!r}: value={r.value!r}, mass={r.mass!r}, gap={r.entropy_gap!r}"
        for r in rows
    ])
    if not all(r.converged for r in rows):
        raise NonConvergenceError("a sweep cell did not converge")
    return EXIT_OK


def _cmd_weak_stability(doc, out_dir):
    spec, grid, _ = build_instance(doc)
    constraint = build_constraint(doc)
    if not isinstance(constraint, LinearConstraint):
        raise ConfigError("constraint.kind", "the run needs a linear observable")
    block = doc.get("experiment", {})
    solver = _solver_block(doc)
    ens = sample_paths(spec, grid, int(solver.get("n_paths", 20_000)),
                       seed=doc.get("seed", 0))
    schedule = [{"k": int(k), "psi_shift": 1.0 / int(k)} for k in block.get("k_values", [2, 4, 8, 16])]
    rows = weak_stability_run(ens, constraint, schedule, build_dual_config(doc))
    dump_json({"rows": [r.to_dict() for r in rows]}, out_dir / "results.json")
    write_csv(out_dir / "weak_stability.csv", ["k", "w1_max", "mass"],
              [(r.k, r.w1_max, r.mass) for r in rows])
    _summary(out_dir, [f"k={r.k}: max W1={r.w1_max!r}, mass={r.mass!r}" for r in rows])
    if not all(r.converged for r in rows):
        raise NonConvergenceError("a perturbed solve did not converge")
    return EXIT_OK


def _cmd_verify(doc, out_dir, quick=False):
    numbers = QUICK_CRITERIA if quick else ALL_CRITERIA
    results = run_criteria(numbers)
    dump_json(
        {
            "quick": quick,
            "criteria": [
                {"number": r.number, "name": r.name, "passed": r.passed,
                 "details": r.details, "artifacts": r.artifacts}
                for r in results
            ],
            "all_passed": all(r.passed for r in results),
        },
        out_dir / "results.json",
    )
    _summary(out_dir, [r.line() for r in results])
    return EXIT_OK if all(r.passed for r in results) else 1


_COMMANDS = {
    "oracle": _cmd_oracle,
    "solve-dual": _cmd_solve_dual,
    "bridge": _cmd_bridge,
    "hjb": _cmd_hjb,
    "condition": _cmd_condition,
    "stability": _cmd_stability,
    "weak-stability": _cmd_weak_stability,
}


def _fail(code, kind, message, field=None):
    diagnostic = {"error": {"code": code, "kind": kind, "message": message}}
    if field is not None:
        diagnostic["error"]["field"] = field
    print(json.dumps(diagnostic, sort_keys=True), file=sys.stderr)
    return code


def run_command(command, config_path=None, out_dir=None, quick=False):
    """Programmatic entry point; returns the process exit code."""
    try:
        if command == "verify":
            doc = {} if config_path is None else load_config(config_path)
        else:
            if config_path is None:
                raise ConfigError("--config", "required for this command")
            doc = load_config(config_path)
        out = Path(out_dir or doc.get("output_dir") or f"runs/{command}")
        out.mkdir(parents=True, exist_ok=True)
        _manifest(command, doc, out)
        if command == "verify":
            return _cmd_verify(doc, out, quick=quick)
        return _COMMANDS[command](doc, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), field=exc.path)
    except (ValueError, EquivalenceError, RuntimeError) as exc:
        if isinstance(exc, IdentityViolationError):
            return _fail(EXIT_IDENTITY, "identity", str(exc))
        if isinstance(exc, NonConvergenceError):
            return _fail(EXIT_NONCONVERGED, "non-convergence", str(exc))
        if isinstance(exc, DualUnboundedError):
            return _fail(EXIT_NONCONVERGED, "dual-unbounded", str(exc))
        return _fail(EXIT_CONFIG, "invalid-input", str(exc))


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="entroproj",
        description="Entropic projection of diffusion path laws under "
                    "time-indexed inequality constraints.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_COMMANDS) + ["verify"]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML or JSON run config")
        p.add_argument("--out", default=None, help="output directory")
        if name == "verify":
            p.add_argument("--quick", action="store_true",
                           help="deterministic subset of the acceptance criteria")
    args = parser.parse_args(argv)
    return run_command(args.command, args.config, args.out,
                       quick=getattr(args, "quick", False))


if __name__ == "__main__":
    sys.exit(main())
