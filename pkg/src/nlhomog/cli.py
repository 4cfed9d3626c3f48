"""Command-line entry point for the solver stack.

Subcommands::

    nlhomog solve       --config model.toml --grid n=128 --bc affine:p=0.3,0.1 --out u.field
    nlhomog hierarchy   --config model.toml --m 3 --bc-u u.field --out-dir run/
    nlhomog correctors  --config model.toml --p 0.3,0.1 --m 2 --out-dir run/
    nlhomog taylor      --config model.toml --p 0.3,0.1 --orders 4 --cell 27 --seeds 8 --out expansion.json
    nlhomog experiment  <name> --config exp.toml --out report.json --csv points.csv
    nlhomog audit       --config model.toml

Exit codes: 0 success / experiment pass, 1 experiment fail, 2 usage or
configuration error, 3 solver failure.  The environment variable
``NLHOMOG_SEED`` overrides the config seed for one run (logged to
stdout when it does).  ``--jobs`` sizes the worker pool for experiment
points; ``--jobs 1`` is fully serial and the documented baseline for
bit-identical reruns.

Every JSON output embeds ``config_digest``, the sha256 of the canonical
form of the inputs that produced it, so artifacts can be traced back to
their exact configuration.
"""

from __future__ import annotations

import argparse
import inspect
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import experiments as X
from . import fieldio
from . import fields as F
from .config import (
    ConfigError,
    canonical_digest,
    grid_from_config,
    load_config,
    model_from_config,
    solver_from_config,
)
from .homogenize import (
    corrector_ladder,
    homogenized_energy,
    homogenized_gradient,
    solve_first_corrector,
    taylor_expansion,
)
from .lagrangian import LagrangianModel, ModelError, audit_model, sample_coefficient_field
from .linearization import solve_hierarchy
from .solver import SolverError, solve_nonlinear
from .tensors import canonical_indices

__all__ = ["main"]

EXIT_PASS = 0
EXIT_EXPERIMENT_FAIL = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

_EXPERIMENTS = {
    "commutation": X.exp_commutation,
    "linerror": X.exp_linerror_scaling,
    "corrector_taylor": X.exp_corrector_taylor,
    "homogenization_rate": X.exp_homogenization_rate,
    "sublinearity": X.exp_sublinearity_and_lipschitz,
}


def _default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - platform dependent
        return os.cpu_count() or 1


def _env_seed():
    """Seed override from NLHOMOG_SEED, logged when present."""
    raw = os.environ.get("NLHOMOG_SEED")
    if raw is None:
        return None
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"NLHOMOG_SEED={raw!r} is not an integer") from None
    print(f"seed {seed} taken from NLHOMOG_SEED, overriding the config seed")
    return seed


def _parse_floats(text, what):
    try:
        values = [float(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated floats, got {text!r}") from None
    if not values:
        raise ConfigError(f"{what} must not be empty")
    return values


def _apply_grid_override(cfg, text):
    """Merge ``--grid n=128,side=1.0,boundary=periodic`` into [grid]."""
    if not text:
        return cfg
    gsec = dict(cfg.get("grid", {}))
    casts = {"n": int, "side": float, "boundary": str}
    for pair in text.split(","):
        key, sep, value = pair.partition("=")
        if not sep or key not in casts:
            raise ConfigError(
                f"--grid expects comma-separated n=/side=/boundary= pairs, got {pair!r}"
            )
        try:
            gsec[key] = casts[key](value)
        except ValueError:
            raise ConfigError(f"--grid {key}={value!r} is not a valid {casts[key].__name__}") from None
    out = dict(cfg)
    out["grid"] = gsec
    return out


def _boundary_condition(grid, text):
    """Parse ``--bc`` into solve_nonlinear keyword arguments.

    Forms: ``affine:p=<floats>`` (Dirichlet trace of the affine function),
    ``zero`` (homogeneous Dirichlet), ``file:<path>`` (nodal values from a
    field file on the same grid), ``slope:<floats>`` (periodic
    corrector mode at that mean slope).
    """
    kind, _, rest = text.partition(":")
    if kind == "affine":
        if not rest.startswith("p="):
            raise ConfigError("--bc affine takes the form affine:p=<floats>")
        p = _parse_floats(rest[2:], "--bc affine slope")
        if len(p) != grid.dim:
            raise ConfigError(f"--bc affine slope needs {grid.dim} components")
        return {"boundary_values": F.affine_field(grid, p)}
    if kind == "zero" and not rest:
        return {"boundary_values": np.zeros(grid.n_nodes)}
    if kind == "file":
        data = fieldio.read_field(rest)
        if not isinstance(data, F.ScalarField):
            raise ConfigError(f"--bc file {rest} does not hold a scalar field")
        if data.grid != grid:
            raise ConfigError(
                f"--bc file {rest} lives on {data.grid}, the run uses {grid}"
            )
        return {"boundary_values": data}
    if kind == "slope":
        p = _parse_floats(rest, "--bc slope")
        if len(p) != grid.dim:
            raise ConfigError(f"--bc slope needs {grid.dim} components")
        if grid.boundary != F.PERIODIC:
            raise ConfigError(
                "--bc slope solves the periodic corrector problem; set "
                "grid boundary to 'periodic' (config [grid] or --grid)"
            )
        return {"slope": p}
    raise ConfigError(
        f"unrecognized --bc {text!r}; expected affine:p=..., zero, "
        "file:<path> or slope:<floats>"
    )


def _with_extent(model: LagrangianModel, extent: int) -> LagrangianModel:
    """The same model on a coefficient realization of the given extent."""
    c = model.coeff
    if extent == c.extent:
        return model
    from dataclasses import replace

    coeff = sample_coefficient_field(
        c.kind,
        c.dim,
        extent,
        c.seed,
        mollifier_width=c.mollifier_width,
        constant_value=c.constant_value,
    )
    return replace(model, coeff=coeff)


def _model_summary(model: LagrangianModel) -> dict:
    c = model.coeff
    return {
        "dim": model.dim,
        "g_kind": model.g_kind,
        "c_max": model.c_max,
        "N": model.N,
        "Lambda": model.Lambda,
        "coefficient_kind": c.kind,
        "extent": c.extent,
        "seed": c.seed,
    }


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _solve_summary(report) -> dict:
    return {
        "iterations": report.iterations,
        "converged": report.converged,
        "final_residual": report.final_residual,
        "tolerance": report.tolerance,
        "weak_residual_dual": report.weak_residual_dual,
        "linear_solve_counts": list(report.linear_solve_counts),
    }


# ---------------------------------------------------------------------------
# subcommands


def _cmd_solve(args) -> int:
    cfg = _apply_grid_override(load_config(args.config), args.grid)
    model = model_from_config(cfg, seed_override=_env_seed())
    solver = solver_from_config(cfg)
    grid = grid_from_config(cfg)
    bc = _boundary_condition(grid, args.bc)
    digest = canonical_digest(
        {"command": "solve", "config": cfg, "bc": args.bc, "seed": model.coeff.seed}
    )
    u, report = solve_nonlinear(
        model,
        grid,
        **bc,
        tol=solver["tol"],
        cg_rtol=solver["cg_rtol"],
        max_iterations=solver["max_iterations"],
    )
    fieldio.write_field(args.out, u)
    if args.csv:
        fieldio.field_to_csv(args.csv, u)
    _write_json(
        str(args.out) + ".json",
        {
            "config_digest": digest,
            "model": _model_summary(model),
            "grid": {"dim": grid.dim, "n": grid.n, "side": grid.side_length, "boundary": grid.boundary},
            "solve": _solve_summary(report),
            "out": str(args.out),
        },
    )
    print(
        f"solve: {report.iterations} Newton steps, residual "
        f"{report.final_residual:.3e} (tol {report.tolerance:.1e}) -> {args.out}"
    )
    return EXIT_PASS


def _cmd_hierarchy(args) -> int:
    cfg = load_config(args.config)
    model = model_from_config(cfg, seed_override=_env_seed())
    solver = solver_from_config(cfg)
    bc_u = fieldio.read_field(args.bc_u)
    if not isinstance(bc_u, F.ScalarField):
        raise ConfigError(f"--bc-u {args.bc_u} does not hold a scalar field")
    grid = bc_u.grid
    if grid.boundary != F.DIRICHLET:
        raise ConfigError("--bc-u must live on a dirichlet grid")
    if grid.dim != model.dim:
        raise ConfigError(
            f"--bc-u is {grid.dim}-dimensional but the model has dim {model.dim}"
        )

    def read_trace(path, what):
        fld = fieldio.read_field(path)
        if not isinstance(fld, F.ScalarField) or fld.grid != grid:
            raise ConfigError(f"{what} {path} must hold a scalar field on the --bc-u grid")
        return fld

    bc_v = read_trace(args.bc_v, "--bc-v") if args.bc_v else None
    bws = [read_trace(p, "--bc-g") for p in args.bc_g] if args.bc_g else None
    if bc_v is None and bws is None:
        raise ConfigError(
            "hierarchy needs --bc-v (recursive traces from the perturbed "
            "solution) or --bc-g (one explicit trace per level), or both"
        )
    if bws is not None and len(bws) != args.m:
        raise ConfigError(f"--bc-g needs {args.m} files, got {len(bws)}")
    digest = canonical_digest(
        {
            "command": "hierarchy",
            "config": cfg,
            "seed": model.coeff.seed,
            "m": args.m,
            "bc_u": bc_u.values,
            "bc_v": None if bc_v is None else bc_v.values,
            "bc_g": None if bws is None else [b.values for b in bws],
        }
    )
    sol = solve_hierarchy(
        model,
        grid,
        bc_u,
        bc_v if bc_v is not None else bc_u,
        order=args.m,
        boundary_w=bws,
        tol=solver["tol"],
        cg_rtol=solver["cg_rtol"],
        max_iterations=solver["max_iterations"],
    )
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    fieldio.write_field(outdir / "u.field", sol.u)
    fieldio.write_field(outdir / "v.field", sol.v)
    norms = {}
    for k in range(1, args.m + 1):
        fieldio.write_field(outdir / f"w{k}.field", sol.w[k - 1])
        norms[f"grad_w{k}_L2"] = F.norm_Lq_volume_normalized(F.gradient(sol.w[k - 1]), 2)
    for k in range(args.m + 1):
        fieldio.write_field(outdir / f"xi{k}.field", sol.xi[k])
        norms[f"grad_xi{k}_L2"] = F.norm_Lq_volume_normalized(F.gradient(sol.xi[k]), 2)
    _write_json(
        outdir / "report.json",
        {
            "config_digest": digest,
            "model": _model_summary(model),
            "order": args.m,
            "levels": [
                {"n": lev.grid.n, "side": lev.grid.side_length} for lev in sol.levels
            ],
            "solves": {tag: _solve_summary(rep) for tag, rep in sol.reports.items()},
            "norms": norms,
        },
    )
    print(
        f"hierarchy: u, v and w_1..w_{args.m} solved on {args.m + 1} nested "
        f"boxes -> {outdir}/"
    )
    for k in range(args.m + 1):
        print(f"  |grad xi_{k}|_L2 = {norms[f'grad_xi{k}_L2']:.6e}")
    return EXIT_PASS


def _cmd_correctors(args) -> int:
    cfg = load_config(args.config)
    model = model_from_config(cfg, seed_override=_env_seed())
    if args.cell:
        model = _with_extent(model, args.cell)
    solver = solver_from_config(cfg)
    p = _parse_floats(args.p, "--p")
    if len(p) != model.dim:
        raise ConfigError(f"--p needs {model.dim} components")
    if args.h:
        h = _parse_floats(args.h, "--h")
        if len(h) != model.dim:
            raise ConfigError(f"--h needs {model.dim} components")
    else:
        h = [1.0] + [0.0] * (model.dim - 1)
    digest = canonical_digest(
        {
            "command": "correctors",
            "config": cfg,
            "seed": model.coeff.seed,
            "extent": model.coeff.extent,
            "p": p,
            "h": h,
            "m": args.m,
            "resolution": args.resolution,
        }
    )
    cset = solve_first_corrector(
        model,
        p,
        resolution=args.resolution,
        tol=solver["tol"],
        cg_rtol=solver["cg_rtol"],
        max_iterations=solver["max_iterations"],
    )
    ladder = corrector_ladder(cset, h, args.m) if args.m >= 1 else []
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    fieldio.write_field(outdir / "phi.field", cset.phi)
    for k, psi in enumerate(ladder, start=1):
        fieldio.write_field(outdir / f"psi{k}.field", psi)
    key = tuple(float(x) for x in h)
    _write_json(
        outdir / "report.json",
        {
            "config_digest": digest,
            "model": _model_summary(model),
            "p": p,
            "h": h,
            "cell": {"extent": model.coeff.extent, "resolution": args.resolution},
            "effective_flux": homogenized_gradient(cset).tolist(),
            "effective_energy": homogenized_energy(cset),
            "solves": {
                "phi": _solve_summary(cset.report),
                **{
                    f"psi{k}": _solve_summary(cset.ladder_reports[(key, k)])
                    for k in range(1, len(ladder) + 1)
                },
            },
        },
    )
    print(
        f"correctors: phi and psi_1..psi_{len(ladder)} on a {model.coeff.extent}-cell "
        f"period, flux {np.array2string(homogenized_gradient(cset), precision=6)} "
        f"-> {outdir}/"
    )
    return EXIT_PASS


def _cmd_taylor(args) -> int:
    cfg = load_config(args.config)
    model = model_from_config(cfg, seed_override=_env_seed())
    if args.cell:
        model = _with_extent(model, args.cell)
    solver = solver_from_config(cfg)
    p = _parse_floats(args.p, "--p")
    if len(p) != model.dim:
        raise ConfigError(f"--p needs {model.dim} components")
    base = model.coeff.seed
    seeds = list(range(base, base + args.seeds)) if args.seeds else None
    digest = canonical_digest(
        {
            "command": "taylor",
            "config": cfg,
            "seed": base,
            "extent": model.coeff.extent,
            "p": p,
            "orders": args.orders,
            "resolution": args.resolution,
            "seeds": seeds,
        }
    )
    exp = taylor_expansion(
        model,
        p,
        orders=args.orders,
        resolution=args.resolution,
        seeds=seeds,
        tol=solver["tol"],
        cg_rtol=solver["cg_rtol"],
    )
    payload = {
        "config_digest": digest,
        "model": _model_summary(model),
        "p": p,
        "cell": {"extent": model.coeff.extent, "resolution": args.resolution},
        "value": exp.value,
        "gradient": exp.gradient.tolist(),
        "tensors": {
            str(k): {
                "order": k,
                "multi_indices": [list(idx) for idx in canonical_indices(model.dim, k)],
                "entries": t.entries.tolist(),
            }
            for k, t in sorted(exp.tensors.items())
        },
        "polarization_asymmetry": {str(k): v for k, v in sorted(exp.asymmetry.items())},
        "seed_spread": {str(k): v for k, v in sorted(exp.seed_spread.items())},
        "seeds": list(exp.seeds),
        "order2_eigenvalue_range": list(exp.eig_range),
        "order2_spd_ok": exp.spd_ok,
    }
    _write_json(args.out, payload)
    print(
        f"taylor: effective energy {exp.value:.6f}, flux "
        f"{np.array2string(exp.gradient, precision=6)}, derivative tensors up to "
        f"order {args.orders} over {len(exp.seeds)} seed(s) -> {args.out}"
    )
    return EXIT_PASS


def _series_filename(base: Path, name: str) -> Path:
    token = re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_")
    return base.with_name(f"{base.stem}-{token}{base.suffix or '.csv'}")


def _convert_experiment_value(key, value):
    if key == "bands":
        if not isinstance(value, dict):
            raise ConfigError("experiment.bands must be a table of m -> [lo, hi]")
        try:
            return {int(k): (float(v[0]), float(v[1])) for k, v in value.items()}
        except (TypeError, ValueError, IndexError):
            raise ConfigError(
                "experiment.bands entries must be two-element numeric arrays"
            ) from None
    return value


def _experiment_reports(name, cfg, jobs):
    fn = _EXPERIMENTS[name]
    sig = inspect.signature(fn)
    sec = cfg.get("experiment", {})
    if not isinstance(sec, dict):
        raise ConfigError("config section [experiment] must be a table")
    sec = dict(sec)
    cfg_name = sec.pop("name", None)
    if cfg_name is not None and cfg_name != name:
        raise ConfigError(
            f"config names experiment {cfg_name!r} but the command line says {name!r}"
        )
    model = model_from_config(cfg, seed_override=_env_seed())
    kwargs = {}
    if "grid" in sig.parameters:
        kwargs["grid"] = grid_from_config(cfg)
    if "solver" in cfg:
        solver = solver_from_config(cfg)
        for key in ("tol", "cg_rtol"):
            if key in sig.parameters:
                kwargs[key] = solver[key]
    for key, value in sec.items():
        if key in ("model", "grid", "jobs") or key not in sig.parameters:
            raise ConfigError(
                f"experiment.{key} is not a parameter of the {name} experiment"
            )
        kwargs[key] = _convert_experiment_value(key, value)
    if "jobs" in sig.parameters:
        kwargs["jobs"] = jobs
    missing = [
        pname
        for pname, par in sig.parameters.items()
        if par.default is inspect.Parameter.empty
        and pname != "model"
        and pname not in kwargs
    ]
    if missing:
        raise ConfigError(
            f"experiment section is missing required keys for {name}: {missing}"
        )
    return fn(model, **kwargs)


def _cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    reports = _experiment_reports(args.name, cfg, args.jobs)
    if args.out:
        fieldio.reports_to_json(args.out, reports)
    if args.csv:
        base = Path(args.csv)
        if len(reports) == 1:
            fieldio.report_points_to_csv(base, reports[0])
        else:
            for rep in reports:
                fieldio.report_points_to_csv(_series_filename(base, rep.name), rep)
    all_pass = True
    for rep in reports:
        verdict = "pass" if rep.passed else ("inconclusive" if rep.inconclusive else "FAIL")
        if math.isnan(rep.fitted_slope):
            detail = rep.notes[0] if rep.notes else "no slope fitted"
        else:
            lo, hi = rep.thresholds["slope_band"]
            detail = (
                f"slope {rep.fitted_slope:.3f} (stderr {rep.slope_stderr:.3f}), "
                f"band [{lo:g}, {hi:g}]"
            )
        print(f"{rep.name}: {detail} -> {verdict}")
        all_pass = all_pass and rep.passed
    return EXIT_PASS if all_pass else EXIT_EXPERIMENT_FAIL


def _cmd_audit(args) -> int:
    cfg = load_config(args.config)
    model = model_from_config(cfg, seed_override=_env_seed())
    rep = audit_model(model, n_samples=args.samples)
    sup = ", ".join(f"k={k}: {v:.4e}" for k, v in sorted(rep["sup_derivative_by_order"].items()))
    flo, fhi = rep["family_interval"]
    glo, ghi = rep["global_interval"]

    def mark(ok):
        return "ok" if ok else "VIOLATED"

    print(
        f"assumption audit: {model.g_kind} energy on {model.coeff.kind} "
        f"coefficient, dim={model.dim}, seed={model.coeff.seed}, "
        f"{rep['samples']} samples"
    )
    print(f"  smoothness: sup |D^k_p L| per order: {sup} (orders up to N+2={model.max_derivative_order})")
    print(
        f"  uniform convexity: Hessian eigenvalues in [{rep['eig_min']:.6f}, "
        f"{rep['eig_max']:.6f}]; family window [{flo:g}, {fhi:g}] "
        f"{mark(rep['eigs_in_family_interval'])}; global window [{glo:g}, {ghi:g}] "
        f"{mark(rep['eigs_in_global_interval'])}"
    )
    print(
        f"  flux at zero slope: max |D_p L(0, x)| = {rep['flux_at_zero_max']:.4e} "
        f"<= {rep['flux_at_zero_bound']:.4e} {mark(rep['flux_at_zero_ok'])}"
    )
    print(
        f"  dependence range: coefficient cells {rep['coefficient_dependence_range']:g} "
        "apart are independent draws"
    )
    print(f"  overall: {mark(rep['ok'])}")
    return EXIT_PASS if rep["ok"] else EXIT_CONFIG


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlhomog",
        description=(
            "Nonlinear divergence-form solves, linearized hierarchies, "
            "effective-Lagrangian Taylor expansions and scaling experiments "
            "on structured P1 grids."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="one nonlinear Dirichlet or periodic-cell solve")
    sp.add_argument("--config", required=True, help="TOML model/solver config")
    sp.add_argument("--grid", default="", help="override, e.g. n=128,side=1.0,boundary=periodic")
    sp.add_argument("--bc", required=True, help="affine:p=<floats> | zero | file:<path> | slope:<floats>")
    sp.add_argument("--out", required=True, help="output field file (a .json summary is written next to it)")
    sp.add_argument("--csv", default="", help="also write the solution as CSV")
    sp.set_defaults(handler=_cmd_solve)

    hp = sub.add_parser("hierarchy", help="solve u, v and the linearized ladder w_1..w_m")
    hp.add_argument("--config", required=True)
    hp.add_argument("--m", type=int, required=True, help="hierarchy depth")
    hp.add_argument("--bc-u", required=True, help="field file with the base Dirichlet data")
    hp.add_argument("--bc-v", default="", help="field file with the perturbed Dirichlet data")
    hp.add_argument(
        "--bc-g",
        nargs="+",
        default=None,
        help="explicit per-level trace files for w_1..w_m (default: recursive traces)",
    )
    hp.add_argument("--out-dir", required=True)
    hp.set_defaults(handler=_cmd_hierarchy)

    cp = sub.add_parser("correctors", help="periodic cell problem and linearized correctors")
    cp.add_argument("--config", required=True)
    cp.add_argument("--p", required=True, help="mean slope, comma-separated")
    cp.add_argument("--h", default="", help="linearization direction (default first axis)")
    cp.add_argument("--m", type=int, default=1, help="ladder depth (0 = first corrector only)")
    cp.add_argument("--cell", type=int, default=0, help="override the coefficient extent")
    cp.add_argument("--resolution", type=int, default=8, help="grid cells per coefficient cell")
    cp.add_argument("--out-dir", required=True)
    cp.set_defaults(handler=_cmd_correctors)

    tp = sub.add_parser("taylor", help="Taylor data of the effective Lagrangian at a slope")
    tp.add_argument("--config", required=True)
    tp.add_argument("--p", required=True, help="expansion point, comma-separated")
    tp.add_argument("--orders", type=int, required=True, help="highest derivative order")
    tp.add_argument("--cell", type=int, default=0, help="override the coefficient extent")
    tp.add_argument("--seeds", type=int, default=0, help="average over this many consecutive seeds")
    tp.add_argument("--resolution", type=int, default=8)
    tp.add_argument("--out", required=True, help="output JSON path")
    tp.set_defaults(handler=_cmd_taylor)

    ep = sub.add_parser("experiment", help="run a scaling experiment and judge its report")
    ep.add_argument("name", choices=sorted(_EXPERIMENTS))
    ep.add_argument("--config", required=True)
    ep.add_argument("--out", default="", help="write the report(s) as a JSON array")
    ep.add_argument(
        "--csv",
        default="",
        help="write measured points as CSV (one file per series when several)",
    )
    ep.add_argument(
        "--jobs",
        type=int,
        default=_default_jobs(),
        help="worker processes for experiment points (1 = serial)",
    )
    ep.set_defaults(handler=_cmd_experiment)

    ap = sub.add_parser("audit", help="sampled audit of the model assumptions")
    ap.add_argument("--config", required=True)
    ap.add_argument("--samples", type=int, default=1000)
    ap.set_defaults(handler=_cmd_audit)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as err:
        return 0 if err.code in (0, None) else EXIT_CONFIG
    try:
        return args.handler(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except fieldio.FieldFormatError as err:
        print(f"field file error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, F.FieldShapeError, ValueError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover - exercised via the console script
    sys.exit(main())
