"""Command-line front end: solve, study, interpolate, precond-stats.

Configuration comes from an optional JSON file plus flag overrides; flags
win.  Exit codes: 0 success, 2 solver failed to converge (best iterate is
still written), 1 anything wrong with the configuration or inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import experiments as xp
from .core import build_window_set, rho, rho_inverse
from .errors import NotConverged, QuasiSpecError
from .solver import HamiltonianOperator, build_preconditioner
from .transform import (
    evaluate,
    evaluate_parent,
    forward_dft,
    sample_parent,
)

_CSV_COEFF_LIMIT = 1 << 20

# Fixed master window defining the manufactured-decay target function; the
# requested interpolation window must fit strictly inside it.
_DECAY_MASTER_K = 32
_DECAY_MASTER_L = 256


@dataclass
class RunConfig:
    """Everything a command needs, a flat bag with JSON round-trip."""

    potential: str = "example1"
    v0: float | None = None
    beta: float | None = None
    theta: float | None = None
    c: float | None = None
    method: str = "iwfpm"
    K: object = None
    L: object = None
    tol: float = 1e-10
    max_iter: int = 20000
    dof_cap: int | None = None
    stride: int = 0
    output_dir: str = "."
    jobs: int = 1
    trace: bool = True
    skip_density: bool = False
    # study
    cases: list | None = None
    ref_path: str | None = None
    ref_method: str | None = None
    ref_K: object = None
    ref_L: object = None
    with_conditions: bool = False
    condition_mode: str = "dense"
    errors: bool = True
    # interpolate
    target: str = "bandlimited"
    decay_a: float = 3.0
    decay_b: float = 2.0
    alias_mode: list | None = None
    samples: int = 200
    seed: int = 7

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _parse_axis(text):
    if text is None or not isinstance(text, str):
        return text
    parts = [p for p in text.split(",") if p]
    vals = [int(p) for p in parts]
    return vals[0] if len(vals) == 1 else vals


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quasispec",
        description=(
            "Spectral solver for quasiperiodic Schrodinger eigenproblems on "
            "slanted (irrational-window) or rectangular index sets."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--potential", choices=["example1", "example2", "example3", "constant"])
        p.add_argument("--v0", type=float, help="example1 amplitude")
        p.add_argument("--beta", type=float, help="example2/3 wavevector scale")
        p.add_argument("--theta", type=float, help="example2/3 mixing angle")
        p.add_argument("--c", type=float, help="constant potential level")
        p.add_argument("--method", choices=["iwfpm", "pm"])
        p.add_argument("-K", help="leading half-width (int or comma list)")
        p.add_argument("-L", help="trailing half-width (int or comma list)")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int, dest="max_iter")
        p.add_argument("--dof-cap", type=int, dest="dof_cap")
        p.add_argument("--stride", type=int)
        p.add_argument("-o", "--output", dest="output_dir")
        p.add_argument("--jobs", type=int)
        p.add_argument("--no-trace", dest="trace", action="store_false", default=None)

    p_solve = sub.add_parser("solve", help="ground-state solve, artifacts to output dir")
    add_common(p_solve)
    p_solve.add_argument("--skip-density", action="store_true", default=None)

    p_study = sub.add_parser("study", help="sweep of solves against one reference")
    add_common(p_study)
    p_study.add_argument("--cases", help='JSON list of [method, K, L] triples')
    p_study.add_argument("--ref-path", dest="ref_path", help="existing reference file")
    p_study.add_argument("--ref-method", dest="ref_method")
    p_study.add_argument("--ref-K", dest="ref_K")
    p_study.add_argument("--ref-L", dest="ref_L")
    p_study.add_argument("--with-conditions", dest="with_conditions",
                         action="store_true", default=None)
    p_study.add_argument("--condition-mode", dest="condition_mode",
                         choices=["dense", "iterative"])
    p_study.add_argument("--no-errors", dest="errors", action="store_false", default=None)

    p_interp = sub.add_parser("interpolate", help="interpolation demo on a known target")
    add_common(p_interp)
    p_interp.add_argument("--target", choices=["bandlimited", "decay", "alias"])
    p_interp.add_argument("--decay-a", type=float, dest="decay_a")
    p_interp.add_argument("--decay-b", type=float, dest="decay_b")
    p_interp.add_argument("--alias-mode", dest="alias_mode",
                          help="comma list: out-of-window lattice index")
    p_interp.add_argument("--samples", type=int)
    p_interp.add_argument("--seed", type=int)

    p_pre = sub.add_parser("precond-stats", help="diagonal preconditioner diagnostics")
    add_common(p_pre)
    p_pre.add_argument("--condition-mode", dest="condition_mode",
                       choices=["dense", "iterative", "none"])
    return parser


def _merge_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data.update(json.load(fh))
    skip = {"command", "config"}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        data[key] = value
    for key in ("K", "L", "ref_K", "ref_L"):
        if key in data:
            data[key] = _parse_axis(data[key])
    if "cases" in data and isinstance(data["cases"], str):
        data["cases"] = json.loads(data["cases"])
    if "alias_mode" in data and isinstance(data["alias_mode"], str):
        data["alias_mode"] = [int(v) for v in data["alias_mode"].split(",")]
    return RunConfig.from_mapping(data)


def _potential_from_config(cfg: RunConfig) -> xp.PotentialSpec:
    params = {}
    if cfg.potential == "example1" and cfg.v0 is not None:
        params["v0"] = cfg.v0
    if cfg.potential in ("example2", "example3"):
        if cfg.beta is not None:
            params["beta"] = cfg.beta
        if cfg.theta is not None:
            params["theta"] = cfg.theta
    if cfg.potential == "constant" and cfg.c is not None:
        params["c"] = cfg.c
    return xp.potential_from_params(cfg.potential, **params)


def _fmt(v) -> str:
    return f"{v:.16e}"


def _write_solution(outdir, sol_or_result, cfg, converged: bool) -> None:
    result = sol_or_result.result if hasattr(sol_or_result, "result") else sol_or_result
    energy = result.energy
    with open(os.path.join(outdir, "energy.txt"), "w") as fh:
        fh.write(_fmt(energy) + "\n")
    meta = {
        "E0": _fmt(energy),
        "converged": converged,
        "iterations": result.iterations,
        "dof": result.coefficients.size,
        "method": cfg.method,
        "K": cfg.K,
        "L": cfg.L,
        "tol": cfg.tol,
        "final_residual": _fmt(float(result.residual_history[-1])),
    }
    if hasattr(sol_or_result, "wall_time_s"):
        meta["wall_time_s"] = sol_or_result.wall_time_s
    with open(os.path.join(outdir, "solve.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    coeffs = result.coefficients
    if coeffs.size <= _CSV_COEFF_LIMIT:
        coeffs.to_csv(os.path.join(outdir, "coefficients.csv"))
    else:
        np.savez(
            os.path.join(outdir, "coefficients.npz"), coefficients=coeffs.coeffs
        )
        print(
            f"coefficient table has {coeffs.size} rows; wrote binary "
            "coefficients.npz instead of CSV",
            file=sys.stderr,
        )


def _write_density(outdir, sol, cfg) -> None:
    d = sol.potential.projection().d
    grid = xp.EvalGrid(d=d, stride=cfg.stride)
    samples, rho_vals = xp.sample_density(sol, grid)
    axes = grid.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    u = samples.values
    with open(os.path.join(outdir, "density.csv"), "w") as fh:
        fh.write(",".join(f"x_{j + 1}" for j in range(d)) + ",re,im,rho\n")
        flat_u = u.ravel()
        flat_rho = rho_vals.ravel()
        coords = [m.ravel() for m in mesh]
        for i in range(flat_u.size):
            pos = ",".join(_fmt(c[i]) for c in coords)
            fh.write(
                f"{pos},{_fmt(flat_u[i].real)},{_fmt(flat_u[i].imag)},"
                f"{_fmt(flat_rho[i])}\n"
            )


def cmd_solve(cfg: RunConfig) -> int:
    potential = _potential_from_config(cfg)
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    trace_path = os.path.join(outdir, "trace.csv") if cfg.trace else None
    try:
        sol = xp.solve_qse(
            potential,
            method=cfg.method,
            K=cfg.K,
            L=cfg.L,
            tol=cfg.tol,
            max_iter=cfg.max_iter,
            dof_cap=cfg.dof_cap,
            trace_path=trace_path,
        )
    except NotConverged as err:
        best = getattr(err, "solution", None) or err.result
        print(f"solver did not converge: {err}", file=sys.stderr)
        _write_solution(outdir, best, cfg, converged=False)
        return 2
    _write_solution(outdir, sol, cfg, converged=True)
    if not cfg.skip_density:
        _write_density(outdir, sol, cfg)
    print(f"E0 = {_fmt(sol.result.energy)}")
    print(f"iterations = {sol.result.iterations}, dof = {sol.dof}")
    return 0


def _study_reference(cfg: RunConfig, potential) -> xp.ReferenceSolution | None:
    if cfg.ref_path:
        return xp.load_reference(cfg.ref_path)
    if cfg.ref_K is not None and cfg.ref_L is not None:
        path = os.path.join(cfg.output_dir, "reference.npz")
        return xp.make_reference(
            potential,
            cfg.ref_method or cfg.method,
            cfg.ref_K,
            cfg.ref_L,
            path,
            stride=cfg.stride,
            tol=cfg.tol,
            dof_cap=cfg.dof_cap,
        )
    return None


def cmd_study(cfg: RunConfig) -> int:
    potential = _potential_from_config(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    reference = _study_reference(cfg, potential)
    compute_errors = cfg.errors and reference is not None
    study = xp.StudyConfig(
        potential=potential,
        cases=[tuple(c) for c in (cfg.cases or [])],
        reference=reference,
        stride=cfg.stride,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        dof_cap=cfg.dof_cap,
        compute_errors=compute_errors,
        with_conditions=cfg.with_conditions,
        condition_mode=cfg.condition_mode,
        jobs=cfg.jobs,
        trace_dir=cfg.output_dir if cfg.trace else None,
    )
    rows = xp.run_study(study)
    xp.write_study_csv(rows, os.path.join(cfg.output_dir, "study.csv"))
    xp.write_error_dof_plot(rows, os.path.join(cfg.output_dir, "error_dof.dat"))
    for row in rows:
        if row.note:
            print(f"{row.method} K={row.K} L={row.L}: {row.note}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {os.path.join(cfg.output_dir, 'study.csv')}")
    return 0


def _interp_window(cfg: RunConfig, projection):
    return build_window_set(
        projection, cfg.K, cfg.L, mode=cfg.method, dof_cap=cfg.dof_cap
    )


def cmd_interpolate(cfg: RunConfig) -> int:
    """Approximate a known target and report the error against its closed form.

    Targets (all on the 1D golden-mean carrier):
      bandlimited: cos(2 pi x) + cos(2 pi a x); exact once both modes fit.
      decay: coefficients (1+|k1+Q k2|)^(-a) (1+|k2|)^(-b) on a fixed master
        window; max error at random points tracks L^-(b-1), so doubling L
        scales it by about 2^-(b-1).
      alias: one out-of-window mode; its interpolant must coincide with the
        in-window index it folds onto.
    """
    if cfg.K is None or cfg.L is None:
        raise ValueError("interpolate requires K and L")
    os.makedirs(cfg.output_dir, exist_ok=True)
    carrier = xp.example1(1.0).projection()
    rng = np.random.default_rng(cfg.seed)
    x_probe = rng.uniform(-100.0, 100.0, size=(cfg.samples, carrier.d))
    report = {
        "target": cfg.target,
        "method": cfg.method,
        "K": cfg.K,
        "L": cfg.L,
        "samples": cfg.samples,
        "seed": cfg.seed,
    }

    window = _interp_window(cfg, carrier)
    if cfg.target == "bandlimited":
        def parent(y):
            return np.cos(y[:, 0]) + np.cos(y[:, 1])

        spec = forward_dft(sample_parent(parent, window.grid), window)
        alpha = carrier.Q[0, 0]
        exact = np.cos(2 * np.pi * x_probe[:, 0]) + np.cos(2 * np.pi * alpha * x_probe[:, 0])
    elif cfg.target == "decay":
        if np.any(window.K > _DECAY_MASTER_K // 2) or np.any(
            window.L > _DECAY_MASTER_L // 2
        ):
            raise ValueError(
                f"decay target requires K <= {_DECAY_MASTER_K // 2} and "
                f"L <= {_DECAY_MASTER_L // 2}"
            )
        master = build_window_set(carrier, _DECAY_MASTER_K, _DECAY_MASTER_L)
        target = xp.decay_coefficients(master, cfg.decay_a, cfg.decay_b)

        def parent(y):
            return evaluate_parent(target, y)

        spec = forward_dft(sample_parent(parent, window.grid), window)
        exact = evaluate(target, x_probe)
        report["decay_a"] = cfg.decay_a
        report["decay_b"] = cfg.decay_b
        report["rate_beta"] = cfg.decay_b - 1.0
    elif cfg.target == "alias":
        k_out = cfg.alias_mode
        if k_out is None:
            k_out = [int(window.K[0]) + 1, int(window.L[0]) + 1]
        k_out = np.asarray(k_out, dtype=np.int64)
        if window.contains(k_out):
            raise ValueError(f"alias mode {k_out.tolist()} lies inside the window")

        def parent(y):
            return np.exp(1j * (y @ k_out.astype(np.float64)))

        spec = forward_dft(sample_parent(parent, window.grid), window)
        k_in = rho_inverse(
            rho(k_out, window.K, window.L, window.d),
            window.window_Q,
            window.K,
            window.L,
        )
        q_in = carrier.wave_vectors(k_in.astype(np.float64))
        exact = np.exp(1j * (x_probe @ q_in))
        report["alias_out"] = [int(v) for v in k_out]
        report["alias_in"] = [int(v) for v in k_in]
    else:
        raise ValueError(f"unknown target {cfg.target!r}")

    approx = evaluate(spec, x_probe)
    max_err = float(np.max(np.abs(approx - exact)))
    report["max_error"] = _fmt(max_err)
    spec.to_csv(os.path.join(cfg.output_dir, "coefficients.csv"))
    with open(os.path.join(cfg.output_dir, "interp.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"max interpolation error = {_fmt(max_err)}")
    return 0


def cmd_precond_stats(cfg: RunConfig) -> int:
    potential = _potential_from_config(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    set_ = build_window_set(
        potential.projection(), cfg.K, cfg.L, mode=cfg.method, dof_cap=cfg.dof_cap
    )
    V = sample_parent(potential.parent, set_.grid)
    op = HamiltonianOperator(V, set_)
    M = build_preconditioner(op)
    h = op.lambda_diag + op.potential_mean()
    stats = {
        "dof": op.size,
        "method": cfg.method,
        "K": cfg.K,
        "L": cfg.L,
        "potential": potential.label(),
        "h_min": _fmt(float(h.min())),
        "h_max": _fmt(float(h.max())),
        "m_min": _fmt(float(M.m_diag.min())),
        "m_max": _fmt(float(M.m_diag.max())),
        "diag_spread_lower_bound": _fmt(float(h.max() / h.min())),
    }
    mode = cfg.condition_mode
    if mode != "none" and (mode == "iterative" or op.size <= 4096):
        cond_H, cond_MH = xp.condition_numbers(op, M, mode)
        stats["cond_H"] = _fmt(cond_H)
        stats["cond_MH"] = _fmt(cond_MH)
    with open(os.path.join(cfg.output_dir, "precond.json"), "w") as fh:
        json.dump(stats, fh, indent=2)
        fh.write("\n")
    for key, value in stats.items():
        print(f"{key} = {value}")
    return 0


_COMMANDS = {
    "solve": cmd_solve,
    "study": cmd_study,
    "interpolate": cmd_interpolate,
    "precond-stats": cmd_precond_stats,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse exits 2 on bad flags; that is a config error here.
        return 0 if err.code in (0, None) else 1
    try:
        cfg = _merge_config(args)
        return _COMMANDS[args.command](cfg)
    except NotConverged as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (QuasiSpecError, ValueError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
