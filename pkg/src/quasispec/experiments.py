"""Model potentials, reference solutions, error metrics, and study tables.

The three built-in potentials cover the regimes of interest: a 1D cosine
pair with golden-ratio frequency ratio whose ground state crosses from
extended to localized as the amplitude grows, a 2D three-cosine potential
with a mixing angle, and a 3D six-cosine potential on a 6-torus parent.
Errors of a solve are measured against a self-computed fine reference:
E_v is the relative eigenvalue error and E_f the max-norm difference of
phase-fixed, max-normalized wavefunction samples on a uniform grid.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ProjectionMatrix, build_window_set, split_projection
from .errors import OutOfRange, QuasiSpecError, ShapeMismatch, ZeroReference
from .solver import (
    DiagonalPreconditioner,
    EigenResult,
    HamiltonianOperator,
    NotConverged,
    build_preconditioner,
    estimate_condition,
    lobpcg_smallest,
    symmetrized_preconditioned_apply,
)
from .transform import SpectralField, evaluate_on_grid, sample_parent

ALPHA_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

REFERENCE_SCHEMA = 1


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """A named potential: parent function plus projection matrix.

    kind is one of example1, example2, example3, constant, custom; params
    holds the defining scalars (v0, beta, theta, c) where applicable.
    """

    kind: str
    params: dict
    _projection: ProjectionMatrix
    _parent: callable

    def projection(self) -> ProjectionMatrix:
        return self._projection

    def parent(self, points) -> np.ndarray:
        return self._parent(points)

    def label(self) -> str:
        inner = ",".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({inner})"


def example1(v0: float = 2.5) -> PotentialSpec:
    """1D two-cosine potential v(x) = v0 (2 - cos(2 pi x) - cos(2 pi a x)).

    The frequency ratio is the golden mean a = (sqrt(5)-1)/2; the parent is
    V(y) = v0 (2 - cos y1 - cos y2) under P = 2 pi (1, a).
    """
    v0 = float(v0)
    P = split_projection(2.0 * np.pi * np.array([[1.0, ALPHA_GOLDEN]]))

    def parent(y):
        return v0 * (2.0 - np.cos(y[:, 0]) - np.cos(y[:, 1]))

    return PotentialSpec("example1", {"v0": v0}, P, parent)


def example2(beta: float = 0.8 * np.pi, theta: float = 0.2 * np.pi) -> PotentialSpec:
    """2D three-cosine potential with wavevector scale beta and mixing angle theta."""
    beta = float(beta)
    theta = float(theta)
    P = split_projection(
        beta
        * np.array(
            [
                [1.0, 0.0, np.cos(theta)],
                [0.0, 1.0, np.sin(theta)],
            ]
        )
    )

    def parent(y):
        return 4.0 - (np.cos(y[:, 0]) + 2.0 * np.cos(y[:, 1]) + np.cos(y[:, 2]))

    return PotentialSpec("example2", {"beta": beta, "theta": theta}, P, parent)


def example3(beta: float = np.pi, theta: float = 0.2 * np.pi) -> PotentialSpec:
    """3D six-cosine potential on a 6-torus parent; alpha is the golden mean."""
    beta = float(beta)
    theta = float(theta)
    P = split_projection(
        beta
        * np.array(
            [
                [1.0, 0.0, 0.0, np.cos(theta), -np.sin(theta), 0.0],
                [0.0, 1.0, 0.0, np.sin(theta), np.cos(theta), 0.0],
                [0.0, 0.0, 1.0, 0.0, 0.0, ALPHA_GOLDEN],
            ]
        )
    )

    def parent(y):
        return 6.0 - np.sum(np.cos(y), axis=1)

    return PotentialSpec(
        "example3", {"beta": beta, "theta": theta, "alpha": ALPHA_GOLDEN}, P, parent
    )


def constant(c: float = 1.0) -> PotentialSpec:
    """Flat potential v = c on the example1 carrier projection (E0 = c exactly)."""
    c = float(c)
    P = split_projection(2.0 * np.pi * np.array([[1.0, ALPHA_GOLDEN]]))

    def parent(y):
        return np.full(y.shape[0], c)

    return PotentialSpec("constant", {"c": c}, P, parent)


def custom(projection, parent, label: str = "custom", **params) -> PotentialSpec:
    """Wrap a user projection matrix and parent callable as a PotentialSpec."""
    if not isinstance(projection, ProjectionMatrix):
        projection = split_projection(projection)
    return PotentialSpec(label, dict(params), projection, parent)


_POTENTIAL_BUILDERS = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    "constant": constant,
}


def potential_from_params(kind: str, **params) -> PotentialSpec:
    """Build a named potential from keyword parameters (CLI entry point)."""
    try:
        builder = _POTENTIAL_BUILDERS[kind]
    except KeyError:
        raise OutOfRange(
            f"unknown potential {kind!r}; expected one of {sorted(_POTENTIAL_BUILDERS)}"
        ) from None
    return builder(**params)


def default_stride(d: int) -> int:
    return 1 if d == 1 else 5


@dataclass(frozen=True)
class EvalGrid:
    """Uniform physical-space grid [-5a, 5a]^d with a = 10^(3-d), step 0.1.

    stride subsamples each axis; the full grids in 2D/3D run to ~1e6 points,
    so reports default to stride 5 there (stride 1 in 1D).
    """

    d: int
    stride: int = 0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise OutOfRange(f"evaluation grids support d in 1..3, got {self.d}")
        if self.stride == 0:
            object.__setattr__(self, "stride", default_stride(self.d))
        if self.stride < 1:
            raise OutOfRange("stride must be >= 1")

    @property
    def a(self) -> float:
        return 10.0 ** (3 - self.d)

    @property
    def h(self) -> float:
        return 0.1

    def axes(self) -> list:
        count = int(round(10.0 * self.a / self.h)) + 1
        base = np.linspace(-5.0 * self.a, 5.0 * self.a, count)
        return [base[:: self.stride].copy() for _ in range(self.d)]

    @property
    def shape(self) -> tuple:
        m = len(self.axes()[0])
        return (m,) * self.d

    @property
    def size(self) -> int:
        m = len(self.axes()[0])
        return m**self.d


def phase_fix(coeffs: np.ndarray) -> np.ndarray:
    """Rotate so the largest-modulus entry is real positive (ties: first)."""
    i = int(np.argmax(np.abs(coeffs)))
    pivot = coeffs[i]
    if pivot == 0:
        return coeffs.copy()
    return coeffs * (abs(pivot) / pivot)


@dataclass(eq=False)
class SolutionSamples:
    """Phase-fixed, max-normalized wavefunction samples with solve metadata."""

    energy: float
    values: np.ndarray
    dof: int
    iterations: int
    wall_time_s: float


@dataclass(eq=False)
class ErrorReport:
    """Energy and field error pair plus bookkeeping columns."""

    E_v: float
    E_f: float
    dof: int
    iterations: int
    wall_time_s: float
    E_f_modulus: float = float("nan")

    def __post_init__(self):
        if self.E_v < 0 or (np.isfinite(self.E_f) and self.E_f < 0):
            raise OutOfRange("errors must be nonnegative")


@dataclass(eq=False)
class QSESolution:
    """One converged solve with its assembled pieces kept for inspection."""

    potential: PotentialSpec
    method: str
    K: np.ndarray
    L: np.ndarray
    result: EigenResult
    operator: HamiltonianOperator
    preconditioner: DiagonalPreconditioner
    wall_time_s: float

    @property
    def dof(self) -> int:
        return self.operator.size


def solve_qse(
    potential: PotentialSpec,
    method: str = "iwfpm",
    K=None,
    L=None,
    tol: float = 1e-10,
    max_iter: int = 20000,
    dof_cap=None,
    x0=None,
    trace_path=None,
) -> QSESolution:
    """End-to-end ground-state solve: window, sampling, preconditioner, LOBPCG.

    NotConverged propagates with the best iterate attached.
    """
    if K is None or L is None:
        raise OutOfRange("K and L are required")
    set_ = build_window_set(potential.projection(), K, L, mode=method, dof_cap=dof_cap)
    V = sample_parent(potential.parent, set_.grid)
    op = HamiltonianOperator(V, set_)
    M = build_preconditioner(op)
    t0 = time.perf_counter()
    try:
        result = lobpcg_smallest(
            op, M, x0=x0, tol=tol, max_iter=max_iter, trace_path=trace_path
        )
    except NotConverged as err:
        err.solution = QSESolution(
            potential, method, set_.K, set_.L, err.result, op, M,
            time.perf_counter() - t0,
        )
        raise
    wall = time.perf_counter() - t0
    return QSESolution(potential, method, set_.K, set_.L, result, op, M, wall)


def sample_wavefunction(solution, grid: EvalGrid) -> SolutionSamples:
    """Evaluate a solve on the grid, phase-fixed and max-normalized."""
    if isinstance(solution, QSESolution):
        result = solution.result
        wall = solution.wall_time_s
    else:
        result = solution
        wall = float("nan")
    if not result.converged:
        raise OutOfRange("refusing to sample an unconverged result")
    fixed = SpectralField(
        coeffs=phase_fix(result.coefficients.coeffs),
        index_set=result.coefficients.index_set,
    )
    u = evaluate_on_grid(fixed, grid.axes())
    peak = float(np.max(np.abs(u)))
    if peak == 0:
        raise ZeroReference("wavefunction vanishes on the whole grid")
    u = u / peak
    return SolutionSamples(
        energy=result.energy,
        values=u,
        dof=result.coefficients.size,
        iterations=result.iterations,
        wall_time_s=wall,
    )


def sample_density(solution, grid: EvalGrid):
    """Normalized wavefunction samples and pointwise density rho = |u|^2."""
    samples = sample_wavefunction(solution, grid)
    rho = np.abs(samples.values) ** 2
    return samples, rho


def inverse_participation_ratio(rho: np.ndarray) -> float:
    """Grid-size-normalized IPR: 1 for a uniform density, size for a delta."""
    rho = np.asarray(rho, dtype=np.float64).ravel()
    total = float(np.sum(rho))
    if total == 0:
        raise ZeroReference("density is identically zero")
    return rho.size * float(np.sum(rho * rho)) / total**2


def mass_concentration(rho: np.ndarray, top_fraction: float = 0.01) -> float:
    """Fraction of total density carried by the top `top_fraction` of points."""
    rho = np.sort(np.asarray(rho, dtype=np.float64).ravel())[::-1]
    keep = max(1, int(round(top_fraction * rho.size)))
    total = float(np.sum(rho))
    if total == 0:
        raise ZeroReference("density is identically zero")
    return float(np.sum(rho[:keep])) / total


def compute_errors(test: SolutionSamples, reference: SolutionSamples) -> ErrorReport:
    """Relative eigenvalue error and max-norm wavefunction error.

    Both inputs must be sampled on the same grid.  The wavefunction error
    compares phase-fixed complex samples; a modulus-only variant rides
    along for diagnostics.
    """
    if test.values.shape != reference.values.shape:
        raise ShapeMismatch(
            f"grids differ: {test.values.shape} vs {reference.values.shape}"
        )
    if reference.energy == 0:
        raise ZeroReference("reference eigenvalue is zero")
    E_v = abs(test.energy - reference.energy) / abs(reference.energy)
    E_f = float(np.max(np.abs(test.values - reference.values)))
    E_f_mod = float(np.max(np.abs(np.abs(test.values) - np.abs(reference.values))))
    return ErrorReport(
        E_v=E_v,
        E_f=E_f,
        dof=test.dof,
        iterations=test.iterations,
        wall_time_s=test.wall_time_s,
        E_f_modulus=E_f_mod,
    )


def window_concentration(
    spec: SpectralField, shrink: float = 0.5, threshold: float = 1e-8
) -> float:
    """Fraction of significant coefficients outside the shrunken window.

    Measures how concentrated a converged spectrum is: coefficients with
    |c| > threshold are tested against the window scaled by `shrink` in the
    slant coordinates.
    """
    set_ = spec.index_set
    bound = shrink * set_.K.astype(np.float64)
    significant = 0
    outside = 0
    for start, stop, kb in set_.iter_blocks():
        c = np.abs(spec.coeffs[start:stop])
        mask = c > threshold
        if not np.any(mask):
            continue
        w = set_.lifted_coords(kb[mask])
        significant += int(np.sum(mask))
        outside += int(np.sum(np.any((w < -bound) | (w >= bound), axis=1)))
    if significant == 0:
        raise ZeroReference(f"no coefficients above {threshold:g}")
    return outside / significant


def decay_coefficients(index_set, a: float, b: float) -> SpectralField:
    """Manufactured anisotropic-decay spectrum on a window.

    Coefficients (1 + ||k_I + Q k_II||)^(-a) (1 + ||k_II||)^(-b) decay
    algebraically in the slant coordinate and the trailing index separately,
    the regularity pattern the truncation-rate estimates are sharp for.
    """
    if a < 0 or b < 0:
        raise OutOfRange("decay exponents must be nonnegative")
    coeffs = np.empty(index_set.size, dtype=np.complex128)
    for start, stop, kb in index_set.iter_blocks():
        w = index_set.lifted_coords(kb)
        k2 = kb[:, index_set.d :].astype(np.float64)
        lead = (1.0 + np.sqrt(np.sum(w * w, axis=1))) ** (-a)
        trail = (1.0 + np.sqrt(np.sum(k2 * k2, axis=1))) ** (-b)
        coeffs[start:stop] = lead * trail
    return SpectralField(coeffs=coeffs, index_set=index_set)


@dataclass(eq=False)
class ReferenceSolution:
    """A persisted fine-resolution solve used as numerical exact solution."""

    header: dict
    energy: float
    coefficients: np.ndarray
    samples: np.ndarray
    grid: EvalGrid

    def as_samples(self) -> SolutionSamples:
        return SolutionSamples(
            energy=self.energy,
            values=self.samples,
            dof=int(self.header["dof"]),
            iterations=int(self.header["iterations"]),
            wall_time_s=float(self.header.get("wall_time_s", float("nan"))),
        )


def make_reference(
    potential: PotentialSpec,
    method: str,
    K_ref,
    L_ref,
    path,
    stride: int = 0,
    tol: float = 1e-10,
    max_iter: int = 40000,
    dof_cap=None,
) -> ReferenceSolution:
    """Solve at reference resolution and persist energy, spectrum, samples.

    The file is written atomically (temp file, then rename) so concurrent
    studies never observe a torn reference.
    """
    sol = solve_qse(
        potential, method=method, K=K_ref, L=L_ref, tol=tol, max_iter=max_iter,
        dof_cap=dof_cap,
    )
    d = potential.projection().d
    grid = EvalGrid(d=d, stride=stride)
    samples = sample_wavefunction(sol, grid)
    header = {
        "schema": REFERENCE_SCHEMA,
        "method": method,
        "K": [int(v) for v in sol.K],
        "L": [int(v) for v in sol.L],
        "potential": potential.label(),
        "params": {k: repr(v) for k, v in potential.params.items()},
        "energy": f"{sol.result.energy:.16e}",
        "dof": sol.dof,
        "iterations": sol.result.iterations,
        "wall_time_s": sol.wall_time_s,
        "stride": grid.stride,
        "d": d,
    }
    ref = ReferenceSolution(
        header=header,
        energy=sol.result.energy,
        coefficients=sol.result.coefficients.coeffs,
        samples=samples.values,
        grid=grid,
    )
    if path is not None:
        tmp = f"{os.fspath(path)}.tmp-{os.getpid()}"
        with open(tmp, "wb") as fh:
            np.savez(
                fh,
                header=json.dumps(header),
                energy=np.float64(ref.energy),
                coefficients=ref.coefficients,
                samples=ref.samples,
            )
        os.replace(tmp, path)
    return ref


def load_reference(path) -> ReferenceSolution:
    """Read back a persisted reference solution."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("schema") != REFERENCE_SCHEMA:
            raise OutOfRange(f"unsupported reference schema {header.get('schema')!r}")
        return ReferenceSolution(
            header=header,
            energy=float(data["energy"]),
            coefficients=np.asarray(data["coefficients"]),
            samples=np.asarray(data["samples"]),
            grid=EvalGrid(d=int(header["d"]), stride=int(header["stride"])),
        )


@dataclass(eq=False)
class StudyCase:
    """One (method, K, L) cell of a study table."""

    method: str
    K: object
    L: object


@dataclass(eq=False)
class StudyConfig:
    """A sweep of solves compared against one reference."""

    potential: PotentialSpec
    cases: list
    reference: ReferenceSolution | None = None
    stride: int = 0
    tol: float = 1e-10
    max_iter: int = 20000
    dof_cap: object = None
    compute_errors: bool = True
    with_conditions: bool = False
    condition_mode: str = "dense"
    jobs: int = 1
    trace_dir: object = None


@dataclass(eq=False)
class StudyRow:
    """One row of the study CSV; note carries failure text, never serialized."""

    method: str
    K: object
    L: object
    dof: int
    E_v: float = float("nan")
    E_f: float = float("nan")
    iters: int = 0
    time_s: float = float("nan")
    cond_H: float = float("nan")
    cond_MH: float = float("nan")
    note: str = ""


def _fmt_axis(value) -> str:
    arr = np.atleast_1d(np.asarray(value))
    if arr.size == 1 or np.all(arr == arr[0]):
        return str(int(arr[0]))
    return "x".join(str(int(v)) for v in arr)


def condition_numbers(op: HamiltonianOperator, M: DiagonalPreconditioner, mode: str):
    """cond(H) and cond(M H) for one assembled operator.

    The preconditioned operator is estimated through its Hermitian
    similarity transform M^(1/2) H M^(1/2), which shares its spectrum.
    """
    n = op.size
    if mode == "dense":
        H = op.dense()
        cond_H = estimate_condition(H, n, "dense")
        s = np.sqrt(M.m_diag)
        cond_MH = estimate_condition(s[:, None] * H * s[None, :], n, "dense")
    else:
        cond_H = estimate_condition(op.apply, n, "iterative")
        cond_MH = estimate_condition(
            symmetrized_preconditioned_apply(op, M), n, "iterative"
        )
    return cond_H, cond_MH


def _study_row(config: StudyConfig, case: StudyCase, ref_samples) -> StudyRow:
    row = StudyRow(method=case.method, K=case.K, L=case.L, dof=0)
    trace_path = None
    if config.trace_dir is not None:
        name = f"trace_{case.method}_K{_fmt_axis(case.K)}_L{_fmt_axis(case.L)}.csv"
        trace_path = os.path.join(os.fspath(config.trace_dir), name)
    try:
        sol = solve_qse(
            config.potential,
            method=case.method,
            K=case.K,
            L=case.L,
            tol=config.tol,
            max_iter=config.max_iter,
            dof_cap=config.dof_cap,
            trace_path=trace_path,
        )
    except NotConverged as err:
        sol = getattr(err, "solution", None)
        if sol is not None:
            row.dof = sol.dof
            row.iters = sol.result.iterations
            row.time_s = sol.wall_time_s
        row.note = f"NotConverged: {err}"
        return row
    except QuasiSpecError as err:
        row.note = f"{type(err).__name__}: {err}"
        return row
    row.dof = sol.dof
    row.iters = sol.result.iterations
    row.time_s = sol.wall_time_s
    if config.compute_errors and ref_samples is not None:
        grid = EvalGrid(d=config.potential.projection().d, stride=config.stride)
        report = compute_errors(sample_wavefunction(sol, grid), ref_samples)
        row.E_v = report.E_v
        row.E_f = report.E_f
    if config.with_conditions:
        try:
            row.cond_H, row.cond_MH = condition_numbers(
                sol.operator, sol.preconditioner, config.condition_mode
            )
        except QuasiSpecError as err:
            row.note = f"{type(err).__name__}: {err}"
    return row


def run_study(config: StudyConfig) -> list:
    """Run every case of a study, one row per case, failures recorded in place.

    Rows keep the order of config.cases regardless of the job count; with
    jobs > 1 independent solves run in worker threads (the FFT and BLAS
    cores release the interpreter lock).
    """
    ref_samples = None
    if config.reference is not None and config.compute_errors:
        ref_samples = config.reference.as_samples()
        grid = EvalGrid(d=config.potential.projection().d, stride=config.stride)
        if ref_samples.values.shape != grid.shape:
            raise ShapeMismatch(
                "reference sampled on a different grid; re-make it with "
                f"stride {grid.stride}"
            )
    cases = [c if isinstance(c, StudyCase) else StudyCase(*c) for c in config.cases]
    if config.jobs > 1 and len(cases) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(
                pool.map(lambda c: _study_row(config, c, ref_samples), cases)
            )
    else:
        rows = [_study_row(config, case, ref_samples) for case in cases]
    return rows


def write_study_csv(rows, path) -> None:
    """Emit the fixed-schema study table (17 significant digits)."""
    import csv

    def num(v):
        return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.16e}"

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "K", "L", "dof", "E_v", "E_f", "iters", "time_s", "cond_H", "cond_MH"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.method,
                    _fmt_axis(row.K),
                    _fmt_axis(row.L),
                    row.dof,
                    num(row.E_v),
                    num(row.E_f),
                    row.iters,
                    num(row.time_s),
                    num(row.cond_H),
                    num(row.cond_MH),
                ]
            )


def write_error_dof_plot(rows, path) -> None:
    """Two-column dof / E_v file for plotting, 8 significant digits."""
    with open(path, "w") as fh:
        fh.write("# dof E_v\n")
        for row in rows:
            if np.isfinite(row.E_v):
                fh.write(f"{row.dof} {row.E_v:.7e}\n")
