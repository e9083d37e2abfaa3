"""Matrix-free discrete Hamiltonian and its preconditioned eigensolver.

In window-coefficient space the Hamiltonian acts as

    H x = Lambda x + F (V . F^{-1} x),

a diagonal kinetic part Lambda = diag(||P k||^2 / 2) plus a potential term
applied pointwise on the collocation grid between two FFTs.  The analysis
and synthesis normalizations cancel, so one apply costs exactly two
unnormalized FFTs and O(N) arithmetic.  The smallest eigenpair is found by
single-vector LOBPCG with a diagonal least-squares preconditioner whose
entries are available in closed form.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as spfft
from scipy.sparse.linalg import LinearOperator, eigsh

from .core import WindowIndexSet
from .errors import (
    BreakdownRecovered,
    NonPositiveDiagonal,
    NotConverged,
    NotPositiveDefinite,
    OutOfRange,
    ShapeMismatch,
)
from .transform import GridField, SpectralField

DENSE_LIMIT = 4096

_MGS_DROP = 1e-12
_REFRESH_EVERY = 100
_COLUMN_BATCH = 512


class HamiltonianOperator:
    """Discrete quasiperiodic Schrodinger operator on a window.

    Attributes:
        index_set: The retained lattice window.
        potential: Grid samples of the parent potential on the matched grid.
    """

    def __init__(self, potential: GridField, index_set: WindowIndexSet):
        if potential.grid.shape != index_set.shape:
            raise ShapeMismatch(
                f"potential grid {potential.grid.shape} != index box {index_set.shape}"
            )
        self.index_set = index_set
        self.potential = potential
        self._vbox = np.asarray(potential.values).reshape(index_set.shape)

    @property
    def size(self) -> int:
        return self.index_set.size

    @cached_property
    def lambda_diag(self) -> np.ndarray:
        """Kinetic diagonal ||P k||^2 / 2 in rank order."""
        set_ = self.index_set
        out = np.empty(set_.size, dtype=np.float64)
        for start in range(0, set_.size, 1 << 20):
            stop = min(start + (1 << 20), set_.size)
            q = set_.wave_vector_block(start, stop)
            out[start:stop] = 0.5 * np.sum(q * q, axis=1)
        return out

    @cached_property
    def hermitian(self) -> bool:
        """True when the potential is real, making the operator Hermitian."""
        v = self._vbox
        return not np.iscomplexobj(v) or float(np.max(np.abs(v.imag))) == 0.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        """One operator application on a flat coefficient vector."""
        x = np.asarray(x)
        if x.shape != (self.size,):
            raise ShapeMismatch(f"expected shape ({self.size},), got {x.shape}")
        work = spfft.ifftn(x.reshape(self.index_set.shape), workers=-1)
        np.multiply(work, self._vbox, out=work)
        out = spfft.fftn(work, overwrite_x=True, workers=-1).ravel()
        out += self.lambda_diag * x
        return out

    def apply_batch(self, X: np.ndarray) -> np.ndarray:
        """Apply to the columns of an (N, m) block with batched FFTs."""
        if X.ndim != 2 or X.shape[0] != self.size:
            raise ShapeMismatch(f"expected shape ({self.size}, m), got {X.shape}")
        shape = self.index_set.shape
        axes = tuple(range(len(shape)))
        work = spfft.ifftn(X.reshape(*shape, X.shape[1]), axes=axes, workers=-1)
        work *= self._vbox[..., None]
        out = spfft.fftn(work, axes=axes, overwrite_x=True, workers=-1)
        out = out.reshape(self.size, X.shape[1])
        out += self.lambda_diag[:, None] * X
        return out

    def dense(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        """Assemble the full matrix column-by-column (small systems only)."""
        n = self.size
        if n > limit:
            raise OutOfRange(f"dense assembly capped at {limit}, got N={n}")
        H = np.empty((n, n), dtype=np.complex128)
        eye = np.eye(n, dtype=np.complex128)
        for start in range(0, n, _COLUMN_BATCH):
            stop = min(start + _COLUMN_BATCH, n)
            H[:, start:stop] = self.apply_batch(eye[:, start:stop])
        return H

    def potential_mean(self) -> float:
        """Grid mean of the potential, the diagonal of the convolution part."""
        m = complex(np.mean(self._vbox))
        return m.real

    def potential_power(self) -> float:
        """Grid mean of |V|^2; equals the coefficient power sum by Parseval."""
        return float(np.mean(np.abs(self._vbox) ** 2))


def apply_hamiltonian(op: HamiltonianOperator, x: SpectralField) -> SpectralField:
    """Operator application in SpectralField form."""
    if x.index_set is not op.index_set and x.index_set.shape != op.index_set.shape:
        raise ShapeMismatch("field and operator live on different windows")
    return SpectralField(coeffs=op.apply(x.coeffs), index_set=op.index_set)


@dataclass(frozen=True, eq=False)
class DiagonalPreconditioner:
    """Diagonal approximation to the inverse Hamiltonian."""

    m_diag: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m_diag)
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise NonPositiveDiagonal("preconditioner entries must be finite and > 0")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.m_diag * x


def build_preconditioner(op: HamiltonianOperator) -> DiagonalPreconditioner:
    """Closed-form diagonal minimizer of the columnwise least-squares fit.

    The minimizer of ||H D - I||_F over diagonals is D_ii = h_ii / ||H e_i||^2.
    Because the potential term is a permuted circulant, both ingredients are
    available without applying the operator:

        h_ii        = lambda_i + mean(V)
        ||H e_i||^2 = lambda_i^2 + 2 lambda_i mean(V) + mean(|V|^2)

    Raises:
        NonPositiveDiagonal: If some h_ii <= 0; shift the potential up and
            retry (the spectrum shifts with it).
        OutOfRange: If the potential is not real.
    """
    if not op.hermitian:
        raise OutOfRange("preconditioner requires a real potential")
    v0 = op.potential_mean()
    lam = op.lambda_diag
    h = lam + v0
    if np.any(h <= 0):
        raise NonPositiveDiagonal(
            f"diagonal entries reach {float(h.min()):.3e}; add a constant shift"
        )
    colsq = lam * lam + 2.0 * v0 * lam + op.potential_power()
    return DiagonalPreconditioner(m_diag=h / colsq)


@dataclass(eq=False)
class EigenResult:
    """Converged (or best-so-far) smallest eigenpair."""

    energy: float
    coefficients: SpectralField
    iterations: int
    residual_history: np.ndarray
    relative_residual_history: np.ndarray
    rayleigh_history: np.ndarray
    converged: bool
    monotone_violations: int = 0
    applies: int = 0


def _write_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "rayleigh_quotient", "residual_norm", "relative_residual"])
        for it, rq, rn, pr in rows:
            writer.writerow([it, f"{rq:.16e}", f"{rn:.16e}", f"{pr:.16e}"])


def _orthonormal_basis(columns):
    """Modified Gram-Schmidt over (vector, image, tag) triples.

    Returns the orthonormal vectors, their operator images (combined
    implicitly, no fresh applies), the upper-triangular R restricted to the
    accepted columns, and the accepted tags.  Nearly dependent directions
    are dropped with a BreakdownRecovered warning.
    """
    Z, HZ, tags = [], [], []
    rcols = []
    for v, Hv, tag in columns:
        u = v.astype(np.complex128, copy=True)
        Hu = Hv.astype(np.complex128, copy=True)
        rcol = np.zeros(len(Z) + 1, dtype=np.complex128)
        for j in range(len(Z)):
            c = np.vdot(Z[j], u)
            u -= c * Z[j]
            Hu -= c * HZ[j]
            rcol[j] = c
        nrm = float(np.linalg.norm(u))
        scale = float(np.linalg.norm(v))
        if nrm <= _MGS_DROP * max(scale, 1e-300):
            if tag != "p":
                # Dropping p is routine near convergence; x/w drops are not.
                warnings.warn(
                    f"search direction {tag!r} nearly dependent; continuing "
                    "with a reduced subspace",
                    BreakdownRecovered,
                    stacklevel=3,
                )
            continue
        rcol[len(Z)] = nrm
        u /= nrm
        Hu /= nrm
        Z.append(u)
        HZ.append(Hu)
        tags.append(tag)
        rcols.append(rcol)
    m = len(Z)
    R = np.zeros((m, m), dtype=np.complex128)
    for j, rcol in enumerate(rcols):
        R[: j + 1, j] = rcol[: j + 1]
    return Z, HZ, R, tags


def lobpcg_smallest(
    op: HamiltonianOperator,
    M: DiagonalPreconditioner | None = None,
    x0=None,
    tol: float = 1e-10,
    max_iter: int = 20000,
    trace_path=None,
    refresh_every: int = _REFRESH_EVERY,
) -> EigenResult:
    """Smallest eigenpair by preconditioned locally optimal CG.

    Each iteration performs Rayleigh-Ritz on span{x, w, p} where
    w = M (x - mu H x) is the preconditioned residual of the inverse
    Rayleigh quotient mu and p the previous search update.  Only one fresh
    operator apply (on w) is needed per iteration; images of x and p are
    carried as linear combinations and refreshed periodically.  Convergence
    means ||H x - E x|| / ||x|| <= tol with E the Rayleigh quotient.

    Args:
        op: Hermitian operator (real potential).
        M: Diagonal preconditioner, identity if None.
        x0: Starting vector (SpectralField or flat array); defaults to the
            rank-0 unit vector, which sits at lattice index k = 0.
        tol: Residual tolerance.
        max_iter: Subspace updates allowed before giving up.
        trace_path: Optional CSV path recording per-iteration diagnostics.

    Raises:
        NotConverged: Carrying the best iterate in ``result``.
    """
    n = op.size
    if x0 is None:
        x = np.zeros(n, dtype=np.complex128)
        x[0] = 1.0
    else:
        x = np.asarray(getattr(x0, "coeffs", x0), dtype=np.complex128).copy()
        if x.shape != (n,):
            raise ShapeMismatch(f"x0 must have shape ({n},)")
        nx = np.linalg.norm(x)
        if nx == 0:
            raise OutOfRange("x0 must be nonzero")
        x /= nx
    if tol <= 0:
        raise OutOfRange("tol must be positive")

    Hx = op.apply(x)
    applies = 1
    p = None
    Hp = None
    fresh = True
    rows = []
    res_hist, pr_hist, rq_hist = [], [], []
    mono_violations = 0
    converged = False
    iterations = 0

    for it in range(max_iter + 1):
        rq = float(np.vdot(x, Hx).real)
        resid = Hx - rq * x
        rn = float(np.linalg.norm(resid))
        if rn <= tol and not fresh:
            # The carried image may have drifted; confirm before accepting.
            Hx = op.apply(x)
            applies += 1
            fresh = True
            rq = float(np.vdot(x, Hx).real)
            resid = Hx - rq * x
            rn = float(np.linalg.norm(resid))
        pr = rn / abs(rq) if rq != 0 else float(np.linalg.norm(x - Hx))
        rows.append((it, rq, rn, pr))
        res_hist.append(rn)
        pr_hist.append(pr)
        rq_hist.append(rq)
        if len(res_hist) > 4 and rn > res_hist[-2]:
            mono_violations += 1
        if rn <= tol:
            converged = True
            iterations = it
            break
        if it == max_iter:
            iterations = it
            break

        w = M.apply(resid) if M is not None else resid.copy()
        Hw = op.apply(w)
        applies += 1
        cols = [(x, Hx, "x"), (w, Hw, "w")]
        if p is not None:
            cols.append((p, Hp, "p"))
        Z, HZ, R, tags = _orthonormal_basis(cols)
        if len(Z) == 1:
            # Preconditioned residual vanished inside span{x}: nothing left
            # to search along.
            iterations = it
            break
        B = np.empty((len(Z), len(Z)), dtype=np.complex128)
        for i in range(len(Z)):
            for j in range(len(Z)):
                B[i, j] = np.vdot(Z[i], HZ[j])
        B = 0.5 * (B + B.conj().T)
        _, Y = np.linalg.eigh(B)
        y = Y[:, 0]
        x_new = sum(y[j] * Z[j] for j in range(len(Z)))
        Hx_new = sum(y[j] * HZ[j] for j in range(len(Z)))
        # Coefficients in terms of the original (x, w, p) columns give the
        # conjugate-direction update p <- x_new minus its x component.
        c = np.linalg.solve(R, y)
        p_new = np.zeros_like(x)
        Hp_new = np.zeros_like(x)
        for j, tag in enumerate(tags):
            if tag == "w":
                p_new += c[j] * w
                Hp_new += c[j] * Hw
            elif tag == "p":
                p_new += c[j] * p
                Hp_new += c[j] * Hp
        pnrm = float(np.linalg.norm(p_new))
        if pnrm > 0:
            p = p_new / pnrm
            Hp = Hp_new / pnrm
        else:
            p = None
            Hp = None
        xnrm = float(np.linalg.norm(x_new))
        x = x_new / xnrm
        Hx = Hx_new / xnrm
        fresh = False
        if refresh_every and (it + 1) % refresh_every == 0:
            Hx = op.apply(x)
            applies += 1
            fresh = True
            if p is not None:
                Hp = op.apply(p)
                applies += 1

    if not fresh:
        Hx = op.apply(x)
        applies += 1
    nx = float(np.linalg.norm(x))
    x /= nx
    Hx /= nx
    # Final Rayleigh quotient in extended precision; at tol ~ 1e-10 the
    # eigenvalue error is residual-squared and plain double dot products
    # would contaminate it with rounding at the 1e-16 * N level.
    num = np.sum(np.conj(x) * Hx, dtype=np.clongdouble)
    den = np.sum(np.abs(x) ** 2, dtype=np.longdouble)
    assert abs(float(num.imag)) <= 1e-10 * max(1.0, abs(float(num.real)))
    energy = float(num.real / den)

    result = EigenResult(
        energy=energy,
        coefficients=SpectralField(coeffs=x, index_set=op.index_set),
        iterations=iterations,
        residual_history=np.asarray(res_hist),
        relative_residual_history=np.asarray(pr_hist),
        rayleigh_history=np.asarray(rq_hist),
        converged=converged,
        monotone_violations=mono_violations,
        applies=applies,
    )
    if trace_path is not None:
        _write_trace(trace_path, rows)
    if not converged:
        raise NotConverged(
            f"no convergence in {max_iter} iterations; residual "
            f"{res_hist[-1]:.3e} > tol {tol:.1e}",
            result=result,
        )
    return result


def _as_apply(op_apply):
    if isinstance(op_apply, HamiltonianOperator):
        return op_apply.apply, op_apply
    if isinstance(op_apply, np.ndarray):
        return (lambda x: op_apply @ x), None
    if callable(op_apply):
        return op_apply, None
    raise ShapeMismatch("op_apply must be an operator, a matrix, or a callable")


def estimate_condition(op_apply, N: int, mode: str = "dense") -> float:
    """Spectral condition number lambda_max / lambda_min of a Hermitian PD operator.

    Args:
        op_apply: HamiltonianOperator, dense matrix, or callable x -> A x.
        N: Operator dimension.
        mode: "dense" assembles the matrix (N capped at 4096) and takes a
            full eigendecomposition; "iterative" runs extremal eigenvalue
            iterations to relative tolerance 1e-4.

    Raises:
        NotPositiveDefinite: If the smallest eigenvalue estimate is <= 0.
        OutOfRange: For unknown modes or dense requests beyond the cap.
    """
    fn, op = _as_apply(op_apply)
    if mode == "dense":
        if N > DENSE_LIMIT:
            raise OutOfRange(f"dense mode capped at N={DENSE_LIMIT}, got {N}")
        if op is not None:
            A = op.dense()
        elif isinstance(op_apply, np.ndarray):
            A = op_apply
        else:
            A = np.empty((N, N), dtype=np.complex128)
            e = np.zeros(N, dtype=np.complex128)
            for i in range(N):
                e[i] = 1.0
                A[:, i] = fn(e)
                e[i] = 0.0
        defect = float(np.max(np.abs(A - A.conj().T)))
        if defect > 1e-8 * max(1.0, float(np.max(np.abs(A)))):
            raise OutOfRange("operator is not Hermitian; symmetrize before estimating")
        vals = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
        lo, hi = float(vals[0]), float(vals[-1])
    elif mode == "iterative":
        lin = LinearOperator((N, N), matvec=fn, dtype=np.complex128)
        hi = float(eigsh(lin, k=1, which="LA", tol=1e-4, return_eigenvectors=False)[0])
        lo = float(eigsh(lin, k=1, which="SA", tol=1e-4, return_eigenvectors=False)[0])
    else:
        raise OutOfRange(f"unknown mode {mode!r}; expected 'dense' or 'iterative'")
    if lo <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue estimate {lo:.3e} <= 0")
    return hi / lo


def symmetrized_preconditioned_apply(op: HamiltonianOperator, M: DiagonalPreconditioner):
    """Callable for M^(1/2) H M^(1/2), similar to M H with a Hermitian form."""
    s = np.sqrt(M.m_diag)

    def apply(x):
        return s * op.apply(s * x)

    return apply


def hermiticity_defect(op: HamiltonianOperator, rng, trials: int = 8) -> float:
    """Max |<Hx,y> - <x,Hy>| / (||x|| ||y||) over random complex pairs."""
    worst = 0.0
    n = op.size
    for _ in range(trials):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lhs = np.vdot(op.apply(x), y)
        rhs = np.vdot(x, op.apply(y))
        worst = max(
            worst,
            abs(lhs - rhs) / (float(np.linalg.norm(x)) * float(np.linalg.norm(y))),
        )
    return worst
