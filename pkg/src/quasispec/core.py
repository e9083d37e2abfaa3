"""Irrational-window index sets and the index-shift bijection.

A quasiperiodic function on R^d lifts to a periodic parent on the n-torus
through a projection matrix P = [P_I | P_II] whose leading d-by-d block is
invertible.  Writing Q = P_I^{-1} P_II, the physical wave vector attached to
a lattice index k in Z^n is P k = P_I (k_I + Q k_II), so all irrationality
is concentrated in the window coordinate w = k_I + Q k_II.  The solver
retains the lattice indices falling in the slanted window

    W = { k : k_II in [-L, L)^{n-d},  k_I + Q k_II in [-K, K)^d },

which holds exactly prod(2K) * prod(2L) integer points.  Reducing each
component modulo its axis length maps the window bijectively onto a
rectangular index box, so FFTs on the box apply verbatim to the window.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    BoundaryAmbiguity,
    OutOfRange,
    OverflowRisk,
    RankDeficient,
    ShapeMismatch,
    SingularLeadingBlock,
)

DEFAULT_DOF_CAP = 2**28
DOF_CAP_ENV = "QUASISPEC_DOF_CAP"

# Distance of a window edge to the nearest lattice plane below which
# membership is flagged as floating-point ambiguous.
BOUNDARY_TOL = 1e-12

_BLOCK = 1 << 20


def resolve_dof_cap(explicit=None) -> int:
    """Return the active degree-of-freedom cap.

    Precedence: explicit argument, then the QUASISPEC_DOF_CAP environment
    variable, then the built-in default.
    """
    if explicit is not None:
        cap = int(explicit)
    else:
        raw = os.environ.get(DOF_CAP_ENV)
        cap = int(raw) if raw else DEFAULT_DOF_CAP
    if cap < 1:
        raise OutOfRange(f"degree-of-freedom cap must be positive, got {cap}")
    return cap


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """A full-rank projection P = [P_I | P_II] with precomputed Q = P_I^{-1} P_II.

    Attributes:
        matrix: The d-by-n projection, float64.
        Q: The d-by-(n-d) slant matrix P_I^{-1} P_II.
    """

    matrix: np.ndarray
    Q: np.ndarray

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def leading(self) -> np.ndarray:
        """The invertible d-by-d block P_I."""
        return self.matrix[:, : self.d]

    @property
    def trailing(self) -> np.ndarray:
        """The d-by-(n-d) block P_II."""
        return self.matrix[:, self.d :]

    def wave_vectors(self, k) -> np.ndarray:
        """Physical wave vectors P k for lattice indices k, shape (..., d)."""
        k = np.asarray(k, dtype=np.float64)
        return k @ self.matrix.T


def split_projection(P) -> ProjectionMatrix:
    """Validate a projection matrix and split off its slant part.

    Args:
        P: Array-like of shape (d, n) with d <= n.

    Returns:
        A ProjectionMatrix carrying P and Q = P_I^{-1} P_II.

    Raises:
        ShapeMismatch: If P is not a 2-d array with d <= n.
        RankDeficient: If the rows of P are linearly dependent.
        SingularLeadingBlock: If the leading d-by-d block is not invertible.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ShapeMismatch(f"projection must be 2-d, got ndim={P.ndim}")
    d, n = P.shape
    if d > n:
        raise ShapeMismatch(f"projection must have d <= n, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ShapeMismatch("projection contains non-finite entries")
    if np.linalg.matrix_rank(P) < d:
        raise RankDeficient("projection rows are linearly dependent")
    lead = P[:, :d]
    # Full row rank does not imply the leading block is invertible; the rank
    # may live in the trailing columns.
    sv = np.linalg.svd(lead, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= 1e-12 * sv[0]:
        raise SingularLeadingBlock("leading d-by-d block is not invertible")
    Q = np.linalg.solve(lead, P[:, d:]) if n > d else np.zeros((d, 0))
    out = ProjectionMatrix(matrix=P.copy(), Q=np.asarray(Q, dtype=np.float64))
    out.matrix.setflags(write=False)
    out.Q.setflags(write=False)
    return out


def _axis_halfwidths(value, count, name) -> np.ndarray:
    """Broadcast a scalar or per-axis sequence of positive ints to shape (count,)."""
    arr = np.asarray(value)
    if arr.ndim == 0:
        arr = np.full(count, arr)
    if arr.shape != (count,):
        raise ShapeMismatch(f"{name} must be a scalar or length-{count} sequence")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise OutOfRange(f"{name} must be integer valued")
        arr = arr.astype(np.int64)
    arr = arr.astype(np.int64)
    if np.any(arr < 1):
        raise OutOfRange(f"{name} must be >= 1")
    return arr


def rho(k, K, L, d: int) -> np.ndarray:
    """Index shift: reduce each component to its nonnegative residue.

    Leading components are taken mod 2K, trailing ones mod 2L.  Accepts a
    single index of shape (n,) or a batch of shape (m, n).
    """
    k = np.asarray(k, dtype=np.int64)
    single = k.ndim == 1
    k = np.atleast_2d(k)
    n = k.shape[1]
    K = _axis_halfwidths(K, d, "K")
    L = _axis_halfwidths(L, n - d, "L")
    mod = np.concatenate([2 * K, 2 * L])
    out = np.mod(k, mod)
    return out[0] if single else out


def _edge_positions(k_second, window_Q, K):
    """Lower window edges ceil(-K - Q k_II) and their float pre-images.

    Returns (lower, edge) where edge = -K - Q k_II as float and
    lower = ceil(edge) as int64.  Emits BoundaryAmbiguity when an edge
    passes within BOUNDARY_TOL of an integer without hitting it exactly.
    """
    g = k_second.astype(np.float64) @ window_Q.T
    edge = -K.astype(np.float64) - g
    dist = np.abs(edge - np.rint(edge))
    near = (dist > 0.0) & (dist < BOUNDARY_TOL)
    if np.any(near):
        rows = np.nonzero(np.any(near, axis=1))[0]
        sample = k_second[rows[0]]
        warnings.warn(
            f"window edge within {BOUNDARY_TOL:g} of a lattice plane "
            f"(first offending k_II = {tuple(int(v) for v in sample)}); "
            "membership decided by IEEE rounding",
            BoundaryAmbiguity,
            stacklevel=3,
        )
    lower = np.ceil(edge).astype(np.int64)
    return lower, edge


def rho_inverse(kstar, window_Q, K, L) -> np.ndarray:
    """Invert the index shift on the rectangular box.

    Args:
        kstar: Residue indices, shape (n,) or (m, n), components in
            [0, 2K) / [0, 2L).
        window_Q: Slant matrix of the window, shape (d, n-d).  Zero for the
            classical rectangular truncation.
        K, L: Window half-widths (scalar or per-axis).

    Returns:
        The unique window indices k with rho(k) = kstar, same shape as kstar.
    """
    kstar = np.asarray(kstar, dtype=np.int64)
    single = kstar.ndim == 1
    kstar = np.atleast_2d(kstar)
    window_Q = np.asarray(window_Q, dtype=np.float64)
    d = window_Q.shape[0]
    n = kstar.shape[1]
    if window_Q.shape != (d, n - d):
        raise ShapeMismatch(
            f"window_Q shape {window_Q.shape} incompatible with n={n}, d={d}"
        )
    K = _axis_halfwidths(K, d, "K")
    L = _axis_halfwidths(L, n - d, "L")
    if np.any(kstar < 0) or np.any(kstar >= np.concatenate([2 * K, 2 * L])):
        raise OutOfRange("residue index outside the rectangular box")
    # Trailing components: [-L, L) is a complete residue system mod 2L.
    k2 = kstar[:, d:].copy()
    k2 -= 2 * L * (k2 >= L)
    # Leading components: the window cuts a run of exactly 2K consecutive
    # integers out of each line k_I = const + Z; pick the run member that
    # matches the residue.
    lower, _ = _edge_positions(k2, window_Q, K)
    k1 = lower + np.mod(kstar[:, :d] - lower, 2 * K)
    out = np.concatenate([k1, k2], axis=1)
    return out[0] if single else out


class WindowIndexSet:
    """The lattice points of a (possibly slanted) window, in residue order.

    Indices are stored implicitly: rank r corresponds to the residue k*
    obtained by unraveling r over the box shape (2K_1, ..., 2L_{n-d}) in
    row-major order, and to the window index k = rho_inverse(k*).  Blocks of
    either representation are materialized on demand so large sets never
    hold an (N, n) table in memory.
    """

    def __init__(self, projection: ProjectionMatrix, K, L, window_Q, mode: str):
        self.projection = projection
        self.K = K
        self.L = L
        self.window_Q = window_Q
        self.mode = mode
        self._index_cache = None

    @cached_property
    def shape(self) -> tuple:
        return tuple(int(v) for v in np.concatenate([2 * self.K, 2 * self.L]))

    @property
    def d(self) -> int:
        return self.projection.d

    @property
    def n(self) -> int:
        return self.projection.n

    @property
    def size(self) -> int:
        out = 1
        for s in self.shape:
            out *= s
        return out

    def __len__(self) -> int:
        return self.size

    def rho(self, k):
        return rho(k, self.K, self.L, self.d)

    def rho_inverse(self, kstar):
        return rho_inverse(kstar, self.window_Q, self.K, self.L)

    def kstar_block(self, start: int, stop: int) -> np.ndarray:
        """Residue indices for ranks [start, stop), shape (stop-start, n)."""
        ranks = np.arange(start, stop, dtype=np.int64)
        parts = np.unravel_index(ranks, self.shape)
        return np.stack(parts, axis=1).astype(np.int64)

    def k_block(self, start: int, stop: int) -> np.ndarray:
        """Window indices for ranks [start, stop)."""
        return self.rho_inverse(self.kstar_block(start, stop))

    def indices(self) -> np.ndarray:
        """The full (N, n) window index table (cached only when small)."""
        if self._index_cache is not None:
            return self._index_cache
        out = self.k_block(0, self.size)
        if self.size <= _BLOCK:
            self._index_cache = out
        return out

    def iter_blocks(self, block: int = _BLOCK):
        """Yield (start, stop, k_block) covering all ranks in order."""
        for start in range(0, self.size, block):
            stop = min(start + block, self.size)
            yield start, stop, self.k_block(start, stop)

    def contains(self, k) -> np.ndarray | bool:
        """Window membership test for one index or a batch."""
        k = np.asarray(k, dtype=np.int64)
        single = k.ndim == 1
        k = np.atleast_2d(k)
        if k.shape[1] != self.n:
            raise ShapeMismatch(f"index length {k.shape[1]} != n={self.n}")
        k2 = k[:, self.d :]
        ok = np.all((k2 >= -self.L) & (k2 < self.L), axis=1)
        lower, _ = _edge_positions(k2, self.window_Q, self.K)
        k1 = k[:, : self.d]
        ok &= np.all((k1 >= lower) & (k1 < lower + 2 * self.K), axis=1)
        return bool(ok[0]) if single else ok

    def rank_of(self, k) -> int:
        """Row-major rank of a window index.

        Raises:
            OutOfRange: If k is not a member of the set.
        """
        k = np.asarray(k, dtype=np.int64)
        if k.shape != (self.n,):
            raise ShapeMismatch(f"expected a single index of length {self.n}")
        if not self.contains(k):
            raise OutOfRange(f"index {tuple(int(v) for v in k)} not in the window")
        kstar = self.rho(k)
        return int(np.ravel_multi_index(tuple(kstar), self.shape))

    def window_coords(self, k) -> np.ndarray:
        """Window coordinates k_I + Q_w k_II used for membership geometry."""
        k = np.asarray(k, dtype=np.float64)
        return k[..., : self.d] + k[..., self.d :] @ self.window_Q.T

    def lifted_coords(self, k) -> np.ndarray:
        """Diophantine coordinates k_I + Q k_II of the physical frequency."""
        k = np.asarray(k, dtype=np.float64)
        return k[..., : self.d] + k[..., self.d :] @ self.projection.Q.T

    def wave_vector_block(self, start: int, stop: int) -> np.ndarray:
        """Physical wave vectors P k for ranks [start, stop), shape (m, d)."""
        return self.projection.wave_vectors(self.k_block(start, stop))

    @cached_property
    def grid(self) -> "DualGrid":
        return build_dual_grid(self.K, self.L, self.n, self.d)

    def to_csv(self, path) -> None:
        """Write the index table: k_1..k_n, kstar_1..kstar_n, rank."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = [f"k_{j + 1}" for j in range(self.n)]
            header += [f"kstar_{j + 1}" for j in range(self.n)]
            header.append("rank")
            writer.writerow(header)
            for start, stop, kb in self.iter_blocks():
                ks = self.kstar_block(start, stop)
                for r in range(stop - start):
                    row = [int(v) for v in kb[r]]
                    row += [int(v) for v in ks[r]]
                    row.append(start + r)
                    writer.writerow(row)


def build_window_set(
    projection: ProjectionMatrix,
    K,
    L,
    mode: str = "iwfpm",
    dof_cap=None,
) -> WindowIndexSet:
    """Construct the retained index set for a projection and window size.

    Args:
        projection: Output of split_projection.
        K: Leading half-widths (scalar or length-d sequence of ints).
        L: Trailing half-widths (scalar or length-(n-d) sequence).
        mode: "iwfpm" slants the window by Q so every retained physical
            frequency lies in [-K, K)^d; "pm" keeps the classical rectangular
            truncation (zero slant).
        dof_cap: Optional override of the degree-of-freedom cap.

    Raises:
        OverflowRisk: If prod(2K) * prod(2L) exceeds the cap.
        OutOfRange: For an unknown mode or non-positive half-width.
    """
    if not isinstance(projection, ProjectionMatrix):
        projection = split_projection(projection)
    d, n = projection.d, projection.n
    K = _axis_halfwidths(K, d, "K")
    L = _axis_halfwidths(L, n - d, "L")
    if mode == "iwfpm":
        window_Q = projection.Q
    elif mode == "pm":
        window_Q = np.zeros((d, n - d))
    else:
        raise OutOfRange(f"unknown mode {mode!r}; expected 'iwfpm' or 'pm'")
    total = 1
    for v in K:
        total *= 2 * int(v)
    for v in L:
        total *= 2 * int(v)
    cap = resolve_dof_cap(dof_cap)
    if total > cap:
        raise OverflowRisk(
            f"index set would hold {total} points, above the cap {cap}; "
            f"raise {DOF_CAP_ENV} or pass a larger dof_cap to proceed"
        )
    return WindowIndexSet(projection, K, L, np.asarray(window_Q, float), mode)


@dataclass(frozen=True, eq=False)
class DualGrid:
    """Collocation points y_l = (pi l_1 / K_1, ..., pi l_n / L_{n-d}).

    Points are indexed row-major by the residue l over the box shape; axis
    j holds 2*denom_j equispaced points on [0, 2 pi).
    """

    axes: tuple

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def size(self) -> int:
        out = 1
        for a in self.axes:
            out *= len(a)
        return out

    def point_block(self, start: int, stop: int) -> np.ndarray:
        """Grid points for ranks [start, stop), shape (stop-start, n)."""
        ranks = np.arange(start, stop, dtype=np.int64)
        parts = np.unravel_index(ranks, self.shape)
        cols = [self.axes[j][parts[j]] for j in range(self.n)]
        return np.stack(cols, axis=1)

    def points(self) -> np.ndarray:
        """All grid points, shape (size, n).  Intended for small grids."""
        return self.point_block(0, self.size)


def build_dual_grid(K, L, n: int, d: int) -> DualGrid:
    """Equispaced parent-torus grid matched to the window box shape."""
    K = _axis_halfwidths(K, d, "K")
    L = _axis_halfwidths(L, n - d, "L")
    denoms = np.concatenate([K, L]).astype(np.float64)
    axes = tuple(
        np.pi * np.arange(2 * int(m)) / float(m) for m in denoms
    )
    return DualGrid(axes=axes)
