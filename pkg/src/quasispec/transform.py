"""Transforms between parent-grid samples and window coefficients.

The collocation grid is chosen so that the retained basis functions,
reduced modulo the box shape, become the plain discrete Fourier basis.
Analysis and synthesis are therefore single FFTs on the rectangular box;
no reordering step is needed because rank order of the window equals raw
row-major order of the residue box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as spfft

from .core import DualGrid, WindowIndexSet
from .errors import NonFinite, ShapeMismatch

_BLOCK = 1 << 20
_EVAL_BLOCK = 1 << 14

# Axis lengths above this are split into two tensor factors when equispaced,
# turning one tall phase matrix into two short ones.
_FACTOR_CUTOFF = 512


@dataclass(eq=False)
class GridField:
    """Samples of a periodic parent function on a dual grid, flat rank order."""

    values: np.ndarray
    grid: DualGrid

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(eq=False)
class SpectralField:
    """Window coefficients in flat rank order."""

    coeffs: np.ndarray
    index_set: WindowIndexSet

    @property
    def size(self) -> int:
        return self.coeffs.size

    def coefficient(self, k) -> complex:
        """Single coefficient lookup by lattice index.

        Raises:
            OutOfRange: If k is not in the window.
        """
        return complex(self.coeffs[self.index_set.rank_of(k)])

    def to_csv(self, path) -> None:
        """Write k_1..k_n, re, im, magnitude rows in rank order."""
        import csv

        set_ = self.index_set
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [f"k_{j + 1}" for j in range(set_.n)] + ["re", "im", "magnitude"]
            )
            for start, stop, kb in set_.iter_blocks():
                cb = self.coeffs[start:stop]
                for r in range(stop - start):
                    row = [int(v) for v in kb[r]]
                    c = cb[r]
                    row += [
                        f"{c.real:.16e}",
                        f"{c.imag:.16e}",
                        f"{abs(c):.16e}",
                    ]
                    writer.writerow(row)


def sample_parent(parent, grid: DualGrid, block: int = _BLOCK) -> GridField:
    """Sample a parent function on the dual grid.

    Args:
        parent: Callable mapping an (m, n) array of torus points to m values.
        grid: Dual grid to sample on.
        block: Points per evaluation batch.

    Raises:
        NonFinite: If any sample is NaN or infinite.
    """
    probe = np.asarray(parent(grid.point_block(0, min(1, grid.size))))
    dtype = np.complex128 if np.iscomplexobj(probe) else np.float64
    values = np.empty(grid.size, dtype=dtype)
    for start in range(0, grid.size, block):
        stop = min(start + block, grid.size)
        v = np.asarray(parent(grid.point_block(start, stop)))
        if v.shape != (stop - start,):
            raise ShapeMismatch(
                f"parent returned shape {v.shape} for {stop - start} points"
            )
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0]) + start
            raise NonFinite(f"parent sample at grid rank {bad} is not finite")
        values[start:stop] = v
    return GridField(values=values, grid=grid)


def forward_dft(field: GridField, index_set: WindowIndexSet) -> SpectralField:
    """Analysis: grid samples to window coefficients.

    One forward FFT over the residue box, normalized by the point count, so
    that a pure retained mode returns a single unit coefficient.
    """
    if field.grid.shape != index_set.shape:
        raise ShapeMismatch(
            f"grid shape {field.grid.shape} != index box {index_set.shape}"
        )
    box = np.asarray(field.values).reshape(index_set.shape)
    coeffs = spfft.fftn(box, workers=-1) / field.size
    return SpectralField(coeffs=coeffs.ravel(), index_set=index_set)


def inverse_dft(spec: SpectralField) -> GridField:
    """Synthesis: window coefficients back to grid samples (unnormalized FFT)."""
    set_ = spec.index_set
    box = spec.coeffs.reshape(set_.shape)
    values = spfft.ifftn(box, workers=-1) * spec.size
    return GridField(values=values.ravel(), grid=set_.grid)


def interpolate(parent, index_set: WindowIndexSet) -> SpectralField:
    """Sample a parent on the matched grid and transform in one step."""
    return forward_dft(sample_parent(parent, index_set.grid), index_set)


def truncate(coeff_map, index_set: WindowIndexSet) -> SpectralField:
    """Place a sparse set of lattice coefficients into a window.

    Entries of coeff_map whose index falls outside the window are dropped;
    that is the truncation.  Keys are length-n integer tuples.
    """
    coeffs = np.zeros(index_set.size, dtype=np.complex128)
    for k, value in coeff_map.items():
        k = np.asarray(k, dtype=np.int64)
        if k.shape != (index_set.n,):
            raise ShapeMismatch(f"key {tuple(k)} has length {k.size}, need {index_set.n}")
        if index_set.contains(k):
            coeffs[index_set.rank_of(k)] = value
    return SpectralField(coeffs=coeffs, index_set=index_set)


def evaluate(spec: SpectralField, points, block: int = _EVAL_BLOCK) -> np.ndarray:
    """Evaluate the quasiperiodic sum u(x) = sum_k c_k exp(i (P k) . x).

    Args:
        spec: Coefficients on a window whose set carries the projection.
        points: Physical points, shape (m, d) or a single (d,) point.
        block: Coefficients per partial sum.

    Returns:
        Complex values, shape (m,) (or a scalar for a single point).
    """
    set_ = spec.index_set
    x = np.asarray(points, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != set_.d:
        raise ShapeMismatch(f"points have dimension {x.shape[1]}, need {set_.d}")
    out = np.zeros(x.shape[0], dtype=np.complex128)
    # Keep the phase matrix below ~64 MB regardless of block size.
    xchunk = max(1, (1 << 22) // max(block, 1))
    for start, stop, kb in set_.iter_blocks(block):
        q = set_.projection.wave_vectors(kb)
        c = spec.coeffs[start:stop]
        for xs in range(0, x.shape[0], xchunk):
            xe = min(xs + xchunk, x.shape[0])
            phase = x[xs:xe] @ q.T
            out[xs:xe] += np.exp(1j * phase) @ c
    return out[0] if single else out


def evaluate_parent(spec: SpectralField, points, block: int = _EVAL_BLOCK) -> np.ndarray:
    """Evaluate the parent-torus sum U(y) = sum_k c_k exp(i k . y).

    Points live on the n-torus (shape (m, n) or a single (n,) point), so the
    phases use the integer lattice indices themselves, not the projected
    wave vectors.
    """
    set_ = spec.index_set
    y = np.asarray(points, dtype=np.float64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != set_.n:
        raise ShapeMismatch(f"points have dimension {y.shape[1]}, need {set_.n}")
    out = np.zeros(y.shape[0], dtype=np.complex128)
    ychunk = max(1, (1 << 22) // max(block, 1))
    for start, stop, kb in set_.iter_blocks(block):
        c = spec.coeffs[start:stop]
        kf = kb.astype(np.float64)
        for ys in range(0, y.shape[0], ychunk):
            ye = min(ys + ychunk, y.shape[0])
            out[ys:ye] += np.exp(1j * (y[ys:ye] @ kf.T)) @ c
    return out[0] if single else out


def _axis_factors(values):
    """Represent one evaluation axis as one or two tensor factors.

    A long equispaced axis x_m = x_0 + m h splits by m = m2 * W + m1 into
    inner positions x_0 + m1 h and outer offsets m2 W h, whose phase factors
    multiply.  Returns (factor_position_arrays, padded_length).
    """
    x = np.asarray(values, dtype=np.float64)
    m = x.size
    if m > _FACTOR_CUTOFF:
        # Uniformity is judged on reconstructed positions, not steps, so the
        # admitted error stays at the ulp level instead of accumulating.
        h = (x[-1] - x[0]) / (m - 1)
        recon = x[0] + h * np.arange(m)
        tol = 4.0 * np.spacing(np.max(np.abs(x)) + abs(h))
        if np.max(np.abs(recon - x)) <= tol:
            w = int(np.ceil(np.sqrt(m)))
            n2 = -(-m // w)
            inner = x[0] + h * np.arange(w)
            outer = h * w * np.arange(n2)
            return [outer, inner], n2 * w
    return [x], m


def _tensor_eval(mats, c):
    # Contract sum_k c_k prod_i mats[i][m_i, k] without forming the full
    # phase tensor; two-factor blocks go through one gemm.
    if len(mats) == 1:
        return mats[0] @ c
    if len(mats) == 2:
        return (mats[0] * c) @ mats[1].T
    out = np.empty(tuple(a.shape[0] for a in mats), dtype=np.complex128)
    for i in range(mats[0].shape[0]):
        out[i] = _tensor_eval(mats[1:], c * mats[0][i])
    return out


def evaluate_on_grid(spec: SpectralField, axes, block: int = _EVAL_BLOCK) -> np.ndarray:
    """Evaluate on a tensor-product grid of physical points.

    Mathematically identical to evaluate() on the flattened mesh, but the
    phase matrix factorizes along axes, replacing m*N complex exponentials
    by per-axis phase tables and a matrix product.

    Args:
        spec: Coefficients on a window carrying a projection.
        axes: Sequence of d one-dimensional coordinate arrays.

    Returns:
        Complex array of shape (len(axes[0]), ..., len(axes[d-1])).
    """
    set_ = spec.index_set
    if len(axes) != set_.d:
        raise ShapeMismatch(f"got {len(axes)} axes, need {set_.d}")
    factors = []
    qcol = []
    true_len = []
    padded = []
    for j, ax in enumerate(axes):
        fax, pad = _axis_factors(ax)
        ax = np.asarray(ax)
        true_len.append(ax.size)
        padded.append(pad)
        for f in fax:
            factors.append(f)
            qcol.append(j)
    # Cap the per-block phase matrices at ~64 MB even for long unsplit axes.
    rows_max = max(f.size for f in factors)
    block = max(1, min(block, (1 << 22) // rows_max))
    out = np.zeros(tuple(f.size for f in factors), dtype=np.complex128)
    for start, stop, kb in set_.iter_blocks(block):
        q = set_.projection.wave_vectors(kb)
        c = spec.coeffs[start:stop]
        mats = [np.exp(1j * np.outer(factors[i], q[:, qcol[i]])) for i in range(len(factors))]
        out += _tensor_eval(mats, c)
    # Merge split factors back into their axes and trim padding.
    out = out.reshape(tuple(padded))
    slices = tuple(slice(0, m) for m in true_len)
    return out[slices]
