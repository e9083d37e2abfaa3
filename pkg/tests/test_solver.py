"""Operator application, preconditioning, the eigensolver, and conditioning.

The dense oracle assembles the operator from first principles: direct
quadrature for the potential coefficients, a residue-difference circulant
for the multiplication part, and the kinetic diagonal from the projected
wave vectors.  No FFT is involved.
"""

import csv
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from quasispec.core import build_window_set, split_projection
from quasispec.errors import (
    NonPositiveDiagonal,
    NotConverged,
    NotPositiveDefinite,
    OutOfRange,
    ShapeMismatch,
)
from quasispec.solver import (
    HamiltonianOperator,
    apply_hamiltonian,
    build_preconditioner,
    estimate_condition,
    hermiticity_defect,
    lobpcg_smallest,
    symmetrized_preconditioned_apply,
)
from quasispec.transform import SpectralField, sample_parent

SILVER = (math.sqrt(5) + 1) / 2


def golden_set(K=3, L=4, mode="iwfpm"):
    proj = split_projection(2 * np.pi * np.array([[1.0, (math.sqrt(5) - 1) / 2]]))
    return build_window_set(proj, K, L, mode=mode)


def cosine_potential(v0=2.5):
    return lambda y: v0 * (2.0 - np.cos(y[:, 0]) - np.cos(y[:, 1]))


def make_operator(K=3, L=4, v0=2.5, mode="iwfpm"):
    s = golden_set(K, L, mode)
    return HamiltonianOperator(sample_parent(cosine_potential(v0), s.grid), s)


def dense_oracle(op):
    """Assemble diag(lambda) + circulant(V-hat) by direct quadrature."""
    s = op.index_set
    y = s.grid.points()
    ks = s.kstar_block(0, s.size)
    vhat = np.exp(-1j * (ks.astype(float) @ y.T)) @ op._vbox.ravel() / s.size
    diff = (ks[:, None, :] - ks[None, :, :]) % np.array(s.shape)
    lin = np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), s.shape)
    conv = vhat[lin]
    k = s.indices().astype(np.float64)
    q = k @ s.projection.matrix.T
    lam = 0.5 * np.sum(q * q, axis=1)
    return np.diag(lam) + conv


class TestApply:
    def test_zero_potential_is_kinetic_diagonal(self):
        s = golden_set()
        op = HamiltonianOperator(sample_parent(lambda y: np.zeros(len(y)), s.grid), s)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size)
        assert_allclose(op.apply(x), op.lambda_diag * x, rtol=0, atol=1e-13)

    def test_constant_potential_shifts_diagonal(self):
        s = golden_set()
        op = HamiltonianOperator(sample_parent(lambda y: np.full(len(y), 1.5), s.grid), s)
        rng = np.random.default_rng(1)
        x = rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size)
        want = (op.lambda_diag + 1.5) * x
        assert_allclose(op.apply(x), want, rtol=0, atol=1e-12 * np.abs(want).max())

    def test_dense_matches_first_principles(self):
        op = make_operator()
        H = op.dense()
        want = dense_oracle(op)
        scale = np.abs(want).max()
        assert_allclose(H, want, rtol=0, atol=1e-11 * scale)

    def test_apply_matches_oracle_matvec(self):
        op = make_operator()
        want = dense_oracle(op)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
            ref = want @ x
            assert_allclose(op.apply(x), ref, rtol=0, atol=1e-11 * np.abs(ref).max())

    def test_apply_batch_matches_apply(self):
        op = make_operator()
        rng = np.random.default_rng(3)
        X = rng.standard_normal((op.size, 3)) + 1j * rng.standard_normal((op.size, 3))
        got = op.apply_batch(X)
        for j in range(3):
            assert_allclose(got[:, j], op.apply(X[:, j]), rtol=0, atol=1e-13)
        with pytest.raises(ShapeMismatch):
            op.apply_batch(X.T)

    def test_spectral_field_wrapper(self):
        op = make_operator()
        rng = np.random.default_rng(4)
        c = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
        x = SpectralField(coeffs=c, index_set=op.index_set)
        got = apply_hamiltonian(op, x)
        assert_allclose(got.coeffs, op.apply(c), rtol=0, atol=0)
        other = SpectralField(coeffs=np.zeros(4, complex), index_set=golden_set(K=1, L=1))
        with pytest.raises(ShapeMismatch):
            apply_hamiltonian(op, other)

    def test_hermitian_flag_and_defect(self):
        op = make_operator()
        assert op.hermitian
        assert hermiticity_defect(op, np.random.default_rng(5)) <= 1e-12
        s = golden_set()
        cplx = HamiltonianOperator(
            sample_parent(lambda y: np.exp(1j * y[:, 0]), s.grid), s
        )
        assert not cplx.hermitian

    def test_potential_grid_must_match(self):
        s = golden_set()
        f = sample_parent(cosine_potential(), golden_set(K=2, L=4).grid)
        with pytest.raises(ShapeMismatch):
            HamiltonianOperator(f, s)

    def test_dense_respects_limit(self):
        op = make_operator()
        with pytest.raises(OutOfRange):
            op.dense(limit=op.size - 1)


class TestPreconditioner:
    def test_closed_form_matches_brute_force(self):
        op = make_operator()
        M = build_preconditioner(op)
        H = dense_oracle(op)
        h_diag = np.real(np.diag(H))
        colsq = np.sum(np.abs(H) ** 2, axis=0)
        assert_allclose(M.m_diag, h_diag / colsq, rtol=1e-11)

    def test_constant_potential_inverts_diagonal(self):
        s = golden_set()
        op = HamiltonianOperator(sample_parent(lambda y: np.full(len(y), 2.0), s.grid), s)
        M = build_preconditioner(op)
        assert_allclose(M.m_diag, 1.0 / (op.lambda_diag + 2.0), rtol=1e-13)

    def test_columnwise_optimality(self):
        op = make_operator()
        M = build_preconditioner(op)
        H = op.dense()
        base = np.linalg.norm(H * M.m_diag - np.eye(op.size))
        rng = np.random.default_rng(6)
        for i in rng.integers(0, op.size, size=10):
            for factor in (0.9, 1.1):
                m = M.m_diag.copy()
                m[i] *= factor
                assert np.linalg.norm(H * m - np.eye(op.size)) > base

    def test_complex_potential_rejected(self):
        s = golden_set()
        op = HamiltonianOperator(
            sample_parent(lambda y: np.exp(1j * y[:, 0]), s.grid), s
        )
        with pytest.raises(OutOfRange):
            build_preconditioner(op)

    def test_nonpositive_diagonal_rejected(self):
        s = golden_set()
        op = HamiltonianOperator(sample_parent(lambda y: np.full(len(y), -5.0), s.grid), s)
        with pytest.raises(NonPositiveDiagonal):
            build_preconditioner(op)

    def test_diagonal_must_be_positive(self):
        from quasispec.solver import DiagonalPreconditioner

        with pytest.raises(NonPositiveDiagonal):
            DiagonalPreconditioner(m_diag=np.array([1.0, 0.0]))


class TestEigensolver:
    def test_flat_band_constant_potential(self):
        s = golden_set()
        op = HamiltonianOperator(sample_parent(lambda y: np.full(len(y), 3.0), s.grid), s)
        res = lobpcg_smallest(op)
        assert res.converged
        assert abs(res.energy - 3.0) <= 1e-10
        c = np.abs(res.coefficients.coeffs)
        assert c[s.rank_of(np.zeros(2, dtype=int))] >= 1.0 - 1e-10

    def test_matches_dense_eigensolver(self):
        op = make_operator(K=4, L=16)  # 256 unknowns
        res = lobpcg_smallest(op, M=build_preconditioner(op))
        want = np.linalg.eigvalsh(op.dense())[0]
        assert res.converged
        assert abs(res.energy - want) <= 1e-8
        r = op.apply(res.coefficients.coeffs) - res.energy * res.coefficients.coeffs
        assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(res.coefficients.coeffs)

    def test_rayleigh_history_monotone(self):
        op = make_operator(K=4, L=16)
        res = lobpcg_smallest(op, M=build_preconditioner(op))
        rq = res.rayleigh_history
        assert np.all(np.diff(rq) <= 1e-10 * np.abs(rq[0]))
        assert len(res.residual_history) == len(rq)
        assert len(res.relative_residual_history) == len(rq)

    def test_spectral_shift_covariance(self):
        base = make_operator(K=3, L=8)
        s = base.index_set
        shifted = HamiltonianOperator(
            sample_parent(lambda y: cosine_potential()(y) + 3.0, s.grid), s
        )
        r0 = lobpcg_smallest(base, M=build_preconditioner(base), tol=1e-11)
        r1 = lobpcg_smallest(shifted, M=build_preconditioner(shifted), tol=1e-11)
        assert abs((r1.energy - r0.energy) - 3.0) <= 1e-9
        u0, u1 = r0.coefficients.coeffs, r1.coefficients.coeffs
        overlap = np.vdot(u0, u1)
        u1_aligned = u1 * (np.conj(overlap) / abs(overlap))
        assert np.linalg.norm(u1_aligned / np.linalg.norm(u1) - u0 / np.linalg.norm(u0)) <= 1e-8

    def test_not_converged_carries_best(self):
        op = make_operator(K=4, L=16)
        with pytest.raises(NotConverged) as exc:
            lobpcg_smallest(op, M=build_preconditioner(op), max_iter=2)
        best = exc.value.result
        assert best is not None and not best.converged
        assert np.isfinite(best.energy)
        assert best.coefficients.coeffs.shape == (op.size,)

    def test_trace_csv(self, tmp_path):
        op = make_operator(K=3, L=8)
        path = tmp_path / "trace.csv"
        res = lobpcg_smallest(op, M=build_preconditioner(op), trace_path=path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "rayleigh_quotient", "residual_norm", "relative_residual"]
        assert len(rows) == len(res.residual_history) + 1
        assert rows[1][0] == "0"
        assert float(rows[-1][2]) <= 1e-10

    def test_input_validation(self):
        op = make_operator(K=2, L=4)
        with pytest.raises(OutOfRange):
            lobpcg_smallest(op, x0=np.zeros(op.size))
        with pytest.raises(ShapeMismatch):
            lobpcg_smallest(op, x0=np.ones(op.size + 1))
        with pytest.raises(OutOfRange):
            lobpcg_smallest(op, tol=0.0)

    def test_pm_and_window_methods_agree(self):
        # Same carrier, two projections: the slanted window at K=5 and the
        # plain box at K = 0.7 L.  Ground energies must coincide far below
        # either method's discretization error.
        iw = make_operator(K=5, L=60)
        pm = make_operator(K=42, L=60, mode="pm")
        r_iw = lobpcg_smallest(iw, M=build_preconditioner(iw))
        r_pm = lobpcg_smallest(pm, M=build_preconditioner(pm))
        assert abs(r_iw.energy - r_pm.energy) <= 1e-13 * abs(r_pm.energy)


class TestConditionEstimate:
    def test_trivial_diagonal(self):
        A = np.diag(np.arange(1.0, 11.0))
        assert_allclose(estimate_condition(A, 10), 10.0, rtol=1e-12)

    def test_dense_vs_iterative(self):
        rng = np.random.default_rng(7)
        B = rng.standard_normal((512, 512)) + 1j * rng.standard_normal((512, 512))
        A = B.conj().T @ B / 512 + np.eye(512)
        dense = estimate_condition(lambda x: A @ x, 512, mode="dense")
        iterative = estimate_condition(lambda x: A @ x, 512, mode="iterative")
        assert abs(dense - iterative) <= 1e-3 * dense

    def test_rejects_indefinite(self):
        A = np.diag([-1.0, 1.0, 2.0])
        with pytest.raises(NotPositiveDefinite):
            estimate_condition(A, 3)

    def test_rejects_non_hermitian(self):
        A = np.triu(np.ones((8, 8))) + np.eye(8)
        with pytest.raises(OutOfRange):
            estimate_condition(lambda x: A @ x, 8, mode="dense")

    def test_dense_size_cap(self):
        with pytest.raises(OutOfRange):
            estimate_condition(lambda x: x, 5000, mode="dense")

    def test_bad_mode(self):
        with pytest.raises(OutOfRange):
            estimate_condition(np.eye(2), 2, mode="exact")

    def test_symmetrized_preconditioned_similarity(self):
        # cond(sqrt(M) H sqrt(M)) equals cond(M H) because the two are
        # similar; check against brute-force eigenvalues of M H.
        op = make_operator(K=3, L=8)
        M = build_preconditioner(op)
        sym = symmetrized_preconditioned_apply(op, M)
        got = estimate_condition(sym, op.size, mode="dense")
        ev = np.linalg.eigvals(np.diag(M.m_diag) @ op.dense())
        ev = np.real(ev)
        assert_allclose(got, ev.max() / ev.min(), rtol=1e-8)
