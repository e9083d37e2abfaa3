"""Index-set construction, the shift bijection, and dual grids.

The main oracle is a brute-force scan of an integer box filtered by the
window predicate, written with plain Python loops so it shares no code
with the construction under test.
"""

import csv
import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from quasispec.core import (
    DEFAULT_DOF_CAP,
    build_dual_grid,
    build_window_set,
    resolve_dof_cap,
    rho,
    rho_inverse,
    split_projection,
)
from quasispec.errors import (
    BoundaryAmbiguity,
    OutOfRange,
    OverflowRisk,
    RankDeficient,
    ShapeMismatch,
    SingularLeadingBlock,
)

GOLDEN = (math.sqrt(5) - 1) / 2
SILVER = (math.sqrt(5) + 1) / 2  # the worked-example slant


def window_scan(Q, K, L, bound):
    """All lattice points with |k_j| <= bound that satisfy the window predicate."""
    d = len(K)
    m = len(Q[0]) if d else 0
    n = d + m
    hits = []
    for k in itertools.product(range(-bound, bound + 1), repeat=n):
        k2 = k[d:]
        if any(not (-L[j] <= k2[j] < L[j]) for j in range(m)):
            continue
        w = [k[i] + sum(Q[i][j] * k2[j] for j in range(m)) for i in range(d)]
        if all(-K[i] <= w[i] < K[i] for i in range(d)):
            hits.append(k)
    return sorted(hits)


def example_set(K=2, L=6, mode="iwfpm"):
    proj = split_projection(np.array([[1.0, SILVER]]))
    return build_window_set(proj, K, L, mode=mode)


class TestSplitProjection:
    def test_golden_pair(self):
        proj = split_projection(2 * np.pi * np.array([[1.0, GOLDEN]]))
        assert proj.d == 1 and proj.n == 2
        assert_allclose(proj.Q, [[GOLDEN]], rtol=1e-15)

    def test_identity_with_zero_tail(self):
        P = np.hstack([np.eye(3), np.zeros((3, 2))])
        proj = split_projection(P)
        assert_allclose(proj.Q, np.zeros((3, 2)))

    def test_two_by_three_mixing(self):
        beta, theta = 0.8 * np.pi, 0.2 * np.pi
        P = beta * np.array(
            [[1.0, 0.0, np.cos(theta)], [0.0, 1.0, np.sin(theta)]]
        )
        proj = split_projection(P)
        assert_allclose(proj.Q, [[np.cos(theta)], [np.sin(theta)]], rtol=1e-14)

    def test_reconstruction_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            d = int(rng.integers(1, 4))
            n = d + int(rng.integers(0, 4))
            P = rng.standard_normal((d, n))
            if abs(np.linalg.det(P[:, :d])) < 1e-3:
                continue
            proj = split_projection(P)
            recon = proj.leading @ np.hstack([np.eye(d), proj.Q])
            assert np.linalg.norm(recon - P) <= 1e-12 * np.linalg.norm(P)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficient):
            split_projection([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]])

    def test_singular_leading_block(self):
        # Full row rank, but the rank lives in the trailing column.
        with pytest.raises(SingularLeadingBlock):
            split_projection([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])

    def test_wrong_shape(self):
        with pytest.raises(ShapeMismatch):
            split_projection([[1.0], [2.0], [3.0]])


class TestWindowSet:
    def test_counts_48(self):
        s = example_set()
        assert s.size == 48
        assert len(s.indices()) == 48
        assert s.shape == (4, 12)

    def test_zero_slice_reduces_to_plain_window(self):
        s = example_set()
        k = s.indices()
        slice0 = sorted(int(v) for v in k[k[:, 1] == 0][:, 0])
        assert slice0 == [-2, -1, 0, 1]

    def test_matches_box_scan(self):
        s = example_set(K=2, L=2)
        got = sorted(map(tuple, s.indices().tolist()))
        want = window_scan([[SILVER]], [2], [2], bound=20)
        assert got == want

    def test_box_scan_random_slants(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            q = float(rng.uniform(-2.5, 2.5))
            proj = split_projection(np.array([[1.0, q]]))
            s = build_window_set(proj, 3, 4)
            got = sorted(map(tuple, s.indices().tolist()))
            want = window_scan([[q]], [3], [4], bound=3 + int(abs(q) * 4) + 2)
            assert got == want

    def test_box_scan_2d(self):
        theta = 0.2 * np.pi
        P = np.array([[1.0, 0.0, np.cos(theta)], [0.0, 1.0, np.sin(theta)]])
        s = build_window_set(split_projection(P), 2, 3)
        got = sorted(map(tuple, s.indices().tolist()))
        Q = [[np.cos(theta)], [np.sin(theta)]]
        want = window_scan(Q, [2, 2], [3], bound=6)
        assert got == want

    def test_vector_halfwidths(self):
        theta = 0.2 * np.pi
        P = np.array([[1.0, 0.0, np.cos(theta)], [0.0, 1.0, np.sin(theta)]])
        s = build_window_set(split_projection(P), [2, 3], [4])
        assert s.shape == (4, 6, 8)
        assert s.size == 4 * 6 * 8
        Q = [[np.cos(theta)], [np.sin(theta)]]
        got = sorted(map(tuple, s.indices().tolist()))
        want = window_scan(Q, [2, 3], [4], bound=8)
        assert got == want

    def test_membership_predicate_holds(self):
        s = example_set()
        k = s.indices()
        w = s.window_coords(k)
        assert np.all((w >= -2) & (w < 2))
        assert np.all((k[:, 1] >= -6) & (k[:, 1] < 6))

    def test_pm_mode_is_rectangle(self):
        proj = split_projection(np.array([[1.0, SILVER]]))
        s = build_window_set(proj, 3, 3, mode="pm")
        got = sorted(map(tuple, s.indices().tolist()))
        want = sorted(itertools.product(range(-3, 3), repeat=2))
        assert got == want

    def test_contains_and_rank(self):
        s = example_set()
        k = s.indices()
        assert bool(np.all(s.contains(k)))
        for r in [0, 7, 23, 47]:
            assert s.rank_of(k[r]) == r
        assert not s.contains(np.array([2, 0]))  # w = 2 is outside [-2, 2)
        with pytest.raises(OutOfRange):
            s.rank_of(np.array([2, 0]))

    def test_bad_mode(self):
        proj = split_projection(np.array([[1.0, SILVER]]))
        with pytest.raises(OutOfRange):
            build_window_set(proj, 2, 2, mode="spectral")

    def test_csv_round_trip(self, tmp_path):
        s = example_set(K=2, L=2)
        path = tmp_path / "set.csv"
        s.to_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["k_1", "k_2", "kstar_1", "kstar_2", "rank"]
        assert len(rows) == s.size + 1
        k = s.indices()
        ks = s.kstar_block(0, s.size)
        for i in (1, 5, len(rows) - 1):
            r = int(rows[i][4])
            assert [int(v) for v in rows[i][:2]] == list(k[r])
            assert [int(v) for v in rows[i][2:4]] == list(ks[r])


class TestShiftBijection:
    def test_rho_zero(self):
        assert_array_equal(rho(np.zeros(2, dtype=int), 2, 6, 1), [0, 0])

    def test_rho_worked_examples(self):
        assert_array_equal(rho(np.array([-10, 5]), 2, 6, 1), [2, 5])
        assert_array_equal(rho(np.array([3, -1]), 2, 6, 1), [3, 11])

    def test_rho_inverse_worked_examples(self):
        Q = np.array([[SILVER]])
        assert_array_equal(rho_inverse(np.array([2, 5]), Q, 2, 6), [-10, 5])
        assert_array_equal(rho_inverse(np.array([3, 11]), Q, 2, 6), [3, -1])
        assert_array_equal(rho_inverse(np.zeros(2, dtype=int), Q, 2, 6), [0, 0])

    def test_rho_inverse_rejects_outside_box(self):
        Q = np.array([[SILVER]])
        with pytest.raises(OutOfRange):
            rho_inverse(np.array([4, 0]), Q, 2, 6)
        with pytest.raises(OutOfRange):
            rho_inverse(np.array([0, -1]), Q, 2, 6)

    @pytest.mark.parametrize("mode", ["iwfpm", "pm"])
    def test_round_trips_exhaustive(self, mode):
        s = example_set(mode=mode)
        k = s.indices()
        kstar = s.rho(k)
        # image is exactly the box, each residue hit once
        assert len({tuple(row) for row in kstar.tolist()}) == s.size
        assert np.all(kstar >= 0)
        assert np.all(kstar < np.array(s.shape))
        back = s.rho_inverse(kstar)
        assert_array_equal(back, k)

    def test_layout_matches_rank(self):
        s = example_set()
        ks = s.kstar_block(0, s.size)
        expect = np.stack(
            np.unravel_index(np.arange(s.size), s.shape), axis=1
        )
        assert_array_equal(ks, expect)
        assert_array_equal(s.rho(s.indices()), expect)

    def test_distinct_indices_never_congruent(self):
        s = example_set(K=2, L=3)
        k = s.indices()
        diffs = k[:, None, :] - k[None, :, :]
        cong = (diffs[..., 0] % 4 == 0) & (diffs[..., 1] % 6 == 0)
        assert np.sum(cong) == s.size  # only the diagonal

    def test_basis_equivalence_on_grid(self):
        s = example_set()
        y = s.grid.points()
        k = s.indices().astype(float)
        ks = s.kstar_block(0, s.size).astype(float)
        lhs = np.exp(1j * (y @ k.T))
        rhs = np.exp(1j * (y @ ks.T))
        assert np.max(np.abs(lhs - rhs)) <= 1e-10


class TestDualGrid:
    def test_example_grid(self):
        g = build_dual_grid(2, 6, 2, 1)
        assert g.size == 48
        pts = g.points()
        assert_allclose(pts[0], [0.0, 0.0])
        lead = pts[:, 0].reshape(4, 12)
        for col in range(12):
            assert_allclose(lead[:, col], [0, np.pi / 2, np.pi, 3 * np.pi / 2])

    def test_tiny_grid(self):
        g = build_dual_grid(1, 1, 2, 1)
        got = sorted(map(tuple, g.points().tolist()))
        want = sorted(itertools.product([0.0, np.pi], repeat=2))
        assert_allclose(got, want)

    def test_grid_matches_window_shape(self):
        s = example_set()
        assert s.grid.shape == s.shape


class TestDofCap:
    def test_overflow_risk(self):
        proj = split_projection(np.array([[1.0, SILVER]]))
        with pytest.raises(OverflowRisk):
            build_window_set(proj, 2, 6, dof_cap=47)
        s = build_window_set(proj, 2, 6, dof_cap=48)
        assert s.size == 48

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("QUASISPEC_DOF_CAP", "10")
        proj = split_projection(np.array([[1.0, SILVER]]))
        with pytest.raises(OverflowRisk):
            build_window_set(proj, 2, 6)
        monkeypatch.delenv("QUASISPEC_DOF_CAP")
        assert resolve_dof_cap() == DEFAULT_DOF_CAP
        assert resolve_dof_cap(100) == 100

    def test_cap_must_be_positive(self):
        with pytest.raises(OutOfRange):
            resolve_dof_cap(0)


class TestBoundaryAmbiguity:
    def test_near_tie_warns(self):
        q = 1.0 - 1e-13
        proj = split_projection(np.array([[1.0, q]]))
        with pytest.warns(BoundaryAmbiguity):
            build_window_set(proj, 2, 2).indices()

    def test_integer_boundaries_silent(self):
        import warnings

        proj = split_projection(np.array([[1.0, SILVER]]))
        s = build_window_set(proj, 2, 6, mode="pm")
        with warnings.catch_warnings():
            warnings.simplefilter("error", BoundaryAmbiguity)
            s.indices()
            s.contains(np.array([1, 1]))
