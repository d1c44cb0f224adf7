import numpy as np
import pytest
import scipy.sparse as sp

from nbpss.design import (
    bspline_design,
    decompose_effect,
    difference_penalty,
    equidistant_knots,
    make_bspline_block,
    make_constraint,
    make_gmrf_block,
    make_linear_block,
    penalized_eigenbasis,
)


class TestBsplineBasis:
    def test_default_dimension_is_22(self):
        rng = np.random.default_rng(1)
        blk = make_bspline_block(rng.uniform(-2, 2, 200), "f")
        assert blk.dim == 22

    @pytest.mark.parametrize("interior,degree", [(2, 1), (5, 2), (10, 3), (20, 3), (7, 4)])
    def test_dimension_formula(self, interior, degree):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 1, 100)
        blk = make_bspline_block(x, "f", interior=interior, degree=degree, rw_order=1)
        assert blk.dim == interior + degree - 1

    def test_partition_of_unity_including_endpoints(self):
        rng = np.random.default_rng(3)
        x = np.concatenate([[-2.0, 2.0], rng.uniform(-2, 2, 1000)])
        blk = make_bspline_block(x, "f")
        row_sums = np.asarray(blk.basis).sum(axis=1)
        assert np.max(np.abs(row_sums - 1.0)) < 1e-12

    def test_local_support(self):
        rng = np.random.default_rng(4)
        blk = make_bspline_block(rng.uniform(0, 10, 300), "f", degree=3)
        nnz_per_row = (np.abs(np.asarray(blk.basis)) > 0).sum(axis=1)
        assert nnz_per_row.max() <= 4

    def test_knot_spacing_and_extension(self):
        x = np.linspace(0.0, 1.0, 50)
        kn = equidistant_knots(x, interior=11, degree=3)
        steps = np.diff(kn.sequence)
        assert np.allclose(steps, steps[0])
        assert len(kn.sequence) == 11 + 2 * 3
        assert kn.lo == 0.0 and kn.hi == 1.0

    def test_grid_reevaluation_matches_training_basis(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-1, 3, 80)
        blk = make_bspline_block(x, "f")
        np.testing.assert_allclose(blk.basis_at(x), np.asarray(blk.basis), atol=1e-14)

    def test_rejects_out_of_range_and_degenerate_input(self):
        x = np.linspace(0, 1, 30)
        blk = make_bspline_block(x, "f", interior=5)
        with pytest.raises(ValueError):
            bspline_design(np.array([1.5]), blk.knots)
        with pytest.raises(ValueError):
            make_bspline_block(np.ones(30), "f")
        with pytest.raises(ValueError):
            make_bspline_block(x, "f", interior=1)


class TestDifferencePenalty:
    def test_small_case_rw1(self):
        expected = np.array(
            [
                [1, -1, 0, 0],
                [-1, 2, -1, 0],
                [0, -1, 2, -1],
                [0, 0, -1, 1],
            ],
            dtype=float,
        )
        pen = difference_penalty(4, 1)
        np.testing.assert_allclose(pen.matrix.toarray(), expected)
        assert pen.rank == 3

    def test_rank_and_kernel(self):
        for dim, order in [(8, 1), (8, 2), (22, 2)]:
            pen = difference_penalty(dim, order)
            k = pen.matrix.toarray()
            vals = np.linalg.eigvalsh(k)
            assert np.sum(vals > 1e-10 * vals[-1]) == dim - order
            assert pen.rank == dim - order
            # kernel contains polynomials of degree < order
            for p in range(order):
                v = np.arange(dim, dtype=float) ** p
                assert np.max(np.abs(k @ v)) < 1e-9

    def test_quad_form_matches_sum_of_squared_differences(self):
        rng = np.random.default_rng(6)
        beta = rng.normal(size=10)
        pen = difference_penalty(10, 2)
        direct = float(np.sum(np.diff(beta, 2) ** 2))
        assert pen.quad_form(beta) == pytest.approx(direct, rel=1e-12)


class TestGmrfBlock:
    def path_graph(self, r):
        adj = np.zeros((r, r))
        for i in range(r - 1):
            adj[i, i + 1] = adj[i + 1, i] = 1
        return adj

    def test_path_graph_laplacian(self):
        adj = self.path_graph(4)
        idx = np.array([0, 1, 2, 3, 0, 2])
        blk = make_gmrf_block(idx, adj, "s")
        expected = np.array(
            [
                [1, -1, 0, 0],
                [-1, 2, -1, 0],
                [0, -1, 2, -1],
                [0, 0, -1, 1],
            ],
            dtype=float,
        )
        np.testing.assert_allclose(blk.penalty.matrix.toarray(), expected)
        assert blk.penalty.rank == 3
        b = blk.basis.toarray()
        np.testing.assert_allclose(b.sum(axis=1), 1.0)
        np.testing.assert_allclose(b[4], [1, 0, 0, 0])

    def test_disconnected_graph_rank(self):
        # two components: rank = R - 2, verified against an eigenvalue count
        adj = np.zeros((5, 5))
        adj[0, 1] = adj[1, 0] = 1
        adj[2, 3] = adj[3, 2] = adj[3, 4] = adj[4, 3] = 1
        blk = make_gmrf_block(np.arange(5), adj, "s")
        vals = np.linalg.eigvalsh(blk.penalty.matrix.toarray())
        assert int(np.sum(vals > 1e-10)) == 3
        assert blk.penalty.rank == 3

    def test_input_validation(self):
        adj = self.path_graph(3)
        with pytest.raises(ValueError):
            make_gmrf_block(np.array([0, 3]), adj, "s")
        bad = adj.copy()
        bad[0, 2] = 1.0
        with pytest.raises(ValueError):
            make_gmrf_block(np.array([0, 1]), bad, "s")
        bad2 = adj.copy()
        bad2[0, 0] = 1.0
        with pytest.raises(ValueError):
            make_gmrf_block(np.array([0, 1]), bad2, "s")


class TestConstraint:
    def test_rw2_kernel_rows_span_constant_and_trend(self):
        pen = difference_penalty(22, 2)
        con = make_constraint(pen)
        a = con.rows
        assert a.shape == (2, 22)
        np.testing.assert_allclose(a @ a.T, np.eye(2), atol=1e-12)
        # projector onto ker(K) equals the QR-based projector of [1, t]
        q, _ = np.linalg.qr(np.column_stack([np.ones(22), np.arange(22.0)]))
        np.testing.assert_allclose(a.T @ a, q @ q.T, atol=1e-9)

    def test_kernel_rows_annihilated_by_penalty(self):
        for pen in [difference_penalty(10, 1), difference_penalty(15, 2)]:
            con = make_constraint(pen)
            assert np.max(np.abs(con.rows @ pen.matrix.toarray())) < 1e-9

    def test_gmrf_connected_constraint_is_normalized_ones(self):
        adj = np.ones((4, 4)) - np.eye(4)
        blk = make_gmrf_block(np.array([0, 1, 2, 3]), adj, "s")
        con = make_constraint(blk.penalty)
        assert con.rows.shape == (1, 4)
        np.testing.assert_allclose(np.abs(con.rows), 0.5, atol=1e-12)

    def test_centering_row_skipped_when_in_span(self):
        # balanced region counts: column sums proportional to the kernel row
        adj = np.ones((3, 3)) - np.eye(3)
        idx = np.array([0, 1, 2, 0, 1, 2])
        blk = make_gmrf_block(idx, adj, "s")
        con = make_constraint(blk.penalty, basis=blk.basis, center=True)
        assert con.n_rows == 1

    def test_centering_row_appended_when_new(self):
        adj = np.ones((3, 3)) - np.eye(3)
        idx = np.array([0, 0, 0, 0, 1, 2])
        blk = make_gmrf_block(idx, adj, "s")
        con = make_constraint(blk.penalty, basis=blk.basis, center=True)
        assert con.n_rows == 2
        np.testing.assert_allclose(con.rows @ con.rows.T, np.eye(2), atol=1e-12)
        # appended functional keeps the observed-sum direction in row span
        c = np.asarray(blk.basis.sum(axis=0), dtype=float).ravel()
        resid = c - con.rows.T @ (con.rows @ c)
        assert np.linalg.norm(resid) < 1e-9 * np.linalg.norm(c)

    def test_violation_metric(self):
        pen = difference_penalty(6, 1)
        con = make_constraint(pen)
        beta = np.ones(6)
        assert con.violation(beta) == pytest.approx(np.sqrt(6), rel=1e-12)
        ortho = beta - con.rows.T @ (con.rows @ beta)
        assert con.violation(ortho) < 1e-12


class TestDecomposeEffect:
    def test_rw1_has_no_linear_part(self):
        rng = np.random.default_rng(7)
        blk = make_bspline_block(rng.uniform(-2, 2, 100), "f", rw_order=1)
        dec = decompose_effect(blk)
        assert dec.linear is None
        assert dec.nonlinear.constraint.n_rows == 1

    def test_rw2_parts(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-2, 2, 150)
        blk = make_bspline_block(x, "f", rw_order=2)
        dec = decompose_effect(blk)
        assert dec.linear.dim == 1
        assert abs(np.mean(dec.linear.basis)) < 1e-12
        assert dec.nonlinear.dim == 22
        assert dec.nonlinear.constraint.n_rows == 2

    def test_column_space_preserved_up_to_constant(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, 60)
        blk = make_bspline_block(x, "f", interior=8, rw_order=2)
        dec = decompose_effect(blk)
        a = dec.nonlinear.constraint.rows
        # basis of the constrained coefficient space
        z = np.linalg.svd(a)[2][a.shape[0]:].T
        ones = np.ones((len(x), 1))
        m_orig = np.column_stack([ones, np.asarray(blk.basis)])
        m_dec = np.column_stack([ones, dec.linear.basis, np.asarray(blk.basis) @ z])
        r_orig = np.linalg.matrix_rank(m_orig, tol=1e-8)
        assert np.linalg.matrix_rank(m_dec, tol=1e-8) == r_orig
        assert np.linalg.matrix_rank(np.column_stack([m_orig, m_dec]), tol=1e-8) == r_orig

    def test_linear_part_grid_reevaluation_uses_training_center(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(-3, 5, 90)
        dec = decompose_effect(make_bspline_block(x, "f"))
        np.testing.assert_allclose(dec.linear.basis_at(x), dec.linear.basis, atol=1e-12)
        grid = np.linspace(-3, 5, 7)
        np.testing.assert_allclose(
            dec.linear.basis_at(grid).ravel(), grid - np.mean(x), atol=1e-12
        )

    def test_only_splines_decompose(self):
        blk = make_linear_block(np.arange(5.0), "x")
        with pytest.raises(ValueError):
            decompose_effect(blk)


class TestLinearBlock:
    def test_shapes_and_identity_penalty(self):
        x = np.arange(10.0)
        blk = make_linear_block(x, "x")
        assert blk.basis.shape == (10, 1)
        assert blk.penalty.rank == 1
        np.testing.assert_allclose(blk.penalty.matrix.toarray(), np.eye(1))
        assert blk.constraint.is_empty

    def test_matrix_input(self):
        rng = np.random.default_rng(11)
        xm = rng.normal(size=(20, 3))
        blk = make_linear_block(xm, "x")
        assert blk.dim == 3
        assert blk.penalty.rank == 3


def test_penalized_eigenbasis_splits_spectrum():
    pen = difference_penalty(12, 2)
    null_vecs, pos_vals, pos_vecs = penalized_eigenbasis(pen)
    assert null_vecs.shape == (12, 2)
    assert pos_vals.shape == (10,)
    assert np.all(pos_vals > 0)
    k = pen.matrix.toarray()
    recon = pos_vecs @ np.diag(pos_vals) @ pos_vecs.T
    np.testing.assert_allclose(recon, k, atol=1e-9)
    assert np.max(np.abs(k @ null_vecs)) < 1e-9


def test_sparse_basis_kinds():
    adj = np.ones((3, 3)) - np.eye(3)
    blk = make_gmrf_block(np.array([0, 1, 2]), adj, "s")
    assert sp.issparse(blk.basis)
