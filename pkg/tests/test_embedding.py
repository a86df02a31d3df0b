import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resembed.embedding import (EmbedParams, backward_embedding, partition_matrix,
                                prototype_resolve, read_embeddings, resolve, write_embeddings)
from resembed.graph import fuse_avg
from resembed.theory import envelope_radius


class TestResolve:
    def test_hand_product(self):
        params = EmbedParams(np.array([[1.0], [2.0]]), np.array([[0.1], [-0.1]]))
        E = resolve(np.array([[0, 1], [1, 0]]), params)
        np.testing.assert_allclose(E, [[2.1], [0.9]])

    def test_zero_fusion_gives_residual(self, rng):
        params = EmbedParams.init(5, 3, rng=rng)
        np.testing.assert_array_equal(resolve(sp.csr_matrix((5, 5)), params), params.R)
        np.testing.assert_array_equal(resolve(None, params), params.R)

    def test_island_average(self, rng):
        C = rng.normal(size=(3, 4))
        E = resolve(fuse_avg(sp.csr_matrix(np.ones((3, 3)) - np.eye(3))), EmbedParams(C, np.zeros((3, 4))))
        for i in range(3):
            np.testing.assert_allclose(E[i], np.delete(C, i, axis=0).mean(axis=0))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            resolve(np.eye(3), EmbedParams(np.zeros((2, 2)), np.zeros((2, 2))))
        with pytest.raises(ValueError):
            EmbedParams(np.zeros((2, 2)), np.full((2, 2), np.nan))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(-3, 3)),
           arrays(np.float64, (4, 2), elements=st.floats(-3, 3)),
           arrays(np.float64, (4, 2), elements=st.floats(-3, 3)),
           st.floats(-2, 2))
    def test_linear_in_basis(self, W, C1, C2, a):
        R = np.zeros((4, 2))
        lhs = resolve(W, EmbedParams(C1 + a * C2, R))
        rhs = resolve(W, EmbedParams(C1, R)) + a * resolve(W, EmbedParams(C2, R))
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestPrototype:
    def test_shared_domain_rows(self):
        E = prototype_resolve([0, 0], np.array([[1.0, 0.0]]), np.zeros((2, 2)))
        np.testing.assert_array_equal(E, [[1, 0], [1, 0]])

    def test_partition_matrix(self):
        np.testing.assert_array_equal(partition_matrix([0, 0, 1, 1]).toarray(),
                                      [[1, 0], [1, 0], [0, 1], [0, 1]])
        with pytest.raises(ValueError):
            partition_matrix([0, 3], 2)

    def test_zero_residual_collapses_domains(self, rng):
        assign = rng.integers(0, 4, size=40)
        E = prototype_resolve(assign, rng.normal(size=(4, 3)), np.zeros((40, 3)))
        for k in np.unique(assign):
            assert envelope_radius(E[assign == k]) < 1e-12

    def test_radius_bounded_by_residual_norm(self, rng):
        for _ in range(50):
            assign = rng.integers(0, 3, size=30)
            R = rng.normal(size=(30, 5))
            rho = rng.uniform(0.1, 2.0)
            R *= rho / np.linalg.norm(R, axis=1, keepdims=True).max()
            C = rng.normal(size=(3, 5)) * 10
            E = prototype_resolve(assign, C, R)
            for k in np.unique(assign):
                pts = E[assign == k]
                # the prototype is a witness point for phi <= rho
                assert np.linalg.norm(pts - C[k], axis=1).max() <= rho + 1e-12
                # the centroid witness is within a factor 2 of phi
                assert envelope_radius(pts) <= 2 * rho + 1e-12


class TestBackwardEmbedding:
    def test_zero_fusion(self, rng):
        params = EmbedParams.init(3, 2, rng=rng)
        G = rng.normal(size=(3, 2))
        gC, gR = backward_embedding(G, sp.csr_matrix((3, 3)), params, 0.0)
        np.testing.assert_array_equal(gC, 0)
        np.testing.assert_array_equal(gR, G)

    def test_pure_regularizer(self):
        params = EmbedParams(np.zeros((1, 1)), np.array([[1.0]]))
        _, gR = backward_embedding(np.zeros((1, 1)), np.eye(1), params, 0.006)
        np.testing.assert_allclose(gR, [[0.012]])

    def test_finite_differences(self, rng):
        H, d, lam, h = 6, 3, 0.006, 1e-5
        W = sp.csr_matrix(rng.random((H, H)) * (rng.random((H, H)) < 0.5))
        params = EmbedParams.init(H, d, rng=rng, scale=1.0)
        A = rng.normal(size=(H, d))

        def f():
            E = resolve(W, params)
            return float(np.sum(A * E ** 2) + lam * np.sum(params.R ** 2))

        gC, gR = backward_embedding(2 * A * resolve(W, params), W, params, lam)
        for arr, grad in ((params.C_b, gC), (params.R, gR)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp = f()
                arr[idx] = old - h
                fm = f()
                arr[idx] = old
                num = (fp - fm) / (2 * h)
                assert abs(num - grad[idx]) <= 1e-4 * max(abs(num), abs(grad[idx]), 1e-6)


def test_embedding_csv_round_trip(tmp_path, rng):
    E = rng.normal(size=(4, 3))
    write_embeddings(tmp_path / "e.csv", E)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "item_id,e_0,e_1,e_2"
    np.testing.assert_array_equal(read_embeddings(tmp_path / "e.csv"), E)
