import numpy as np
import pytest

from ldmrec import conditioning as C
from ldmrec.data import InteractionMatrix
from ldmrec.errors import ConfigError


def to_matrix(dense):
    rows = [np.flatnonzero(dense[u]).astype(np.int64) for u in range(dense.shape[0])]
    return InteractionMatrix(dense.shape[0], dense.shape[1], rows)


def random_binary(shape, p, seed):
    rng = np.random.default_rng(seed)
    return (rng.random(shape) < p).astype(float)


class TestJacobiSVD:
    def test_matches_lapack_on_random(self):
        rng = np.random.default_rng(99)
        a = rng.normal(size=(30, 12))
        u, s, v = C.jacobi_svd(a)
        s_ref = np.linalg.svd(a, compute_uv=False)
        assert np.max(np.abs(s - s_ref) / s_ref) < 1e-10
        assert np.abs(u @ np.diag(s) @ v.T - a).max() < 1e-10

    def test_wide_input(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5, 9))
        u, s, v = C.jacobi_svd(a)
        assert np.abs(u @ np.diag(s) @ v.T - a).max() < 1e-10


class TestRandomizedSVD:
    def test_identity_matrix_all_ones(self):
        r = to_matrix(np.eye(6))
        _, s, _ = C.randomized_svd(r, 6, seed=1)
        assert np.allclose(s, np.ones(6), atol=1e-10)

    def test_rank_one_block(self):
        dense = np.zeros((8, 10))
        dense[:4, :5] = 1.0  # indicator outer product
        r = to_matrix(dense)
        u, s, v = C.randomized_svd(r, 3, seed=2)
        assert s[0] == pytest.approx(np.sqrt(4 * 5), rel=1e-10)
        assert np.all(s[1:] < 1e-8)

    def test_top10_matches_dense_oracle(self):
        dense = random_binary((40, 30), 0.3, seed=5)
        _, s, _ = C.randomized_svd(to_matrix(dense), 10, oversample=10, power_iters=2, seed=6)
        s_ref = np.linalg.svd(dense, compute_uv=False)[:10]
        assert np.max(np.abs(s - s_ref) / s_ref) < 0.01

    def test_orthonormal_factors(self):
        dense = random_binary((25, 20), 0.4, seed=8)
        u, _, v = C.randomized_svd(to_matrix(dense), 8, seed=9)
        assert np.abs(u.T @ u - np.eye(8)).max() < 1e-8
        assert np.abs(v.T @ v - np.eye(8)).max() < 1e-8

    def test_reconstruction_close_to_exact_truncation(self):
        dense = random_binary((50, 40), 0.3, seed=10)
        u, s, v = C.randomized_svd(to_matrix(dense), 10, seed=11)
        err = np.linalg.norm(dense - u @ np.diag(s) @ v.T)
        ue, se, vte = np.linalg.svd(dense, full_matrices=False)
        err_exact = np.linalg.norm(dense - ue[:, :10] @ np.diag(se[:10]) @ vte[:10])
        assert err <= 1.05 * err_exact

    def test_rank_too_large(self):
        r = to_matrix(np.eye(4))
        with pytest.raises(ConfigError):
            C.randomized_svd(r, 5)


class TestCollaborativeEncode:
    def test_isolated_pair_propagates_item_factor_exactly(self):
        dense = np.zeros((3, 3))
        dense[0, 0] = 1.0  # user 0 and item 0 both degree 1
        dense[1, 1] = dense[1, 2] = dense[2, 1] = dense[2, 2] = 1.0
        r = to_matrix(dense)
        rng = np.random.default_rng(0)
        u_f = rng.normal(size=(3, 2))
        i_f = rng.normal(size=(3, 2))
        c = C.collaborative_encode(r, u_f, i_f)
        assert np.allclose(c[0, 2:], i_f[0], atol=1e-12)

    def test_zero_degree_user_gets_zero_propagated_half(self):
        dense = np.zeros((2, 2))
        dense[0, 0] = 1.0
        r = to_matrix(dense)
        u_f = np.ones((2, 2))
        i_f = np.ones((2, 2))
        c = C.collaborative_encode(r, u_f, i_f)
        assert np.array_equal(c[1, 2:], np.zeros(2))
        assert np.array_equal(c[1, :2], np.ones(2))  # own factor kept

    def test_matches_dense_loop_oracle(self):
        dense = random_binary((20, 15), 0.3, seed=12)
        r = to_matrix(dense)
        rng = np.random.default_rng(13)
        u_f = rng.normal(size=(20, 4))
        i_f = rng.normal(size=(15, 4))
        c = C.collaborative_encode(r, u_f, i_f)

        du = dense.sum(axis=1)
        di = dense.sum(axis=0)
        propagated = np.zeros((20, 4))
        for u in range(20):
            for i in range(15):
                if dense[u, i] and du[u] > 0 and di[i] > 0:
                    propagated[u] += i_f[i] / np.sqrt(du[u] * di[i])
        assert np.abs(c[:, 4:] - propagated).max() < 1e-10
        assert np.abs(c[:, :4] - u_f).max() == 0.0

    def test_width_is_twice_rank(self):
        dense = random_binary((10, 8), 0.4, seed=14)
        r = to_matrix(dense)
        u, s, v = C.randomized_svd(r, 3, seed=15)
        c = C.collaborative_encode(r, u, v)
        assert c.shape == (10, 6)
        assert np.all(np.isfinite(c))


class TestModalityEncode:
    def test_single_pair_returns_feature(self):
        dense = np.zeros((1, 1))
        dense[0, 0] = 1.0
        f = np.array([[2.0, -3.0, 0.5]])
        out = C.modality_encode(to_matrix(dense), f)
        assert np.allclose(out[0], f[0], atol=1e-12)

    def test_symmetric_degrees_scale(self):
        # one user clicks 4 items, each clicked only by that user, same feature f
        dense = np.ones((1, 4))
        f = np.tile([1.0, 2.0], (4, 1))
        out = C.modality_encode(to_matrix(dense), f)
        assert np.allclose(out[0], 2.0 * f[0], atol=1e-12)

    def test_matches_double_loop_oracle(self):
        dense = random_binary((30, 20), 0.25, seed=16)
        r = to_matrix(dense)
        f = np.random.default_rng(17).normal(size=(20, 5))
        got = C.modality_encode(r, f)

        du = dense.sum(axis=1)
        di = dense.sum(axis=0)
        want = np.zeros((30, 5))
        for u in range(30):
            for i in range(20):
                if dense[u, i]:
                    want[u] += f[i] / np.sqrt(du[u] * di[i])
        assert np.abs(got - want).max() < 1e-10

    def test_zero_interaction_user_zero_row(self):
        dense = np.zeros((2, 3))
        dense[0, 1] = 1.0
        out = C.modality_encode(to_matrix(dense), np.ones((3, 4)))
        assert np.array_equal(out[1], np.zeros(4))

    def test_linear_in_features(self):
        dense = random_binary((15, 12), 0.3, seed=18)
        r = to_matrix(dense)
        rng = np.random.default_rng(19)
        a = rng.normal(size=(12, 3))
        b = rng.normal(size=(12, 3))
        lhs = C.modality_encode(r, a + b)
        rhs = C.modality_encode(r, a) + C.modality_encode(r, b)
        assert np.abs(lhs - rhs).max() < 1e-10

    def test_misaligned_features_rejected(self):
        dense = random_binary((5, 4), 0.5, seed=20)
        with pytest.raises(ConfigError):
            C.modality_encode(to_matrix(dense), np.ones((3, 2)))


class TestSignals:
    def test_build_and_round_trip(self, tmp_path):
        dense = random_binary((12, 10), 0.4, seed=21)
        r = to_matrix(dense)
        rng = np.random.default_rng(22)
        vis = rng.normal(size=(10, 4))
        txt = rng.normal(size=(10, 6))
        sig = C.build_signals(r, vis, txt, d_svd=3, seed=23)
        assert sig.collaborative.shape == (12, 6)
        assert sig.visual.shape == (12, 4)
        assert sig.textual.shape == (12, 6)
        C.save_signals(tmp_path, sig)
        back = C.load_signals(tmp_path)
        # FMX1 cache is float32
        assert np.allclose(back.collaborative, sig.collaborative, atol=1e-5)
        assert np.allclose(back.visual, sig.visual, atol=1e-5)

    def test_duplicate_matrix_regression(self):
        # binary matrix: re-encoding the same R must give the same C
        dense = random_binary((10, 8), 0.4, seed=24)
        r = to_matrix(dense)
        rng = np.random.default_rng(25)
        u_f = rng.normal(size=(10, 3))
        i_f = rng.normal(size=(8, 3))
        assert np.array_equal(
            C.collaborative_encode(r, u_f, i_f), C.collaborative_encode(r, u_f, i_f)
        )
