"""Tests for sampling, SVD conventions, and Monte Carlo estimators."""

import numpy as np
import pytest

from overlapkit import (
    Dims,
    MatrixSpec,
    MPSpec,
    correlation_identity_test,
    mc_kernel_overlaps,
    mc_rescaled_overlaps,
    mp_overlap_triple,
    overlap_matrices,
    quantile,
    sample_ensemble,
    svd_full,
    svd_truncated,
)
from overlapkit.ensemble import _canonical_signs, normal_matrix, resolve_threads
from overlapkit.errors import DegenerateSampleError, ParameterError

DIMS = Dims(M=40, N=30, m=20, n=15)


class TestDims:
    def test_invariants(self):
        with pytest.raises(ParameterError):
            Dims(M=10, N=11, m=5, n=5)
        with pytest.raises(ParameterError):
            Dims(M=10, N=8, m=4, n=5)

    def test_from_ratios(self):
        d = Dims.from_ratios(300, 0.9, 0.4, 0.8)
        assert (d.M, d.N, d.m, d.n) == (300, 270, 240, 108)
        r = d.ratios(3.0)
        assert (r.q, r.alpha, r.beta) == (0.9, 0.4, 0.8)


class TestSampling:
    def test_time_zero_exact(self):
        spec = MatrixSpec(dims=DIMS, kind="diagonal", diagonal=np.arange(1.0, 11.0))
        x, xt = sample_ensemble(spec, 0.0, seed=1)
        np.testing.assert_array_equal(x, spec.materialize())
        np.testing.assert_array_equal(xt[:20, :15], x[:20, :15])

    def test_truncation_sparsity(self):
        _, xt = sample_ensemble(MatrixSpec(dims=DIMS), 2.0, seed=1)
        assert not np.any(xt[20:, :])
        assert not np.any(xt[:, 15:])

    def test_entrywise_variance(self):
        # sample-variance oracle over 1e4 draws
        dims = Dims(M=6, N=5, m=4, n=3)
        spec = MatrixSpec(dims=dims)
        t = 2.0
        draws = np.stack([
            sample_ensemble(spec, t, seed=123, trial=k)[0] for k in range(10_000)
        ])
        variance = draws.var()
        assert variance == pytest.approx(t / dims.N, rel=0.05)

    def test_normals_are_standard(self):
        z = normal_matrix((200, 100), seed=5)
        assert z.mean() == pytest.approx(0.0, abs=0.03)
        assert z.var() == pytest.approx(1.0, rel=0.03)

    def test_trial_substreams_differ(self):
        a = normal_matrix((4, 4), seed=5, trial=0)
        b = normal_matrix((4, 4), seed=5, trial=1)
        assert not np.allclose(a, b)


class TestSvdConventions:
    def test_full_frames_orthonormal(self):
        x, _ = sample_ensemble(MatrixSpec(dims=DIMS), 2.0, seed=2)
        f = svd_full(x, DIMS)
        assert np.abs(f.left.T @ f.left - np.eye(40)).max() < 1e-10
        assert np.abs(f.right.T @ f.right - np.eye(30)).max() < 1e-10
        assert np.all(np.diff(f.svals) <= 0)

    def test_truncated_frames(self):
        _, xt = sample_ensemble(MatrixSpec(dims=DIMS), 2.0, seed=2)
        tr = svd_truncated(xt, DIMS)
        assert np.abs(tr.left.T @ tr.left - np.eye(40)).max() < 1e-10
        assert np.abs(tr.right.T @ tr.right - np.eye(30)).max() < 1e-10
        # completion block lives inside the first m coordinates
        assert not np.any(tr.left[20:, 15:20])
        # beyond m: standard basis vectors
        np.testing.assert_array_equal(tr.left[:, 20:], np.eye(40)[:, 20:])
        np.testing.assert_array_equal(tr.right[:, 15:], np.eye(30)[:, 15:])
        assert np.all(tr.svals[15:] == 0)

    def test_standard_basis_convention_small(self):
        dims = Dims(M=4, N=3, m=2, n=2)
        _, xt = sample_ensemble(MatrixSpec(dims=dims), 1.0, seed=3)
        tr = svd_truncated(xt, dims)
        np.testing.assert_array_equal(tr.left[:, 2], [0, 0, 1, 0])
        np.testing.assert_array_equal(tr.left[:, 3], [0, 0, 0, 1])

    def test_square_block_has_empty_completion(self):
        dims = Dims(M=6, N=4, m=4, n=4)
        _, xt = sample_ensemble(MatrixSpec(dims=dims), 1.0, seed=4)
        tr = svd_truncated(xt, dims)
        np.testing.assert_array_equal(tr.left[:, 4:], np.eye(6)[:, 4:])

    def test_degenerate_block_rejected(self):
        xt = np.zeros((DIMS.M, DIMS.N))
        with pytest.raises(DegenerateSampleError):
            svd_truncated(xt, DIMS)

    def test_sparsity_validated(self):
        x = np.ones((DIMS.M, DIMS.N))
        with pytest.raises(ParameterError):
            svd_truncated(x, DIMS)

    def test_sign_canonicalization_is_flip_invariant(self):
        rng = np.random.default_rng(6)
        x, _ = sample_ensemble(MatrixSpec(dims=DIMS), 2.0, seed=2)
        f = svd_full(x, DIMS)
        flips = rng.choice([-1.0, 1.0], size=30)
        flipped = f.right * flips
        signs = _canonical_signs(flipped, 30)
        np.testing.assert_allclose(flipped * signs, f.right)


class TestOverlapMatrices:
    def test_row_sums(self):
        x, xt = sample_ensemble(MatrixSpec(dims=DIMS), 2.0, seed=7)
        v, u, w = overlap_matrices(svd_full(x, DIMS), svd_truncated(xt, DIMS))
        assert v.shape == (15, 30) and u.shape == (20, 40) and w.shape == (15, 30)
        assert np.abs(v.sum(axis=1) - 1).max() < 1e-10
        assert np.abs(u.sum(axis=1) - 1).max() < 1e-10

    def test_identity_truncation(self):
        dims = Dims(M=8, N=6, m=8, n=6)
        x, xt = sample_ensemble(MatrixSpec(dims=dims), 1.5, seed=8)
        v, u, w = overlap_matrices(svd_full(x, dims), svd_truncated(xt, dims))
        np.testing.assert_allclose(v, np.eye(6), atol=1e-10)
        np.testing.assert_allclose(w[:, :6], np.eye(6), atol=1e-10)

    def test_w_sign_invariance(self):
        # the signed product table must not depend on svd sign choices
        x, xt = sample_ensemble(MatrixSpec(dims=DIMS), 2.0, seed=9)
        full, trunc = svd_full(x, DIMS), svd_truncated(xt, DIMS)
        _, _, w = overlap_matrices(full, trunc)
        rng = np.random.default_rng(10)
        flips = rng.choice([-1.0, 1.0], size=DIMS.N)
        hacked = svd_full((x * 1.0), DIMS)
        hacked.right[:] = hacked.right * flips
        hacked.left[:, : DIMS.N] = hacked.left[:, : DIMS.N] * flips
        signs = _canonical_signs(hacked.right, DIMS.N)
        hacked.right[:] = hacked.right * signs
        hacked.left[:, : DIMS.N] = hacked.left[:, : DIMS.N] * signs[: DIMS.N]
        _, _, w2 = overlap_matrices(hacked, trunc)
        np.testing.assert_allclose(w2, w, atol=1e-12)


class TestMonteCarlo:
    def test_identity_truncation_targets(self):
        dims = Dims(M=8, N=6, m=8, n=6)
        spec = MatrixSpec(dims=dims)
        matched, off = mc_rescaled_overlaps(
            spec, 1.0, [(0.5, 0.5), (0.5, 0.9)], trials=3, seed=11
        )
        assert matched.v.value == pytest.approx(6.0, abs=1e-9)
        assert matched.v.stderr == pytest.approx(0.0, abs=1e-9)
        assert off.v.value == pytest.approx(0.0, abs=1e-9)

    def test_scalar_case(self):
        dims = Dims(M=1, N=1, m=1, n=1)
        est, = mc_rescaled_overlaps(MatrixSpec(dims=dims), 1.0, [(0.5, 0.5)],
                                    trials=4, seed=12)
        assert est.v.value == pytest.approx(1.0, abs=1e-12)
        assert est.v.stderr == 0.0

    def test_determinism_across_thread_counts(self):
        dims = Dims.from_ratios(60, 0.9, 0.4, 0.8)
        spec = MatrixSpec(dims=dims)
        runs = [
            mc_rescaled_overlaps(spec, 3.0, [(0.5, 0.4), (0.3, 0.7)], trials=12,
                                 seed=13, threads=k)
            for k in (1, 2, 5)
        ]
        for other in runs[1:]:
            for a, b in zip(runs[0], other):
                assert a.v.value == b.v.value
                assert a.u.value == b.u.value
                assert a.w.value == b.w.value
                assert a.v.stderr == b.v.stderr

    def test_matches_theory_at_moderate_size(self):
        dims = Dims.from_ratios(150, 0.9, 0.4, 0.8)
        r = dims.ratios(3.0)
        targets = [(0.5, 0.35), (0.5, 0.65)]
        ests = mc_rescaled_overlaps(MatrixSpec(dims=dims), 3.0, targets,
                                    trials=400, seed=14)
        for est in ests:
            mu = quantile(MPSpec.truncated(r), est.x)
            lam = quantile(MPSpec.full(r), est.y)
            ref = mp_overlap_triple(r, mu, lam)
            assert abs(est.v.value - ref.vbar) < 4 * est.v.stderr
            assert abs(est.u.value - ref.ubar) < 4 * est.u.stderr
            assert abs(est.w.value - ref.wbar) < 4 * est.w.stderr

    def test_eigenvalue_matching_mode(self):
        dims = Dims.from_ratios(100, 0.9, 0.4, 0.8)
        ests = mc_rescaled_overlaps(MatrixSpec(dims=dims), 3.0, [(0.5, 0.5)],
                                    trials=5, seed=15, selection="eigenvalue")
        assert np.isfinite(ests[0].v.value)

    def test_target_validation(self):
        with pytest.raises(ParameterError):
            mc_rescaled_overlaps(MatrixSpec(dims=DIMS), 1.0, [(0.0, 0.5)],
                                 trials=2, seed=0)
        with pytest.raises(ParameterError):
            mc_rescaled_overlaps(MatrixSpec(dims=DIMS), 1.0, [], trials=2, seed=0)


class TestKernelMonteCarlo:
    def test_empty_ranges_rejected(self):
        dims = Dims(M=8, N=6, m=6, n=6)
        with pytest.raises(ParameterError):
            mc_kernel_overlaps(MatrixSpec(dims=dims), 1.0, "u1", 0.5,
                               trials=2, seed=0)
        square = Dims(M=6, N=6, m=6, n=4)
        with pytest.raises(ParameterError):
            mc_kernel_overlaps(MatrixSpec(dims=square), 1.0, "u2", 0.5,
                               trials=2, seed=0)

    def test_u3_estimate_near_theory(self):
        dims = Dims.from_ratios(120, 0.9, 0.4, 0.8)
        est = mc_kernel_overlaps(MatrixSpec(dims=dims), 3.0, "u3", None,
                                 trials=60, seed=16)
        assert est.value == pytest.approx(1.40625, rel=0.2)


class TestCorrelationIdentity:
    def test_small_grid_bound(self):
        # CLT-scale bound with a fixed seed
        dev = correlation_identity_test(DIMS, t=1.0, dt=1e-3, samples=4000,
                                        seed=17, grid=3)
        assert dev <= 4.5 / np.sqrt(4000)

    def test_parameter_validation(self):
        with pytest.raises(ParameterError):
            correlation_identity_test(DIMS, 1.0, 0.0, 100, 0)


class TestThreads:
    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("OVERLAPKIT_THREADS", "3")
        assert resolve_threads(None) == 3
        monkeypatch.setenv("OVERLAPKIT_THREADS", "zebra")
        with pytest.raises(ParameterError):
            resolve_threads(None)

    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv("OVERLAPKIT_THREADS", "3")
        assert resolve_threads(2) == 2
