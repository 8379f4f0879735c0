import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hacbsr.degradation import CovarianceSpec, gaussian_kernel
from hacbsr.exceptions import ShapeError
from hacbsr.sampling import (KernelHistory, SamplingConfig, ScoreThresholds, SimilarityWeights,
                             candidate_score, kernel_descriptor, pearson, propose_kernel,
                             sample_batch, score_from_stats, select_candidate, similarities,
                             similarity, similarity_stats)


def g(s1, s2, rho, K=11):
    return gaussian_kernel(CovarianceSpec(s1, s2, rho), K)


def random_kernel(rng, K=11):
    return g(rng.uniform(0.7, 5), rng.uniform(0.7, 5), rng.uniform(-0.8, 0.8), K)


class TestDescriptor:
    def test_delta(self):
        k = np.zeros((11, 11))
        k[5, 5] = 1
        d = kernel_descriptor(k)
        assert d[0] == 1 and d[1] == 0 and d[2] == 0

    def test_uniform(self):
        K = 9
        d = kernel_descriptor(np.full((K, K), 1 / K**2))
        assert d[0] == pytest.approx(1 / K**2)
        assert d[1] == pytest.approx(np.log(K**2))
        assert d[2] == pytest.approx(0, abs=1e-12)

    def test_moments(self):
        k = g(2, 1, 0)
        d = kernel_descriptor(k)
        c = np.arange(11) - 5
        sx = np.sqrt((k.sum(axis=0) * c**2).sum())
        sy = np.sqrt((k.sum(axis=1) * c**2).sum())
        assert d[3] == pytest.approx(sx) and d[4] == pytest.approx(sy)
        assert d[3] > d[4]
        assert kernel_descriptor(g(1.5, 1.5, 0.6))[5] > 0.3


class TestSimilarity:
    def test_self_similarity_is_one(self):
        for k in (g(1, 1, 0), g(3, 1.5, 0.5), np.full((11, 11), 1 / 121)):
            assert similarity(k, k) == pytest.approx(1.0, abs=1e-9)

    def test_default_weights(self):
        w = SimilarityWeights()
        assert (w.w_pearson, w.w_ssim, w.w_feat) == (0.5, 0.2, 0.3)
        with pytest.raises(ValueError):
            SimilarityWeights(0.5, 0.5, 0.5)

    def test_closer_kernel_more_similar(self):
        base = g(1, 1, 0)
        assert similarity(base, g(3, 3, 0)) < similarity(base, g(1.2, 1.2, 0))

    def test_pearson_constant_fallback(self):
        flat = np.full((5, 5), 1 / 25)
        assert pearson(flat, flat) == 1.0
        assert pearson(flat, g(1, 1, 0, 5)) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            similarity(g(1, 1, 0, 5), g(1, 1, 0, 7))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_kernel(rng), random_kernel(rng)
        assert abs(similarity(a, b) - similarity(b, a)) < 1e-9

    def test_vectorised_matches_scalar(self, rng):
        ks = [random_kernel(rng) for _ in range(12)]
        c = random_kernel(rng)
        assert np.allclose(similarities(c, ks), [similarity(c, k) for k in ks], atol=1e-12)


class TestScore:
    th = ScoreThresholds()

    def test_defaults(self):
        assert (self.th.tau_target, self.th.sigma_min, self.th.sigma_max) == (0.3, 0.3, 0.8)
        with pytest.raises(ValueError):
            ScoreThresholds(sigma_min=0.9, sigma_max=0.8)

    def test_zero_at_thresholds(self):
        assert score_from_stats(0.3, 0.3, 0.8, self.th) == pytest.approx(0.0, abs=1e-15)

    def test_worked_example(self):
        assert score_from_stats(0.5, 0.2, 0.9, self.th) == pytest.approx(-0.4, abs=1e-12)

    def test_literal_rewards_and_hinge(self):
        # below sigma_max and above sigma_min the literal form rewards
        assert score_from_stats(0.3, 0.5, 0.6, self.th) == pytest.approx(0.4)
        assert score_from_stats(0.3, 0.5, 0.6, self.th, hinge=True) == 0.0

    def test_empty_history(self):
        assert candidate_score(g(1, 1, 0), KernelHistory()) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1, 1), st.floats(0.01, 0.5))
    def test_avg_term_strictly_penalised(self, s_avg_shift, eps):
        base = score_from_stats(0.3, 0.3, 0.8, self.th)
        assert score_from_stats(0.3 + eps, 0.3, 0.8, self.th) < base
        assert score_from_stats(0.3 - eps, 0.3, 0.8, self.th) < base

    def test_matches_stats(self, rng):
        h = KernelHistory()
        for _ in range(6):
            h.append(random_kernel(rng), 0.0)
        c = random_kernel(rng)
        sims = [similarity(c, k) for k in h.kernels]
        expected = score_from_stats(np.mean(sims), np.min(sims), np.max(sims), self.th)
        assert candidate_score(c, h) == pytest.approx(expected, abs=1e-12)

    def test_order_free(self, rng):
        ks = [random_kernel(rng) for _ in range(8)]
        c = random_kernel(rng)
        h1, h2 = KernelHistory(), KernelHistory()
        for k in ks:
            h1.append(k, 0.0)
        for i in rng.permutation(8):
            h2.append(ks[i], 0.0)
        assert candidate_score(c, h1) == pytest.approx(candidate_score(c, h2), abs=1e-12)


class TestHistoryAndProposals:
    def test_fifo_capacity(self):
        h = KernelHistory(20)
        ks = [g(0.7 + 0.1 * i, 1.0, 0.0) for i in range(21)]
        for k in ks:
            h.append(k, 0.0)
        assert len(h) == 20
        assert np.array_equal(h.kernels[0], ks[1]) and np.array_equal(h.kernels[-1], ks[-1])

    def test_history_rejects_invalid_kernel(self):
        with pytest.raises(ValueError):
            KernelHistory().append(np.full((3, 3), 0.5), 0.0)

    def test_single_proposal_is_returned(self):
        h = KernelHistory()
        for _ in range(3):
            h.append(g(1, 1, 0), 0.0)
        cfg = SamplingConfig()
        k, cov = propose_kernel(h, np.random.default_rng(5), n_proposals=1, config=cfg)
        from hacbsr.degradation import sample_covariance
        ref = sample_covariance(np.random.default_rng(5), cfg.sigma_range, cfg.rho_range)
        assert cov == ref and np.array_equal(k, gaussian_kernel(ref, 11))
        assert len(h) == 4

    def test_selects_dissimilar_candidate(self):
        h = KernelHistory()
        for _ in range(20):
            h.append(g(1, 1, 0), 0.0)
        cands = [g(1, 1, 0), g(3, 1.5, 0.5)]
        s_same = similarity_stats(cands[0], h)
        s_new = similarity_stats(cands[1], h)
        assert abs(s_new[0] - 0.3) < abs(s_same[0] - 0.3)
        assert s_new[2] - 0.8 < s_same[2] - 0.8
        i, J, _ = select_candidate(cands, h)
        assert i == 1 and J == pytest.approx(candidate_score(cands[1], h))

    def test_ties_first_wins(self):
        h = KernelHistory()
        h.append(g(2, 2, 0), 0.0)
        assert select_candidate([g(1, 1, 0), g(1, 1, 0)], h)[0] == 0

    def test_empty_history_accepts_first(self):
        h = KernelHistory()
        i, J, stats = select_candidate([g(1, 1, 0), g(2, 2, 0)], h)
        assert (i, J) == (0, 0.0) and np.all(np.isnan(stats))

    def test_batch_size_and_log(self, rng):
        h = KernelHistory()
        batch = sample_batch(h, rng, T=5, iteration=3)
        assert len(batch) == 5 and len(h) == 5 and len(h.log) == 5
        assert all(row["iteration"] == 3 for row in h.log)

    def test_batch_t1_equals_propose(self):
        h1, h2 = KernelHistory(), KernelHistory()
        for h in (h1, h2):
            h.append(g(1.3, 2.0, 0.1), 0.0)
        b = sample_batch(h1, np.random.default_rng(9), T=1)
        k, _ = propose_kernel(h2, np.random.default_rng(9))
        assert np.array_equal(b[0], k)

    def test_batch_deterministic(self):
        a = sample_batch(KernelHistory(), np.random.default_rng(3), T=8)
        b = sample_batch(KernelHistory(), np.random.default_rng(3), T=8)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_batch_validation(self, rng):
        with pytest.raises(ValueError):
            sample_batch(KernelHistory(), rng, T=0)
        with pytest.raises(ValueError):
            propose_kernel(KernelHistory(), rng, n_proposals=0)

    def test_history_csv(self, tmp_path, rng):
        h = KernelHistory()
        sample_batch(h, rng, T=4)
        lines = h.write_csv(tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "iteration,J,S_avg,S_min,S_max,sigma1,sigma2,rho"
        assert len(lines) == 5
