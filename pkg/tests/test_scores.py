import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from tailcp.errors import ConfigError
from tailcp.partition import head_tail_partition
from tailcp.scores import (ScoreSpec, base_score_matrix, default_raps_constants, rank, rank_matrix,
                           regularize, score_aps, score_batch, score_lac, score_raps, score_stacp,
                           score_table, score_tacp, score_topk)

ROW = [0.5, 0.3, 0.2]


class TestScalarScores:
    @pytest.mark.parametrize("row,y,expected", [(ROW, 0, 1), (ROW, 2, 3), ([0.4, 0.4, 0.2], 0, 2)])
    def test_rank(self, row, y, expected):
        assert rank(row, y) == expected

    def test_rank_out_of_range(self):
        with pytest.raises(IndexError):
            rank(ROW, 3)
        with pytest.raises(IndexError):
            score_lac(ROW, -1)

    @pytest.mark.parametrize("row,y,expected", [([0.9, 0.1], 0, 0.1), ([0.9, 0.1], 1, 0.9),
                                                ([1.0, 0.0], 0, 0.0)])
    def test_lac(self, row, y, expected):
        assert score_lac(row, y) == pytest.approx(expected)

    @pytest.mark.parametrize("y,u,expected", [(1, 0, 0.5), (1, 1, 0.8), (0, 0.5, 0.25)])
    def test_aps(self, y, u, expected):
        assert score_aps(ROW, y, u) == pytest.approx(expected)

    @pytest.mark.parametrize("row,y,u,expected", [(ROW, 0, 0.25, 1.25), (ROW, 2, 0, 3.0),
                                                  ([0.5, 0.5], 0, 0, 2.0)])
    def test_topk(self, row, y, u, expected):
        assert score_topk(row, y, u) == expected

    def test_raps(self):
        assert score_raps(ROW, 2, 0, 0.01, 1) == pytest.approx(0.82)
        assert score_raps(ROW, 2, 0.3, 0.0, 1) == score_aps(ROW, 2, 0.3)
        assert score_raps(ROW, 1, 0.3, 0.5, 2) == score_aps(ROW, 1, 0.3)

    @pytest.mark.parametrize("rank_,head,expected", [(4, True, 2.7), (4, False, 0.7),
                                                     (2, True, 0.7)])
    def test_tacp(self, rank_, head, expected):
        assert score_tacp(0.7, rank_, head, 1.0, 2) == pytest.approx(expected)

    def test_tacp_randomized_penalty(self):
        assert score_tacp(0.7, 2, True, 1.0, 2, u_pen=0.25) == pytest.approx(0.95)

    def test_stacp(self):
        assert score_stacp(0.7, 5, 0.2, 0.5, 2) == pytest.approx(1.0)
        assert score_stacp(0.7, 5, 0.2, 0.0, 2) == 0.7
        assert score_stacp(0.7, 2, 0.2, 3.0, 2) == 0.7
        with pytest.raises(ValueError):
            score_stacp(0.7, 5, 1.2, 0.5, 2)

    @given(st.lists(st.floats(0.001, 1), min_size=2, max_size=12))
    def test_aps_total_mass(self, w):
        row = list(np.array(w) / np.sum(w))
        last = int(np.argmin(row))
        # the last-ranked label with u=1 includes every label
        assert score_aps(row, last, 1.0) == pytest.approx(1.0, abs=1e-9)


prob_rows = st.integers(2, 10).flatmap(
    lambda K: arrays(np.float64, (6, K), elements=st.sampled_from([0.05, 0.1, 0.2, 0.3, 0.5])))


class TestVectorized:
    @settings(max_examples=60, deadline=None)
    @given(prob_rows)
    def test_rank_matrix_matches_definition(self, w):
        # coarse values create many ties
        probs = w / w.sum(axis=1, keepdims=True)
        ranks = rank_matrix(probs)
        for i, row in enumerate(probs.tolist()):
            assert ranks[i].tolist() == [oracles.rank(row, y) for y in range(len(row))]

    @settings(max_examples=60, deadline=None)
    @given(prob_rows, st.floats(0, 1))
    def test_aps_matrix_matches_definition(self, w, u):
        probs = w / w.sum(axis=1, keepdims=True)
        s = base_score_matrix(probs, "aps", np.full(len(probs), u))
        for i, row in enumerate(probs.tolist()):
            for y in range(len(row)):
                assert s[i, y] == pytest.approx(oracles.aps(row, y, u), abs=1e-12)

    def test_all_bases_match_scalar(self, rng):
        probs = rng.dirichlet(np.ones(7), size=20)
        u = rng.random(20)
        for base in ("lac", "aps", "topk", "raps"):
            s = base_score_matrix(probs, base, u, raps_lambda=0.05, raps_k=2)
            for i in range(20):
                for y in range(7):
                    ref = {"lac": lambda: score_lac(probs[i], y),
                           "aps": lambda: score_aps(probs[i], y, u[i]),
                           "topk": lambda: score_topk(probs[i], y, u[i]),
                           "raps": lambda: score_raps(probs[i], y, u[i], 0.05, 2)}[base]()
                    assert s[i, y] == pytest.approx(ref, abs=1e-12)

    def test_rank_invariant_under_monotone_transform(self, rng):
        probs = rng.dirichlet(np.ones(6), size=30)
        sharper = probs ** 3 / (probs ** 3).sum(axis=1, keepdims=True)
        np.testing.assert_array_equal(rank_matrix(probs), rank_matrix(sharper))
        u = rng.random(30)
        np.testing.assert_array_equal(base_score_matrix(probs, "topk", u),
                                      base_score_matrix(sharper, "topk", u))

    def test_regularize_matches_scalar(self, rng):
        probs = rng.dirichlet(np.ones(5), size=10)
        ranks = rank_matrix(probs)
        base = 1 - probs
        head = np.array([1, 0, 1, 0, 0], dtype=float)
        upen = rng.random(10)
        out = regularize(base, ranks, head, 0.7, 2, upen)
        for i in range(10):
            for y in range(5):
                ref = score_tacp(base[i, y], ranks[i, y], bool(head[y]), 0.7, 2, upen[i])
                assert out[i, y] == pytest.approx(ref, abs=1e-12)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_u(self, u1, u2):
        lo, hi = sorted((u1, u2))
        probs = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]])
        for base in ("aps", "topk", "raps"):
            a = base_score_matrix(probs, base, np.full(2, lo))
            b = base_score_matrix(probs, base, np.full(2, hi))
            assert np.all(a <= b)
        r = rank_matrix(probs)
        assert np.all(regularize(1 - probs, r, np.ones(3), 1.0, 1, np.full(2, lo))
                      <= regularize(1 - probs, r, np.ones(3), 1.0, 1, np.full(2, hi)))


class TestScoreSpec:
    @pytest.mark.parametrize("kwargs", [dict(base="margin"), dict(reg="hard"), dict(lam=-1.0),
                                        dict(k_r=0), dict(raps_k=0),
                                        dict(reg="stacp", randomized=True)])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            ScoreSpec(**kwargs)

    def test_raps_defaults(self):
        assert default_raps_constants(100) == (0.01, 5)
        assert default_raps_constants(1000) == (0.01, 8)


class TestScoreBatch:
    PROBS = np.array([[0.9, 0.1], [0.2, 0.8]])

    def test_lac_calibration_mode(self):
        out = score_batch(ScoreSpec("lac"), self.PROBS, [0, 1])
        np.testing.assert_allclose(out, [0.1, 0.2])

    def test_zero_lambda_is_identity(self):
        part = head_tail_partition([0.5, 0.5], 0.5)
        plain = score_batch(ScoreSpec("lac"), self.PROBS)
        reg = score_batch(ScoreSpec("lac", reg="tacp", lam=0.0), self.PROBS, partition=part)
        np.testing.assert_array_equal(plain, reg)

    def test_deterministic(self, rng):
        probs = rng.dirichlet(np.ones(8), size=40)
        part = head_tail_partition(np.full(8, 1 / 8), 0.5)
        spec = ScoreSpec("aps", reg="tacp", lam=0.3, k_r=2, randomized=True, seed=99)
        a = score_batch(spec, probs, partition=part)
        b = score_batch(spec, probs, partition=part)
        assert a.tobytes() == b.tobytes()

    def test_seed_override(self, rng):
        probs = rng.dirichlet(np.ones(4), size=10)
        a = score_batch(ScoreSpec("aps", seed=1), probs)
        b = score_batch(ScoreSpec("aps", seed=1), probs, seed=2)
        assert not np.array_equal(a, b)

    def test_shared_u_per_sample(self, rng):
        probs = rng.dirichlet(np.ones(5), size=12)
        s = score_batch(ScoreSpec("topk", seed=4), probs)
        frac = s - rank_matrix(probs)
        assert np.allclose(frac, frac[:, :1])

    def test_missing_partition_or_prior(self):
        with pytest.raises(ConfigError):
            score_batch(ScoreSpec("lac", reg="tacp", lam=1.0), self.PROBS)
        with pytest.raises(ConfigError):
            score_batch(ScoreSpec("lac", reg="stacp", lam=1.0), self.PROBS)
        with pytest.raises(ConfigError):
            score_batch(ScoreSpec("lac", reg="stacp", lam=1.0), self.PROBS, prior=[1.0])

    def test_partition_size_mismatch(self):
        part = head_tail_partition([0.5, 0.3, 0.2], 0.5)
        with pytest.raises(ConfigError):
            score_batch(ScoreSpec("lac", reg="tacp", lam=1.0), self.PROBS, partition=part)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 12), st.floats(0, 5), st.integers(1, 15), st.integers(0, 2**31),
           st.sampled_from(["lac", "aps", "topk", "raps"]))
    def test_dominance_and_degeneration(self, K, lam, k_r, seed, base):
        probs = np.random.default_rng(seed).dirichlet(np.ones(K), size=15)
        prior = np.random.default_rng(seed + 1).dirichlet(np.ones(K))
        part = head_tail_partition(prior, 0.5)
        plain = score_table(ScoreSpec(base, seed=seed), probs)
        for reg, kw in (("tacp", dict(partition=part)), ("stacp", dict(prior=prior))):
            t = score_table(ScoreSpec(base, reg=reg, lam=lam, k_r=k_r, seed=seed), probs, **kw)
            assert np.all(t.scores >= plain.scores)
            quiet = plain.ranks <= k_r
            np.testing.assert_array_equal(t.scores[quiet], plain.scores[quiet])
            if reg == "tacp":
                np.testing.assert_array_equal(t.scores[:, ~part.head_mask],
                                              plain.scores[:, ~part.head_mask])
            if k_r >= K:
                np.testing.assert_array_equal(t.scores, plain.scores)
