import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from app.models.params import init_params
from app.schemas.config import ModelConfig
from app.schemas.metrics import RankResult
from app.services.manage_data.interactions import InteractionMatrix, Split
from app.services.manage_data.splitter import leave_one_out_split
from app.services.manage_evaluation import ranking
from app.services.manage_evaluation.posterior_export import export_posteriors, posterior_frame
from app.services.manage_evaluation.ranking import (
    evaluate,
    hr_at_k,
    metrics_from_ranks,
    ndcg_at_k,
    rank_from_scores,
    rank_test_item,
    rank_users,
)
from app.services.manage_evaluation.robustness import noisy_vectors, robustness_run
from app.utils.exceptions import DataError, ExportError
from app.utils.rng import make_rng

rank_lists = st.lists(st.integers(min_value=1, max_value=100), min_size=1, max_size=50)


def _random_split(seed: int = 0, num_users: int = 30, num_items: int = 40, num_negatives: int = 20) -> Split:
    rng = np.random.default_rng(seed)
    users, items = [], []
    for user in range(num_users):
        chosen = rng.choice(num_items, size=rng.integers(8, 16), replace=False)
        users.extend([user] * chosen.size)
        items.extend(chosen.tolist())
    stamps = np.arange(len(users))
    matrix = InteractionMatrix.from_pairs(users, items, stamps, num_users=num_users, num_items=num_items)
    return leave_one_out_split(matrix, policy="latest", seed=seed, num_negatives=num_negatives)


def _random_params(split: Split, seed: int = 0, variant: str = "dave"):
    config = ModelConfig(num_users=split.num_users, num_items=split.num_items, embedding_dim=4,
                         encoder_hidden=(8,), decoder_hidden=(8,), discriminator_hidden=(8,),
                         predictor_hidden=(8,), variant=variant)
    return init_params(config, make_rng(seed, "init"))


def _id_scorer(monkeypatch, score_of):
    """Embeddings carry entity ids; `score_of(user, item)` gives the predicted score."""
    monkeypatch.setattr(ranking, "mean_embeddings",
                        lambda params, split, side, vectors=None, chunk_size=2048:
                        np.arange(split.num_users if side == "user" else split.num_items, dtype=float)[:, None])
    monkeypatch.setattr(ranking, "predict", lambda params, x_u, x_i: np.array(
        [score_of(int(u), int(i)) for u, i in zip(np.atleast_2d(x_u)[:, 0], np.atleast_2d(x_i)[:, 0])]))


def _stable_sort_rank(test_score, negative_scores):
    scores = np.concatenate([[test_score], negative_scores])
    order = np.argsort(-scores, kind="stable")
    return int(np.flatnonzero(order == 0)[0]) + 1


class TestRankFromScores:
    def test_matches_a_stable_sort(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            # Integer scores produce plenty of ties
            scores = rng.integers(0, 20, size=100).astype(float)
            assert rank_from_scores(scores[0], scores[1:]) == _stable_sort_rank(scores[0], scores[1:])

    def test_highest_score_ranks_first(self):
        assert rank_from_scores(0.9, np.linspace(0.0, 0.5, 99)) == 1

    def test_ties_favour_the_test_item(self):
        assert rank_from_scores(0.5, np.full(99, 0.5)) == 1

    def test_lowest_score_ranks_last(self):
        assert rank_from_scores(-1.0, np.zeros(99)) == 100


class TestHitRatioAndNdcg:
    def test_all_first(self):
        assert hr_at_k([1, 1, 1], 5) == 1.0
        assert ndcg_at_k([1, 1, 1], 5) == 1.0

    def test_one_of_two_hits(self):
        assert hr_at_k([3, 12], 10) == 0.5

    def test_rank_five(self):
        assert ndcg_at_k([RankResult(user=0, rank=5)], 5) == pytest.approx(0.3869, abs=1e-4)
        assert ndcg_at_k([5], 4) == 0.0

    def test_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            ranks = rng.integers(1, 101, size=rng.integers(1, 60)).tolist()
            k = int(rng.integers(1, 30))
            hits = [1.0 if r <= k else 0.0 for r in ranks]
            gains = [1.0 / np.log2(r + 1) if r <= k else 0.0 for r in ranks]
            assert hr_at_k(ranks, k) == pytest.approx(sum(hits) / len(ranks), rel=1e-12)
            assert ndcg_at_k(ranks, k) == pytest.approx(sum(gains) / len(ranks), rel=1e-12)

    @pytest.mark.parametrize("metric", [hr_at_k, ndcg_at_k])
    def test_empty_list(self, metric):
        with pytest.raises(ValueError):
            metric([], 10)

    @pytest.mark.parametrize("metric", [hr_at_k, ndcg_at_k])
    def test_k_must_be_positive(self, metric):
        with pytest.raises(ValueError):
            metric([1, 2], 0)

    @given(ranks=rank_lists)
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_k_and_ndcg_below_hr(self, ranks):
        metrics = metrics_from_ranks(ranks, ks=(5, 10, 20))
        assert metrics.hr[5] <= metrics.hr[10] <= metrics.hr[20]
        assert metrics.ndcg[5] <= metrics.ndcg[10] <= metrics.ndcg[20]
        for k in (5, 10, 20):
            assert 0.0 <= metrics.ndcg[k] <= metrics.hr[k] <= 1.0
        assert metrics.num_users == len(ranks)

    def test_random_scorer_hits_one_in_ten(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(size=(10_000, 100))
        ranks = [rank_from_scores(row[0], row[1:]) for row in scores]
        assert hr_at_k(ranks, 10) == pytest.approx(0.10, abs=0.01)


class TestRankTestItem:
    def test_test_item_on_top(self, monkeypatch, block_split):
        _id_scorer(monkeypatch, lambda user, item: 1.0 if item == 3 else 0.0)
        assert rank_test_item(None, 0, 3, [4, 5, 6], block_split).rank == 1

    def test_constant_scores_rank_first(self, monkeypatch, block_split):
        _id_scorer(monkeypatch, lambda user, item: 0.5)
        assert rank_test_item(None, 0, 3, [4, 5, 6], block_split).rank == 1

    def test_counts_strictly_better_negatives(self, monkeypatch, block_split):
        _id_scorer(monkeypatch, lambda user, item: float(item))
        result = rank_test_item(None, 0, 3, [4, 5, 6], block_split)
        assert result == RankResult(user=0, rank=4)

    def test_negative_in_history(self, block_split, small_params):
        with pytest.raises(DataError, match="overlap"):
            rank_test_item(small_params, 0, 3, [0, 5, 6], block_split)

    def test_agrees_with_batched_ranking(self):
        split = _random_split(seed=3)
        params = _random_params(split, seed=3)
        batched = rank_users(params, split, max_workers=0)
        for j, user in enumerate(split.eval_users):
            single = rank_test_item(params, user, split.test_items[j], split.negatives[j], split)
            assert single == batched[j]


class TestEvaluate:
    def test_perfect_model(self, monkeypatch, block_split):
        targets = dict(zip(block_split.eval_users.tolist(), block_split.test_items.tolist()))
        _id_scorer(monkeypatch, lambda user, item: 1.0 if targets[user] == item else 0.0)
        metrics = evaluate(None, block_split, max_workers=0)
        assert all(metrics.hr[k] == 1.0 and metrics.ndcg[k] == 1.0 for k in (5, 10, 20))
        assert metrics.num_users == block_split.eval_users.size

    def test_validation_target(self, monkeypatch, block_split):
        targets = dict(zip(block_split.eval_users.tolist(), block_split.validation_items.tolist()))
        _id_scorer(monkeypatch, lambda user, item: 1.0 if targets[user] == item else 0.0)
        assert evaluate(None, block_split, ks=(1,), target="validation", max_workers=0).hr[1] == 1.0
        with pytest.raises(ValueError):
            evaluate(None, block_split, target="train")

    def test_deterministic_across_thread_counts(self):
        split = _random_split(seed=4)
        params = _random_params(split, seed=4)
        assert evaluate(params, split, max_workers=0) == evaluate(params, split, max_workers=4)

    def test_order_of_users_and_negatives_is_irrelevant(self):
        split = _random_split(seed=5)
        params = _random_params(split, seed=5)
        rng = np.random.default_rng(5)
        order = rng.permutation(split.eval_users.size)
        shuffled = Split(
            train=split.train,
            eval_users=split.eval_users[order].copy(),
            validation_items=split.validation_items[order].copy(),
            test_items=split.test_items[order].copy(),
            negatives=rng.permuted(split.negatives[order], axis=1),
            dropped_users=split.dropped_users,
        )
        assert evaluate(params, shuffled, max_workers=0) == evaluate(params, split, max_workers=0)


class TestRobustness:
    def test_zero_noise_reproduces_evaluate(self):
        split = _random_split(seed=6)
        params = _random_params(split, seed=6)
        [result] = robustness_run(params, split, levels=[0.0], seed=0, max_workers=0)
        assert result.noise_level == 0.0
        assert result.metrics == evaluate(params, split, max_workers=0)

    def test_reproducible(self):
        split = _random_split(seed=7)
        params = _random_params(split, seed=7)
        first = robustness_run(params, split, levels=[0.1, 0.5], seed=3, max_workers=0)
        second = robustness_run(params, split, levels=[0.1, 0.5], seed=3, max_workers=2)
        assert first == second
        assert [result.noise_level for result in first] == [0.1, 0.5]

    def test_per_entity_levels(self):
        split = _random_split(seed=8)
        params = _random_params(split, seed=8)
        [result] = robustness_run(params, split, levels=[0.1, 0.9], seed=0, mode="per-entity", max_workers=0)
        assert result.noise_level is None
        assert result.metrics.num_users == split.eval_users.size

    def test_rejects_unknown_mode(self, block_split, small_params):
        with pytest.raises(ValueError, match="mode"):
            robustness_run(small_params, block_split, mode="gaussian")

    def test_rejects_empty_levels(self, block_split, small_params):
        with pytest.raises(ValueError):
            robustness_run(small_params, block_split, levels=[])

    @pytest.mark.parametrize("side", ["user", "item"])
    def test_noisy_vectors_flip_an_exact_share(self, block_split, side):
        clean = block_split.train.side_matrix(side).toarray()
        noisy = noisy_vectors(block_split, side, 0.5, make_rng(0, "noise", 0))
        expected = int(np.floor(0.5 * clean.shape[1] + 0.5))
        np.testing.assert_array_equal(np.sum(clean != noisy, axis=1), expected)
        assert set(np.unique(noisy)) <= {0.0, 1.0}


class TestPosteriorExport:
    def test_columns_and_rows(self, small_params, block_split):
        frame = posterior_frame(small_params, block_split, "user")
        d = small_params.embedding_dim
        assert list(frame.columns) == ["id"] + [f"mu_{i}" for i in range(d)] + [f"sigma_{i}" for i in range(d)]
        assert len(frame) == block_split.num_users
        assert (frame[[f"sigma_{i}" for i in range(d)]].to_numpy() > 0.0).all()

    def test_width_for_64_dimensions(self):
        split = _random_split(seed=9)
        config = ModelConfig(num_users=split.num_users, num_items=split.num_items, embedding_dim=64)
        frame = posterior_frame(init_params(config, make_rng(0, "init")), split, "item", chunk_size=7)
        assert frame.shape == (split.num_items, 129)
        np.testing.assert_array_equal(frame["id"], np.arange(split.num_items))

    def test_written_csv(self, small_params, block_split, tmp_path):
        path = export_posteriors(small_params, block_split, "item", tmp_path / "out" / "posteriors_item.csv")
        frame = pd.read_csv(path)
        assert len(frame) == block_split.num_items
        assert frame.shape[1] == 1 + 2 * small_params.embedding_dim

    def test_unwritable_path(self, small_params, block_split, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(ExportError):
            export_posteriors(small_params, block_split, "user", blocker / "posteriors_user.csv")
