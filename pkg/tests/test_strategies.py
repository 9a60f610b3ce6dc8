import numpy as np
import pytest

import tunearena.strategies as strategies
from tunearena.objective import ObjectiveSpec, brute_force_optimum, landscape
from tunearena.space import SearchSpace, enumerate_valid, sample_many
from tunearena.strategies import (
    BudgetError,
    crossover,
    ga_schedule,
    run_bo_gp,
    run_bo_tpe,
    run_exhaustive,
    run_ga,
    run_random_search,
    run_rf_surrogate,
    run_strategy,
    top_k_unique,
    tpe_startup,
)
from tunearena.surrogates.parzen import parzen_fit

NOISELESS = ObjectiveSpec("synthetic-mandelbrot", noise_sigma=0.0)
NOISY = ObjectiveSpec("synthetic-harris", noise_sigma=0.05)
BUDGETED = ("random-search", "rf-surrogate", "genetic", "bo-gp", "bo-tpe")


def use_landscape(monkeypatch, f, limit=256):
    """Route strategy evaluations to a deterministic ``f(X)``; invalid rows get the penalty."""
    def fake(objective, X, rng):
        X = np.asarray(X).reshape(-1, 6)
        bad = X[:, 3] * X[:, 4] * X[:, 5] > limit
        return np.where(bad, 10_000.0, f(X)), bad
    monkeypatch.setattr(strategies, "evaluate_many", fake)


def is_valid_rows(history, limit=256):
    return all(t.config[3] * t.config[4] * t.config[5] <= limit for t in history)


class TestBudgets:
    @pytest.mark.parametrize("kind", ["random-search", "rf-surrogate", "bo-gp", "bo-tpe"])
    @pytest.mark.parametrize("S", [25, 50])
    def test_exact_budget(self, kind, S):
        out = run_strategy(kind, SearchSpace(), NOISY, S, np.random.default_rng(S), final_reps=2)
        assert out.evaluations_used == len(out.history) == S

    @pytest.mark.parametrize("S, pop, gen", [(25, 8, 3), (50, 10, 5), (100, 10, 10), (200, 20, 10), (400, 20, 20)])
    def test_ga_schedule(self, S, pop, gen):
        assert ga_schedule(S) == (pop, gen)
        assert pop * gen <= S

    @pytest.mark.parametrize("S", [8, 9, 30, 77, 1000])
    def test_ga_schedule_fallback(self, S):
        pop, gen = ga_schedule(S)
        assert pop % 2 == 0 and pop * gen <= S and gen >= 1

    def test_ga_25_uses_24(self, rng):
        assert run_ga(SearchSpace(), NOISY, 25, rng, final_reps=1).evaluations_used == 24

    def test_rf_split(self, rng):
        calls = []

        def fit(X, y, rng):
            calls.append(len(X))
            return lambda pool: landscape("synthetic-add", pool)
        out = run_rf_surrogate(SearchSpace(), NOISY, 25, rng, fit_predictor=fit, final_reps=1)
        assert calls == [15] and out.evaluations_used == 25

    @pytest.mark.parametrize("kind, S", [("rf-surrogate", 11), ("genetic", 7), ("bo-gp", 4), ("bo-tpe", 4),
                                         ("random-search", 0)])
    def test_too_small(self, kind, S, rng):
        with pytest.raises(BudgetError):
            run_strategy(kind, SearchSpace(), NOISY, S, rng)

    def test_ga_override_over_budget(self, rng):
        with pytest.raises(BudgetError):
            run_ga(SearchSpace(), NOISY, 25, rng, population=10, generations=3)

    @pytest.mark.parametrize("S, n_init", [(100, 8), (25, 2), (50, 4), (5, 2)])
    def test_gp_init_count(self, S, n_init, monkeypatch):
        fits = []
        real = strategies.gp_fit
        monkeypatch.setattr(strategies, "gp_fit", lambda X, *a: fits.append(len(X)) or real(X, *a))
        run_bo_gp(SearchSpace(), NOISY, S, np.random.default_rng(0), candidates=50, final_reps=1)
        assert fits[0] == n_init and len(fits) == S - n_init

    def test_tpe_startup(self):
        assert [tpe_startup(S) for S in (5, 25, 50, 100, 400)] == [2, 7, 13, 20, 20]


class TestInvariants:
    @pytest.mark.parametrize("kind", ["random-search", "genetic", "bo-gp", "bo-tpe"])
    def test_best_matches_history_minimum(self, kind):
        out = run_strategy(kind, SearchSpace(), NOISY, 50, np.random.default_rng(1), final_reps=1)
        assert out.best_search_runtime == min(t.runtime for t in out.history)
        assert (out.best_config, out.best_search_runtime) in [(t.config, t.runtime) for t in out.history]

    def test_rf_best_is_among_predictions(self):
        out = run_rf_surrogate(SearchSpace(), NOISY, 25, np.random.default_rng(1), trees=10, final_reps=1)
        assert out.best_search_runtime == min(t.runtime for t in out.history[15:])

    @pytest.mark.parametrize("kind", BUDGETED)
    def test_best_so_far_monotone(self, kind):
        trace = run_strategy(kind, SearchSpace(), NOISY, 50, np.random.default_rng(2), final_reps=1).best_so_far()
        assert np.all(np.diff(trace) <= 0)

    @pytest.mark.parametrize("kind", ["random-search", "rf-surrogate", "genetic"])
    def test_constrained_histories(self, kind):
        for seed in range(3):
            out = run_strategy(kind, SearchSpace(), NOISY, 50, np.random.default_rng(seed), final_reps=1)
            assert is_valid_rows(out.history)
            assert not any(t.penalized for t in out.history)

    @pytest.mark.parametrize("kind", ["bo-gp", "bo-tpe"])
    def test_box_strategies_may_hit_penalty(self, kind):
        # unconstrained draws are invalid 6.25% of the time
        penalized = []
        for seed in range(8):
            out = run_strategy(kind, SearchSpace(), NOISY, 50, np.random.default_rng(seed), final_reps=1)
            penalized += [t for t in out.history if t.penalized]
        assert penalized
        assert all(t.runtime == 10_000.0 for t in penalized)
        assert not is_valid_rows(penalized)

    @pytest.mark.parametrize("kind", BUDGETED)
    def test_determinism(self, kind):
        a = run_strategy(kind, SearchSpace(), NOISY, 25, np.random.default_rng(9))
        b = run_strategy(kind, SearchSpace(), NOISY, 25, np.random.default_rng(9))
        assert a.history == b.history and a.final_score == b.final_score

    @pytest.mark.parametrize("kind", BUDGETED)
    def test_final_score_at_best(self, kind):
        out = run_strategy(kind, SearchSpace(), NOISELESS, 25, np.random.default_rng(4), final_reps=3)
        assert out.final_score.repetitions == 3
        assert out.final_score.mean_runtime == pytest.approx(landscape(NOISELESS.kind, [out.best_config])[0])


class TestRandomSearch:
    def test_without_replacement_finds_optimum(self, reduced_space, rng):
        out = run_random_search(reduced_space, NOISELESS, 512, rng, replace=False, final_reps=1)
        assert out.best_search_runtime == brute_force_optimum(NOISELESS, reduced_space)[1]
        assert len(set(t.config for t in out.history)) == 512

    def test_single_sample(self, rng):
        out = run_random_search(SearchSpace(), NOISY, 1, rng, final_reps=1)
        assert out.best_config == out.history[0].config

    def test_dataset_slice(self, rng):
        data = [((1, 1, 1, 1, 1, 1), 5.0, False), ((2, 1, 1, 8, 8, 4), 1.5, False), ((1, 2, 1, 1, 1, 1), 3.0, False)]
        out = run_random_search(SearchSpace(), NOISY, 2, rng, dataset=data, final_reps=1)
        assert out.best_config == (2, 1, 1, 8, 8, 4) and out.evaluations_used == 2

    def test_short_dataset(self, rng):
        with pytest.raises(BudgetError):
            run_random_search(SearchSpace(), NOISY, 5, rng, dataset=[((1,) * 6, 1.0, False)])


class TestRfSurrogate:
    def test_perfect_oracle_finds_optimum(self, reduced_space):
        for seed in range(3):
            out = run_rf_surrogate(reduced_space, NOISELESS, 25, np.random.default_rng(seed), final_reps=1,
                                   fit_predictor=lambda X, y, rng: lambda pool: landscape(NOISELESS.kind, pool))
            assert out.best_search_runtime == brute_force_optimum(NOISELESS, reduced_space)[1]

    def test_predictions_are_distinct(self, reduced_space, rng):
        # constant predictor: every pool entry ties
        out = run_rf_surrogate(reduced_space, NOISELESS, 30, rng, final_reps=1,
                               fit_predictor=lambda X, y, rng: lambda pool: np.zeros(len(pool)))
        assert len(set(t.config for t in out.history[20:])) == 10

    def test_top_k_unique_dedups_and_refills(self, rng):
        pool = np.array([[1] * 6, [1] * 6, [2] * 6, [1] * 6, [3] * 6, [4] * 6])
        preds = np.array([0.0, 0.0, 1.0, 0.0, 2.0, 3.0])
        chosen = top_k_unique(pool, preds, 3, rng)
        assert [tuple(r) for r in chosen] == [(1,) * 6, (2,) * 6, (3,) * 6]

    def test_top_k_random_tie_break(self):
        pool = np.arange(60).reshape(10, 6)
        picks = {tuple(top_k_unique(pool, np.zeros(10), 1, np.random.default_rng(s))[0]) for s in range(30)}
        assert len(picks) > 1

    def test_real_forest_beats_random(self):
        # forest trained on 90 samples then 10 picks vs 100 random samples, over seeds
        space = SearchSpace.box((1, 8), (1, 8))
        rf = [run_rf_surrogate(space, NOISELESS, 100, np.random.default_rng(s), trees=20, final_reps=1)
              .best_search_runtime for s in range(8)]
        rs = [run_random_search(space, NOISELESS, 100, np.random.default_rng(s), final_reps=1)
              .best_search_runtime for s in range(8)]
        assert np.median(rf) < np.median(rs)


class TestGenetic:
    def test_crossover_mask(self):
        mask = [True, True, True, False, False, False]
        assert crossover((1, 2, 3, 4, 5, 6), (7, 8, 9, 1, 2, 3), mask) == (1, 2, 3, 1, 2, 3)

    def test_elitism_without_mutation(self):
        for seed in range(5):
            out = run_ga(SearchSpace(), NOISELESS, 100, np.random.default_rng(seed), mutation_rate=0.0, final_reps=1)
            gens = np.array([t.runtime for t in out.history]).reshape(10, 10).min(1)
            assert np.all(np.diff(gens) <= 0)

    def test_repair_keeps_constraint(self):
        space = SearchSpace(constraint_limit=8)
        out = run_ga(space, NOISY, 100, np.random.default_rng(3), mutation_rate=0.5, final_reps=1)
        assert is_valid_rows(out.history, limit=8)


class TestBoGp:
    def test_one_active_dimension(self, monkeypatch):
        space = SearchSpace()

        def f(X):
            return 1.0 + np.abs(X[:, 0] - 11) / 15.0
        use_landscape(monkeypatch, f)
        valid = enumerate_valid(space)
        q01 = np.quantile(f(valid), 0.01)
        hits = sum(run_bo_gp(space, NOISELESS, 50, np.random.default_rng(s), final_reps=1)
                   .best_search_runtime <= q01 for s in range(100))
        assert hits >= 90

    def test_failure_falls_back(self, monkeypatch, caplog):
        def broken(*a, **k):
            raise strategies.GpNumericalError("forced")
        monkeypatch.setattr(strategies, "gp_fit", broken)
        out = run_bo_gp(SearchSpace(), NOISY, 10, np.random.default_rng(0), final_reps=1)
        assert out.evaluations_used == 10
        assert "falling back" in caplog.text


class TestBoTpe:
    def test_startup_only_is_random_box_search(self):
        out = run_bo_tpe(SearchSpace(), NOISY, 12, np.random.default_rng(6), startup=12, final_reps=1)
        expected = sample_many(SearchSpace(), 12, False, np.random.default_rng(6))
        assert [t.config for t in out.history] == [tuple(r) for r in expected]

    def test_good_density_concentrates(self, monkeypatch):
        use_landscape(monkeypatch, lambda X: 1.0 + np.abs(X[:, 0] - 5))
        out = run_bo_tpe(SearchSpace(), NOISELESS, 100, np.random.default_rng(0), final_reps=1)
        X = np.array([t.config for t in out.history])
        pair = parzen_fit(X, [t.runtime for t in out.history], SearchSpace().lows, SearchSpace().highs)
        assert pair.good[0][5 - 1] > 1 / 16


class TestExhaustive:
    def test_reduced(self, reduced_space, rng):
        out = run_exhaustive(reduced_space, NOISELESS, rng, final_reps=1)
        assert out.evaluations_used == 512
        assert out.best_search_runtime == landscape(NOISELESS.kind, enumerate_valid(reduced_space)).min()

    def test_constrained_reduced(self, rng):
        space = SearchSpace.box((1, 2), (1, 4), constraint_limit=16)
        out = run_exhaustive(space, NOISELESS, rng, final_reps=1)
        assert out.evaluations_used == len(enumerate_valid(space))

    def test_default_add_matches_fixture(self, rng):
        out = run_exhaustive(SearchSpace(), ObjectiveSpec("synthetic-add", noise_sigma=0.0), rng,
                             limit=3 * 10 ** 6, final_reps=1)
        assert out.best_config == (1, 1, 2, 1, 4, 8) and out.best_search_runtime == 1.0

    def test_guard(self, rng):
        with pytest.raises(BudgetError):
            run_exhaustive(SearchSpace(), NOISELESS, rng)
