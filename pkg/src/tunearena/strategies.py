"""Search strategies.  Each spends a fixed evaluation budget and reports its pick.

Random search, random-forest surrogate and the genetic algorithm only ever
evaluate configurations that satisfy the work-group constraint.  The two
Bayesian-optimisation variants search the unconstrained box and pay the
penalty for invalid picks, as off-the-shelf SMBO libraries offer no way to
declare the constraint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .objective import FinalScore, ObjectiveSpec, evaluate_final, evaluate_many
from .space import Configuration, SearchSpace, as_config, count_valid, enumerate_valid, grid_index, sample_many
from .surrogates.forest import forest_fit, forest_predict, forest_predict_grid
from .surrogates.gp import GpNumericalError, expected_improvement, gp_fit, gp_posterior
from .surrogates.parzen import parzen_fit, parzen_score, sample_good

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("random-search", "rf-surrogate", "genetic", "bo-gp", "bo-tpe", "exhaustive")

GA_SCHEDULE = {25: (8, 3), 50: (10, 5), 100: (10, 10), 200: (20, 10), 400: (20, 20)}
RF_PREDICTIONS = 10
EXHAUSTIVE_LIMIT = 10 ** 6


class BudgetError(ValueError):
    pass


class Trial(NamedTuple):
    config: Configuration
    runtime: float
    penalized: bool


@dataclass
class ExperimentOutcome:
    best_config: Configuration
    best_search_runtime: float
    final_score: FinalScore
    history: List[Trial] = field(default_factory=list)

    @property
    def evaluations_used(self) -> int:
        return len(self.history)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([t.runtime for t in self.history])


class _Recorder:
    """Evaluates configurations against the objective and keeps the history."""

    def __init__(self, objective: ObjectiveSpec, rng):
        self.objective = objective
        self.rng = rng
        self.history: List[Trial] = []

    def extend(self, trials):
        self.history.extend(trials)

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64).reshape(-1, 6)
        runtimes, penalized = evaluate_many(self.objective, X, self.rng)
        self.history.extend(Trial(as_config(x), float(r), bool(p)) for x, r, p in zip(X, runtimes, penalized))
        return runtimes

    def outcome(self, final_reps, best_index=None) -> ExperimentOutcome:
        runtimes = np.array([t.runtime for t in self.history])
        i = int(np.argmin(runtimes)) if best_index is None else best_index
        best = self.history[i]
        final = evaluate_final(self.objective, best.config, self.rng, final_reps)
        return ExperimentOutcome(best.config, best.runtime, final, self.history)


def _trials_from_dataset(dataset) -> List[Trial]:
    return [t if isinstance(t, Trial) else Trial(as_config(t[0]), float(t[1]), bool(t[2])) for t in dataset]


def _check_dataset(dataset, n):
    if dataset is not None and len(dataset) < n:
        raise BudgetError(f"dataset slice holds {len(dataset)} records, {n} needed")


def run_random_search(space: SearchSpace, objective: ObjectiveSpec, budget: int, rng, *,
                      replace: bool = True, dataset=None, final_reps: int = 10) -> ExperimentOutcome:
    """Evaluate ``budget`` uniform valid configurations and keep the fastest.

    With ``dataset`` the pre-measured records are used instead of live
    evaluations.  ``replace=False`` draws distinct configurations.
    """
    if budget < 1:
        raise BudgetError("random search needs budget >= 1")
    rec = _Recorder(objective, rng)
    if dataset is not None:
        _check_dataset(dataset, budget)
        rec.extend(_trials_from_dataset(dataset[:budget]))
    elif replace:
        rec.evaluate(sample_many(space, budget, True, rng))
    else:
        valid = enumerate_valid(space)
        if budget > len(valid):
            raise BudgetError(f"budget {budget} exceeds {len(valid)} valid configurations")
        rec.evaluate(valid[rng.choice(len(valid), size=budget, replace=False)])
    return rec.outcome(final_reps)


def top_k_unique(pool: np.ndarray, predictions: np.ndarray, k: int, rng) -> np.ndarray:
    """The ``k`` distinct rows of ``pool`` with the lowest predictions.

    Equal predictions are ordered randomly; duplicate rows are dropped and
    the selection continues down the ranking.
    """
    pool = np.asarray(pool)
    n = len(pool)
    m = min(n, k)
    while True:
        cut = np.partition(predictions, m - 1)[m - 1] if m < n else np.inf
        idx = np.flatnonzero(predictions <= cut)
        order = idx[np.lexsort((rng.random(idx.size), predictions[idx]))]
        _, first = np.unique(pool[order], axis=0, return_index=True)
        chosen = order[np.sort(first)]
        if len(chosen) >= k or m >= n:
            return pool[chosen[:k]]
        m = min(n, 2 * m)


def _forest_predictor(space, trees, max_depth, feature_subset):
    def fit(X, y, rng):
        model = forest_fit(X, y, rng, trees_count=trees, max_depth=max_depth,
                           feature_subset_size=feature_subset)

        def predict(pool):
            if len(pool) > 50_000:
                grid = forest_predict_grid(model, space.lows, space.highs)
                return grid.ravel()[grid_index(space, pool)]
            return forest_predict(model, pool)
        return predict
    return fit


def run_rf_surrogate(space: SearchSpace, objective: ObjectiveSpec, budget: int, rng, *,
                     trees: int = 100, max_depth: Optional[int] = 10, feature_subset: int = 2,
                     pool_cap: Optional[int] = None, predictions: int = RF_PREDICTIONS,
                     dataset=None, fit_predictor: Optional[Callable] = None,
                     final_reps: int = 10) -> ExperimentOutcome:
    """Train a random forest on ``budget - 10`` valid samples, then measure its top 10 picks.

    The candidate pool is the whole valid space unless ``pool_cap`` asks for
    a uniform subsample.  The best of the measured predictions is the result.
    ``fit_predictor(X, y, rng) -> predict(pool)`` replaces the forest.
    """
    if budget < predictions + 2:
        raise BudgetError(f"rf-surrogate needs budget >= {predictions + 2}, got {budget}")
    n_train = budget - predictions
    rec = _Recorder(objective, rng)
    if dataset is not None:
        _check_dataset(dataset, n_train)
        rec.extend(_trials_from_dataset(dataset[:n_train]))
    else:
        rec.evaluate(sample_many(space, n_train, True, rng))
    X = np.array([t.config for t in rec.history], dtype=np.int64)
    y = np.array([t.runtime for t in rec.history])
    if fit_predictor is None:
        fit_predictor = _forest_predictor(space, trees, max_depth, feature_subset)
    predict = fit_predictor(X, y, rng)
    pool = enumerate_valid(space)
    if pool_cap is not None and pool_cap < len(pool):
        pool = pool[np.sort(rng.choice(len(pool), size=pool_cap, replace=False))]
    picks = top_k_unique(pool, np.asarray(predict(pool), dtype=np.float64), predictions, rng)
    if len(picks) < predictions:
        # tiny pools: top up with repeats of the best pick to keep the budget exact
        picks = np.concatenate([picks, np.repeat(picks[:1], predictions - len(picks), axis=0)])
    measured = rec.evaluate(picks)
    return rec.outcome(final_reps, best_index=n_train + int(np.argmin(measured)))


def ga_schedule(budget: int):
    """(population, generations) for a budget; population * generations <= budget."""
    if budget in GA_SCHEDULE:
        return GA_SCHEDULE[budget]
    pop = max(2, 2 * int(math.floor(math.sqrt(budget) / 2 + 0.5)))
    return pop, budget // pop


def ga_population_generations(budget: int, population=None, generations=None):
    pop, gens = ga_schedule(budget)
    if population:
        pop = population
        gens = generations or budget // pop
    elif generations:
        gens = generations
        pop = max(2, budget // gens)
    return pop, gens


def crossover(a, b, mask) -> tuple:
    """Child takes genes from ``a`` where ``mask`` is true and from ``b`` elsewhere."""
    return tuple(int(x) if m else int(y) for x, y, m in zip(a, b, mask))


def _repair(space, child, rng):
    child = np.array(child, dtype=np.int64)
    lows, highs = space.lows[3:], space.highs[3:]
    while child[3] * child[4] * child[5] > space.constraint_limit:
        child[3:] = rng.integers(lows, highs + 1)
    return child


def run_ga(space: SearchSpace, objective: ObjectiveSpec, budget: int, rng, *,
           population: Optional[int] = None, generations: Optional[int] = None,
           mutation_rate: float = 0.1, keep_fraction: float = 0.5,
           final_reps: int = 10) -> ExperimentOutcome:
    """Generational GA with truncation selection, half-gene crossover and uniform mutation.

    Every generation measures the whole population, survivors included, so
    ``population * generations`` evaluations are spent.
    """
    if budget < 8:
        raise BudgetError("genetic algorithm needs budget >= 8")
    pop, gens = ga_population_generations(budget, population, generations)
    if pop * gens > budget:
        raise BudgetError(f"population {pop} x generations {gens} exceeds budget {budget}")
    lows, highs = space.lows, space.highs
    keep = max(2, int(round(pop * keep_fraction)))
    rec = _Recorder(objective, rng)
    members = sample_many(space, pop, True, rng)
    for gen in range(gens):
        fitness = rec.evaluate(members)
        if gen == gens - 1:
            break
        survivors = members[np.argsort(fitness, kind="stable")[:keep]]
        children = []
        while len(survivors) + len(children) < pop:
            i, j = rng.choice(len(survivors), size=2, replace=False)
            mask = np.zeros(6, dtype=bool)
            mask[rng.choice(6, size=3, replace=False)] = True
            child = np.array(crossover(survivors[i], survivors[j], mask), dtype=np.int64)
            mutate = rng.random(6) < mutation_rate
            if mutate.any():
                child[mutate] = rng.integers(lows[mutate], highs[mutate] + 1)
            children.append(_repair(space, child, rng))
        members = np.concatenate([survivors, np.array(children, dtype=np.int64).reshape(-1, 6)])
    return rec.outcome(final_reps)


def _normalize(space, X):
    span = np.maximum(space.highs - space.lows, 1)
    return (np.asarray(X, dtype=np.float64) - space.lows) / span


def _lexicographic_first(X: np.ndarray) -> int:
    return int(np.lexsort(X.T[::-1])[0])


def run_bo_gp(space: SearchSpace, objective: ObjectiveSpec, budget: int, rng, *,
              init_fraction: float = 0.08, candidates: int = 1000, noise_variance: float = 0.01,
              length_scales=(0.1, 0.2, 0.5), log_target: bool = True,
              final_reps: int = 10) -> ExperimentOutcome:
    """Bayesian optimisation with a GP surrogate and Expected Improvement.

    ``max(2, round(init_fraction * budget))`` random box points seed the
    model; each remaining evaluation goes to the EI maximiser among
    ``candidates`` continuous box draws rounded to integers.  The GP models
    log-runtime by default so the penalty does not flatten the landscape.
    """
    if budget < 5:
        raise BudgetError("bo-gp needs budget >= 5")
    n_init = min(budget, max(2, int(math.floor(init_fraction * budget + 0.5))))
    rec = _Recorder(objective, rng)
    rec.evaluate(sample_many(space, n_init, False, rng))
    lo = space.lows.astype(np.float64)
    hi = space.highs.astype(np.float64)
    for _ in range(budget - n_init):
        X = np.array([t.config for t in rec.history], dtype=np.int64)
        y = np.array([t.runtime for t in rec.history])
        if log_target:
            y = np.log(y)
        cand = np.floor(rng.uniform(lo, hi, size=(candidates, 6)) + 0.5).astype(np.int64)
        try:
            model = gp_fit(_normalize(space, X), y, noise_variance, length_scales)
            mean, var = gp_posterior(model, _normalize(space, cand))
        except GpNumericalError:
            logger.warning("GP fit failed; falling back to a random sample")
            rec.evaluate(sample_many(space, 1, False, rng))
            continue
        ei = expected_improvement(mean, var, float(y.min()))
        ties = cand[ei == ei.max()]
        rec.evaluate(ties[_lexicographic_first(ties)])
    return rec.outcome(final_reps)


def tpe_startup(budget: int) -> int:
    return min(20, math.ceil(budget / 4))


def run_bo_tpe(space: SearchSpace, objective: ObjectiveSpec, budget: int, rng, *,
               gamma: float = 0.15, candidates: int = 24, startup: Optional[int] = None,
               final_reps: int = 10) -> ExperimentOutcome:
    """Tree-Parzen-estimator search over the unconstrained box.

    After ``startup`` random draws, each step samples ``candidates`` points
    from the good-set density and measures the one with the highest
    good/bad density ratio.
    """
    if budget < 5:
        raise BudgetError("bo-tpe needs budget >= 5")
    n_start = min(budget, tpe_startup(budget) if startup is None else max(2, startup))
    rec = _Recorder(objective, rng)
    rec.evaluate(sample_many(space, n_start, False, rng))
    for _ in range(budget - n_start):
        X = np.array([t.config for t in rec.history], dtype=np.int64)
        y = np.array([t.runtime for t in rec.history])
        pair = parzen_fit(X, y, space.lows, space.highs, gamma)
        cand = sample_good(pair, candidates, rng)
        rec.evaluate(cand[int(np.argmax(parzen_score(pair, cand)))])
    return rec.outcome(final_reps)


def run_exhaustive(space: SearchSpace, objective: ObjectiveSpec, rng, *, limit: int = EXHAUSTIVE_LIMIT,
                   final_reps: int = 10) -> ExperimentOutcome:
    """Measure every valid configuration once.  Test oracle for small spaces."""
    n = count_valid(space)
    if n > limit:
        raise BudgetError(f"exhaustive search refused: {n} valid configurations > limit {limit}")
    rec = _Recorder(objective, rng)
    rec.evaluate(enumerate_valid(space))
    return rec.outcome(final_reps)


def run_strategy(kind: str, space: SearchSpace, objective: ObjectiveSpec, budget: int, rng,
                 options: Optional[dict] = None, dataset=None, final_reps: int = 10) -> ExperimentOutcome:
    """Dispatch by strategy kind; ``options`` are the kind's keyword hyperparameters."""
    options = dict(options or {})
    if kind == "random-search":
        return run_random_search(space, objective, budget, rng, dataset=dataset, final_reps=final_reps, **options)
    if kind == "rf-surrogate":
        return run_rf_surrogate(space, objective, budget, rng, dataset=dataset, final_reps=final_reps, **options)
    if kind == "genetic":
        return run_ga(space, objective, budget, rng, final_reps=final_reps, **options)
    if kind == "bo-gp":
        return run_bo_gp(space, objective, budget, rng, final_reps=final_reps, **options)
    if kind == "bo-tpe":
        return run_bo_tpe(space, objective, budget, rng, final_reps=final_reps, **options)
    if kind == "exhaustive":
        return run_exhaustive(space, objective, rng, final_reps=final_reps, **options)
    raise ValueError(f"unknown strategy kind {kind!r}")
