"""Replicated experiments over benchmarks x strategies x sample sizes.

Results go to an append-only store directory:

``trials.jsonl``
    one line per objective evaluation (search and final re-measurement).
``outcomes.jsonl``
    one line per finished experiment.
``datasets/``
    pre-measured random samples shared by random search and the forest.
``plan.json``
    the resolved plan the store was produced from.

Every experiment gets its own seed derived from the master seed and the
experiment's identity, so the store bytes do not depend on scheduling or
worker count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .objective import ObjectiveSpec, evaluate_many
from .space import PARAM_NAMES, SearchSpace, as_config, sample_many
from .strategies import STRATEGY_KINDS, ExperimentOutcome, Trial, run_strategy

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (25, 50, 100, 200, 400)
DEFAULT_EXPERIMENTS = (800, 400, 200, 100, 50)
DATASET_STRATEGIES = ("random-search", "rf-surrogate")
MASK64 = (1 << 64) - 1

TRIALS_FILE = "trials.jsonl"
OUTCOMES_FILE = "outcomes.jsonl"
PLAN_FILE = "plan.json"


class CapacityError(IndexError):
    pass


class StoreError(RuntimeError):
    pass


def default_experiments(size: int) -> int:
    table = dict(zip(DEFAULT_SIZES, DEFAULT_EXPERIMENTS))
    return table.get(size, max(1, round(20_000 / size)))


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    options: dict = field(default_factory=dict)
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.name is None:
            object.__setattr__(self, "name", self.kind)


@dataclass(frozen=True)
class TournamentPlan:
    benchmarks: tuple
    strategies: tuple
    sample_sizes: tuple = DEFAULT_SIZES
    experiments_per_size: tuple = DEFAULT_EXPERIMENTS
    final_repetitions: int = 10
    master_seed: int = 0
    space: SearchSpace = field(default_factory=SearchSpace)
    dataset_size: int = 20_000
    use_dataset: bool = True
    dataset_per_size: bool = False
    alpha: float = 0.01

    def __post_init__(self):
        if len(self.sample_sizes) != len(self.experiments_per_size):
            raise ValueError("sample_sizes and experiments_per_size must have equal length")
        if any(v < 1 for v in tuple(self.sample_sizes) + tuple(self.experiments_per_size)):
            raise ValueError("sample sizes and experiment counts must be >= 1")
        if self.final_repetitions < 1 or self.dataset_size < 1:
            raise ValueError("final_repetitions and dataset_size must be >= 1")
        names = [b.name for b in self.benchmarks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate benchmark names: {names}")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate strategy names: {names}")

    def cells(self):
        for bench in self.benchmarks:
            for strat in self.strategies:
                for size, n_exp in zip(self.sample_sizes, self.experiments_per_size):
                    yield bench, strat, size, n_exp

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "space": self.space.to_dict(),
            "benchmarks": [
                {"name": b.name, "kind": b.kind, "noise_sigma": b.noise_sigma, "penalty": b.penalty,
                 "external_command": b.external_command, "timeout": b.timeout,
                 "workgroup_limit": b.workgroup_limit}
                for b in self.benchmarks
            ],
            "strategies": [{"name": s.name, "kind": s.kind, "options": dict(s.options)} for s in self.strategies],
            "sample_sizes": list(self.sample_sizes),
            "experiments_per_size": list(self.experiments_per_size),
            "final_repetitions": self.final_repetitions,
            "dataset_size": self.dataset_size,
            "use_dataset": self.use_dataset,
            "dataset_per_size": self.dataset_per_size,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TournamentPlan":
        return cls(
            benchmarks=tuple(ObjectiveSpec(**b) for b in d["benchmarks"]),
            strategies=tuple(StrategySpec(s["kind"], dict(s.get("options", {})), s.get("name"))
                             for s in d["strategies"]),
            sample_sizes=tuple(d["sample_sizes"]),
            experiments_per_size=tuple(d["experiments_per_size"]),
            final_repetitions=d["final_repetitions"],
            master_seed=d["master_seed"],
            space=SearchSpace.from_dict(d["space"]),
            dataset_size=d["dataset_size"],
            use_dataset=d["use_dataset"],
            dataset_per_size=d["dataset_per_size"],
            alpha=d["alpha"],
        )


# -- seeding -----------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _label(s) -> int:
    if isinstance(s, int):
        return s & MASK64
    return int.from_bytes(hashlib.blake2b(str(s).encode(), digest_size=8).digest(), "little")


def derive_seed(master_seed: int, benchmark, strategy, sample_size: int, experiment_index: int) -> int:
    """64-bit seed for one experiment, a pure function of its identity."""
    h = splitmix64(master_seed & MASK64)
    for part in (benchmark, strategy, sample_size, experiment_index):
        h = splitmix64(h ^ _label(part))
    return h


# -- datasets ----------------------------------------------------------------

def pregenerate_dataset(space: SearchSpace, objective: ObjectiveSpec, n: int, rng) -> List[Trial]:
    """``n`` single measurements of uniform valid configurations, in draw order."""
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    X = sample_many(space, n, True, rng)
    runtimes, penalized = evaluate_many(objective, X, rng)
    return [Trial(as_config(x), float(r), bool(p)) for x, r, p in zip(X, runtimes, penalized)]


def subdivide(dataset, sample_size: int, experiment_index: int):
    """Contiguous slice ``[i*S, (i+1)*S)`` of the dataset."""
    end = (experiment_index + 1) * sample_size
    if experiment_index < 0 or end > len(dataset):
        raise CapacityError(
            f"experiment {experiment_index} at size {sample_size} needs {end} records, "
            f"dataset holds {len(dataset)}")
    return dataset[experiment_index * sample_size:end]


def _trial_line(t: Trial, phase=None, **key) -> str:
    rec = dict(key)
    rec.update(zip(PARAM_NAMES, t.config))
    rec["runtime_ms"] = t.runtime
    rec["penalized"] = t.penalized
    if phase is not None:
        rec["phase"] = phase
    return json.dumps(rec)


def write_dataset(path: Path, dataset: List[Trial]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i, t in enumerate(dataset):
            fh.write(_trial_line(t, index=i) + "\n")


def read_dataset(path: Path) -> List[Trial]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            r = json.loads(line)
            out.append(Trial(as_config([r[k] for k in PARAM_NAMES]), r["runtime_ms"], r["penalized"]))
    return out


# -- experiment tasks --------------------------------------------------------

@dataclass(frozen=True)
class Task:
    benchmark: ObjectiveSpec
    strategy: StrategySpec
    sample_size: int
    experiment: int
    seed: int
    space: SearchSpace
    final_reps: int
    dataset: Optional[tuple] = None

    @property
    def key(self):
        return (self.benchmark.name, self.strategy.name, self.sample_size, self.experiment)


def run_task(task: Task) -> ExperimentOutcome:
    rng = np.random.default_rng(task.seed)
    return run_strategy(task.strategy.kind, task.space, task.benchmark, task.sample_size, rng,
                        task.strategy.options, dataset=task.dataset, final_reps=task.final_reps)


def _dataset_for(plan, bench, size, n_exp, cache, store: Path):
    """Dataset backing a random-search/forest cell, generated on first use."""
    if plan.dataset_per_size or size * n_exp > plan.dataset_size:
        key = (bench.name, size)
        n = max(size * n_exp, plan.dataset_size)
        fname = f"{_safe(bench.name)}__size{size}.jsonl"
    else:
        key = (bench.name, 0)
        n = plan.dataset_size
        fname = f"{_safe(bench.name)}.jsonl"
    if key not in cache:
        path = store / "datasets" / fname
        if path.exists():
            cache[key] = read_dataset(path)
        else:
            rng = np.random.default_rng(derive_seed(plan.master_seed, bench.name, "dataset", key[1], 0))
            data = pregenerate_dataset(plan.space, bench, n, rng)
            write_dataset(path, data)
            cache[key] = data
    return cache[key]


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def plan_tasks(plan: TournamentPlan, store: Path, cache=None):
    """Every experiment of the plan, in canonical store order."""
    cache = {} if cache is None else cache
    for bench, strat, size, n_exp in plan.cells():
        dataset = None
        if plan.use_dataset and strat.kind in DATASET_STRATEGIES:
            dataset = _dataset_for(plan, bench, size, n_exp, cache, store)
        for i in range(n_exp):
            seed = derive_seed(plan.master_seed, bench.name, strat.name, size, i)
            chunk = tuple(subdivide(dataset, size, i)) if dataset is not None else None
            yield Task(bench, strat, size, i, seed, plan.space, plan.final_repetitions, chunk)


def total_experiments(plan: TournamentPlan) -> int:
    return sum(n for *_, n in plan.cells())


# -- store ---------------------------------------------------------------------

def _experiment_lines(task: Task, out: ExperimentOutcome):
    key = dict(benchmark=task.benchmark.name, strategy=task.strategy.name,
               size=task.sample_size, experiment=task.experiment)
    lines = []
    for i, t in enumerate(out.history):
        lines.append(_trial_line(t, **key, evaluation=i, phase="search"))
    n = len(out.history)
    for j, r in enumerate(out.final_score.samples):
        t = Trial(out.best_config, r, False)
        lines.append(_trial_line(t, **key, evaluation=n + j, phase="final"))
    outcome = dict(key)
    outcome.update(
        best_config=list(out.best_config),
        best_search_runtime_ms=out.best_search_runtime,
        final_mean_ms=out.final_score.mean_runtime,
        final_samples_ms=list(out.final_score.samples),
        evaluations_used=out.evaluations_used,
    )
    return lines, json.dumps(outcome)


def _read_complete_lines(path: Path) -> List[str]:
    if not path.exists():
        return []
    data = path.read_text(encoding="utf-8")
    lines = data.split("\n")
    # last element is "" for a clean file or a torn partial record
    return lines[:-1]


def _truncate_to(path: Path, lines: List[str]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(line + "\n" for line in lines)


def load_outcomes(store) -> List[dict]:
    return [json.loads(line) for line in _read_complete_lines(Path(store) / OUTCOMES_FILE)]


def load_plan(store) -> TournamentPlan:
    path = Path(store) / PLAN_FILE
    if not path.exists():
        raise StoreError(f"{path} not found")
    return TournamentPlan.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _prepare_store(plan: TournamentPlan, store: Path, resume: bool) -> int:
    """Create or reopen a store; returns the number of complete experiments kept."""
    store.mkdir(parents=True, exist_ok=True)
    plan_path = store / PLAN_FILE
    plan_text = json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n"
    outcomes_path, trials_path = store / OUTCOMES_FILE, store / TRIALS_FILE
    if not resume or not plan_path.exists():
        plan_path.write_text(plan_text, encoding="utf-8")
        _truncate_to(outcomes_path, [])
        _truncate_to(trials_path, [])
        return 0
    if plan_path.read_text(encoding="utf-8") != plan_text:
        raise StoreError(f"store {store} was produced by a different plan; refusing to resume")
    outcomes = _read_complete_lines(outcomes_path)
    trial_lines = sum(json.loads(o)["evaluations_used"] + plan.final_repetitions for o in outcomes)
    trials = _read_complete_lines(trials_path)
    if len(trials) < trial_lines:
        raise StoreError("trial records are missing for completed experiments")
    _truncate_to(outcomes_path, outcomes)
    _truncate_to(trials_path, trials[:trial_lines])
    return len(outcomes)


def run_tournament(plan: TournamentPlan, store, parallelism: int = 1, resume: bool = False,
                   progress: Optional[Callable[[int, int], None]] = None,
                   stop_after: Optional[int] = None) -> Path:
    """Run every experiment of ``plan`` and persist results under ``store``.

    With ``resume`` an existing store from the same plan is continued from
    its last complete experiment; otherwise the store is started afresh.
    ``stop_after`` ends the run after that many newly completed experiments.
    """
    store = Path(store)
    done = _prepare_store(plan, store, resume)
    total = total_experiments(plan)
    if progress:
        progress(done, total)
    tasks = (t for i, t in enumerate(plan_tasks(plan, store)) if i >= done)
    if stop_after is not None:
        tasks = (t for i, t in zip(range(stop_after), tasks))
    with open(store / TRIALS_FILE, "a", encoding="utf-8") as trials_fh, \
            open(store / OUTCOMES_FILE, "a", encoding="utf-8") as outcomes_fh:
        if parallelism > 1:
            pool = ProcessPoolExecutor(max_workers=parallelism)
            results = _ordered_parallel(pool, tasks, parallelism)
        else:
            pool = None
            results = ((t, run_task(t)) for t in tasks)
        try:
            for task, outcome in results:
                lines, outcome_line = _experiment_lines(task, outcome)
                trials_fh.write("\n".join(lines) + "\n")
                trials_fh.flush()
                outcomes_fh.write(outcome_line + "\n")
                outcomes_fh.flush()
                done += 1
                if progress:
                    progress(done, total)
        finally:
            if pool is not None:
                pool.shutdown(cancel_futures=True)
            os.fsync(trials_fh.fileno())
            os.fsync(outcomes_fh.fileno())
    return store


def _ordered_parallel(pool, tasks, parallelism):
    """Submit tasks with a bounded window and yield results in submission order."""
    window = []
    for task in tasks:
        window.append((task, pool.submit(run_task, task)))
        if len(window) >= 4 * parallelism:
            t, fut = window.pop(0)
            yield t, fut.result()
    for t, fut in window:
        yield t, fut.result()


def store_complete(plan: TournamentPlan, store) -> List[tuple]:
    """Cells lacking experiments, as ``(benchmark, strategy, size, have, need)``."""
    counts = {}
    for o in load_outcomes(store):
        k = (o["benchmark"], o["strategy"], o["size"])
        counts[k] = counts.get(k, 0) + 1
    missing = []
    for bench, strat, size, n_exp in plan.cells():
        have = counts.get((bench.name, strat.name, size), 0)
        if have < n_exp:
            missing.append((bench.name, strat.name, size, have, n_exp))
    return missing


class ProgressPrinter:
    """Progress/ETA line on a stream, at most once per ``interval`` seconds."""

    def __init__(self, stream, interval: float = 1.0):
        self.stream = stream
        self.interval = interval
        self._start = None
        self._start_done = 0
        self._last = 0.0

    def __call__(self, done: int, total: int):
        now = time.monotonic()
        if self._start is None:
            self._start, self._start_done = now, done
        if done < total and now - self._last < self.interval:
            return
        self._last = now
        rate = (done - self._start_done) / max(now - self._start, 1e-9)
        eta = f"{(total - done) / rate:.0f}s" if rate > 0 else "?"
        self.stream.write(f"[{done}/{total}] experiments, ETA {eta}\n")
        self.stream.flush()
