"""YAML plan files: parsing, validation with line numbers, and resolved dumps.

Example::

    seed: 1234
    benchmarks:
      - kind: synthetic-add
        noise_sigma: 0.05
    strategies: [random-search, rf-surrogate, genetic, bo-gp, bo-tpe]
    sample_sizes: [25, 50]
    experiments: [40, 20]
    options:
      ga: {mutation_rate: 0.1}
      bo_tpe: {gamma: 0.15}
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

import yaml

from .objective import DEFAULT_NOISE, KINDS, ObjectiveSpec
from .space import PARAM_NAMES, SearchSpace
from .strategies import RF_PREDICTIONS, STRATEGY_KINDS, ga_population_generations
from .tournament import StrategySpec, TournamentPlan, default_experiments

NAMESPACES = {
    "random-search": "rs",
    "rf-surrogate": "rf",
    "genetic": "ga",
    "bo-gp": "bo_gp",
    "bo-tpe": "bo_tpe",
    "exhaustive": "exhaustive",
}

OPTION_DEFAULTS = {
    "rs": {"replace": True},
    "rf": {"trees": 100, "max_depth": 10, "feature_subset": 2, "pool_cap": None, "predictions": RF_PREDICTIONS},
    "ga": {"population": None, "generations": None, "mutation_rate": 0.1, "keep_fraction": 0.5},
    "bo_gp": {"init_fraction": 0.08, "candidates": 1000, "noise_variance": 0.01,
              "length_scales": [0.1, 0.2, 0.5], "log_target": True},
    "bo_tpe": {"gamma": 0.15, "candidates": 24, "startup": None},
    "exhaustive": {"limit": 1_000_000},
}

MIN_BUDGET = {"random-search": 1, "genetic": 8, "bo-gp": 5, "bo-tpe": 5}

TOP_KEYS = {"seed", "space", "benchmarks", "strategies", "options", "sample_sizes", "experiments",
            "final_repetitions", "dataset", "alpha", "noise_sigma", "output"}
BENCH_KEYS = {"kind", "name", "noise_sigma", "penalty", "external_command", "timeout", "workgroup_limit"}
SPACE_KEYS = set(PARAM_NAMES) | {"constraint_limit"}
DATASET_KEYS = {"enabled", "size", "per_size"}
OUTPUT_KEYS = {"dir"}


class PlanError(ValueError):
    """Invalid plan; the message names the file, line and offending key."""


class _Map(dict):
    line = 0
    key_lines: dict = {}


class _DuplicateKey(Exception):
    def __init__(self, line, key):
        super().__init__(key)
        self.line = line
        self.key = key


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    m = _Map()
    m.line = node.start_mark.line + 1
    m.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in m:
            raise _DuplicateKey(key_node.start_mark.line + 1, key)
        m[key] = loader.construct_object(value_node, deep=True)
        m.key_lines[key] = key_node.start_mark.line + 1
    return m


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


class _Ctx:
    def __init__(self, source: str):
        self.source = source

    def fail(self, where, message):
        line = where if isinstance(where, int) else getattr(where, "line", 0)
        raise PlanError(f"{self.source}:{line}: {message}")

    def line_of(self, mapping, key):
        return getattr(mapping, "key_lines", {}).get(key, getattr(mapping, "line", 0))

    def check_keys(self, mapping, allowed, path):
        if not isinstance(mapping, dict):
            self.fail(0, f"{path} must be a mapping")
        for key in mapping:
            if key not in allowed:
                self.fail(self.line_of(mapping, key), f"unknown key {path + '.' if path else ''}{key}")


def _int(ctx, m, key, path, minimum=None):
    v = m[key]
    if isinstance(v, bool) or not isinstance(v, int):
        ctx.fail(ctx.line_of(m, key), f"{path} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        ctx.fail(ctx.line_of(m, key), f"{path} must be >= {minimum}, got {v}")
    return v


def _num(ctx, m, key, path):
    v = m[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.fail(ctx.line_of(m, key), f"{path} must be a number, got {v!r}")
    return float(v)


def _int_list(ctx, m, key, path):
    v = m[key]
    if not isinstance(v, list) or not v or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1
                                                   for x in v):
        ctx.fail(ctx.line_of(m, key), f"{path} must be a non-empty list of positive integers")
    return tuple(v)


def _space(ctx, doc):
    if "space" not in doc:
        return SearchSpace()
    m = doc["space"]
    ctx.check_keys(m, SPACE_KEYS, "space")
    default = SearchSpace()
    ranges = []
    for name, r in zip(PARAM_NAMES, default.ranges):
        if name in m:
            v = m[name]
            if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) for x in v) and 1 <= v[0] <= v[1]):
                ctx.fail(ctx.line_of(m, name), f"space.{name} must be [low, high] with 1 <= low <= high")
            ranges.append(tuple(v))
        else:
            ranges.append(r)
    limit = _int(ctx, m, "constraint_limit", "space.constraint_limit", 1) if "constraint_limit" in m else 256
    return SearchSpace(tuple(ranges), limit)


def _benchmarks(ctx, doc, noise_default):
    items = doc.get("benchmarks")
    if not isinstance(items, list) or not items:
        ctx.fail(ctx.line_of(doc, "benchmarks"), "benchmarks must be a non-empty list")
    out = []
    for i, b in enumerate(items):
        path = f"benchmarks[{i}]"
        if isinstance(b, str):
            b = _Map(kind=b)
            b.line = ctx.line_of(doc, "benchmarks")
        ctx.check_keys(b, BENCH_KEYS, path)
        if b.get("kind") not in KINDS:
            ctx.fail(ctx.line_of(b, "kind"), f"{path}.kind must be one of {', '.join(KINDS)}")
        kw = {"kind": b["kind"], "noise_sigma": noise_default}
        if "name" in b:
            kw["name"] = str(b["name"])
        for key in ("noise_sigma", "penalty", "timeout"):
            if key in b:
                kw[key] = _num(ctx, b, key, f"{path}.{key}")
        if "workgroup_limit" in b:
            kw["workgroup_limit"] = _int(ctx, b, "workgroup_limit", f"{path}.workgroup_limit", 1)
        if "external_command" in b:
            kw["external_command"] = str(b["external_command"])
        try:
            out.append(ObjectiveSpec(**kw))
        except ValueError as exc:
            ctx.fail(getattr(b, "line", 0), f"{path}: {exc}")
    return tuple(out)


def _options(ctx, doc):
    opts = copy.deepcopy(OPTION_DEFAULTS)
    if "options" not in doc:
        return opts
    m = doc["options"]
    ctx.check_keys(m, set(OPTION_DEFAULTS), "options")
    for ns, values in m.items():
        if values is None:
            continue
        ctx.check_keys(values, set(OPTION_DEFAULTS[ns]), f"options.{ns}")
        for key, v in values.items():
            default = OPTION_DEFAULTS[ns][key]
            if isinstance(default, bool) and not isinstance(v, bool):
                ctx.fail(ctx.line_of(values, key), f"options.{ns}.{key} must be true or false")
            if isinstance(default, (int, float)) and not isinstance(default, bool) and v is not None and (
                    isinstance(v, bool) or not isinstance(v, (int, float))):
                ctx.fail(ctx.line_of(values, key), f"options.{ns}.{key} must be a number")
            opts[ns][key] = v
    return opts


def _strategies(ctx, doc, opts):
    items = doc.get("strategies")
    if not isinstance(items, list) or not items:
        ctx.fail(ctx.line_of(doc, "strategies"), "strategies must be a non-empty list")
    out = []
    for kind in items:
        if kind not in STRATEGY_KINDS:
            ctx.fail(ctx.line_of(doc, "strategies"), f"unknown strategy {kind!r}; expected one of {', '.join(STRATEGY_KINDS)}")
        options = dict(opts[NAMESPACES[kind]])
        if kind == "bo-gp":
            options["length_scales"] = tuple(options["length_scales"])
        out.append(StrategySpec(kind, options))
    if len({s.kind for s in out}) != len(out):
        ctx.fail(ctx.line_of(doc, "strategies"), "strategies must not repeat")
    return tuple(out)


def _check_budgets(ctx, doc, strategies, sizes, opts):
    line = ctx.line_of(doc, "sample_sizes")
    for s in strategies:
        for n in sizes:
            need = MIN_BUDGET.get(s.kind)
            if s.kind == "rf-surrogate":
                need = s.options["predictions"] + 2
            if need is not None and n < need:
                ctx.fail(line, f"sample size {n} below the minimum budget {need} of {s.kind}")
            if s.kind == "genetic":
                pop, gens = ga_population_generations(n, s.options["population"], s.options["generations"])
                if pop * gens > n or gens < 1:
                    ctx.fail(ctx.line_of(doc, "options"),
                             f"options.ga: population {pop} x generations {gens} does not fit budget {n}")
            if s.kind == "bo-tpe" and s.options["startup"] is not None and s.options["startup"] > n:
                ctx.fail(ctx.line_of(doc, "options"), f"options.bo_tpe.startup exceeds budget {n}")


def parse_plan(text: str, source: str = "<plan>") -> "LoadedPlan":
    ctx = _Ctx(source)
    try:
        doc = yaml.load(text, Loader=_Loader)
    except _DuplicateKey as exc:
        ctx.fail(exc.line, f"duplicate key {exc.key}")
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        ctx.fail(mark.line + 1 if mark else 0, f"YAML syntax error: {getattr(exc, 'problem', exc)}")
    if not isinstance(doc, dict):
        ctx.fail(0, "plan must be a mapping")
    ctx.check_keys(doc, TOP_KEYS, "")
    noise = _num(ctx, doc, "noise_sigma", "noise_sigma") if "noise_sigma" in doc else DEFAULT_NOISE
    space = _space(ctx, doc)
    benchmarks = _benchmarks(ctx, doc, noise)
    opts = _options(ctx, doc)
    strategies = _strategies(ctx, doc, opts)
    sizes = _int_list(ctx, doc, "sample_sizes", "sample_sizes") if "sample_sizes" in doc else (25, 50, 100, 200, 400)
    if "experiments" in doc:
        exps = _int_list(ctx, doc, "experiments", "experiments")
        if len(exps) != len(sizes):
            ctx.fail(ctx.line_of(doc, "experiments"), "experiments must align with sample_sizes")
    else:
        exps = tuple(default_experiments(n) for n in sizes)
    _check_budgets(ctx, doc, strategies, sizes, opts)
    reps = _int(ctx, doc, "final_repetitions", "final_repetitions", 1) if "final_repetitions" in doc else 10
    seed = _int(ctx, doc, "seed", "seed", 0) if "seed" in doc else 0
    alpha = _num(ctx, doc, "alpha", "alpha") if "alpha" in doc else 0.01
    if not 0 < alpha < 1:
        ctx.fail(ctx.line_of(doc, "alpha"), "alpha must lie in (0, 1)")
    dataset = {"enabled": True, "size": 20_000, "per_size": False}
    if "dataset" in doc:
        d = doc["dataset"]
        ctx.check_keys(d, DATASET_KEYS, "dataset")
        if "size" in d:
            dataset["size"] = _int(ctx, d, "size", "dataset.size", 1)
        for key in ("enabled", "per_size"):
            if key in d:
                if not isinstance(d[key], bool):
                    ctx.fail(ctx.line_of(d, key), f"dataset.{key} must be true or false")
                dataset[key] = d[key]
    output_dir = None
    if "output" in doc:
        ctx.check_keys(doc["output"], OUTPUT_KEYS, "output")
        output_dir = doc["output"].get("dir")
    plan = TournamentPlan(benchmarks, strategies, sizes, exps, reps, seed, space,
                          dataset["size"], dataset["enabled"], dataset["per_size"], alpha)
    return LoadedPlan(plan, output_dir)


class LoadedPlan:
    def __init__(self, plan: TournamentPlan, output_dir: Optional[str]):
        self.plan = plan
        self.output_dir = output_dir


def load_plan_file(path) -> LoadedPlan:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PlanError(f"{path}: cannot read plan: {exc}") from None
    return parse_plan(text, str(path))


def resolved_plan(plan: TournamentPlan, output_dir: Optional[str] = None) -> dict:
    """Plan-file document with every default spelled out."""
    options = {}
    for s in plan.strategies:
        ns = NAMESPACES[s.kind]
        opts = dict(s.options)
        if "length_scales" in opts:
            opts["length_scales"] = list(opts["length_scales"])
        options[ns] = opts
    doc = {
        "seed": plan.master_seed,
        "space": {**{n: list(r) for n, r in zip(PARAM_NAMES, plan.space.ranges)},
                  "constraint_limit": plan.space.constraint_limit},
        "benchmarks": [
            {k: v for k, v in {
                "kind": b.kind, "name": b.name, "noise_sigma": b.noise_sigma, "penalty": b.penalty,
                "external_command": b.external_command, "timeout": b.timeout,
                "workgroup_limit": b.workgroup_limit}.items() if v is not None}
            for b in plan.benchmarks
        ],
        "strategies": [s.kind for s in plan.strategies],
        "options": options,
        "sample_sizes": list(plan.sample_sizes),
        "experiments": list(plan.experiments_per_size),
        "final_repetitions": plan.final_repetitions,
        "dataset": {"enabled": plan.use_dataset, "size": plan.dataset_size, "per_size": plan.dataset_per_size},
        "alpha": plan.alpha,
    }
    if output_dir is not None:
        doc["output"] = {"dir": str(output_dir)}
    return doc


def dump_resolved(plan: TournamentPlan, output_dir: Optional[str] = None) -> str:
    return yaml.safe_dump(resolved_plan(plan, output_dir), sort_keys=False, default_flow_style=None)
