"""Measurement functions: synthetic tuning landscapes and an external-program adapter.

Synthetic landscapes stand in for GPU kernels.  They share a common core with
warp quantisation (plateaus between multiples of 32 threads), a thread
coarsening sweet spot at two elements per thread and a preference for 32-wide
work groups.  The harris variant adds an anisotropy ridge, the mandelbrot
variant adds a multimodal interaction between coarsening and work-group sizes.
"""

from __future__ import annotations

import logging
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .space import PARAM_NAMES

logger = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("synthetic-add", "synthetic-harris", "synthetic-mandelbrot")
KINDS = SYNTHETIC_KINDS + ("external",)

DEFAULT_PENALTY = 10_000.0
DEFAULT_NOISE = 0.05
DEFAULT_TIMEOUT = 60.0


class WrongKindError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    noise_sigma: float = DEFAULT_NOISE
    penalty: float = DEFAULT_PENALTY
    external_command: Optional[str] = None
    timeout: float = DEFAULT_TIMEOUT
    workgroup_limit: int = 256
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise WrongKindError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        if self.kind == "external" and not self.external_command:
            raise ValueError("external objective requires external_command")
        if self.name is None:
            object.__setattr__(self, "name", self.kind)

    @property
    def synthetic(self) -> bool:
        return self.kind in SYNTHETIC_KINDS


@dataclass(frozen=True)
class Measurement:
    runtime: float
    penalized: bool = False


@dataclass(frozen=True)
class FinalScore:
    mean_runtime: float
    samples: tuple = field(default_factory=tuple)

    @property
    def repetitions(self) -> int:
        return len(self.samples)


def landscape(kind: str, X: np.ndarray, penalty: float = DEFAULT_PENALTY, limit: int = 256) -> np.ndarray:
    """Noiseless runtime (ms) of each row of the (n, 6) integer array ``X``."""
    if kind not in SYNTHETIC_KINDS:
        raise WrongKindError(f"{kind!r} has no synthetic landscape")
    X = np.asarray(X, dtype=np.int64).reshape(-1, 6)
    xt, yt, zt, xw, yw, zw = (X[:, i] for i in range(6))
    T = (xt * yt * zt).astype(np.float64)
    W = xw * yw * zw
    warp_eff = W / (32.0 * np.ceil(W / 32.0))
    value = (1.0 + 0.6 * (1.0 - warp_eff)
             + 0.25 * np.abs(np.log2(T) - 1.0)
             + 0.15 * np.abs(np.log2(W.astype(np.float64)) - 5.0))
    if kind == "synthetic-harris":
        value = value + 0.4 * np.abs(np.log2(xw.astype(np.float64)) - np.log2(yw.astype(np.float64)))
        value = value + 0.2 * (zw > 1)
    elif kind == "synthetic-mandelbrot":
        value = value + 0.3 * (1.0 + np.sin((xt * yw + yt * xw).astype(np.float64))) / 2.0
    return np.where(W > limit, penalty, value)


def base_value(spec: ObjectiveSpec, c: Sequence[int]) -> float:
    """Deterministic landscape value for one configuration."""
    if not spec.synthetic:
        raise WrongKindError("base_value is only defined for synthetic objectives")
    return float(landscape(spec.kind, np.asarray(c)[None, :], spec.penalty, spec.workgroup_limit)[0])


def evaluate_once(spec: ObjectiveSpec, c: Sequence[int], rng: np.random.Generator) -> Measurement:
    """Single noisy measurement of one configuration.

    Every synthetic call consumes exactly one standard normal from ``rng``
    so that stream positions do not depend on which configurations were
    penalised.
    """
    if not spec.synthetic:
        runtime = _run_external(spec.external_command, c, spec.timeout)
        if runtime is None:
            return Measurement(spec.penalty, True)
        return Measurement(runtime, False)
    runtimes, penalized = evaluate_many(spec, np.asarray(c)[None, :], rng)
    return Measurement(float(runtimes[0]), bool(penalized[0]))


def evaluate_many(spec: ObjectiveSpec, X: np.ndarray, rng: np.random.Generator):
    """Measure each row of ``X`` once.  Returns ``(runtimes, penalized)`` arrays."""
    X = np.asarray(X, dtype=np.int64).reshape(-1, 6)
    if not spec.synthetic:
        ms = [evaluate_once(spec, row, rng) for row in X]
        return (np.array([m.runtime for m in ms], dtype=np.float64),
                np.array([m.penalized for m in ms], dtype=bool))
    base = landscape(spec.kind, X, spec.penalty, spec.workgroup_limit)
    z = rng.standard_normal(len(X))
    penalized = X[:, 3] * X[:, 4] * X[:, 5] > spec.workgroup_limit
    if spec.noise_sigma == 0:
        return base, penalized
    noisy = base * np.exp(spec.noise_sigma * z)
    return np.where(penalized, base, noisy), penalized


def evaluate_final(spec: ObjectiveSpec, c: Sequence[int], rng: np.random.Generator, reps: int = 10) -> FinalScore:
    """Re-measure the chosen configuration ``reps`` times and average."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    X = np.repeat(np.asarray(c, dtype=np.int64)[None, :], reps, axis=0)
    runtimes, _ = evaluate_many(spec, X, rng)
    samples = tuple(float(v) for v in runtimes)
    # shifted mean: exactly the sample value when all repetitions agree
    mean = runtimes[0] + float(np.mean(runtimes - runtimes[0]))
    return FinalScore(float(mean), samples)


_PLACEHOLDER = re.compile(r"\{(" + "|".join(PARAM_NAMES) + r")\}")


def render_command(template: str, c: Sequence[int]) -> list:
    values = dict(zip(PARAM_NAMES, (int(v) for v in c)))
    return shlex.split(_PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template))


def _run_external(template: str, c: Sequence[int], timeout: float = DEFAULT_TIMEOUT) -> Optional[float]:
    argv = render_command(template, c)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        logger.warning("external run timed out after %.1fs: %s", timeout, argv)
        return None
    except OSError as exc:
        logger.warning("external run failed to start: %s (%s)", argv, exc)
        return None
    if proc.returncode != 0:
        logger.warning("external run exited with %d: %s", proc.returncode, argv)
        return None
    lines = proc.stdout.strip().splitlines()
    try:
        runtime = float(lines[-1].strip())
    except (IndexError, ValueError):
        logger.warning("could not parse runtime from output of %s", argv)
        return None
    if not np.isfinite(runtime) or runtime <= 0:
        logger.warning("non-positive runtime %r from %s", runtime, argv)
        return None
    return runtime


def run_external(template: str, c: Sequence[int], timeout: float = DEFAULT_TIMEOUT,
                 penalty: float = DEFAULT_PENALTY) -> float:
    """Run an external program for configuration ``c`` and return its runtime in ms.

    ``{xt}``..``{zw}`` placeholders in ``template`` are replaced by the
    configuration values.  The program must print its kernel time in
    milliseconds as the last line of stdout.  Failures, timeouts and
    unparseable output yield ``penalty`` instead of raising.
    """
    runtime = _run_external(template, c, timeout)
    return penalty if runtime is None else runtime


def brute_force_optimum(spec: ObjectiveSpec, space) -> tuple:
    """Noiseless optimum over the valid set: ``(Configuration, value)``.

    Ties resolve to the lexicographically smallest configuration.
    """
    from .space import as_config, enumerate_valid

    X = enumerate_valid(space)
    values = landscape(spec.kind, X, spec.penalty, spec.workgroup_limit)
    i = int(np.argmin(values))
    return as_config(X[i]), float(values[i])
