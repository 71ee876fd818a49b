"""Sequential model-based minimization over mixed search spaces.

A ``SearchSpace`` is an ordered set of dimensions (continuous, possibly
log-scaled; integer; categorical) with an invertible mapping to the
unit hypercube: reals and integers scale to [0, 1], categoricals expand
to one-hot blocks. The optimizer walks a fixed trial budget in three
phases: caller-supplied seed configurations first, then uniform random
exploration, then proposals that maximize expected improvement under a
Gaussian-process surrogate (Matern-5/2 plus a white-noise term, fit to
standardized scores of all finite-score trials so far).

Each proposal scores 10^3 uniform candidate points and polishes the
winner with L-BFGS-B inside the cube. Degenerate histories (fewer than
two finite scores, all scores equal, or a surrogate fit failure) fall
back to uniform random draws.

Determinism: trial i draws every random quantity from
``np.random.default_rng([seed, i])``, so a run can be replayed or
resumed mid-stream and produce the identical trial sequence. Failed
objectives score +inf and are excluded from surrogate fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as scipy_minimize
from scipy.stats import norm
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel
import warnings

N_CANDIDATES = 1000


@dataclass(frozen=True)
class Real:
    name: str
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ValueError(f"{self.name}: log scale needs lo > 0, got {self.lo}")


@dataclass(frozen=True)
class Integer:
    name: str
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"{self.name}: need lo <= hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple

    def __post_init__(self):
        if len(self.choices) == 0:
            raise ValueError(f"{self.name}: needs at least one choice")
        if len(set(self.choices)) != len(self.choices):
            raise ValueError(f"{self.name}: duplicate choices")


class SearchSpace:
    """Ordered dimensions with a unit-hypercube encoding."""

    def __init__(self, dimensions):
        dimensions = tuple(dimensions)
        names = [d.name for d in dimensions]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        self.dimensions = dimensions
        self.names = tuple(names)
        self.n_unit = sum(
            len(d.choices) if isinstance(d, Categorical) else 1 for d in dimensions
        )

    def sample(self, rng: np.random.Generator) -> dict:
        """One uniform draw; dimension order fixes the rng consumption order."""
        out = {}
        for d in self.dimensions:
            if isinstance(d, Real):
                u = rng.random()
                if d.log:
                    out[d.name] = float(math.exp(math.log(d.lo) + u * (math.log(d.hi) - math.log(d.lo))))
                else:
                    out[d.name] = float(d.lo + u * (d.hi - d.lo))
            elif isinstance(d, Integer):
                out[d.name] = int(rng.integers(d.lo, d.hi + 1))
            else:
                out[d.name] = d.choices[int(rng.integers(len(d.choices)))]
        return out

    def encode(self, config: dict) -> np.ndarray:
        """Map a configuration to its unit-hypercube vector."""
        parts = []
        for d in self.dimensions:
            v = config[d.name]
            if isinstance(d, Real):
                if d.log:
                    parts.append((math.log(v) - math.log(d.lo)) / (math.log(d.hi) - math.log(d.lo)))
                else:
                    parts.append((v - d.lo) / (d.hi - d.lo))
            elif isinstance(d, Integer):
                parts.append(0.0 if d.hi == d.lo else (v - d.lo) / (d.hi - d.lo))
            else:
                block = [0.0] * len(d.choices)
                block[d.choices.index(v)] = 1.0
                parts.extend(block)
        return np.array(parts, dtype=np.float64)

    def decode(self, u: np.ndarray) -> dict:
        """Map a cube vector back to a configuration (integers round, one-hots argmax)."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.n_unit,):
            raise ValueError(f"expected a vector of length {self.n_unit}, got shape {u.shape}")
        out = {}
        i = 0
        for d in self.dimensions:
            if isinstance(d, Real):
                x = float(np.clip(u[i], 0.0, 1.0))
                if d.log:
                    v = math.exp(math.log(d.lo) + x * (math.log(d.hi) - math.log(d.lo)))
                else:
                    v = d.lo + x * (d.hi - d.lo)
                # exp/log round trips can overshoot the bounds by an ulp
                out[d.name] = float(min(max(v, d.lo), d.hi))
                i += 1
            elif isinstance(d, Integer):
                x = float(np.clip(u[i], 0.0, 1.0))
                out[d.name] = int(d.lo + round(x * (d.hi - d.lo)))
                i += 1
            else:
                k = len(d.choices)
                out[d.name] = d.choices[int(np.argmax(u[i : i + k]))]
                i += k
        return out

    def canonicalize(self, config: dict) -> dict:
        """Repair a round-tripped configuration (e.g. JSON turned tuples into lists)."""
        out = {}
        for d in self.dimensions:
            if d.name not in config:
                raise ValueError(f"configuration is missing {d.name!r}")
            v = config[d.name]
            if isinstance(d, Real):
                out[d.name] = float(v)
            elif isinstance(d, Integer):
                out[d.name] = int(v)
            else:
                if isinstance(v, list):
                    v = tuple(v)
                if v not in d.choices:
                    raise ValueError(f"{d.name}: {v!r} is not one of {d.choices}")
                out[d.name] = v
        extra = set(config) - set(self.names)
        if extra:
            raise ValueError(f"unknown configuration keys: {sorted(extra)}")
        return out

    def validate(self, config: dict) -> None:
        for d in self.dimensions:
            v = config[d.name]
            if isinstance(d, Real):
                if not d.lo <= v <= d.hi:
                    raise ValueError(f"{d.name}: {v} outside [{d.lo}, {d.hi}]")
            elif isinstance(d, Integer):
                if not (isinstance(v, (int, np.integer)) and d.lo <= v <= d.hi):
                    raise ValueError(f"{d.name}: {v!r} outside [{d.lo}, {d.hi}]")
            elif v not in d.choices:
                raise ValueError(f"{d.name}: {v!r} is not one of {d.choices}")


@dataclass(frozen=True)
class Trial:
    index: int
    phase: str  # "seed" | "random" | "bayes"
    config: dict
    score: float
    error: str = ""


@dataclass(frozen=True)
class OptResult:
    trials: tuple[Trial, ...]
    best_trial: Trial | None

    @property
    def best_config(self) -> dict | None:
        return None if self.best_trial is None else self.best_trial.config

    @property
    def best_score(self) -> float:
        return math.inf if self.best_trial is None else self.best_trial.score


class _Surrogate:
    """GP over cube vectors, fit to standardized scores."""

    def __init__(self, X: np.ndarray, y: np.ndarray, random_state: int):
        self.y_mean = float(np.mean(y))
        self.y_std = float(np.std(y))
        if self.y_std < 1e-12:
            raise ValueError("degenerate history: all scores equal")
        z = (y - self.y_mean) / self.y_std
        kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(
            length_scale=np.ones(X.shape[1]), length_scale_bounds=(1e-2, 1e2), nu=2.5
        ) + WhiteKernel(noise_level=1e-6, noise_level_bounds=(1e-10, 1e-1))
        self.gp = GaussianProcessRegressor(
            kernel=kernel,
            alpha=1e-10,
            normalize_y=False,
            n_restarts_optimizer=1,
            random_state=random_state,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.gp.fit(X, z)
        self.best_z = float(np.min(z))

    def expected_improvement(self, U: np.ndarray) -> np.ndarray:
        mu, sigma = self.gp.predict(np.atleast_2d(U), return_std=True)
        ei = np.zeros_like(mu)
        pos = sigma > 1e-12
        zz = (self.best_z - mu[pos]) / sigma[pos]
        ei[pos] = sigma[pos] * (zz * norm.cdf(zz) + norm.pdf(zz))
        return ei


def propose(space: SearchSpace, trials, rng: np.random.Generator) -> dict:
    """Next configuration to try: EI-maximal under the surrogate.

    Falls back to a uniform random draw when the finite-score history
    is too small or flat, or the surrogate cannot be fit.
    """
    done = [t for t in trials if math.isfinite(t.score)]
    if len(done) < 2:
        return space.sample(rng)
    X = np.array([space.encode(t.config) for t in done])
    y = np.array([t.score for t in done], dtype=np.float64)
    try:
        surrogate = _Surrogate(X, y, random_state=int(rng.integers(2**31)))
    except Exception:
        return space.sample(rng)

    candidates = rng.random((N_CANDIDATES, space.n_unit))
    ei = surrogate.expected_improvement(candidates)
    start = candidates[int(np.argmax(ei))]

    def neg_ei(u):
        return -float(surrogate.expected_improvement(u[None, :])[0])

    res = scipy_minimize(
        neg_ei, start, method="L-BFGS-B", bounds=[(0.0, 1.0)] * space.n_unit
    )
    best_u = res.x if (res.success and -res.fun >= float(np.max(ei))) else start
    return space.decode(best_u)


def minimize(
    objective,
    space: SearchSpace,
    budget: int,
    n_random: int,
    seed: int,
    seed_points=(),
    prior_trials=(),
    on_trial=None,
) -> OptResult:
    """Minimize `objective(config)` within `budget` total trials.

    Seed configurations run first and count against the budget, then
    `n_random` uniform draws, then surrogate proposals. An objective
    that raises (or returns a non-finite value) records a +inf score
    and the error text, and the run continues. `prior_trials` replays a
    partial history: those trials are kept verbatim and iteration
    resumes after them with identical randomness to an uninterrupted
    run. `on_trial` is called with each completed Trial.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if n_random < 0:
        raise ValueError(f"n_random must be >= 0, got {n_random}")
    seed_points = [space.canonicalize(c) for c in seed_points]
    if len(seed_points) + n_random > budget:
        raise ValueError(
            f"{len(seed_points)} seeds + {n_random} random trials exceed budget {budget}"
        )
    trials = list(prior_trials)
    if len(trials) > budget:
        raise ValueError(f"prior history has {len(trials)} trials, budget is {budget}")

    n_seed = len(seed_points)
    for i in range(len(trials), budget):
        rng = np.random.default_rng([seed, i])
        if i < n_seed:
            phase, config = "seed", seed_points[i]
        elif i < n_seed + n_random:
            phase, config = "random", space.sample(rng)
        else:
            phase, config = "bayes", propose(space, trials, rng)
        space.validate(config)
        try:
            score = float(objective(config))
            error = ""
            if not math.isfinite(score):
                score, error = math.inf, "objective returned a non-finite score"
        except Exception as exc:
            score, error = math.inf, f"{type(exc).__name__}: {exc}"
        trial = Trial(index=i, phase=phase, config=config, score=score, error=error)
        trials.append(trial)
        if on_trial is not None:
            on_trial(trial)

    finite = [t for t in trials if math.isfinite(t.score)]
    best = min(finite, key=lambda t: t.score) if finite else None
    return OptResult(trials=tuple(trials), best_trial=best)


__all__ = [
    "Real", "Integer", "Categorical", "SearchSpace",
    "Trial", "OptResult", "propose", "minimize", "N_CANDIDATES",
]
