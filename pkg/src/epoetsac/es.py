"""Evolution-strategies optimizer: mirrored gaussian sampling, centered-rank
normalization, Adam ascent, and decaying learning-rate / noise schedules.

One EsState exists per environment-agent pair. All sample evaluations go
through a caller-supplied batch evaluator so the same code runs against real
walker rollouts, a worker pool, or a closed-form test objective. Results are
always consumed in sample-index order, so the outcome is independent of how
the evaluator parallelizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nets import Adam, MlpParams, init_mlp
from .seeding import derive_seed, substream

logger = logging.getLogger(__name__)

LR_INIT = 0.01
LR_FLOOR = 0.001
LR_DECAY = 0.9999
SIGMA_INIT = 0.02
SIGMA_FLOOR = 0.01
SIGMA_DECAY = 0.999
DEFAULT_N_SAMPLES = 500

ES_HIDDEN = [40, 40]


class OptimizerError(Exception):
    """Every perturbation produced a non-finite return."""


class NoiseTable:
    """Shared deterministic gaussian source addressed by (seed, offset, length).

    The same (seed, offset, length) triple yields the same noise everywhere,
    which lets distributed workers exchange integer offsets instead of vectors.
    """

    _cache: dict[tuple[int, int], np.ndarray] = {}

    def __init__(self, seed: int, size: int = 4_000_000):
        self.seed = seed
        self.size = size
        key = (seed, size)
        if key not in NoiseTable._cache:
            rng = substream(seed, "noise-table")
            NoiseTable._cache[key] = rng.standard_normal(size)
        self.block = NoiseTable._cache[key]

    def get(self, offset: int, length: int) -> np.ndarray:
        if offset < 0 or offset + length > self.size:
            raise IndexError(f"noise slice [{offset}, {offset + length}) out of range")
        return self.block[offset:offset + length]

    def sample_offset(self, rng: np.random.Generator, length: int) -> int:
        return int(rng.integers(0, self.size - length + 1))


@dataclass
class EsState:
    policy: MlpParams  # tanh MLP, hidden [40, 40] by default
    alpha: float = LR_INIT
    sigma: float = SIGMA_INIT
    adam: Adam = None
    step_count: int = 0
    noise_seed: int = 0

    def __post_init__(self):
        if self.adam is None:
            self.adam = Adam(self.policy.size)

    def theta(self) -> np.ndarray:
        return self.policy.flatten()

    def copy(self) -> "EsState":
        out = EsState(policy=self.policy.copy(), alpha=self.alpha, sigma=self.sigma,
                      adam=Adam.from_state(self.adam.state_dict()),
                      step_count=self.step_count, noise_seed=self.noise_seed)
        return out


@dataclass
class EsStepInfo:
    mean_return: float
    max_return: float
    alpha: float
    sigma: float
    n_discarded: int = 0


def make_es_state(rng_seed: int, obs_dim: int = 53, act_dim: int = 18,
                  hidden: Sequence[int] | None = None,
                  alpha: float = LR_INIT, sigma: float = SIGMA_INIT) -> EsState:
    sizes = [obs_dim] + list(hidden if hidden is not None else ES_HIDDEN) + [act_dim]
    rng = substream(rng_seed, "es-init")
    policy = init_mlp(rng, sizes, hidden_activation="tanh", output_activation="tanh")
    return EsState(policy=policy, alpha=alpha, sigma=sigma,
                   noise_seed=derive_seed(rng_seed, "es-noise"))


def centered_ranks(values: np.ndarray) -> np.ndarray:
    """Map values to centered ranks in [-0.5, 0.5]; ties broken by index."""
    n = values.size
    if n == 1:
        return np.zeros(1)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n)
    return ranks / (n - 1) - 0.5


def es_step(state: EsState,
            eval_batch: Callable[[list[np.ndarray]], Sequence[float]],
            n_samples: int = DEFAULT_N_SAMPLES,
            noise_table: NoiseTable | None = None,
            lr_floor: float = LR_FLOOR, lr_decay: float = LR_DECAY,
            sigma_floor: float = SIGMA_FLOOR,
            sigma_decay: float = SIGMA_DECAY) -> EsStepInfo:
    """One ES update in place. eval_batch receives the perturbed parameter
    vectors ordered [theta + s*e0, theta - s*e0, theta + s*e1, ...] and must
    return their returns in the same order."""
    if n_samples % 2 != 0:
        raise ValueError("n_samples must be even (mirrored sampling)")
    table = noise_table or NoiseTable(state.noise_seed)
    theta = state.policy.flatten()
    dim = theta.size
    half = n_samples // 2

    offset_rng = substream(state.noise_seed, "offsets", state.step_count)
    offsets = [table.sample_offset(offset_rng, dim) for _ in range(half)]
    epsilons = [table.get(off, dim) for off in offsets]

    candidates = []
    for eps in epsilons:
        candidates.append(theta + state.sigma * eps)
        candidates.append(theta - state.sigma * eps)
    returns = np.asarray(list(eval_batch(candidates)), dtype=float)
    if returns.shape != (n_samples,):
        raise ValueError(f"evaluator returned {returns.shape}, expected ({n_samples},)")

    finite = np.isfinite(returns)
    n_discarded = int((~finite).sum())
    if n_discarded == n_samples:
        raise OptimizerError("all perturbation returns were non-finite")
    if n_discarded:
        logger.warning("discarding %d non-finite ES sample returns", n_discarded)

    ranks = np.zeros(n_samples)
    ranks[finite] = centered_ranks(returns[finite])
    kept = n_samples - n_discarded

    grad = np.zeros(dim)
    for j, eps in enumerate(epsilons):
        grad += (ranks[2 * j] - ranks[2 * j + 1]) * eps
    grad /= kept * state.sigma

    theta = theta + state.adam.step(grad, state.alpha)
    state.policy.load_flat(theta)
    state.step_count += 1
    state.alpha = max(lr_floor, state.alpha * lr_decay)
    state.sigma = max(sigma_floor, state.sigma * sigma_decay)

    finite_returns = returns[finite]
    return EsStepInfo(mean_return=float(finite_returns.mean()),
                      max_return=float(finite_returns.max()),
                      alpha=state.alpha, sigma=state.sigma,
                      n_discarded=n_discarded)


def evaluate(eval_one: Callable[[np.ndarray, int], float], theta: np.ndarray,
             base_seed: int, n_eval: int) -> float:
    """Mean return over n_eval evaluations with distinct deterministic seeds."""
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    scores = [eval_one(theta, derive_seed(base_seed, "eval", i)) for i in range(n_eval)]
    return float(np.mean(scores))
