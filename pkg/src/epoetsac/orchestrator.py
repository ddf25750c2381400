"""The ePOET-SAC main loop: environment-agent pair lifecycle, environment
mutation behind the PATA-EC novelty gate and minimal criterion, agent
transfer, SAC-actor injection, and node-level crossover.

All rollout evaluation goes through a backend object so the loop can be
exercised with stubbed returns; the production backend (harness module) fans
rollouts out to the worker pool and feeds the shared replay buffer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import es, neat, sac, terrain
from .config import RunConfig
from .nets import MlpParams
from .seeding import derive_seed, substream

logger = logging.getLogger(__name__)


class StructuralError(Exception):
    """Parameter-shape mismatch between agents or networks."""


# -- environment-agent pairs --------------------------------------------------

@dataclass
class EAPair:
    pair_id: int
    parent_id: int | None
    env: terrain.TerrainSpec
    agent: es.EsState
    created_iteration: int
    best_score: float = -math.inf
    last_score: float = -math.inf
    eligibility_score: float | None = None  # clipped MC score at admission
    repro_threshold: float = 2000.0

    @property
    def solved(self) -> bool:
        return self.best_score >= self.repro_threshold


# -- PATA-EC ------------------------------------------------------------------

def pata_ec_vector(scores: np.ndarray, lower: float, upper: float) -> np.ndarray:
    """Clip raw agent scores to the minimal-criterion bounds, then rank-
    normalize to [-0.5, 0.5] (ties keep index order)."""
    clipped = np.clip(np.asarray(scores, dtype=float), lower, upper)
    return es.centered_ranks(clipped)


def novelty(vector: np.ndarray, accepted: list[np.ndarray], k: int) -> float:
    """Mean Euclidean distance to the k nearest accepted environment vectors."""
    if not accepted:
        return math.inf
    dists = sorted(float(np.linalg.norm(vector - v)) for v in accepted)
    kk = min(k, len(dists))
    return float(np.mean(dists[:kk]))


def passes_minimal_criterion(best_score: float, lower: float, upper: float) -> bool:
    """Strict interior: a score clipped at either bound is rejected."""
    return lower < best_score < upper


class PataEcRanker:
    """Archive of every agent parameter vector ever active, used to
    characterize environments by how all known agents perform on them."""

    def __init__(self, mc_lower: float, mc_upper: float, k: int = 5):
        self.mc_lower = mc_lower
        self.mc_upper = mc_upper
        self.k = k
        self.snapshots: list[np.ndarray] = []

    def snapshot(self, theta: np.ndarray) -> None:
        self.snapshots.append(np.asarray(theta, dtype=float).copy())

    def vector(self, scores) -> np.ndarray:
        return pata_ec_vector(np.asarray(scores, dtype=float),
                              self.mc_lower, self.mc_upper)

    def rank(self, candidate_vectors: list[np.ndarray],
             accepted_vectors: list[np.ndarray]) -> list[int]:
        """Candidate indices in descending novelty order; ties broken by index."""
        scored = [(-novelty(v, accepted_vectors, self.k), i)
                  for i, v in enumerate(candidate_vectors)]
        scored.sort()
        return [i for _, i in scored]


# -- crossover ----------------------------------------------------------------

def crossover_single(agent: MlpParams, donor: MlpParams,
                     rng: np.random.Generator) -> MlpParams:
    """Node-granular parameter exchange: for each node of each layer a fair
    coin decides whether the node's incoming weight vector is replaced by the
    donor's; biases flip per entry."""
    if [w.shape for w in agent.weights] != [w.shape for w in donor.weights]:
        raise StructuralError("crossover requires identical layer shapes")
    child = agent.copy()
    for li in range(len(child.weights)):
        n_nodes = child.weights[li].shape[1]
        take = rng.random(n_nodes) < 0.5
        child.weights[li][:, take] = donor.weights[li][:, take]
    for li in range(len(child.biases)):
        take = rng.random(child.biases[li].shape[0]) < 0.5
        child.biases[li][take] = donor.biases[li][take]
    return child


def reshape_params(sac_policy: MlpParams, act_dim: int, target_hidden: list[int],
                   rng_seed: int, hidden_indices: list[np.ndarray] | None = None
                   ) -> tuple[MlpParams, list[np.ndarray]]:
    """Shrink a wide SAC policy to the ES layout by a run-seeded draw of
    hidden-unit indices per layer; copies the matching weight-matrix slices
    and the mean head. Returns the ES-shaped params and the drawn indices."""
    if len(target_hidden) != len(sac_policy.weights) - 1:
        raise StructuralError("hidden depth mismatch between SAC policy and ES layout")
    rng = substream(rng_seed, "reshape")
    if hidden_indices is None:
        hidden_indices = []
        for li, width in enumerate(target_hidden):
            source_width = sac_policy.weights[li].shape[1]
            if width > source_width:
                raise StructuralError("target hidden layer wider than source")
            idx = np.sort(rng.choice(source_width, size=width, replace=False))
            hidden_indices.append(idx)
    weights, biases = [], []
    prev_idx = None
    for li, idx in enumerate(hidden_indices):
        w = sac_policy.weights[li]
        b = sac_policy.biases[li]
        w = w[:, idx] if prev_idx is None else w[np.ix_(prev_idx, idx)]
        weights.append(w.copy())
        biases.append(b[idx].copy())
        prev_idx = idx
    head_w = sac_policy.weights[-1]
    head_b = sac_policy.biases[-1]
    weights.append(head_w[np.ix_(prev_idx, np.arange(act_dim))].copy())
    biases.append(head_b[:act_dim].copy())
    out = MlpParams(weights, biases, hidden_activation="tanh", output_activation="tanh")
    return out, hidden_indices


def scatter_params(sac_policy: MlpParams, es_params: MlpParams, act_dim: int,
                   hidden_indices: list[np.ndarray]) -> None:
    """Inverse of reshape_params: write ES-shaped parameters back into the
    selected positions of the wide SAC policy (in place)."""
    prev_idx = None
    for li, idx in enumerate(hidden_indices):
        w = es_params.weights[li]
        if prev_idx is None:
            sac_policy.weights[li][:, idx] = w
        else:
            sac_policy.weights[li][np.ix_(prev_idx, idx)] = w
        sac_policy.biases[li][idx] = es_params.biases[li]
        prev_idx = idx
    sac_policy.weights[-1][np.ix_(prev_idx, np.arange(act_dim))] = es_params.weights[-1]
    sac_policy.biases[-1][:act_dim] = es_params.biases[-1]


# -- engine ---------------------------------------------------------------------

@dataclass
class LogRow:
    iteration: int
    pair_id: int
    env_id: int
    score: float
    mutated: int = 0
    transferred: int = 0
    crossed: int = 0
    injected: int = 0


class Engine:
    """Sequential control loop; all parallelism lives inside the backend."""

    def __init__(self, config: RunConfig, backend, sac_state: sac.SacState | None = None,
                 replay_buffer: sac.ReplayBuffer | None = None):
        self.config = config
        self.backend = backend
        self.iteration = 0
        self.next_pair_id = 0
        self.pairs: list[EAPair] = []
        self.archived_pairs: list[EAPair] = []
        self.ranker = PataEcRanker(config.mc_lower, config.mc_upper, config.pata_ec_k)
        self.run_log: list[LogRow] = []
        self.es_log: list[tuple] = []
        self.events: list[tuple[int, str]] = []
        self.uses_sac = config.mode == "epoet-sac"
        self.sac_state = sac_state
        self.replay_buffer = replay_buffer
        self.sac_hidden_indices: list[np.ndarray] | None = None
        if self.uses_sac and sac_state is None:
            self.sac_state = sac.make_sac_state(
                derive_seed(config.master_seed, "sac"),
                obs_dim=53, act_dim=18, hidden=config.sac_hidden_shape,
                lr=config.sac_policy_lr, tau=config.tau, gamma=config.discount,
                reward_scale=config.reward_scale)
            self.sac_state.alpha_lr = config.sac_alpha_lr
        if self.uses_sac and replay_buffer is None:
            self.replay_buffer = sac.ReplayBuffer(config.replay_buffer_size,
                                                  obs_dim=53, act_dim=18)

    # -- seeds and specs -----------------------------------------------------

    def _seed(self, *keys) -> int:
        return derive_seed(self.config.master_seed, *keys)

    def _bowl_threshold(self, iteration: int) -> float:
        return self.config.bowl_threshold_init + self.config.bowl_threshold_step * iteration

    def _initial_spec(self) -> terrain.TerrainSpec:
        cfg = self.config
        genome = neat.initial_genome(self._seed("initial-genome"), cfg.neat)
        return terrain.TerrainSpec(
            genome=genome,
            bowl=terrain.BowlParams(rng_seed=self._seed("bowl", 0, 0),
                                    coarse_resolution=cfg.coarse_resolution,
                                    threshold=self._bowl_threshold(0)),
            elevation_z=cfg.elevation_init,
            resolution=cfg.resolution,
            iteration=0,
            bowl_weight=cfg.bowl_weight,
            cppn_weight=cfg.cppn_weight,
        )

    def _refresh_spec(self, spec: terrain.TerrainSpec, pair_id: int,
                      iteration: int) -> terrain.TerrainSpec:
        # the bowl part is re-drawn every iteration and the elevation schedule
        # advances; the CPPN genome only changes at reproduction events
        cfg = self.config
        return dc_replace(
            spec,
            bowl=terrain.BowlParams(rng_seed=self._seed("bowl-iter", iteration, pair_id),
                                    coarse_resolution=cfg.coarse_resolution,
                                    threshold=self._bowl_threshold(iteration)),
            elevation_z=terrain.elevation_at(cfg.elevation_init, iteration,
                                             cfg.elevation_step),
            iteration=iteration,
        )

    # -- pair management -------------------------------------------------------

    def _new_pair(self, env: terrain.TerrainSpec, agent: es.EsState,
                  parent_id: int | None, iteration: int,
                  eligibility: float | None = None) -> EAPair:
        pair = EAPair(pair_id=self.next_pair_id, parent_id=parent_id, env=env,
                      agent=agent, created_iteration=iteration,
                      eligibility_score=eligibility,
                      repro_threshold=self.config.repro_threshold)
        self.next_pair_id += 1
        self.ranker.snapshot(agent.theta())
        return pair

    def bootstrap(self) -> None:
        cfg = self.config
        agent = es.make_es_state(self._seed("agent", 0),
                                 hidden=cfg.es_hidden_shape,
                                 alpha=cfg.learning_rate_init,
                                 sigma=cfg.noise_std_init)
        self.pairs.append(self._new_pair(self._initial_spec(), agent, None, 0))

    def _archive_oldest(self) -> None:
        while len(self.pairs) > self.config.max_num_envs:
            oldest = min(self.pairs, key=lambda p: (p.created_iteration, p.pair_id))
            self.pairs.remove(oldest)
            self.archived_pairs.append(oldest)

    # -- per-iteration phases ---------------------------------------------------

    def _score_pair(self, pair: EAPair, t: int) -> float:
        seeds = [self._seed("score", t, pair.pair_id, i)
                 for i in range(self.config.eval_rollouts)]
        jobs = [(pair.agent.theta(), pair.env, s) for s in seeds]
        score = float(np.mean(self.backend.batch_returns(jobs)))
        pair.last_score = score
        pair.best_score = max(pair.best_score, score)
        return score

    def _es_phase(self, t: int) -> None:
        cfg = self.config
        for pair in self.pairs:
            env = pair.env

            def eval_batch(candidates, _env=env, _pid=pair.pair_id):
                jobs = [(theta, _env, self._seed("es-rollout", t, _pid, i))
                        for i, theta in enumerate(candidates)]
                return self.backend.batch_returns(jobs)

            info = es.es_step(pair.agent, eval_batch,
                              n_samples=cfg.es_samples_per_step,
                              lr_floor=cfg.learning_rate_floor,
                              lr_decay=cfg.learning_rate_decay,
                              sigma_floor=cfg.noise_std_floor,
                              sigma_decay=cfg.noise_std_decay)
            self.es_log.append((pair.pair_id, t, info.mean_return, info.max_return,
                                info.alpha, info.sigma))

    def _feed_replay_buffer(self, t: int) -> None:
        if not self.uses_sac:
            return
        for pair in self.pairs:
            transitions = self.backend.rollout_transitions(
                pair.agent.theta(), pair.env, self._seed("replay-feed", t, pair.pair_id))
            for tr in transitions:
                self.replay_buffer.push(tr, pair.pair_id)

    def _sac_phase(self, t: int) -> None:
        if not self.uses_sac or self.config.sac_env_steps_per_iter <= 0:
            return
        specs = [p.env for p in self.pairs]

        def sample_env(rng: np.random.Generator):
            spec = specs[int(rng.integers(0, len(specs)))]
            return self.backend.make_env(spec)

        sac.train_sac(self.sac_state, self.replay_buffer, sample_env,
                      self.config.sac_env_steps_per_iter,
                      batch_size=self.config.sac_batch_size)

    def evaluate_candidates(self, target: EAPair, t: int) -> tuple[np.ndarray | None, float]:
        """Best foreign agent parameters on the target's environment."""
        others = [p for p in self.pairs if p.pair_id != target.pair_id]
        if not others:
            return None, -math.inf
        best_theta, best_score = None, -math.inf
        for cand in others:
            seeds = [self._seed("transfer", t, target.pair_id, cand.pair_id, i)
                     for i in range(self.config.transfer_rollouts)]
            jobs = [(cand.agent.theta(), target.env, s) for s in seeds]
            score = float(np.mean(self.backend.batch_returns(jobs)))
            if score > best_score:
                best_theta, best_score = cand.agent.theta(), score
        return best_theta, best_score

    def _transfer_phase(self, t: int, flags: dict[int, LogRow]) -> tuple:
        top_theta, top_score, top_env = None, -math.inf, None
        for pair in self.pairs:
            cand_theta, cand_score = self.evaluate_candidates(pair, t)
            if cand_theta is None:
                continue
            seed = self._seed("transfer-incumbent", t, pair.pair_id)
            incumbent = float(np.mean(self.backend.batch_returns(
                [(pair.agent.theta(), pair.env, seed)])))
            if cand_score > incumbent:
                self.ranker.snapshot(pair.agent.theta())
                pair.agent.policy.load_flat(cand_theta)
                pair.best_score = max(pair.best_score, cand_score)
                pair.last_score = cand_score
                flags[pair.pair_id].transferred = 1
                self.events.append((t, "transfer"))
            if cand_score > top_score:
                top_theta, top_score, top_env = cand_theta, cand_score, pair.env
        return top_theta, top_score, top_env

    def _maybe_update_sac_actor(self, t: int, top_theta, top_score, top_env) -> None:
        if not self.uses_sac or top_theta is None:
            return
        es_actor, indices = reshape_params(
            self.sac_state.policy, act_dim=18,
            target_hidden=list(self.config.es_hidden_shape),
            rng_seed=self._seed("reshape"), hidden_indices=self.sac_hidden_indices)
        self.sac_hidden_indices = indices
        seed = self._seed("sac-actor-score", t)
        sac_score = float(np.mean(self.backend.batch_returns(
            [(es_actor.flatten(), top_env, seed)])))
        if sac_score < top_score:
            template = es_actor.copy()
            template.load_flat(top_theta)
            scatter_params(self.sac_state.policy, template, act_dim=18,
                           hidden_indices=indices)
            self.events.append((t, "sac-actor-update"))

    def inject_sac_actor(self, t: int, flags: dict[int, LogRow]) -> None:
        if not self.uses_sac:
            return
        if self.sac_state.update_count < self.config.sac_pretrain_updates:
            logger.info("iteration %d: SAC under-trained (%d < %d updates), "
                        "injection skipped", t, self.sac_state.update_count,
                        self.config.sac_pretrain_updates)
            self.events.append((t, "inject-skipped"))
            return
        es_actor, indices = reshape_params(
            self.sac_state.policy, act_dim=18,
            target_hidden=list(self.config.es_hidden_shape),
            rng_seed=self._seed("reshape"), hidden_indices=self.sac_hidden_indices)
        self.sac_hidden_indices = indices
        env_rng = substream(self.config.master_seed, "inject-env", t)
        env = self.pairs[int(env_rng.integers(0, len(self.pairs)))].env
        agent = es.make_es_state(self._seed("inject-agent", t),
                                 hidden=self.config.es_hidden_shape,
                                 alpha=self.config.learning_rate_init,
                                 sigma=self.config.noise_std_init)
        agent.policy = es_actor
        agent.adam = type(agent.adam)(agent.policy.size)
        donor = es_actor.copy()
        pair = self._new_pair(env, agent, None, t)
        self.pairs.append(pair)
        flags[pair.pair_id] = LogRow(iteration=t, pair_id=pair.pair_id,
                                     env_id=pair.pair_id, score=math.nan, injected=1)
        self.events.append((t, "inject"))
        self._archive_oldest()
        self.crossover(donor, t, flags, skip_pair_id=pair.pair_id)

    def crossover(self, donor: MlpParams, t: int, flags: dict[int, LogRow],
                  skip_pair_id: int | None = None) -> None:
        for pair in self.pairs:
            if pair.pair_id == skip_pair_id:
                continue
            seed = self._seed("crossover", t, pair.pair_id)
            old_return = float(np.mean(self.backend.batch_returns(
                [(pair.agent.theta(), pair.env, seed)])))
            coin_rng = substream(self.config.master_seed, "coin", t, pair.pair_id)
            offspring = crossover_single(pair.agent.policy, donor, coin_rng)
            new_return = float(np.mean(self.backend.batch_returns(
                [(offspring.flatten(), pair.env, seed)])))
            if new_return > old_return:
                self.ranker.snapshot(pair.agent.theta())
                pair.agent.policy = offspring
                pair.best_score = max(pair.best_score, new_return)
                pair.last_score = new_return
                if pair.pair_id in flags:
                    flags[pair.pair_id].crossed = 1
                self.events.append((t, "crossover-replace"))

    # -- environment reproduction ---------------------------------------------

    def _candidate_children(self, parent: EAPair, t: int) -> list[terrain.TerrainSpec]:
        cfg = self.config
        children = []
        for c in range(cfg.max_children):
            genome = neat.mutate_genome(parent.env.genome, cfg.neat,
                                        self._seed("env-mutate", t, parent.pair_id, c))
            spec = terrain.TerrainSpec(
                genome=genome,
                bowl=terrain.BowlParams(rng_seed=self._seed("bowl", t, parent.pair_id + 1000 * (c + 1)),
                                        coarse_resolution=cfg.coarse_resolution,
                                        threshold=self._bowl_threshold(t)),
                elevation_z=terrain.elevation_at(cfg.elevation_init, t,
                                                 cfg.elevation_step),
                resolution=cfg.resolution,
                iteration=t,
                bowl_weight=cfg.bowl_weight,
                cppn_weight=cfg.cppn_weight,
            )
            children.append(spec)
        return children

    def _agent_scores_on(self, spec: terrain.TerrainSpec, t: int, tag: int) -> np.ndarray:
        """Every archived + active agent evaluated on one environment."""
        agents = self.ranker.snapshots + [p.agent.theta() for p in self.pairs]
        jobs = [(theta, spec, self._seed("pataec", t, tag, i))
                for i, theta in enumerate(agents)]
        return np.asarray(self.backend.batch_returns(jobs), dtype=float)

    def mutate_envs(self, t: int, flags: dict[int, LogRow]) -> None:
        cfg = self.config
        self.events.append((t, "mutate"))
        eligible = [p for p in self.pairs if p.best_score >= cfg.repro_threshold]
        if not eligible:
            return
        accepted_vectors = [
            self.ranker.vector(self._agent_scores_on(p.env, t, 10_000 + p.pair_id))
            for p in self.pairs + self.archived_pairs
        ]
        for parent in sorted(eligible, key=lambda p: p.pair_id):
            children = self._candidate_children(parent, t)
            survivors = []
            for ci, child in enumerate(children):
                active_scores = np.asarray(self.backend.batch_returns(
                    [(p.agent.theta(), child,
                      self._seed("mc", t, parent.pair_id, ci, p.pair_id))
                     for p in self.pairs]), dtype=float)
                best_raw = float(active_scores.max())
                if not passes_minimal_criterion(best_raw, cfg.mc_lower, cfg.mc_upper):
                    continue
                source = self.pairs[int(np.argmax(active_scores))]
                vector = self.ranker.vector(
                    self._agent_scores_on(child, t, 20_000 + parent.pair_id * 10 + ci))
                eligibility = float(np.clip(best_raw, cfg.mc_lower, cfg.mc_upper))
                survivors.append((child, vector, source, eligibility))
            if not survivors:
                continue
            order = self.ranker.rank([s[1] for s in survivors], accepted_vectors)
            child, vector, source, eligibility = survivors[order[0]]
            agent = source.agent.copy()
            pair = self._new_pair(child, agent, parent.pair_id, t, eligibility)
            self.pairs.append(pair)
            accepted_vectors.append(vector)
            flags[pair.pair_id] = LogRow(iteration=t, pair_id=pair.pair_id,
                                         env_id=pair.pair_id, score=math.nan, mutated=1)
            self.events.append((t, "admit"))
            self._archive_oldest()

    # -- main loop --------------------------------------------------------------

    def run_iteration(self) -> None:
        cfg = self.config
        t = self.iteration
        flags: dict[int, LogRow] = {}

        for pair in self.pairs:
            pair.env = self._refresh_spec(pair.env, pair.pair_id, t)

        if t > 0 and t % cfg.mutation_interval == 0:
            self.mutate_envs(t, flags)

        self._es_phase(t)
        self._feed_replay_buffer(t)
        self._sac_phase(t)

        for pair in self.pairs:
            if pair.pair_id not in flags:
                flags[pair.pair_id] = LogRow(iteration=t, pair_id=pair.pair_id,
                                             env_id=pair.pair_id, score=math.nan)

        if len(self.pairs) > 1 and t % cfg.iterations_before_transfer == 0:
            self.events.append((t, "transfer-round"))
            top_theta, top_score, top_env = self._transfer_phase(t, flags)
            self._maybe_update_sac_actor(t, top_theta, top_score, top_env)

        inject_period = cfg.iterations_before_transfer * 4
        if t > 0 and t % inject_period == inject_period - 2:
            self.inject_sac_actor(t, flags)

        for pair in self.pairs:
            score = self._score_pair(pair, t)
            flags[pair.pair_id].score = score

        self.run_log.extend(flags[pid] for pid in sorted(flags))
        self.iteration += 1

    def run(self, iterations: int | None = None,
            on_checkpoint=None) -> None:
        if not self.pairs and self.iteration == 0:
            self.bootstrap()
        total = iterations if iterations is not None else self.config.total_iterations
        target = self.iteration + total if iterations is not None else total
        while self.iteration < target:
            self.run_iteration()
            if on_checkpoint and self.iteration % self.config.checkpoint_interval == 0:
                on_checkpoint(self)
