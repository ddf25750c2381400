"""Run harness: wires the control loop to real walker rollouts.

Provides the worker-pool rollout backend, the three run modes (the full
coevolution loop with or without the SAC learner, and a SAC-only baseline on
bowl-only terrain), the post-hoc evaluation suite with difficulty binning,
and all on-disk artifacts (config dump, CSV logs, checkpoints, terrain
exports).
"""

from __future__ import annotations

import dataclasses
import json
import os
import pickle
from dataclasses import dataclass

import numpy as np

from . import es, neat, persist, sac, terrain, walker
from .config import RunConfig
from .nets import MlpParams
from .orchestrator import Engine
from .seeding import derive_seed
from .workers import WorkerPool

DATA_DIR_ENV_VAR = "EPOETSAC_DATA_DIR"


# -- rollout backend ----------------------------------------------------------

class WalkerBackend:
    """Evaluates policy parameter vectors with real walker rollouts, fanned
    out over the worker pool. Each job builds its own environment and policy
    object, so jobs are pure and order-independent."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.pool = WorkerPool(config.num_workers)
        self._template = es.make_es_state(0, hidden=config.es_hidden_shape).policy
        self._penalties = walker.PenaltyWeights(
            torso_angle=config.penalty_torso, acceleration=config.penalty_accel,
            y_axis=config.penalty_y, z_velocity=config.penalty_zvel,
            control=config.penalty_ctrl)

    def _policy_from_flat(self, theta: np.ndarray) -> MlpParams:
        policy = self._template.copy()
        policy.load_flat(np.asarray(theta, dtype=float))
        return policy

    def _rollout(self, theta, spec, seed, collect=False) -> walker.RolloutResult:
        cfg = self.config
        return walker.rollout(
            self._policy_from_flat(theta), spec, seed,
            world_size=cfg.world_size, trajectory_length=cfg.trajectory_length,
            finish_bonus=cfg.finish_bonus, collect_transitions=collect,
            v_target=cfg.v_target, penalty_weights=self._penalties)

    def batch_returns(self, jobs) -> list[float]:
        def one(job):
            theta, spec, seed = job
            return self._rollout(theta, spec, seed).episode_return
        return self.pool.map(one, list(jobs))

    def rollout_transitions(self, theta, spec, seed) -> list:
        return self._rollout(theta, spec, seed, collect=True).transitions

    def rollout_result(self, theta, spec, seed) -> walker.RolloutResult:
        return self._rollout(theta, spec, seed)

    def make_env(self, spec: terrain.TerrainSpec) -> walker.WalkerEnv:
        cfg = self.config
        return walker.WalkerEnv(
            terrain.compose_heightmap(spec), world_size=cfg.world_size,
            trajectory_length=cfg.trajectory_length, finish_bonus=cfg.finish_bonus,
            penalty_weights=self._penalties, v_target=cfg.v_target)


def make_backend(config: RunConfig) -> WalkerBackend:
    return WalkerBackend(config)


# -- CSV artifacts --------------------------------------------------------------

def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_run_log(path: str, rows) -> None:
    _write_csv(path, ["iteration", "pair_id", "env_id", "score", "mutated",
                      "transferred", "crossed", "injected"],
               [(r.iteration, r.pair_id, r.env_id, r.score, r.mutated,
                 r.transferred, r.crossed, r.injected) for r in rows])


def write_es_log(path: str, rows) -> None:
    _write_csv(path, ["pair_id", "iteration", "mean_return", "max_return",
                      "alpha", "sigma"], rows)


def write_events(path: str, events) -> None:
    _write_csv(path, ["iteration", "event"], events)


def export_terrains(engine: Engine, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for pair in engine.pairs:
        hm = terrain.compose_heightmap(pair.env)
        base = os.path.join(out_dir, f"pair_{pair.pair_id:04d}")
        terrain.export_heightmap(hm, base + ".csv", format="csv")
        terrain.export_heightmap(hm, base + ".pgm", format="pgm")
        paths.extend([base + ".csv", base + ".pgm"])
    return paths


# -- evaluation suite -----------------------------------------------------------

@dataclass
class EnvEval:
    pair_id: int
    difficulty: str
    height_variance: float
    returns: list
    solved: list  # per-run solve flags
    mean_return: float
    std_return: float
    max_return: float
    solve_rate: float


@dataclass
class EvalReport:
    master_seed: int
    runs_per_env: int
    best_agent_pair_id: int
    envs: list  # of EnvEval
    bins: dict  # difficulty -> {n_envs, mean_return, solve_rate}
    overall_mean_return: float
    overall_solve_rate: float

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        data = dict(data)
        data["envs"] = [EnvEval(**e) for e in data["envs"]]
        return cls(**data)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "EvalReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def difficulty_bins(variances: list[float], quantiles: list[float]) -> list[str]:
    """Label each environment easy/medium/hard by height-variance quantiles."""
    names = ["easy", "medium", "hard"]
    v = np.asarray(variances, dtype=float)
    cuts = [float(np.quantile(v, q)) for q in quantiles]
    labels = []
    for x in v:
        k = sum(x > c for c in cuts)
        labels.append(names[min(k, len(names) - 1)])
    return labels


def evaluate_suite(engine: Engine, backend: WalkerBackend | None = None) -> EvalReport:
    """Evaluate the pool's best agent on every active environment, several
    independent rollouts per environment, with difficulty binning by terrain
    height variance."""
    cfg = engine.config
    backend = backend or engine.backend
    if not engine.pairs:
        raise ValueError("no active environment-agent pairs to evaluate")
    best_pair = max(engine.pairs, key=lambda p: (p.best_score, -p.pair_id))
    theta = best_pair.agent.theta()

    variances = [terrain.height_variance(terrain.compose_heightmap(p.env))
                 for p in engine.pairs]
    labels = difficulty_bins(variances, cfg.difficulty_quantiles)

    envs = []
    jobs = []
    for p in engine.pairs:
        for i in range(cfg.eval_runs_per_env):
            jobs.append((p, derive_seed(cfg.master_seed, "suite", p.pair_id, i)))
    results = backend.pool.map(
        lambda job: backend.rollout_result(theta, job[0].env, job[1]), jobs)

    idx = 0
    for p, var, label in zip(engine.pairs, variances, labels):
        runs = results[idx:idx + cfg.eval_runs_per_env]
        idx += cfg.eval_runs_per_env
        returns = [float(r.episode_return) for r in runs]
        solved = [bool(r.finished and r.episode_return >= cfg.repro_threshold)
                  for r in runs]
        envs.append(EnvEval(
            pair_id=p.pair_id, difficulty=label, height_variance=float(var),
            returns=returns, solved=solved,
            mean_return=float(np.mean(returns)), std_return=float(np.std(returns)),
            max_return=float(np.max(returns)),
            solve_rate=float(np.mean(solved))))

    bins = {}
    for name in ("easy", "medium", "hard"):
        members = [e for e in envs if e.difficulty == name]
        if members:
            bins[name] = {
                "n_envs": len(members),
                "mean_return": float(np.mean([e.mean_return for e in members])),
                "solve_rate": float(np.mean([e.solve_rate for e in members])),
            }
    return EvalReport(
        master_seed=cfg.master_seed, runs_per_env=cfg.eval_runs_per_env,
        best_agent_pair_id=best_pair.pair_id, envs=envs, bins=bins,
        overall_mean_return=float(np.mean([e.mean_return for e in envs])),
        overall_solve_rate=float(np.mean([e.solve_rate for e in envs])))


# -- SAC-only baseline ----------------------------------------------------------

class SacOnlyRunner:
    """Plain SAC on bowl-only terrain (no CPPN contribution, fixed elevation).
    Shares the walker, networks, and replay buffer with the full loop."""

    def __init__(self, config: RunConfig, backend: WalkerBackend | None = None,
                 sac_state: sac.SacState | None = None,
                 replay_buffer: sac.ReplayBuffer | None = None, iteration: int = 0):
        self.config = config
        self.backend = backend or WalkerBackend(config)
        self.sac_state = sac_state or sac.make_sac_state(
            derive_seed(config.master_seed, "sac"),
            obs_dim=walker.OBS_DIM, act_dim=walker.ACT_DIM,
            hidden=config.sac_hidden_shape, lr=config.sac_policy_lr,
            tau=config.tau, gamma=config.discount,
            reward_scale=config.reward_scale)
        self.sac_state.alpha_lr = config.sac_alpha_lr
        self.replay_buffer = replay_buffer or sac.ReplayBuffer(
            config.replay_buffer_size, obs_dim=walker.OBS_DIM,
            act_dim=walker.ACT_DIM)
        self.iteration = iteration
        self.log: list[tuple] = []  # (iteration, eval_return, update_count, env_steps)
        self._genome = neat.initial_genome(
            derive_seed(config.master_seed, "initial-genome"), config.neat)

    def spec_for(self, iteration: int) -> terrain.TerrainSpec:
        cfg = self.config
        return terrain.TerrainSpec(
            genome=self._genome,
            bowl=terrain.BowlParams(
                rng_seed=derive_seed(cfg.master_seed, "bowl-iter", iteration, 0),
                coarse_resolution=cfg.coarse_resolution,
                threshold=cfg.bowl_threshold_init),
            elevation_z=cfg.elevation_init, resolution=cfg.resolution,
            iteration=iteration, bowl_weight=1.0, cppn_weight=0.0)

    def _eval_return(self, spec: terrain.TerrainSpec) -> float:
        env = self.backend.make_env(spec)
        obs = env.reset()
        total = 0.0
        while True:
            action = sac.select_action(self.sac_state, obs, deterministic=True)
            result = env.step(action)
            total += result.reward
            obs = result.observation
            if result.done:
                return float(total)

    def run_iteration(self) -> None:
        spec = self.spec_for(self.iteration)
        env = self.backend.make_env(spec)

        def sample_env(_rng):
            return env

        if self.config.sac_env_steps_per_iter > 0:
            sac.train_sac(self.sac_state, self.replay_buffer, sample_env,
                          self.config.sac_env_steps_per_iter,
                          batch_size=self.config.sac_batch_size)
        self.log.append((self.iteration, self._eval_return(spec),
                         self.sac_state.update_count,
                         self.sac_state.env_step_count))
        self.iteration += 1

    def run(self, iterations: int | None = None, on_checkpoint=None) -> None:
        total = iterations if iterations is not None else self.config.total_iterations
        target = self.iteration + total if iterations is not None else total
        while self.iteration < target:
            self.run_iteration()
            if on_checkpoint and self.iteration % self.config.checkpoint_interval == 0:
                on_checkpoint(self)

    # -- persistence --------------------------------------------------------

    def state(self) -> dict:
        out = {
            "version": persist.CHECKPOINT_VERSION,
            "sac_only": True,
            "config": self.config.to_dict(),
            "iteration": self.iteration,
            "log": list(self.log),
            "sac": persist._sac_state_dict(self.sac_state),
            "replay_buffer": (self.replay_buffer.state_dict()
                              if self.config.checkpoint_replay_buffer else None),
        }
        return out

    def save(self, path: str) -> None:
        payload = pickle.dumps(self.state(), protocol=4)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)

    @classmethod
    def restore(cls, path: str) -> "SacOnlyRunner":
        state = persist.load_checkpoint_state(path)
        if not state.get("sac_only"):
            raise persist.CheckpointError(f"{path} is not a SAC-only checkpoint")
        config = RunConfig.from_dict(state["config"])
        buffer = (sac.ReplayBuffer.from_state(state["replay_buffer"])
                  if state["replay_buffer"] else None)
        runner = cls(config, sac_state=persist._sac_from_state(state["sac"]),
                     replay_buffer=buffer, iteration=state["iteration"])
        runner.log = [tuple(r) for r in state["log"]]
        return runner


def write_sac_log(path: str, rows) -> None:
    _write_csv(path, ["iteration", "eval_return", "update_count", "env_steps"], rows)


# -- run orchestration ----------------------------------------------------------

@dataclass
class RunResult:
    run_dir: str
    mode: str
    iterations: int
    engine: Engine | None = None
    sac_runner: SacOnlyRunner | None = None
    report: EvalReport | None = None


def _prepare_run_dir(config: RunConfig) -> str:
    run_dir = config.data_dir
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    config.dump(os.path.join(run_dir, "config.yaml"))
    return run_dir


def _flush_engine_artifacts(engine: Engine, run_dir: str) -> None:
    write_run_log(os.path.join(run_dir, "run_log.csv"), engine.run_log)
    write_es_log(os.path.join(run_dir, "es_log.csv"), engine.es_log)
    write_events(os.path.join(run_dir, "events.csv"), engine.events)


def run_engine(engine: Engine, run_dir: str, iterations: int | None = None,
               evaluate: bool = True) -> RunResult:
    ckpt_dir = os.path.join(run_dir, "checkpoints")

    def on_checkpoint(eng: Engine) -> None:
        path = os.path.join(ckpt_dir, f"ckpt_{eng.iteration:06d}.pkl")
        persist.save_checkpoint(eng, path)
        persist.save_checkpoint(eng, os.path.join(ckpt_dir, "latest.pkl"))
        _flush_engine_artifacts(eng, run_dir)

    engine.run(iterations, on_checkpoint=on_checkpoint)
    persist.save_checkpoint(engine, os.path.join(ckpt_dir, "latest.pkl"))
    _flush_engine_artifacts(engine, run_dir)
    export_terrains(engine, os.path.join(run_dir, "terrains"))
    report = None
    if evaluate and engine.pairs:
        report = evaluate_suite(engine)
        report.save(os.path.join(run_dir, "eval_report.json"))
    return RunResult(run_dir=run_dir, mode=engine.config.mode,
                     iterations=engine.iteration, engine=engine, report=report)


def run_sac_only(runner: SacOnlyRunner, run_dir: str,
                 iterations: int | None = None) -> RunResult:
    ckpt_dir = os.path.join(run_dir, "checkpoints")

    def on_checkpoint(r: SacOnlyRunner) -> None:
        r.save(os.path.join(ckpt_dir, f"ckpt_{r.iteration:06d}.pkl"))
        r.save(os.path.join(ckpt_dir, "latest.pkl"))
        write_sac_log(os.path.join(run_dir, "sac_log.csv"), r.log)

    runner.run(iterations, on_checkpoint=on_checkpoint)
    runner.save(os.path.join(ckpt_dir, "latest.pkl"))
    write_sac_log(os.path.join(run_dir, "sac_log.csv"), runner.log)
    return RunResult(run_dir=run_dir, mode="sac-only",
                     iterations=runner.iteration, sac_runner=runner)


def run(config: RunConfig, iterations: int | None = None) -> RunResult:
    """Start a fresh run of the configured mode, writing all artifacts under
    config.data_dir."""
    run_dir = _prepare_run_dir(config)
    if config.mode == "sac-only":
        return run_sac_only(SacOnlyRunner(config), run_dir, iterations)
    engine = Engine(config, WalkerBackend(config))
    return run_engine(engine, run_dir, iterations)


def resume(checkpoint_path: str, iterations: int | None = None,
           data_dir: str | None = None) -> RunResult:
    """Continue a checkpointed run; the result is bit-identical to never
    having stopped."""
    state = persist.load_checkpoint_state(checkpoint_path)
    config = RunConfig.from_dict(state["config"])
    if data_dir:
        config.data_dir = data_dir
    run_dir = _prepare_run_dir(config)
    if state.get("sac_only"):
        return run_sac_only(SacOnlyRunner.restore(checkpoint_path), run_dir,
                            iterations)
    engine = persist.restore_engine(checkpoint_path, make_backend)
    return run_engine(engine, run_dir, iterations)


def checkpoint_summary(path: str) -> dict:
    """Human-oriented summary of a checkpoint bundle (for inspection)."""
    state = persist.load_checkpoint_state(path)
    summary = {
        "version": state["version"],
        "mode": state["config"]["mode"],
        "master_seed": state["config"]["master_seed"],
        "iteration": state["iteration"],
    }
    if state.get("sac_only"):
        summary.update({
            "kind": "sac-only",
            "sac_updates": state["sac"]["update_count"],
            "sac_env_steps": state["sac"]["env_step_count"],
            "replay_buffer_size": (state["replay_buffer"]["size"]
                                   if state["replay_buffer"] else 0),
        })
        return summary
    pairs = state["pairs"]
    summary.update({
        "kind": "coevolution",
        "active_pairs": len(pairs),
        "archived_pairs": len(state["archived_pairs"]),
        "agent_snapshots": len(state["ranker_snapshots"]),
        "best_score": (max(p["best_score"] for p in pairs)
                       if pairs else float("-inf")),
        "pair_ids": [p["pair_id"] for p in pairs],
        "events": len(state["events"]),
    })
    if state["sac"]:
        summary["sac_updates"] = state["sac"]["update_count"]
        summary["sac_env_steps"] = state["sac"]["env_step_count"]
    if state["replay_buffer"]:
        summary["replay_buffer_size"] = state["replay_buffer"]["size"]
    return summary
