"""Checkpoint bundles: full engine state as a versioned pickle of plain
containers (dicts, lists, numpy arrays). Restoring rebuilds live objects so
the next iteration is bit-identical to an uninterrupted run.
"""

from __future__ import annotations

import os
import pickle

import numpy as np

from . import es, sac, terrain
from .config import RunConfig
from .cppn import genome_from_text, genome_to_text
from .nets import Adam, MlpParams
from .orchestrator import EAPair, Engine, LogRow

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def _spec_state(spec: terrain.TerrainSpec) -> dict:
    return {
        "genome": genome_to_text(spec.genome),
        "bowl_seed": spec.bowl.rng_seed,
        "bowl_coarse": spec.bowl.coarse_resolution,
        "bowl_threshold": spec.bowl.threshold,
        "elevation_z": spec.elevation_z,
        "resolution": spec.resolution,
        "iteration": spec.iteration,
        "bowl_weight": spec.bowl_weight,
        "cppn_weight": spec.cppn_weight,
    }


def spec_from_state(state: dict) -> terrain.TerrainSpec:
    return terrain.TerrainSpec(
        genome=genome_from_text(state["genome"]),
        bowl=terrain.BowlParams(rng_seed=state["bowl_seed"],
                                coarse_resolution=state["bowl_coarse"],
                                threshold=state["bowl_threshold"]),
        elevation_z=state["elevation_z"],
        resolution=state["resolution"],
        iteration=state["iteration"],
        bowl_weight=state["bowl_weight"],
        cppn_weight=state["cppn_weight"],
    )


def _mlp_state(p: MlpParams) -> dict:
    return {"weights": [w.copy() for w in p.weights],
            "biases": [b.copy() for b in p.biases],
            "hidden_activation": p.hidden_activation,
            "output_activation": p.output_activation}


def _mlp_from_state(state: dict) -> MlpParams:
    return MlpParams([w.copy() for w in state["weights"]],
                     [b.copy() for b in state["biases"]],
                     state["hidden_activation"], state["output_activation"])


def _agent_state(agent: es.EsState) -> dict:
    return {"policy": _mlp_state(agent.policy), "alpha": agent.alpha,
            "sigma": agent.sigma, "adam": agent.adam.state_dict(),
            "step_count": agent.step_count, "noise_seed": agent.noise_seed}


def _agent_from_state(state: dict) -> es.EsState:
    return es.EsState(policy=_mlp_from_state(state["policy"]), alpha=state["alpha"],
                      sigma=state["sigma"], adam=Adam.from_state(state["adam"]),
                      step_count=state["step_count"], noise_seed=state["noise_seed"])


def _pair_state(pair: EAPair) -> dict:
    return {"pair_id": pair.pair_id, "parent_id": pair.parent_id,
            "env": _spec_state(pair.env), "agent": _agent_state(pair.agent),
            "created_iteration": pair.created_iteration,
            "best_score": pair.best_score, "last_score": pair.last_score,
            "eligibility_score": pair.eligibility_score,
            "repro_threshold": pair.repro_threshold}


def _pair_from_state(state: dict) -> EAPair:
    return EAPair(pair_id=state["pair_id"], parent_id=state["parent_id"],
                  env=spec_from_state(state["env"]),
                  agent=_agent_from_state(state["agent"]),
                  created_iteration=state["created_iteration"],
                  best_score=state["best_score"], last_score=state["last_score"],
                  eligibility_score=state["eligibility_score"],
                  repro_threshold=state["repro_threshold"])


def _sac_state_dict(state: sac.SacState) -> dict:
    return {
        "policy": _mlp_state(state.policy), "q1": _mlp_state(state.q1),
        "q2": _mlp_state(state.q2), "value": _mlp_state(state.value),
        "target_value1": _mlp_state(state.target_value1),
        "target_value2": _mlp_state(state.target_value2),
        "log_alpha": state.log_alpha, "obs_dim": state.obs_dim,
        "act_dim": state.act_dim, "seed": state.seed,
        "target_entropy": state.target_entropy, "lr": state.lr,
        "alpha_lr": state.alpha_lr, "tau": state.tau, "gamma": state.gamma,
        "reward_scale": state.reward_scale, "update_count": state.update_count,
        "env_step_count": state.env_step_count,
        "adams": {name: getattr(state, f"{name}_adam").state_dict()
                  for name in ("policy", "q1", "q2", "value", "alpha")},
    }


def _sac_from_state(d: dict) -> sac.SacState:
    state = sac.SacState(
        policy=_mlp_from_state(d["policy"]), q1=_mlp_from_state(d["q1"]),
        q2=_mlp_from_state(d["q2"]), value=_mlp_from_state(d["value"]),
        target_value1=_mlp_from_state(d["target_value1"]),
        target_value2=_mlp_from_state(d["target_value2"]),
        log_alpha=d["log_alpha"], obs_dim=d["obs_dim"], act_dim=d["act_dim"],
        seed=d["seed"], target_entropy=d["target_entropy"], lr=d["lr"],
        alpha_lr=d["alpha_lr"], tau=d["tau"], gamma=d["gamma"],
        reward_scale=d["reward_scale"], update_count=d["update_count"],
        env_step_count=d["env_step_count"],
    )
    for name in ("policy", "q1", "q2", "value", "alpha"):
        setattr(state, f"{name}_adam", Adam.from_state(d["adams"][name]))
    return state


def engine_state(engine: Engine) -> dict:
    state = {
        "version": CHECKPOINT_VERSION,
        "config": engine.config.to_dict(),
        "iteration": engine.iteration,
        "next_pair_id": engine.next_pair_id,
        "pairs": [_pair_state(p) for p in engine.pairs],
        "archived_pairs": [_pair_state(p) for p in engine.archived_pairs],
        "ranker_snapshots": [s.copy() for s in engine.ranker.snapshots],
        "run_log": [vars(row).copy() for row in engine.run_log],
        "es_log": list(engine.es_log),
        "events": list(engine.events),
        "sac": None,
        "replay_buffer": None,
        "sac_hidden_indices": ([idx.copy() for idx in engine.sac_hidden_indices]
                               if engine.sac_hidden_indices is not None else None),
    }
    if engine.sac_state is not None:
        state["sac"] = _sac_state_dict(engine.sac_state)
    if engine.replay_buffer is not None and engine.config.checkpoint_replay_buffer:
        state["replay_buffer"] = engine.replay_buffer.state_dict()
    return state


def save_checkpoint(engine: Engine, path: str) -> None:
    payload = pickle.dumps(engine_state(engine), protocol=4)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint_state(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            state = pickle.load(fh)
    except (OSError, pickle.UnpicklingError, EOFError, AttributeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict) or "version" not in state:
        raise CheckpointError(f"{path} is not a checkpoint bundle")
    if state["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {state['version']} not supported "
            f"(expected {CHECKPOINT_VERSION})")
    return state


def restore_engine(path: str, backend_factory) -> Engine:
    """backend_factory(config) builds the rollout backend for the restored
    engine."""
    state = load_checkpoint_state(path)
    config = RunConfig.from_dict(state["config"])
    sac_state = _sac_from_state(state["sac"]) if state["sac"] else None
    buffer = (sac.ReplayBuffer.from_state(state["replay_buffer"])
              if state["replay_buffer"] else None)
    if config.mode == "epoet-sac" and buffer is None:
        buffer = sac.ReplayBuffer(config.replay_buffer_size, obs_dim=53, act_dim=18)
    engine = Engine(config, backend_factory(config), sac_state=sac_state,
                    replay_buffer=buffer)
    engine.iteration = state["iteration"]
    engine.next_pair_id = state["next_pair_id"]
    engine.pairs = [_pair_from_state(p) for p in state["pairs"]]
    engine.archived_pairs = [_pair_from_state(p) for p in state["archived_pairs"]]
    engine.ranker.snapshots = [np.asarray(s) for s in state["ranker_snapshots"]]
    engine.run_log = [LogRow(**row) for row in state["run_log"]]
    engine.es_log = list(state["es_log"])
    engine.events = [tuple(e) for e in state["events"]]
    engine.sac_hidden_indices = ([np.asarray(i) for i in state["sac_hidden_indices"]]
                                 if state["sac_hidden_indices"] is not None else None)
    return engine
