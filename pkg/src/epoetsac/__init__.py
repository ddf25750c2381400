"""Coevolution of CPPN-generated heightmap terrains and hexapod walker
policies: per-pair evolution-strategies optimization, a shared soft
actor-critic learner, novelty-gated environment reproduction, and agent
transfer — with a deterministic, checkpointable run harness."""

from .config import ConfigError, RunConfig
from .harness import EvalReport, SacOnlyRunner, WalkerBackend, evaluate_suite, resume, run
from .orchestrator import EAPair, Engine
from .persist import CheckpointError, load_checkpoint_state, restore_engine, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "RunConfig",
    "EvalReport", "SacOnlyRunner", "WalkerBackend", "evaluate_suite",
    "resume", "run",
    "EAPair", "Engine",
    "CheckpointError", "load_checkpoint_state", "restore_engine",
    "save_checkpoint",
    "__version__",
]
