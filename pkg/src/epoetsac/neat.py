"""Mutation-driven evolution of CPPN genomes.

No fitness function, no speciation, no crossover: environments evolve by
single-parent mutation and the orchestrator's novelty gate decides which
offspring survive. Only two entry points exist: initial_genome and
mutate_genome. Both are pure functions of their seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .cppn import (
    ACTIVATION_NAMES,
    INPUT_X,
    INPUT_Y,
    OUTPUT_NODE,
    ConnectionGene,
    CppnGenome,
    NodeGene,
)
from .seeding import substream


@dataclass(frozen=True)
class NeatConfig:
    initial_connection: str = "full_nodirect"
    activation_default: str = "random"
    activation_mutate_rate: float = 0.5
    activation_options: tuple[str, ...] = ACTIVATION_NAMES
    aggregation_default: str = "sum"
    aggregation_mutate_rate: float = 0.1  # parsed but inert: "sum" is the only option
    aggregation_options: tuple[str, ...] = ("sum",)
    bias_init_mean: float = 0.0
    bias_init_stdev: float = 0.1
    bias_init_type: str = "gaussian"
    bias_max_value: float = 10.0
    bias_min_value: float = -10.0
    bias_mutate_power: float = 0.1
    bias_mutate_rate: float = 0.75
    compatibility_disjoint_coefficient: float = 1.0  # parsed but unused (no speciation)
    compatibility_weight_coefficient: float = 0.5  # parsed but unused (no speciation)
    enabled_default: bool = True
    feed_forward: bool = True
    node_add_prob: float = 0.1
    node_delete_prob: float = 0.075
    num_inputs: int = 2
    num_hidden: int = 2
    num_outputs: int = 1
    response_init_mean: float = 1.0
    response_init_stdev: float = 0.0
    response_init_type: str = "gaussian"
    response_max_value: float = 10.0
    response_min_value: float = -10.0
    response_mutate_power: float = 0.2
    response_mutate_rate: float = 0.75
    single_structural_mutation: bool = True
    structural_mutation_surer: str = "default"
    weight_init_mean: float = 0.0
    weight_init_stdev: float = 0.25
    weight_init_type: str = "gaussian"
    weight_max_value: float = 10.0
    weight_min_value: float = -10.0
    weight_mutate_power: float = 0.1
    weight_mutate_rate: float = 0.75

    def __post_init__(self):
        for name in ("activation_mutate_rate", "aggregation_mutate_rate",
                     "bias_mutate_rate", "weight_mutate_rate", "response_mutate_rate",
                     "node_add_prob", "node_delete_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.num_inputs != 2 or self.num_outputs != 1:
            raise ValueError("genomes are fixed to 2 inputs (x, y) and 1 output")

    @classmethod
    def from_dict(cls, data: dict) -> "NeatConfig":
        known = {f: None for f in cls.__dataclass_fields__}
        unknown = [k for k in data if k not in known]
        if unknown:
            raise ValueError(f"unknown NeatConfig keys: {unknown}")
        coerced = dict(data)
        for key in ("activation_options", "aggregation_options"):
            if key in coerced:
                coerced[key] = tuple(coerced[key])
        return cls(**coerced)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation_options"] = list(d["activation_options"])
        d["aggregation_options"] = list(d["aggregation_options"])
        return d


def _clamp(value: float, lo: float, hi: float) -> float:
    return float(min(hi, max(lo, value)))


def _draw_activation(rng: np.random.Generator, config: NeatConfig) -> str:
    if config.activation_default == "random":
        return str(rng.choice(list(config.activation_options)))
    return config.activation_default


def initial_genome(rng_seed: int, config: NeatConfig) -> CppnGenome:
    """2 inputs, 2 hidden, 1 output with full indirect connectivity
    (inputs -> hiddens, hiddens -> output, no direct input -> output)."""
    if config.initial_connection != "full_nodirect":
        raise ValueError(f"unsupported initial connection {config.initial_connection!r}")
    rng = substream(rng_seed, "initial-genome")

    def draw_bias():
        return _clamp(rng.normal(config.bias_init_mean, config.bias_init_stdev),
                      config.bias_min_value, config.bias_max_value)

    def draw_response():
        return _clamp(rng.normal(config.response_init_mean, config.response_init_stdev),
                      config.response_min_value, config.response_max_value)

    def draw_weight():
        return _clamp(rng.normal(config.weight_init_mean, config.weight_init_stdev),
                      config.weight_min_value, config.weight_max_value)

    nodes = [
        NodeGene(id=INPUT_X, kind="input"),
        NodeGene(id=INPUT_Y, kind="input"),
        NodeGene(id=OUTPUT_NODE, kind="output", activation=_draw_activation(rng, config),
                 bias=draw_bias(), response=draw_response()),
    ]
    hidden_ids = list(range(3, 3 + config.num_hidden))
    for hid in hidden_ids:
        nodes.append(NodeGene(id=hid, kind="hidden", activation=_draw_activation(rng, config),
                              bias=draw_bias(), response=draw_response()))
    conns = []
    for src in (INPUT_X, INPUT_Y):
        for hid in hidden_ids:
            conns.append(ConnectionGene(src=src, dst=hid, weight=draw_weight(),
                                        enabled=config.enabled_default))
    for hid in hidden_ids:
        conns.append(ConnectionGene(src=hid, dst=OUTPUT_NODE, weight=draw_weight(),
                                    enabled=config.enabled_default))
    genome = CppnGenome(nodes=tuple(nodes), connections=tuple(conns),
                        next_node_id=3 + config.num_hidden)
    genome.validate()
    return genome


def _structural_mutation(genome: CppnGenome, config: NeatConfig,
                         rng: np.random.Generator) -> CppnGenome:
    """At most one structural change. Falls through to a no-op when the chosen
    mutation is impossible (e.g. delete with no hidden nodes)."""
    roll = rng.random()
    if roll < config.node_add_prob:
        enabled = [i for i, c in enumerate(genome.connections) if c.enabled]
        if not enabled:
            return genome
        idx = int(rng.choice(enabled))
        split = genome.connections[idx]
        new_id = genome.next_node_id
        new_node = NodeGene(id=new_id, kind="hidden",
                            activation=_draw_activation(rng, config),
                            bias=0.0, response=1.0)
        conns = list(genome.connections)
        conns[idx] = replace(split, enabled=False)
        # classic node split: in-link weight 1, out-link inherits the weight
        conns.append(ConnectionGene(src=split.src, dst=new_id, weight=1.0))
        conns.append(ConnectionGene(src=new_id, dst=split.dst, weight=split.weight))
        return CppnGenome(nodes=genome.nodes + (new_node,), connections=tuple(conns),
                          next_node_id=new_id + 1)
    if roll < config.node_add_prob + config.node_delete_prob:
        hidden = genome.hidden_ids()
        if not hidden:
            return genome
        victim = int(rng.choice(hidden))
        nodes = tuple(n for n in genome.nodes if n.id != victim)
        conns = tuple(c for c in genome.connections if victim not in (c.src, c.dst))
        return CppnGenome(nodes=nodes, connections=conns, next_node_id=genome.next_node_id)
    return genome


def mutate_genome(genome: CppnGenome, config: NeatConfig, rng_seed: int) -> CppnGenome:
    """One mutation pass: at most one structural mutation, then independent
    parametric perturbations of weights, biases, responses and activations."""
    rng = substream(rng_seed, "mutate-genome")
    mutated = _structural_mutation(genome, config, rng)

    conns = []
    for c in mutated.connections:
        weight = c.weight
        if rng.random() < config.weight_mutate_rate:
            weight = _clamp(weight + rng.normal(0.0, config.weight_mutate_power),
                            config.weight_min_value, config.weight_max_value)
        conns.append(replace(c, weight=weight))

    nodes = []
    for n in mutated.nodes:
        if n.kind == "input":
            nodes.append(n)
            continue
        bias, response, activation = n.bias, n.response, n.activation
        if rng.random() < config.bias_mutate_rate:
            bias = _clamp(bias + rng.normal(0.0, config.bias_mutate_power),
                          config.bias_min_value, config.bias_max_value)
        if rng.random() < config.response_mutate_rate:
            response = _clamp(response + rng.normal(0.0, config.response_mutate_power),
                              config.response_min_value, config.response_max_value)
        if rng.random() < config.activation_mutate_rate:
            activation = _draw_activation(rng, replace_default_random(config))
        nodes.append(replace(n, bias=bias, response=response, activation=activation))

    out = CppnGenome(nodes=tuple(nodes), connections=tuple(conns),
                     next_node_id=mutated.next_node_id)
    out.validate()
    return out


def replace_default_random(config: NeatConfig) -> NeatConfig:
    # activation re-draw is always uniform over the options, regardless of the
    # configured default
    if config.activation_default == "random":
        return config
    return replace(config, activation_default="random")
