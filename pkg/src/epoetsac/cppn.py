"""Compositional pattern producing networks mapping (x, y) to a height value.

A genome is a small feed-forward graph. Each node carries its own activation
function, a bias and a response multiplier; connections carry weights. Node
output = activation(bias + response * sum_i(weight_i * input_i)). Genomes are
immutable values: mutation (see the neat module) builds a new genome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

INPUT_X = 0
INPUT_Y = 1
OUTPUT_NODE = 2

PARAM_MIN = -10.0
PARAM_MAX = 10.0

SERIALIZATION_VERSION = 1


class StructuralError(Exception):
    """Genome graph violates the feed-forward contract."""


class ConfigError(Exception):
    """Unknown activation/aggregation or bad configuration value."""


def act_sin(z):
    return np.sin(z)


def act_sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def act_square(z):
    return z * z


def act_tanh(z):
    return np.tanh(z)


def act_identity(z):
    return z


def act_gauss(z):
    return np.exp(-np.minimum(z * z, 500.0))


ACTIVATIONS = {
    "sin": act_sin,
    "sigmoid": act_sigmoid,
    "square": act_square,
    "tanh": act_tanh,
    "identity": act_identity,
    "gauss": act_gauss,
}

ACTIVATION_NAMES = ("identity", "sin", "sigmoid", "square", "tanh", "gauss")


@dataclass(frozen=True)
class NodeGene:
    id: int
    kind: str  # input | hidden | output
    activation: str = "identity"
    aggregation: str = "sum"
    bias: float = 0.0
    response: float = 1.0

    def __post_init__(self):
        if self.kind not in ("input", "hidden", "output"):
            raise ConfigError(f"unknown node kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.aggregation != "sum":
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")


@dataclass(frozen=True)
class ConnectionGene:
    src: int
    dst: int
    weight: float
    enabled: bool = True


@dataclass(frozen=True)
class CppnGenome:
    nodes: tuple[NodeGene, ...]
    connections: tuple[ConnectionGene, ...]
    next_node_id: int = field(default=3)

    def node_by_id(self, node_id: int) -> NodeGene:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise StructuralError(f"no node with id {node_id}")

    def hidden_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "hidden"]

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(ids) != len(set(ids)):
            raise StructuralError("duplicate node ids")
        id_set = set(ids)
        kinds = {n.id: n.kind for n in self.nodes}
        if sorted(i for i in id_set if kinds[i] == "input") != [INPUT_X, INPUT_Y]:
            raise StructuralError("genome must have exactly input nodes 0 (x) and 1 (y)")
        if [i for i in id_set if kinds[i] == "output"] != [OUTPUT_NODE]:
            raise StructuralError("genome must have exactly one output node with id 2")
        for c in self.connections:
            if c.src not in id_set or c.dst not in id_set:
                raise StructuralError(f"connection {c.src}->{c.dst} references missing node")
            if kinds[c.dst] == "input":
                raise StructuralError("connections may not target input nodes")
        topo_order(self)  # raises on cycles


def topo_order(genome: CppnGenome) -> list[int]:
    """Kahn topological order over enabled connections; raises on cycles."""
    ids = [n.id for n in genome.nodes]
    incoming = {i: 0 for i in ids}
    out_edges: dict[int, list[int]] = {i: [] for i in ids}
    for c in genome.connections:
        if not c.enabled:
            continue
        incoming[c.dst] += 1
        out_edges[c.src].append(c.dst)
    ready = [i for i in ids if incoming[i] == 0]
    order: list[int] = []
    while ready:
        ready.sort()
        node = ready.pop(0)
        order.append(node)
        for dst in out_edges[node]:
            incoming[dst] -= 1
            if incoming[dst] == 0:
                ready.append(dst)
    if len(order) != len(ids):
        raise StructuralError("cycle detected in genome graph")
    return order


def evaluate(genome: CppnGenome, x: float, y: float) -> float:
    """Evaluate the network at one point of the unit square."""
    grid = _evaluate_batch(genome, np.asarray([x], dtype=float), np.asarray([y], dtype=float))
    return float(grid[0])


def _evaluate_batch(genome: CppnGenome, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    order = topo_order(genome)
    nodes = {n.id: n for n in genome.nodes}
    incoming: dict[int, list[ConnectionGene]] = {i: [] for i in nodes}
    for c in genome.connections:
        if c.enabled:
            incoming[c.dst].append(c)
    values: dict[int, np.ndarray] = {INPUT_X: xs, INPUT_Y: ys}
    for node_id in order:
        node = nodes[node_id]
        if node.kind == "input":
            continue
        agg = np.zeros_like(xs)
        for c in incoming[node_id]:
            agg = agg + c.weight * values[c.src]
        fn = ACTIVATIONS[node.activation]
        values[node_id] = fn(node.bias + node.response * agg)
    return values[OUTPUT_NODE]


def query_grid(genome: CppnGenome, resolution: int) -> np.ndarray:
    """Evaluate on the unit-square lattice; entry (i, j) is the point
    (i/(res-1), j/(res-1))."""
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    coords = np.linspace(0.0, 1.0, resolution)
    xs, ys = np.meshgrid(coords, coords, indexing="ij")
    flat = _evaluate_batch(genome, xs.ravel(), ys.ravel())
    return flat.reshape(resolution, resolution)


# -- serialization: versioned line-oriented text format --------------------

def genome_to_text(genome: CppnGenome) -> str:
    lines = [f"cppn-genome v{SERIALIZATION_VERSION}", f"next_node_id {genome.next_node_id}"]
    for n in genome.nodes:
        lines.append(
            f"node {n.id} {n.kind} {n.activation} {n.aggregation} "
            f"{n.bias!r} {n.response!r}"
        )
    for c in genome.connections:
        lines.append(f"conn {c.src} {c.dst} {c.weight!r} {int(c.enabled)}")
    return "\n".join(lines) + "\n"


def genome_from_text(text: str) -> CppnGenome:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("cppn-genome v"):
        raise ConfigError("not a cppn genome document")
    version = int(lines[0].split("v", 1)[1])
    if version != SERIALIZATION_VERSION:
        raise ConfigError(f"unsupported genome format version {version}")
    next_node_id = 3
    nodes: list[NodeGene] = []
    conns: list[ConnectionGene] = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "next_node_id":
            next_node_id = int(parts[1])
        elif parts[0] == "node":
            nodes.append(NodeGene(
                id=int(parts[1]), kind=parts[2], activation=parts[3],
                aggregation=parts[4], bias=float(parts[5]), response=float(parts[6]),
            ))
        elif parts[0] == "conn":
            conns.append(ConnectionGene(
                src=int(parts[1]), dst=int(parts[2]),
                weight=float(parts[3]), enabled=bool(int(parts[4])),
            ))
        else:
            raise ConfigError(f"unknown genome record {parts[0]!r}")
    genome = CppnGenome(nodes=tuple(nodes), connections=tuple(conns), next_node_id=next_node_id)
    genome.validate()
    return genome
