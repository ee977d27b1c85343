"""Cell-based architecture search spaces: genomes, sampling, mutation.

A genome is a tuple of intermediate nodes; each node is a tuple of
(source, op) edges where sources index earlier nodes in the cell DAG.
Two space flavors are provided:

* ``MlpCellSpace`` -- two input nodes feed ``num_intermediate_nodes``
  intermediate nodes, each with exactly two (source, op) edges whose
  sources are mutable. Mutations: identity, op, hidden-state.
* ``TabularCellSpace`` -- a complete DAG on ``num_nodes`` nodes with one
  op per edge and fixed wiring (node i receives one edge from every
  earlier node). Only op mutation applies. With 4 nodes and 5 ops the
  space contains 5**6 = 15625 genomes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

DEFAULT_OP_SET = (
    "linear-relu",
    "linear-tanh",
    "identity",
    "scale-half",
    "linear-no-activation",
)


@dataclass(frozen=True)
class Architecture:
    """An architecture identity: space id plus a canonical genome."""

    space_id: str
    genome: tuple  # tuple of nodes; node = tuple of (source, op) edges

    def __post_init__(self):
        object.__setattr__(
            self,
            "genome",
            tuple(tuple((int(s), str(o)) for s, o in node) for node in self.genome),
        )

    def key(self) -> str:
        """Stable string form usable as a store key."""
        nodes = ";".join(
            ",".join(f"{s}:{o}" for s, o in node) for node in self.genome
        )
        return f"{self.space_id}|{nodes}"

    @staticmethod
    def from_key(key: str) -> "Architecture":
        space_id, nodes = key.split("|", 1)
        genome = []
        for node in nodes.split(";"):
            edges = []
            for edge in node.split(","):
                s, o = edge.split(":", 1)
                edges.append((int(s), o))
            genome.append(tuple(edges))
        return Architecture(space_id, tuple(genome))


class InvalidGenomeError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpaceSpec:
    """Configuration of the MLP cell space realized by the toy trainer."""

    num_intermediate_nodes: int = 4
    op_set: tuple = DEFAULT_OP_SET
    hidden_width: int = 16
    macro_depth: int = 2

    def __post_init__(self):
        if not self.op_set:
            raise ValueError("op_set must be nonempty")
        if self.hidden_width < 1 or self.macro_depth < 1:
            raise ValueError("widths and depth must be >= 1")
        if self.num_intermediate_nodes < 1:
            raise ValueError("need at least one intermediate node")
        object.__setattr__(self, "op_set", tuple(self.op_set))


class MlpCellSpace:
    """DARTS-style cell: 2 input nodes, n intermediate nodes, 2 edges each.

    Node indices 0 and 1 are the input nodes; intermediate node j has
    cell index j + 2 and may draw each edge's source from any index
    < j + 2.
    """

    NUM_INPUT_NODES = 2

    def __init__(self, spec: CellSpaceSpec = CellSpaceSpec(), space_id: str = "mlp-cell"):
        self.spec = spec
        self.space_id = space_id

    @property
    def op_set(self):
        return self.spec.op_set

    def validate(self, arch: Architecture):
        if arch.space_id != self.space_id:
            raise InvalidGenomeError(f"wrong space id {arch.space_id!r}")
        if len(arch.genome) != self.spec.num_intermediate_nodes:
            raise InvalidGenomeError("wrong intermediate node count")
        for j, node in enumerate(arch.genome):
            if len(node) != 2:
                raise InvalidGenomeError("each intermediate node needs 2 edges")
            for src, op in node:
                if not 0 <= src < j + self.NUM_INPUT_NODES:
                    raise InvalidGenomeError(f"edge source {src} not before node {j}")
                if op not in self.spec.op_set:
                    raise InvalidGenomeError(f"unknown op {op!r}")

    def sample(self, rng: np.random.Generator) -> Architecture:
        genome = []
        for j in range(self.spec.num_intermediate_nodes):
            hi = j + self.NUM_INPUT_NODES
            edges = tuple(
                (int(rng.integers(hi)), self.spec.op_set[rng.integers(len(self.spec.op_set))])
                for _ in range(2)
            )
            genome.append(edges)
        return Architecture(self.space_id, tuple(genome))

    def enumerate(self):
        """All genomes; only tractable for tiny node/op counts."""
        per_node = []
        for j in range(self.spec.num_intermediate_nodes):
            hi = j + self.NUM_INPUT_NODES
            edge_choices = list(itertools.product(range(hi), self.spec.op_set))
            per_node.append(list(itertools.product(edge_choices, repeat=2)))
        for nodes in itertools.product(*per_node):
            yield Architecture(self.space_id, tuple(nodes))

    def mutate(self, arch: Architecture, rng: np.random.Generator) -> Architecture:
        """One of identity / op / hidden-state mutation, chosen uniformly.

        Hidden-state mutation resamples one edge's source; when the hit
        node has no alternative source (only node 0 exists... never the
        case here since two input nodes always exist) or the resample
        would be a no-op space-wise, the mutation type is resampled.
        """
        self.validate(arch)
        genome = [list(node) for node in arch.genome]
        while True:
            kind = ("identity", "op", "hidden-state")[rng.integers(3)]
            if kind == "identity":
                return arch
            j = int(rng.integers(len(genome)))
            e = int(rng.integers(2))
            src, op = genome[j][e]
            if kind == "op":
                others = [o for o in self.spec.op_set if o != op]
                if not others:
                    continue
                genome[j][e] = (src, others[rng.integers(len(others))])
            else:
                hi = j + self.NUM_INPUT_NODES
                others = [s for s in range(hi) if s != src]
                if not others:
                    continue
                genome[j][e] = (int(others[rng.integers(len(others))]), op)
            return Architecture(self.space_id, tuple(tuple(n) for n in genome))


class TabularCellSpace:
    """Complete-DAG cell with an op on every edge and fixed wiring.

    Node 0 is the input; node i (i >= 1) receives one edge from each of
    nodes 0..i-1. The genome therefore varies only in its ops. Mutation
    is op mutation only.
    """

    def __init__(self, num_nodes: int = 4, op_set: tuple = DEFAULT_OP_SET,
                 space_id: str = "tabular-cell"):
        if num_nodes < 2:
            raise ValueError("need at least 2 nodes")
        if not op_set:
            raise ValueError("op_set must be nonempty")
        self.num_nodes = num_nodes
        self.op_set = tuple(op_set)
        self.space_id = space_id
        self.num_edges = num_nodes * (num_nodes - 1) // 2

    def size(self) -> int:
        return len(self.op_set) ** self.num_edges

    def validate(self, arch: Architecture):
        if arch.space_id != self.space_id:
            raise InvalidGenomeError(f"wrong space id {arch.space_id!r}")
        if len(arch.genome) != self.num_nodes - 1:
            raise InvalidGenomeError("wrong node count")
        for j, node in enumerate(arch.genome, start=1):
            if len(node) != j:
                raise InvalidGenomeError(f"node {j} must have {j} edges")
            for e, (src, op) in enumerate(node):
                if src != e:
                    raise InvalidGenomeError("tabular wiring is fixed")
                if op not in self.op_set:
                    raise InvalidGenomeError(f"unknown op {op!r}")

    def from_ops(self, ops) -> Architecture:
        """Build a genome from a flat op sequence in edge order."""
        ops = list(ops)
        if len(ops) != self.num_edges:
            raise InvalidGenomeError(f"expected {self.num_edges} ops")
        genome, k = [], 0
        for j in range(1, self.num_nodes):
            genome.append(tuple((e, ops[k + e]) for e in range(j)))
            k += j
        return Architecture(self.space_id, tuple(genome))

    def flat_ops(self, arch: Architecture):
        return [op for node in arch.genome for _, op in node]

    def sample(self, rng: np.random.Generator) -> Architecture:
        ops = [self.op_set[rng.integers(len(self.op_set))] for _ in range(self.num_edges)]
        return self.from_ops(ops)

    def enumerate(self):
        for ops in itertools.product(self.op_set, repeat=self.num_edges):
            yield self.from_ops(ops)

    def mutate(self, arch: Architecture, rng: np.random.Generator) -> Architecture:
        """Op mutation: resample one edge's op to a different choice."""
        self.validate(arch)
        ops = self.flat_ops(arch)
        e = int(rng.integers(self.num_edges))
        others = [o for o in self.op_set if o != ops[e]]
        if not others:
            return arch
        ops[e] = others[rng.integers(len(others))]
        return self.from_ops(ops)

    def edit_distance(self, a: Architecture, b: Architecture) -> int:
        return sum(x != y for x, y in zip(self.flat_ops(a), self.flat_ops(b)))
