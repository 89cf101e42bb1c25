"""Core architecture-space types: primitives, nodes, graphs, split rules."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ghnforge.errors import Rejected, ShapeError


class Primitive(enum.Enum):
    """The 15 node kinds a computational graph is built from.

    The string values are the stable serialized ids; never renumber or rename.
    """

    CONV = "conv"
    BATCH_NORM = "batch_norm"
    SUM = "sum"
    BIAS = "bias"
    GROUP_CONV = "group_conv"
    CONCAT = "concat"
    DILATED_GROUP_CONV = "dilated_group_conv"
    LAYER_NORM = "layer_norm"
    MAX_POOL = "max_pool"
    AVG_POOL = "avg_pool"
    MSA = "msa"
    SE = "se"
    INPUT = "input"
    GLOB_AVG = "glob_avg"
    POS_ENC = "pos_enc"


# primitives that never carry trainable parameters
PARAMETERLESS = frozenset({
    Primitive.SUM, Primitive.CONCAT, Primitive.INPUT,
    Primitive.GLOB_AVG, Primitive.MAX_POOL, Primitive.AVG_POOL,
})

ONES_SHAPE = (1, 1, 1, 1)


@dataclass
class NodeSpec:
    """One typed operation node with its trainable-parameter geometry.

    param_shape is always a 4-tuple (out, in, h, w), 1-filled where an op has
    fewer natural dims. Parameterless kinds carry the all-ones shape.
    """

    id: int
    primitive: Primitive
    param_shape: tuple[int, int, int, int] = ONES_SHAPE
    stride: int = 1
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        self.param_shape = tuple(int(v) for v in self.param_shape)
        if len(self.param_shape) != 4:
            raise ShapeError(f"node {self.id}: param_shape must have 4 extents")
        if any(v < 1 for v in self.param_shape):
            raise ShapeError(f"node {self.id}: non-positive extent in {self.param_shape}")
        if self.primitive in PARAMETERLESS and self.param_shape != ONES_SHAPE:
            raise ShapeError(
                f"node {self.id}: {self.primitive.value} is parameterless, shape must be all ones"
            )

    @property
    def has_params(self) -> bool:
        return self.primitive not in PARAMETERLESS

    def param_count(self) -> int:
        if not self.has_params:
            return 0
        o, i, h, w = self.param_shape
        if self.primitive == Primitive.SE:
            # packed rows: squeeze fc uses all in-columns, excite fc only in/4
            squeeze = i // 4 if i >= 4 else 1
            return squeeze * i + (o - squeeze) * squeeze
        return o * i * h * w


@dataclass
class GraphMeta:
    cells: int = 0
    channels: int = 0
    stem: str = "cifar"
    head: str = "glob"
    has_bn: bool = True


@dataclass
class ArchGraph:
    """DAG of operation nodes; node order is a fixed topological order."""

    nodes: list[NodeSpec]
    edges: list[tuple[int, int]]
    meta: GraphMeta = field(default_factory=GraphMeta)
    graph_id: int = 0

    def __post_init__(self):
        self.edges = [(int(a), int(b)) for a, b in self.edges]

    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def predecessors(self) -> dict[int, list[int]]:
        pred: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            pred[b].append(a)
        return pred

    def successors(self) -> dict[int, list[int]]:
        succ: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            succ[a].append(b)
        return succ

    def input_id(self) -> int:
        for n in self.nodes:
            if n.primitive == Primitive.INPUT:
                return n.id
        raise Rejected("graph has no input node")

    def output_id(self) -> int:
        succ = self.successors()
        sinks = [n.id for n in self.nodes if not succ[n.id]]
        if len(sinks) != 1:
            raise Rejected(f"graph must have exactly one sink, found {len(sinks)}")
        return sinks[0]

    def validate(self) -> "ArchGraph":
        """Check every structural invariant; raise Rejected on violation."""
        ids = self.node_ids()
        if len(set(ids)) != len(ids):
            raise Rejected("duplicate node ids")
        order = {nid: k for k, nid in enumerate(ids)}
        seen = set()
        for a, b in self.edges:
            if a not in order or b not in order:
                raise Rejected(f"edge ({a},{b}) references unknown node")
            if order[a] >= order[b]:
                raise Rejected(f"edge ({a},{b}) violates stored topological order")
            if (a, b) in seen:
                raise Rejected(f"duplicate edge ({a},{b})")
            seen.add((a, b))
        inputs = [n for n in self.nodes if n.primitive == Primitive.INPUT]
        if len(inputs) != 1:
            raise Rejected(f"graph must have exactly one input node, found {len(inputs)}")
        self.output_id()  # unique sink
        # reachability from the input along directed edges
        succ = self.successors()
        reach = {inputs[0].id}
        for nid in ids:  # topological order makes one sweep sufficient
            if nid in reach:
                for m in succ[nid]:
                    reach.add(m)
        if len(reach) != len(ids):
            missing = sorted(set(ids) - reach)[:5]
            raise Rejected(f"nodes unreachable from input: {missing}")
        return self


@dataclass
class SplitSpec:
    """Sampling rules for one dataset split."""

    name: str
    count: int
    cells: tuple[int, int]
    channels: tuple[int, int]
    nodes_per_cell: tuple[int, int]
    bn_probability: float = 0.9
    width_expansion: tuple[int, ...] = (1, 2)
    param_cap: int | None = None

    VALID_NAMES = ("train", "val", "test", "wide", "deep", "dense", "bnfree", "predefined")

    def __post_init__(self):
        if self.name not in self.VALID_NAMES:
            raise ValueError(f"unknown split name {self.name!r}")
        for label, rng in (("cells", self.cells), ("channels", self.channels),
                           ("nodes_per_cell", self.nodes_per_cell)):
            lo, hi = rng
            if lo > hi or lo < 1:
                raise ValueError(f"empty {label} range {rng}")
        if not 0.0 <= self.bn_probability <= 1.0:
            raise ValueError("bn_probability outside [0, 1]")
        if not self.width_expansion:
            raise ValueError("width_expansion choice set is empty")


@dataclass
class Genotype:
    """Sampled network blueprint before graph conversion.

    normal/reduce hold, per summation node, a pair of (op_name, source_index)
    branches; sources 0 and 1 are the two cell inputs, 2+ are earlier
    summation nodes. The concat lists name which summation nodes feed the
    cell output.
    """

    normal: list[tuple[tuple[str, int], tuple[str, int]]]
    normal_concat: list[int]
    reduce: list[tuple[tuple[str, int], tuple[str, int]]]
    reduce_concat: list[int]
    cells: int
    channels: int
    expansion: int = 1
    stem: str = "cifar"
    head: str = "glob"
    has_bn: bool = True
