"""Cell-based architecture sampling and genotype-to-graph conversion.

A genotype describes two cells (normal, reduction) as lists of two-branch
summation nodes. Conversion expands branch ops into primitive chains, removes
zero branches outright, contracts identity branches to bare edges, inserts
1x1 projection adapters only where channel or spatial extents disagree, and
prunes everything that cannot reach the classifier. Disconnected or empty
results raise Rejected so the caller can resample.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ghnforge.errors import Rejected
from ghnforge.archspace.types import (
    ArchGraph,
    Genotype,
    GraphMeta,
    NodeSpec,
    ONES_SHAPE,
    Primitive,
    SplitSpec,
)

OP_NAMES = (
    "zero", "identity", "conv_1x1", "conv_3x3",
    "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
    "max_pool_3x3", "avg_pool_3x3", "msa", "se",
)

# ops that map arbitrary input channels to the cell width on their own
CHANNEL_MAPPING = frozenset({
    "conv_1x1", "conv_3x3", "sep_conv_3x3", "sep_conv_5x5",
    "dil_conv_3x3", "dil_conv_5x5",
})

STEMS = ("cifar", "imagenet", "vit")
STEM_WEIGHTS = (0.5, 0.3, 0.2)
HEADS = ("glob", "vgg")
HEAD_WEIGHTS = (0.8, 0.2)

SE_REDUCTION = 4


def sample_genotype(rng: np.random.Generator, split: SplitSpec) -> Genotype:
    """Draw one blueprint uniformly within the split's ranges."""
    cells = int(rng.integers(split.cells[0], split.cells[1] + 1))
    channels = int(rng.integers(split.channels[0], split.channels[1] + 1))
    npc = int(rng.integers(split.nodes_per_cell[0], split.nodes_per_cell[1] + 1))
    b = max(1, npc // 2)
    expansion = int(rng.choice(split.width_expansion))
    stem = STEMS[int(rng.choice(len(STEMS), p=STEM_WEIGHTS))]
    head = HEADS[int(rng.choice(len(HEADS), p=HEAD_WEIGHTS))]
    has_bn = bool(rng.random() < split.bn_probability)

    def cell():
        nodes = []
        for i in range(b):
            srcs = rng.choice(i + 2, size=2, replace=False)
            ops = rng.choice(len(OP_NAMES), size=2)
            nodes.append(((OP_NAMES[int(ops[0])], int(srcs[0])),
                          (OP_NAMES[int(ops[1])], int(srcs[1]))))
        return nodes

    return Genotype(
        normal=cell(), normal_concat=list(range(b)),
        reduce=cell(), reduce_concat=list(range(b)),
        cells=cells, channels=channels, expansion=expansion,
        stem=stem, head=head, has_bn=has_bn,
    )


@dataclass
class _Src:
    node: int
    ch: int
    spatial: int


class _Builder:
    def __init__(self):
        self.nodes: list[NodeSpec] = []
        self.edges: list[tuple[int, int]] = []
        self._edge_set: set[tuple[int, int]] = set()

    def add(self, primitive, shape=ONES_SHAPE, stride=1, dilation=1, groups=1) -> int:
        nid = len(self.nodes)
        self.nodes.append(NodeSpec(nid, primitive, tuple(shape), stride, dilation, groups))
        return nid

    def link(self, a: int, b: int) -> None:
        if (a, b) not in self._edge_set:
            self._edge_set.add((a, b))
            self.edges.append((a, b))

    def chain(self, start: int, descriptors) -> int:
        cur = start
        for prim, shape, stride, dilation, groups in descriptors:
            nid = self.add(prim, shape, stride, dilation, groups)
            self.link(cur, nid)
            cur = nid
        return cur


def _norm(c: int, has_bn: bool):
    if has_bn:
        return [(Primitive.BATCH_NORM, (2, c, 1, 1), 1, 1, 1)]
    return [(Primitive.BIAS, (c, 1, 1, 1), 1, 1, 1)]


def _op_descriptors(op: str, in_ch: int, c: int, stride: int, has_bn: bool):
    """Primitive chain for one branch op; preserving ops assume in_ch == c."""
    if op == "conv_1x1":
        return [(Primitive.CONV, (c, in_ch, 1, 1), stride, 1, 1)] + _norm(c, has_bn)
    if op == "conv_3x3":
        return [(Primitive.CONV, (c, in_ch, 3, 3), stride, 1, 1)] + _norm(c, has_bn)
    if op.startswith("sep_conv"):
        k = int(op[-1])
        return ([(Primitive.GROUP_CONV, (in_ch, 1, k, k), stride, 1, in_ch),
                 (Primitive.CONV, (c, in_ch, 1, 1), 1, 1, 1)] + _norm(c, has_bn)
                + [(Primitive.GROUP_CONV, (c, 1, k, k), 1, 1, c),
                   (Primitive.CONV, (c, c, 1, 1), 1, 1, 1)] + _norm(c, has_bn))
    if op.startswith("dil_conv"):
        k = int(op[-1])
        return ([(Primitive.DILATED_GROUP_CONV, (in_ch, 1, k, k), stride, 2, in_ch),
                 (Primitive.CONV, (c, in_ch, 1, 1), 1, 1, 1)] + _norm(c, has_bn))
    if op == "max_pool_3x3":
        return [(Primitive.MAX_POOL, ONES_SHAPE, stride, 1, 1)]
    if op == "avg_pool_3x3":
        return [(Primitive.AVG_POOL, ONES_SHAPE, stride, 1, 1)]
    if op == "msa":
        pre = [(Primitive.AVG_POOL, ONES_SHAPE, stride, 1, 1)] if stride > 1 else []
        return pre + [
            (Primitive.LAYER_NORM, (2, c, 1, 1), 1, 1, 1),
            (Primitive.MSA, (4 * c, c, 1, 1), 1, 1, 1),
            (Primitive.LAYER_NORM, (2, c, 1, 1), 1, 1, 1),
            (Primitive.CONV, (c, c, 1, 1), 1, 1, 1),
            (Primitive.BIAS, (c, 1, 1, 1), 1, 1, 1),
            (Primitive.CONV, (c, c, 1, 1), 1, 1, 1),
            (Primitive.BIAS, (c, 1, 1, 1), 1, 1, 1),
        ]
    if op == "se":
        pre = [(Primitive.AVG_POOL, ONES_SHAPE, stride, 1, 1)] if stride > 1 else []
        squeeze = max(1, c // SE_REDUCTION)
        return pre + [(Primitive.SE, (squeeze + c, c, 1, 1), 1, 1, 1)]
    raise ValueError(f"unknown branch op {op!r}")


def _build_stem(b: _Builder, stem: str, c0: int, image_size: int, has_bn: bool,
                input_id: int) -> _Src:
    if stem == "cifar":
        end = b.chain(input_id, [(Primitive.CONV, (c0, 3, 3, 3), 1, 1, 1)] + _norm(c0, has_bn))
        return _Src(end, c0, image_size)
    if stem == "imagenet":
        end = b.chain(input_id, [(Primitive.CONV, (c0, 3, 5, 5), 2, 1, 1)] + _norm(c0, has_bn)
                      + [(Primitive.MAX_POOL, ONES_SHAPE, 2, 1, 1)])
        return _Src(end, c0, max(1, image_size // 4))
    if stem == "vit":
        patch = min(16, max(2, image_size // 4))
        spatial = max(1, image_size // patch)
        end = b.chain(input_id, [
            (Primitive.CONV, (c0, 3, patch, patch), patch, 1, 1),
            (Primitive.POS_ENC, (spatial * spatial, c0, 1, 1), 1, 1, 1),
        ])
        return _Src(end, c0, spatial)
    raise ValueError(f"unknown stem {stem!r}")


def _build_head(b: _Builder, head: str, src: _Src, num_classes: int, c0: int) -> int:
    if head == "glob":
        gap = b.add(Primitive.GLOB_AVG)
        b.link(src.node, gap)
        return b.chain(gap, [
            (Primitive.CONV, (num_classes, src.ch, 1, 1), 1, 1, 1),
            (Primitive.BIAS, (num_classes, 1, 1, 1), 1, 1, 1),
        ])
    if head == "vgg":
        hidden = min(4096, max(64, 8 * c0))
        flat = src.ch * src.spatial * src.spatial
        return b.chain(src.node, [
            (Primitive.CONV, (hidden, flat, 1, 1), 1, 1, 1),
            (Primitive.BIAS, (hidden, 1, 1, 1), 1, 1, 1),
            (Primitive.CONV, (num_classes, hidden, 1, 1), 1, 1, 1),
            (Primitive.BIAS, (num_classes, 1, 1, 1), 1, 1, 1),
        ])
    raise ValueError(f"unknown head {head!r}")


def genotype_to_graph(g: Genotype, num_classes: int = 10, image_size: int = 32) -> ArchGraph:
    """Expand a genotype into a validated primitive DAG."""
    b = _Builder()
    input_id = b.add(Primitive.INPUT)
    c0 = g.channels
    stem_src = _build_stem(b, g.stem, c0, image_size, g.has_bn, input_id)

    reductions = {g.cells // 3, (2 * g.cells) // 3}
    prev_prev, prev = stem_src, stem_src
    stage = 0
    for ci in range(g.cells):
        is_red = ci in reductions
        if is_red:
            stage += 1
        c = c0 * (g.expansion ** stage)
        spatial_out = max(1, prev.spatial // 2) if is_red else prev.spatial
        cell = g.reduce if is_red else g.normal
        concat_list = g.reduce_concat if is_red else g.normal_concat

        sources: list[_Src | None] = [prev_prev, prev]
        adapters: dict[int, _Src] = {}

        def adapted(idx: int) -> _Src:
            # shared projection bringing a source to the cell width
            if idx not in adapters:
                src = sources[idx]
                end = b.chain(src.node,
                              [(Primitive.CONV, (c, src.ch, 1, 1), 1, 1, 1)] + _norm(c, g.has_bn))
                adapters[idx] = _Src(end, c, src.spatial)
            return adapters[idx]

        for (br0, br1) in cell:
            feeders: list[int] = []
            for op, src_idx in (br0, br1):
                src = sources[src_idx]
                if op == "zero" or src is None:
                    continue
                if op == "identity":
                    if src.ch == c and src.spatial == spatial_out:
                        feeders.append(src.node)
                    else:
                        stride = max(1, src.spatial // spatial_out)
                        end = b.chain(src.node,
                                      [(Primitive.CONV, (c, src.ch, 1, 1), stride, 1, 1)]
                                      + _norm(c, g.has_bn))
                        feeders.append(end)
                    continue
                if op in CHANNEL_MAPPING:
                    stride = max(1, src.spatial // spatial_out)
                    end = b.chain(src.node, _op_descriptors(op, src.ch, c, stride, g.has_bn))
                else:
                    base = src if src.ch == c else adapted(src_idx)
                    stride = max(1, base.spatial // spatial_out)
                    end = b.chain(base.node, _op_descriptors(op, c, c, stride, g.has_bn))
                feeders.append(end)
            if not feeders:
                sources.append(None)  # dead summation node
                continue
            s = b.add(Primitive.SUM)
            for f in feeders:
                b.link(f, s)
            sources.append(_Src(s, c, spatial_out))

        members = [sources[pos + 2] for pos in concat_list
                   if pos + 2 < len(sources) and sources[pos + 2] is not None]
        if not members:
            raise Rejected(f"cell {ci} produced no output")
        if len(members) == 1:
            cell_out = members[0]
        else:
            cat = b.add(Primitive.CONCAT)
            for m in members:
                b.link(m.node, cat)
            cell_out = _Src(cat, c * len(members), spatial_out)
        prev_prev, prev = prev, cell_out

    _build_head(b, g.head, prev, num_classes, c0)

    graph = ArchGraph(
        nodes=b.nodes, edges=b.edges,
        meta=GraphMeta(cells=g.cells, channels=g.channels, stem=g.stem,
                       head=g.head, has_bn=g.has_bn),
    )
    return _prune_to_core(graph)


def _prune_to_core(graph: ArchGraph) -> ArchGraph:
    """Drop nodes off every input-to-classifier path, reindex, validate."""
    n = len(graph.nodes)
    succ = graph.successors()
    pred = graph.predecessors()
    try:
        input_id = graph.input_id()
    except Rejected:
        raise
    sinks = [nd.id for nd in graph.nodes if not succ[nd.id]]
    # the classifier is the last constructed node; anything else dangling goes
    target = graph.nodes[-1].id
    if target not in sinks:
        raise Rejected("classifier head is not a sink")

    fwd = {input_id}
    for nd in graph.nodes:
        if nd.id in fwd:
            fwd.update(succ[nd.id])
    bwd = {target}
    for nd in reversed(graph.nodes):
        if nd.id in bwd:
            bwd.update(pred[nd.id])
    keep = fwd & bwd
    if input_id not in keep or target not in keep:
        raise Rejected("no path from input to classifier")
    if len(keep) < 3:
        raise Rejected("graph degenerated below minimal size")

    remap: dict[int, int] = {}
    new_nodes: list[NodeSpec] = []
    for nd in graph.nodes:
        if nd.id in keep:
            remap[nd.id] = len(new_nodes)
            new_nodes.append(NodeSpec(len(new_nodes), nd.primitive, nd.param_shape,
                                      nd.stride, nd.dilation, nd.groups))
    new_edges = sorted((remap[a], remap[b]) for a, b in graph.edges
                       if a in keep and b in keep)
    out = ArchGraph(nodes=new_nodes, edges=new_edges, meta=copy.deepcopy(graph.meta),
                    graph_id=graph.graph_id)
    return out.validate()
