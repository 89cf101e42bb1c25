"""Executable networks: graph + parameters -> differentiable forward pass."""

from __future__ import annotations

import warnings

import numpy as np

from ghnforge.errors import ShapeError
from ghnforge.archspace import ArchGraph, NodeSpec, Primitive
from ghnforge.netexec.params import BnState, ParamSet, check_against_graph, random_params
from ghnforge import tensor as T
from ghnforge.tensor import Tensor

_CONV_KINDS = (Primitive.CONV, Primitive.GROUP_CONV, Primitive.DILATED_GROUP_CONV)
BN_MODES = ("train", "eval_batch", "eval_running", "refresh")


def _heads_for(width: int) -> int:
    for h in (8, 4, 2, 1):
        if width % h == 0:
            return h
    return 1


class Network:
    """An ArchGraph bound to a ParamSet, runnable on NCHW image batches.

    Rectifications follow the ReLU-Conv-Norm ordering: every conv-kind node
    rectifies its input first, except when fed directly by the image. Eval
    modes never mutate state; "train" folds batch moments into BN state and
    "refresh" accumulates cumulative moments for re-estimation.
    """

    def __init__(self, graph: ArchGraph, params: ParamSet):
        self.graph = graph
        self.params = params
        self._pred = graph.predecessors()
        self._succ = graph.successors()
        self._input_id = graph.input_id()
        self._output_id = graph.output_id()

    @property
    def num_classes(self) -> int:
        return self.graph.nodes[self._output_id].param_shape[0]

    def forward(self, x, bn_mode: str = "eval_batch",
                capture: dict[int, np.ndarray] | None = None) -> Tensor:
        """Run a batch through the graph; ``capture``, when given, is filled
        with a copy of every node's output values keyed by node id."""
        if bn_mode not in BN_MODES:
            raise ValueError(f"unknown bn_mode {bn_mode!r}")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim != 4:
            raise ShapeError(f"expected NCHW batch, got shape {x.shape}")

        env: dict[int, Tensor] = {}
        remaining = {nid: len(s) for nid, s in self._succ.items()}
        for node in self.graph.nodes:
            if node.primitive == Primitive.INPUT:
                env[node.id] = x
            else:
                ins = [env[p] for p in self._pred[node.id]]
                env[node.id] = self._apply(node, ins, bn_mode)
            if capture is not None:
                capture[node.id] = env[node.id].data.copy()
            for p in self._pred[node.id]:
                remaining[p] -= 1
                if remaining[p] == 0:
                    del env[p]  # closures on the tape keep what backward needs

        out = env[self._output_id]
        if out.ndim == 4:
            if out.shape[2] != 1 or out.shape[3] != 1:
                raise ShapeError(f"classifier output kept extent {out.shape}")
            out = T.reshape(out, (out.shape[0], out.shape[1]))
        return out.assert_finite("network output")

    # ------------------------------------------------------------ node kinds

    def _apply(self, node: NodeSpec, ins: list[Tensor], bn_mode: str) -> Tensor:
        prim = node.primitive
        if prim == Primitive.SUM:
            return ins[0] if len(ins) == 1 else T.add_n(ins)
        if prim == Primitive.CONCAT:
            return T.concat(ins, axis=1)
        if len(ins) != 1:
            raise ShapeError(f"node {node.id} ({prim.value}) expects one input, got {len(ins)}")
        h = ins[0]

        if prim in _CONV_KINDS:
            return self._conv(node, h)
        if prim == Primitive.BATCH_NORM:
            gamma, beta = self._affine_rows(node)
            return T.batch_norm(h, gamma, beta, state=self.params.bn.get(node.id),
                                mode=bn_mode)
        if prim == Primitive.LAYER_NORM:
            gamma, beta = self._affine_rows(node)
            return T.layer_norm(h, gamma, beta, axis=1)
        if prim == Primitive.BIAS:
            c = node.param_shape[0]
            b = T.reshape(self.params.tensors[node.id], (c,))
            bshape = (1, c) + (1,) * (h.ndim - 2)
            return T.add(h, T.reshape(b, bshape))
        if prim == Primitive.MAX_POOL:
            return T.max_pool(h, kernel=3, stride=node.stride, padding=1)
        if prim == Primitive.AVG_POOL:
            return T.avg_pool(h, kernel=3, stride=node.stride, padding=1)
        if prim == Primitive.GLOB_AVG:
            return T.global_avg_pool(h)
        if prim == Primitive.MSA:
            return self._attention(node, h)
        if prim == Primitive.SE:
            return self._squeeze_excite(node, h)
        if prim == Primitive.POS_ENC:
            return self._pos_enc(node, h)
        raise ShapeError(f"node {node.id}: cannot execute primitive {prim.value}")

    def _fed_by_image(self, node: NodeSpec) -> bool:
        preds = self._pred[node.id]
        return len(preds) == 1 and preds[0] == self._input_id

    def _conv(self, node: NodeSpec, h: Tensor) -> Tensor:
        if not self._fed_by_image(node):
            h = T.relu(h)
        if h.ndim == 2:  # pooled features re-enter as 1x1 maps
            h = T.reshape(h, (h.shape[0], h.shape[1], 1, 1))
        o, i, kh, kw = node.param_shape
        groups = node.groups
        c_in = h.shape[1]
        if groups == 1 and i != c_in:
            flat = c_in * h.shape[2] * h.shape[3]
            if i == flat:  # dense layer over the flattened map
                h = T.reshape(h, (h.shape[0], flat, 1, 1))
            else:
                raise ShapeError(
                    f"node {node.id}: weight wants {i} input channels, map has {c_in}")
        # Half-padding keeps extent at ceil(H/stride); patchify-style convs
        # whose stride covers the whole receptive extent run unpadded.
        extent = node.dilation * (kh - 1) + 1
        pad = 0 if node.stride >= extent else node.dilation * ((kh - 1) // 2)
        return T.conv2d(h, self.params.tensors[node.id], stride=node.stride,
                        padding=pad, dilation=node.dilation, groups=groups)

    def _affine_rows(self, node: NodeSpec) -> tuple[Tensor, Tensor]:
        w = self.params.tensors[node.id]  # (2, C, 1, 1): scale row, shift row
        c = node.param_shape[1]
        gamma = T.reshape(T.getitem(w, 0), (c,))
        beta = T.reshape(T.getitem(w, 1), (c,))
        return gamma, beta

    def _attention(self, node: NodeSpec, h: Tensor) -> Tensor:
        c = node.param_shape[1]
        n, ch, height, width = h.shape
        if ch != c:
            raise ShapeError(f"node {node.id}: attention width {c} vs map {ch}")
        tokens = T.transpose(T.reshape(h, (n, c, height * width)), (0, 2, 1))
        w = T.reshape(self.params.tensors[node.id], (4 * c, c))
        w_qkv = T.getitem(w, slice(0, 3 * c))
        w_proj = T.getitem(w, slice(3 * c, 4 * c))
        mixed = T.multihead_self_attention(tokens, w_qkv, None, w_proj, None,
                                           heads=_heads_for(c))
        return T.reshape(T.transpose(mixed, (0, 2, 1)), (n, c, height, width))

    def _squeeze_excite(self, node: NodeSpec, h: Tensor) -> Tensor:
        o, c, _, _ = node.param_shape
        squeeze = c // 4 if c >= 4 else 1
        w = T.reshape(self.params.tensors[node.id], (o, c))
        w_down = T.getitem(w, slice(0, squeeze))                    # (squeeze, C)
        w_up = T.getitem(w, (slice(squeeze, o), slice(0, squeeze)))  # (C, squeeze)
        pooled = T.global_avg_pool(h)
        z = T.relu(T.linear(pooled, w_down))
        gate = T.sigmoid(T.linear(z, w_up))
        n, ch = gate.shape
        return T.mul(h, T.reshape(gate, (n, ch, 1, 1)))

    def _pos_enc(self, node: NodeSpec, h: Tensor) -> Tensor:
        t, c, _, _ = node.param_shape
        n, ch, height, width = h.shape
        if ch != c or height * width != t:
            raise ShapeError(
                f"node {node.id}: position table ({t},{c}) vs map {h.shape}")
        table = T.reshape(self.params.tensors[node.id], (t, c))
        grid = T.reshape(T.transpose(table, (1, 0)), (1, c, height, width))
        return T.add(h, grid)


def instantiate(g: ArchGraph, params: ParamSet) -> Network:
    """Bind parameters to a graph after checking coverage and shapes.

    BN nodes lacking running state get fresh zero-mean unit-var buffers.
    """
    check_against_graph(g, params)
    for node in g.nodes:
        if node.primitive == Primitive.BATCH_NORM and node.id not in params.bn:
            params.bn[node.id] = BnState.fresh(node.param_shape[1])
    return Network(g, params)


def forward(net: Network, batch, bn_mode: str = "eval_batch") -> Tensor:
    return net.forward(batch, bn_mode=bn_mode)


def refresh_bn_stats(net: Network, loader, num_batches: int = 200) -> dict[int, BnState]:
    """Re-estimate BN running moments from ``num_batches`` forward passes.

    The loader yields image batches (labels, if present, are ignored). States
    are reset first, then cumulative moments are streamed in, so the result
    matches a two-pass estimate over the same stream.
    """
    if not net.params.bn:
        warnings.warn("refresh_bn_stats: network has no batch-norm nodes")
        return {}
    for state in net.params.bn.values():
        state.reset()
    it = iter(loader)
    seen = 0
    with T.no_grad():
        while seen < num_batches:
            try:
                item = next(it)
            except StopIteration:
                break
            batch = item[0] if isinstance(item, (tuple, list)) else item
            net.forward(batch, bn_mode="refresh")
            seen += 1
    return net.params.bn


def head_node_ids(g: ArchGraph) -> tuple[int, int]:
    """(classifier weight node, classifier bias node): the last of each kind."""
    conv_ids = [n.id for n in g.nodes if n.primitive == Primitive.CONV]
    bias_ids = [n.id for n in g.nodes if n.primitive == Primitive.BIAS]
    if not conv_ids or not bias_ids:
        raise ShapeError("graph has no classification layer")
    return conv_ids[-1], bias_ids[-1]


def replace_head(net: Network, num_classes: int, init: str = "zero",
                 rng: np.random.Generator | None = None) -> Network:
    """Swap the classifier for a ``num_classes``-way one; share everything else.

    init "zero" gives uniform logits; "random" draws the fan-in baseline.
    """
    if init not in ("zero", "random"):
        raise ValueError(f"unknown head init {init!r}")
    g = net.graph
    w_id, b_id = head_node_ids(g)
    in_ch = g.nodes[w_id].param_shape[1]

    nodes = []
    for n in g.nodes:
        if n.id == w_id:
            nodes.append(NodeSpec(n.id, n.primitive, (num_classes, in_ch, 1, 1),
                                  n.stride, n.dilation, n.groups))
        elif n.id == b_id:
            nodes.append(NodeSpec(n.id, n.primitive, (num_classes, 1, 1, 1),
                                  n.stride, n.dilation, n.groups))
        else:
            nodes.append(NodeSpec(n.id, n.primitive, n.param_shape,
                                  n.stride, n.dilation, n.groups))
    new_graph = ArchGraph(nodes=nodes, edges=list(g.edges), meta=g.meta,
                          graph_id=g.graph_id).validate()

    if init == "zero":
        w_new = Tensor(np.zeros((num_classes, in_ch, 1, 1)))
    else:
        rng = rng or np.random.default_rng(0)
        w_new = Tensor(rng.normal(0.0, np.sqrt(2.0 / in_ch),
                                  (num_classes, in_ch, 1, 1)))
    tensors = dict(net.params.tensors)
    tensors[w_id] = w_new
    tensors[b_id] = Tensor(np.zeros((num_classes, 1, 1, 1)))
    return Network(new_graph, ParamSet(tensors=tensors, bn=net.params.bn))


__all__ = [
    "Network", "instantiate", "forward", "refresh_bn_stats", "replace_head",
    "head_node_ids", "random_params",
]
