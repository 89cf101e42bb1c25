"""The hypernetwork: encode nodes, pass messages, decode and normalize weights.

A :class:`GhnModel` owns a flat dict of named parameter tensors.  Prediction
runs entirely through differentiable ops, so a loss computed on a network
executing predicted weights backpropagates into these tensors.
"""
from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ghnforge import tensor as T
from ghnforge.archspace import (ArchGraph, GraphMeta, NodeSpec, Primitive,
                                shortest_paths)
from ghnforge.errors import ParseError, ShapeError
from ghnforge.ghn.config import CHANNEL_VALUES, SPATIAL_VALUES, GhnConfig
from ghnforge.netexec import (Network, ParamSet, head_node_ids, load_tensors,
                              random_params, save_tensors)
from ghnforge.tensor import Tensor

log = logging.getLogger(__name__)

#: Row index reserved for padding/unknown nodes when batching encodings.
DUMMY_OP_ROW = len(Primitive)

_PRIMITIVE_ROW = {p: i for i, p in enumerate(Primitive)}
_NORM_KINDS = frozenset({Primitive.BATCH_NORM, Primitive.LAYER_NORM})
#: Weight kinds whose input is rectified before use (or that read raw images,
#: which get the same gain), so fan-in scaling uses the rectified gain.
_RECTIFIED_KINDS = frozenset({Primitive.CONV, Primitive.GROUP_CONV,
                              Primitive.DILATED_GROUP_CONV})


@dataclass
class GhnModel:
    """A configuration plus every trainable tensor, addressed by stable name."""

    config: GhnConfig
    theta: dict[str, Tensor]

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.theta.values())

    def gru_params(self) -> dict[str, Tensor]:
        return {"weight_ih": self.theta["gru_weight_ih"],
                "weight_hh": self.theta["gru_weight_hh"],
                "bias_ih": self.theta["gru_bias_ih"],
                "bias_hh": self.theta["gru_bias_hh"]}


def _probe_chain(width: int, depth: int = 20, classes: int = 10) -> ArchGraph:
    """Plain deep convolution chain used to calibrate the decoder at init."""
    nodes = [NodeSpec(0, Primitive.INPUT),
             NodeSpec(1, Primitive.CONV, (width, 3, 3, 3))]
    for k in range(2, depth + 1):
        nodes.append(NodeSpec(k, Primitive.CONV, (width, width, 3, 3)))
    nodes += [NodeSpec(depth + 1, Primitive.GLOB_AVG),
              NodeSpec(depth + 2, Primitive.CONV, (classes, width, 1, 1)),
              NodeSpec(depth + 3, Primitive.BIAS, (classes, 1, 1, 1))]
    edges = [(k, k + 1) for k in range(depth + 3)]
    return ArchGraph(nodes=nodes, edges=edges,
                     meta=GraphMeta(cells=0, channels=width, has_bn=False))


def _chain_log_profile(chain: ArchGraph, params: ParamSet,
                       batch: np.ndarray) -> np.ndarray:
    """Log activation variance after each body convolution (head excluded)."""
    cap: dict[int, np.ndarray] = {}
    Network(chain, params).forward(batch, capture=cap)
    stack = [n.id for n in chain.nodes
             if n.primitive is Primitive.CONV and n.param_shape[2] == 3]
    return np.array([math.log(max(cap[k].var(), 1e-300)) for k in stack])


def init_ghn(config: GhnConfig, seed: int = 0) -> GhnModel:
    """Seeded parameter initialization.

    Linear stacks use fan-in-scaled Gaussians (gain 2 ahead of rectifiers, 1
    elsewhere) with zero biases, so each decoded weight block keeps unit
    second moment given a unit-variance node feature; embedding tables start
    standard normal, the gate cell uniform in +-1/sqrt(d), and feature
    layer-norm as the identity.  The decoding stack additionally gets
    deterministic corrections — a common-mode projection plus probe-measured
    rescalings — so that deep networks built from freshly decoded, fan-in
    normalized weights start with stable activation variance, the way
    fan-in-scaled random initialization does.  Everything is a pure function
    of ``seed``.
    """
    rng = np.random.default_rng(seed)
    d = config.hidden_dim
    d4 = d // 4
    half = max(d // 2, 1)
    dec = config.decoder
    o_s, i_s = dec.out_slice
    theta: dict[str, Tensor] = {}

    def par(name: str, data: np.ndarray) -> None:
        theta[name] = T.parameter(np.asarray(data, dtype=np.float64))

    def dense(prefix: str, out_dim: int, in_dim: int, gain: float) -> None:
        par(prefix + "_w", rng.normal(0.0, math.sqrt(gain / in_dim), (out_dim, in_dim)))
        par(prefix + "_b", np.zeros(out_dim))

    par("op_embed", rng.normal(0.0, 1.0, (len(Primitive) + 1, d)))
    par("spatial_embed", rng.normal(0.0, 1.0, (len(SPATIAL_VALUES), d4)))
    par("channel_embed", rng.normal(0.0, 1.0, (len(CHANNEL_VALUES), d4)))

    dense("msg1", half, d, 2.0)
    dense("msg2", d, half, 1.0)
    if config.virtual_edges:
        dense("sp1", half, d, 2.0)
        dense("sp2", d, half, 1.0)

    bound = 1.0 / math.sqrt(d)
    for name in ("gru_weight_ih", "gru_weight_hh"):
        par(name, rng.uniform(-bound, bound, (3 * d, d)))
    for name in ("gru_bias_ih", "gru_bias_hh"):
        par(name, rng.uniform(-bound, bound, 3 * d))

    if config.use_layer_norm:
        par("ln_gamma", np.ones(d))
        par("ln_beta", np.zeros(d))

    # Decoding stack, with deterministic corrections computed on a probe of
    # normalized features.  Rectified stages have positive means, so all the
    # entries of a decoded kernel would share the offset row.mean_activation
    # — a common mode that compounds multiplicatively through deep networks.
    # The final expansion's rows are therefore projected orthogonal to the
    # probe's mean activation, and every stage is rescaled so its probe
    # activations keep an exactly unit second moment — the fan-in scaling of
    # decoded weights assumes that.
    spots = dec.spatial ** 2
    fc_w = rng.normal(0.0, math.sqrt(2.0 / d), (dec.base_channels * spots, d))
    mid_w = rng.normal(0.0, math.sqrt(2.0 / dec.base_channels),
                       (dec.mid_channels, dec.base_channels))
    out_w = rng.normal(0.0, math.sqrt(1.0 / dec.mid_channels),
                       (dec.expand_channels, dec.mid_channels))
    cls_w = rng.normal(0.0, math.sqrt(2.0 / i_s), (dec.class_rows, i_s))

    probe = rng.normal(0.0, 1.0, (64, d))
    probe = (probe - probe.mean(axis=1, keepdims=True)) / probe.std(axis=1, keepdims=True)
    z = np.maximum(probe @ fc_w.T, 0.0)
    fc_w /= math.sqrt((z ** 2).mean())
    z = np.maximum(probe @ fc_w.T, 0.0)
    x = z.reshape(-1, dec.base_channels, spots).transpose(0, 2, 1)
    y = np.maximum(x.reshape(-1, dec.base_channels) @ mid_w.T, 0.0)
    mid_w /= math.sqrt((y ** 2).mean())
    y /= math.sqrt((y ** 2).mean())
    mean_dir = y.mean(axis=0)
    mean_dir /= np.linalg.norm(mean_dir)
    out_w -= (out_w @ mean_dir)[:, None] * mean_dir[None, :]
    blocks = y @ out_w.T
    out_w /= math.sqrt((blocks ** 2).mean())
    blocks /= math.sqrt((blocks ** 2).mean())

    par("dec_fc_w", fc_w)
    par("dec_fc_b", np.zeros(dec.base_channels * spots))
    par("dec_mid_w", mid_w)
    par("dec_mid_b", np.zeros(dec.mid_channels))
    par("dec_out_w", out_w)
    par("dec_out_b", np.zeros(dec.expand_channels))
    par("cls_w", cls_w)
    par("cls_b", np.zeros(dec.class_rows))

    dense("pred_trunk", dec.norm_hidden, d, 2.0)
    dense("norm_head", 2 * dec.norm_rows, dec.norm_hidden, 1.0)
    dense("bias_head", dec.bias_rows, dec.norm_hidden, 1.0)

    # The probe above fixes scales in distribution, but a deep stack of
    # same-shaped layers reuses one realized decoded draw, so that draw's
    # particular variance gain is what compounds.  Predict a canonical deep
    # convolution chain at the decoder's native width, run it, and fit the
    # least-squares drift of its log-variance profile against the mean profile
    # of fan-in-scaled Gaussian draws on the same batch.  Every decoded weight
    # scales with the expansion and rectified nets are positively homogeneous
    # in the weights, so dividing the expansion by the fitted per-layer factor
    # cancels the drift exactly.  Skipped when normalized output is off: raw
    # decoded weights keep near-unit entries regardless of scale corrections.
    model = GhnModel(config=config, theta=theta)
    if config.normalize_outputs:
        chain = _probe_chain(i_s)
        feats = propagate(encode_nodes(chain, model), chain, model, config)
        normed = normalize_params(decode_params(feats, chain, model, config),
                                  chain, config)
        batch = rng.normal(0.0, 1.0, (32, 3, 16, 16))
        reference = np.mean([_chain_log_profile(chain, random_params(chain, rng),
                                                batch[:8]) for _ in range(12)],
                            axis=0)
        drift = _chain_log_profile(chain, normed, batch) - reference
        depth = 1.0 + np.arange(drift.size)
        slope = float((depth * drift).sum() / (depth * depth).sum())
        log.debug("decoder stack drift before correction: %+.4f/layer", slope)
        correction = math.exp(slope / 2.0)
        out_w /= correction
        blocks /= correction
        theta["dec_out_w"] = T.parameter(out_w)

    center = blocks.reshape(-1, spots, dec.expand_channels)
    center = center[:, (dec.spatial // 2) * dec.spatial + dec.spatial // 2, :]
    taps = np.maximum(center.reshape(-1, i_s), 0.0)
    cls_w /= math.sqrt(((taps @ cls_w.T) ** 2).mean())
    theta["cls_w"] = T.parameter(cls_w)
    log.info("initialized hypernetwork: %d tensors, %d parameters",
             len(theta), model.parameter_count())
    return model


def _nearest_rows(values: np.ndarray, table: tuple[int, ...], what: str) -> np.ndarray:
    """Index of the closest table entry per value; ties pick the smaller entry."""
    grid = np.asarray(table)
    idx = np.argmin(np.abs(np.asarray(values)[:, None] - grid[None, :]), axis=1)
    off = grid[idx] != values
    if off.any():
        misses = sorted(set(np.asarray(values)[off].tolist()))
        log.warning("%s values %s are off the lookup grid; snapped to nearest",
                    what, misses)
    return idx


def encode_nodes(g: ArchGraph, model: GhnModel) -> Tensor:
    """Initial |V| x d features: four shape embeddings plus an op embedding.

    Each node's (out, in, height, width) parameter shape indexes the channel
    grid twice and the spatial grid twice; the four d/4-wide vectors are
    concatenated and summed with the node's op-type embedding.  Off-grid
    shape values snap to the nearest entry (logged as a warning).
    """
    th = model.theta
    shapes = np.array([n.param_shape for n in g.nodes], dtype=np.int64)
    o_idx = _nearest_rows(shapes[:, 0], CHANNEL_VALUES, "out-channel")
    i_idx = _nearest_rows(shapes[:, 1], CHANNEL_VALUES, "in-channel")
    h_idx = _nearest_rows(shapes[:, 2], SPATIAL_VALUES, "kernel-height")
    w_idx = _nearest_rows(shapes[:, 3], SPATIAL_VALUES, "kernel-width")
    op_idx = np.array([_PRIMITIVE_ROW[n.primitive] for n in g.nodes], dtype=np.int64)
    shape_part = T.concat([T.gather_rows(th["channel_embed"], o_idx),
                           T.gather_rows(th["channel_embed"], i_idx),
                           T.gather_rows(th["spatial_embed"], h_idx),
                           T.gather_rows(th["spatial_embed"], w_idx)], axis=1)
    return T.add(shape_part, T.gather_rows(th["op_embed"], op_idx))


def _mlp(x: Tensor, th: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = T.relu(T.linear(x, th[prefix + "1_w"], th[prefix + "1_b"]))
    return T.linear(hidden, th[prefix + "2_w"], th[prefix + "2_b"])


def propagate(h0: Tensor, g: ArchGraph, model: GhnModel, config: GhnConfig) -> Tensor:
    """Refine features for ``config.passes`` rounds and return |V| x d output.

    With the graph network enabled, each round runs a forward sweep (nodes in
    topological order, messages from direct predecessors) then a backward
    sweep (reverse order, messages from successors).  A node's message sums
    the message net over direct neighbors plus, when virtual edges are on,
    the long-range net over nodes within ``s_max`` hops weighted by 1/hops;
    the gate cell then updates the node state in place, so nodes later in a
    sweep see already-updated neighbor states.  After each full round the
    optional feature layer-norm is applied.

    With the graph network disabled every node is refined independently —
    the gate cell consumes the message net applied to the node's own state —
    so the result is connectivity-blind.
    """
    th = model.theta
    gru = model.gru_params()

    def maybe_norm(h: Tensor) -> Tensor:
        if config.use_layer_norm:
            return T.layer_norm(h, th["ln_gamma"], th["ln_beta"], axis=1)
        return h

    if not config.use_gnn:
        h = h0
        for _ in range(config.passes):
            h = T.gru_cell(h, _mlp(h, th, "msg"), gru)
            h = maybe_norm(h)
        return h

    n = len(g.nodes)
    pos = {node.id: v for v, node in enumerate(g.nodes)}
    pred: dict[int, list[int]] = defaultdict(list)
    succ: dict[int, list[int]] = defaultdict(list)
    for a, b in g.edges:
        pred[pos[b]].append(pos[a])
        succ[pos[a]].append(pos[b])

    virtual_fw: dict[int, list[tuple[int, int]]] = defaultdict(list)
    virtual_bw: dict[int, list[tuple[int, int]]] = defaultdict(list)
    if config.virtual_edges:
        paths = shortest_paths(g, s_max=config.s_max)
        for (u, v), s in paths["forward"].items():
            virtual_fw[pos[v]].append((pos[u], s))
        for (u, v), s in paths["backward"].items():
            virtual_bw[pos[v]].append((pos[u], s))

    feats = [T.getitem(h0, v) for v in range(n)]
    zero_message = Tensor(np.zeros(config.hidden_dim))

    def message(v: int, direct: list[int], virtual: list[tuple[int, int]]) -> Tensor:
        parts = []
        if direct:
            inputs = T.stack([feats[u] for u in direct], axis=0)
            parts.append(T.reduce_sum(_mlp(inputs, th, "msg"), axis=0))
        if virtual:
            inputs = T.stack([feats[u] for u, _ in virtual], axis=0)
            rows = _mlp(inputs, th, "sp")
            parts.append(T.weighted_sum([T.getitem(rows, j) for j in range(len(virtual))],
                                        [1.0 / s for _, s in virtual]))
        if not parts:
            return zero_message
        return parts[0] if len(parts) == 1 else T.add(parts[0], parts[1])

    forward_order = list(range(n))  # node storage order is topological
    for _ in range(config.passes):
        for v in forward_order:
            feats[v] = T.gru_cell(feats[v], message(v, pred[v], virtual_fw[v]), gru)
        for v in reversed(forward_order):
            feats[v] = T.gru_cell(feats[v], message(v, succ[v], virtual_bw[v]), gru)
        if config.use_layer_norm:
            stacked = maybe_norm(T.stack(feats, axis=0))
            feats = [T.getitem(stacked, v) for v in range(n)]
    return T.stack(feats, axis=0)


def _decode_block(hv: Tensor, th: dict[str, Tensor], dec) -> Tensor:
    """Dense decode of one feature into an (o_slice, i_slice, S, S) block."""
    s = dec.spatial
    z = T.relu(T.linear(hv, th["dec_fc_w"], th["dec_fc_b"]))
    x = T.transpose(T.reshape(z, (dec.base_channels, s * s)), (1, 0))
    x = T.relu(T.linear(x, th["dec_mid_w"], th["dec_mid_b"]))
    x = T.linear(x, th["dec_out_w"], th["dec_out_b"])
    o_s, i_s = dec.out_slice
    return T.reshape(T.transpose(x, (1, 0)), (o_s, i_s, s, s))


def _tile_slice_2d(mat: Tensor, rows: int, cols: int) -> Tensor:
    """Tile a 2-D tensor to cover (rows, cols), then slice the leading corner."""
    r, c = mat.shape
    reps = (-(-rows // r), -(-cols // c))
    if reps != (1, 1):
        mat = T.tile(mat, reps)
    if mat.shape != (rows, cols):
        mat = T.getitem(mat, (slice(0, rows), slice(0, cols)))
    return mat


def _decode_dense(hv: Tensor, shape: tuple[int, int, int, int],
                  th: dict[str, Tensor], dec) -> Tensor:
    o, i, kh, kw = shape
    s = dec.spatial
    if kh > s or kw > s:
        raise ShapeError(
            f"weight extent {kh}x{kw} exceeds the {s}x{s} decoder canvas")
    block = _decode_block(hv, th, dec)
    top = (s - kh) // 2
    left = (s - kw) // 2
    window = T.getitem(block, (slice(None), slice(None),
                               slice(top, top + kh), slice(left, left + kw)))
    o_s, i_s = dec.out_slice
    reps = (-(-o // o_s), -(-i // i_s), 1, 1)
    if reps != (1, 1, 1, 1):
        window = T.tile(window, reps)
    if window.shape != shape:
        window = T.getitem(window, (slice(0, o), slice(0, i),
                                    slice(None), slice(None)))
    return window


def _decode_classifier(hv: Tensor, shape: tuple[int, int, int, int],
                       th: dict[str, Tensor], dec) -> Tensor:
    k, feat, kh, kw = shape
    if kh != 1 or kw != 1:
        raise ShapeError(f"classifier weights must be 1x1, got extent {kh}x{kw}")
    block = _decode_block(hv, th, dec)
    s = dec.spatial
    center = T.getitem(block, (slice(None), slice(None), s // 2, s // 2))
    scores = T.linear(T.relu(center), th["cls_w"], th["cls_b"])  # (o_slice, class_rows)
    mat = _tile_slice_2d(T.transpose(scores, (1, 0)), k, feat)
    return T.reshape(mat, (k, feat, 1, 1))


def _decode_norm(hv: Tensor, shape: tuple[int, int, int, int],
                 th: dict[str, Tensor], dec) -> Tensor:
    rows, channels = shape[0], shape[1]
    if rows != 2:
        raise ShapeError(f"affine norm weights must have 2 rows, got {rows}")
    t = T.relu(T.linear(hv, th["pred_trunk_w"], th["pred_trunk_b"]))
    z = T.linear(t, th["norm_head_w"], th["norm_head_b"])
    mat = _tile_slice_2d(T.reshape(z, (2, dec.norm_rows)), 2, channels)
    return T.reshape(mat, (2, channels, 1, 1))


def _decode_bias(hv: Tensor, shape: tuple[int, int, int, int],
                 th: dict[str, Tensor], dec) -> Tensor:
    count = shape[0]
    t = T.relu(T.linear(hv, th["pred_trunk_w"], th["pred_trunk_b"]))
    z = T.linear(t, th["bias_head_w"], th["bias_head_b"])
    mat = _tile_slice_2d(T.reshape(z, (1, dec.bias_rows)), 1, count)
    return T.reshape(mat, (count, 1, 1, 1))


def decode_params(h: Tensor, g: ArchGraph, model: GhnModel,
                  config: GhnConfig) -> ParamSet:
    """Turn final node features into raw (un-normalized) weight tensors.

    Routing: the classification weight node gets the classifier head; bias
    nodes the bias head; batch/layer-norm nodes the affine head; every other
    parameterized kind decodes through the shared dense stack, whose block is
    tiled along channel axes and sliced exactly — leading corner on channels,
    centered window on spatial axes.  Graphs without a classification pair
    decode everything through the shared stack.
    """
    th = model.theta
    dec = config.decoder
    try:
        head_weight, _ = head_node_ids(g)
    except ShapeError:
        head_weight = None
    tensors: dict[int, Tensor] = {}
    for v, node in enumerate(g.nodes):
        if not node.has_params:
            continue
        hv = T.getitem(h, v)
        if node.id == head_weight:
            tensors[node.id] = _decode_classifier(hv, node.param_shape, th, dec)
        elif node.primitive is Primitive.BIAS:
            tensors[node.id] = _decode_bias(hv, node.param_shape, th, dec)
        elif node.primitive in _NORM_KINDS:
            tensors[node.id] = _decode_norm(hv, node.param_shape, th, dec)
        else:
            tensors[node.id] = _decode_dense(hv, node.param_shape, th, dec)
    return ParamSet(tensors=tensors, bn={})


def normalize_params(params: ParamSet, g: ArchGraph, config: GhnConfig) -> ParamSet:
    """Differentiable output normalization, applied per node kind.

    Weights of convolutional/dense kinds are scaled by sqrt(beta / fan-in)
    with fan-in = in_channels * height * width; affine norm weights map
    through 2*sigmoid(w / temperature) (identity at 0) and their shifts —
    like all bias vectors — through tanh(w / temperature) (zero at 0).  The
    classification weight counts as dense and rectified: the executor applies
    a rectifier to pooled features before the final projection.
    """
    kinds = {n.id: n.primitive for n in g.nodes}
    inv_t = 1.0 / config.temperature
    out: dict[int, Tensor] = {}
    for nid, w in params.tensors.items():
        kind = kinds[nid]
        if kind in _NORM_KINDS:
            scale_row = T.scale(T.sigmoid(T.scale(T.getitem(w, 0), inv_t)), 2.0)
            shift_row = T.tanh(T.scale(T.getitem(w, 1), inv_t))
            out[nid] = T.stack([scale_row, shift_row], axis=0)
        elif kind is Primitive.BIAS:
            out[nid] = T.tanh(T.scale(w, inv_t))
        else:
            beta = (config.beta_rectified if kind in _RECTIFIED_KINDS
                    else config.beta_plain)
            fan_in = w.shape[1] * w.shape[2] * w.shape[3]
            out[nid] = T.scale(w, math.sqrt(beta / fan_in))
    return ParamSet(tensors=out, bn=params.bn)


def predict(g: ArchGraph, model: GhnModel, config: GhnConfig | None = None) -> ParamSet:
    """One deterministic pass from graph to a full set of weight tensors."""
    config = model.config if config is None else config
    h = propagate(encode_nodes(g, model), g, model, config)
    params = decode_params(h, g, model, config)
    if config.normalize_outputs:
        params = normalize_params(params, g, config)
    return params


def graph_embedding(g: ArchGraph, model: GhnModel,
                    config: GhnConfig | None = None) -> Tensor:
    """Mean of the final node features: a d-dim architecture signature."""
    config = model.config if config is None else config
    h = propagate(encode_nodes(g, model), g, model, config)
    return T.reduce_mean(h, axis=0)


def save_ghn(path: str | Path, model: GhnModel) -> None:
    """Write all named tensors to the binary container; the JSON sidecar's
    meta block carries the configuration."""
    save_tensors(path, {k: t.data for k, t in model.theta.items()},
                 meta={"kind": "ghn", "config": model.config.to_dict()})


def load_ghn(path: str | Path) -> GhnModel:
    """Rebuild a model from a checkpoint written by :func:`save_ghn`."""
    path = Path(path)
    tensors, _ = load_tensors(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise ParseError(f"{path.name}: config sidecar {sidecar.name} is missing")
    meta = json.loads(sidecar.read_text()).get("meta") or {}
    if "config" not in meta:
        raise ParseError(f"{path.name}: sidecar has no config block")
    config = GhnConfig.from_dict(meta["config"])
    theta = {k: T.parameter(v) for k, v in tensors.items()}
    return GhnModel(config=config, theta=theta)
