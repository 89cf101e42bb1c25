"""Shared test utilities: finite-difference gradient checking, fixtures."""

from __future__ import annotations

import numpy as np

from ghnforge import tensor as T
from ghnforge.archspace import ArchGraph, GraphMeta, NodeSpec, Primitive

FD_STEP = 1e-4
GRAD_RTOL = 1e-4


def conv_chain(depth=20, width=16, classes=10):
    """Plain deep chain: input -> depth convs -> glob_avg -> head -> bias."""
    nodes = [NodeSpec(0, Primitive.INPUT),
             NodeSpec(1, Primitive.CONV, (width, 3, 3, 3))]
    for k in range(2, depth + 1):
        nodes.append(NodeSpec(k, Primitive.CONV, (width, width, 3, 3)))
    nid = depth + 1
    nodes += [NodeSpec(nid, Primitive.GLOB_AVG),
              NodeSpec(nid + 1, Primitive.CONV, (classes, width, 1, 1)),
              NodeSpec(nid + 2, Primitive.BIAS, (classes, 1, 1, 1))]
    edges = [(k, k + 1) for k in range(nid + 2)]
    meta = GraphMeta(cells=0, channels=width, stem="conv", head="glob_avg",
                     has_bn=False)
    return ArchGraph(nodes=nodes, edges=edges, meta=meta).validate()


def fd_grad(f, arrays, index, step=FD_STEP):
    """Central-difference gradient of scalar f w.r.t. arrays[index]."""
    work = [a.copy() for a in arrays]
    target = work[index]
    g = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + step
        fp = f(work)
        target[idx] = orig - step
        fm = f(work)
        target[idx] = orig
        g[idx] = (fp - fm) / (2.0 * step)
    return g


def assert_grads_match_fd(make_loss, arrays, rtol=GRAD_RTOL, step=FD_STEP, check=None):
    """Backprop vs finite differences for each input array.

    make_loss maps a list of Tensors to a scalar Tensor. Error is measured
    relative to the gradient's overall magnitude so structurally-zero entries
    do not blow up the ratio. ``check`` restricts which inputs are verified.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [T.parameter(a.copy(), dtype=np.float64) for a in arrays]
    with T.record():
        loss = make_loss(tensors)
        T.backward(loss)

    def f(arrs):
        return make_loss([T.Tensor(a, dtype=np.float64) for a in arrs]).item()

    indices = range(len(arrays)) if check is None else check
    for i in indices:
        an = tensors[i].grad
        if an is None:
            an = np.zeros_like(arrays[i])
        fd = fd_grad(f, arrays, i, step=step)
        scale = max(np.abs(an).max(), np.abs(fd).max(), 1e-8)
        worst = np.abs(an - fd).max() / scale
        assert worst < rtol, f"input {i}: relative gradient error {worst:.3e} >= {rtol}"
