"""Network-level ops built on the tensor primitives.

conv2d, max_pool, avg_pool, and softmax_cross_entropy register fused backward
closures (one tape entry each); the rest are composites of core primitives.
Convolution keeps only the padded input alive for backward and re-derives the
im2col buffer there, trading one extra copy for a much smaller tape.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ghnforge.errors import ShapeError
from ghnforge.tensor.core import (
    Tensor,
    _accum,
    _register,
    _tracked,
    add,
    getitem,
    matmul,
    mul,
    pow_const,
    reduce_mean,
    reshape,
    scale,
    shift,
    sigmoid,
    softmax,
    sub,
    tanh,
    transpose,
)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _out_extent(size: int, k: int, stride: int, pad: int, dil: int) -> int:
    eff = dil * (k - 1) + 1
    out = (size + 2 * pad - eff) // stride + 1
    if out <= 0:
        raise ShapeError(
            f"window of effective size {eff} does not fit input extent {size} with pad {pad}"
        )
    return out


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dil: int) -> np.ndarray:
    khe = dil * (kh - 1) + 1
    kwe = dil * (kw - 1) + 1
    win = sliding_window_view(xp, (khe, kwe), axis=(2, 3))
    return win[:, :, ::stride, ::stride, ::dil, ::dil]


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D convolution, NCHW input, (C_out, C_in/G, kH, kW) weight."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c_in, h, width = x.shape
    c_out, c_g, kh, kw = w.shape
    g = int(groups)
    if g < 1 or c_in % g or c_out % g:
        raise ShapeError(f"groups {g} must divide C_in {c_in} and C_out {c_out}")
    if c_g != c_in // g:
        raise ShapeError(
            f"weight expects {c_g} input channels per group but input supplies {c_in // g}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match C_out {c_out}")
    s, p, d = int(stride), int(padding), int(dilation)
    oh = _out_extent(h, kh, s, p, d)
    ow = _out_extent(width, kw, s, p, d)
    og = c_out // g
    k_flat = c_g * kh * kw

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data

    def im2col(buf: np.ndarray) -> np.ndarray:
        win = _windows(buf, kh, kw, s, d)  # (N, C, OH, OW, kH, kW)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, g, k_flat)
        return np.ascontiguousarray(cols.transpose(1, 0, 2))  # (G, X, K)

    cols_t = im2col(xp)
    wg = w.data.reshape(g, og, k_flat)
    out_g = np.matmul(cols_t, wg.transpose(0, 2, 1))  # (G, X, Og)
    out_d = out_g.transpose(1, 0, 2).reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out_d = out_d + bias.data.reshape(1, c_out, 1, 1)
    out = Tensor(np.ascontiguousarray(out_d))

    tracked = (x, w) if bias is None else (x, w, bias)
    if _tracked(*tracked):
        def bwd(grad):
            gg = grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, g, og).transpose(1, 0, 2)
            if w.requires_grad:
                cols_b = im2col(xp)
                gw = np.matmul(gg.transpose(0, 2, 1), cols_b)
                _accum(w, gw.reshape(c_out, c_g, kh, kw))
            if bias is not None and bias.requires_grad:
                _accum(bias, grad.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gcols = np.matmul(gg, wg)  # (G, X, K)
                gcols = gcols.transpose(1, 0, 2).reshape(n, oh, ow, c_in, kh, kw)
                gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    hs = slice(i * d, i * d + s * (oh - 1) + 1, s)
                    for j in range(kw):
                        ws = slice(j * d, j * d + s * (ow - 1) + 1, s)
                        gxp[:, :, hs, ws] += gcols[:, :, :, :, i, j]
                _accum(x, gxp[:, :, p:p + h, p:p + width] if p else gxp)
        _register(out, bwd)
    return out


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ w.T + bias with w shaped (out_features, in_features)."""
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be 2-D, got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear input features {x.shape[-1]} != weight expects {w.shape[1]}")
    y = matmul(x, transpose(w))
    if bias is not None:
        y = add(y, bias)
    return y


def max_pool(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 0) -> Tensor:
    """Max pooling with -inf padding so pads never win the argmax."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    k, s, p = int(kernel), int(stride), int(padding)
    if p >= k:
        raise ShapeError(f"max_pool padding {p} must be smaller than kernel {k}")
    oh = _out_extent(h, k, s, p, 1)
    ow = _out_extent(w, k, s, p, 1)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x.data
    win = _windows(xp, k, k, s, 1).reshape(n, c, oh, ow, k * k)
    idx = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0])
    if _tracked(x):
        hp, wp = xp.shape[2], xp.shape[3]
        def bwd(g):
            gxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
            hpos = (np.arange(oh) * s)[None, None, :, None] + idx // k
            wpos = (np.arange(ow) * s)[None, None, None, :] + idx % k
            nidx = np.arange(n)[:, None, None, None]
            cidx = np.arange(c)[None, :, None, None]
            np.add.at(gxp, (nidx, cidx, hpos, wpos), g)
            _accum(x, gxp[:, :, p:p + h, p:p + w] if p else gxp)
        _register(out, bwd)
    return out


def avg_pool(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 0) -> Tensor:
    """Average pooling; zero padding counts toward the k*k divisor."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    k, s, p = int(kernel), int(stride), int(padding)
    oh = _out_extent(h, k, s, p, 1)
    ow = _out_extent(w, k, s, p, 1)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = _windows(xp, k, k, s, 1)
    out = Tensor(win.mean(axis=(4, 5)))
    if _tracked(x):
        inv = 1.0 / (k * k)
        def bwd(g):
            gxp = np.zeros_like(xp)
            gk = g * inv
            for i in range(k):
                hs = slice(i, i + s * (oh - 1) + 1, s)
                for j in range(k):
                    ws = slice(j, j + s * (ow - 1) + 1, s)
                    gxp[:, :, hs, ws] += gk
            _accum(x, gxp[:, :, p:p + h, p:p + w] if p else gxp)
        _register(out, bwd)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean, (N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-D input, got {x.shape}")
    return reduce_mean(x, axis=(2, 3))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state=None,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Channel batch normalization over (N, *, H, W) with selectable statistics.

    Modes: "train" normalizes by batch moments and folds them into the state's
    running averages; "eval_batch" uses batch moments and leaves state alone;
    "eval_running" normalizes by the stored running moments; "refresh" uses
    batch moments and hands them to ``state.accumulate`` for cumulative
    re-estimation. Variances are biased (1/N) throughout.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm affine shapes {gamma.shape}/{beta.shape} do not match C={c}")
    if mode in ("train", "eval_batch", "refresh"):
        mu = reduce_mean(x, axis=(0, 2, 3), keepdims=True)
        centered = sub(x, mu)
        var = reduce_mean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        if mode == "train":
            if state is not None:
                bm = mu.data.reshape(c)
                bv = var.data.reshape(c)
                state.running_mean = (1.0 - momentum) * state.running_mean + momentum * bm
                state.running_var = (1.0 - momentum) * state.running_var + momentum * bv
        elif mode == "refresh":
            if state is None:
                raise ValueError("refresh mode needs a state to accumulate into")
            state.accumulate(mu.data.reshape(c), var.data.reshape(c))
    elif mode == "eval_running":
        if state is None:
            raise ValueError("eval_running mode needs a state with running moments")
        mu = Tensor(state.running_mean.reshape(1, c, 1, 1).astype(x.data.dtype))
        var = Tensor(state.running_var.reshape(1, c, 1, 1).astype(x.data.dtype))
        centered = sub(x, mu)
    else:
        raise ValueError(f"unknown batch_norm mode: {mode!r}")
    inv_std = pow_const(shift(var, eps), -0.5)
    xhat = mul(centered, inv_std)
    g4 = reshape(gamma, (1, c, 1, 1))
    b4 = reshape(beta, (1, c, 1, 1))
    return add(mul(xhat, g4), b4)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize over one axis, then scale and shift along it."""
    ax = axis % x.ndim
    c = x.shape[ax]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match {c}")
    mu = reduce_mean(x, axis=ax, keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(mul(centered, centered), axis=ax, keepdims=True)
    inv_std = pow_const(shift(var, eps), -0.5)
    xhat = mul(centered, inv_std)
    bshape = tuple(c if i == ax else 1 for i in range(x.ndim))
    return add(mul(xhat, reshape(gamma, bshape)), reshape(beta, bshape))


def multihead_self_attention(
    x: Tensor,
    w_qkv: Tensor,
    b_qkv: Tensor | None,
    w_proj: Tensor,
    b_proj: Tensor | None,
    heads: int = 8,
) -> Tensor:
    """Scaled dot-product self-attention on (N, T, d) with packed qkv weights."""
    if x.ndim != 3:
        raise ShapeError(f"attention expects (N, T, d) input, got {x.shape}")
    n, t, d = x.shape
    if w_qkv.shape != (3 * d, d):
        raise ShapeError(f"qkv weight {w_qkv.shape} does not match 3*{d} x {d}")
    if w_proj.shape != (d, d):
        raise ShapeError(f"projection weight {w_proj.shape} does not match {d} x {d}")
    if d % heads:
        raise ShapeError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    qkv = linear(x, w_qkv, b_qkv)  # (N, T, 3d)

    def split_heads(part: Tensor) -> Tensor:
        return transpose(reshape(part, (n, t, heads, dh)), (0, 2, 1, 3))

    q = split_heads(getitem(qkv, (slice(None), slice(None), slice(0, d))))
    k = split_heads(getitem(qkv, (slice(None), slice(None), slice(d, 2 * d))))
    v = split_heads(getitem(qkv, (slice(None), slice(None), slice(2 * d, 3 * d))))
    logits = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    att = softmax(logits, axis=-1)
    mixed = matmul(att, v)  # (N, H, T, dh)
    merged = reshape(transpose(mixed, (0, 2, 1, 3)), (n, t, d))
    return linear(merged, w_proj, b_proj)


def gru_cell(h: Tensor, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """One GRU step; gate order (reset, update, candidate) in the packed rows.

    Update convention: h' = (1 - z) * h + z * n, so a saturated-open update
    gate hands the state over to the candidate entirely.
    """
    w_ih, w_hh = params["weight_ih"], params["weight_hh"]
    b_ih = params.get("bias_ih")
    b_hh = params.get("bias_hh")
    hd = h.shape[-1]
    if w_ih.shape[0] != 3 * hd or w_hh.shape != (3 * hd, hd):
        raise ShapeError(
            f"gru packed weights {w_ih.shape}/{w_hh.shape} do not match hidden size {hd}"
        )
    gi = linear(x, w_ih, b_ih)
    gh = linear(h, w_hh, b_hh)
    sl = lambda t, i: getitem(t, (Ellipsis, slice(i * hd, (i + 1) * hd)))
    r = sigmoid(add(sl(gi, 0), sl(gh, 0)))
    z = sigmoid(add(sl(gi, 1), sl(gh, 1)))
    n = tanh(add(sl(gi, 2), mul(r, sl(gh, 2))))
    one_minus_z = shift(scale(z, -1.0), 1.0)
    return add(mul(one_minus_z, h), mul(z, n))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy from raw (N, K) logits and integer labels."""
    if logits.ndim != 2:
        raise ShapeError(f"cross-entropy expects (N, K) logits, got {logits.shape}")
    n, k = logits.shape
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch {n}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ShapeError(f"labels must be integers, got dtype {lab.dtype}")
    if lab.min() < 0 or lab.max() >= k:
        raise ShapeError(f"labels out of range [0, {k})")
    ld = logits.data
    m = ld.max(axis=1, keepdims=True)
    z = ld - m
    lse = m[:, 0] + np.log(np.exp(z).sum(axis=1))
    picked = ld[np.arange(n), lab]
    out = Tensor(np.asarray((lse - picked).mean(), dtype=ld.dtype))
    if _tracked(logits):
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        def bwd(g):
            gl = probs.copy()
            gl[np.arange(n), lab] -= 1.0
            _accum(logits, gl * (g / n))
        _register(out, bwd)
    return out
