"""Parameter containers, baseline init, and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ghnforge.errors import ParseError, ShapeError
from ghnforge.tensor import Tensor
from ghnforge.archspace import ArchGraph, Primitive

_CONV_KINDS = (Primitive.CONV, Primitive.GROUP_CONV, Primitive.DILATED_GROUP_CONV)

MAGIC = b"GFPK"
FORMAT_VERSION = 1


@dataclass
class BnState:
    """Running per-channel moments for one batch-norm node.

    ``accumulate`` keeps cumulative (not exponential) averages so that a
    refresh over a finite stream reproduces the stream's two-pass moments.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    batches: int = 0
    _sum_mean: np.ndarray = field(default=None, repr=False)
    _sum_sq: np.ndarray = field(default=None, repr=False)

    @classmethod
    def fresh(cls, channels: int) -> "BnState":
        return cls(np.zeros(channels), np.ones(channels))

    def reset(self) -> None:
        c = self.running_mean.shape[0]
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.batches = 0
        self._sum_mean = None
        self._sum_sq = None

    def accumulate(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        second = batch_var + batch_mean ** 2
        if self._sum_mean is None:
            self._sum_mean = np.zeros_like(batch_mean)
            self._sum_sq = np.zeros_like(batch_mean)
        self._sum_mean = self._sum_mean + batch_mean
        self._sum_sq = self._sum_sq + second
        self.batches += 1
        self.running_mean = self._sum_mean / self.batches
        self.running_var = np.maximum(self._sum_sq / self.batches - self.running_mean ** 2, 0.0)

    def copy(self) -> "BnState":
        out = BnState(self.running_mean.copy(), self.running_var.copy(), self.batches)
        if self._sum_mean is not None:
            out._sum_mean = self._sum_mean.copy()
            out._sum_sq = self._sum_sq.copy()
        return out


@dataclass
class ParamSet:
    """Tensors per parameterized node id, plus batch-norm running state."""

    tensors: dict[int, Tensor]
    bn: dict[int, BnState] = field(default_factory=dict)

    def total_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ParamSet":
        return ParamSet(
            tensors={k: Tensor(t.data.copy(), requires_grad=t.requires_grad)
                     for k, t in self.tensors.items()},
            bn={k: s.copy() for k, s in self.bn.items()},
        )


def random_params(g: ArchGraph, rng: np.random.Generator) -> ParamSet:
    """Fan-in-scaled Gaussian baseline: gain 2 after rectifiers, 1 elsewhere.

    Norm layers start as the identity map, biases and position codes at zero.
    """
    tensors: dict[int, Tensor] = {}
    bn: dict[int, BnState] = {}
    for node in g.nodes:
        if not node.has_params:
            continue
        o, i, h, w = node.param_shape
        if node.primitive in _CONV_KINDS:
            std = np.sqrt(2.0 / (i * h * w))
            data = rng.normal(0.0, std, node.param_shape)
        elif node.primitive == Primitive.MSA:
            data = rng.normal(0.0, np.sqrt(1.0 / i), node.param_shape)
        elif node.primitive == Primitive.SE:
            squeeze = i // 4 if i >= 4 else 1
            data = np.zeros(node.param_shape)
            data[:squeeze] = rng.normal(0.0, np.sqrt(2.0 / i), (squeeze, i, h, w))
            data[squeeze:, :squeeze] = rng.normal(
                0.0, np.sqrt(1.0 / squeeze), (o - squeeze, squeeze, h, w))
        elif node.primitive in (Primitive.BATCH_NORM, Primitive.LAYER_NORM):
            data = np.zeros(node.param_shape)
            data[0] = 1.0  # scale row; shift row stays zero
            if node.primitive == Primitive.BATCH_NORM:
                bn[node.id] = BnState.fresh(i)
        else:  # bias, pos_enc
            data = np.zeros(node.param_shape)
        tensors[node.id] = Tensor(data.astype(np.float64))
    return ParamSet(tensors=tensors, bn=bn)


# ------------------------------------------------------------- checkpoint io

def _write_key(f, key: str) -> None:
    raw = key.encode()
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_key(f) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, n).decode()


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ParseError(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray],
                 bn: dict[str, tuple[np.ndarray, np.ndarray, int]] | None = None,
                 meta: dict | None = None) -> None:
    """String-keyed binary container: header, raw little-endian f64 payloads.

    A JSON sidecar at ``<path>.json`` lists keys, shapes, and the meta block;
    the binary file alone is sufficient to reload.
    """
    path = Path(path)
    bn = bn or {}
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, len(tensors), len(bn)))
        for key in sorted(tensors):
            # asarray keeps 0-d shapes; ascontiguousarray would promote to 1-d
            arr = np.asarray(tensors[key], dtype="<f8", order="C")
            _write_key(f, key)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.tobytes())
        for key in sorted(bn):
            mean, var, batches = bn[key]
            c = mean.shape[0]
            _write_key(f, key)
            f.write(struct.pack("<q", c))
            f.write(np.ascontiguousarray(mean, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(var, dtype="<f8").tobytes())
            f.write(struct.pack("<q", batches))
    sidecar = {
        "format": FORMAT_VERSION,
        "tensors": {k: list(np.asarray(tensors[k]).shape) for k in sorted(tensors)},
        "bn_channels": {k: int(bn[k][0].shape[0]) for k in sorted(bn)},
        "meta": meta or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray],
                                            dict[str, tuple[np.ndarray, np.ndarray, int]]]:
    path = Path(path)
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise ParseError(f"{path.name}: not a parameter checkpoint")
        version, n_tensors, n_bn = struct.unpack("<III", _read_exact(f, 12))
        if version != FORMAT_VERSION:
            raise ParseError(f"{path.name}: unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            key = _read_key(f)
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{ndim}q", _read_exact(f, 8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").reshape(shape)
            tensors[key] = data.copy()
        bn: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}
        for _ in range(n_bn):
            key = _read_key(f)
            (c,) = struct.unpack("<q", _read_exact(f, 8))
            mean = np.frombuffer(_read_exact(f, 8 * c), dtype="<f8").copy()
            var = np.frombuffer(_read_exact(f, 8 * c), dtype="<f8").copy()
            (batches,) = struct.unpack("<q", _read_exact(f, 8))
            bn[key] = (mean, var, int(batches))
    return tensors, bn


def save_params(path: str | Path, params: ParamSet, meta: dict | None = None) -> None:
    save_tensors(
        path,
        {str(k): t.data for k, t in params.tensors.items()},
        {str(k): (s.running_mean, s.running_var, s.batches) for k, s in params.bn.items()},
        meta,
    )


def load_params(path: str | Path) -> ParamSet:
    tensors, bn = load_tensors(path)
    try:
        t_map = {int(k): Tensor(v) for k, v in tensors.items()}
        b_map = {int(k): BnState(mean, var, batches)
                 for k, (mean, var, batches) in bn.items()}
    except ValueError:
        raise ParseError(f"{Path(path).name}: non-integer node key in checkpoint") from None
    return ParamSet(tensors=t_map, bn=b_map)


def check_against_graph(g: ArchGraph, params: ParamSet) -> None:
    """Keys must cover exactly the parameterized nodes with exact shapes."""
    want = {n.id: n.param_shape for n in g.nodes if n.has_params}
    have = set(params.tensors)
    missing = sorted(set(want) - have)
    if missing:
        raise ShapeError(f"parameters missing for node ids {missing}")
    extra = sorted(have - set(want))
    if extra:
        raise ShapeError(f"parameters supplied for unknown node ids {extra}")
    for nid, shape in want.items():
        got = params.tensors[nid].shape
        if tuple(got) != shape:
            raise ShapeError(f"node {nid}: parameter shape {got} does not match {shape}")
