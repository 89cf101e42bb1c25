"""Canonical text serialization of architecture graphs and split files.

One graph is one compact JSON object; a split file is JSON-lines (optionally
gzipped). Encoding is deterministic: sorted keys, no whitespace, stable node
and edge order.
"""

from __future__ import annotations

import gzip
import json
from pathlib import Path
from typing import Iterable, Iterator

from ghnforge.errors import ParseError
from ghnforge.archspace.types import ArchGraph, GraphMeta, NodeSpec, Primitive

_PRIMITIVE_BY_ID = {p.value: p for p in Primitive}


def encode_graph(g: ArchGraph) -> str:
    rec = {
        "id": g.graph_id,
        "nodes": [
            {"id": n.id, "primitive": n.primitive.value, "shape": list(n.param_shape),
             "stride": n.stride, "dilation": n.dilation, "groups": n.groups}
            for n in g.nodes
        ],
        "edges": [[a, b] for a, b in g.edges],
        "meta": {"cells": g.meta.cells, "channels": g.meta.channels, "stem": g.meta.stem,
                 "head": g.meta.head, "has_bn": g.meta.has_bn},
    }
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def _require(mapping, key, kinds, where: str):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ParseError(f"missing field {key!r} in {where}")
    val = mapping[key]
    if not isinstance(val, kinds):
        raise ParseError(f"field {key!r} in {where} has wrong type {type(val).__name__}")
    return val


def decode_graph(text: str) -> ArchGraph:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", offset=e.pos) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not an object")
    graph_id = _require(rec, "id", int, "record")
    raw_nodes = _require(rec, "nodes", list, "record")
    raw_edges = _require(rec, "edges", list, "record")
    raw_meta = _require(rec, "meta", dict, "record")

    nodes = []
    for k, rn in enumerate(raw_nodes):
        where = f"nodes[{k}]"
        nid = _require(rn, "id", int, where)
        prim_id = _require(rn, "primitive", str, where)
        if prim_id not in _PRIMITIVE_BY_ID:
            raise ParseError(f"unknown primitive {prim_id!r} in {where}")
        shape = _require(rn, "shape", list, where)
        if len(shape) != 4 or not all(isinstance(v, int) and v >= 1 for v in shape):
            raise ParseError(f"bad shape {shape!r} in {where}")
        try:
            nodes.append(NodeSpec(nid, _PRIMITIVE_BY_ID[prim_id], tuple(shape),
                                  _require(rn, "stride", int, where),
                                  _require(rn, "dilation", int, where),
                                  _require(rn, "groups", int, where)))
        except Exception as e:
            raise ParseError(f"invalid node in {where}: {e}") from None

    edges = []
    for k, re_ in enumerate(raw_edges):
        if (not isinstance(re_, list) or len(re_) != 2
                or not all(isinstance(v, int) for v in re_)):
            raise ParseError(f"bad edge {re_!r} at edges[{k}]")
        edges.append((re_[0], re_[1]))

    meta = GraphMeta(
        cells=_require(raw_meta, "cells", int, "meta"),
        channels=_require(raw_meta, "channels", int, "meta"),
        stem=_require(raw_meta, "stem", str, "meta"),
        head=_require(raw_meta, "head", str, "meta"),
        has_bn=_require(raw_meta, "has_bn", bool, "meta"),
    )
    return ArchGraph(nodes=nodes, edges=edges, meta=meta, graph_id=graph_id)


def write_split(path: str | Path, graphs: Iterable[ArchGraph]) -> None:
    """JSON-lines split file; a .gz suffix switches on gzip compression."""
    path = Path(path)
    text = "".join(encode_graph(g) + "\n" for g in graphs)
    if path.suffix == ".gz":
        # fileobj keeps the name out of the header and mtime is pinned, so
        # identical content gives identical bytes wherever it is written
        with open(path, "wb") as raw, \
                gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as f:
            f.write(text.encode())
    else:
        path.write_text(text)


def read_split(path: str | Path) -> list[ArchGraph]:
    return list(iter_split(path))


def iter_split(path: str | Path) -> Iterator[ArchGraph]:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield decode_graph(line)
            except ParseError as e:
                raise ParseError(f"{path.name}:{lineno}: {e.message}", offset=e.offset) from None
