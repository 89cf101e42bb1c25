"""Split generation: sample, convert, cap, and summarize architecture sets."""

from __future__ import annotations

import dataclasses
import json
from importlib import resources
from pathlib import Path

import numpy as np

from ghnforge.errors import ConfigError, DataError, Rejected
from ghnforge.archspace.codec import encode_graph
from ghnforge.archspace.genotype import genotype_to_graph, sample_genotype
from ghnforge.archspace.predefined import PREDEFINED_NAMES, predefined_graph
from ghnforge.archspace.stats import graph_stats
from ghnforge.archspace.types import ArchGraph, SplitSpec

MIN_ATTEMPTS_BEFORE_ABORT = 20
CHANNEL_RESAMPLE_TRIES = 8
UNIQUENESS_SAMPLE = 200


def generate_split(spec: SplitSpec, rng: np.random.Generator, num_classes: int = 10,
                   image_size: int = 32, predefined_channels: int = 16) -> tuple[list[ArchGraph], dict]:
    """Produce spec.count accepted graphs plus a stats manifest.

    The train split enforces spec.param_cap by resampling the channel knob;
    graphs that stay over the cap after several tries count as rejections.
    Aborts with a diagnostic once more than half of all attempts are rejected.
    """
    if spec.name == "predefined":
        graphs = [predefined_graph(name, channels=predefined_channels,
                                   num_classes=num_classes, image_size=image_size)
                  for name in PREDEFINED_NAMES]
        for k, g in enumerate(graphs):
            g.graph_id = k
        manifest = _manifest(spec, graphs, rejected=0, attempts=len(graphs))
        manifest["names"] = list(PREDEFINED_NAMES)
        return graphs, manifest

    graphs: list[ArchGraph] = []
    attempts = rejected = 0
    while len(graphs) < spec.count:
        attempts += 1
        if attempts >= MIN_ATTEMPTS_BEFORE_ABORT and rejected / attempts > 0.5:
            raise DataError(
                f"split {spec.name!r}: {rejected}/{attempts} samples rejected; "
                "the configured ranges leave almost no valid graphs")
        geno = sample_genotype(rng, spec)
        try:
            graph = genotype_to_graph(geno, num_classes=num_classes, image_size=image_size)
        except Rejected:
            rejected += 1
            continue
        if spec.param_cap is not None:
            graph = _apply_param_cap(spec, geno, graph, rng, num_classes, image_size)
            if graph is None:
                rejected += 1
                continue
        graph.graph_id = len(graphs)
        graphs.append(graph)
    return graphs, _manifest(spec, graphs, rejected, attempts)


def _apply_param_cap(spec, geno, graph, rng, num_classes, image_size):
    for _ in range(CHANNEL_RESAMPLE_TRIES):
        if graph_stats(graph)["param_count"] <= spec.param_cap:
            return graph
        hi = max(spec.channels[0], geno.channels - 1)
        geno = dataclasses.replace(
            geno, channels=int(rng.integers(spec.channels[0], hi + 1)))
        try:
            graph = genotype_to_graph(geno, num_classes=num_classes, image_size=image_size)
        except Rejected:
            return None
    if graph_stats(graph)["param_count"] <= spec.param_cap:
        return graph
    return None


def _manifest(spec: SplitSpec, graphs: list[ArchGraph], rejected: int, attempts: int) -> dict:
    per_graph = []
    for g in graphs:
        s = graph_stats(g)
        s["id"] = g.graph_id
        s["has_bn"] = g.meta.has_bn
        per_graph.append(s)
    sample = graphs[:UNIQUENESS_SAMPLE]
    canon = [encode_graph(dataclasses.replace(g, graph_id=0)) for g in sample]
    dupes = sum(1 for i in range(len(canon)) for j in range(i + 1, len(canon))
                if canon[i] == canon[j])
    agg = {}
    if per_graph:
        for key in ("node_count", "avg_degree", "avg_shortest_path", "depth", "param_count"):
            agg[f"mean_{key}"] = float(np.mean([s[key] for s in per_graph]))
    return {
        "split": spec.name,
        "count": len(graphs),
        "attempts": attempts,
        "rejected": rejected,
        "degree_view": "undirected",
        "uniqueness": {"sample": len(sample), "duplicate_pairs": dupes},
        "aggregate": agg,
        "graphs": per_graph,
    }


def load_split_specs(path: str | Path | None = None, scale: str = "desk") -> dict[str, SplitSpec]:
    """Split definitions from a JSON config; ships desk and paper presets."""
    if path is None:
        ref = resources.files("ghnforge.configs") / f"splits_{scale}.json"
        try:
            raw = json.loads(ref.read_text())
        except FileNotFoundError:
            raise ConfigError(f"unknown split scale {scale!r}") from None
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"split config not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"split config {p} is not valid JSON: {e.msg}") from None
    specs = {}
    for name, item in raw.items():
        try:
            specs[name] = SplitSpec(
                name=name,
                count=int(item["count"]),
                cells=tuple(item["cells"]),
                channels=tuple(item["channels"]),
                nodes_per_cell=tuple(item["nodes_per_cell"]),
                bn_probability=float(item.get("bn_probability", 0.9)),
                width_expansion=tuple(item.get("width_expansion", (1, 2))),
                param_cap=item.get("param_cap"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad split spec {name!r}: {e}") from None
    return specs
