"""Architecture sampling: graph types, generators, codecs, and statistics."""

from ghnforge.archspace.codec import (decode_graph, encode_graph, iter_split,
                                      read_split, write_split)
from ghnforge.archspace.generate import generate_split, load_split_specs
from ghnforge.archspace.genotype import OP_NAMES, sample_genotype, genotype_to_graph
from ghnforge.archspace.predefined import PREDEFINED_NAMES, predefined_graph
from ghnforge.archspace.stats import graph_stats, shortest_paths
from ghnforge.archspace.types import (ArchGraph, Genotype, GraphMeta, NodeSpec,
                                      PARAMETERLESS, Primitive, SplitSpec)

__all__ = [
    "ArchGraph", "Genotype", "GraphMeta", "NodeSpec", "PARAMETERLESS",
    "Primitive", "SplitSpec", "OP_NAMES", "PREDEFINED_NAMES",
    "sample_genotype", "genotype_to_graph", "predefined_graph",
    "graph_stats", "shortest_paths", "generate_split", "load_split_specs",
    "encode_graph", "decode_graph", "iter_split", "read_split", "write_split",
]
