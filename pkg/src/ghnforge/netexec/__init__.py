"""Network execution: bind parameters to graphs, run and manage them."""

from ghnforge.netexec.network import (Network, forward, head_node_ids, instantiate,
                                      refresh_bn_stats, replace_head)
from ghnforge.netexec.params import (BnState, ParamSet, check_against_graph,
                                     load_params, load_tensors, random_params,
                                     save_params, save_tensors)

__all__ = [
    "Network", "ParamSet", "BnState", "instantiate", "forward",
    "refresh_bn_stats", "replace_head", "head_node_ids", "random_params",
    "check_against_graph", "save_params", "load_params", "save_tensors",
    "load_tensors",
]
