"""Hypernetwork that predicts a network's weights from its computation graph."""

from ghnforge.ghn.config import (CHANNEL_VALUES, MAX_KERNEL_SIZE, PAPER_DECODER,
                                 SPATIAL_VALUES, DecoderDims, GhnConfig,
                                 ghn1_config, ghn2_config, mlp_config)
from ghnforge.ghn.model import (DUMMY_OP_ROW, GhnModel, decode_params,
                                encode_nodes, graph_embedding, init_ghn,
                                load_ghn, normalize_params, predict, propagate,
                                save_ghn)

__all__ = [
    "GhnConfig", "DecoderDims", "GhnModel", "PAPER_DECODER",
    "CHANNEL_VALUES", "SPATIAL_VALUES", "MAX_KERNEL_SIZE", "DUMMY_OP_ROW",
    "ghn1_config", "ghn2_config", "mlp_config", "init_ghn",
    "encode_nodes", "propagate", "decode_params", "normalize_params",
    "predict", "graph_embedding", "save_ghn", "load_ghn",
]
