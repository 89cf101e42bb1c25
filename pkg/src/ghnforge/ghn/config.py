"""Hypernetwork configuration: widths, behavior flags, and named presets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ghnforge.errors import ConfigError

#: Largest kernel extent the architecture vocabulary can emit; the decoder's
#: spatial canvas must be at least this wide so every kernel fits in one tile.
MAX_KERNEL_SIZE = 5

#: Lookup grid for spatial weight extents (kernel height/width).  Eleven rows
#: cover 1..16; the extents that actually occur (1, 3, 5) map exactly and
#: anything else snaps to the nearest row.  The grid is deliberately
#: scale-independent so small and large decoder presets share encodings.
SPATIAL_VALUES = (1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 16)


def _channel_values() -> tuple[int, ...]:
    """392-value channel grid: dense at small widths, coarser by octave.

    Every integer through 64 is present; above that the grid keeps multiples
    of 8 to 128, then per-octave steps of 2/4/8/16/64/128 up to 8192.  Band
    sizes (64+8+64+64+64+64+32+32) sum to exactly 392 rows.
    """
    vals = list(range(1, 65))            # 1..64, every integer
    vals += list(range(72, 129, 8))      # (64, 128]   step 8
    vals += list(range(130, 257, 2))     # (128, 256]  step 2
    vals += list(range(260, 513, 4))     # (256, 512]  step 4
    vals += list(range(520, 1025, 8))    # (512, 1024] step 8
    vals += list(range(1040, 2049, 16))  # (1024, 2048] step 16
    vals += list(range(2112, 4097, 64))  # (2048, 4096] step 64
    vals += list(range(4224, 8193, 128))  # (4096, 8192] step 128
    return tuple(vals)


#: Lookup grid for channel counts (out/in dimensions of weight tensors).
CHANNEL_VALUES = _channel_values()


@dataclass(frozen=True)
class DecoderDims:
    """Shapes of the tensor-decoding stack and its per-kind predictor heads.

    The dense path expands a node feature to ``base_channels`` maps of
    ``spatial``x``spatial``, widens them through a ``mid_channels`` bottleneck
    to ``expand_channels``, and reads the result as an
    ``out_slice[0] x out_slice[1] x spatial x spatial`` weight block that is
    tiled and sliced to each target shape.  ``norm_rows``/``class_rows``/
    ``bias_rows`` bound how many channels or classes the per-kind heads emit
    before tiling.
    """

    base_channels: int = 32
    spatial: int = 5
    mid_channels: int = 256
    expand_channels: int = 256
    out_slice: tuple[int, int] = (16, 16)
    norm_hidden: int = 64
    norm_rows: int = 64
    class_rows: int = 16
    bias_rows: int = 16

    def __post_init__(self):
        object.__setattr__(self, "out_slice", tuple(int(v) for v in self.out_slice))
        for name in ("base_channels", "spatial", "mid_channels", "expand_channels",
                     "norm_hidden", "norm_rows", "class_rows", "bias_rows"):
            if getattr(self, name) < 1:
                raise ConfigError(f"decoder {name} must be positive, got {getattr(self, name)}")
        if len(self.out_slice) != 2 or any(v < 1 for v in self.out_slice):
            raise ConfigError(f"out_slice must be two positive ints, got {self.out_slice}")
        o, i = self.out_slice
        if o * i != self.expand_channels:
            raise ConfigError(
                f"expand_channels {self.expand_channels} must equal "
                f"out_slice product {o}x{i}={o * i}")
        if self.spatial < MAX_KERNEL_SIZE:
            raise ConfigError(
                f"decoder spatial {self.spatial} cannot host {MAX_KERNEL_SIZE}x"
                f"{MAX_KERNEL_SIZE} kernels")
        if self.spatial > max(SPATIAL_VALUES):
            raise ConfigError(
                f"decoder spatial {self.spatial} exceeds the lookup grid "
                f"(max {max(SPATIAL_VALUES)})")


#: Decoder sized for the full-scale experiments: features expand through
#: 32768-way maps to a 64x64x16x16 block and 1000-row classifier/bias heads.
PAPER_DECODER = DecoderDims(base_channels=128, spatial=16, mid_channels=256,
                            expand_channels=4096, out_slice=(64, 64),
                            norm_hidden=64, norm_rows=64,
                            class_rows=1000, bias_rows=1000)


@dataclass(frozen=True)
class GhnConfig:
    """Everything that determines hypernetwork behavior and parameter shapes.

    Defaults give the full model: normalized outputs, virtual edges up to 50
    hops, feature layer-norm, and gated message passing.  ``temperature``
    scales the squashing of predicted norm-layer weights and biases;
    ``beta_rectified``/``beta_plain`` are the fan-in gains used when scaling
    predicted weights for rectified and linear operations respectively.
    """

    hidden_dim: int = 32
    passes: int = 1
    s_max: int = 50
    normalize_outputs: bool = True
    use_layer_norm: bool = True
    use_gnn: bool = True
    decoder: DecoderDims = field(default_factory=DecoderDims)
    temperature: float = 1.0
    beta_rectified: float = 2.0
    beta_plain: float = 1.0

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be positive, got {self.hidden_dim}")
        if self.hidden_dim % 4:
            raise ConfigError(
                f"hidden_dim must be divisible by 4 (four concatenated shape "
                f"embeddings), got {self.hidden_dim}")
        if self.passes < 1:
            raise ConfigError(f"passes must be at least 1, got {self.passes}")
        if self.s_max < 0:
            raise ConfigError(f"s_max must be non-negative, got {self.s_max}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.beta_rectified <= 0 or self.beta_plain <= 0:
            raise ConfigError("fan-in gains must be positive")

    @property
    def virtual_edges(self) -> bool:
        """Virtual long-range neighbors are active only for hop bounds >= 2."""
        return self.use_gnn and self.s_max >= 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GhnConfig":
        data = dict(data)
        dec = data.pop("decoder", None)
        if dec is not None:
            data["decoder"] = DecoderDims(**dec)
        return cls(**data)


def ghn2_config(**overrides) -> GhnConfig:
    """Full model: normalized outputs, virtual edges, feature layer-norm."""
    return GhnConfig(**overrides)


def ghn1_config(**overrides) -> GhnConfig:
    """Reduced model: the full one minus output normalization, virtual edges,
    and feature layer-norm — exactly those three flags differ."""
    base = {"normalize_outputs": False, "s_max": 0, "use_layer_norm": False}
    base.update(overrides)
    return GhnConfig(**base)


def mlp_config(**overrides) -> GhnConfig:
    """Graph-blind ablation: node features are refined without any message
    passing, so predictions ignore connectivity entirely."""
    base = {"use_gnn": False}
    base.update(overrides)
    return GhnConfig(**base)
