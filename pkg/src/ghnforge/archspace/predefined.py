"""Hand-constructed reference architectures used for evaluation only.

Residual stacks are expressed with the same conventions the genotype
converter uses: no nonlinearity nodes, chain summation nodes kept even with a
single input, stride-2 skip branches realized as [avg_pool, 1x1 conv, norm].
"""

from __future__ import annotations

from ghnforge.archspace.types import ArchGraph, GraphMeta, NodeSpec, ONES_SHAPE, Primitive
from ghnforge.archspace.genotype import _Builder

RESNET_STAGES = (3, 4, 6, 3)


def _residual_stack(b: _Builder, start: int, c0: int, bottleneck: bool, has_skips: bool) -> tuple[int, int]:
    """Shared ResNet body; returns (last node id, output channels)."""
    prev = start
    in_ch = c0
    for stage, blocks in enumerate(RESNET_STAGES):
        mid = c0 * (2 ** stage)
        out_ch = 4 * mid if bottleneck else mid
        for blk in range(blocks):
            stride = 2 if (stage > 0 and blk == 0) else 1
            skip_from = prev
            if bottleneck:
                prev = b.chain(prev, [(Primitive.CONV, (mid, in_ch, 1, 1), 1, 1, 1),
                                      (Primitive.BATCH_NORM, (2, mid, 1, 1), 1, 1, 1)])
                prev = b.chain(prev, [(Primitive.SUM, ONES_SHAPE, 1, 1, 1)])
                prev = b.chain(prev, [(Primitive.CONV, (mid, mid, 3, 3), stride, 1, 1),
                                      (Primitive.BATCH_NORM, (2, mid, 1, 1), 1, 1, 1)])
                prev = b.chain(prev, [(Primitive.SUM, ONES_SHAPE, 1, 1, 1)])
                prev = b.chain(prev, [(Primitive.CONV, (out_ch, mid, 1, 1), 1, 1, 1),
                                      (Primitive.BATCH_NORM, (2, out_ch, 1, 1), 1, 1, 1)])
            else:
                prev = b.chain(prev, [(Primitive.CONV, (mid, in_ch, 3, 3), stride, 1, 1),
                                      (Primitive.BATCH_NORM, (2, mid, 1, 1), 1, 1, 1)])
                prev = b.chain(prev, [(Primitive.SUM, ONES_SHAPE, 1, 1, 1)])
                prev = b.chain(prev, [(Primitive.CONV, (out_ch, mid, 3, 3), 1, 1, 1),
                                      (Primitive.BATCH_NORM, (2, out_ch, 1, 1), 1, 1, 1)])
            skip_end = None
            if has_skips:
                if in_ch == out_ch and stride == 1:
                    skip_end = skip_from
                elif stride == 1:
                    skip_end = b.chain(skip_from, [
                        (Primitive.CONV, (out_ch, in_ch, 1, 1), 1, 1, 1),
                        (Primitive.BATCH_NORM, (2, out_ch, 1, 1), 1, 1, 1),
                    ])
                else:
                    skip_end = b.chain(skip_from, [
                        (Primitive.AVG_POOL, ONES_SHAPE, 2, 1, 1),
                        (Primitive.CONV, (out_ch, in_ch, 1, 1), 1, 1, 1),
                        (Primitive.BATCH_NORM, (2, out_ch, 1, 1), 1, 1, 1),
                    ])
            final_sum = b.add(Primitive.SUM)
            b.link(prev, final_sum)
            if skip_end is not None:
                b.link(skip_end, final_sum)
            prev = final_sum
            in_ch = out_ch
    return prev, in_ch


def _resnet(channels: int, num_classes: int, bottleneck: bool, has_skips: bool,
            cells: int) -> ArchGraph:
    b = _Builder()
    inp = b.add(Primitive.INPUT)
    stem = b.chain(inp, [(Primitive.CONV, (channels, 3, 3, 3), 1, 1, 1),
                         (Primitive.BATCH_NORM, (2, channels, 1, 1), 1, 1, 1)])
    last, out_ch = _residual_stack(b, stem, channels, bottleneck, has_skips)
    gap = b.add(Primitive.GLOB_AVG)
    b.link(last, gap)
    b.chain(gap, [(Primitive.CONV, (num_classes, out_ch, 1, 1), 1, 1, 1),
                  (Primitive.BIAS, (num_classes, 1, 1, 1), 1, 1, 1)])
    return ArchGraph(nodes=b.nodes, edges=sorted(b.edges),
                     meta=GraphMeta(cells=cells, channels=channels, stem="cifar",
                                    head="glob", has_bn=True)).validate()


def _vit(width: int, depth: int, patch: int, num_classes: int, image_size: int) -> ArchGraph:
    b = _Builder()
    inp = b.add(Primitive.INPUT)
    spatial = max(1, image_size // patch)
    prev = b.chain(inp, [
        (Primitive.CONV, (width, 3, patch, patch), patch, 1, 1),
        (Primitive.POS_ENC, (spatial * spatial, width, 1, 1), 1, 1, 1),
    ])
    for _ in range(depth):
        att = b.chain(prev, [
            (Primitive.LAYER_NORM, (2, width, 1, 1), 1, 1, 1),
            (Primitive.MSA, (4 * width, width, 1, 1), 1, 1, 1),
        ])
        s1 = b.add(Primitive.SUM)
        b.link(att, s1)
        b.link(prev, s1)
        mlp = b.chain(s1, [
            (Primitive.LAYER_NORM, (2, width, 1, 1), 1, 1, 1),
            (Primitive.CONV, (width, width, 1, 1), 1, 1, 1),
            (Primitive.BIAS, (width, 1, 1, 1), 1, 1, 1),
            (Primitive.CONV, (width, width, 1, 1), 1, 1, 1),
            (Primitive.BIAS, (width, 1, 1, 1), 1, 1, 1),
        ])
        s2 = b.add(Primitive.SUM)
        b.link(mlp, s2)
        b.link(s1, s2)
        prev = s2
    gap = b.add(Primitive.GLOB_AVG)
    b.link(prev, gap)
    b.chain(gap, [(Primitive.CONV, (num_classes, width, 1, 1), 1, 1, 1),
                  (Primitive.BIAS, (num_classes, 1, 1, 1), 1, 1, 1)])
    return ArchGraph(nodes=b.nodes, edges=sorted(b.edges),
                     meta=GraphMeta(cells=depth, channels=width, stem="vit",
                                    head="glob", has_bn=False)).validate()


def predefined_graph(name: str, channels: int = 64, num_classes: int = 10,
                     image_size: int = 32) -> ArchGraph:
    """One of the four fixed evaluation architectures.

    channels sets the stem width for the residual nets and is scaled 7/4 into
    the transformer width so the default (64) yields the reference 112-wide,
    12-deep transformer.
    """
    if name == "resnet50":
        return _resnet(channels, num_classes, bottleneck=True, has_skips=True, cells=16)
    if name == "resnet34":
        return _resnet(channels, num_classes, bottleneck=False, has_skips=True, cells=16)
    if name == "resnet50_noskip":
        return _resnet(channels, num_classes, bottleneck=True, has_skips=False, cells=16)
    if name == "vit":
        width = max(8, (channels * 7 // 4) // 8 * 8)
        patch = 16 if image_size >= 64 else max(2, image_size // 4)
        return _vit(width, 12, patch, num_classes, image_size)
    raise ValueError(f"unknown predefined architecture {name!r}")


PREDEFINED_NAMES = ("resnet50", "vit", "resnet34", "resnet50_noskip")
