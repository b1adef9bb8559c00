"""Exact multiply-add and parameter accounting.

Conventions: one multiply-accumulate is one MAdd; bias additions,
pooling, activations and shortcut adds are free.  Parameter counts are
what the inference engine actually stores: folded weights plus one bias
per output channel (the ``bias_params`` column separates the bias share
so weight-only totals can be read off).  All counts are per image
(batch 1) and exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import BottleneckLayer, ConvLayer, Model, ModelSpec, build_model


def _out_hw(h: int, w: int, stride: int) -> tuple[int, int]:
    return -(-h // stride), -(-w // stride)


def madds_standard_conv(h: int, w: int, d_in: int, d_out: int, kernel: int, stride: int = 1) -> int:
    """Dense conv cost: out_h * out_w * d_in * d_out * k^2."""
    oh, ow = _out_hw(h, w, stride)
    return oh * ow * d_in * d_out * kernel * kernel


def madds_depthwise(h: int, w: int, channels: int, kernel: int, stride: int = 1) -> int:
    oh, ow = _out_hw(h, w, stride)
    return oh * ow * channels * kernel * kernel


def madds_depthwise_separable(
    h: int, w: int, d_in: int, d_out: int, kernel: int, stride: int = 1
) -> int:
    """Factorized conv cost: out_h * out_w * d_in * (k^2 + d_out).

    Sum of the depthwise stage and the 1x1 pointwise stage; cheaper than a
    dense conv by a factor k^2 * d_out / (k^2 + d_out).
    """
    oh, ow = _out_hw(h, w, stride)
    return oh * ow * d_in * (kernel * kernel + d_out)


def separable_speedup(d_out: int, kernel: int = 3) -> float:
    """How many times cheaper the factorized form is, for one output width."""
    k2 = kernel * kernel
    return k2 * d_out / (k2 + d_out)


@dataclass
class CostRow:
    name: str
    out_shape: tuple[int, int, int]
    madds: int
    params: int
    bias_params: int


@dataclass
class CostReport:
    resolution: int
    width_multiplier: float
    rows: list[CostRow]

    @property
    def total_madds(self) -> int:
        return sum(r.madds for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_bias_params(self) -> int:
        return sum(r.bias_params for r in self.rows)


def _conv_row(layer: ConvLayer, in_hw: tuple[int, int]) -> CostRow:
    p = layer.params
    madds = madds_standard_conv(in_hw[0], in_hw[1], p.in_channels, p.out_channels,
                                p.kernel, p.stride)
    return CostRow(
        name=layer.name,
        out_shape=layer.out_shape,
        madds=madds,
        params=int(p.weights.size + p.bias.size),
        bias_params=int(p.bias.size),
    )


def _block_row(layer: BottleneckLayer, in_hw: tuple[int, int]) -> CostRow:
    p = layer.params
    h, w = in_hw
    oh, ow = _out_hw(h, w, p.stride)
    inner = p.expanded_channels
    madds = 0
    params = 0
    bias = 0
    if p.expand is not None:
        madds += h * w * p.in_channels * inner
        params += int(p.expand.weights.size + p.expand.bias.size)
        bias += inner
    madds += oh * ow * p.depthwise.kernel ** 2 * inner
    madds += oh * ow * inner * p.out_channels
    params += int(p.depthwise.weights.size + p.depthwise.bias.size)
    params += int(p.project.weights.size + p.project.bias.size)
    bias += inner + p.out_channels
    return CostRow(layer.name, layer.out_shape, madds, params, bias)


def cost_of_model(model: Model) -> CostReport:
    """Per-layer table for an already-built model."""
    rows: list[CostRow] = []
    hw = (model.spec.resolution, model.spec.resolution)
    for layer in model.layers:
        if isinstance(layer, ConvLayer):
            rows.append(_conv_row(layer, hw))
        elif isinstance(layer, BottleneckLayer):
            rows.append(_block_row(layer, hw))
        else:
            rows.append(CostRow(layer.name, layer.out_shape, 0, 0, 0))
        hw = layer.out_shape[:2]
    return CostReport(model.spec.resolution, model.spec.width_multiplier, rows)


def model_cost(spec: ModelSpec) -> CostReport:
    """Per-layer table plus totals for the network ``spec`` describes."""
    return cost_of_model(build_model(spec))


def instrumented_count(model: Model, x: np.ndarray) -> int:
    """Multiply-adds actually executed by a forward pass on ``x``.

    The kernel counter charges every kernel tap of every output element,
    so for a batch-1 input this equals the analytic ``model_cost`` total
    exactly.
    """
    kernels.reset_madd_counter()
    model.forward(x)
    return kernels.madd_count()
