"""Network builder: stem conv, 17 bottleneck blocks in 7 stages, 1x1 head,
global average pool, linear classifier.

The default stage table is the MobileNetV2 layout.  Each stage row is
(expansion t, output channels c, repeats n, first stride s); layers 2..n
of a stage use stride 1 with equal input/output widths, so they carry
shortcuts.  Two knobs trade cost for accuracy: the input resolution and a
width multiplier applied to every channel count, with the published
convention that the head keeps its full 1280 channels for multipliers
below one.

Channel counts are rounded to the nearest multiple of eight with a floor
of eight, bumped up one step whenever rounding would lose more than 10%
of the requested width.  This matches the released model family.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Union

import numpy as np

from .blocks import (
    BottleneckParams,
    Tap,
    bottleneck_forward,
    expanded_width,
)
from .errors import InvalidShapeError, ShapeMismatchError
from .kernels import Conv2dParams, DepthwiseParams, conv2d, global_avgpool, relu6
from .tensor import Rng, assert_activation


@dataclass(frozen=True)
class StageSpec:
    expansion: float
    channels: int
    repeats: int
    stride: int

    def __post_init__(self):
        if self.repeats < 1:
            raise InvalidShapeError(f"stage repeats must be >= 1, got {self.repeats}")
        if self.stride not in (1, 2):
            raise InvalidShapeError(f"stage stride must be 1 or 2, got {self.stride}")
        if self.channels < 1 or self.expansion < 1:
            raise InvalidShapeError("stage channels and expansion must be >= 1")


#              t   c    n  s
DEFAULT_STAGES = (
    StageSpec(1, 16, 1, 1),
    StageSpec(6, 24, 2, 2),
    StageSpec(6, 32, 3, 2),
    StageSpec(6, 64, 4, 2),
    StageSpec(6, 96, 3, 1),
    StageSpec(6, 160, 3, 2),
    StageSpec(6, 320, 1, 1),
)

MIN_RESOLUTION = 96
MAX_RESOLUTION = 224
MIN_WIDTH_MULTIPLIER = 0.35
MAX_WIDTH_MULTIPLIER = 1.4


def scale_channels(channels: int, multiplier: float) -> int:
    """Width-multiplied channel count, rounded to a multiple of 8 (floor 8).

    If rounding down would drop below 90% of the requested width, take the
    next multiple up instead.
    """
    if channels < 1 or multiplier <= 0:
        raise InvalidShapeError(
            f"bad channel scale request: {channels} x {multiplier}"
        )
    target = channels * multiplier
    scaled = max(8, int(target + 4) // 8 * 8)
    if scaled < 0.9 * target:
        scaled += 8
    return scaled


@dataclass(frozen=True)
class ModelSpec:
    resolution: int = 224
    width_multiplier: float = 1.0
    classes: int = 1000
    stem_channels: int = 32
    head_channels: int = 1280
    stages: tuple[StageSpec, ...] = DEFAULT_STAGES
    # Drop the square 1x1 expansion conv of ratio-1 blocks (released topology).
    fuse_single_expansion: bool = True

    def __post_init__(self):
        if not MIN_RESOLUTION <= self.resolution <= MAX_RESOLUTION:
            raise InvalidShapeError(
                f"resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], "
                f"got {self.resolution}"
            )
        if self.resolution % 32 != 0:
            raise InvalidShapeError(
                f"resolution must be a multiple of 32, got {self.resolution}"
            )
        if not MIN_WIDTH_MULTIPLIER <= self.width_multiplier <= MAX_WIDTH_MULTIPLIER:
            raise InvalidShapeError(
                f"width multiplier must be in [{MIN_WIDTH_MULTIPLIER}, "
                f"{MAX_WIDTH_MULTIPLIER}], got {self.width_multiplier}"
            )
        if self.classes < 1:
            raise InvalidShapeError(f"classes must be >= 1, got {self.classes}")
        scaled = [scale_channels(st.channels, self.width_multiplier) for st in self.stages]
        if any(b < a for a, b in zip(scaled, scaled[1:])):
            raise InvalidShapeError("stage channel progression must be non-decreasing")

    @property
    def scaled_stem_channels(self) -> int:
        return scale_channels(self.stem_channels, self.width_multiplier)

    @property
    def scaled_head_channels(self) -> int:
        # The very last conv layer is exempt from multipliers below one.
        if self.width_multiplier < 1.0:
            return self.head_channels
        return scale_channels(self.head_channels, self.width_multiplier)


@dataclass
class ConvLayer:
    name: str
    params: Conv2dParams
    activation: str  # "relu6" or "none"
    out_shape: tuple[int, int, int]


@dataclass
class BottleneckLayer:
    name: str
    params: BottleneckParams
    out_shape: tuple[int, int, int]


@dataclass
class PoolLayer:
    name: str
    out_shape: tuple[int, int, int]


Layer = Union[ConvLayer, BottleneckLayer, PoolLayer]

# Optional override for how a bottleneck layer is executed (e.g. the
# channel-split path); signature (input, params) -> output.
BlockRunner = Callable[[np.ndarray, BottleneckParams], np.ndarray]


@dataclass
class Model:
    spec: ModelSpec
    layers: list[Layer] = field(default_factory=list)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.spec.resolution, self.spec.resolution, 3)

    def bottleneck_layers(self) -> list[BottleneckLayer]:
        return [l for l in self.layers if isinstance(l, BottleneckLayer)]

    def forward(
        self,
        x: np.ndarray,
        tap: Tap | None = None,
        block_runner: BlockRunner | None = None,
    ) -> np.ndarray:
        """Logits of shape (b, 1, 1, classes)."""
        assert_activation(x, "model input")
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(
                f"input shape {x.shape[1:]} does not match model input {self.input_shape}"
            )
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                x = conv2d(x, layer.params)
                if layer.activation == "relu6":
                    x = relu6(x)
                    if tap is not None:
                        tap(layer.name, x)
            elif isinstance(layer, BottleneckLayer):
                if block_runner is not None:
                    x = block_runner(x, layer.params)
                else:
                    scoped = None
                    if tap is not None:
                        scoped = lambda stage, t, _n=layer.name: tap(f"{_n}.{stage}", t)
                    x = bottleneck_forward(x, layer.params, tap=scoped)
            else:
                x = global_avgpool(x)
        return x

    def parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """All parameter arrays in schema order."""
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                yield f"{layer.name}.weight", layer.params.weights
                yield f"{layer.name}.bias", layer.params.bias
            elif isinstance(layer, BottleneckLayer):
                p = layer.params
                if p.expand is not None:
                    yield f"{layer.name}.expand.weight", p.expand.weights
                    yield f"{layer.name}.expand.bias", p.expand.bias
                yield f"{layer.name}.depthwise.weight", p.depthwise.weights
                yield f"{layer.name}.depthwise.bias", p.depthwise.bias
                yield f"{layer.name}.project.weight", p.project.weights
                yield f"{layer.name}.project.bias", p.project.bias

    def parameter_schema(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, tuple(arr.shape)) for name, arr in self.parameters()]

    def parameter_count(self) -> int:
        return sum(arr.size for _, arr in self.parameters())

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite every parameter array in place; keys must cover the schema."""
        for name, arr in self.parameters():
            arr[...] = values[name]

    def randomize(self, rng: Rng) -> "Model":
        """Standard fresh-start state: fan-in-scaled Gaussian weights and
        small sign-symmetric uniform biases (the usual framework default;
        exactly-zero biases would make dead depthwise patches land on 0.0
        and skew sign statistics)."""
        fan_ins: dict[str, int] = {}
        for name, arr in self.parameters():
            if name.endswith(".weight"):
                if name.endswith("depthwise.weight"):
                    fan = arr.shape[0] * arr.shape[1]
                else:
                    fan = int(np.prod(arr.shape[:-1]))
                fan_ins[name.removesuffix(".weight")] = fan
                arr[...] = rng.normal(arr.shape, stddev=np.sqrt(2.0 / fan))
        for name, arr in self.parameters():
            if name.endswith(".bias"):
                bound = 1.0 / np.sqrt(fan_ins[name.removesuffix(".bias")])
                arr[...] = rng.uniform(arr.shape, -bound, bound)
        return self


def _zero_conv(kernel: int, stride: int, cin: int, cout: int) -> Conv2dParams:
    return Conv2dParams(
        kernel=kernel,
        stride=stride,
        in_channels=cin,
        out_channels=cout,
        weights=np.zeros((kernel, kernel, cin, cout), dtype=np.float32),
        bias=np.zeros(cout, dtype=np.float32),
    )


def _zero_depthwise(kernel: int, stride: int, channels: int) -> DepthwiseParams:
    return DepthwiseParams(
        kernel=kernel,
        stride=stride,
        channels=channels,
        weights=np.zeros((kernel, kernel, channels), dtype=np.float32),
        bias=np.zeros(channels, dtype=np.float32),
    )


def make_bottleneck(
    in_channels: int,
    out_channels: int,
    expansion: float,
    stride: int,
    fuse_single_expansion: bool = True,
) -> BottleneckParams:
    """Zero-initialized block parameters with the standard stage layout."""
    inner = expanded_width(in_channels, expansion)
    fused = fuse_single_expansion and inner == in_channels
    return BottleneckParams(
        in_channels=in_channels,
        out_channels=out_channels,
        expansion=expansion,
        stride=stride,
        expand=None if fused else _zero_conv(1, 1, in_channels, inner),
        depthwise=_zero_depthwise(3, stride, inner),
        project=_zero_conv(1, 1, inner, out_channels),
    )


def build_model(spec: ModelSpec) -> Model:
    """Materialize the layer sequence (zero weights) for ``spec``."""
    model = Model(spec=spec)
    res = spec.resolution
    alpha = spec.width_multiplier

    def out_res(size: int, stride: int) -> int:
        return -(-size // stride)

    cur = spec.scaled_stem_channels
    res = out_res(res, 2)
    model.layers.append(
        ConvLayer("stem", _zero_conv(3, 2, 3, cur), "relu6", (res, res, cur))
    )

    index = 0
    for stage in spec.stages:
        cout = scale_channels(stage.channels, alpha)
        for rep in range(stage.repeats):
            stride = stage.stride if rep == 0 else 1
            index += 1
            res = out_res(res, stride)
            params = make_bottleneck(
                cur, cout, stage.expansion, stride, spec.fuse_single_expansion
            )
            model.layers.append(
                BottleneckLayer(f"block{index:02d}", params, (res, res, cout))
            )
            cur = cout

    head = spec.scaled_head_channels
    model.layers.append(
        ConvLayer("head", _zero_conv(1, 1, cur, head), "relu6", (res, res, head))
    )
    model.layers.append(PoolLayer("avgpool", (1, 1, head)))
    model.layers.append(
        ConvLayer("classifier", _zero_conv(1, 1, head, spec.classes), "none",
                  (1, 1, spec.classes))
    )
    return model
