"""NumPy MedNeXt: ConvNeXt-style 3D U-Net forward pass.

Topology (C = base channels, stage i has C * 2**i channels)::

    stem 1x1x1 (4 -> C)
    enc0 -> down0 -> enc1 -> down1 -> enc2 -> down2 -> enc3 -> down3
    bottleneck (16 C)
    up3 (+enc3 skip) -> dec3 -> ... -> up0 (+enc0 skip) -> dec0
    ds_i: 1x1x1 head on dec_i, 3 logits (ET, TC, WT)

A MedNeXt block is ``x + compress(gelu(expand(norm(dwconv(x)))))``. Down
blocks use a stride-2 depthwise conv and a stride-2 1x1x1 residual conv; up
blocks the transposed versions, followed by a one-voxel zero pad at the low
end of every axis to reach exactly twice the input size.

Arrays are (C, X, Y, Z) float32 for a single sample; there is no batch
axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from .params import Param, ParamTree

N_STAGES = 4
STAGE_NAMES = ("enc0", "enc1", "enc2", "enc3", "bottleneck", "dec3", "dec2", "dec1", "dec0")
GN_EPS = 1e-5

PRESETS = {
    "B": {"blocks_per_stage": (2,) * 9, "expansion_ratios": (2, 3, 4, 4, 4, 4, 4, 3, 2)},
    "M": {"blocks_per_stage": (3, 4, 4, 4, 4, 4, 4, 4, 3), "expansion_ratios": (2, 3, 4, 4, 4, 4, 4, 3, 2)},
}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MedNeXtConfig:
    kernel_size: int = 3
    base_channels: int = 32
    blocks_per_stage: tuple[int, ...] = PRESETS["B"]["blocks_per_stage"]
    expansion_ratios: tuple[int, ...] = PRESETS["B"]["expansion_ratios"]
    deep_supervision_levels: int = 4
    in_channels: int = 4
    out_channels: int = 3
    size: str = "B"

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        object.__setattr__(self, "expansion_ratios", tuple(int(r) for r in self.expansion_ratios))
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")
        if len(self.blocks_per_stage) != 9 or len(self.expansion_ratios) != 9:
            raise ValueError("blocks_per_stage and expansion_ratios need 9 entries (enc0..enc3, bottleneck, dec3..dec0)")
        if min(self.blocks_per_stage) < 1 or min(self.expansion_ratios) < 1:
            raise ValueError("block counts and expansion ratios must be >= 1")
        if self.base_channels < 1 or not 1 <= self.deep_supervision_levels <= N_STAGES:
            raise ValueError("base_channels >= 1 and 1 <= deep_supervision_levels <= 4 required")

    @classmethod
    def preset(cls, size: str, **overrides) -> MedNeXtConfig:
        if size not in PRESETS:
            raise ValueError(f"unknown preset {size!r}; choose from {sorted(PRESETS)}")
        return cls(size=size, **{**PRESETS[size], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        d["expansion_ratios"] = list(self.expansion_ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MedNeXtConfig:
        return cls(**d)

    def stage_channels(self, stage: int) -> int:
        """Channels of stage 0..4 (4 is the bottleneck)."""
        return self.base_channels * 2**stage

    def ratio(self, stage_name: str) -> int:
        return self.expansion_ratios[STAGE_NAMES.index(stage_name)]

    def n_blocks(self, stage_name: str) -> int:
        return self.blocks_per_stage[STAGE_NAMES.index(stage_name)]


# -- parameter layout -----------------------------------------------------------


def _block_layout(prefix: str, cin: int, cout: int, ratio: int, k: int, resample: bool):
    hidden = ratio * cin
    layout = [
        (f"{prefix}.dw.weight", (cin, k, k, k)),
        (f"{prefix}.dw.bias", (cin,)),
        (f"{prefix}.norm.weight", (cin,)),
        (f"{prefix}.norm.bias", (cin,)),
        (f"{prefix}.expand.weight", (hidden, cin)),
        (f"{prefix}.expand.bias", (hidden,)),
        (f"{prefix}.compress.weight", (cout, hidden)),
        (f"{prefix}.compress.bias", (cout,)),
    ]
    if resample:
        layout += [(f"{prefix}.res.weight", (cout, cin)), (f"{prefix}.res.bias", (cout,))]
    return layout


def param_layout(config: MedNeXtConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list for every parameter of the network."""
    k = config.kernel_size
    ch = config.stage_channels
    layout = [("stem.weight", (ch(0), config.in_channels)), ("stem.bias", (ch(0),))]
    for i in range(N_STAGES):
        name = f"enc{i}"
        for j in range(config.n_blocks(name)):
            layout += _block_layout(f"{name}.{j}", ch(i), ch(i), config.ratio(name), k, False)
        nxt = STAGE_NAMES[i + 1]
        layout += _block_layout(f"down{i}", ch(i), ch(i + 1), config.ratio(nxt), k, True)
    for j in range(config.n_blocks("bottleneck")):
        layout += _block_layout(f"bottleneck.{j}", ch(4), ch(4), config.ratio("bottleneck"), k, False)
    for i in reversed(range(N_STAGES)):
        name = f"dec{i}"
        layout += _block_layout(f"up{i}", ch(i + 1), ch(i), config.ratio(name), k, True)
        for j in range(config.n_blocks(name)):
            layout += _block_layout(f"{name}.{j}", ch(i), ch(i), config.ratio(name), k, False)
        if i < config.deep_supervision_levels:
            layout += [(f"ds{i}.weight", (config.out_channels, ch(i))), (f"ds{i}.bias", (config.out_channels,))]
    return layout


def _init_array(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".bias"):
        return np.zeros(shape, np.float32)
    if name.endswith("norm.weight"):
        return np.ones(shape, np.float32)
    # He-uniform over fan-in: depthwise kernels see k^3 inputs, 1x1x1 convs see Cin
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(names_shapes, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {name: _init_array(name, shape, rng) for name, shape in names_shapes}


def build_model(config: MedNeXtConfig, seed: int = 0) -> ParamTree:
    return ParamTree((n, Param(v)) for n, v in init_params(param_layout(config), seed).items())


# -- primitive ops --------------------------------------------------------------


def depthwise_conv3d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1) -> np.ndarray:
    """Per-channel cross-correlation with zero padding k//2."""
    c, *spatial = x.shape
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, [(0, 0)] + [(p, p)] * 3)
    out_shape = [(n + 2 * p - k) // stride + 1 for n in spatial]
    acc = np.zeros((c, *out_shape), dtype=np.float32)
    for a in range(k):
        for bb in range(k):
            for cc in range(k):
                window = xp[
                    :,
                    a : a + stride * (out_shape[0] - 1) + 1 : stride,
                    bb : bb + stride * (out_shape[1] - 1) + 1 : stride,
                    cc : cc + stride * (out_shape[2] - 1) + 1 : stride,
                ]
                acc += w[:, a, bb, cc][:, None, None, None] * window
    if b is not None:
        acc += b[:, None, None, None]
    return acc


def depthwise_conv_transpose3d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Stride-2 transposed depthwise conv, padding k//2; (n) -> (2n - 1)."""
    c, *spatial = x.shape
    k = w.shape[-1]
    p = k // 2
    full = [2 * (n - 1) + k for n in spatial]
    acc = np.zeros((c, *full), dtype=np.float32)
    for a in range(k):
        for bb in range(k):
            for cc in range(k):
                acc[
                    :,
                    a : a + 2 * spatial[0] - 1 : 2,
                    bb : bb + 2 * spatial[1] - 1 : 2,
                    cc : cc + 2 * spatial[2] - 1 : 2,
                ] += w[:, a, bb, cc][:, None, None, None] * x
    out = acc[:, p : p + 2 * spatial[0] - 1, p : p + 2 * spatial[1] - 1, p : p + 2 * spatial[2] - 1]
    if b is not None:
        out = out + b[:, None, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def pointwise(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    out = np.tensordot(w, x, axes=(1, 0)).astype(np.float32, copy=False)
    if b is not None:
        out += b[:, None, None, None]
    return out


def channel_norm(x: np.ndarray, w: np.ndarray, b: np.ndarray, eps: float = GN_EPS) -> np.ndarray:
    """GroupNorm with one group per channel."""
    mean = x.mean(axis=(1, 2, 3), keepdims=True, dtype=np.float64)
    var = x.var(axis=(1, 2, 3), keepdims=True, dtype=np.float64)
    xn = ((x - mean) / np.sqrt(var + eps)).astype(np.float32)
    return xn * w[:, None, None, None] + b[:, None, None, None]


def gelu(x: np.ndarray) -> np.ndarray:
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(np.float32)


def _pad_low(x: np.ndarray) -> np.ndarray:
    return np.pad(x, [(0, 0), (1, 0), (1, 0), (1, 0)])


def _mlp(h: np.ndarray, P, prefix: str) -> np.ndarray:
    h = channel_norm(h, P(f"{prefix}.norm.weight"), P(f"{prefix}.norm.bias"))
    h = gelu(pointwise(h, P(f"{prefix}.expand.weight"), P(f"{prefix}.expand.bias")))
    return pointwise(h, P(f"{prefix}.compress.weight"), P(f"{prefix}.compress.bias"))


def block_forward(x: np.ndarray, P, prefix: str) -> np.ndarray:
    h = depthwise_conv3d(x, P(f"{prefix}.dw.weight"), P(f"{prefix}.dw.bias"))
    return x + _mlp(h, P, prefix)


def mednext_block_forward(x: np.ndarray, params: ParamTree | dict, prefix: str = "") -> np.ndarray:
    """One residual MedNeXt block; ``params`` holds ``{prefix}.dw.weight`` etc."""
    get = _getter(params)
    w = get(f"{prefix}.dw.weight")
    if x.shape[0] != w.shape[0]:
        raise ShapeError(f"input has {x.shape[0]} channels, block expects {w.shape[0]}")
    return block_forward(np.asarray(x, np.float32), get, prefix)


def down_forward(x: np.ndarray, P, prefix: str) -> np.ndarray:
    h = depthwise_conv3d(x, P(f"{prefix}.dw.weight"), P(f"{prefix}.dw.bias"), stride=2)
    res = pointwise(x[:, ::2, ::2, ::2], P(f"{prefix}.res.weight"), P(f"{prefix}.res.bias"))
    return _mlp(h, P, prefix) + res


def up_forward(x: np.ndarray, P, prefix: str) -> np.ndarray:
    h = depthwise_conv_transpose3d(x, P(f"{prefix}.dw.weight"), P(f"{prefix}.dw.bias"))
    h = _pad_low(_mlp(h, P, prefix))
    # 1x1x1 transposed conv, stride 2: inputs land on even positions, bias everywhere
    w, b = P(f"{prefix}.res.weight"), P(f"{prefix}.res.bias")
    cout = w.shape[0]
    res = np.empty((cout, *(2 * n - 1 for n in x.shape[1:])), dtype=np.float32)
    res[:] = b[:, None, None, None]
    res[:, ::2, ::2, ::2] = pointwise(x, w, b)
    return h + _pad_low(res)


def _getter(params):
    if isinstance(params, ParamTree):
        return params.array
    return lambda name: np.asarray(params[name], np.float32)


def forward(model: ParamTree, config: MedNeXtConfig, x: np.ndarray) -> list[np.ndarray]:
    """Deep-supervision logits, finest first: shapes (3, X/2**l, Y/2**l, Z/2**l)."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4 or x.shape[0] != config.in_channels:
        raise ShapeError(f"expected ({config.in_channels}, X, Y, Z) input, got {x.shape}")
    div = 2**N_STAGES
    if any(n % div for n in x.shape[1:]):
        raise ShapeError(f"spatial shape {x.shape[1:]} must be divisible by {div}")
    P = _getter(model)

    h = pointwise(x, P("stem.weight"), P("stem.bias"))
    skips = []
    for i in range(N_STAGES):
        for j in range(config.n_blocks(f"enc{i}")):
            h = block_forward(h, P, f"enc{i}.{j}")
        skips.append(h)
        h = down_forward(h, P, f"down{i}")
    for j in range(config.n_blocks("bottleneck")):
        h = block_forward(h, P, f"bottleneck.{j}")
    outputs: list[np.ndarray] = [None] * N_STAGES  # type: ignore[list-item]
    for i in reversed(range(N_STAGES)):
        h = up_forward(h, P, f"up{i}") + skips[i]
        for j in range(config.n_blocks(f"dec{i}")):
            h = block_forward(h, P, f"dec{i}.{j}")
        if i < config.deep_supervision_levels:
            outputs[i] = pointwise(h, P(f"ds{i}.weight"), P(f"ds{i}.bias"))
    return outputs[: config.deep_supervision_levels]


def final_decoder_patterns() -> list[str]:
    """Default finetuning selector: the last decoder stage and every DS head."""
    return ["dec0.*", "ds*"]
