"""FNO, AC-FNO and parallel PAC-FNO operators with parameter/FLOP accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import (
    BnState,
    ShapeError,
    Tensor,
    add,
    batch_norm,
    channel_linear,
    concat,
    gelu,
    reshape,
)
from .spectral import (
    SpectralFilter,
    apply_filter,
    bilinear_resize,
    crop_spectrum,
    embed_spectrum,
    highpass_mask,
    irfft2,
    lowpass_truncate,
    rfft2,
    spectrum_pad,
)

__all__ = [
    "CHANNELS",
    "MODES",
    "FnoBlockParams",
    "PacFnoLayer",
    "fno_block_forward",
    "acfno_block_forward",
    "pacfno_forward",
    "pacfno_param_count",
    "flops_estimate",
    "FlopsConfig",
]

CHANNELS = 3
MODES = ("vanilla", "all-component", "lowpass-ablation", "highpass-ablation")

Activation = Callable[[Tensor], Tensor]


def _identity(x: Tensor) -> Tensor:
    return x


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    # torch's default for conv/linear layers (a = sqrt(5)) reduces to 1/sqrt(fan_in)
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class FnoBlockParams:
    filter: SpectralFilter
    conv_weight: Tensor
    conv_bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, anchor: tuple[int, int], channels: int = CHANNELS) -> "FnoBlockParams":
        filt = SpectralFilter.random(channels, anchor, rng)
        w = Tensor(_kaiming_uniform(rng, (channels, channels), channels), requires_grad=True)
        b = Tensor(_kaiming_uniform(rng, (channels,), channels), requires_grad=True)
        return cls(filt, w, b)

    def parameters(self) -> list[Tensor]:
        return [self.filter.weight, self.conv_weight, self.conv_bias]

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.filter", self.filter.weight),
            (f"{prefix}.conv_weight", self.conv_weight),
            (f"{prefix}.conv_bias", self.conv_bias),
        ]


def _as_batch(h: Tensor) -> Tensor:
    if h.data.ndim == 3:
        return reshape(h, (1,) + h.shape)
    if h.data.ndim != 4:
        raise ShapeError(f"expected C x H x W or N x C x H x W, got {h.shape}")
    return h


def fno_block_forward(
    h: Tensor,
    p: FnoBlockParams,
    modes: tuple[int, int] | None = None,
    activation: Activation = gelu,
) -> Tensor:
    """Vanilla FNO block: low-pass, filter the kept modes, invert, add the 1x1 path.

    ``p.filter`` must be anchored at ``modes`` (default: half the input size).
    """
    squeeze = h.data.ndim == 3
    h = _as_batch(h)
    height, width = h.shape[-2:]
    if modes is None:
        modes = (max(1, min(height, width) // 2),) * 2
    h_r, w_r = modes
    if h_r > height or w_r > width:
        raise ShapeError(f"modes {modes} exceed input {height}x{width}")
    if p.filter.anchor != (h_r, w_r):
        raise ShapeError(f"filter anchored at {p.filter.anchor}, block run with modes {modes}")
    s = lowpass_truncate(rfft2(h), h_r, w_r)
    s = embed_spectrum(apply_filter(crop_spectrum(s, h_r, w_r), p.filter), height, width)
    out = activation(add(irfft2(s, height, width), channel_linear(h, p.conv_weight, p.conv_bias)))
    return _unbatch(out) if squeeze else out


def _unbatch(x: Tensor) -> Tensor:
    return reshape(x, x.shape[1:])


def acfno_block_forward(
    h: Tensor,
    p: FnoBlockParams,
    target: tuple[int, int],
    scale_here: bool = True,
    activation: Activation = gelu,
    band: tuple[str, tuple[int, int]] | None = None,
) -> Tensor:
    """All-component FNO block.

    No frequency is discarded. When ``scale_here`` and the input is below
    ``target``, the filtered spectrum is zero-padded to the target and the
    1x1 path is bilinearly upsampled, so the output sits at ``target``.
    ``band`` optionally re-inserts a ``("lowpass" | "highpass", (H_r, W_r))``
    mask, used only by the frequency ablations.
    """
    squeeze = h.data.ndim == 3
    h = _as_batch(h)
    height, width = h.shape[-2:]
    h_t, w_t = target
    if height > h_t or width > w_t:
        raise ShapeError(f"input {height}x{width} exceeds target {h_t}x{w_t}")
    s = rfft2(h)
    if band is not None:
        kind, (b_h, b_w) = band
        b_h, b_w = min(b_h, height), min(b_w, width)
        s = lowpass_truncate(s, b_h, b_w) if kind == "lowpass" else highpass_mask(s, b_h, b_w)
    s = apply_filter(s, p.filter)
    conv = channel_linear(h, p.conv_weight, p.conv_bias)
    if scale_here and (height, width) != (h_t, w_t):
        spatial = irfft2(spectrum_pad(s, h_t, w_t), h_t, w_t)
        conv = bilinear_resize(conv, h_t, w_t)
    else:
        spatial = irfft2(s, height, width)
    out = activation(add(spatial, conv))
    return _unbatch(out) if squeeze else out


class PacFnoLayer:
    """``m`` parallel branches of ``n`` AC-FNO blocks, fused 3m -> 3 and batch-normalised."""

    def __init__(
        self,
        m: int,
        n: int,
        target: tuple[int, int],
        mode: str = "all-component",
        modes: tuple[int, int] | None = None,
        seed: int = 0,
        activation: Activation = gelu,
    ):
        if m < 1 or n < 1:
            raise ValueError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.m, self.n = m, n
        self.target = tuple(target)
        self.mode = mode
        self.modes = tuple(modes) if modes is not None else (target[0] // 2, target[1] // 2)
        self.activation = activation
        self.bn_enabled = True
        rng = np.random.default_rng(seed)
        anchor = self.modes if mode == "vanilla" else self.target
        self.grid = [[FnoBlockParams.init(rng, anchor) for _ in range(n)] for _ in range(m)]
        c = CHANNELS
        fusion = np.concatenate([np.eye(c) / m] * m, axis=1)
        self.fusion_weight = Tensor(fusion, requires_grad=True)
        self.fusion_bias = Tensor(np.zeros(c), requires_grad=True)
        self.bn = BnState.create(c, prefix="bn")

    @property
    def config(self) -> dict:
        return {"m": self.m, "n": self.n, "target": list(self.target), "mode": self.mode, "modes": list(self.modes)}

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, branch in enumerate(self.grid):
            for j, block in enumerate(branch):
                named += block.named_parameters(f"pacfno.block{i}_{j}")
        named += [("pacfno.fusion_weight", self.fusion_weight), ("pacfno.fusion_bias", self.fusion_bias)]
        named += [("pacfno.bn.gamma", self.bn.gamma), ("pacfno.bn.beta", self.bn.beta)]
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [("pacfno.bn.running_mean", self.bn.running_mean), ("pacfno.bn.running_var", self.bn.running_var)]

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.parameters()))

    def _band(self):
        if self.mode == "lowpass-ablation":
            return ("lowpass", self.modes)
        if self.mode == "highpass-ablation":
            return ("highpass", self.modes)
        return None

    def branch_forward(self, x: Tensor, i: int) -> list[Tensor]:
        """Hidden vectors of branch ``i`` after each stage."""
        hs = []
        h = x
        if self.mode == "vanilla":
            if h.shape[-2:] != self.target:
                h = bilinear_resize(h, *self.target)
            for block in self.grid[i]:
                h = fno_block_forward(h, block, self.modes, self.activation)
                hs.append(h)
            return hs
        band = self._band()
        for j, block in enumerate(self.grid[i]):
            h = acfno_block_forward(h, block, self.target, scale_here=(j == 0), activation=self.activation, band=band)
            hs.append(h)
        return hs

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return pacfno_forward(x, self, training)


def pacfno_forward(x: Tensor, layer: PacFnoLayer, training: bool = False) -> Tensor:
    """``h_f = BN(Linear(concat(branch outputs)))`` at the layer's target resolution."""
    if x.data.ndim != 4 or x.shape[1] != CHANNELS:
        raise ShapeError(f"expected N x {CHANNELS} x H x W input, got {x.shape}")
    h_t, w_t = layer.target
    if x.shape[2] > h_t or x.shape[3] > w_t:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} exceeds target {h_t}x{w_t}")
    outs = [layer.branch_forward(x, i)[-1] for i in range(layer.m)]
    for o in outs:
        if o.shape[-2:] != layer.target:
            raise ShapeError(f"branch produced {o.shape[-2:]}, expected {layer.target}")
    stacked = outs[0] if layer.m == 1 else concat(outs, axis=1)
    fused = channel_linear(stacked, layer.fusion_weight, layer.fusion_bias)
    if not layer.bn_enabled:
        return fused
    return batch_norm(fused, layer.bn, training)


def pacfno_param_count(m: int, n: int, h_t: int, w_t: int) -> int:
    """Real parameter count of an all-component layer (complex entries count twice)."""
    if min(m, n, h_t, w_t) < 1:
        raise ValueError("extents must be positive")
    c = CHANNELS
    per_block = c * c * h_t * (w_t // 2 + 1) * 2 + c * c + c
    return m * n * per_block + (c * m * c + c) + 2 * c


@dataclass
class FlopsConfig:
    m: int
    n: int
    target: tuple[int, int]


def _fft_flops(c: int, h: int, w: int) -> float:
    return 5.0 * c * h * w * math.log2(h * w) if h * w > 1 else 0.0


def flops_estimate(config: FlopsConfig, input_resolution: tuple[int, int], count_transforms: bool = True) -> float:
    """Real-operation count of one forward pass for one image.

    Counted: each rfft2/irfft2 as ``5 C H W log2(HW)``; each complex
    multiply-accumulate in the filter as 8 per (o, i, bin); 1x1 paths as
    ``2 C_out C_in H W``; bilinear upsampling as 4 taps x 2 per output
    value; residual add and BN as one and two per value. Activations are
    not counted. ``count_transforms=False`` drops the FFT terms, which is
    what layer-hook profilers report.
    """
    c = CHANNELS
    h_t, w_t = config.target
    h, w = input_resolution
    if h > h_t or w > w_t:
        raise ShapeError(f"input {h}x{w} exceeds target {h_t}x{w_t}")
    total = 0.0
    for _ in range(config.m):
        res = (h, w)
        for j in range(config.n):
            bh, bw = res
            bins = bh * (bw // 2 + 1)
            if count_transforms:
                total += _fft_flops(c, bh, bw) + _fft_flops(c, h_t, w_t)
            total += 8.0 * c * c * bins
            total += 2.0 * c * c * bh * bw
            if (bh, bw) != (h_t, w_t):
                total += 8.0 * c * h_t * w_t
            total += c * h_t * w_t
            res = (h_t, w_t)
    total += 2.0 * c * (c * config.m) * h_t * w_t
    total += 2.0 * c * h_t * w_t
    return total
