"""Dense optical-flow predictors over frame pairs.

Two architectures are provided:

* ``FlowPredictorS`` stacks the two frames channel-wise and runs them through
  a conv encoder (32/64/96 filters) and a deconv decoder (64/32 filters) with
  additive skip connections, ending in a 2-filter flow head.
* ``FlowPredictorC`` encodes each frame separately through a shared-weight
  conv stack, correlates the resulting feature maps with a multiplicative
  patch-comparison layer, and decodes the merged volume to a flow field.

Both emit the flow at the decoder's resolution and bilinearly upsample it to
the input resolution, scaling displacement values by the upsampling factor.
ELU follows every conv/deconv except the flow head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import CorrelationConfig
from .errors import InvalidInputError, NumericError

ARCH_TAGS = ("ficm-s", "ficm-c", "icm", "icm-pixels")


def normalize_arch_tag(tag: str) -> str:
    t = str(tag).strip().lower().replace("_", "-")
    if t not in ARCH_TAGS:
        raise InvalidInputError(f"unknown architecture tag {tag!r}; expected one of {ARCH_TAGS}")
    return t


@dataclass
class FlowField:
    """Dense displacement field in pixel units (u rightward, v downward)."""

    u: np.ndarray
    v: np.ndarray

    @property
    def shape(self):
        return self.u.shape


def init_fan_in_uniform_(module: nn.Module, seed: int | None, gain: float = 1.0) -> None:
    """Initialize all conv/deconv/linear weights from U(-g/sqrt(fan_in), +g/sqrt(fan_in)).

    Seedable and independent of torch's global RNG state.
    """
    gen = torch.Generator()
    if seed is not None:
        gen.manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = m.weight.shape[0 if isinstance(m, nn.ConvTranspose2d) else 1]
            fan_in *= m.kernel_size[0] * m.kernel_size[1]
        elif isinstance(m, nn.Linear):
            fan_in = m.in_features
        else:
            continue
        bound = gain / math.sqrt(fan_in)
        with torch.no_grad():
            m.weight.uniform_(-bound, bound, generator=gen)
            if m.bias is not None:
                m.bias.uniform_(-bound, bound, generator=gen)


def conv_out_size(n: int) -> int:
    """Spatial size after a 3x3 stride-2 pad-1 convolution."""
    return (n - 1) // 2 + 1


def fit_to(x: torch.Tensor, size) -> torch.Tensor:
    """Crop (top-left anchored) or zero-pad (bottom/right) to a spatial size."""
    h, w = size
    x = x[..., : min(h, x.shape[-2]), : min(w, x.shape[-1])]
    pad_h = h - x.shape[-2]
    pad_w = w - x.shape[-1]
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h))
    return x


def upsample_flow(flow: torch.Tensor, size) -> torch.Tensor:
    """Bilinearly resize a (B,2,h,w) flow to ``size``, rescaling displacements."""
    h, w = size
    if flow.shape[-2:] == (h, w):
        return flow
    out = F.interpolate(flow, size=(h, w), mode="bilinear", align_corners=True)
    scale = torch.tensor(
        [w / flow.shape[-1], h / flow.shape[-2]], dtype=out.dtype, device=out.device
    )
    return out * scale.view(1, 2, 1, 1)


def correlation_batch(
    phi_a: torch.Tensor, phi_b: torch.Tensor, cfg: CorrelationConfig
) -> torch.Tensor:
    """Multiplicative patch comparison between two (B,C,H,W) feature maps.

    Output channel ``i * D + j`` at location ``x`` holds
    ``c(x, x + (i - d, j - d))`` — the patch dot product between ``phi_a``
    around ``x`` and ``phi_b`` around the displaced location, with the first
    displacement component indexing rows.  Locations displaced off the map
    contribute zero.
    """
    if phi_a.shape != phi_b.shape:
        raise InvalidInputError(
            f"correlation inputs must share a shape, got {tuple(phi_a.shape)} vs {tuple(phi_b.shape)}"
        )
    if phi_a.ndim != 4:
        raise InvalidInputError(f"correlation expects (B,C,H,W) maps, got shape {tuple(phi_a.shape)}")
    cfg.validate()
    d = cfg.max_displacement
    k = cfg.patch_radius
    dd = cfg.neighborhood_size
    b, _, h, w = phi_a.shape
    padded = F.pad(phi_b, (d, d, d, d))
    planes = []
    for i in range(dd):
        for j in range(dd):
            planes.append((phi_a * padded[:, :, i : i + h, j : j + w]).sum(dim=1))
    out = torch.stack(planes, dim=1)
    if k > 0:
        box = torch.ones(dd * dd, 1, 2 * k + 1, 2 * k + 1, dtype=out.dtype, device=out.device)
        out = F.conv2d(out, box, padding=k, groups=dd * dd)
    return out


def correlation(phi_a, phi_b, cfg: CorrelationConfig):
    """Single-map (C,H,W) wrapper around :func:`correlation_batch`."""
    a = torch.as_tensor(np.asarray(phi_a, dtype=np.float64))
    b_ = torch.as_tensor(np.asarray(phi_b, dtype=np.float64))
    if a.ndim != 3:
        raise InvalidInputError(f"correlation expects (C,H,W) maps, got shape {tuple(a.shape)}")
    if a.shape != b_.shape:
        raise InvalidInputError(f"correlation inputs must share a shape, got {tuple(a.shape)} vs {tuple(b_.shape)}")
    return correlation_batch(a.unsqueeze(0), b_.unsqueeze(0), cfg)[0].numpy()


class CorrelationLayer(nn.Module):
    """Parameter-free correlation as a module (keeps layer-level diagnostics)."""

    def __init__(self, cfg: CorrelationConfig):
        super().__init__()
        self.cfg = cfg

    def forward(self, phi_a, phi_b):
        return correlation_batch(phi_a, phi_b, self.cfg)


class FlowPredictorS(nn.Module):
    """Stacked-input flow predictor: conv 32/64/96 + deconv 64/32 + 2-filter head."""

    arch_tag = "ficm-s"

    def __init__(self, resolution=42, channels=(32, 64, 96), deconv_channels=(64, 32), seed=0):
        super().__init__()
        c1, c2, c3 = channels
        d1, d2 = deconv_channels
        if d1 != c2 or d2 != c1:
            raise InvalidInputError(
                "additive skips require deconv_channels == (channels[1], channels[0]); "
                f"got {deconv_channels} vs {channels}"
            )
        self.resolution = int(resolution)
        self.channels = tuple(channels)
        self.conv1 = nn.Conv2d(2, c1, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.deconv1 = nn.ConvTranspose2d(c3, d1, 4, stride=2, padding=1)
        self.deconv2 = nn.ConvTranspose2d(d1, d2, 4, stride=2, padding=1)
        self.flow_head = nn.Conv2d(d2, 2, 3, stride=1, padding=1)
        init_fan_in_uniform_(self, seed)

    def forward(self, frames_a: torch.Tensor, frames_b: torch.Tensor) -> torch.Tensor:
        size = frames_a.shape[-2:]
        x = torch.cat([frames_a, frames_b], dim=1)
        f1 = F.elu(self.conv1(x))
        f2 = F.elu(self.conv2(f1))
        f3 = F.elu(self.conv3(f2))
        u1 = fit_to(F.elu(self.deconv1(f3)), f2.shape[-2:]) + f2
        u2 = fit_to(F.elu(self.deconv2(u1)), f1.shape[-2:]) + f1
        return upsample_flow(self.flow_head(u2), size)


class FlowPredictorC(nn.Module):
    """Dual-encoder flow predictor with shared weights and a correlation layer.

    Both frames pass through the *same* conv stack (shared parameters); the
    resulting feature maps feed a correlation layer whose output is
    concatenated with a 1x1-conv redirection of the first frame's features,
    merged, and decoded with one skip fusion.
    """

    arch_tag = "ficm-c"

    def __init__(
        self,
        resolution=42,
        channels=(32, 64, 96),
        redirect_channels=32,
        merged_channels=96,
        deconv_channels=(64, 32),
        correlation_cfg: CorrelationConfig | None = None,
        seed=0,
    ):
        super().__init__()
        c1, c2, c3 = channels
        d1, d2 = deconv_channels
        if d1 != c2:
            raise InvalidInputError(
                f"the skip fusion requires deconv_channels[0] == channels[1]; got {d1} vs {c2}"
            )
        cfg = correlation_cfg or CorrelationConfig()
        self.resolution = int(resolution)
        self.channels = tuple(channels)
        self.conv1 = nn.Conv2d(1, c1, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.correlate = CorrelationLayer(cfg)
        self.redirect = nn.Conv2d(c3, redirect_channels, 1)
        corr_channels = cfg.neighborhood_size ** 2
        self.merge = nn.Conv2d(corr_channels + redirect_channels, merged_channels, 3, stride=1, padding=1)
        self.deconv1 = nn.ConvTranspose2d(merged_channels, d1, 4, stride=2, padding=1)
        self.deconv2 = nn.ConvTranspose2d(d1, d2, 4, stride=2, padding=1)
        self.flow_head = nn.Conv2d(d2, 2, 3, stride=1, padding=1)
        init_fan_in_uniform_(self, seed)

    def encode(self, x: torch.Tensor):
        f1 = F.elu(self.conv1(x))
        f2 = F.elu(self.conv2(f1))
        f3 = F.elu(self.conv3(f2))
        return f1, f2, f3

    def forward(self, frames_a: torch.Tensor, frames_b: torch.Tensor) -> torch.Tensor:
        size = frames_a.shape[-2:]
        _, fa2, fa3 = self.encode(frames_a)
        _, _, fb3 = self.encode(frames_b)
        corr = self.correlate(fa3, fb3)
        red = F.elu(self.redirect(fa3))
        merged = F.elu(self.merge(torch.cat([corr, red], dim=1)))
        u1 = fit_to(F.elu(self.deconv1(merged)), fa2.shape[-2:]) + fa2
        u2 = F.elu(self.deconv2(u1))
        return upsample_flow(self.flow_head(u2), size)


def build_flow_predictor(arch_tag: str, resolution=42, seed=0, correlation_cfg=None):
    tag = normalize_arch_tag(arch_tag)
    if tag == "ficm-s":
        return FlowPredictorS(resolution=resolution, seed=seed)
    if tag == "ficm-c":
        return FlowPredictorC(resolution=resolution, seed=seed, correlation_cfg=correlation_cfg)
    raise InvalidInputError(f"{arch_tag!r} is not a flow predictor architecture")


def _frame_to_tensor(frame, name: str) -> torch.Tensor:
    arr = np.asarray(frame, dtype=np.float32)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D HxW frame, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite values")
    return torch.from_numpy(arr)


def _locate_nonfinite(predictor: nn.Module, a: torch.Tensor, b: torch.Tensor) -> str:
    """Re-run a forward pass with hooks and name the first bad layer."""
    bad = []

    def hook(module, _inputs, output):
        if not bad and isinstance(output, torch.Tensor) and not torch.isfinite(output).all():
            for name, mod in predictor.named_modules():
                if mod is module:
                    bad.append(name or module.__class__.__name__)
                    break

    handles = [m.register_forward_hook(hook) for m in predictor.modules() if m is not predictor]
    try:
        with torch.no_grad():
            predictor(a, b)
    finally:
        for h in handles:
            h.remove()
    return bad[0] if bad else "flow output"


def predict_flow(predictor: nn.Module, frame_a, frame_b) -> FlowField:
    """Predict the dense flow from ``frame_a`` to ``frame_b``.

    Swapping the arguments yields the backward flow.  Frames must match each
    other and the resolution the predictor was built for.
    """
    a = _frame_to_tensor(frame_a, "frame_a")
    b = _frame_to_tensor(frame_b, "frame_b")
    if a.shape != b.shape:
        raise InvalidInputError(f"frames must share a shape, got {tuple(a.shape)} vs {tuple(b.shape)}")
    res = getattr(predictor, "resolution", None)
    if res is not None and a.shape != (res, res):
        raise InvalidInputError(
            f"frames are {tuple(a.shape)} but the predictor was built for {res}x{res}"
        )
    with torch.no_grad():
        flow = predictor(a.view(1, 1, *a.shape), b.view(1, 1, *b.shape))[0]
    if not torch.isfinite(flow).all():
        layer = _locate_nonfinite(predictor, a.view(1, 1, *a.shape), b.view(1, 1, *b.shape))
        raise NumericError(f"non-finite activations in layer '{layer}'")
    out = flow.numpy()
    return FlowField(u=out[0], v=out[1])


def count_parameters(arch_tag: str, input_resolution=42, frame_stack=4, num_actions=4) -> int:
    """Total trainable scalar parameters of an architecture at a resolution."""
    tag = normalize_arch_tag(arch_tag)
    if tag in ("ficm-s", "ficm-c"):
        module = build_flow_predictor(tag, resolution=input_resolution)
    else:
        from .curiosity import IcmNetwork, IcmPixelsNetwork

        cls = IcmNetwork if tag == "icm" else IcmPixelsNetwork
        module = cls(resolution=input_resolution, frame_stack=frame_stack, num_actions=num_actions)
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
