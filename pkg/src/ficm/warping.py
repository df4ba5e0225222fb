"""Inverse-mapping bilinear warping.

Coordinate convention: pixel centers sit at integer coordinates, origin at the
top-left, ``u`` displaces rightward (columns), ``v`` downward (rows).  The
warp reads ``out(p) = sample(source, p + beta * flow(p))`` for every output
pixel ``p`` (inverse mapping), so warping a frame through the flow that maps
it onto another frame reconstructs that other frame.  Sampling outside the
image clamps to the nearest border pixel.

All operations are differentiable with respect to both the source image and
the flow field (piecewise-linear in the sub-pixel offsets).
"""

from __future__ import annotations

import numpy as np
import torch

from .config import WarpConfig
from .errors import InvalidInputError, NumericError


def bilinear_sample(image, x: float, y: float) -> float:
    """Sample ``image`` at real-valued ``(x, y)``, clamping to the border.

    ``x`` indexes columns and ``y`` rows.  At integer coordinates this
    returns the exact pixel value; in between, the bilinear blend of the
    four neighbors.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise InvalidInputError(f"bilinear_sample expects a non-empty HxW image, got shape {img.shape}")
    h, w = img.shape
    x = min(max(float(x), 0.0), w - 1.0)
    y = min(max(float(y), 0.0), h - 1.0)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    top = (1.0 - wx) * img[y0, x0] + wx * img[y0, x1]
    bot = (1.0 - wx) * img[y1, x0] + wx * img[y1, x1]
    return float((1.0 - wy) * top + wy * bot)


def warp_batch(source: torch.Tensor, flow: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Warp a batch of images through a batch of flow fields.

    ``source`` is ``(B, C, H, W)``, ``flow`` is ``(B, 2, H, W)`` with channel
    0 = u and channel 1 = v, in pixels.  Returns ``(B, C, H, W)``.
    Differentiable in both arguments.
    """
    if source.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2:
        raise InvalidInputError(
            f"warp_batch expects source (B,C,H,W) and flow (B,2,H,W), got {tuple(source.shape)} and {tuple(flow.shape)}"
        )
    if source.shape[0] != flow.shape[0] or source.shape[2:] != flow.shape[2:]:
        raise InvalidInputError(
            f"source and flow are not spatially aligned: {tuple(source.shape)} vs {tuple(flow.shape)}"
        )
    b, c, h, w = source.shape
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=source.dtype, device=source.device),
        torch.arange(w, dtype=source.dtype, device=source.device),
        indexing="ij",
    )
    sx = (xs + beta * flow[:, 0]).clamp(0, w - 1)
    sy = (ys + beta * flow[:, 1]).clamp(0, h - 1)
    x0 = sx.floor()
    y0 = sy.floor()
    wx = (sx - x0).unsqueeze(1)
    wy = (sy - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = source.reshape(b, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    top = (1 - wx) * gather(y0, x0) + wx * gather(y0, x1)
    bot = (1 - wx) * gather(y1, x0) + wx * gather(y1, x1)
    return (1 - wy) * top + wy * bot


def _flow_as_array(flow):
    if hasattr(flow, "u") and hasattr(flow, "v"):
        return np.stack([np.asarray(flow.u), np.asarray(flow.v)], axis=0)
    arr = np.asarray(flow)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise InvalidInputError(f"flow must be (2,H,W) or have u/v fields, got shape {arr.shape}")
    return arr


def warp(source, flow, cfg: WarpConfig | float = 1.0):
    """Warp a single ``(H, W)`` frame through a flow field.

    ``flow`` may be a ``(2, H, W)`` array or anything exposing ``u``/``v``
    matrices.  ``cfg`` is a :class:`WarpConfig` or a bare ``beta`` scalar.
    Accepts numpy arrays or torch tensors; returns the same kind.
    """
    beta = cfg.beta if isinstance(cfg, WarpConfig) else float(cfg)
    is_torch = isinstance(source, torch.Tensor)
    src_t = source if is_torch else torch.as_tensor(np.asarray(source, dtype=np.float64))
    if src_t.ndim != 2:
        raise InvalidInputError(f"warp expects an HxW frame, got shape {tuple(src_t.shape)}")
    if isinstance(flow, torch.Tensor):
        flow_t = flow
    else:
        flow_t = torch.as_tensor(_flow_as_array(flow), dtype=src_t.dtype)
    if flow_t.ndim != 3 or flow_t.shape[0] != 2:
        raise InvalidInputError(f"flow must be (2,H,W), got shape {tuple(flow_t.shape)}")
    if flow_t.shape[1:] != src_t.shape:
        raise InvalidInputError(
            f"source and flow are not spatially aligned: {tuple(src_t.shape)} vs {tuple(flow_t.shape[1:])}"
        )
    if not torch.isfinite(flow_t).all():
        raise NumericError("warp received a non-finite flow field")
    out = warp_batch(src_t.unsqueeze(0).unsqueeze(0), flow_t.unsqueeze(0), beta=beta)[0, 0]
    return out if is_torch else out.numpy()
