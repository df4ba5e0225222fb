"""Intrinsic-reward generators.

``FlowCuriosity`` scores a transition by how poorly its flow predictor
explains the frame pair: it predicts forward and backward flow, warps each
frame onto the other, and converts the summed reconstruction losses into a
bonus ``r_i = (zeta / 2) * (L_f + L_b)``.  The bonus needs no action and only
two single frames.

``IcmCuriosity`` is the feature-space baseline (inverse + forward dynamics
over 4-frame stacks, bonus = scaled forward prediction error), and
``IcmPixelsCuriosity`` its pixel-space variant without the inverse model.

All reward evaluation is read-only over parameters; rewards handed to the
trainer always come from pre-update parameters, including inside the fused
``reward_and_update`` paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import CuriosityConfig
from .errors import InvalidInputError, NumericError
from .flownets import (
    build_flow_predictor,
    conv_out_size,
    fit_to,
    init_fan_in_uniform_,
)
from .warping import warp_batch


@dataclass(frozen=True)
class RewardBreakdown:
    """Losses and rewards for one transition.

    ``reward`` is computed as ``(zeta / 2) * loss_total`` so that identity
    holds bitwise; ``reward_forward + reward_backward`` equals ``reward`` up
    to one rounding.
    """

    loss_forward: float
    loss_backward: float
    loss_total: float
    reward_forward: float
    reward_backward: float
    reward: float


def breakdown_from_losses(zeta: float, loss_forward: float, loss_backward: float) -> RewardBreakdown:
    lf = float(loss_forward)
    lb = float(loss_backward)
    half = 0.5 * zeta
    return RewardBreakdown(
        loss_forward=lf,
        loss_backward=lb,
        loss_total=lf + lb,
        reward_forward=half * lf,
        reward_backward=half * lb,
        reward=half * (lf + lb),
    )


def _check_finite_grads(module: nn.Module, context: str) -> None:
    for name, p in module.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter '{name}' during {context}")


def _pair_tensors(frames_t, frames_t1):
    a = torch.as_tensor(np.asarray(frames_t, dtype=np.float32))
    b = torch.as_tensor(np.asarray(frames_t1, dtype=np.float32))
    if a.ndim == 2:
        a = a.unsqueeze(0)
        b = b.unsqueeze(0)
    if a.ndim != 3 or a.shape != b.shape:
        raise InvalidInputError(
            f"expected matching (B,H,W) frame batches, got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    return a.unsqueeze(1), b.unsqueeze(1)


class FlowCuriosity:
    """Flow-reconstruction bonus over consecutive single frames."""

    needs_stacks = False

    def __init__(self, predictor: nn.Module, cfg: CuriosityConfig):
        self.predictor = predictor
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(predictor.parameters(), lr=cfg.learning_rate)

    @property
    def kind(self) -> str:
        return self.predictor.arch_tag

    def checkpoint_modules(self) -> dict:
        return {"curiosity": self.predictor}

    def pair_losses(self, frames_t: torch.Tensor, frames_t1: torch.Tensor):
        """Per-pair forward/backward reconstruction losses for (B,1,H,W) batches."""
        beta = self.cfg.warp.beta
        flow_fwd = self.predictor(frames_t, frames_t1)
        flow_bwd = self.predictor(frames_t1, frames_t)
        pred_t = warp_batch(frames_t1, flow_fwd, beta=beta)
        pred_t1 = warp_batch(frames_t, flow_bwd, beta=beta)
        loss_f = ((frames_t1 - pred_t1) ** 2).mean(dim=(1, 2, 3))
        loss_b = ((frames_t - pred_t) ** 2).mean(dim=(1, 2, 3))
        return loss_f, loss_b

    def reward(self, s_t, s_t1) -> RewardBreakdown:
        a, b = _pair_tensors(s_t, s_t1)
        with torch.no_grad():
            loss_f, loss_b = self.pair_losses(a, b)
        return breakdown_from_losses(self.cfg.zeta, loss_f[0].item(), loss_b[0].item())

    def reward_batch(self, frames_t, frames_t1) -> np.ndarray:
        a, b = _pair_tensors(frames_t, frames_t1)
        with torch.no_grad():
            loss_f, loss_b = self.pair_losses(a, b)
        return (0.5 * self.cfg.zeta * (loss_f + loss_b)).numpy()

    def reward_and_update(self, frames_t, frames_t1):
        """One fused pass: pre-update rewards for every pair plus one Adam step.

        The reward reported for a pair is exactly ``(zeta / 2)`` times the
        loss that pair contributes to the gradient step.
        """
        a, b = _pair_tensors(frames_t, frames_t1)
        loss_f, loss_b = self.pair_losses(a, b)
        per_pair = loss_f + loss_b
        rewards = (0.5 * self.cfg.zeta * per_pair.detach()).numpy()
        mean_loss = per_pair.mean()
        self.optimizer.zero_grad(set_to_none=True)
        mean_loss.backward()
        _check_finite_grads(self.predictor, "flow-predictor update")
        self.optimizer.step()
        return rewards, float(mean_loss.detach())

    def update(self, batch) -> float:
        """One gradient step on the mean loss over a batch of frame pairs.

        Returns the pre-step mean loss.
        """
        if len(batch) == 0:
            raise InvalidInputError("update requires a non-empty batch of frame pairs")
        frames_t = np.stack([np.asarray(p[0], dtype=np.float32) for p in batch])
        frames_t1 = np.stack([np.asarray(p[1], dtype=np.float32) for p in batch])
        _, mean_loss = self.reward_and_update(frames_t, frames_t1)
        return mean_loss

    def probe_bonus(self, frames_t, frames_t1, actions=None) -> np.ndarray:
        return self.reward_batch(frames_t, frames_t1)


def ficm_reward(predictor: nn.Module, s_t, s_t1, cfg: CuriosityConfig) -> RewardBreakdown:
    """Intrinsic reward of one transition under fixed predictor parameters."""
    return FlowCuriosity(predictor, cfg).reward(s_t, s_t1)


class IcmNetwork(nn.Module):
    """Feature encoder plus inverse- and forward-dynamics heads."""

    arch_tag = "icm"

    def __init__(self, resolution=42, frame_stack=4, num_actions=4, conv_channels=32, hidden=256, seed=0):
        super().__init__()
        self.resolution = int(resolution)
        self.frame_stack = int(frame_stack)
        self.num_actions = int(num_actions)
        self.encoder = nn.Sequential(
            nn.Conv2d(frame_stack, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(conv_channels, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(conv_channels, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(conv_channels, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
        )
        side = resolution
        for _ in range(4):
            side = conv_out_size(side)
        self.feature_dim = conv_channels * side * side
        self.inverse_head = nn.Sequential(
            nn.Linear(2 * self.feature_dim, hidden),
            nn.ELU(),
            nn.Linear(hidden, num_actions),
        )
        self.forward_head = nn.Sequential(
            nn.Linear(self.feature_dim + num_actions, hidden),
            nn.ELU(),
            nn.Linear(hidden, self.feature_dim),
        )
        init_fan_in_uniform_(self, seed)

    def encode(self, stacks: torch.Tensor) -> torch.Tensor:
        return self.encoder(stacks).flatten(1)

    def predict_next(self, phi: torch.Tensor, actions_onehot: torch.Tensor) -> torch.Tensor:
        return self.forward_head(torch.cat([phi, actions_onehot], dim=1))

    def inverse_logits(self, phi_t: torch.Tensor, phi_t1: torch.Tensor) -> torch.Tensor:
        return self.inverse_head(torch.cat([phi_t, phi_t1], dim=1))


class IcmPixelsNetwork(nn.Module):
    """ICM without the inverse model: predicts the next frame stack in pixels."""

    arch_tag = "icm-pixels"

    def __init__(
        self,
        resolution=42,
        frame_stack=4,
        num_actions=4,
        conv_channels=32,
        decoder_channels=(64, 48, 24),
        seed=0,
    ):
        super().__init__()
        self.resolution = int(resolution)
        self.frame_stack = int(frame_stack)
        self.num_actions = int(num_actions)
        self.encoder = nn.Sequential(
            nn.Conv2d(frame_stack, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(conv_channels, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(conv_channels, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(conv_channels, conv_channels, 3, stride=2, padding=1),
            nn.ELU(),
        )
        sizes = [resolution]
        for _ in range(4):
            sizes.append(conv_out_size(sizes[-1]))
        # Decoder upsamples back through the encoder's size chain.
        self.decode_sizes = sizes[-2::-1]
        self.bottleneck = sizes[-1]
        d1, d2, d3 = decoder_channels
        self.deconv1 = nn.ConvTranspose2d(conv_channels + num_actions, d1, 4, stride=2, padding=1)
        self.deconv2 = nn.ConvTranspose2d(d1, d2, 4, stride=2, padding=1)
        self.deconv3 = nn.ConvTranspose2d(d2, d3, 4, stride=2, padding=1)
        self.deconv4 = nn.ConvTranspose2d(d3, frame_stack, 4, stride=2, padding=1)
        init_fan_in_uniform_(self, seed)

    def predict_next_stack(self, stacks: torch.Tensor, actions_onehot: torch.Tensor) -> torch.Tensor:
        feat = self.encoder(stacks)
        b = feat.shape[0]
        act = actions_onehot.view(b, self.num_actions, 1, 1).expand(-1, -1, self.bottleneck, self.bottleneck)
        x = torch.cat([feat, act], dim=1)
        x = fit_to(F.elu(self.deconv1(x)), (self.decode_sizes[0],) * 2)
        x = fit_to(F.elu(self.deconv2(x)), (self.decode_sizes[1],) * 2)
        x = fit_to(F.elu(self.deconv3(x)), (self.decode_sizes[2],) * 2)
        return fit_to(self.deconv4(x), (self.decode_sizes[3],) * 2)


def _stack_tensors(stacks_t, stacks_t1, frame_stack: int):
    a = torch.as_tensor(np.asarray(stacks_t, dtype=np.float32))
    b = torch.as_tensor(np.asarray(stacks_t1, dtype=np.float32))
    if a.ndim == 3:
        a = a.unsqueeze(0)
        b = b.unsqueeze(0)
    if a.ndim != 4 or a.shape != b.shape or a.shape[1] != frame_stack:
        raise InvalidInputError(
            f"expected matching (B,{frame_stack},H,W) stacks, got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    return a, b


def _action_tensor(actions, num_actions: int) -> torch.Tensor:
    acts = torch.as_tensor(np.asarray(actions, dtype=np.int64)).reshape(-1)
    if acts.numel() and (acts.min() < 0 or acts.max() >= num_actions):
        raise InvalidInputError(f"action indices must lie in [0, {num_actions}), got {acts.tolist()}")
    return acts


class IcmCuriosity:
    """Forward-prediction-error bonus over encoded 4-frame stacks."""

    needs_stacks = True

    def __init__(self, net: IcmNetwork, cfg: CuriosityConfig):
        self.net = net
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)

    @property
    def kind(self) -> str:
        return "icm"

    def checkpoint_modules(self) -> dict:
        return {"curiosity": self.net}

    def reward(self, stack_t, action, stack_t1) -> float:
        a, b = _stack_tensors(stack_t, stack_t1, self.net.frame_stack)
        acts = _action_tensor([action], self.net.num_actions)
        with torch.no_grad():
            r = self._reward_tensor(a, acts, b)
        return float(r[0])

    def _reward_tensor(self, stacks_t, actions, stacks_t1) -> torch.Tensor:
        phi_t = self.net.encode(stacks_t)
        phi_t1 = self.net.encode(stacks_t1)
        onehot = F.one_hot(actions, self.net.num_actions).to(phi_t.dtype)
        pred = self.net.predict_next(phi_t, onehot)
        err = (phi_t1.double() - pred.double()) ** 2
        return 0.5 * self.cfg.eta * err.sum(dim=1)

    def reward_and_update(self, stacks_t, actions, stacks_t1):
        a, b = _stack_tensors(stacks_t, stacks_t1, self.net.frame_stack)
        acts = _action_tensor(actions, self.net.num_actions)
        phi_t = self.net.encode(a)
        phi_t1 = self.net.encode(b)
        onehot = F.one_hot(acts, self.net.num_actions).to(phi_t.dtype)
        # The forward model trains against detached features; the encoder is
        # shaped by the inverse-dynamics loss only.
        pred = self.net.predict_next(phi_t.detach(), onehot)
        err = (phi_t1.detach() - pred) ** 2
        rewards = (0.5 * self.cfg.eta * err.double().sum(dim=1).detach()).numpy()
        forward_loss = err.mean()
        logits = self.net.inverse_logits(phi_t, phi_t1)
        inverse_loss = F.cross_entropy(logits, acts)
        loss = self.cfg.forward_loss_weight * forward_loss + self.cfg.inverse_loss_weight * inverse_loss
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        _check_finite_grads(self.net, "icm update")
        self.optimizer.step()
        return rewards, float(loss.detach())

    def update(self, batch) -> float:
        """One step on the weighted forward + inverse losses; returns pre-step loss."""
        if len(batch) == 0:
            raise InvalidInputError("update requires a non-empty batch")
        stacks_t = np.stack([np.asarray(b[0], dtype=np.float32) for b in batch])
        actions = [int(b[1]) for b in batch]
        stacks_t1 = np.stack([np.asarray(b[2], dtype=np.float32) for b in batch])
        _, loss = self.reward_and_update(stacks_t, actions, stacks_t1)
        return loss

    def inverse_accuracy(self, stacks_t, actions, stacks_t1) -> float:
        a, b = _stack_tensors(stacks_t, stacks_t1, self.net.frame_stack)
        acts = _action_tensor(actions, self.net.num_actions)
        with torch.no_grad():
            logits = self.net.inverse_logits(self.net.encode(a), self.net.encode(b))
        return float((logits.argmax(dim=1) == acts).float().mean())

    def probe_bonus(self, frames_t, frames_t1, actions=None) -> np.ndarray:
        """Bonus over bare frame pairs: stacks are built by frame repetition.

        Matches the episode-start stacking convention; applied identically
        under every checkpoint so probe curves are comparable.
        """
        a = torch.as_tensor(np.asarray(frames_t, dtype=np.float32))
        b = torch.as_tensor(np.asarray(frames_t1, dtype=np.float32))
        stacks_t = a.unsqueeze(1).repeat(1, self.net.frame_stack, 1, 1)
        stacks_t1 = b.unsqueeze(1).repeat(1, self.net.frame_stack, 1, 1)
        if actions is None:
            acts = torch.zeros(a.shape[0], dtype=torch.int64)
        else:
            acts = _action_tensor(actions, self.net.num_actions)
        with torch.no_grad():
            r = self._reward_tensor(stacks_t, acts, stacks_t1)
        return r.numpy()


def icm_reward(net: IcmNetwork, stack_t, action, stack_t1, eta: float) -> float:
    """Forward-prediction-error bonus ``(eta / 2) * ||phi' - f(phi, a)||^2``."""
    cfg = CuriosityConfig(module_kind="icm", eta=eta)
    return IcmCuriosity(net, cfg).reward(stack_t, action, stack_t1)


class IcmPixelsCuriosity:
    """Next-stack pixel-prediction bonus (no inverse model)."""

    needs_stacks = True

    def __init__(self, net: IcmPixelsNetwork, cfg: CuriosityConfig):
        self.net = net
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)

    @property
    def kind(self) -> str:
        return "icm-pixels"

    def checkpoint_modules(self) -> dict:
        return {"curiosity": self.net}

    def _reward_tensor(self, stacks_t, actions, stacks_t1) -> torch.Tensor:
        onehot = F.one_hot(actions, self.net.num_actions).to(stacks_t.dtype)
        pred = self.net.predict_next_stack(stacks_t, onehot)
        err = (stacks_t1.double() - pred.double()) ** 2
        return 0.5 * self.cfg.eta * err.mean(dim=(1, 2, 3))

    def reward(self, stack_t, action, stack_t1) -> float:
        a, b = _stack_tensors(stack_t, stack_t1, self.net.frame_stack)
        acts = _action_tensor([action], self.net.num_actions)
        with torch.no_grad():
            r = self._reward_tensor(a, acts, b)
        return float(r[0])

    def reward_and_update(self, stacks_t, actions, stacks_t1):
        a, b = _stack_tensors(stacks_t, stacks_t1, self.net.frame_stack)
        acts = _action_tensor(actions, self.net.num_actions)
        onehot = F.one_hot(acts, self.net.num_actions).to(a.dtype)
        pred = self.net.predict_next_stack(a, onehot)
        err = (b - pred) ** 2
        rewards = (0.5 * self.cfg.eta * err.double().mean(dim=(1, 2, 3)).detach()).numpy()
        loss = err.mean()
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        _check_finite_grads(self.net, "icm-pixels update")
        self.optimizer.step()
        return rewards, float(loss.detach())

    def probe_bonus(self, frames_t, frames_t1, actions=None) -> np.ndarray:
        a = torch.as_tensor(np.asarray(frames_t, dtype=np.float32))
        b = torch.as_tensor(np.asarray(frames_t1, dtype=np.float32))
        stacks_t = a.unsqueeze(1).repeat(1, self.net.frame_stack, 1, 1)
        stacks_t1 = b.unsqueeze(1).repeat(1, self.net.frame_stack, 1, 1)
        if actions is None:
            acts = torch.zeros(a.shape[0], dtype=torch.int64)
        else:
            acts = _action_tensor(actions, self.net.num_actions)
        with torch.no_grad():
            r = self._reward_tensor(stacks_t, acts, stacks_t1)
        return r.numpy()


class NullCuriosity:
    """No intrinsic reward: the agent optimizes extrinsic reward alone."""

    needs_stacks = False
    kind = "none"

    def checkpoint_modules(self) -> dict:
        return {}

    def reward_and_update(self, frames_t, frames_t1):
        n = len(frames_t)
        return np.zeros(n, dtype=np.float64), 0.0

    def reward_batch(self, frames_t, frames_t1) -> np.ndarray:
        return np.zeros(len(frames_t), dtype=np.float64)

    def probe_bonus(self, frames_t, frames_t1, actions=None) -> np.ndarray:
        return np.zeros(len(frames_t), dtype=np.float64)


def build_curiosity(cfg: CuriosityConfig, resolution=42, num_actions=4, frame_stack=4, seed=0):
    kind = cfg.module_kind
    if kind == "none":
        return NullCuriosity()
    if kind in ("ficm-s", "ficm-c"):
        predictor = build_flow_predictor(kind, resolution=resolution, seed=seed, correlation_cfg=cfg.correlation)
        return FlowCuriosity(predictor, cfg)
    if kind == "icm":
        net = IcmNetwork(resolution=resolution, frame_stack=frame_stack, num_actions=num_actions, seed=seed)
        return IcmCuriosity(net, cfg)
    if kind == "icm-pixels":
        net = IcmPixelsNetwork(resolution=resolution, frame_stack=frame_stack, num_actions=num_actions, seed=seed)
        return IcmPixelsCuriosity(net, cfg)
    raise InvalidInputError(f"unknown curiosity module kind {kind!r}")


class RunningStd:
    """Welford running standard deviation for optional bonus normalization."""

    def __init__(self, eps: float = 1e-8):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.eps = eps

    def update(self, values) -> None:
        for x in np.asarray(values, dtype=np.float64).ravel():
            self.count += 1
            delta = x - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (x - self.mean)

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return math.sqrt(self.m2 / (self.count - 1))

    def normalize(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        return arr / max(self.std, self.eps)
