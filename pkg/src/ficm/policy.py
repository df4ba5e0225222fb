"""Actor-critic policy over single grayscale frames, with n-step returns.

A shared conv encoder (4 layers, 32 filters, stride 2, ELU) feeds an action
logits head and a scalar value head.  Heads are initialized at a small scale
so the starting policy is near-uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import TrainConfig
from .errors import InvalidInputError, NumericError
from .flownets import conv_out_size, init_fan_in_uniform_


class PolicyNet(nn.Module):
    def __init__(self, num_actions=4, resolution=42, conv_channels=32, seed=0):
        super().__init__()
        self.num_actions = int(num_actions)
        self.resolution = int(resolution)
        self.encoder = nn.Sequential(
            nn.Conv2d(1, conv_channels, 3, stride=2, padding=1),
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
        self.logits_head = nn.Linear(self.feature_dim, num_actions)
        self.value_head = nn.Linear(self.feature_dim, 1)
        init_fan_in_uniform_(self, seed)
        # Small heads keep the initial policy near-uniform (entropy ~ log A).
        init_fan_in_uniform_(self.logits_head, None if seed is None else seed + 1, gain=0.01)
        init_fan_in_uniform_(self.value_head, None if seed is None else seed + 2, gain=0.01)

    def forward(self, obs: torch.Tensor):
        if obs.ndim == 3:
            obs = obs.unsqueeze(1)
        feat = self.encoder(obs).flatten(1)
        return self.logits_head(feat), self.value_head(feat).squeeze(-1)


def policy_forward(policy: PolicyNet, obs):
    """Evaluate one frame; returns (logits[4] ndarray, value float)."""
    arr = np.asarray(obs, dtype=np.float32)
    if arr.ndim != 2:
        raise InvalidInputError(f"observation must be an HxW frame, got shape {arr.shape}")
    with torch.no_grad():
        logits, value = policy(torch.from_numpy(arr).view(1, 1, *arr.shape))
    if not (torch.isfinite(logits).all() and torch.isfinite(value).all()):
        raise NumericError("policy produced non-finite outputs")
    return logits[0].numpy(), float(value[0])


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def select_action(logits, rng: np.random.Generator) -> int:
    """Sample an action from softmax(logits) with the caller's RNG."""
    probs = softmax_probs(logits)
    return int(rng.choice(len(probs), p=probs))


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward_ext: float
    reward_int: float
    next_obs: np.ndarray
    done: bool
    pose: object = None
    next_pose: object = None


@dataclass
class Trajectory:
    """Contiguous transitions from one worker, never spanning an episode end."""

    transitions: list = field(default_factory=list)
    values: list = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.transitions)


def compute_returns(traj: Trajectory, gamma: float):
    """n-step bootstrapped discounted returns over combined rewards.

    Each step consumes ``reward_ext + reward_int``; the advantage is the
    return minus the stored value estimate.
    """
    n = len(traj.transitions)
    if n == 0:
        raise InvalidInputError("trajectory is empty")
    returns = np.empty(n, dtype=np.float64)
    acc = float(traj.bootstrap_value)
    for t in range(n - 1, -1, -1):
        tr = traj.transitions[t]
        acc = (tr.reward_ext + tr.reward_int) + gamma * acc
        returns[t] = acc
    values = np.asarray(traj.values, dtype=np.float64)
    return returns, returns - values


def a3c_update(policy: PolicyNet, optimizer, trajectories, cfg: TrainConfig) -> dict:
    """One gradient step on policy-gradient + entropy + value losses.

    Gradients are clipped by global norm; non-finite gradients raise a
    :class:`NumericError` naming the parameter.
    """
    trajectories = [t for t in trajectories if len(t)]
    if not trajectories:
        raise InvalidInputError("a3c_update requires at least one non-empty trajectory")
    obs, actions, returns, advantages = [], [], [], []
    for traj in trajectories:
        ret, adv = compute_returns(traj, cfg.gamma)
        returns.append(ret)
        advantages.append(adv)
        obs.extend(tr.obs for tr in traj.transitions)
        actions.extend(tr.action for tr in traj.transitions)
    obs_t = torch.from_numpy(np.stack(obs).astype(np.float32)).unsqueeze(1)
    act_t = torch.as_tensor(np.asarray(actions, dtype=np.int64))
    ret_t = torch.as_tensor(np.concatenate(returns), dtype=torch.float32)
    adv_t = torch.as_tensor(np.concatenate(advantages), dtype=torch.float32)

    logits, values = policy(obs_t)
    logp = F.log_softmax(logits, dim=1)
    probs = logp.exp()
    chosen_logp = logp.gather(1, act_t.unsqueeze(1)).squeeze(1)
    pg_loss = -(chosen_logp * adv_t).mean()
    entropy = -(probs * logp).sum(dim=1).mean()
    value_loss = ((values - ret_t) ** 2).mean()
    loss = pg_loss - cfg.entropy_weight * entropy + cfg.value_loss_weight * value_loss

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    for name, p in policy.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter '{name}' during a3c update")
    torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.grad_clip_norm)
    optimizer.step()
    return {
        "policy_loss": float(pg_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(entropy.detach()),
    }
