"""Finite-difference oracles shared by the gradient-check tests."""

import numpy as np
import torch


def flatten_params(module):
    return torch.cat([p.detach().reshape(-1) for p in module.parameters()])


def set_params(module, vec):
    i = 0
    with torch.no_grad():
        for p in module.parameters():
            n = p.numel()
            p.copy_(vec[i : i + n].reshape(p.shape))
            i += n


def fd_param_gradient(loss_fn, module, h):
    """Central differences of ``loss_fn()`` w.r.t. every parameter scalar."""
    base = flatten_params(module).clone()
    grad = np.zeros(base.numel(), dtype=np.float64)
    with torch.no_grad():
        for i in range(base.numel()):
            pert = base.clone()
            pert[i] += h
            set_params(module, pert)
            lp = float(loss_fn())
            pert[i] -= 2 * h
            set_params(module, pert)
            lm = float(loss_fn())
            grad[i] = (lp - lm) / (2 * h)
    set_params(module, base)
    return grad


def analytic_param_gradient(loss_fn, module):
    module.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    return torch.cat(
        [
            (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
            for p in module.parameters()
        ]
    ).detach().numpy()


def fd_tensor_gradient(loss_fn, tensor, h):
    """Central differences of ``loss_fn()`` w.r.t. every element of ``tensor``."""
    flat = tensor.reshape(-1)
    grad = np.zeros(flat.numel(), dtype=np.float64)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + h
            lp = float(loss_fn())
            flat[i] = orig - h
            lm = float(loss_fn())
            flat[i] = orig
            grad[i] = (lp - lm) / (2 * h)
    return grad.reshape(tuple(tensor.shape))


def norm_rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
