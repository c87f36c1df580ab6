"""Independent float64 reference implementations used as gradient oracles.

These mirror the documented loss math directly in numpy float64 -- separate
code from the package's float32 graph -- so central finite differences on
them are accurate to ~1e-10 and make the 1e-4 relative gradient tolerance
meaningful. Targets that the losses treat as constants (consistency targets,
TD targets, teacher outputs) are frozen at the base point before
differencing, matching the stop-gradient semantics under test.
"""

from typing import Callable, Dict, List, Tuple

import numpy as np


def mish64(x: np.ndarray) -> np.ndarray:
    return x * np.tanh(np.logaddexp(0.0, x))


ACTS64 = {"mish": mish64, "tanh": np.tanh}

Layers = List[Tuple[np.ndarray, np.ndarray]]


def mlp64(layers: Layers, x: np.ndarray, act: Callable,
          out_tanh: bool = False) -> np.ndarray:
    last = len(layers) - 1
    h = x
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < last:
            h = act(h)
    return np.tanh(h) if out_tanh else h


def model_layers64(model) -> Dict[str, Layers]:
    """Extract float64 copies of every head's (w, b) stacks."""
    out: Dict[str, Layers] = {}
    for head, mlp in model.heads().items():
        out[head] = [(w.data.astype(np.float64), b.data.astype(np.float64))
                     for w, b in zip(mlp.weights, mlp.biases)]
    return out


def head_np(arrs: Dict[str, Layers], head: str, act, x, extra=None,
            out_tanh=False) -> np.ndarray:
    inp = x if extra is None else np.concatenate([x, extra], axis=1)
    return mlp64(arrs[head], inp, act, out_tanh=out_tanh)


def rollout64(arrs, act, obs, actions, horizon):
    z = head_np(arrs, "encoder", act, obs[:, 0])
    latents = [z]
    for t in range(horizon):
        latents.append(head_np(arrs, "dynamics", act, latents[t], actions[:, t]))
    return latents


def composite_targets64(arrs, act, batch, coeffs, gamma):
    """Consistency and TD targets at the base point (held constant)."""
    obs, rewards = batch.obs, batch.rewards
    h = coeffs.horizon
    enc_targets = [head_np(arrs, "encoder", act, obs[:, t])
                   for t in range(1, h + 1)]
    td_targets = []
    for t in range(h):
        z_next = head_np(arrs, "encoder", act, obs[:, t + 1])
        a_next = head_np(arrs, "policy", act, z_next, out_tanh=True)
        q_next = head_np(arrs, "target_value", act, z_next, a_next)[:, 0]
        td_targets.append(rewards[:, t].astype(np.float64) + gamma * q_next)
    return enc_targets, td_targets


def composite_loss64(arrs, act, batch, coeffs, enc_targets, td_targets):
    """(consistency, reward, value, total) with frozen targets."""
    obs, actions, rewards = batch.obs, batch.actions, batch.rewards
    h = coeffs.horizon
    latents = rollout64(arrs, act, obs, actions.astype(np.float64), h)
    consistency = sum(coeffs.rho ** t *
                      np.mean((latents[t] - enc_targets[t - 1]) ** 2)
                      for t in range(1, h + 1))
    reward = sum(coeffs.rho ** t * np.mean(
        (head_np(arrs, "reward", act, latents[t], actions[:, t])[:, 0]
         - rewards[:, t]) ** 2) for t in range(h))
    value = sum(coeffs.rho ** t * np.mean(
        (head_np(arrs, "value", act, latents[t], actions[:, t])[:, 0]
         - td_targets[t]) ** 2) for t in range(h))
    total = (coeffs.alpha_consistency * consistency
             + coeffs.alpha_reward * reward
             + coeffs.alpha_value * value)
    return consistency, reward, value, total


def policy_objective64(arrs, act, latents_const, rho):
    h = max(len(latents_const) - 1, 1)
    total = 0.0
    for t in range(h):
        z = latents_const[t].astype(np.float64)
        a = head_np(arrs, "policy", act, z, out_tanh=True)
        q = head_np(arrs, "value", act, z, a)[:, 0]
        total += -(rho ** t) / h * np.mean(q)
    return total


def reward_distill64(student_arrs, act, batch, teacher_rewards):
    """Mean over batch and steps of (teacher - student)^2, teacher frozen."""
    obs, actions = batch.obs, batch.actions
    h = actions.shape[1]
    acc = 0.0
    for t in range(h):
        z = head_np(student_arrs, "encoder", act, obs[:, t])
        pred = head_np(student_arrs, "reward", act, z, actions[:, t])[:, 0]
        acc += np.mean((pred - teacher_rewards[t]) ** 2)
    return acc / h


def latent_distill64(student_arrs, act, batch, teacher_next_latents,
                     projection_w=None, pca=None):
    """Latent-mode distill term; exactly one of projection_w / pca given."""
    obs, actions = batch.obs, batch.actions
    h = actions.shape[1]
    acc = 0.0
    for t in range(h):
        z = head_np(student_arrs, "encoder", act, obs[:, t])
        z_next = head_np(student_arrs, "dynamics", act, z, actions[:, t])
        if pca is not None:
            target = (teacher_next_latents[t] - pca.mean.astype(np.float64)) \
                     @ pca.components.astype(np.float64).T
            acc += np.mean((z_next - target) ** 2)
        else:
            proj = teacher_next_latents[t] @ projection_w
            acc += np.mean((z_next - proj) ** 2)
    return acc / h


def central_diff_layers(loss_fn: Callable[[], float], layers: Layers,
                        eps: float = 1e-4) -> Layers:
    """Central differences w.r.t. every (w, b) entry of one head, in place."""
    grads = []
    for w, b in layers:
        gw = np.zeros_like(w)
        for arr, g in ((w, gw),):
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = loss_fn()
                flat[i] = orig - eps
                lo = loss_fn()
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
        gb = np.zeros_like(b)
        flat, gflat = b.reshape(-1), gb.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append((gw, gb))
    return grads


def grads_close(analytic: Layers, fd: Layers, tol: float = 1e-4) -> bool:
    """|analytic - fd| <= tol * max(1, |fd|) elementwise across all layers."""
    for (gw_a, gb_a), (gw_f, gb_f) in zip(analytic, fd):
        for a, f in ((gw_a, gw_f), (gb_a, gb_f)):
            bound = tol * np.maximum(1.0, np.abs(f))
            if not np.all(np.abs(a.astype(np.float64) - f) <= bound):
                return False
    return True


def analytic_head_grads(mlp) -> Layers:
    return [((w.grad if w.grad is not None else np.zeros_like(w.data)).copy(),
             (b.grad if b.grad is not None else np.zeros_like(b.data)).copy())
            for w, b in zip(mlp.weights, mlp.biases)]
