"""
Conditioner network, parameter constraints and the Adam optimizer.

The conditioner is a small tanh MLP with hand-written backpropagation. Its
3K outputs are split into K weight logits and K raw disk coordinates, then
mapped onto valid Moebius-combination parameters:

    weights = softmax(logits)
    w       = r * tanh(|raw|) / |raw| * raw,   r = 1 - 1e-4
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatch, StateMismatch
from .mobius import MAX_RADIUS, MobiusCombination

DEFAULT_HIDDEN = (64, 64)


class ConditionerNet:
    """
    Feed-forward network ``features -> 3K`` raw Moebius parameters.

    Parameters
    ----------
    n_inputs : int
    n_kernels : int
    hidden : tuple of int
        Hidden layer widths.
    rng : numpy Generator, optional
        Used for the hidden-layer initialisation.
    zero_last : bool
        Zero the disk-coordinate outputs so the induced circle map is the
        identity. The logit outputs stay random to break kernel symmetry.
    """

    def __init__(self, n_inputs, n_kernels, hidden=DEFAULT_HIDDEN, rng=None, zero_last=True):
        rng = np.random.default_rng() if rng is None else rng
        self.n_inputs = int(n_inputs)
        self.n_kernels = int(n_kernels)
        self.widths = (self.n_inputs, *[int(h) for h in hidden], 3 * self.n_kernels)
        self.params = []
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            if zero_last and i == len(self.widths) - 2:
                # kernels start at the origin, so any weights give the identity;
                # random logit columns keep the K kernels from moving in lockstep
                W[:, self.n_kernels:] = 0.0
            self.params += [W, np.zeros(fan_out)]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def forward(self, features):
        """Return raw outputs (N, 3K) and the activation cache for backward()."""
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ShapeMismatch(f"expected features of shape (N, {self.n_inputs}), got {x.shape}")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < self.n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, cache, g_out):
        """
        Backpropagate ``g_out`` = dL/d(raw outputs).

        Returns (parameter gradients in ``params`` order, dL/d(features)).
        """
        if cache is None or len(cache) != self.n_layers + 1:
            raise StateMismatch("backward() needs the cache returned by forward()")
        g = np.asarray(g_out, dtype=float)
        if g.shape != cache[-1].shape:
            raise StateMismatch(f"upstream gradient shape {g.shape} != output shape {cache[-1].shape}")
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (1.0 - cache[i + 1] ** 2)
            grads[2 * i] = cache[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def combination(self, features):
        """Constrained Moebius parameters for a single feature vector."""
        raw, _ = self.forward(np.atleast_2d(features))
        weights, kernels, _ = constrain(raw, self.n_kernels)
        return MobiusCombination(weights[0], kernels[0])

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != sum(p.size for p in self.params):
            raise ShapeMismatch("flat parameter vector has the wrong length")
        offset = 0
        for p in self.params:
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size


def constrain(raw, n_kernels, radius=MAX_RADIUS):
    """
    Map raw network outputs (N, 3K) to simplex weights (N, K) and disk points (N, K, 2).

    Also returns a cache for constrain_backward().
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != 3 * n_kernels:
        raise ShapeMismatch(f"expected {3 * n_kernels} raw outputs, got {raw.shape[-1]}")
    logits = raw[:, :n_kernels]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    weights = e / e.sum(axis=1, keepdims=True)

    pts = raw[:, n_kernels:].reshape(-1, n_kernels, 2)
    n = np.sqrt(np.sum(pts ** 2, axis=-1))
    small = n < 1e-6
    n_safe = np.where(small, 1.0, n)
    t = np.tanh(n_safe)
    scale = np.where(small, radius * (1.0 - n * n / 3.0), radius * t / n_safe)
    # d(scale)/dn divided by n
    dscale_over_n = np.where(small, -2.0 * radius / 3.0,
                             radius * (n_safe * (1.0 - t * t) - t) / n_safe ** 3)
    kernels = scale[..., None] * pts
    return weights, kernels, (weights, pts, scale, dscale_over_n)


def constrain_backward(cache, g_weights, g_kernels):
    """Gradient of the loss w.r.t. raw outputs given gradients w.r.t. weights and kernels."""
    weights, pts, scale, dscale_over_n = cache
    g_logits = weights * (g_weights - np.sum(weights * g_weights, axis=1, keepdims=True))
    proj = np.sum(pts * g_kernels, axis=-1, keepdims=True)
    g_pts = scale[..., None] * g_kernels + dscale_over_n[..., None] * pts * proj
    return np.concatenate([g_logits, g_pts.reshape(g_pts.shape[0], -1)], axis=1)


@dataclass
class Adam:
    """Adam with bias correction. Moments are allocated lazily on the first update."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def update(self, params, grads):
        """Apply one in-place update to ``params``; returns ``params``."""
        if len(params) != len(grads):
            raise ShapeMismatch("params and grads differ in length")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        for p, g, m in zip(params, grads, self.m):
            if p.shape != g.shape or p.shape != m.shape:
                raise ShapeMismatch(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "step": self.step}
