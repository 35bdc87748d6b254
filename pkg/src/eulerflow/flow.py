"""
Coupling flow on the torus of Euler angles.

Layer ``i`` transforms angle ``i % 3`` (omega, phi, kappa, omega, ...) with a
Moebius combination whose parameters come from a conditioner reading
(cos a, sin a, cos b, sin b) of the two other angles, optionally followed by
a context vector. The forward direction maps data to the base (uniform on
[0, 2*pi)^3); sampling runs the layers backwards through the bisection
inverse.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .exceptions import ShapeMismatch
from .mobius import combination_inverse, kernel_terms
from .neural import DEFAULT_HIDDEN, ConditionerNet, constrain, constrain_backward
from .rotations import (TWO_PI, euler_to_rotmat, log_haar_volume_factor, other_preimage,
                        rotmat_to_euler, wrap_angle)

TORUS = "torus"
HAAR = "haar"
MODES = (TORUS, HAAR)

LOG_BASE_DENSITY = -3.0 * np.log(TWO_PI)
SAMPLE_EPS = 1e-9
_CHUNK = 1 << 15


def _other_indices(index):
    return tuple(j for j in range(3) if j != index)


class CouplingLayer:
    """One coupling step transforming the angle at ``index``."""

    def __init__(self, index, n_kernels, context_width=0, hidden=DEFAULT_HIDDEN, rng=None,
                 zero_last=True):
        self.index = int(index)
        self.conditioner_indices = _other_indices(self.index)
        self.n_kernels = int(n_kernels)
        self.context_width = int(context_width)
        self.net = ConditionerNet(4 + self.context_width, n_kernels, hidden, rng=rng,
                                  zero_last=zero_last)

    def features(self, euler, context=None):
        a, b = self.conditioner_indices
        cols = [np.cos(euler[:, a]), np.sin(euler[:, a]), np.cos(euler[:, b]), np.sin(euler[:, b])]
        feats = np.stack(cols, axis=1)
        if self.context_width:
            feats = np.concatenate([feats, context], axis=1)
        return feats

    def parameters(self, features):
        raw, net_cache = self.net.forward(features)
        weights, kernels, c_cache = constrain(raw, self.n_kernels)
        return weights, kernels, (net_cache, c_cache)

    def forward(self, euler, context=None, keep_cache=False):
        """Return (transformed angles, log-derivative[, cache])."""
        feats = self.features(euler, context)
        weights, kernels, caches = self.parameters(feats)
        theta = euler[:, self.index]
        terms = kernel_terms(kernels, theta, derivatives=keep_cache)
        out = euler.copy()
        out[:, self.index] = wrap_angle(np.sum(weights * terms["F"], axis=1))
        slope = np.sum(weights * terms["dF"], axis=1)
        log_det = np.log(slope)
        if not keep_cache:
            return out, log_det
        cache = {"euler": euler, "weights": weights, "terms": terms, "slope": slope,
                 "net": caches[0], "constrain": caches[1]}
        return out, log_det, cache

    def inverse(self, euler_out, context=None, eps=SAMPLE_EPS):
        feats = self.features(euler_out, context)
        weights, kernels, _ = self.parameters(feats)
        out = euler_out.copy()
        out[:, self.index] = combination_inverse(weights, kernels, euler_out[:, self.index], eps=eps)
        return out

    def backward(self, cache, g_out, g_log_det):
        """
        Gradients for one layer.

        ``g_out`` is dL/d(output angles) (N, 3), ``g_log_det`` is dL/d(log_det) (N,).
        Returns (parameter gradients, dL/d(input angles)).
        """
        t = self.index
        a, b = self.conditioner_indices
        w = cache["weights"]
        terms = cache["terms"]
        slope = cache["slope"]
        g_theta = g_out[:, t][:, None]
        g_ld = (g_log_det / slope)[:, None]

        g_weights = g_theta * terms["F"] + g_ld * terms["dF"]
        g_u = w * (g_theta * terms["dF_du"] + g_ld * terms["ddF_du"])
        g_v = w * (g_theta * terms["dF_dv"] + g_ld * terms["ddF_dv"])
        g_raw = constrain_backward(cache["constrain"], g_weights, np.stack([g_u, g_v], axis=-1))
        grads, g_feat = self.net.backward(cache["net"], g_raw)

        euler = cache["euler"]
        g_in = g_out.copy()
        g_in[:, t] = g_out[:, t] * slope + g_log_det * np.sum(w * terms["ddF_dt"], axis=1) / slope
        g_in[:, a] += -np.sin(euler[:, a]) * g_feat[:, 0] + np.cos(euler[:, a]) * g_feat[:, 1]
        g_in[:, b] += -np.sin(euler[:, b]) * g_feat[:, 2] + np.cos(euler[:, b]) * g_feat[:, 3]
        return grads, g_in


class FlowModel:
    """
    Stack of coupling layers over a uniform base on the torus.

    Parameters
    ----------
    n_layers, n_kernels : int
    context_width : int
        Width of the conditioning vector; 0 for an unconditional model.
    hidden : tuple of int
        Hidden widths of every conditioner.
    seed : int or None
        Seeds the hidden-layer initialisation.
    zero_init : bool
        Zero the last conditioner layer so the flow starts as the identity.
    """

    base = "uniform-torus"

    def __init__(self, n_layers=24, n_kernels=64, context_width=0, hidden=DEFAULT_HIDDEN,
                 seed=None, zero_init=True):
        rng = np.random.default_rng(seed)
        self.n_layers = int(n_layers)
        self.n_kernels = int(n_kernels)
        self.context_width = int(context_width)
        self.hidden = tuple(int(h) for h in hidden)
        self.layers = [CouplingLayer(i % 3, n_kernels, context_width, self.hidden, rng=rng,
                                     zero_last=zero_init)
                       for i in range(self.n_layers)]

    def config(self):
        return {"n_layers": self.n_layers, "n_kernels": self.n_kernels,
                "context_width": self.context_width, "hidden": list(self.hidden),
                "base": self.base}

    def parameters(self):
        return [p for layer in self.layers for p in layer.net.params]

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def randomize(self, rng, scale=0.5):
        """Draw every weight at random (including the last layers); useful for tests."""
        for layer in self.layers:
            for p in layer.net.params:
                fan_in = p.shape[0] if p.ndim == 2 else 1
                p[...] = rng.normal(0.0, scale / np.sqrt(fan_in), size=p.shape)
        return self

    # -- input handling -------------------------------------------------

    def _context(self, context, n):
        if self.context_width == 0:
            if context is not None and np.size(context) > 0:
                raise ShapeMismatch("unconditional model got a context vector")
            return None
        if context is None:
            raise ShapeMismatch(f"conditional model needs a context of width {self.context_width}")
        ctx = np.asarray(context, dtype=float)
        if ctx.ndim == 1:
            ctx = np.broadcast_to(ctx, (n, ctx.shape[0]))
        if ctx.shape != (n, self.context_width):
            raise ShapeMismatch(f"context shape {ctx.shape} != ({n}, {self.context_width})")
        return ctx

    @staticmethod
    def _euler(euler):
        euler = np.asarray(euler, dtype=float)
        if euler.ndim != 2 or euler.shape[1] != 3:
            raise ShapeMismatch(f"expected Euler angles of shape (N, 3), got {euler.shape}")
        return wrap_angle(euler)

    # -- density --------------------------------------------------------

    def forward(self, euler, context=None):
        """Normalizing direction: returns base-space points and summed log-derivatives."""
        x = self._euler(euler)
        ctx = self._context(context, x.shape[0])
        log_det = np.zeros(x.shape[0])
        for layer in self.layers:
            x, ld = layer.forward(x, ctx)
            log_det += ld
        return x, log_det

    def inverse(self, z, context=None, eps=SAMPLE_EPS):
        x = self._euler(z)
        ctx = self._context(context, x.shape[0])
        for layer in reversed(self.layers):
            x = layer.inverse(x, ctx, eps=eps)
        return x

    def _log_prob_torus(self, euler, context):
        out = np.empty(euler.shape[0])
        ctx = self._context(context, euler.shape[0])
        for start in range(0, euler.shape[0], _CHUNK):
            sl = slice(start, start + _CHUNK)
            _, ld = self.forward(euler[sl], None if ctx is None else ctx[sl])
            out[sl] = LOG_BASE_DENSITY + ld
        return out

    def log_prob(self, euler, context=None, mode=TORUS):
        """
        Log-density of Euler-angle points, in nats.

        ``mode="torus"`` is the density w.r.t. d(omega) d(phi) d(kappa).
        ``mode="haar"`` is the density of the induced rotation w.r.t. the
        normalised Haar measure: both Euler preimages are summed and the
        |cos phi| / (8 pi^2) volume factor is divided out.
        """
        x = self._euler(euler)
        lp = self._log_prob_torus(x, context)
        if mode == TORUS:
            return lp
        if mode != HAAR:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        lp2 = self._log_prob_torus(other_preimage(x), context)
        return np.logaddexp(lp, lp2) - log_haar_volume_factor(x)

    def log_prob_rotations(self, R, context=None, mode=TORUS):
        return self.log_prob(rotmat_to_euler(R), context, mode)

    # -- sampling -------------------------------------------------------

    def sample_euler(self, n, context=None, rng=None, eps=SAMPLE_EPS):
        if n < 1:
            raise ValueError("n must be at least 1")
        rng = np.random.default_rng(rng)
        z = rng.uniform(0.0, TWO_PI, size=(n, 3))
        ctx = self._context(context, n)
        out = np.empty_like(z)
        for start in range(0, n, _CHUNK):
            sl = slice(start, start + _CHUNK)
            out[sl] = self.inverse(z[sl], None if ctx is None else ctx[sl], eps=eps)
        return out

    def sample(self, n, context=None, rng=None, eps=SAMPLE_EPS):
        """Draw ``n`` rotation matrices (n, 3, 3)."""
        return euler_to_rotmat(self.sample_euler(n, context, rng, eps))

    def predict_mode(self, context=None, n_candidates=512, rng=None, mode=TORUS):
        """Highest-density rotation among ``n_candidates`` samples."""
        if n_candidates < 1:
            raise ValueError("n_candidates must be at least 1")
        cand = self.sample_euler(n_candidates, context, rng)
        lp = self.log_prob(cand, context, mode=mode)
        return euler_to_rotmat(cand[int(np.argmax(lp))])

    # -- training objective ---------------------------------------------

    def _loss_and_grad_sum(self, x, ctx):
        """Summed negative log-likelihood of a shard and its summed gradients."""
        caches = []
        log_det = np.zeros(x.shape[0])
        for layer in self.layers:
            x, ld, cache = layer.forward(x, ctx, keep_cache=True)
            log_det += ld
            caches.append(cache)
        loss_sum = -np.sum(LOG_BASE_DENSITY + log_det)

        g_angles = np.zeros_like(x)
        g_ld = np.full(x.shape[0], -1.0)
        grads = [None] * self.n_layers
        for i in reversed(range(self.n_layers)):
            grads[i], g_angles = self.layers[i].backward(caches[i], g_angles, g_ld)
        return loss_sum, [g for layer_grads in grads for g in layer_grads]

    def nll_and_grad(self, euler, context=None, threads=1):
        """
        Mean negative log-likelihood (torus mode) and its gradient.

        Gradients are returned in ``parameters()`` order. With ``threads > 1``
        the batch is split into contiguous shards whose gradients are summed
        in shard order, so the result only depends on the thread count.
        """
        x = self._euler(euler)
        n = x.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        ctx = self._context(context, n)
        threads = max(1, min(int(threads), n))
        if threads == 1:
            loss, grads = self._loss_and_grad_sum(x, ctx)
        else:
            bounds = np.linspace(0, n, threads + 1).astype(int)
            shards = [(x[lo:hi], None if ctx is None else ctx[lo:hi])
                      for lo, hi in zip(bounds[:-1], bounds[1:])]
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(lambda s: self._loss_and_grad_sum(*s), shards))
            loss = 0.0
            grads = [np.zeros_like(p) for p in self.parameters()]
            for shard_loss, shard_grads in results:
                loss += shard_loss
                for g, sg in zip(grads, shard_grads):
                    g += sg
        return loss / n, [g / n for g in grads]
