"""
Moebius transforms of the unit circle and their convex combinations.

For a parameter point w in the open unit disk, the circle map

    g_w(x) = (1 - |w|^2) / |x - w|^2 * (x - w) - w

is, in complex notation, z -> (z - w) / (1 - conj(w) z). Its derivative
with respect to the angle is (1 - |w|^2) / |x - w|^2.

A single kernel is anchored so that angle 0 maps to 0: F_w(t) is the lift of
arg g_w(t) - arg g_w(0) onto [0, 2*pi). A combination sum_i rho_i F_{w_i} with
rho on the simplex is again a strictly increasing bijection of [0, 2*pi) that
fixes 0, and its log-derivative is log sum_i rho_i F'_{w_i}.

Batched arrays use the layout weights (N, K), kernels (N, K, 2), theta (N,).
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceFailure, InvalidParameter
from .rotations import TWO_PI, circular_distance, wrap_angle

# Kernel radius cap used by the network constraint.
DISK_MARGIN = 1e-4
MAX_RADIUS = 1.0 - DISK_MARGIN
DEFAULT_EPS = 1e-8


def _check_disk(w):
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != 2:
        raise InvalidParameter(f"disk points need a trailing axis of length 2, got {w.shape}")
    if np.any(np.sum(w ** 2, axis=-1) >= 1.0) or not np.all(np.isfinite(w)):
        raise InvalidParameter("Moebius parameter must satisfy |w| < 1")
    return w


def mobius_point(w, theta):
    """Apply g_w to the embedded circle point (cos theta, sin theta); returns (..., 2)."""
    w = _check_disk(w)
    theta = np.asarray(theta, dtype=float)
    x = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    d = x - w
    factor = (1.0 - np.sum(w ** 2, axis=-1)) / np.sum(d ** 2, axis=-1)
    return factor[..., None] * d - w


def mobius_forward(w, theta):
    """Angle in [0, 2*pi) of g_w applied to the circle point at theta."""
    y = mobius_point(w, theta)
    return wrap_angle(np.arctan2(y[..., 1], y[..., 0]))


def mobius_log_det(w, theta):
    """log d(theta')/d(theta) = log((1 - |w|^2) / |x(theta) - w|^2)."""
    w = _check_disk(w)
    theta = np.asarray(theta, dtype=float)
    u, v = w[..., 0], w[..., 1]
    r2 = 1.0 - 2.0 * (u * np.cos(theta) + v * np.sin(theta)) + u * u + v * v
    return np.log1p(-(u * u + v * v)) - np.log(r2)


def _anchored_angle(wc, theta):
    z = np.exp(1j * theta)
    num = (z - wc) * (1.0 - np.conj(wc))
    den = (1.0 - np.conj(wc) * z) * (1.0 - wc)
    f = np.angle(num * np.conj(den))
    # the anchor is exact; rounding near theta = 0 can give -1e-17, which
    # would otherwise wrap to 2*pi
    f = np.where((theta == 0.0) | ((f < 0.0) & (f > -1e-12) & (theta < np.pi)), 0.0, f)
    return wrap_angle(f)


def anchored_forward(w, theta):
    """The single-kernel map shifted so 0 -> 0, valued in [0, 2*pi)."""
    w = _check_disk(w)
    wc = w[..., 0] + 1j * w[..., 1]
    return _anchored_angle(wc, np.asarray(theta, dtype=float))


def kernel_terms(kernels, theta, derivatives=False):
    """
    Per-kernel quantities for a batch.

    Parameters
    ----------
    kernels : (N, K, 2) array
    theta : (N,) array of angles in [0, 2*pi)
    derivatives : bool
        Also return partial derivatives needed for backpropagation.

    Returns
    -------
    dict with ``F`` (N, K) anchored kernel maps and ``dF`` (N, K) their angle
    derivatives; with ``derivatives`` also ``dF_du``, ``dF_dv`` (maps w.r.t.
    the kernel coordinates), ``ddF_du``, ``ddF_dv``, ``ddF_dt`` (derivative
    terms w.r.t. kernel coordinates and the angle).
    """
    u = kernels[..., 0]
    v = kernels[..., 1]
    theta = np.asarray(theta, dtype=float)[..., None]
    c, s = np.cos(theta), np.sin(theta)
    one_m = 1.0 - u * u - v * v
    r2 = 1.0 - 2.0 * (u * c + v * s) + u * u + v * v
    wc = u + 1j * v
    out = {"F": _anchored_angle(wc, theta), "dF": one_m / r2}
    if derivatives:
        r2_0 = (1.0 - u) ** 2 + v * v
        out["dF_du"] = 2.0 * ((s - v) / r2 + v / r2_0)
        out["dF_dv"] = 2.0 * ((1.0 - u) / r2_0 - (c - u) / r2)
        r4 = r2 * r2
        out["ddF_du"] = (2.0 * one_m * (c - u) - 2.0 * u * r2) / r4
        out["ddF_dv"] = (2.0 * one_m * (s - v) - 2.0 * v * r2) / r4
        out["ddF_dt"] = -2.0 * one_m * (u * s - v * c) / r4
    return out


def combination_forward(weights, kernels, theta):
    """sum_i rho_i F_{w_i}(theta) for batched parameters; result in [0, 2*pi)."""
    terms = kernel_terms(kernels, wrap_angle(theta))
    return np.sum(weights * terms["F"], axis=-1)


def combination_log_det(weights, kernels, theta):
    terms = kernel_terms(kernels, wrap_angle(theta))
    return np.log(np.sum(weights * terms["dF"], axis=-1))


def combination_inverse(weights, kernels, theta_prime, eps=DEFAULT_EPS, return_iterations=False):
    """
    Solve combination_forward(theta) = theta_prime by bisection.

    The map fixes 0 and sends 2*pi to 2*pi, so [0, 2*pi] always brackets the
    root. Bisection runs until every output bracket is narrower than ``eps``
    or ceil(log2(2*pi/eps)) + 2 halvings have been made, then a secant step
    inside the final bracket (and, for very steep maps, a safeguarded Newton
    polish) pins the answer.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    weights = np.asarray(weights, dtype=float)
    kernels = np.asarray(kernels, dtype=float)
    target = np.asarray(theta_prime, dtype=float)
    if not np.all(np.isfinite(target)):
        raise ConvergenceFailure("cannot bracket a non-finite target angle")
    target = wrap_angle(target)

    lo = np.zeros_like(target)
    hi = np.full_like(target, TWO_PI)
    f_lo = np.zeros_like(target)
    f_hi = np.full_like(target, TWO_PI)
    max_iter = math.ceil(math.log2(TWO_PI / eps)) + 2
    n_iter = 0
    while n_iter < max_iter and np.any(f_hi - f_lo > eps):
        mid = 0.5 * (lo + hi)
        f_mid = combination_forward(weights, kernels, mid)
        below = f_mid <= target
        lo = np.where(below, mid, lo)
        f_lo = np.where(below, f_mid, f_lo)
        hi = np.where(below, hi, mid)
        f_hi = np.where(below, f_hi, f_mid)
        n_iter += 1

    if np.any(f_lo > target) or np.any(f_hi < target):
        raise ConvergenceFailure("bracket lost: combination is not monotone")

    span = f_hi - f_lo
    frac = np.where(span > 0, (target - f_lo) / np.where(span > 0, span, 1.0), 0.5)
    theta = lo + np.clip(frac, 0.0, 1.0) * (hi - lo)

    for _ in range(3):
        terms = kernel_terms(kernels, theta)
        resid = np.sum(weights * terms["F"], axis=-1) - target
        if np.all(np.abs(resid) <= eps):
            break
        slope = np.sum(weights * terms["dF"], axis=-1)
        step = np.clip(theta - resid / slope, lo, hi)
        theta = np.where(np.abs(resid) > eps, step, theta)

    resid = circular_distance(combination_forward(weights, kernels, theta), target)
    if not np.all(resid <= eps):
        raise ConvergenceFailure(f"inverse residual {float(np.max(resid)):.3g} exceeds eps={eps:g}")
    theta = wrap_angle(theta)
    if return_iterations:
        return theta, n_iter
    return theta


@dataclass
class MobiusCombination:
    """K simplex weights and K disk points defining one circle bijection."""

    weights: np.ndarray
    kernels: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.kernels = _check_disk(np.asarray(self.kernels, dtype=float).reshape(-1, 2))
        if self.weights.shape != (self.kernels.shape[0],):
            raise InvalidParameter("need one weight per kernel")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidParameter("weights must be nonnegative and sum to 1")

    @property
    def n_kernels(self):
        return self.weights.shape[0]

    def _batched(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        n = theta.shape[0]
        return (np.broadcast_to(self.weights, (n, self.n_kernels)),
                np.broadcast_to(self.kernels, (n, self.n_kernels, 2)), theta)

    def forward(self, theta):
        out = combination_forward(*self._batched(theta))
        return out if np.ndim(theta) else float(out[0])

    def log_det(self, theta):
        out = combination_log_det(*self._batched(theta))
        return out if np.ndim(theta) else float(out[0])

    def inverse(self, theta_prime, eps=DEFAULT_EPS, return_iterations=False):
        theta, n_iter = combination_inverse(*self._batched(theta_prime), eps=eps,
                                            return_iterations=True)
        if not np.ndim(theta_prime):
            theta = float(theta[0])
        return (theta, n_iter) if return_iterations else theta
