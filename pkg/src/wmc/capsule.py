"""Capsule layer: prediction vectors, coupling by agreement, squash.

Scalar features are reshaped into input capsules, each transformed into a
per-output-capsule prediction vector by a learned matrix.  Routing then
mixes predictions with coupling coefficients that are re-derived from
accumulated agreement logits over a fixed number of iterations, and the
mixed sum is squashed so output norms stay below one.

Gradients are not propagated through the routing fixed point: all but the
final iteration run without graph recording, and the final iteration is
unrolled with the earlier agreement vectors held constant.  The forward
value is identical to the fully iterated procedure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .rng import SplitMix64
from . import tensor as T
from .tensor import Parameter, Tensor, _op


@dataclass
class PrimaryCapsuleConfig:
    n_in: int = 32
    d_in: int = 8
    n_out: int = 16
    d_out: int = 16
    routing_iterations: int = 3

    def __post_init__(self):
        if min(self.n_in, self.d_in, self.n_out, self.d_out) <= 0:
            raise ValueError("capsule counts and dims must be positive")
        if self.routing_iterations < 1:
            raise ValueError("routing needs at least one iteration")

    @property
    def flat_in(self):
        return self.n_in * self.d_in


def squash(z: Tensor) -> Tensor:
    """Norm-shrinking nonlinearity along the last axis.

    v = (|z|^2 / (1 + |z|^2)) * z / |z|; the zero vector maps to zero
    (the limit), where the Jacobian is also zero.
    """
    z = T.as_tensor(z)
    data = z.data
    n2 = np.sum(data * data, axis=-1, keepdims=True)
    n = np.sqrt(n2)
    scale = np.where(n > 0, n / (1.0 + n2), 0.0)
    out = data * scale

    def back(g):
        # d scale/d n = (1 - n^2) / (1 + n^2)^2, applied along each row's direction
        gz = g * scale
        dscale_dn = (1.0 - n2) / (1.0 + n2) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(n > 0, np.sum(g * data, axis=-1, keepdims=True) / n, 0.0)
        return (gz + data * (radial * dscale_dn),)

    return _op(out, (z,), back)


def prediction_vectors(h: Tensor, weights: Tensor) -> Tensor:
    """Per-pair linear predictions: out[i, j] = W[i, j] @ h[i]."""
    h = T.as_tensor(h)
    w = T.as_tensor(weights)
    if w.data.ndim != 4 or h.data.ndim != 2:
        raise DimensionError(f"expected W[N_in,N_out,d_out,d_in] and h[N_in,d_in], "
                             f"got {w.shape} and {h.shape}")
    n_in, n_out, d_out, d_in = w.data.shape
    if h.data.shape != (n_in, d_in):
        raise DimensionError(f"capsule input shape {h.shape} does not match W {w.shape}")
    out = np.einsum("ijod,id->ijo", w.data, h.data)

    def back(g):
        dh = np.einsum("ijo,ijod->id", g, w.data)
        dw = np.einsum("ijo,id->ijod", g, h.data)
        return dh, dw

    return _op(out, (h, w), back)


def _couple(c: Tensor, t_hat: Tensor) -> Tensor:
    """Weighted capsule inputs: Z[j] = sum_i c[i, j] * t_hat[i, j]."""
    out = np.einsum("ij,ijo->jo", c.data, t_hat.data)

    def back(g):
        dc = np.einsum("jo,ijo->ij", g, t_hat.data)
        dt = c.data[:, :, None] * g[None, :, :]
        return dc, dt

    return _op(out, (c, t_hat), back)


def _agreement(t_hat: Tensor, v_const: np.ndarray) -> Tensor:
    """Logit increments: out[i, j] = t_hat[i, j] . v[j], with v constant."""
    out = np.einsum("ijo,jo->ij", t_hat.data, v_const)

    def back(g):
        return (g[:, :, None] * v_const[None, :, :],)

    return _op(out, (t_hat,), back)


def _squash_np(z):
    n2 = np.sum(z * z, axis=-1, keepdims=True)
    n = np.sqrt(n2)
    return z * np.where(n > 0, n / (1.0 + n2), 0.0)


def routing_agreement_history(t_hat: np.ndarray, iterations: int):
    """Agreement vectors from the first `iterations - 1` routing rounds.

    Plain-array computation (no gradients); also records the coupling
    matrix of every round for invariant checks.
    """
    n_in, n_out, _ = t_hat.shape
    b = np.zeros((n_in, n_out))
    history = []
    couplings = []
    for _ in range(iterations - 1):
        c = np.exp(b - b.max(axis=1, keepdims=True))
        c /= c.sum(axis=1, keepdims=True)
        couplings.append(c)
        z = np.einsum("ij,ijo->jo", c, t_hat)
        v = _squash_np(z)
        history.append(v)
        b = b + np.einsum("ijo,jo->ij", t_hat, v)
    return history, couplings


def dynamic_routing(t_hat: Tensor, iterations: int, agreement_history=None):
    """Route prediction vectors to output capsules.

    Runs `iterations` rounds of coupling-by-agreement and returns the
    squashed outputs of the last round.  When `agreement_history` is
    given (a list of constant agreement vectors) it replaces the no-grad
    prefix, which keeps finite differencing consistent with the analytic
    gradient.  Returns (outputs, couplings_per_iteration).
    """
    if iterations < 1:
        raise DomainError("routing needs at least one iteration")
    t_hat = T.as_tensor(t_hat)
    if t_hat.data.ndim != 3:
        raise DimensionError(f"prediction tensor must be N_in x N_out x d_out, got {t_hat.shape}")
    if agreement_history is None:
        agreement_history, couplings = routing_agreement_history(t_hat.data, iterations)
    else:
        _, couplings = routing_agreement_history(t_hat.data, iterations)

    n_in, n_out, _ = t_hat.data.shape
    b = Tensor(np.zeros((n_in, n_out)))
    for v_const in agreement_history:
        b = T.add(b, _agreement(t_hat, v_const))
    c = T.softmax(b, axis=1)
    z = _couple(c, t_hat)
    v = squash(z)
    return v, couplings + [c.data]


class CapsuleLayer:
    """Fully connected capsule layer with agreement routing."""

    def __init__(self, config: PrimaryCapsuleConfig, rng: SplitMix64, name="capsule"):
        self.config = config
        scale = np.sqrt(1.0 / config.d_in)
        self.weights = Parameter(
            rng.normal((config.n_in, config.n_out, config.d_out, config.d_in), scale),
            f"{name}.W")
        self.last_couplings = None

    def parameters(self):
        return [self.weights]

    def forward(self, features: Tensor) -> Tensor:
        """Flat feature vector -> N_out x d_out capsule outputs."""
        cfg = self.config
        feats = T.as_tensor(features)
        if feats.data.ndim == 1:
            if feats.data.size != cfg.flat_in:
                raise DimensionError(
                    f"feature length {feats.data.size} != n_in*d_in = {cfg.flat_in}")
            feats = T.reshape(feats, (cfg.n_in, cfg.d_in))
        t_hat = prediction_vectors(feats, self.weights.value)
        v, couplings = dynamic_routing(t_hat, cfg.routing_iterations)
        self.last_couplings = couplings
        return v
