"""Finite-difference verification suite, runnable per module.

Each named check builds a small seeded fixture, runs the analytic
backward pass, and compares against central differences.  The CLI treats
any relative error above the tolerance as a failure.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionConfig, ImageVectorHead
from .capsule import CapsuleLayer, PrimaryCapsuleConfig, dynamic_routing, prediction_vectors, routing_agreement_history
from .errors import ConfigError
from .gmrnn import GmrnnCell
from .model import cross_entropy, fuse
from .rng import SplitMix64
from .sepconv import FeatureExtractor, FeatureExtractorConfig
from . import tensor as T
from .tensor import Parameter, Tensor, gradcheck

TOLERANCE = 1e-4


def check_tensor_ops(seed=0):
    rng = SplitMix64(seed)
    a = Parameter(rng.normal((3, 4)), "a")
    b = Parameter(rng.normal((4, 2)), "b")

    def f():
        y = T.softmax(T.tanh(T.matmul(a.value, b.value)), axis=1)
        z = T.mul(T.sigmoid(y), T.relu(T.add(y, 0.3)))
        return T.tsum(T.mul(z, z))

    return gradcheck(f, [a, b])


def check_sepconv(seed=0):
    rng = SplitMix64(seed + 100)
    cfg = FeatureExtractorConfig(in_channels=2, channels=[3, 4], input_size=8)
    ext = FeatureExtractor(cfg, rng)
    x = Tensor(rng.uniform((2, 8, 8)))

    def f():
        y = ext.forward(x)
        return T.tsum(T.mul(y, y))

    return gradcheck(f, ext.parameters())


def check_capsule(seed=0):
    rng = SplitMix64(seed + 200)
    cfg = PrimaryCapsuleConfig(n_in=4, d_in=8, n_out=2, d_out=3, routing_iterations=3)
    layer = CapsuleLayer(cfg, rng)
    h = Parameter(rng.normal((4, 8)), "h")
    t0 = prediction_vectors(h.value, layer.weights.value)
    history, _ = routing_agreement_history(t0.data, cfg.routing_iterations)

    def f():
        t_hat = prediction_vectors(h.value, layer.weights.value)
        v, _ = dynamic_routing(t_hat, cfg.routing_iterations, agreement_history=history)
        return T.tsum(T.mul(v, v))

    return gradcheck(f, [layer.weights, h])


def check_attention(seed=0):
    rng = SplitMix64(seed + 300)
    head = ImageVectorHead(3, 4, AttentionConfig(d_img=5), rng)
    caps = Parameter(rng.normal((3, 4)), "caps")

    def f():
        out = head.forward(caps.value)
        return T.tsum(T.mul(out, out))

    return gradcheck(f, [caps] + head.parameters())


def check_gmrnn(seed=0):
    rng = SplitMix64(seed + 400)
    cell = GmrnnCell(3, 4, rng)
    xs = [Tensor(rng.normal((3,))) for _ in range(3)]
    w_hats = [rng.normal((3,)) for _ in range(3)]  # frozen MAP inputs

    def f():
        c, h = cell.zero_state()
        for x, w_hat in zip(xs, w_hats):
            c, h = cell.step(x, c, h, w_hat)
        return T.tsum(T.mul(h, h))

    return gradcheck(f, cell.parameters())


def check_fusion_head(seed=0):
    rng = SplitMix64(seed + 500)
    img = Parameter(rng.normal((6,)), "img")
    loc = Parameter(rng.normal((5,)), "loc")
    w1 = Parameter(rng.normal((7, 11), 0.3), "w1")
    b1 = Parameter(np.zeros(7), "b1")
    w2 = Parameter(rng.normal((3, 7), 0.3), "w2")
    b2 = Parameter(np.zeros(3), "b2")

    def f():
        x = fuse(img.value, loc.value)
        x = T.relu(T.add(T.matmul(w1.value, x), b1.value))
        logits = T.add(T.matmul(w2.value, x), b2.value)
        return cross_entropy(logits, 1)

    return gradcheck(f, [img, loc, w1, b1, w2, b2])


CHECKS = {
    "tensor": check_tensor_ops,
    "sepconv": check_sepconv,
    "capsule": check_capsule,
    "attention": check_attention,
    "gmrnn": check_gmrnn,
    "model": check_fusion_head,
}


def run(scope="all", seed=0):
    """Run the selected checks; returns {name: max_relative_error}."""
    if scope == "all":
        names = list(CHECKS)
    elif scope in CHECKS:
        names = [scope]
    else:
        raise ConfigError(f"unknown gradcheck scope {scope!r}; "
                          f"valid: all, {', '.join(CHECKS)}")
    return {name: CHECKS[name](seed) for name in names}
