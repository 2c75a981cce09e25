"""Self-attention over capsule outputs, producing the image embedding.

The score function is the scaled dot product q.k/sqrt(d); queries, keys
and values are all the same rows (single head, no learned projections
before attention).  A dense projection after attention maps the flattened
attended rows to the image-vector dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .rng import SplitMix64
from . import tensor as T
from .tensor import Parameter, Tensor


@dataclass
class AttentionConfig:
    d_img: int = 128

    def __post_init__(self):
        if self.d_img < 1:
            raise ValueError("projection dim must be >= 1")


def softmatch(q: Tensor, keys: Tensor) -> Tensor:
    """Probability distribution over keys from scaled dot-product scores."""
    q = T.as_tensor(q)
    keys = T.as_tensor(keys)
    if keys.data.ndim != 2:
        raise DomainError(f"keys must be a nonempty N x d matrix, got shape {keys.shape}")
    if q.data.ndim != 1 or q.data.shape[0] != keys.data.shape[1]:
        raise DimensionError(f"query dim {q.shape} does not match keys {keys.shape}")
    scale = 1.0 / np.sqrt(q.data.shape[0])
    scores = T.mul(T.matmul(keys, q), scale)
    return T.softmax(scores, axis=-1)


def self_attention(rows: Tensor) -> Tensor:
    """Each output row is the softmatch-weighted mixture of all input rows."""
    rows = T.as_tensor(rows)
    if rows.data.ndim != 2:
        raise DimensionError(f"self-attention expects N x d input, got shape {rows.shape}")
    d = rows.data.shape[1]
    scores = T.mul(T.matmul(rows, T.transpose(rows)), 1.0 / np.sqrt(d))
    weights = T.softmax(scores, axis=1)
    return T.matmul(weights, rows)


class ImageVectorHead:
    """Self-attention pooling plus dense projection to the image embedding."""

    def __init__(self, n_rows, d_rows, config: AttentionConfig,
                 rng: SplitMix64, name="attention"):
        self.config = config
        self.n_rows = n_rows
        self.d_rows = d_rows
        flat = n_rows * d_rows
        self.projection = Parameter(rng.normal((config.d_img, flat), np.sqrt(1.0 / flat)),
                                    f"{name}.projection")
        self.bias = Parameter(np.zeros(config.d_img), f"{name}.bias")

    def parameters(self):
        return [self.projection, self.bias]

    def forward(self, capsule_outputs: Tensor) -> Tensor:
        caps = T.as_tensor(capsule_outputs)
        if caps.data.shape != (self.n_rows, self.d_rows):
            raise DimensionError(f"expected {self.n_rows}x{self.d_rows} capsule outputs, "
                                 f"got shape {caps.shape}")
        attended = self_attention(caps)
        flat = T.reshape(attended, (self.n_rows * self.d_rows,))
        return T.add(T.matmul(self.projection.value, flat), self.bias.value)
