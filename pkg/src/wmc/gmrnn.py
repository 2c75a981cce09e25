"""Recurrent location encoder with a MAP-ridge gate.

The cell is LSTM-like with one extra gate, m, fed by the closed-form
maximum-a-posteriori weight estimate under a zero-mean Gaussian prior on
the regression coefficients and Gaussian observation noise:

    w_hat = argmin_w  (1/2*sigma^2) * sum_k (y_k - x_k.w)^2  +  (lambda/2) * w.w
          = (A + sigma^2*lambda*I)^-1 b,   A = sum x x^T,  b = sum x*y

kept as running sufficient statistics.  Each timestep contributes the
observation (x_t, y=1), so w_hat is a prior-shrunk summary of the inputs
seen so far in the current sequence (for a one-hot input the estimate is
the indicator scaled by 1/(1 + sigma^2*lambda)).

Per step:

    f = sig(W_f x + U_f h + b_f)        i = sig(W_i x + U_i h + b_i)
    g = tanh(W_g x + U_g h + b_g)       o = sig(W_o x + U_o h + b_o)
    m = sig(W_m w_hat + U_m h + b_m)
    C = sig(f*C_prev + i*g + m)         h = tanh(C)*o

The sigmoid wrap on C keeps the cell state in (0, 1) at every step.  The
ridge solve is never differentiated: w_hat enters the m gate as a
constant.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, DimensionError, DomainError, NumericError
from .rng import SplitMix64
from . import tensor as T
from .tensor import Parameter, Tensor


class RidgeEstimator:
    """Running-sufficient-statistics ridge solver."""

    def __init__(self, dim: int, lam: float = 1.0, sigma2: float = 1.0):
        if lam <= 0:
            raise ConfigError(f"prior precision lambda must be positive, got {lam}")
        if sigma2 <= 0:
            raise ConfigError(f"noise variance sigma^2 must be positive, got {sigma2}")
        self.dim = int(dim)
        self.lam = float(lam)
        self.sigma2 = float(sigma2)
        self.A = np.zeros((dim, dim))
        self.b = np.zeros(dim)

    def reset(self):
        self.A[:] = 0.0
        self.b[:] = 0.0

    def update(self, x: np.ndarray, y: float):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionError(f"observation shape {x.shape} != ({self.dim},)")
        self.A += np.outer(x, x)
        self.b += x * float(y)

    def solve(self) -> np.ndarray:
        """Exact minimizer of the penalized objective over all observations.

        The system matrix is symmetric positive definite (PSD statistics
        plus a positive ridge), so a dense Cholesky solve applies.
        """
        lhs = self.A + (self.sigma2 * self.lam) * np.eye(self.dim)
        w = cho_solve(cho_factor(lhs, lower=True, check_finite=False),
                      self.b, check_finite=False)
        residual = np.linalg.norm(lhs @ w - self.b)
        if residual > 1e-8 * max(1.0, np.linalg.norm(self.b)):
            raise NumericError(f"ridge solve residual {residual:.3e} too large")
        return w

    def update_and_solve(self, x, y) -> np.ndarray:
        self.update(x, y)
        return self.solve()


def ridge_update_and_solve(x, y, est: RidgeEstimator) -> np.ndarray:
    return est.update_and_solve(x, y)


class GmrnnCell:
    """Gated recurrent cell; parameters shared across timesteps."""

    GATES = ("f", "i", "g", "o", "m")

    def __init__(self, input_dim: int, hidden_dim: int = 64,
                 rng: SplitMix64 | None = None, name="gmrnn",
                 input_fan_in: int | None = None):
        """`input_fan_in` overrides the init fan-in for the input weights;
        one-hot inputs activate a single column, so their effective fan-in
        is 1 regardless of the encoding width."""
        rng = rng or SplitMix64(0)
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        sx = np.sqrt(1.0 / (input_fan_in if input_fan_in else input_dim))
        sh = np.sqrt(1.0 / hidden_dim)
        self.params = {}
        for gate in self.GATES:
            self.params[f"W_{gate}"] = Parameter(rng.normal((hidden_dim, input_dim), sx),
                                                 f"{name}.W_{gate}")
            self.params[f"U_{gate}"] = Parameter(rng.normal((hidden_dim, hidden_dim), sh),
                                                 f"{name}.U_{gate}")
            self.params[f"b_{gate}"] = Parameter(np.zeros(hidden_dim), f"{name}.b_{gate}")
        self.last_gates = None

    def parameters(self):
        return [self.params[k] for gate in self.GATES for k in (f"W_{gate}", f"U_{gate}", f"b_{gate}")]

    def zero_state(self):
        h = self.hidden_dim
        return Tensor(np.zeros(h)), Tensor(np.zeros(h))

    def _gate(self, gate, x, h_prev):
        p = self.params
        pre = T.add(T.add(T.matmul(p[f"W_{gate}"].value, x),
                          T.matmul(p[f"U_{gate}"].value, h_prev)),
                    p[f"b_{gate}"].value)
        return T.tanh(pre) if gate == "g" else T.sigmoid(pre)

    def step(self, x: Tensor, c_prev: Tensor, h_prev: Tensor, w_hat: np.ndarray):
        """One update; `w_hat` is a constant input (no gradient through it)."""
        x = T.as_tensor(x)
        if x.data.shape != (self.input_dim,):
            raise DimensionError(f"cell input shape {x.shape} != ({self.input_dim},)")
        f = self._gate("f", x, h_prev)
        i = self._gate("i", x, h_prev)
        g = self._gate("g", x, h_prev)
        o = self._gate("o", x, h_prev)
        m = self._gate("m", Tensor(np.asarray(w_hat, dtype=np.float64)), h_prev)
        c = T.sigmoid(T.add(T.add(T.mul(f, c_prev), T.mul(i, g)), m))
        h = T.mul(T.tanh(c), o)
        self.last_gates = {"f": f.data, "i": i.data, "g": g.data, "o": o.data,
                           "m": m.data, "C": c.data, "h": h.data}
        return c, h


def location_vector(sequence, cell: GmrnnCell, est: RidgeEstimator) -> Tensor:
    """Run the cell over an encoded location sequence; final hidden state.

    Ridge statistics are reset at the start of each sequence, so the MAP
    summary feeding the m gate depends only on the current sample.
    """
    steps = list(sequence)
    if not steps:
        raise DomainError("location sequence is empty")
    est.reset()
    c, h = cell.zero_state()
    for x in steps:
        x = T.as_tensor(x)
        w_hat = est.update_and_solve(x.data, 1.0)
        c, h = cell.step(x, c, h, w_hat)
    return h


def one_hot(index: int, dim: int) -> np.ndarray:
    if not 0 <= index < dim:
        raise DomainError(f"one-hot index {index} out of range [0, {dim})")
    v = np.zeros(dim)
    v[index] = 1.0
    return v
