"""
Network building blocks assembled from autodiff primitives: Glorot
initialization, ReLU MLPs and the layer-normalized LSTM cell.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from decision_tsp.autodiff import (
    ParamStore,
    Tensor,
    add,
    as_tensor,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    select,
    sigmoid,
)
from decision_tsp.exceptions import ConfigError, ShapeError

LSTM_GATES = ("input", "forget", "cell", "output")
LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class Dense:
    """One affine layer followed by an activation ('relu' or 'linear')."""

    in_features: int
    out_features: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_features <= 0 or self.out_features <= 0:
            raise ShapeError(f"layer sizes must be positive, got {self.in_features}->{self.out_features}")
        if self.activation not in ("relu", "linear"):
            raise ConfigError(f"unknown activation '{self.activation}'")


def glorot_init(shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """
    Uniform Glorot/Xavier initialization.

    Args:
        shape: Array shape; fan-in is the first dimension, fan-out the last.
        rng: Seeded random source.

    Returns:
        Array with entries uniform in +/- sqrt(6 / (fan_in + fan_out)).
    """
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def mlp_layers(in_features: int, hidden_sizes: Sequence[int], out_features: int) -> List[Dense]:
    """ReLU on every hidden layer, linear output layer."""
    sizes = [in_features, *hidden_sizes, out_features]
    last = len(sizes) - 2
    return [
        Dense(sizes[i], sizes[i + 1], "linear" if i == last else "relu")
        for i in range(len(sizes) - 1)
    ]


def add_mlp_params(store: ParamStore, prefix: str, layers: Sequence[Dense], rng: np.random.Generator) -> None:
    for i, layer in enumerate(layers):
        store.add(f"{prefix}/w{i}", glorot_init((layer.in_features, layer.out_features), rng))
        store.add(f"{prefix}/b{i}", np.zeros(layer.out_features))


def mlp_forward(x, layers: Sequence[Dense], params: ParamStore, prefix: str) -> Tensor:
    """
    Apply an MLP row-wise.

    Args:
        x: Tensor of shape (batch, in_features).
        layers: Layer specs, first to last.
        params: Store holding '{prefix}/w{i}' and '{prefix}/b{i}'.
        prefix: Parameter name prefix of this MLP.

    Returns:
        Tensor of shape (batch, out_features of the last layer).
    """
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != layers[0].in_features:
        raise ShapeError(f"{prefix}: expected input width {layers[0].in_features}, got shape {x.shape}")
    for i, layer in enumerate(layers):
        x = add(matmul(x, params[f"{prefix}/w{i}"]), params[f"{prefix}/b{i}"])
        if layer.activation == "relu":
            x = relu(x)
    return x


def add_lstm_params(store: ParamStore, prefix: str, input_size: int, hidden_size: int,
                    rng: np.random.Generator) -> None:
    """
    Register kernels, bias and per-gate layer-norm gains/biases of one cell.

    Gate blocks are ordered input, forget, cell, output. The forget gate's
    layer-norm bias starts at +1.
    """
    store.add(f"{prefix}/kernel", glorot_init((input_size, 4 * hidden_size), rng))
    store.add(f"{prefix}/recurrent_kernel", glorot_init((hidden_size, 4 * hidden_size), rng))
    store.add(f"{prefix}/bias", np.zeros(4 * hidden_size))
    store.add(f"{prefix}/ln_gain", np.ones((4, hidden_size)))
    ln_bias = np.zeros((4, hidden_size))
    ln_bias[LSTM_GATES.index("forget")] = 1.0
    store.add(f"{prefix}/ln_bias", ln_bias)


def lstm_cell(inputs, h, c, params: ParamStore, prefix: str) -> Tuple[Tensor, Tensor]:
    """
    One step of the layer-normalized LSTM with rectifier activations.

    Each gate pre-activation is normalized on its own. Input, forget and
    output gates use the logistic function; the candidate and the output
    squashing use ReLU.

    Returns:
        (h', c'), both of shape (batch, hidden).
    """
    inputs, h, c = as_tensor(inputs), as_tensor(h), as_tensor(c)
    kernel = params[f"{prefix}/kernel"]
    hidden = kernel.shape[1] // 4
    if h.shape != c.shape or h.data.ndim != 2 or h.shape[1] != hidden or inputs.shape[0] != h.shape[0]:
        raise ShapeError(f"{prefix}: state shapes {h.shape}/{c.shape} do not fit input {inputs.shape}")

    pre = add(add(matmul(inputs, kernel), matmul(h, params[f"{prefix}/recurrent_kernel"])),
              params[f"{prefix}/bias"])
    gates = layer_norm(reshape(pre, (h.shape[0], 4, hidden)),
                       params[f"{prefix}/ln_gain"], params[f"{prefix}/ln_bias"], LAYER_NORM_EPS)

    input_gate = sigmoid(select(gates, 0))
    forget_gate = sigmoid(select(gates, 1))
    candidate = relu(select(gates, 2))
    output_gate = sigmoid(select(gates, 3))

    c_next = add(mul(forget_gate, c), mul(input_gate, candidate))
    h_next = mul(output_gate, relu(c_next))
    return h_next, c_next
