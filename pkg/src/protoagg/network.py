"""Fully-connected embedding network with SeLU activations.

Maps {0,1}-encoded binary descriptors to low-dimensional real vectors.
Forward, reverse-mode gradients and Adam updates are implemented for
this fixed topology (a chain of linear layers, SeLU after every layer
except the last) in float64 throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, FormatError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

FAMILY_FAT = "fat"
FAMILY_FUNNEL = "funnel"

MODEL_MAGIC = b"PAGG"
MODEL_VERSION = 1


def selu(t):
    """SeLU activation: lambda*t for t > 0, lambda*alpha*(e^t - 1) otherwise."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t > 0.0, SELU_LAMBDA * t, SELU_LAMBDA * SELU_ALPHA * np.expm1(t))


def selu_derivative(t):
    """Derivative of SeLU with respect to its pre-activation input."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t > 0.0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(t))


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer-width schedule for the embedding MLP.

    The 'fat' family keeps every hidden layer as wide as the input; the
    'funnel' family halves the width at each hidden layer.  The final
    layer always has output_dim units.  A three layer funnel on 512-bit
    input with a 16-dim output is (512, 256, 16); the fat counterpart
    is (512, 512, 16).
    """

    family: str
    num_layers: int
    input_dim: int
    output_dim: int = 16

    def __post_init__(self):
        if self.family not in (FAMILY_FAT, FAMILY_FUNNEL):
            raise ValueError(f"unknown architecture family: {self.family!r}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        widths = self.layer_widths()
        if any(w < self.output_dim for w in widths):
            raise ValueError(
                f"layer widths {widths} fall below output_dim {self.output_dim}; "
                "reduce num_layers or output_dim"
            )

    def layer_widths(self) -> tuple[int, ...]:
        """Output width of each layer, in order; the last is output_dim."""
        widths = []
        for layer in range(1, self.num_layers):
            if self.family == FAMILY_FAT:
                widths.append(self.input_dim)
            else:
                widths.append(self.input_dim // (2 ** (layer - 1)))
        widths.append(self.output_dim)
        return tuple(widths)


class EmbeddingNetwork:
    """MLP with per-layer weight matrices of shape (out_width, in_width)."""

    def __init__(self, arch: MlpArchitecture, weights: list[np.ndarray], biases: list[np.ndarray]):
        widths = arch.layer_widths()
        if len(weights) != len(widths) or len(biases) != len(widths):
            raise ValueError("one weight matrix and one bias vector required per layer")
        fan_in = arch.input_dim
        for layer, (w, b) in enumerate(zip(weights, biases)):
            expect = (widths[layer], fan_in)
            if w.shape != expect:
                raise ValueError(f"layer {layer} weight shape {w.shape}, expected {expect}")
            if b.shape != (widths[layer],):
                raise ValueError(f"layer {layer} bias shape {b.shape}, expected ({widths[layer]},)")
            fan_in = widths[layer]
        self.arch = arch
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def input_dim(self) -> int:
        return self.arch.input_dim

    @property
    def output_dim(self) -> int:
        return self.arch.output_dim

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays, alternating weight matrix and bias per layer."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy(self) -> "EmbeddingNetwork":
        return EmbeddingNetwork(
            self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Embed one input vector of length input_dim."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise DimensionMismatchError(f"input shape {x.shape}, expected ({self.input_dim},)")
        return self.forward_batch(x[None, :])[0]

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        """Embed a batch of rows; row i of the result equals forward(X[i])."""
        Y, _ = self._forward_trace(X, record=False)
        return Y

    def forward_batch_trace(self, X: np.ndarray):
        """Forward pass that records intermediates for a later backward pass."""
        return self._forward_trace(X, record=True)

    def _forward_trace(self, X, record):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"batch shape {X.shape}, expected (n, {self.input_dim})"
            )
        last = len(self.weights) - 1
        inputs = [X] if record else None
        preacts = [] if record else None
        a = X
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            if layer == last:
                a = z
            else:
                if record:
                    preacts.append(z)
                a = selu(z)
                if record:
                    inputs.append(a)
        trace = ForwardTrace(inputs, preacts) if record else None
        return a, trace

    def backward(self, trace: "ForwardTrace", grad_output: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter.

        grad_output is dLoss/dEmbedding for the batch recorded in the
        trace; the returned list matches parameters() order and is
        summed over the batch (any 1/N normalization belongs to the
        loss gradient itself).
        """
        if trace is None or trace.inputs is None:
            raise ValueError("backward requires the trace of a recorded forward pass")
        g = np.asarray(grad_output, dtype=np.float64)
        n_layers = len(self.weights)
        if len(trace.inputs) != n_layers:
            raise ValueError("trace does not match this network's layer count")
        expect = (trace.inputs[0].shape[0], self.output_dim)
        if g.shape != expect:
            raise DimensionMismatchError(f"grad_output shape {g.shape}, expected {expect}")
        grad_w = [None] * n_layers
        grad_b = [None] * n_layers
        delta = g
        for layer in range(n_layers - 1, -1, -1):
            a_in = trace.inputs[layer]
            grad_w[layer] = delta.T @ a_in
            grad_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer]) * selu_derivative(trace.preacts[layer - 1])
        grads = []
        for gw, gb in zip(grad_w, grad_b):
            grads.append(gw)
            grads.append(gb)
        return grads


@dataclass
class ForwardTrace:
    """Recorded per-layer inputs and hidden pre-activations of one forward pass."""

    inputs: list
    preacts: list


def init_network(arch: MlpArchitecture, seed: int) -> EmbeddingNetwork:
    """Deterministic initialization: zero-mean normal weights with
    standard deviation 1/sqrt(fan_in) (the SeLU-matched scheme), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = arch.input_dim
    for width in arch.layer_widths():
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(width, fan_in)))
        biases.append(np.zeros(width))
        fan_in = width
    return EmbeddingNetwork(arch, weights, biases)


@dataclass
class AdamState:
    """Adam accumulators; shapes mirror the parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = [np.zeros_like(p) for p in params]
    state.v = [np.zeros_like(p) for p in params]
    return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to params in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have the same number of arrays")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionMismatchError(
                f"shape mismatch in adam_step: param {p.shape}, grad {g.shape}, state {m.shape}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


_FAMILY_CODES = {FAMILY_FAT: 0, FAMILY_FUNNEL: 1}
_FAMILY_NAMES = {code: name for name, code in _FAMILY_CODES.items()}


def save_network(net: EmbeddingNetwork, path) -> None:
    """Write the model container: magic, version, architecture, then
    row-major float64 weights and biases per layer, little-endian."""
    widths = net.arch.layer_widths()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<HBHII", MODEL_VERSION, _FAMILY_CODES[net.arch.family],
                            net.arch.num_layers, net.arch.input_dim, net.arch.output_dim))
        f.write(struct.pack(f"<{len(widths)}I", *widths))
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_network(path) -> EmbeddingNetwork:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic, not a model file")
    off = 4
    try:
        version, family_code, num_layers, input_dim, output_dim = struct.unpack_from("<HBHII", data, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated model header") from exc
    off += struct.calcsize("<HBHII")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    if family_code not in _FAMILY_NAMES:
        raise FormatError(f"{path}: unknown architecture family code {family_code}")
    arch = MlpArchitecture(_FAMILY_NAMES[family_code], num_layers, input_dim, output_dim)
    widths = arch.layer_widths()
    try:
        stored = struct.unpack_from(f"<{num_layers}I", data, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated layer-width table") from exc
    off += 4 * num_layers
    if tuple(stored) != widths:
        raise FormatError(f"{path}: stored widths {stored} disagree with architecture {widths}")
    weights, biases = [], []
    fan_in = input_dim
    for width in widths:
        need = 8 * (width * fan_in + width)
        if off + need > len(data):
            raise FormatError(f"{path}: truncated parameter data")
        w = np.frombuffer(data, dtype="<f8", count=width * fan_in, offset=off)
        off += 8 * width * fan_in
        b = np.frombuffer(data, dtype="<f8", count=width, offset=off)
        off += 8 * width
        weights.append(w.reshape(width, fan_in).astype(np.float64))
        biases.append(b.astype(np.float64))
        fan_in = width
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes after parameters")
    return EmbeddingNetwork(arch, weights, biases)
