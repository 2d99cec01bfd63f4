"""Dense feed-forward networks with hand-written reverse mode.

All evaluation functions accept a single input vector or a batch (rows are
samples). Parameters are plain numpy arrays held in an immutable-by-
convention ``NetParams``; training code produces new parameter arrays
through `Adam` rather than mutating shared ones.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

Array = np.ndarray

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "smooth_relu", "tanh", "identity")
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if not self.eps > 0:
            raise ValueError("smoothing parameter must be positive")


def activation_eval(kind: Activation, x):
    x = np.asarray(x, dtype=float)
    if kind.kind == "relu":
        return np.maximum(x, 0.0)
    if kind.kind == "smooth_relu":
        return 0.5 * (x + np.sqrt(x * x + kind.eps))
    if kind.kind == "tanh":
        return np.tanh(x)
    return x


def activation_derivative(kind: Activation, x, y=None):
    x = np.asarray(x, dtype=float)
    if kind.kind == "relu":
        return (x > 0.0).astype(float)
    if kind.kind == "smooth_relu":
        return 0.5 * (1.0 + x / np.sqrt(x * x + kind.eps))
    if kind.kind == "tanh":
        t = np.tanh(x) if y is None else y
        return 1.0 - t * t
    return np.ones_like(x)


@dataclass(frozen=True)
class Layer:
    weight: Array  # (out, in)
    bias: Array
    activation: Activation


@dataclass(frozen=True)
class NetParams:
    layers: tuple
    version: int = CHECKPOINT_VERSION
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ValueError("adjacent layer dimensions are incompatible")
        for ly in self.layers:
            if ly.bias.shape != (ly.weight.shape[0],):
                raise ValueError("bias length must equal layer output size")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def flat_params(self) -> list:
        out = []
        for ly in self.layers:
            out += [ly.weight, ly.bias]
        return out

    def with_params(self, params: Sequence[Array]) -> "NetParams":
        layers = tuple(replace(ly, weight=params[2 * i], bias=params[2 * i + 1])
                       for i, ly in enumerate(self.layers))
        return replace(self, layers=layers)

    def copy(self) -> "NetParams":
        return self.with_params([p.copy() for p in self.flat_params()])


def init_net(sizes: Sequence[int], hidden: Activation, rng: np.random.Generator,
             output: Activation = Activation("identity"), meta: Optional[dict] = None) -> NetParams:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        act = output if i == len(sizes) - 2 else hidden
        layers.append(Layer(W, b, act))
    return NetParams(tuple(layers), meta=dict(meta or {}))


def _as_batch(net: NetParams, x) -> tuple:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != net.input_dim:
        raise ValueError(f"input has length {X.shape[1]}, network expects {net.input_dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("network input contains non-finite entries")
    return X, single


def forward_cache(net: NetParams, X: Array):
    pre, post = [], [X]
    h = X
    for ly in net.layers:
        z = h @ ly.weight.T + ly.bias
        h = activation_eval(ly.activation, z)
        pre.append(z)
        post.append(h)
    return pre, post


def forward(net: NetParams, x) -> Array:
    X, single = _as_batch(net, x)
    h = X
    for ly in net.layers:
        h = activation_eval(ly.activation, h @ ly.weight.T + ly.bias)
    return h[0] if single else h


def backward(net: NetParams, cache, cotangent: Array, want_params: bool = True):
    """Vector-Jacobian product. Returns (param grads summed over the batch, input grads)."""
    pre, post = cache
    g = cotangent
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        ly = net.layers[i]
        g = g * activation_derivative(ly.activation, pre[i], post[i + 1])
        if want_params:
            grads[2 * i] = g.T @ post[i]
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ ly.weight
    return grads, g


def vjp(net: NetParams, x, cotangent, want_params: bool = True):
    X, single = _as_batch(net, x)
    C = np.asarray(cotangent, dtype=float)
    C = C[None, :] if C.ndim == 1 else C
    if C.shape != (X.shape[0], net.output_dim):
        raise ValueError(f"cotangent shape {C.shape} does not match output {(X.shape[0], net.output_dim)}")
    grads, gin = backward(net, forward_cache(net, X), C, want_params)
    return grads, (gin[0] if single else gin)


def param_gradients(net: NetParams, x, output_cotangent) -> list:
    """Gradient of <cotangent, net(x)> with respect to every weight and bias."""
    return vjp(net, x, output_cotangent)[0]


def input_gradient(net: NetParams, x, output_index: int) -> Array:
    if not 0 <= output_index < net.output_dim:
        raise IndexError(f"output index {output_index} out of range [0, {net.output_dim})")
    X, single = _as_batch(net, x)
    C = np.zeros((X.shape[0], net.output_dim))
    C[:, output_index] = 1.0
    gin = vjp(net, X, C, want_params=False)[1]
    return gin[0] if single else gin


def swap_activation(net: NetParams, src: str = "relu",
                    dst: Activation = Activation("smooth_relu")) -> NetParams:
    if not any(ly.activation.kind == src for ly in net.layers):
        raise ValueError(f"network contains no {src!r} layer")
    layers = tuple(replace(ly, activation=dst) if ly.activation.kind == src else ly
                   for ly in net.layers)
    return replace(net, layers=layers)


class Adam:
    """Adam over a list of parameter arrays; returns fresh arrays on each step."""

    def __init__(self, params: Sequence[Array], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[Array], grads: Sequence[Array]) -> list:
        self.t += 1
        out = []
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            upd = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            out.append(p - upd)
        return out

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

def net_to_dict(net: NetParams) -> dict:
    return {
        "version": net.version,
        "dims": [net.input_dim] + [ly.weight.shape[0] for ly in net.layers],
        "activations": [ly.activation.kind for ly in net.layers],
        "eps": [ly.activation.eps for ly in net.layers],
        "weights": [ly.weight.tolist() for ly in net.layers],
        "biases": [ly.bias.tolist() for ly in net.layers],
        "meta": net.meta,
    }


def net_from_dict(d: dict) -> NetParams:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    dims = d["dims"]
    layers = []
    for i, (kind, eps) in enumerate(zip(d["activations"], d["eps"])):
        W = np.array(d["weights"][i], dtype=float).reshape(dims[i + 1], dims[i])
        b = np.array(d["biases"][i], dtype=float).reshape(dims[i + 1])
        layers.append(Layer(W, b, Activation(kind, eps)))
    return NetParams(tuple(layers), version=d["version"], meta=dict(d.get("meta", {})))


def dumps(net: NetParams) -> str:
    # json writes floats with repr(), which round-trips doubles exactly
    return json.dumps(net_to_dict(net), sort_keys=True)


def loads(text: str) -> NetParams:
    return net_from_dict(json.loads(text))
