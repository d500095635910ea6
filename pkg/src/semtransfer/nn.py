"""Small dense-network toolkit: MLPs with hand-written backprop and Adam.

Inputs are batched row-wise (``(batch, in_dim)``); a 1-D vector is treated as
a batch of one and returned as a vector.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")

MODEL_MAGIC = b"SEMNET\x00\x01"
MODEL_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite during training."""


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("DenseNet needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def dtype(self):
        return self.layers[0].W.dtype

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...), by reference."""
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)


def init_dense(sizes: list[int], activations: list[str], rng: np.random.Generator,
               dtype=np.float64) -> DenseNet:
    """Xavier-uniform weights, zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        layers.append(Layer(W, np.zeros(fan_out, dtype=dtype), act))
    return DenseNet(layers)


def mlp(in_dim: int, hidden: list[int], out_dim: int, rng: np.random.Generator,
        hidden_activation: str = "tanh", out_activation: str = "identity",
        dtype=np.float64) -> DenseNet:
    sizes = [in_dim, *hidden, out_dim]
    acts = [hidden_activation] * len(hidden) + [out_activation]
    return init_dense(sizes, acts, rng, dtype)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0)
    return z


def _act_grad(name: str, z: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return g * (1 - y * y)
    if name == "relu":
        return g * (z > 0)
    return g


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.input_dim:
        raise ValueError(f"expected input with {net.input_dim} features, got shape {x.shape}")
    return x2.astype(net.dtype, copy=False), single


def forward(net: DenseNet, x) -> np.ndarray:
    x2, single = _as_batch(net, x)
    h = x2
    for layer in net.layers:
        h = _act(layer.activation, h @ layer.W + layer.b)
    return h[0] if single else h


def forward_cached(net: DenseNet, x) -> tuple[np.ndarray, list]:
    """Forward pass that also returns what :func:`backward_cached` needs."""
    x2, _ = _as_batch(net, x)
    cache = []
    h = x2
    for layer in net.layers:
        z = h @ layer.W + layer.b
        y = _act(layer.activation, z)
        cache.append((h, z, y))
        h = y
    return h, cache


def backward_cached(net: DenseNet, cache: list, upstream: np.ndarray,
                    need_input_grad: bool = True) -> tuple[list[np.ndarray], np.ndarray | None]:
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    g = upstream
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        h, z, y = cache[k]
        g = _act_grad(layer.activation, z, y, g)
        grads[2 * k] = h.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0 or need_input_grad:
            g = g @ layer.W.T
        else:
            g = None
    return grads, g


def backward(net: DenseNet, x, upstream_grad) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum(upstream_grad * forward(net, x))``.

    Returns parameter gradients (same order as :meth:`DenseNet.params`) and the
    gradient with respect to ``x``.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    up = np.asarray(upstream_grad, dtype=net.dtype)
    up = up[None, :] if single else up
    out, cache = forward_cached(net, x)
    if up.shape != out.shape:
        raise ValueError(f"upstream gradient shape {up.shape} != output shape {out.shape}")
    grads, gx = backward_cached(net, cache, up)
    return grads, (gx[0] if single else gx)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over rows of the squared L2 norm, and its gradient."""
    diff = pred - target
    n = diff.shape[0]
    loss = float(np.sum(diff * diff) / n)
    return loss, 2.0 * diff / n


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place update of ``params``."""
        if len(params) != len(grads):
            raise ValueError("params/grads length mismatch")
        for p, g in zip(params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not _all_finite(g.reshape(-1)):
                raise NonFiniteError("non-finite gradient; aborting training")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        step_size = self.lr / (1 - self.beta1 ** t)
        inv_sqrt_c2 = 1.0 / np.sqrt(1 - self.beta2 ** t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            _adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=p.dtype).reshape(-1),
                         m.reshape(-1), v.reshape(-1), self.beta1, self.beta2,
                         step_size, inv_sqrt_c2, self.eps)


@numba.njit(cache=True)
def _all_finite(g):
    for i in range(g.size):
        if not np.isfinite(g[i]):
            return False
    return True


@numba.njit(cache=True)
def _adam_update(p, g, m, v, beta1, beta2, step_size, inv_sqrt_c2, eps):
    # p -= lr * m_hat / (sqrt(v_hat) + eps), fused into one pass
    for i in range(p.size):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= step_size * m[i] / (np.sqrt(v[i]) * inv_sqrt_c2 + eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: Adam) -> Adam:
    state.step(params, grads)
    return state


# -- persistence ---------------------------------------------------------------

def _net_header(net: DenseNet) -> list[dict]:
    return [{"shape": list(l.W.shape), "activation": l.activation} for l in net.layers]


def save_nets(path, nets: dict[str, DenseNet], meta: dict | None = None) -> None:
    """Write named nets as ``magic | u64 header_len | JSON header | float64 LE``."""
    header = {
        "version": MODEL_VERSION,
        "dtype": {name: np.dtype(net.dtype).name for name, net in nets.items()},
        "nets": {name: _net_header(net) for name, net in nets.items()},
        "order": list(nets),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    flat = [p.astype("<f8").ravel() for name in nets for p in nets[name].params()]
    data = np.concatenate(flat) if flat else np.zeros(0, "<f8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes())


def load_nets(path) -> tuple[dict[str, DenseNet], dict]:
    raw = Path(path).read_bytes()
    if raw[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic/version)")
    off = len(MODEL_MAGIC)
    (hlen,) = struct.unpack("<Q", raw[off:off + 8])
    off += 8
    header = json.loads(raw[off:off + hlen])
    if header.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {header.get('version')}")
    off += hlen
    data = np.frombuffer(raw, dtype="<f8", offset=off)
    nets, pos = {}, 0
    for name in header["order"]:
        dtype = np.dtype(header["dtype"][name])
        layers = []
        for spec in header["nets"][name]:
            n_in, n_out = spec["shape"]
            W = data[pos:pos + n_in * n_out].reshape(n_in, n_out).astype(dtype)
            pos += n_in * n_out
            b = data[pos:pos + n_out].astype(dtype)
            pos += n_out
            layers.append(Layer(W, b, spec["activation"]))
        nets[name] = DenseNet(layers)
    if pos != data.size:
        raise ValueError(f"{path}: parameter block size mismatch ({data.size} vs {pos})")
    return nets, header["meta"]
