"""Dense feed-forward networks with hand-written reverse-mode gradients.

All weights and biases of a network live in one flat float64 vector
(``MlpParams.theta``); per-layer matrices are views into it, which keeps
soft target updates, optimizer steps and checkpoints one-liners.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError, SchemaError

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("an MLP needs >= 2 layers of positive size")
        if self.hidden_activation != "relu":
            raise ValueError("hidden activation must be relu")
        if self.output_activation not in ("tanh", "linear"):
            raise ValueError("output activation must be tanh or linear")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def num_params(self):
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]


class MlpParams:
    def __init__(self, spec: MlpSpec, theta=None):
        self.spec = spec
        self.theta = np.zeros(spec.num_params) if theta is None else np.array(theta, dtype=np.float64)
        if self.theta.shape != (spec.num_params,):
            raise DimensionError(f"expected {spec.num_params} parameters, got {self.theta.shape}")
        self.grad = None
        self.layers = _views(spec, self.theta)

    def copy(self):
        return MlpParams(self.spec, self.theta.copy())

    def zero_grad(self):
        self.grad = np.zeros_like(self.theta)
        return self.grad


def _views(spec, flat):
    out, off = [], 0
    s = spec.layer_sizes
    for i in range(len(s) - 1):
        w = flat[off:off + s[i] * s[i + 1]].reshape(s[i + 1], s[i])
        off += s[i] * s[i + 1]
        b = flat[off:off + s[i + 1]]
        off += s[i + 1]
        out.append((w, b))
    return out


def init(spec: MlpSpec, rng) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    p = MlpParams(spec)
    for w, b in p.layers:
        fan_out, fan_in = w.shape
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-lim, lim, size=w.shape)
        b[...] = 0.0
    return p


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != params.spec.in_dim:
        raise DimensionError(f"input has shape {x.shape}, network expects {params.spec.in_dim} features")
    return xb, single


def forward(params: MlpParams, x, return_cache=False):
    xb, single = _as_batch(params, x)
    acts = [xb]
    pre = []
    h = xb
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w.T + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif params.spec.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
        acts.append(h)
    y = h[0] if single else h
    if return_cache:
        return y, (acts, pre)
    return y


def backward(params: MlpParams, x, output_grad, cache=None):
    """Gradients of sum(output * output_grad) w.r.t. the flat params and the input.

    Batched inputs sum parameter gradients over the batch; scale
    ``output_grad`` for a mean.
    """
    xb, single = _as_batch(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (len(xb), params.spec.out_dim):
        raise DimensionError(f"output_grad shape {np.shape(output_grad)} does not match network output")
    if cache is None:
        _, cache = forward(params, xb, return_cache=True)
    acts, pre = cache

    grad = np.zeros_like(params.theta)
    gviews = _views(params.spec, grad)
    last = len(params.layers) - 1
    if params.spec.output_activation == "tanh":
        g = g * (1.0 - acts[-1] ** 2)
    for i in range(last, -1, -1):
        w, _ = params.layers[i]
        gw, gb = gviews[i]
        gw[...] = g.T @ acts[i]
        gb[...] = g.sum(axis=0)
        g = g @ w
        if i > 0:
            g = g * (pre[i - 1] > 0)
    return grad, (g[0] if single else g)


def sgd_step(params: MlpParams, grads, lr):
    params.theta -= lr * grads
    return params


class AdamState:
    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_step(params: MlpParams, grads, moments: AdamState, lr):
    s = moments
    s.t += 1
    s.m = s.beta1 * s.m + (1 - s.beta1) * grads
    s.v = s.beta2 * s.v + (1 - s.beta2) * grads * grads
    m_hat = s.m / (1 - s.beta1 ** s.t)
    v_hat = s.v / (1 - s.beta2 ** s.t)
    params.theta -= lr * m_hat / (np.sqrt(v_hat) + s.eps)
    return params


class Optimizer:
    """Binds a parameter vector to sgd or adam so callers just pass gradients."""

    def __init__(self, params: MlpParams, kind="adam", lr=1e-3):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params, self.kind, self.lr = params, kind, lr
        self.state = AdamState(params.theta.size) if kind == "adam" else None

    def step(self, grads):
        if self.kind == "adam":
            return adam_step(self.params, grads, self.state, self.lr)
        return sgd_step(self.params, grads, self.lr)


def soft_update(online: MlpParams, target: MlpParams, tau):
    """target <- tau * online + (1 - tau) * target, in place."""
    if online.spec != target.spec:
        raise DimensionError(f"soft update between different architectures: {online.spec} vs {target.spec}")
    target.theta *= 1.0 - tau
    target.theta += tau * online.theta
    return target


# --- checkpoints -------------------------------------------------------------
# file: magic | u32 version | u32 count, then per network:
#   u32 name_len | name utf-8 | u32 n_layers | u64[n_layers] sizes
#   u8 hidden | u8 output | u64 n_params | f64[n_params]

_MAGIC = b"MLPCKPT\x00"
_VERSION = 1


def save_checkpoint(path, networks: dict, meta: dict | None = None):
    """Write named networks (and optional scalar metadata as a JSON block)."""
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<8sII", _MAGIC, _VERSION, len(networks)))
        f.write(struct.pack("<I", len(blob)) + blob)
        for name, p in networks.items():
            nb = name.encode()
            sizes = p.spec.layer_sizes
            f.write(struct.pack("<I", len(nb)) + nb)
            f.write(struct.pack("<I", len(sizes)) + struct.pack(f"<{len(sizes)}Q", *sizes))
            f.write(struct.pack("<BBQ", ACTIVATIONS.index(p.spec.hidden_activation),
                                ACTIVATIONS.index(p.spec.output_activation), p.theta.size))
            f.write(p.theta.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(networks, meta)``."""
    buf = Path(path).read_bytes()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise ParseError("truncated checkpoint", off)
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    def take_bytes(n):
        nonlocal off
        if off + n > len(buf):
            raise ParseError("truncated checkpoint", off)
        out = buf[off:off + n]
        off += n
        return out

    magic, version, count = take("<8sII")
    if magic != _MAGIC:
        raise ParseError("not a network checkpoint (bad magic)", 0)
    if version != _VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    meta = json.loads(take_bytes(meta_len).decode())
    nets = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = take_bytes(nlen).decode()
        (nl,) = take("<I")
        sizes = take(f"<{nl}Q")
        hid, out, npar = take("<BBQ")
        spec = MlpSpec(sizes, ACTIVATIONS[hid], ACTIVATIONS[out])
        if npar != spec.num_params:
            raise SchemaError(f"network {name!r}: header sizes imply {spec.num_params} params, file has {npar}")
        theta = np.frombuffer(take_bytes(8 * npar), dtype="<f8").astype(np.float64)
        nets[name] = MlpParams(spec, theta)
    if off != len(buf):
        raise ParseError("trailing bytes in checkpoint", off)
    return nets, meta
