"""Deterministic float64 MLP with exact backprop and momentum SGD.

Weight decay is decoupled and per layer::

    v <- momentum * v + grad
    w <- w * (1 - lr * wd_l) - lr * v        (weights)
    b <- b - lr * v                          (biases, never decayed)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .errors import DivergenceError, SpecError

RELU = "relu"
IDENTITY = "identity"

CHECKPOINT_MAGIC = b"OUISCOPE-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = RELU

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise SpecError(f"layer dims must be >= 1, got {self}")
        if self.activation not in (RELU, IDENTITY):
            raise SpecError(f"unknown activation {self.activation!r}")


def mlp_specs(widths: Sequence[int]) -> List[LayerSpec]:
    """``[2, 64, 64, 2]`` -> two relu layers followed by an identity head."""
    widths = list(widths)
    if len(widths) < 2:
        raise SpecError(f"need at least input and output widths, got {widths}")
    specs = [LayerSpec(i, o, RELU) for i, o in zip(widths[:-2], widths[1:-1])]
    specs.append(LayerSpec(widths[-2], widths[-1], IDENTITY))
    return specs


def validate_specs(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise SpecError("network needs at least one layer")
    for k, (prev, nxt) in enumerate(zip(specs, specs[1:])):
        if prev.output_dim != nxt.input_dim:
            raise SpecError(
                f"layer {k} outputs {prev.output_dim} but layer {k + 1} "
                f"expects {nxt.input_dim}"
            )
    for k, spec in enumerate(specs[:-1]):
        if spec.activation == IDENTITY:
            raise SpecError(f"identity activation only allowed on the last layer (layer {k})")


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)


@dataclass
class Network:
    specs: List[LayerSpec]
    layers: List[Layer]
    seed: int = 0

    @property
    def relu_layers(self) -> List[int]:
        return [k for k, s in enumerate(self.specs) if s.activation == RELU]

    @property
    def num_parameters(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    def parameters(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def copy(self) -> "Network":
        return Network(
            list(self.specs),
            [Layer(l.weights.copy(), l.biases.copy()) for l in self.layers],
            self.seed,
        )


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    preactivations: List[np.ndarray]
    outputs: List[np.ndarray]
    activations: List[str]

    @property
    def relu_layers(self) -> List[int]:
        return [k for k, a in enumerate(self.activations) if a == RELU]

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1]


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float
    weight_decay: np.ndarray
    velocity_w: List[np.ndarray] = field(default_factory=list)
    velocity_b: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: Network, learning_rate, momentum=0.0, weight_decay=0.0):
        wd = np.broadcast_to(
            np.asarray(weight_decay, dtype=np.float64), (len(net.layers),)
        ).copy()
        state = cls(
            float(learning_rate),
            float(momentum),
            wd,
            [np.zeros_like(l.weights) for l in net.layers],
            [np.zeros_like(l.biases) for l in net.layers],
        )
        state.validate()
        return state

    def validate(self):
        if not self.learning_rate >= 0 or not np.isfinite(self.learning_rate):
            raise SpecError(f"learning rate must be finite and >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise SpecError(f"momentum must be in [0, 1), got {self.momentum}")
        if np.any(~np.isfinite(self.weight_decay)) or np.any(self.weight_decay < 0):
            raise SpecError(f"weight decay must be finite and >= 0, got {self.weight_decay}")


def init_network(specs: Sequence[LayerSpec], seed: int) -> Network:
    """He-normal weights, zero biases; bit-identical for equal (specs, seed)."""
    specs = list(specs)
    validate_specs(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        std = np.sqrt(2.0 / spec.input_dim)
        w = rng.normal(0.0, std, size=(spec.output_dim, spec.input_dim))
        layers.append(Layer(w, np.zeros(spec.output_dim)))
    return Network(specs, layers, seed)


def forward(net: Network, batch) -> ForwardTrace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.specs[0].input_dim:
        raise SpecError(
            f"batch shape {x.shape} does not match input dim {net.specs[0].input_dim}"
        )
    pre, post = [], []
    h = x
    for k, (spec, layer) in enumerate(zip(net.specs, net.layers)):
        with np.errstate(over="ignore", invalid="ignore"):
            a = h @ layer.weights.T + layer.biases
        if not np.isfinite(a).all():
            raise DivergenceError(f"non-finite preactivation in layer {k}", layer=k)
        h = np.maximum(a, 0.0) if spec.activation == RELU else a
        pre.append(a)
        post.append(h)
    return ForwardTrace(x, pre, post, [s.activation for s in net.specs])


def log_softmax(logits) -> np.ndarray:
    # overflow here surfaces as a non-finite loss, which callers treat as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        z = logits - logits.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_softmax_ce(logits, labels):
    """Mean cross-entropy. Returns ``(loss, probs)``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} rows")
    if np.any(labels < 0) or np.any(labels >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"label {bad} outside [0, {c})")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    return float(loss), np.exp(logp)


def backward(net: Network, trace: ForwardTrace, labels) -> Gradients:
    """Gradients of the mean cross-entropy; ReLU'(0) is taken as 0."""
    if len(trace.preactivations) != len(net.layers):
        raise SpecError("trace does not belong to this network")
    for spec, a in zip(net.specs, trace.preactivations):
        if a.shape[1] != spec.output_dim:
            raise SpecError("trace does not belong to this network")
    labels = np.asarray(labels)
    n = trace.inputs.shape[0]
    _, probs = loss_softmax_ce(trace.logits, labels)
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    gw = [None] * len(net.layers)
    gb = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        if net.specs[k].activation == RELU:
            delta = delta * (trace.preactivations[k] > 0)
        below = trace.outputs[k - 1] if k > 0 else trace.inputs
        gw[k] = delta.T @ below
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ net.layers[k].weights
    return Gradients(gw, gb)


def sgd_step(net: Network, grads: Gradients, opt: OptimizerState, step=None) -> None:
    """In-place momentum SGD with decoupled per-layer weight decay."""
    lr, mu = opt.learning_rate, opt.momentum
    for k, layer in enumerate(net.layers):
        vw = opt.velocity_w[k]
        vb = opt.velocity_b[k]
        vw *= mu
        vw += grads.weights[k]
        vb *= mu
        vb += grads.biases[k]
        new_w = layer.weights * (1.0 - lr * opt.weight_decay[k]) - lr * vw
        new_b = layer.biases - lr * vb
        if not (np.isfinite(new_w).all() and np.isfinite(new_b).all()):
            raise DivergenceError(
                f"non-finite parameter update in layer {k}", step=step, layer=k
            )
        layer.weights = new_w
        layer.biases = new_b


def predict(net: Network, features) -> np.ndarray:
    return forward(net, features).logits.argmax(axis=1)


def evaluate(net: Network, dataset, chunk: int = 4096):
    """Full pass without updates. Returns ``(mean loss, accuracy)``."""
    x = np.asarray(dataset.features, dtype=np.float64)
    y = np.asarray(dataset.labels)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total, correct = 0.0, 0
    for lo in range(0, n, chunk):
        logits = forward(net, x[lo:lo + chunk]).logits
        loss, _ = loss_softmax_ce(logits, y[lo:lo + chunk])
        total += loss * logits.shape[0]
        correct += int((logits.argmax(axis=1) == y[lo:lo + chunk]).sum())
    return total / n, correct / n


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(net: Network, path, step: int = 0) -> None:
    """Write ``MAGIC``, a length-prefixed JSON header, then raw ``<f8`` parameters.

    Layout::

        b"OUISCOPE-CKPT\\n"
        uint32 little-endian header length
        UTF-8 JSON header {"version", "seed", "step", "specs", "count"}
        count little-endian float64 values: W_0, b_0, W_1, b_1, ... (row-major)
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": int(net.seed),
        "step": int(step),
        "specs": [[s.input_dim, s.output_dim, s.activation] for s in net.specs],
        "count": int(net.num_parameters),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(net.flat_parameters().astype("<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`. Returns ``(network, step)``."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not an ouiscope checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    specs = [LayerSpec(i, o, a) for i, o, a in header["specs"]]
    validate_specs(specs)
    flat = np.frombuffer(data[pos:], dtype="<f8").astype(np.float64)
    if flat.size != header["count"]:
        raise ValueError(f"{path}: expected {header['count']} parameters, found {flat.size}")
    layers, off = [], 0
    for s in specs:
        w = flat[off:off + s.output_dim * s.input_dim].reshape(s.output_dim, s.input_dim)
        off += w.size
        b = flat[off:off + s.output_dim]
        off += b.size
        layers.append(Layer(w.copy(), b.copy()))
    return Network(specs, layers, header["seed"]), header["step"]
