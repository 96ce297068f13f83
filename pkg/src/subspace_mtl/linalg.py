"""Dense MLP arithmetic with hand-written backprop and seeded randomness.

Parameters of a network live in one flat float64 vector ``theta``.  Layer
``i`` stores its weight matrix (``out x in``, row-major) followed by its bias.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "elu")


class ShapeError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the only source of randomness in the package."""
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


def derive_seed(master: int, *labels) -> int:
    """Deterministic 63-bit sub-seed from a master seed and string labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest(), "big") >> 1


def gaussian(seed: int | np.random.Generator, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeError(f"gaussian needs rows, cols >= 1, got {rows}x{cols}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return rng.standard_normal((rows, cols))


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    layer_shapes: tuple[tuple[int, int], ...] = field(init=False, repr=False)
    D: int = field(init=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(x) < 1 for x in dims):
            raise ValueError(f"layer widths must be positive, got {dims}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        shapes = tuple((int(dims[i + 1]), int(dims[i])) for i in range(len(dims) - 1))
        object.__setattr__(self, "layer_shapes", shapes)
        object.__setattr__(self, "D", sum(o * i + o for o, i in shapes))

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "output_dim": self.output_dim, "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(int(d["input_dim"]), tuple(d.get("hidden", ())),
                   int(d["output_dim"]), d.get("activation", "relu"))

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into ``theta``."""
        if theta.ndim != 1 or theta.shape[0] != self.D:
            raise ShapeError(f"theta has shape {theta.shape}, network expects ({self.D},)")
        out, pos = [], 0
        for o, i in self.layer_shapes:
            W = theta[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = theta[pos:pos + o]
            pos += o
            out.append((W, b))
        return out


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Fan-in uniform initialisation U(-1/sqrt(in), 1/sqrt(in)) for weights and biases."""
    rng = make_rng(seed)
    parts = []
    for o, i in spec.layer_shapes:
        bound = 1.0 / np.sqrt(i)
        parts.append(rng.uniform(-bound, bound, size=o * i))
        parts.append(rng.uniform(-bound, bound, size=o))
    return np.concatenate(parts)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return np.where(z > 0, 1.0, a + 1.0)


def _check_x(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"x has shape {x.shape}, network expects (batch, {spec.input_dim})")
    return x


def forward(spec: NetworkSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = _check_x(spec, x)
    layers = spec.unpack(np.asarray(theta, dtype=np.float64))
    h = x
    for idx, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if idx < len(layers) - 1:
            h = _act(h, spec.activation)
    return h


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(spec: NetworkSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray,
                  kind: str = "cross_entropy", grad: bool = True):
    """Mean loss over the batch and, for cross-entropy, its gradient w.r.t. theta.

    ``kind="zero_one"`` returns the misclassification fraction and ``None``;
    asking it for a gradient raises ``ValueError``.
    """
    x = _check_x(spec, x)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels have shape {y.shape}, expected ({x.shape[0]},)")
    if y.size and (y.min() < 0 or y.max() >= spec.output_dim):
        raise ValueError(f"labels must lie in [0, {spec.output_dim})")
    if kind == "zero_one":
        if grad:
            raise ValueError("zero-one loss has no gradient; call with grad=False")
        logits = forward(spec, theta, x)
        return float(np.mean(logits.argmax(axis=1) != y)), None
    if kind != "cross_entropy":
        raise ValueError(f"unknown loss kind {kind!r}")

    theta = np.asarray(theta, dtype=np.float64)
    layers = spec.unpack(theta)
    nb = x.shape[0]
    pre, post = [], [x]
    h = x
    for idx, (W, b) in enumerate(layers):
        z = h @ W.T + b
        pre.append(z)
        h = _act(z, spec.activation) if idx < len(layers) - 1 else z
        post.append(h)
    logp = log_softmax(h)
    loss = float(-logp[np.arange(nb), y].mean())
    if not grad:
        return loss, None

    delta = np.exp(logp)
    delta[np.arange(nb), y] -= 1.0
    delta /= nb
    grads = []
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        grads.append((delta.sum(axis=0), (delta.T @ post[idx]).ravel()))
        if idx > 0:
            delta = (delta @ W) * _act_grad(pre[idx - 1], post[idx], spec.activation)
    flat = []
    for gb, gW in reversed(grads):
        flat.append(gW)
        flat.append(gb)
    return loss, np.concatenate(flat)


def accuracy(spec: NetworkSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(forward(spec, theta, x).argmax(axis=1) == np.asarray(y)))
