"""Dense feed-forward ReLU classifiers with a flat parameter vector.

Parameters are laid out layer by layer, row-major weights then biases, so
a network is (sizes, params) and nothing else.  Forward passes exist in
two flavours: a plain numpy one for evaluation and a tape compilation for
training (matrix products expanded into scalar nodes).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .rng import stream

__all__ = [
    "Network",
    "init_network",
    "forward",
    "tape_forward",
    "save_network",
    "load_network",
    "CheckpointError",
]


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files."""


@dataclass(frozen=True)
class Network:
    sizes: tuple
    params: np.ndarray

    def __post_init__(self):
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ValueError(f"bad layer sizes {self.sizes}")
        if self.params.shape != (param_count(self.sizes),):
            raise ValueError(
                f"parameter vector has {self.params.shape}, "
                f"expected ({param_count(self.sizes)},)"
            )
        if not np.all(np.isfinite(self.params)):
            raise ValueError("parameters must be finite")

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]


def param_count(sizes) -> int:
    return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


def layer_slices(sizes):
    """Yield (in, out, weight_slice, bias_slice) per layer."""
    off = 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        w = slice(off, off + i * o)
        b = slice(off + i * o, off + i * o + o)
        off = b.stop
        yield i, o, w, b


def init_network(sizes, seed: int) -> Network:
    """Fan-in scaled uniform weights U(-sqrt(6/in), sqrt(6/in)), zero biases.

    Same seed gives bit-identical parameters.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    rng = stream(seed, "init")
    params = np.zeros(param_count(sizes))
    for fan_in, fan_out, wsl, _ in layer_slices(sizes):
        bound = math.sqrt(6.0 / fan_in)
        params[wsl] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return Network(sizes, params)


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Logits for one input (m,) or a batch (B, m); no final activation."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.n_inputs:
        raise ValueError(f"input has {h.shape[1]} features, network takes {net.n_inputs}")
    last = len(net.sizes) - 2
    for li, (i, o, wsl, bsl) in enumerate(layer_slices(net.sizes)):
        w = net.params[wsl].reshape(o, i)
        b = net.params[bsl]
        h = h @ w.T + b
        if li != last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def tape_forward(t: Tape, sizes, param_nodes, x_nodes) -> list:
    """Build the forward pass on a tape; returns output node ids.

    param_nodes follows the flat layout; x_nodes are the input feature
    nodes.  Affine layers alternate with relu, none after the last.
    """
    sizes = tuple(sizes)
    if len(param_nodes) != param_count(sizes):
        raise ValueError("wrong number of parameter nodes")
    if len(x_nodes) != sizes[0]:
        raise ValueError("wrong number of input nodes")
    h = list(x_nodes)
    last = len(sizes) - 2
    for li, (i, o, wsl, bsl) in enumerate(layer_slices(sizes)):
        w = param_nodes[wsl]
        b = param_nodes[bsl]
        nxt = []
        for r in range(o):
            acc = b[r]
            for c in range(i):
                acc = t.add(acc, t.mul(w[r * i + c], h[c]))
            nxt.append(acc if li == last else t.relu(acc))
        h = nxt
    return h


_MAGIC = "softlogic-net v1"


def save_network(net: Network, path: str, seed: int | None = None) -> None:
    """Versioned text checkpoint; floats printed with 17 significant digits."""
    buf = io.StringIO()
    buf.write(_MAGIC + "\n")
    buf.write("sizes " + " ".join(str(s) for s in net.sizes) + "\n")
    buf.write(f"seed {'none' if seed is None else seed}\n")
    buf.write(f"params {net.params.size}\n")
    for v in net.params:
        buf.write(f"{v:.17g}\n")
    with open(path, "w") as f:
        f.write(buf.getvalue())


def load_network(path: str) -> Network:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad header)")
    try:
        sizes = tuple(int(s) for s in lines[1].split()[1:])
        count = int(lines[3].split()[1])
        params = np.array([float(v) for v in lines[4:4 + count]])
    except (IndexError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint: {e}") from None
    if params.size != count:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return Network(sizes, params)
