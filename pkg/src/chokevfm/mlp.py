"""Fully connected feed-forward network with ReLU hidden layers.

The network is the data-driven element embedded in the hybrid choke models:
affine layers with elementwise ``max(0, z)`` activations on the hidden
layers and a bare affine output layer, making the map piecewise linear.
Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of row
vectors propagates as ``X @ W + b``.

He initialization doubles as the prior scale for weights: hidden and output
layers draw from ``Normal(0, 2/fan_in)``; the first layer, whose inputs pass
through no activation, uses ``Normal(0, 1/fan_in)``. Biases start at zero
and share their layer's weight variance as prior variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, IngestionError

FORMAT_TAG = "chokevfm-mlp"
FORMAT_VERSION = 1


def layer_sigmas(widths: list[int]) -> list[float]:
    """Prior/initialization standard deviation per layer, indexed from the input."""
    sigmas = []
    for i, fan_in in enumerate(widths[:-1]):
        sigmas.append(np.sqrt((1.0 if i == 0 else 2.0) / fan_in))
    return sigmas


@dataclass
class Mlp:
    """Network parameters plus the seed they were drawn from."""

    widths: list[int]
    weights: list[np.ndarray] = field(default_factory=list)  # (fan_in, fan_out)
    biases: list[np.ndarray] = field(default_factory=list)  # (fan_out,)
    seed: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "Mlp":
        return Mlp(
            widths=list(self.widths),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
        )


def he_initialize(widths: list[int], seed: int) -> Mlp:
    """Draw a fresh network; identical seeds give identical parameters."""
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ContractError(f"invalid layer widths {widths}")
    rng = np.random.default_rng(seed)
    net = Mlp(widths=list(widths), seed=seed)
    for sigma, fan_in, fan_out in zip(layer_sigmas(widths), widths[:-1], widths[1:]):
        net.weights.append(rng.normal(0.0, sigma, size=(fan_in, fan_out)))
        net.biases.append(np.zeros(fan_out))
    return net


def zero_network(widths: list[int]) -> Mlp:
    net = Mlp(widths=list(widths), seed=0)
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        net.weights.append(np.zeros((fan_in, fan_out)))
        net.biases.append(np.zeros(fan_out))
    return net


def forward(weights, biases, x):
    """Evaluate the network on `x`, one sample per row.

    `weights`/`biases` may be numpy arrays or autodiff Tensors; `x` may be a
    single vector or an ``(n, d)`` batch. Returns a length-n vector (or a
    scalar for vector input) of the same kind as the parameters.
    """
    arr = ad.value_of(x)
    single = arr.ndim == 1
    d_in = ad.value_of(weights[0]).shape[0]
    if (arr.shape[-1] if arr.ndim else -1) != d_in:
        raise ContractError(f"network expects {d_in} inputs, got shape {arr.shape}")
    on_tape = isinstance(x, ad.Tensor) or isinstance(weights[0], ad.Tensor)
    z = x if isinstance(x, ad.Tensor) else (ad.constant(arr) if on_tape else arr)
    if single:
        z = z.reshape(1, -1)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = ad.matmul(z, w) + b
        if i < last:
            z = ad.relu(z)
    out = z.reshape(-1)
    if single:
        return out.reshape(()) if isinstance(out, ad.Tensor) else float(out[0])
    return out


def forward_net(net: Mlp, x):
    return forward(net.weights, net.biases, x)


def _format_floats(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in a.reshape(-1))


def save_network(net: Mlp, path) -> None:
    """Write the network as line-oriented text; floats round-trip exactly.

    Layout: header with format tag/version, the seed, the layer widths, then
    per layer one ``weights`` line (row-major over the (fan_in, fan_out)
    matrix) and one ``biases`` line.
    """
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}", f"seed {net.seed}", "widths " + " ".join(str(w) for w in net.widths)]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"weights {i} {_format_floats(w)}")
        lines.append(f"biases {i} {_format_floats(b)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path) -> Mlp:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(FORMAT_TAG):
        raise IngestionError(f"not a {FORMAT_TAG} file: {path}", row=1)
    tag, version = lines[0].split()
    if int(version) != FORMAT_VERSION:
        raise IngestionError(f"unsupported {FORMAT_TAG} version {version}", row=1)
    seed = int(lines[1].split()[1])
    widths = [int(v) for v in lines[2].split()[1:]]
    net = Mlp(widths=widths, seed=seed)
    fields = {}
    for ln in lines[3:]:
        kind, index, *values = ln.split()
        fields[(kind, int(index))] = np.array([float(v) for v in values])
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        try:
            w = fields[("weights", i)].reshape(fan_in, fan_out)
            b = fields[("biases", i)]
        except KeyError as exc:
            raise IngestionError(f"missing layer {i} in {path}") from exc
        if b.shape != (fan_out,):
            raise IngestionError(f"layer {i} bias length {b.size}, expected {fan_out}")
        net.weights.append(w)
        net.biases.append(b)
    return net
