"""Dense networks with activation recording, exact backprop and masked Adam.

Everything is float64. Weight matrices are stored ``(out, in)`` so that row
``j`` of ``W`` holds the incoming weights of output neuron ``j``; a gradient
mask over output neurons therefore scales rows of ``dW`` and entries of ``db``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from nbsp.errors import NumericError, ShapeError

HEADS = ("linear", "gaussian_policy", "categorical_logits")
SNAPSHOT_FORMAT = "nbsp-snapshot/1"


@dataclass
class Gradients:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    # gradient with respect to the network input, when requested
    dx: np.ndarray | None = None

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.dW) and all(np.isfinite(g).all() for g in self.db)


class DenseNet:
    """Feed-forward ReLU network with an affine final layer.

    The final layer is never passed through the hidden activation. How its
    output is interpreted (plain value, Gaussian mean/log-std pair, logits) is
    recorded in ``output_head`` and left to the caller.
    """

    hidden_activation = "relu"

    def __init__(self, sizes: Sequence[int], output_head: str = "linear",
                 rng: np.random.Generator | None = None, name: str = ""):
        if len(sizes) < 2:
            raise ShapeError("a network needs at least an input and an output size")
        if output_head not in HEADS:
            raise ValueError(f"unknown output head {output_head!r}; expected one of {HEADS}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.name = name
        self.output_head = output_head
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            self.weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            self.biases.append(rng.uniform(-bound, bound, size=n_out))

    @classmethod
    def from_params(cls, weights: Sequence, biases: Sequence, output_head: str = "linear",
                    name: str = "") -> "DenseNet":
        net = cls.__new__(cls)
        net.name = name
        net.output_head = output_head
        net.weights = [np.array(w, dtype=np.float64, ndmin=2) for w in weights]
        net.biases = [np.array(b, dtype=np.float64, ndmin=1) for b in biases]
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            if w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {l}: weight rows {w.shape[0]} != bias length {b.shape[0]}")
            if l > 0 and w.shape[1] != net.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l}: input size {w.shape[1]} does not chain "
                                 f"with previous output {net.weights[l - 1].shape[0]}")
        return net

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        """Output width of every layer, final layer included."""
        return [w.shape[0] for w in self.weights]

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def load_from(self, other: "DenseNet") -> None:
        for l in range(self.n_layers):
            self.weights[l][...] = other.weights[l]
            self.biases[l][...] = other.biases[l]

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(np.isfinite(b).all() for b in self.biases)

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name or 'network'} expects input width {self.in_dim}, got shape {x.shape}")
        return x, single

    def forward(self, x, record: bool = False):
        """Evaluate the network on one input vector or a ``(batch, in)`` array.

        Returns ``(output, record)``. ``record`` is ``None`` unless requested,
        in which case it lists the post-ReLU vector of every hidden layer
        followed by the final layer's pre-head output.
        """
        out, cache = self._forward(x)
        single = np.asarray(x).ndim == 1
        rec = None
        if record:
            rec = [a[0].copy() if single else a.copy() for a in cache["post"]]
        return (out[0] if single else out), rec

    def _forward(self, x):
        h, _ = self._check_input(x)
        inputs, post = [], []
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w.T + b
            h = np.maximum(z, 0.0) if l < last else z
            post.append(h)
        return h, {"inputs": inputs, "post": post}

    def forward_cache(self, x):
        """Batched forward pass that also returns what :meth:`backward` needs."""
        return self._forward(x)

    def backward(self, x, upstream_grad, cache=None, input_grad: bool = False) -> Gradients:
        """Reverse-mode gradients of a loss whose gradient w.r.t. the output is ``upstream_grad``.

        For batched input, ``upstream_grad`` has shape ``(batch, out)`` and the
        parameter gradients are summed over the batch; any averaging belongs in
        ``upstream_grad``. ReLU's subgradient at exactly zero is zero.
        """
        g = np.asarray(upstream_grad, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape[1] != self.out_dim:
            raise ShapeError(f"upstream gradient width {g.shape[1]} != output width {self.out_dim}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite upstream gradient")
        if cache is None:
            _, cache = self._forward(x)
        inputs, post = cache["inputs"], cache["post"]
        if g.shape[0] != inputs[0].shape[0]:
            raise ShapeError("upstream gradient batch size does not match the input batch")
        dW: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        db: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        for l in range(self.n_layers - 1, -1, -1):
            if l < self.n_layers - 1:
                g = g * (post[l] > 0.0)
            dW[l] = g.T @ inputs[l]
            db[l] = g.sum(axis=0)
            if l > 0 or input_grad:
                g = g @ self.weights[l]
        dx = None
        if input_grad:
            dx = g[0] if np.asarray(x).ndim == 1 else g
        return Gradients(dW, db, dx)

    def input_gradient(self, upstream_grad: np.ndarray, cache) -> np.ndarray:
        """Gradient with respect to a batched input only; skips parameter gradients."""
        g = upstream_grad
        post = cache["post"]
        for l in range(self.n_layers - 1, -1, -1):
            if l < self.n_layers - 1:
                g = g * (post[l] > 0.0)
            g = g @ self.weights[l]
        return g


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in net.weights],
            v_w=[np.zeros_like(w) for w in net.weights],
            m_b=[np.zeros_like(b) for b in net.biases],
            v_b=[np.zeros_like(b) for b in net.biases],
            beta1=beta1, beta2=beta2, eps=eps,
        )


def _check_mask(net: DenseNet, mask) -> None:
    if len(mask) != net.n_layers:
        raise ShapeError(f"mask has {len(mask)} layers, network has {net.n_layers}")
    for l, (mv, size) in enumerate(zip(mask, net.layer_sizes)):
        if np.shape(mv) != (size,):
            raise ShapeError(f"mask layer {l} has shape {np.shape(mv)}, expected ({size},)")


def adam_step(net: DenseNet, grads: Gradients, state: AdamState, lr: float,
              mask: Sequence[np.ndarray] | None = None, mask_after_adam: bool = False) -> None:
    """One in-place Adam update, optionally scaling gradients per output neuron.

    By default the mask multiplies the raw gradient (rows of ``dW``, entries of
    ``db``) before the moments are accumulated, so a zero entry also keeps that
    neuron's moments at zero. ``mask_after_adam`` instead scales the final
    parameter delta and leaves the moments unmasked.
    """
    if not grads.is_finite():
        raise NumericError(f"non-finite gradient for {net.name or 'network'}; step rejected")
    if len(grads.dW) != net.n_layers:
        raise ShapeError("gradient layer count does not match the network")
    if mask is not None:
        _check_mask(net, mask)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for l in range(net.n_layers):
        gw, gb = grads.dW[l], grads.db[l]
        if gw.shape != net.weights[l].shape or gb.shape != net.biases[l].shape:
            raise ShapeError(f"layer {l}: gradient shapes {gw.shape}/{gb.shape} do not match parameters")
        mv = None if mask is None else np.asarray(mask[l], dtype=np.float64)
        if mv is not None and not mask_after_adam:
            gw = gw * mv[:, None]
            gb = gb * mv
        for p, g, m, v, row_scale in (
            (net.weights[l], gw, state.m_w[l], state.v_w[l], None if mv is None else mv[:, None]),
            (net.biases[l], gb, state.m_b[l], state.v_b[l], mv),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            delta = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            if row_scale is not None and mask_after_adam:
                delta = delta * row_scale
            p -= delta


def channel_mean_activation(feature_map) -> np.ndarray:
    """Per-channel mean of an ``(channels, H, W)`` feature map."""
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3:
        raise ShapeError(f"expected (channels, H, W), got shape {fm.shape}")
    if fm.shape[1] < 1 or fm.shape[2] < 1:
        raise ShapeError("feature map has an empty spatial grid")
    return fm.mean(axis=(1, 2))


def save_snapshot(path, networks: Mapping[str, DenseNet], extras: Mapping[str, np.ndarray] | None = None) -> None:
    """Write networks (and optional named arrays) to a versioned ``.npz`` file."""
    arrays: dict[str, np.ndarray] = {"__format__": np.array(SNAPSHOT_FORMAT)}
    for name, net in networks.items():
        if "/" in name:
            raise ValueError(f"network name {name!r} may not contain '/'")
        arrays[f"meta/{name}/head"] = np.array(net.output_head)
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"net/{name}/{l}/W"] = w
            arrays[f"net/{name}/{l}/b"] = b
    for key, value in (extras or {}).items():
        arrays[f"extra/{key}"] = np.asarray(value)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_snapshot(path) -> tuple[dict[str, DenseNet], dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__format__" not in data or str(data["__format__"]) != SNAPSHOT_FORMAT:
            raise ValueError(f"{path}: not a {SNAPSHOT_FORMAT} snapshot")
        layers: dict[str, dict[int, dict[str, np.ndarray]]] = {}
        heads: dict[str, str] = {}
        extras: dict[str, np.ndarray] = {}
        for key in data.files:
            parts = key.split("/")
            if parts[0] == "net":
                _, name, l, tensor = parts
                layers.setdefault(name, {}).setdefault(int(l), {})[tensor] = data[key]
            elif parts[0] == "meta":
                heads[parts[1]] = str(data[key])
            elif parts[0] == "extra":
                extras["/".join(parts[1:])] = data[key]
    nets = {}
    for name, by_layer in layers.items():
        order = sorted(by_layer)
        nets[name] = DenseNet.from_params([by_layer[l]["W"] for l in order], [by_layer[l]["b"] for l in order],
                                          output_head=heads.get(name, "linear"), name=name)
    return nets, extras
