"""Minimal MLP engine: ReLU hidden layers, linear output, half-MSE loss.

Weights only (no biases), double precision throughout.  Models come in two
forms: the original L-layer stack, and the expanded (2L-1)-layer stack in
which an identity "transitional" layer is inserted after every hidden layer.
Training on a multiplicatively masked expanded model produces, besides the
per-layer loss gradients, two correction terms per odd layer:

    sigma-term: alpha * d(out)/dW  +  (dLoss/d(out))^T * d(alpha)/dW
    beta-term:  alpha * d(alpha)/dW

where ``alpha`` is the coordinate sum of the activation feeding the output
layer.  Their batch means (``psi``, ``phi``) are what a coordinator needs to
undo the masking of aggregated gradients exactly.  The sigma-term carries a
leading output-coordinate axis, so ``psi`` entries are (n_L, n_l, n_{l-1})
arrays; ``phi`` entries match the weight shapes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "Sample",
    "GradBundle",
    "expand_model",
    "contract_model",
    "forward",
    "batch_loss",
    "plain_gradients",
    "backward_perturbed",
    "batch_gradients",
    "clip_bundle",
    "save_model",
    "load_model",
]


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


@dataclass
class ModelParams:
    """Weight stack for an L-layer MLP or its (2L-1)-layer expansion.

    ``layer_dims`` always holds the original dims (n_0, ..., n_L); the
    ``expanded`` flag says whether ``weights`` is the original stack of L
    matrices or the expanded stack of 2L-1 matrices with identity-initialised
    transitional layers at the even positions.
    """

    layer_dims: tuple
    weights: list
    expanded: bool = False

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive, got {self.layer_dims}")
        expect = self.expanded_dims() if self.expanded else self.plain_dims()
        if len(self.weights) != len(expect):
            raise ValueError(
                f"expected {len(expect)} weight matrices, got {len(self.weights)}"
            )
        for i, (w, shape) in enumerate(zip(self.weights, expect)):
            if w.shape != shape:
                raise ValueError(
                    f"weight {i} has shape {w.shape}, expected {shape}"
                )

    @property
    def num_layers(self) -> int:
        """L, the number of original layers."""
        return len(self.layer_dims) - 1

    def plain_dims(self) -> list:
        d = self.layer_dims
        return [(d[l + 1], d[l]) for l in range(self.num_layers)]

    def expanded_dims(self) -> list:
        d = self.layer_dims
        shapes = []
        for l in range(self.num_layers):
            shapes.append((d[l + 1], d[l]))
            if l < self.num_layers - 1:
                shapes.append((d[l + 1], d[l + 1]))
        return shapes

    def copy(self) -> "ModelParams":
        return ModelParams(self.layer_dims, [w.copy() for w in self.weights],
                           self.expanded)


@dataclass(frozen=True)
class Sample:
    """One training pair: input vector and label vector."""

    x: np.ndarray
    y_bar: np.ndarray


@dataclass
class GradBundle:
    """Per-odd-layer gradients and correction terms, batch-averaged.

    ``grads`` and ``phi`` entries have the odd-layer weight shapes;
    ``psi`` entries carry a leading output axis (n_L, n_l, n_{l-1}).
    ``round_tag`` identifies the masking secret the bundle belongs to.
    """

    grads: list
    psi: list
    phi: list
    round_tag: int | None = None


def expand_model(w_org: ModelParams) -> ModelParams:
    """Insert identity transitional layers after every hidden layer."""
    if w_org.expanded:
        raise ValueError("model is already expanded")
    weights = []
    for l, w in enumerate(w_org.weights):
        weights.append(w.copy())
        if l < w_org.num_layers - 1:
            weights.append(np.eye(w.shape[0]))
    return ModelParams(w_org.layer_dims, weights, expanded=True)


def contract_model(w_exp: ModelParams) -> ModelParams:
    """Drop the transitional layers, keeping the odd-position weights."""
    if not w_exp.expanded:
        raise ValueError("model is not expanded")
    return ModelParams(w_exp.layer_dims, [w.copy() for w in w_exp.weights[::2]],
                       expanded=False)


def forward(params: ModelParams, x: np.ndarray) -> list:
    """Run the network, returning the activation of every layer.

    Hidden layers apply ReLU elementwise; the final layer is linear.  ``x``
    may be a single vector or a (batch, n_0) matrix; activations match.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != params.layer_dims[0]:
        raise ValueError(
            f"input has {a.shape[1]} features, model expects {params.layer_dims[0]}"
        )
    acts = []
    last = len(params.weights) - 1
    for j, w in enumerate(params.weights):
        a = a @ w.T
        if j != last:
            a = _relu(a)
        acts.append(a)
    if single:
        return [v[0] for v in acts]
    return acts


def batch_loss(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean half squared error of the network output over a batch."""
    out = forward(params, x)[-1]
    out2 = np.atleast_2d(out)
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return float(0.5 * np.sum((out2 - y2) ** 2) / out2.shape[0])


def _backward_full(weights: list, x: np.ndarray, acts: list, y: np.ndarray,
                   with_corrections: bool):
    """Batched backward pass; returns per-layer (grads, psi, phi) means.

    ``grads[j]`` is the mean of per-sample loss gradients for weight j.
    With corrections enabled, ``psi[j]`` / ``phi[j]`` are the batch means of
    the sigma- and beta-terms.  ReLU derivative at exactly 0 is taken as 0.
    """
    m = len(weights)
    b = x.shape[0]
    inputs = [x] + acts[:-1]
    g = acts[-1] - y
    masks = [acts[j] > 0 for j in range(m - 1)]

    grads = [None] * m
    delta = g
    grads[m - 1] = delta.T @ inputs[m - 1] / b
    for j in range(m - 2, -1, -1):
        delta = (delta @ weights[j + 1]) * masks[j]
        grads[j] = delta.T @ inputs[j] / b
    if not with_corrections:
        return grads, None, None

    n_out = g.shape[1]
    alpha = acts[m - 2].sum(axis=1) if m >= 2 else x.sum(axis=1)
    psi = [None] * m
    phi = [None] * m
    # p[j] = d(out)/d(preact_j), q[j] = d(alpha)/d(preact_j), per sample
    p = np.broadcast_to(np.eye(n_out), (b, n_out, n_out))
    q = np.zeros((b, n_out))
    for j in range(m - 1, -1, -1):
        s = alpha[:, None, None] * p + g[:, :, None] * q[:, None, :]
        psi[j] = np.einsum("bno,bi->noi", s, inputs[j]) / b
        phi[j] = np.einsum("b,bo,bi->oi", alpha, q, inputs[j]) / b
        if j > 0:
            p = (p @ weights[j]) * masks[j - 1][:, None, :]
            if j - 1 == m - 2:
                q = masks[j - 1].astype(np.float64)
            else:
                q = (q @ weights[j]) * masks[j - 1]
    return grads, psi, phi


def plain_gradients(params: ModelParams, x: np.ndarray, y: np.ndarray) -> list:
    """Batch-mean loss gradients for every layer of the given model."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    acts = forward(params, x2)
    grads, _, _ = _backward_full(params.weights, x2, acts, y2,
                                 with_corrections=False)
    return grads


def backward_perturbed(params: ModelParams, activations: list, sample: Sample):
    """Per-sample gradients and correction terms on the odd layers.

    ``activations`` must come from :func:`forward` on the same params and
    sample.  Returns (grads, sigma, beta) lists over the odd layers; sigma
    entries carry the leading output axis.
    """
    if not params.expanded:
        raise ValueError("correction terms are defined on expanded models")
    x2 = np.atleast_2d(np.asarray(sample.x, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(sample.y_bar, dtype=np.float64))
    acts = [np.atleast_2d(a) for a in activations]
    if acts[0].shape[0] != 1 or acts[-1].shape[1] != y2.shape[1]:
        raise ValueError("activations do not match this sample")
    for a, w in zip(acts, params.weights):
        if a.shape[1] != w.shape[0]:
            raise ValueError("activations do not match this model")
    grads, psi, phi = _backward_full(params.weights, x2, acts, y2,
                                     with_corrections=True)
    return grads[::2], psi[::2], phi[::2]


def batch_gradients(params: ModelParams, x: np.ndarray, y: np.ndarray) -> GradBundle:
    """Batch-averaged odd-layer gradients and correction terms.

    The dataset is given as matrices ``x`` (batch, n_0) and ``y``
    (batch, n_L); per-sample quantities are averaged uniformly.
    """
    if not params.expanded:
        raise ValueError("correction terms are defined on expanded models")
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x2.shape[0] == 0:
        raise ValueError("dataset is empty")
    acts = forward(params, x2)
    grads, psi, phi = _backward_full(params.weights, x2, acts, y2,
                                     with_corrections=True)
    return GradBundle(grads=grads[::2], psi=psi[::2], phi=phi[::2])


def clip_bundle(bundle: GradBundle, b: float) -> GradBundle:
    """Scale each layer to gradient norm at most ``b``.

    The correction terms are co-scaled by the same per-layer factor, so the
    exact-recovery identity keeps holding on the clipped bundle (recovery is
    linear in all three components).
    """
    if not b > 0:
        raise ValueError(f"clip threshold must be > 0, got {b}")
    grads, psi, phi = [], [], []
    for g, s, f in zip(bundle.grads, bundle.psi, bundle.phi):
        norm = float(np.linalg.norm(g))
        factor = 1.0 / max(1.0, norm / b)
        grads.append(g * factor)
        psi.append(s * factor)
        phi.append(f * factor)
    return GradBundle(grads=grads, psi=psi, phi=phi, round_tag=bundle.round_tag)


def save_model(params: ModelParams, path) -> None:
    """Write the model as JSON: dims, expanded flag, row-major weight lists."""
    doc = {
        "layer_dims": list(params.layer_dims),
        "expanded": params.expanded,
        "weights": [w.tolist() for w in params.weights],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> ModelParams:
    with open(path) as fh:
        doc = json.load(fh)
    weights = [np.asarray(w, dtype=np.float64) for w in doc["weights"]]
    return ModelParams(tuple(doc["layer_dims"]), weights, doc["expanded"])
