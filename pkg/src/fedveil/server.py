"""Coordinator side: secret generation, model masking, recovery, update.

Each round the server draws a one-time secret, expands the model with
transitional layers and masks it multiplicatively (plus an additive rank-one
mask on the output layer).  Clients train on the masked model; the server
aggregates their bundles and undoes the masking of the aggregate exactly
using the secret.

Sign handling: the factor distributions the secret must follow carry
Rademacher signs, but commuting the masking through ReLU requires positive
scalings.  The secret therefore stores magnitudes and signs separately.  By
default (``signed=False``) the masking uses the positive magnitudes and the
signs ride along unused; the product-normality channel picks the signs up
through :meth:`PerturbationSecret.signed_r` / ``signed_s``.  With
``signed=True`` the masking itself uses the signed draws, which hides weight
signs but breaks the ReLU commutation; both behaviours are exposed so the
tension is measurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import DnStarSpec, sample_dn_star
from .nn import GradBundle, ModelParams, expand_model
from .rng import RngStream

__all__ = [
    "PerturbationSecret",
    "TrainConfig",
    "draw_secret",
    "apply_perturbation",
    "mp_server",
    "aggregate",
    "recover_aggregate",
    "mu_server",
    "forge_consistent_model",
]


@dataclass
class PerturbationSecret:
    """One-time masking secret for a single round.

    ``r_mags[l-1]`` / ``s_mags[l-1]`` hold the positive magnitudes of the
    multiplicative vectors for l = 1..L-1, with their Rademacher signs in
    ``r_signs`` / ``s_signs``.  ``R`` holds the derived per-layer masking
    matrices for all 2L-1 expanded layers and ``R_add`` the additive output
    mask with entries gamma_i * r_add_i.
    """

    round_tag: int
    layer_dims: tuple
    signed: bool
    r_mags: list
    r_signs: list
    s_mags: list
    s_signs: list
    gamma: np.ndarray
    r_add: np.ndarray
    R: list
    R_add: np.ndarray

    @property
    def r(self) -> np.ndarray:
        """Combined additive-direction vector gamma * r_add."""
        return self.gamma * self.r_add

    @property
    def upsilon(self) -> float:
        r = self.r
        return float(r @ r)

    def signed_r(self, l: int) -> np.ndarray:
        """Sign-carrying value of the l-th multiplicative vector (1-based)."""
        return self.r_mags[l - 1] * self.r_signs[l - 1]

    def signed_s(self, l: int) -> np.ndarray:
        return self.s_mags[l - 1] * self.s_signs[l - 1]


@dataclass
class TrainConfig:
    """Round-loop parameters shared by server and clients."""

    rounds: int
    client_fraction: float = 1.0
    learning_rate: float = 0.1
    clip_threshold: float = 1e9
    sigma_eta: float = 0.0
    sigma_delta: float = 0.0
    graph_mode: str = "complete"
    n_out: int | None = None
    master_seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if not 0 < self.client_fraction <= 1:
            raise ValueError(
                f"client_fraction must be in (0, 1], got {self.client_fraction}"
            )
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.clip_threshold <= 0:
            raise ValueError("clip_threshold must be > 0")
        if self.graph_mode not in ("complete", "random_n_out"):
            raise ValueError(f"unknown graph_mode {self.graph_mode!r}")
        if self.graph_mode == "random_n_out" and not self.n_out:
            raise ValueError("graph_mode 'random_n_out' requires n_out")

    def num_selected(self, num_clients: int) -> int:
        return max(1, round(self.client_fraction * num_clients))


def _vector_spec(l: int, big_l: int, kind: str, truncation_len: int,
                 tail_correction: bool) -> DnStarSpec:
    """Factor spec for the l-th multiplicative vector (1-based, l <= L-1)."""
    if kind == "r":
        m = 1 if l == 1 else 2
    else:
        m = 1 if l == big_l - 1 else 2
    return DnStarSpec(m=m, truncation_len=truncation_len,
                      tail_correction=tail_correction)


def draw_secret(layer_dims, rng: RngStream, *, round_tag: int = 0,
                signed: bool = False, truncation_len: int = 50_000,
                tail_correction: bool = True) -> PerturbationSecret:
    """Draw a fresh masking secret for a model with the given original dims."""
    dims = tuple(int(d) for d in layer_dims)
    big_l = len(dims) - 1
    r_mags, r_signs, s_mags, s_signs = [], [], [], []
    for l in range(1, big_l):
        spec = _vector_spec(l, big_l, "r", truncation_len, tail_correction)
        draws = sample_dn_star(spec, rng.child("r", l), size=dims[l])
        r_mags.append(np.abs(draws))
        r_signs.append(np.sign(draws))
        spec = _vector_spec(l, big_l, "s", truncation_len, tail_correction)
        draws = sample_dn_star(spec, rng.child("s", l), size=dims[l])
        s_mags.append(np.abs(draws))
        s_signs.append(np.sign(draws))
    gamma = rng.child("gamma").gen.standard_normal(dims[-1])
    r_add = rng.child("r_add").gen.standard_normal(dims[-1])
    secret = PerturbationSecret(
        round_tag=round_tag, layer_dims=dims, signed=signed,
        r_mags=r_mags, r_signs=r_signs, s_mags=s_mags, s_signs=s_signs,
        gamma=gamma, r_add=r_add, R=[], R_add=np.empty(0),
    )
    secret.R = _build_masks(secret)
    secret.R_add = np.repeat((gamma * r_add)[:, None], dims[-2], axis=1)
    return secret


def _build_masks(secret: PerturbationSecret) -> list:
    dims = secret.layer_dims
    big_l = len(dims) - 1
    if big_l == 1:
        # no hidden layers: multiplicative mask degenerates to all-ones
        return [np.ones((dims[1], dims[0]))]
    sign = lambda v, s: v * s if secret.signed else v
    r = [sign(m, s) for m, s in zip(secret.r_mags, secret.r_signs)]
    s = [sign(m, t) for m, t in zip(secret.s_mags, secret.s_signs)]
    masks = []
    for l in range(1, big_l + 1):
        if l == 1:
            masks.append(np.repeat(r[0][:, None], dims[0], axis=1))
        elif l < big_l:
            masks.append(np.outer(r[l - 1], s[l - 2]))
        else:
            masks.append(np.repeat(s[big_l - 2][None, :], dims[big_l], axis=0))
        if l < big_l:
            masks.append(np.diag(1.0 / (s[l - 1] * r[l - 1])))
    return masks


def apply_perturbation(w_org: ModelParams, secret: PerturbationSecret) -> ModelParams:
    """Expand the model and apply the secret's masks to every layer."""
    if w_org.expanded:
        raise ValueError("expected an unexpanded model")
    if w_org.layer_dims != secret.layer_dims:
        raise ValueError(
            f"secret dims {secret.layer_dims} do not match model dims "
            f"{w_org.layer_dims}"
        )
    expanded = expand_model(w_org)
    weights = [mask * w for mask, w in zip(secret.R, expanded.weights)]
    weights[-1] = weights[-1] + secret.R_add
    return ModelParams(w_org.layer_dims, weights, expanded=True)


def mp_server(w_org: ModelParams, rng: RngStream, *, round_tag: int = 0,
              signed: bool = False, truncation_len: int = 50_000,
              tail_correction: bool = True):
    """Draw a fresh secret and return (masked expanded model, secret)."""
    secret = draw_secret(
        w_org.layer_dims, rng, round_tag=round_tag, signed=signed,
        truncation_len=truncation_len, tail_correction=tail_correction,
    )
    return apply_perturbation(w_org, secret), secret


def aggregate(bundles) -> GradBundle:
    """Uniform mean of client bundles, in ascending client-id order."""
    if not bundles:
        raise ValueError("no bundles to aggregate")
    ordered = sorted(bundles, key=lambda b: b.client_id)
    rounds = {b.round for b in ordered}
    if len(rounds) != 1:
        raise ValueError(f"bundles span multiple rounds: {sorted(rounds)}")
    first = ordered[0]
    n_layers = len(first.grads)
    for b in ordered[1:]:
        if len(b.grads) != n_layers:
            raise ValueError("bundles have inconsistent layer counts")
        for a, c in zip(b.grads, first.grads):
            if a.shape != c.shape:
                raise ValueError(
                    f"bundle shapes disagree: {a.shape} vs {c.shape}"
                )
    k = len(ordered)
    grads = [sum(b.grads[i] for b in ordered) / k for i in range(n_layers)]
    psi = [sum(b.psi[i] for b in ordered) / k for i in range(n_layers)]
    phi = [sum(b.phi[i] for b in ordered) / k for i in range(n_layers)]
    return GradBundle(grads=grads, psi=psi, phi=phi, round_tag=first.round)


def recover_aggregate(agg: GradBundle, secret: PerturbationSecret) -> list:
    """Undo the masking on an aggregated bundle.

    Returns the per-odd-layer recovered gradients
    ``R_odd * (grads - r^T psi + upsilon * phi)``; with zero client noise
    these equal the plain-model aggregate gradients exactly.
    """
    if agg.round_tag is not None and agg.round_tag != secret.round_tag:
        raise ValueError(
            f"stale secret: bundle round {agg.round_tag} != secret round "
            f"{secret.round_tag}"
        )
    r = secret.r
    upsilon = secret.upsilon
    odd_masks = secret.R[::2]
    if len(odd_masks) != len(agg.grads):
        raise ValueError("bundle layer count does not match secret")
    out = []
    for mask, g, s, f in zip(odd_masks, agg.grads, agg.psi, agg.phi):
        corr = np.einsum("n,noi->oi", r, s)
        out.append(mask * (g - corr + upsilon * f))
    return out


def mu_server(w_org: ModelParams, recovered: list, learning_rate: float) -> ModelParams:
    """Gradient step on the original model with the recovered aggregate."""
    if w_org.expanded:
        raise ValueError("expected an unexpanded model")
    if len(recovered) != len(w_org.weights):
        raise ValueError("recovered gradient count does not match model")
    weights = [w - learning_rate * g for w, g in zip(w_org.weights, recovered)]
    return ModelParams(w_org.layer_dims, weights, expanded=False)


def forge_consistent_model(w_hat: ModelParams, rng: RngStream, *,
                           truncation_len: int = 512):
    """Construct an alternative (model, secret) pair explaining ``w_hat``.

    Given a masked expanded model, draws a fresh secret whose even-layer
    masks are made consistent with the observed transitional diagonals and
    inverts the odd layers under it.  The returned original-form model is
    almost surely different from the true one, yet masking it with the
    returned secret reproduces ``w_hat`` exactly.  This witnesses that the
    masked model does not determine the true one.
    """
    if not w_hat.expanded:
        raise ValueError("expected an expanded (masked) model")
    dims = w_hat.layer_dims
    big_l = len(dims) - 1
    gamma = rng.child("gamma").gen.standard_normal(dims[-1])
    r_add = rng.child("r_add").gen.standard_normal(dims[-1])
    r_mags, r_signs, s_mags, s_signs = [], [], [], []
    for l in range(1, big_l):
        diag = np.diag(w_hat.weights[2 * l - 1])
        if np.any(diag <= 0):
            raise ValueError(
                "transitional diagonals must be positive; cannot forge a "
                "sign-masked model"
            )
        spec = _vector_spec(l, big_l, "r", truncation_len, True)
        r_new = np.abs(sample_dn_star(spec, rng.child("r", l), size=dims[l]))
        s_new = 1.0 / (diag * r_new)
        r_mags.append(r_new)
        r_signs.append(np.ones(dims[l]))
        s_mags.append(s_new)
        s_signs.append(np.ones(dims[l]))
    secret = PerturbationSecret(
        round_tag=0, layer_dims=dims, signed=False,
        r_mags=r_mags, r_signs=r_signs, s_mags=s_mags, s_signs=s_signs,
        gamma=gamma, r_add=r_add, R=[], R_add=np.empty(0),
    )
    secret.R = _build_masks(secret)
    secret.R_add = np.repeat((gamma * r_add)[:, None], dims[-2], axis=1)
    odd_weights = []
    for l in range(1, big_l + 1):
        mask = secret.R[2 * (l - 1)]
        if l < big_l:
            odd_weights.append(w_hat.weights[2 * (l - 1)] / mask)
        else:
            odd_weights.append((w_hat.weights[-1] - secret.R_add) / mask)
    w_alt = ModelParams(dims, odd_weights, expanded=False)
    return w_alt, secret
