"""Client side: local training on the masked model plus distributed DP noise.

A client computes its clipped batch gradients on the masked expanded model,
then adds two kinds of noise to the gradients (never to the correction
terms): pairwise-correlated noise shared with each neighbour, which cancels
exactly in the server's aggregate, and independent noise, which survives
aggregation at variance sigma_eta^2 / K.  Entries of both noises follow the
scale-carrying factor distribution DN(sigma, 1), so that after the server
removes the multiplicative masking the surviving noise is exactly Gaussian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dist import DnSpec, sample_dn
from .nn import GradBundle, ModelParams, batch_gradients, clip_bundle
from .rng import RngStream

__all__ = [
    "ClientBundle",
    "draw_independent_noise",
    "draw_pairwise_noise",
    "local_gradients",
    "apply_ddp_noise",
    "local_round",
]

logger = logging.getLogger(__name__)


@dataclass
class ClientBundle:
    """One client's round output: noisy gradients plus correction terms."""

    client_id: int
    round: int
    grads: list
    psi: list
    phi: list


def draw_independent_noise(shape, sigma_eta: float, rng: RngStream) -> np.ndarray:
    """Matrix of i.i.d. DN(sigma_eta, 1) entries; zeros when sigma_eta is 0."""
    if sigma_eta < 0:
        raise ValueError(f"sigma_eta must be >= 0, got {sigma_eta}")
    if sigma_eta == 0:
        return np.zeros(shape)
    flat = sample_dn(DnSpec(sigma=sigma_eta, n=1), rng, size=int(np.prod(shape)))
    return flat.reshape(shape)


def draw_pairwise_noise(k: int, v: int, round_index: int, shared_seed: int,
                        sigma_delta: float, shapes) -> list:
    """Per-layer correlated noise for the edge {k, v}, antisymmetric in (k, v).

    Both endpoints derive the same matrices from the shared edge seed; the
    lower id takes them as drawn and the higher id their negation, so the
    two contributions cancel bitwise.
    """
    if k == v:
        raise ValueError(f"pairwise noise needs two distinct clients, got {k}")
    if sigma_delta < 0:
        raise ValueError(f"sigma_delta must be >= 0, got {sigma_delta}")
    lo, hi = min(k, v), max(k, v)
    if sigma_delta == 0:
        return [np.zeros(shape) for shape in shapes]
    stream = RngStream(shared_seed, ("pairwise", round_index, lo, hi))
    spec = DnSpec(sigma=sigma_delta, n=1)
    out = []
    for shape in shapes:
        mat = sample_dn(spec, stream, size=int(np.prod(shape))).reshape(shape)
        out.append(mat if k == lo else -mat)
    return out


def local_gradients(w_hat: ModelParams, x: np.ndarray, y: np.ndarray,
                    clip_threshold: float) -> GradBundle:
    """Clipped batch gradients and correction terms on the masked model."""
    return clip_bundle(batch_gradients(w_hat, x, y), clip_threshold)


def apply_ddp_noise(bundle: GradBundle, client_id: int, round_index: int,
                    neighbors, sigma_eta: float, sigma_delta: float,
                    rng: RngStream) -> list:
    """Noisy gradient matrices: bundle gradients plus pairwise and independent noise.

    ``neighbors`` is a sequence of (neighbor_id, shared_seed) pairs.  The
    correction terms are not noised.  Returns new gradient matrices; the
    bundle is left untouched.
    """
    if sigma_delta > 0 and not neighbors:
        logger.warning(
            "client %d has no neighbours in round %d; pairwise noise "
            "contributes nothing", client_id, round_index,
        )
    shapes = [g.shape for g in bundle.grads]
    noisy = [g.copy() for g in bundle.grads]
    for v, seed in sorted(neighbors):
        deltas = draw_pairwise_noise(client_id, v, round_index, seed,
                                     sigma_delta, shapes)
        for g, d in zip(noisy, deltas):
            g += d
    for i, shape in enumerate(shapes):
        noisy[i] += draw_independent_noise(shape, sigma_eta,
                                           rng.child("eta", i))
    return noisy


def local_round(w_hat: ModelParams, x: np.ndarray, y: np.ndarray, *,
                client_id: int, round_index: int, neighbors, sigma_eta: float,
                sigma_delta: float, clip_threshold: float,
                rng: RngStream) -> ClientBundle:
    """Full client round: train, clip, add both noise kinds, emit the bundle."""
    bundle = local_gradients(w_hat, x, y, clip_threshold)
    noisy = apply_ddp_noise(bundle, client_id, round_index, neighbors,
                            sigma_eta, sigma_delta, rng)
    return ClientBundle(client_id=client_id, round=round_index, grads=noisy,
                        psi=bundle.psi, phi=bundle.phi)
