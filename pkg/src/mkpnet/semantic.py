"""Semantic adaptor: conditional-VAE latent over an instance pair.

Two independently parameterised heads map to diagonal Gaussians over the
latent ``h_z``.  The posterior sees ``[h_cls; h_y]`` (pair encoding plus the
gold fine-label embedding), the prior sees ``h_cls`` alone.  Each head is

    h' = tanh(W_z x + b_z)
    mu = W_mu h' + b_mu
    log_var = W_sigma h' + b_sigma
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorgrad as tg
from .tensorgrad import Tensor

LOG_VAR_RANGE = (-8.0, 8.0)


@dataclass
class GaussianParams:
    mu: Tensor
    log_var: Tensor

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass
class LatentSample:
    h_z: Tensor
    eps: np.ndarray


def init_head(rng, n_in: int, d_z: int, hidden: int | None = None) -> dict:
    hidden = hidden or d_z
    out = {}
    for name, (a, b) in {"z": (n_in, hidden), "mu": (hidden, d_z), "sigma": (hidden, d_z)}.items():
        lim = np.sqrt(6.0 / (a + b))
        out[f"{name}.W"] = rng.uniform(-lim, lim, size=(a, b))
        out[f"{name}.b"] = np.zeros(b)
    return out


def init_semantic_params(rng, d: int, d_label: int, d_z: int) -> dict:
    """Posterior and prior heads under ``post.*`` / ``prior.*`` names."""
    params = {f"post.{k}": v for k, v in init_head(rng, d + d_label, d_z).items()}
    params.update({f"prior.{k}": v for k, v in init_head(rng, d, d_z).items()})
    return params


def _gaussian_head(x: Tensor, heads: dict, prefix: str) -> GaussianParams:
    W = heads[f"{prefix}.z.W"]
    if x.shape[-1] != W.shape[0]:
        raise tg.ShapeError(f"{prefix} head expects input dim {W.shape[0]}, got {x.shape[-1]}")
    h = tg.tanh(tg.add(tg.matmul(x, W), heads[f"{prefix}.z.b"]))
    mu = tg.add(tg.matmul(h, heads[f"{prefix}.mu.W"]), heads[f"{prefix}.mu.b"])
    log_var = tg.add(tg.matmul(h, heads[f"{prefix}.sigma.W"]), heads[f"{prefix}.sigma.b"])
    return GaussianParams(mu, tg.clamp(log_var, *LOG_VAR_RANGE))


def _rows(x: Tensor) -> Tensor:
    return x if x.data.ndim == 2 else tg.reshape(x, (1, -1))


def posterior_params(h_cls: Tensor, h_y: Tensor, heads: dict) -> GaussianParams:
    """q(h_z | h_cls, h_y).  Accepts single vectors or ``[B, .]`` batches."""
    h_cls, h_y = _rows(h_cls), _rows(h_y)
    if h_cls.shape[0] != h_y.shape[0]:
        raise tg.ShapeError(f"posterior_params: batch sizes {h_cls.shape[0]} and {h_y.shape[0]}")
    return _gaussian_head(tg.concat([h_cls, h_y]), heads, "post")


def prior_params(h_cls: Tensor, heads: dict) -> GaussianParams:
    """p(h_z | h_cls)."""
    return _gaussian_head(_rows(h_cls), heads, "prior")


def reparameterize(g: GaussianParams, rng: np.random.Generator, eps: np.ndarray | None = None) -> LatentSample:
    """h_z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from ``rng``.

    Passing ``eps`` replays a recorded draw instead of sampling.
    """
    if eps is None:
        eps = rng.standard_normal(g.mu.shape).astype(g.mu.data.dtype)
    eps = np.asarray(eps, dtype=g.mu.data.dtype)
    if eps.shape != g.mu.shape:
        raise tg.ShapeError(f"reparameterize: eps {eps.shape} vs mu {g.mu.shape}")
    sigma = tg.exp(tg.multiply(g.log_var, 0.5))
    return LatentSample(tg.add(g.mu, tg.multiply(sigma, Tensor(eps))), eps)


def kl_closed_form(q: GaussianParams, p: GaussianParams, reduce: str = "mean") -> Tensor:
    """KL(q || p) between diagonal Gaussians, summed over latent dims.

    For batched parameters the per-instance values are averaged
    (``reduce="mean"``) or returned as a ``[B]`` vector (``reduce="none"``).
    """
    if q.mu.shape != p.mu.shape or q.log_var.shape != p.log_var.shape:
        raise tg.ShapeError(f"kl_closed_form: shapes {q.mu.shape} and {p.mu.shape}")
    var_ratio = tg.exp(tg.sub(q.log_var, p.log_var))
    diff = tg.sub(q.mu, p.mu)
    mahal = tg.multiply(tg.multiply(diff, diff), tg.exp(tg.multiply(p.log_var, -1.0)))
    terms = tg.sub(tg.add(tg.sub(p.log_var, q.log_var), tg.add(var_ratio, mahal)), 1.0)
    per_item = tg.multiply(tg.tsum(terms, axis=-1), 0.5)
    if reduce == "none" or per_item.shape == ():
        return per_item
    return tg.mean(per_item)


def infer_latent(h_cls: Tensor, heads: dict) -> Tensor:
    """Test-time latent: the prior mean, no sampling."""
    return prior_params(h_cls, heads).mu
