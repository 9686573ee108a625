"""
The variational semantic adaptor
================================

The semantic adaptor draws a latent vector from a diagonal Gaussian whose
parameters depend on the sentence pair (the prior) or on the pair together
with its label (the posterior).  Training pulls the two together with a
closed-form KL term.  Here we check both pieces against sampling.
"""

import math

import numpy as np

from mkpnet import tensorgrad as tg
from mkpnet.semantic import (GaussianParams, infer_latent, init_semantic_params, kl_closed_form,
                             posterior_params, prior_params, reparameterize)
from mkpnet.tensorgrad import Tensor

# KL(N(0, 4) || N(0, 1)) in closed form against a Monte-Carlo estimate.
q = GaussianParams(Tensor([0.0]), Tensor([math.log(4.0)]))
p = GaussianParams(Tensor([0.0]), Tensor([0.0]))
z = np.random.default_rng(1).normal(0, 2, size=100_000)
mc = np.mean(-0.5 * (np.log(8 * np.pi) + z ** 2 / 4) + 0.5 * (np.log(2 * np.pi) + z ** 2))
print(f"closed form {kl_closed_form(q, p).item():.6f}   sampled {mc:.6f}")

# Reparameterised draws: h = mu + exp(log_var / 2) * eps.
g = GaussianParams(Tensor([1.0, 2.0]), Tensor([0.0, math.log(4.0)]))
rng = np.random.default_rng(2)
draws = np.stack([reparameterize(g, rng).h_z.data for _ in range(10_000)])
print("sample mean", draws.mean(0).round(3), " sample variance", draws.var(0, ddof=1).round(3))

# Heads on top of an encoder output: the posterior sees a label embedding,
# the prior does not.  At test time the latent is the prior mean.
heads = {k: Tensor(v, requires_grad=True)
         for k, v in init_semantic_params(np.random.default_rng(3), d=16, d_label=8, d_z=4).items()}
h_cls = Tensor(np.random.default_rng(4).normal(size=(3, 16)))
h_y = Tensor(np.random.default_rng(5).normal(size=(3, 8)))
post, prior = posterior_params(h_cls, h_y, heads), prior_params(h_cls, heads)
kl = kl_closed_form(post, prior)
tg.backward(kl)
print("batch KL", round(kl.item(), 4), " |grad post.mu.W|", round(float(np.abs(heads["post.mu.W"].grad).sum()), 4))
print("inference latent (prior mean)\n", infer_latent(h_cls, heads).data.round(3))
