"""Differentiable training terms for the two-step objective.

Step 1 minimizes ``info_nce(zc1, zc2) - beta * alignment(zc1, zc2)`` on
unit-normalized shared codes. Step 2 minimizes a contrastive loss between two
augmented views of ``[z_s^i, z_c^j]`` plus ``lam`` times a batch
orthogonality penalty between ``z_s^i`` and ``z_c^i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .numerics import autodiff as ad
from .numerics.mlp import Mlp


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    beta: float = 0.0
    lam: float = 0.0
    # kept for the record; with deterministic encoding it is absorbed into beta
    kappa: float = 1.0
    vmf_sampling: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.beta < 0 or self.lam < 0:
            raise ConfigError("beta and lambda must be >= 0")
        if self.kappa <= 0:
            raise ConfigError("kappa must be > 0")


def info_nce(za, zb, tau: float) -> ad.Node:
    """Symmetric in-batch InfoNCE; rows of ``za``/``zb`` are paired."""
    za, zb = ad.constant(za), ad.constant(zb)
    if za.shape[0] == 0:
        raise UsageError("info_nce needs at least one row")
    if za.shape != zb.shape:
        raise UsageError(f"paired batches differ in shape: {za.shape} vs {zb.shape}")
    logits = ad.scale(ad.matmul(za, ad.transpose(zb)), 1.0 / tau)
    pos = ad.diag(logits)
    a_to_b = ad.mean(ad.sub(ad.logsumexp(logits, axis=1), pos))
    b_to_a = ad.mean(ad.sub(ad.transpose(ad.logsumexp(logits, axis=0)), pos))
    return ad.scale(ad.add(a_to_b, b_to_a), 0.5)


def alignment(mu1, mu2) -> ad.Node:
    """Mean row-wise inner product of paired unit vectors."""
    return ad.mean(ad.sum_(ad.mul(mu1, mu2), axis=1))


def orthogonal_loss(zs, zc) -> ad.Node:
    """Frobenius norm of the ``d_s x d_c`` matrix of column cosine similarities."""
    zs, zc = ad.constant(zs), ad.constant(zc)
    if zs.shape[0] < 2:
        raise UsageError("orthogonal_loss needs a batch of at least 2")
    m = ad.matmul(ad.transpose(ad.l2_normalize_cols(zs)), ad.l2_normalize_cols(zc))
    return ad.frobenius_norm(m)


def sample_vmf(mu: ad.Node, kappa: float, rng: np.random.Generator) -> ad.Node:
    """Reparameterized vMF(mu, kappa) draw per row (Wood's rejection scheme).

    The radial component ``w`` is sampled independently of ``mu``; gradients
    flow through ``mu`` and through the tangent direction.
    """
    b_sz, d = mu.shape
    w = np.empty((b_sz, 1))
    c = np.sqrt(4.0 * kappa ** 2 + (d - 1) ** 2)
    b = (d - 1) / (2.0 * kappa + c)
    x0 = (1.0 - b) / (1.0 + b)
    k0 = kappa * x0 + (d - 1) * np.log(1.0 - x0 * x0)
    for i in range(b_sz):
        while True:
            eps = rng.beta((d - 1) / 2.0, (d - 1) / 2.0)
            cand = (1.0 - (1.0 + b) * eps) / (1.0 - (1.0 - b) * eps)
            u = rng.random()
            if kappa * cand + (d - 1) * np.log(1.0 - x0 * cand) - k0 >= np.log(u):
                w[i, 0] = cand
                break
    noise = ad.constant(rng.normal(size=(b_sz, d)))
    proj = ad.sub(noise, ad.mul(ad.sum_(ad.mul(noise, mu), axis=1), mu))
    tangent = ad.l2_normalize_rows(proj)
    return ad.add(ad.mul(w, mu), ad.mul(np.sqrt(1.0 - w * w), tangent))


def shared_codes(enc: Mlp, x) -> ad.Node:
    return ad.l2_normalize_rows(enc.forward(x))


def step1_loss(x1, x2, enc_c1: Mlp, enc_c2: Mlp, cfg: LossConfig,
               rng: np.random.Generator | None = None) -> ad.Node:
    mu1 = shared_codes(enc_c1, x1)
    mu2 = shared_codes(enc_c2, x2)
    z1, z2 = mu1, mu2
    if cfg.vmf_sampling:
        if rng is None:
            raise UsageError("vMF sampling needs a random stream")
        z1 = sample_vmf(mu1, cfg.kappa, rng)
        z2 = sample_vmf(mu2, cfg.kappa, rng)
    loss = info_nce(z1, z2, cfg.tau)
    if cfg.beta == 0.0:
        return loss
    return ad.sub(loss, ad.scale(alignment(mu1, mu2), cfg.beta))


def joint_info_nce(zs_a, zc_other_a, zs_b, zc_other_b, tau: float) -> ad.Node:
    """InfoNCE between two views of ``normalize([z_s, z_c_other])``."""
    ta = ad.l2_normalize_rows(ad.hstack([zs_a, zc_other_a]))
    tb = ad.l2_normalize_rows(ad.hstack([zs_b, zc_other_b]))
    return info_nce(ta, tb, tau)


def step2_terms(zs, zc, tau: float, with_orth: bool = True) -> tuple[ad.Node, ad.Node | None]:
    """Contrastive and orthogonality parts of the step-2 loss.

    ``zs[v][i]`` / ``zc[v][i]`` hold the specific / shared codes of modality
    ``i`` in {0, 1} for view ``v`` in {0, 1}.
    """
    nce = ad.add(
        joint_info_nce(zs[0][0], zc[0][1], zs[1][0], zc[1][1], tau),
        joint_info_nce(zs[0][1], zc[0][0], zs[1][1], zc[1][0], tau),
    )
    if not with_orth:
        return nce, None
    orth = None
    for v in (0, 1):
        for i in (0, 1):
            term = orthogonal_loss(zs[v][i], zc[v][i])
            orth = term if orth is None else ad.add(orth, term)
    return nce, ad.scale(orth, 0.5)


def step2_loss(views_a, views_b, enc_c, enc_s, cfg: LossConfig) -> ad.Node:
    """Step-2 objective with frozen shared encoders.

    ``views_a``/``views_b`` are ``(x1, x2)`` pairs of augmented observations;
    ``enc_c``/``enc_s`` are ``(modality1, modality2)`` encoder pairs. Shared
    codes are detached, so nothing reaches ``enc_c``.
    """
    zs, zc = [], []
    for x in (views_a, views_b):
        c = [ad.detach(shared_codes(enc_c[i], x[i])) for i in (0, 1)]
        s = [enc_s[i].forward(ad.hstack([ad.constant(x[i]), c[i]])) for i in (0, 1)]
        zs.append(s)
        zc.append(c)
    nce, orth = step2_terms(zs, zc, cfg.tau, with_orth=cfg.lam != 0.0)
    if orth is None:
        return nce
    return ad.add(nce, ad.scale(orth, cfg.lam))
