"""Shared builders for denoiser tests."""

import numpy as np

from partforge.denoiser import Denoiser, DenoiserConfig, param_shapes
from partforge.tensor import Tensor

TINY = dict(depth=4, width=8, heads=2, tokens_per_part=2, max_parts=4, latent_dim=8, cond_width=6,
            time_freq_dim=16, mlp_ratio=2)


def random_model(seed=0, scale=0.3, **overrides) -> Denoiser:
    """A denoiser whose every parameter (gates and output head included) is random and non-zero."""
    cfg = DenoiserConfig(**{**TINY, **overrides})
    rng = np.random.default_rng(seed)
    params = {n: Tensor(rng.normal(scale=scale, size=s), requires_grad=True, name=n)
              for n, s in param_shapes(cfg).items()}
    return Denoiser(cfg, params)


def block_permute(Z, perm, K):
    """Reorder the K-token part blocks of Z (..., N*K, C) by ``perm``."""
    lead = Z.shape[:-2]
    N = Z.shape[-2] // K
    blocks = Z.reshape(lead + (N, K, Z.shape[-1]))
    return blocks[..., perm, :, :].reshape(Z.shape)
