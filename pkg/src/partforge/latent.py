"""Compositional latent space: one K x C token set per part, bound to a slot."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CapacityError, ContractError, DomainError, ShapeError
from .tensor import Tensor


@dataclass
class PartTokenSet:
    tokens: np.ndarray  # (K, C)
    slot: int


@dataclass
class AssetLatent:
    parts: list[PartTokenSet] = field(default_factory=list)

    def __post_init__(self):
        if not self.parts:
            raise ContractError("an asset latent needs at least one part")
        k, c = self.parts[0].tokens.shape
        for p in self.parts:
            if p.tokens.shape != (k, c):
                raise ShapeError(f"part token sets differ in shape: {p.tokens.shape} vs {(k, c)}")
        slots = [p.slot for p in self.parts]
        if len(set(slots)) != len(slots):
            raise ContractError(f"duplicate slots {slots}")

    @property
    def N(self) -> int:
        return len(self.parts)

    @property
    def K(self) -> int:
        return self.parts[0].tokens.shape[0]

    @property
    def C(self) -> int:
        return self.parts[0].tokens.shape[1]

    @property
    def slots(self) -> np.ndarray:
        return np.array([p.slot for p in self.parts], dtype=np.int64)

    def concat(self) -> np.ndarray:
        return concat(self)


def concat(asset: AssetLatent) -> np.ndarray:
    """Stack part token sets into one (N*K, C) matrix, part-major."""
    return np.concatenate([p.tokens for p in asset.parts], axis=0)


def split(Z: np.ndarray, N: int, K: int, slots=None) -> AssetLatent:
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[0] != N * K:
        raise ShapeError(f"cannot split {Z.shape} into {N} parts of {K} tokens")
    slots = range(N) if slots is None else slots
    return AssetLatent([PartTokenSet(Z[i * K:(i + 1) * K].copy(), int(s)) for i, s in enumerate(slots)])


class PartIdentityTable:
    """Learnable per-slot embeddings ``e_i``, one row per possible slot."""

    def __init__(self, embeddings):
        self.embeddings = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings, requires_grad=True)
        if self.embeddings.ndim != 2:
            raise ShapeError("identity table must be (N_max, C)")

    @classmethod
    def random(cls, max_parts: int, width: int, rng: np.random.Generator, std: float = 0.02):
        return cls(Tensor(rng.standard_normal((max_parts, width)) * std, requires_grad=True, name="part_ids"))

    @property
    def max_parts(self) -> int:
        return self.embeddings.shape[0]


def add_part_ids_tokens(Z: Tensor, slots, K: int, table: Tensor) -> Tensor:
    """Differentiable ``z_i + e_{slot(i)}`` on concatenated tokens.

    ``Z`` is (..., N*K, C); ``slots[i]`` is the identity row for block ``i``.
    """
    slots = np.asarray(slots, dtype=np.int64)
    n = len(slots)
    if Z.shape[-2] != n * K:
        raise ShapeError(f"{Z.shape[-2]} tokens do not form {n} blocks of {K}")
    if slots.size and (slots.min() < 0 or slots.max() >= table.shape[0]):
        raise CapacityError(f"slot {int(slots.max())} exceeds identity table capacity {table.shape[0]}")
    ids = T.gather_rows(table, slots)  # (N, C)
    ids = T.reshape(T.expand(ids, 1, K), (n * K, table.shape[1]))
    return T.add(Z, ids)


def add_part_ids(asset: AssetLatent, table: PartIdentityTable) -> AssetLatent:
    out = add_part_ids_tokens(Tensor(asset.concat()), asset.slots, asset.K, table.embeddings)
    return split(out.data, asset.N, asset.K, slots=asset.slots)


def shuffle_parts(asset: AssetLatent, rng: np.random.Generator) -> AssetLatent:
    """Reorder part data by a uniform permutation and reassign slots 0..N-1.

    Identity embeddings are slot-positional, so after shuffling a part's data
    meets whichever embedding belongs to the slot it landed in.
    """
    perm = rng.permutation(asset.N)
    return AssetLatent([PartTokenSet(asset.parts[j].tokens, i) for i, j in enumerate(perm)])


def interpolate(Z0, eps, t):
    """``t * Z0 + (1 - t) * eps``; ``t`` is a scalar or one value per asset.

    For batched input of shape (B, ...), ``t`` of shape (B,) is broadcast over
    every token of its asset.
    """
    Z0 = np.asarray(Z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if Z0.shape != eps.shape:
        raise ShapeError(f"interpolate: {Z0.shape} vs {eps.shape}")
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"noise level outside [0, 1]: {t}")
    if t.ndim == 1:
        if Z0.ndim < 2 or t.shape[0] != Z0.shape[0]:
            raise ShapeError(f"per-asset t of shape {t.shape} does not match batch {Z0.shape}")
        t = t.reshape((-1,) + (1,) * (Z0.ndim - 1))
    elif t.ndim > 1:
        raise ContractError("one noise level per asset; got a multi-dimensional t")
    return t * Z0 + (1.0 - t) * eps
