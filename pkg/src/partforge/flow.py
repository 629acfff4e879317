"""Rectified flow matching over part latents.

The noisy latent is ``Z_t = t * Z0 + (1 - t) * eps`` and the network regresses
the velocity ``eps - Z0``. Sampling therefore starts from noise at ``t = 0``
and steps towards data at ``t = 1`` with ``Z <- Z - dt * v``. One ``t`` is
drawn per asset and shared by all of its parts.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .dataset import CanonicalAsset, encode_condition, encode_monolithic, encode_toy
from .errors import ConfigError, ContractError, NumericError
from .latent import AssetLatent, interpolate, shuffle_parts, split
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainingPlan:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    monolithic_fraction: float = 0.30
    shuffle_parts: bool = True
    bucketing: str = "by_part_count"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.monolithic_fraction <= 1.0:
            raise ConfigError("monolithic_fraction must lie in [0, 1]")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.bucketing != "by_part_count":
            raise ConfigError(f"unsupported bucketing policy {self.bucketing!r}")


@dataclass
class SamplerConfig:
    num_steps: int = 50

    def __post_init__(self):
        if self.num_steps < 1:
            raise ConfigError("num_steps must be >= 1")


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_shared_t(t, batch: int | None):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim > 1:
        raise ContractError(f"noise level must be shared across parts: got t of shape {t.shape}")
    if batch is None and t.ndim != 0:
        raise ContractError("an unbatched latent takes a scalar t")
    if batch is not None and t.shape not in ((), (batch,)):
        raise ContractError(f"need one t per asset ({batch}), got shape {t.shape}")
    return t


def flow_loss(Z0, eps, t, cond, model: Callable) -> Tensor:
    """Mean squared error between ``eps - Z0`` and the model's velocity at ``Z_t``.

    The mean runs over every entry of the N*K x C latent (and the batch).
    """
    Z0, eps = _as_array(Z0), _as_array(eps)
    t = _check_shared_t(t, Z0.shape[0] if Z0.ndim == 3 else None)
    Zt = interpolate(Z0, eps, t)
    v = T.as_tensor(model(Zt, t, cond))
    return T.mean_all(T.square(T.sub(v, eps - Z0)))


def sample_time(rng: np.random.Generator, size: int | None = None):
    """t ~ U[0, 1], one draw per asset."""
    return rng.random(size)


def euler_sample_batch(conds, N: int, model: Callable, config: SamplerConfig | None = None,
                       rng: np.random.Generator | None = None, K: int | None = None, C: int | None = None,
                       init=None) -> list[AssetLatent]:
    """Integrate from Gaussian noise at t=0 to t=1 for a batch of conditions."""
    config = config or SamplerConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    mcfg = getattr(model, "config", None)
    K = K or mcfg.tokens_per_part
    C = C or mcfg.latent_dim
    if mcfg is not None and N > mcfg.max_parts:
        raise ConfigError(f"N={N} exceeds the model's max_parts={mcfg.max_parts}")
    conds = np.asarray(conds, dtype=np.float64)
    B = conds.shape[0]
    Z = rng.standard_normal((B, N * K, C)) if init is None else np.array(init, dtype=np.float64).reshape(B, N * K, C)
    dt = 1.0 / config.num_steps
    with T.no_grad():
        for i in range(config.num_steps):
            t = np.full(B, i * dt)
            v = _as_array(model(Z, t, conds))
            Z = Z - dt * v
    if not np.all(np.isfinite(Z)):
        raise NumericError("sampler produced non-finite latents")
    return [split(z, N, K) for z in Z]


def euler_sample(cond, N: int, model: Callable, config: SamplerConfig | None = None,
                 rng: np.random.Generator | None = None, K: int | None = None, C: int | None = None,
                 init=None) -> AssetLatent:
    cond = np.asarray(getattr(cond, "tokens", cond), dtype=np.float64)
    if init is not None:
        init = np.asarray(init)[None]
    return euler_sample_batch(cond[None], N, model, config, rng, K, C, init)[0]


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, float32_state: bool = False):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        # Round parameters and moments to float32 after every step so a
        # float32 checkpoint holds the exact training state.
        self.float32_state = float32_state
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.float32_state:
                p.data = _f32(p.data)
                self.m[k], self.v[k] = _f32(self.m[k]), _f32(self.v[k])

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(state["m"][k], dtype=np.float64) for k in self.params}
        self.v = {k: np.array(state["v"][k], dtype=np.float64) for k in self.params}


def _f32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


@dataclass
class TrainingExample:
    asset_id: str
    latent: AssetLatent
    cond: np.ndarray
    monolithic: AssetLatent | None = None

    @property
    def N(self) -> int:
        return self.latent.N


def build_examples(assets, K: int, C: int, cond_width: int, seed: int = 0, ids=None) -> list[TrainingExample]:
    """Encode canonical assets into latents, monolithic latents and condition tokens."""
    out = []
    for i, asset in enumerate(assets):
        if not isinstance(asset, CanonicalAsset):
            raise ContractError("build_examples expects CanonicalAsset items")
        aid = ids[i] if ids is not None else f"asset_{i}"
        out.append(TrainingExample(
            aid,
            encode_toy(asset, K, C, seed=seed * 100_003 + i),
            encode_condition(asset, cond_width).tokens,
            encode_monolithic(asset, K, C, seed=seed * 100_003 + i),
        ))
    return out


@dataclass
class TrainState:
    step: int
    optimizer: Adam
    trace: list


def _draw_batch(examples, plan: TrainingPlan, rng: np.random.Generator):
    mono_pool = [e for e in examples if e.monolithic is not None]
    use_mono = bool(mono_pool) and rng.random() < plan.monolithic_fraction
    if use_mono:
        pool = mono_pool
        pick = rng.choice(len(pool), size=plan.batch_size, replace=len(pool) < plan.batch_size)
        latents = [pool[i].monolithic for i in pick]
    else:
        # bucket by part count, chosen in proportion to bucket size
        n = examples[rng.integers(len(examples))].N
        pool = [e for e in examples if e.N == n]
        pick = rng.choice(len(pool), size=plan.batch_size, replace=len(pool) < plan.batch_size)
        latents = [pool[i].latent for i in pick]
    if plan.shuffle_parts:
        latents = [shuffle_parts(z, rng) for z in latents]
    Z0 = np.stack([z.concat() for z in latents])
    cond = np.stack([pool[i].cond for i in pick])
    return Z0, cond, latents[0].N


def train(examples, plan: TrainingPlan, model, state: TrainState | None = None,
          on_step: Callable | None = None, float32_state: bool = False) -> TrainState:
    """Minimise the flow loss with Adam for ``plan.steps`` total steps.

    Step ``s`` draws everything from ``default_rng([plan.seed, s])``, so a run
    resumed from a saved state replays the same batches.
    """
    if not examples:
        raise ContractError("no training examples")
    if state is None:
        state = TrainState(0, Adam(model.params, plan.lr, plan.beta1, plan.beta2, plan.eps, float32_state), [])
    opt = state.optimizer
    for step in range(state.step, plan.steps):
        rng = np.random.default_rng([plan.seed, step])
        Z0, cond, n = _draw_batch(examples, plan, rng)
        eps = rng.standard_normal(Z0.shape)
        t = sample_time(rng, Z0.shape[0])
        opt.zero_grad()
        loss = flow_loss(Z0, eps, t, cond, model)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at step {step}; batch seed = [{plan.seed}, {step}]")
        T.backward(loss)
        opt.step()
        row = {"step": step, "loss": value, "t_mean": float(t.mean()), "n_hist": f"{n}:{Z0.shape[0]}"}
        state.trace.append(row)
        state.step = step + 1
        if on_step is not None:
            on_step(row)
    return state


def plan_dict(plan: TrainingPlan) -> dict:
    return asdict(plan)


def n_histogram(trace) -> dict:
    counts: Counter = Counter()
    for row in trace:
        n, b = row["n_hist"].split(":")
        counts[int(n)] += int(b)
    return dict(sorted(counts.items()))
