"""Local-global diffusion transformer over concatenated part token sets.

Blocks alternate between attention restricted to each part's K tokens
("local") and attention over all N*K tokens ("global"). Every block also
cross-attends to the condition tokens and is modulated by the timestep through
adaptive layer norm. U-ViT style long skips join block ``i`` to block
``depth - 1 - i`` by concatenation followed by a linear map.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError, ShapeError
from .latent import add_part_ids_tokens
from .tensor import Tensor

SCHEDULES = ("alternating", "middle", "sides", "local", "global")


@dataclass
class ConditionTokens:
    tokens: np.ndarray  # (M, cond_width)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ShapeError(f"condition tokens must be (M >= 1, width), got {self.tokens.shape}")


@dataclass
class DenoiserConfig:
    depth: int = 6
    width: int = 16
    heads: int = 2
    tokens_per_part: int = 16
    max_parts: int = 8
    latent_dim: int = 16
    cond_width: int = 16
    time_freq_dim: int = 128
    mlp_ratio: int = 4
    schedule: str | list = "alternating"
    id_injection: str = "input_only"
    cross_attention: str = "every_block"

    def __post_init__(self):
        for name in ("depth", "width", "heads", "tokens_per_part", "max_parts", "latent_dim",
                     "cond_width", "time_freq_dim", "mlp_ratio"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.time_freq_dim % 2:
            raise ConfigError("time_freq_dim must be even")
        if self.id_injection != "input_only":
            raise ConfigError(f"unsupported id_injection {self.id_injection!r}")
        if self.cross_attention != "every_block":
            raise ConfigError(f"unsupported cross_attention {self.cross_attention!r}")
        self.levels  # validates the schedule

    @property
    def levels(self) -> list[str]:
        return resolve_schedule(self.schedule, self.depth)

    def to_dict(self) -> dict:
        return asdict(self)


def resolve_schedule(schedule, depth: int) -> list[str]:
    """Per-block attention level for a named schedule or an explicit list."""
    if isinstance(schedule, (list, tuple)):
        levels = [str(s) for s in schedule]
        if len(levels) != depth or any(s not in ("local", "global") for s in levels):
            raise ConfigError(f"explicit schedule must list {depth} of 'local'/'global': {levels}")
        return levels
    if schedule not in SCHEDULES:
        raise ConfigError(f"unknown schedule {schedule!r}; expected one of {SCHEDULES}")
    if schedule in ("local", "global"):
        return [schedule] * depth
    if schedule == "alternating":
        return ["global" if i % 2 == 0 else "local" for i in range(depth)]
    n_global = (depth + 1) // 2
    if schedule == "middle":
        start = (depth - n_global) // 2
        chosen = set(range(start, start + n_global))
    else:  # sides
        head = (n_global + 1) // 2
        chosen = set(range(head)) | set(range(depth - (n_global - head), depth))
    return ["global" if i in chosen else "local" for i in range(depth)]


def skip_pairs(depth: int) -> dict[int, int]:
    """Map from a second-half block index to the first-half block feeding it."""
    return {depth - 1 - i: i for i in range(depth // 2)}


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    W, Cc, hidden = cfg.width, cfg.cond_width, cfg.width * cfg.mlp_ratio
    shapes: dict[str, tuple[int, ...]] = {
        "t_embed.fc1.w": (cfg.time_freq_dim, W), "t_embed.fc1.b": (W,),
        "t_embed.fc2.w": (W, W), "t_embed.fc2.b": (W,),
        "in_proj.w": (cfg.latent_dim, W), "in_proj.b": (W,),
        "part_ids": (cfg.max_parts, W),
    }
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes.update({
            p + "ada.w": (W, 6 * W), p + "ada.b": (6 * W,),
            p + "attn.qkv.w": (W, 3 * W), p + "attn.qkv.b": (3 * W,),
            p + "attn.out.w": (W, W), p + "attn.out.b": (W,),
            p + "norm_c.g": (W,), p + "norm_c.b": (W,),
            p + "cross.q.w": (W, W), p + "cross.q.b": (W,),
            p + "cross.kv.w": (Cc, 2 * W), p + "cross.kv.b": (2 * W,),
            p + "cross.out.w": (W, W), p + "cross.out.b": (W,),
            p + "mlp.fc1.w": (W, hidden), p + "mlp.fc1.b": (hidden,),
            p + "mlp.fc2.w": (hidden, W), p + "mlp.fc2.b": (W,),
        })
    for j in sorted(skip_pairs(cfg.depth)):
        shapes[f"skips.{j}.w"] = (2 * W, W)
        shapes[f"skips.{j}.b"] = (W,)
    shapes.update({
        "final.ada.w": (W, 2 * W), "final.ada.b": (2 * W,),
        "final.out.w": (W, cfg.latent_dim), "final.out.b": (cfg.latent_dim,),
    })
    return shapes


def _zero_init(name: str) -> bool:
    # adaLN-Zero: modulation and the final projection start at zero so an
    # untrained model is the identity on residuals and predicts v = 0.
    return name.endswith(".b") or ".ada." in name or name.startswith("final.out")


def init_params(cfg: DenoiserConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "part_ids":
            data = rng.standard_normal(shape) * 0.02
        elif name.endswith(".g"):
            data = np.ones(shape)
        elif _zero_init(name):
            data = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def timestep_features(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of ``1000 * t``; shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) * 1000.0
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, L, W = x.shape
    return T.permute(T.reshape(x, (B, L, heads, W // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, L, d = x.shape
    return T.reshape(T.permute(x, (0, 2, 1, 3)), (B, L, H * d))


def _attend(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    d = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d))
    return T.matmul(T.softmax_rows(scores, mask), v)


def _batched(fn):
    # Lets the attention helpers take a single (L, W) asset as well as (B, L, W).
    def wrapper(Z, *args, **kwargs):
        Z = T.as_tensor(Z)
        if Z.ndim == 2:
            out = fn(T.reshape(Z, (1,) + Z.shape), *args, **kwargs)
            return T.reshape(out, out.shape[1:])
        return fn(Z, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_batched
def global_attention(Z: Tensor, params: Mapping[str, Tensor], heads: int, mask=None) -> Tensor:
    """Multi-head self-attention over every token of the asset.

    ``params`` holds ``qkv.w``, ``qkv.b``, ``out.w`` and ``out.b``. ``mask`` is
    an optional boolean (L, L) admissibility matrix.
    """
    B, L, W = Z.shape
    qkv = T.linear(Z, params["qkv.w"], params["qkv.b"])
    qkv = T.permute(T.reshape(qkv, (B, L, 3, heads, W // heads)), (2, 0, 3, 1, 4))
    out = _attend(qkv[0], qkv[1], qkv[2], mask)
    return T.linear(_merge_heads(out), params["out.w"], params["out.b"])


@_batched
def local_attention(Z: Tensor, N: int, K: int, params: Mapping[str, Tensor], heads: int) -> Tensor:
    """Self-attention run independently inside each contiguous block of K tokens."""
    B, L, W = Z.shape
    if L != N * K:
        raise ShapeError(f"{L} tokens do not partition into {N} parts of {K}")
    out = global_attention(T.reshape(Z, (B * N, K, W)), params, heads)
    return T.reshape(out, (B, L, W))


@_batched
def cross_attention(Z: Tensor, cond, params: Mapping[str, Tensor], heads: int) -> Tensor:
    """Queries from the latent tokens, keys and values from the condition tokens.

    Each query attends independently, so running this once over all N*K tokens
    is the same as running it per part with shared keys and values.
    """
    B, L, W = Z.shape
    cond = T.as_tensor(cond)
    if cond.ndim == 2:
        cond = T.expand(cond, 0, B)
    if cond.shape[0] != B or cond.shape[1] < 1:
        raise ShapeError(f"condition {cond.shape} does not match batch {B}")
    q = _split_heads(T.linear(Z, params["q.w"], params["q.b"]), heads)
    kv = T.linear(cond, params["kv.w"], params["kv.b"])
    M = cond.shape[1]
    kv = T.permute(T.reshape(kv, (B, M, 2, heads, W // heads)), (2, 0, 3, 1, 4))
    out = _attend(q, kv[0], kv[1])
    return T.linear(_merge_heads(out), params["out.w"], params["out.b"])


def _sub(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    L = x.shape[1]
    return T.add(T.mul(x, T.add(T.expand(scale, 1, L), 1.0)), T.expand(shift, 1, L))


def dit_block(Z: Tensor, t_act: Tensor, cond, params: Mapping[str, Tensor], level: str,
              N: int, K: int, heads: int) -> Tensor:
    """Pre-norm residual block: adaLN, self-attention at ``level``, cross-attention, MLP.

    ``t_act`` is the activated timestep embedding (B, W); ``params`` are the
    block's own parameters with the ``blocks.{i}.`` prefix stripped.
    """
    W = Z.shape[-1]
    mod = T.linear(t_act, params["ada.w"], params["ada.b"])
    shift1, scale1, gate1, shift2, scale2, gate2 = (mod[:, i * W:(i + 1) * W] for i in range(6))
    L = Z.shape[1]

    h = _modulate(T.layer_norm(Z), shift1, scale1)
    attn = _sub(params, "attn.")
    if level == "local":
        h = local_attention(h, N, K, attn, heads)
    elif level == "global":
        h = global_attention(h, attn, heads)
    else:
        raise ConfigError(f"unknown attention level {level!r}")
    Z = T.add(Z, T.mul(T.expand(gate1, 1, L), h))

    h = T.layer_norm(Z, params["norm_c.g"], params["norm_c.b"])
    Z = T.add(Z, cross_attention(h, cond, _sub(params, "cross."), heads))

    h = _modulate(T.layer_norm(Z), shift2, scale2)
    h = T.linear(T.gelu(T.linear(h, params["mlp.fc1.w"], params["mlp.fc1.b"])),
                 params["mlp.fc2.w"], params["mlp.fc2.b"])
    return T.add(Z, T.mul(T.expand(gate2, 1, L), h))


class Denoiser:
    """Velocity predictor ``v(Z_t, t, c)`` with shape-checked parameters."""

    def __init__(self, config: DenoiserConfig, params: Mapping[str, Tensor]):
        expected = param_shapes(config)
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        if missing or extra:
            raise ShapeError(f"parameter names mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeError(f"{name}: shape {params[name].shape} != expected {shape}")
            if not np.all(np.isfinite(params[name].data)):
                raise ShapeError(f"{name}: non-finite values")
        self.config = config
        self.params = {name: params[name] for name in expected}
        self.levels = config.levels
        self.skips = skip_pairs(config.depth)

    @classmethod
    def create(cls, config: DenoiserConfig, seed: int = 0) -> "Denoiser":
        return cls(config, init_params(config, seed))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def time_embedding(self, t) -> Tensor:
        p = self.params
        feats = Tensor(timestep_features(t, self.config.time_freq_dim))
        h = T.gelu(T.linear(feats, p["t_embed.fc1.w"], p["t_embed.fc1.b"]))
        return T.linear(h, p["t_embed.fc2.w"], p["t_embed.fc2.b"])

    def __call__(self, Zt, t, cond, slots=None) -> Tensor:
        return self.forward(Zt, t, cond, slots)

    def forward(self, Zt, t, cond, slots=None) -> Tensor:
        """Predict the velocity for noisy tokens ``Zt``.

        Batched: ``Zt`` (B, N*K, latent_dim), ``t`` (B,), ``cond`` (B, M, cond_width).
        Unbatched: ``Zt`` (N*K, latent_dim), scalar ``t``, ``cond`` (M, cond_width).
        ``slots`` gives the identity row for each part block (default 0..N-1).
        """
        cfg, p = self.config, self.params
        Zt = T.as_tensor(Zt)
        unbatched = Zt.ndim == 2
        if unbatched:
            Zt = T.reshape(Zt, (1,) + Zt.shape)
            cond = T.as_tensor(cond)
            cond = T.reshape(cond, (1,) + cond.shape)
        B, L, C = Zt.shape
        if C != cfg.latent_dim:
            raise ShapeError(f"latent width {C} != config latent_dim {cfg.latent_dim}")
        K = cfg.tokens_per_part
        if L % K:
            raise ShapeError(f"{L} tokens is not a multiple of tokens_per_part={K}")
        N = L // K
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if t.shape == (1,) and B > 1:
            t = np.full(B, t[0])
        if t.shape != (B,):
            raise ShapeError(f"expected one noise level per asset ({B}), got shape {t.shape}")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise DomainError(f"t outside [0, 1]: {t}")
        slots = np.arange(N) if slots is None else np.asarray(slots, dtype=np.int64)
        if slots.shape != (N,):
            raise ShapeError(f"need {N} slots, got {slots.shape}")

        x = T.linear(Zt, p["in_proj.w"], p["in_proj.b"])
        x = add_part_ids_tokens(x, slots, K, p["part_ids"])
        t_act = T.gelu(self.time_embedding(t))

        saved: list[Tensor] = []
        half = cfg.depth // 2
        for i, level in enumerate(self.levels):
            if i in self.skips:
                x = T.linear(T.concat([x, saved.pop()], axis=-1), p[f"skips.{i}.w"], p[f"skips.{i}.b"])
            x = dit_block(x, t_act, cond, _sub(p, f"blocks.{i}."), level, N, K, cfg.heads)
            if i < half:
                saved.append(x)

        mod = T.linear(t_act, p["final.ada.w"], p["final.ada.b"])
        W = cfg.width
        x = _modulate(T.layer_norm(x), mod[:, :W], mod[:, W:])
        v = T.linear(x, p["final.out.w"], p["final.out.b"])
        return T.reshape(v, v.shape[1:]) if unbatched else v


def config_from_dict(d: Mapping) -> DenoiserConfig:
    known = DenoiserConfig.__dataclass_fields__
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown model keys: {unknown}")
    return DenoiserConfig(**dict(d))
