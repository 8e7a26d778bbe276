"""Masked flow-matching trunk and its Euler sampler.

The model regresses the straight-path velocity x1 - x0 on masked frames.
Each residual block modulates per-frame features with a learned time
embedding and the frozen identity embedding of the prompt; the hidden
state after every block is exposed as a tap so later stages can attach
per-layer supervision and representation probes.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tz
from .errors import ConfigurationError, IntegrityError, ShapeMismatchError
from .serialize import save_checkpoint, load_checkpoint
from .synth import PAD_TOKEN
from .tensor import Tensor

_REIMPOSE_MODES = ("per_step", "at_end")


@dataclass
class FlowConfig:
    feat_dim: int = 24
    hidden: int = 64
    n_blocks: int = 12
    vocab: int = 32
    token_embed_dim: int = 16
    cond_dim: int = 32
    time_embed_dim: int = 64
    frames_per_token: int = 4
    frame_mixing: bool = False
    mix_width: int = 2
    sandwich: bool = False  # adds 2+2 untapped blocks around the stack
    reimpose_prompt: str = "per_step"
    seed: int = 0

    def validate(self):
        if self.hidden < 1 or self.n_blocks < 1:
            raise ConfigurationError("hidden and n_blocks must be positive")
        if self.time_embed_dim % 2:
            raise ConfigurationError("time_embed_dim must be even")
        if self.reimpose_prompt not in _REIMPOSE_MODES:
            raise ConfigurationError(
                f"reimpose_prompt must be one of {_REIMPOSE_MODES}"
            )


def sinusoidal_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sin/cos features of scalar times in [0, 1], shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    ang = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _box_mix_matrix(T: int, width: int) -> np.ndarray:
    idx = np.arange(T)
    m = (np.abs(idx[:, None] - idx[None, :]) <= width).astype(np.float64)
    return m / m.sum(axis=1, keepdims=True)


class FlowModel:
    """Per-frame residual MLP stack with time and identity modulation."""

    def __init__(self, config: FlowConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 40427]))
        H, D = config.hidden, config.feat_dim

        def init(shape, fan_in, scale=1.0):
            return Tensor(
                rng.normal(0.0, scale / np.sqrt(fan_in), size=shape), requires_grad=True
            )

        p = {}
        p["in_w"] = init((D + 1, H), D + 1)  # +1 mask channel
        p["in_b"] = Tensor(np.zeros(H), requires_grad=True)
        p["tok_table"] = init((config.vocab, config.token_embed_dim), 1.0)
        p["tok_w"] = init((config.token_embed_dim, H), config.token_embed_dim)
        p["cond_w"] = init((config.cond_dim, H), config.cond_dim)
        p["cond_b"] = Tensor(np.zeros(H), requires_grad=True)
        p["time_w1"] = init((config.time_embed_dim, H), config.time_embed_dim)
        p["time_b1"] = Tensor(np.zeros(H), requires_grad=True)
        p["time_w2"] = init((H, H), H)
        p["time_b2"] = Tensor(np.zeros(H), requires_grad=True)
        def block_params(name):
            p[f"{name}_w1"] = init((H, H), H)
            p[f"{name}_b1"] = Tensor(np.zeros(H), requires_grad=True)
            p[f"{name}_ut"] = init((H, H), H)
            p[f"{name}_uc"] = init((H, H), H)
            # small-scale residual branch keeps the initial stack near identity
            p[f"{name}_w2"] = init((H, H), H, scale=0.1)
            p[f"{name}_b2"] = Tensor(np.zeros(H), requires_grad=True)

        if config.sandwich:
            for i in range(2):
                block_params(f"pre{i}")
        for i in range(config.n_blocks):
            block_params(f"blk{i}")
        if config.sandwich:
            for i in range(2):
                block_params(f"post{i}")
        p["out_w"] = init((H, D), H, scale=0.1)
        p["out_b"] = Tensor(np.zeros(D), requires_grad=True)
        self.params = p
        self._mix_cache = {}

    @property
    def n_taps(self) -> int:
        return self.config.n_blocks

    def _frame_token_ids(self, cond_tokens: np.ndarray, T: int, valid_len) -> np.ndarray:
        """Token id per frame, PAD beyond each item's valid frames."""
        fpt = self.config.frames_per_token
        Tc = cond_tokens.shape[1]
        cols = np.minimum(np.arange(T) // fpt, Tc - 1)
        ids = cond_tokens[:, cols]
        beyond = np.arange(T)[None, :] >= np.asarray(valid_len)[:, None]
        return np.where(beyond, PAD_TOKEN, ids)

    def forward(self, x_t, t, cond, cond_tokens, mask, valid_len):
        """Velocity field and per-block taps.

        Args:
            x_t: (B, T, feat_dim) current state, zeros on padding.
            t: (B,) times in [0, 1].
            cond: (B, cond_dim) frozen identity embeddings.
            cond_tokens: (B, T_c) ints, PAD_TOKEN after each item's tokens.
            mask: (B, T) 1 on frames being generated.
            valid_len: (B,) frames per item.

        Returns:
            (v, taps) where v is a (B, T, feat_dim) tensor and taps is the
            list of (B, T, hidden) hidden states after every block.
        """
        x_t = np.asarray(x_t, dtype=np.float64)
        B, T, D = x_t.shape
        if D != self.config.feat_dim:
            raise ShapeMismatchError(f"feat_dim {D} != {self.config.feat_dim}")
        if np.asarray(cond).shape != (B, self.config.cond_dim):
            raise ShapeMismatchError(
                f"cond must be (B, {self.config.cond_dim}), got {np.asarray(cond).shape}"
            )
        p = self.params
        xin = Tensor(np.concatenate([x_t, np.asarray(mask, dtype=np.float64)[..., None]], axis=-1))
        h = tz.affine(xin, p["in_w"], p["in_b"])

        ids = self._frame_token_ids(np.asarray(cond_tokens), T, valid_len)
        live = (ids != PAD_TOKEN).astype(np.float64)[..., None]
        tok = tz.embedding(p["tok_table"], np.maximum(ids, 0))
        tok = tz.affine(tok * Tensor(live), p["tok_w"], Tensor(np.zeros(self.config.hidden)))
        h = h + tok

        tfeat = Tensor(sinusoidal_features(t, self.config.time_embed_dim))
        et = tz.affine(
            tz.tanh(tz.affine(tfeat, p["time_w1"], p["time_b1"])), p["time_w2"], p["time_b2"]
        )
        ec = tz.affine(Tensor(np.asarray(cond, dtype=np.float64)), p["cond_w"], p["cond_b"])

        if self.config.frame_mixing and T not in self._mix_cache:
            self._mix_cache[T] = _box_mix_matrix(T, self.config.mix_width)

        H = self.config.hidden

        def block(h, name):
            z = (et @ p[f"{name}_ut"]) + (ec @ p[f"{name}_uc"])
            pre = tz.affine(h, p[f"{name}_w1"], p[f"{name}_b1"]) + z.reshape(B, 1, H)
            a = tz.tanh(pre)
            if self.config.frame_mixing:
                a = tz.time_mix(a, self._mix_cache[T])
            return h + tz.affine(a, p[f"{name}_w2"], p[f"{name}_b2"])

        if self.config.sandwich:
            for i in range(2):
                h = block(h, f"pre{i}")
        taps = []
        for i in range(self.config.n_blocks):
            h = block(h, f"blk{i}")
            taps.append(h)
        if self.config.sandwich:
            for i in range(2):
                h = block(h, f"post{i}")

        v = tz.affine(h, p["out_w"], p["out_b"])
        return v, taps

    def save(self, path) -> str:
        meta = {"kind": "flow-model", "config": asdict(self.config)}
        return save_checkpoint(self.params, path, meta)

    @staticmethod
    def load(path) -> "FlowModel":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "flow-model":
            raise IntegrityError(f"not a flow checkpoint: {meta.get('kind')}")
        model = FlowModel(FlowConfig(**meta["config"]))
        for k, v in params.items():
            model.params[k].data[...] = v.data
        return model


# -- training-path construction ------------------------------------------------


def make_interpolant(x1: np.ndarray, mask: np.ndarray, t: np.ndarray, noise: np.ndarray):
    """Straight-path state x_t and its regression target.

    Masked frames carry (1-t) x0 + t x1 with x0 = noise; unmasked frames
    carry the clean x1 so the model always sees the true context.
    Returns (x_t, target) where target = x1 - x0 everywhere (only masked
    entries are ever scored).
    """
    if x1.shape != noise.shape:
        raise ShapeMismatchError(f"noise shape {noise.shape} != x1 {x1.shape}")
    m = mask[..., None]
    tt = t[:, None, None]
    x_t = m * ((1.0 - tt) * noise + tt * x1) + (1.0 - m) * x1
    return x_t, x1 - noise


def cfm_loss(v: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared velocity error over masked frame entries.

    sum(mask * ||v - target||^2) / (sum(mask) * feat_dim), so the scale
    does not depend on how many frames a batch masks.
    """
    denom = float(mask.sum()) * v.shape[-1]
    if denom <= 0:
        raise ShapeMismatchError("cfm_loss needs at least one masked frame")
    r = v - Tensor(target)
    sq = (r * r) * Tensor(mask[..., None])
    return sq.sum() * (1.0 / denom)


# -- sampling -------------------------------------------------------------------


def sample(model: FlowModel, batch, n_steps: int, seed, reimpose: str | None = None):
    """Integrate the learned field with Euler steps from noise to frames.

    Masked frames start at standard normal noise, prompt frames at their
    true values. ``per_step`` reimposes the prompt after every step;
    ``at_end`` lets context frames drift and restores them once.
    Returns a (B, T, feat_dim) array with padding zeroed.
    """
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1")
    mode = model.config.reimpose_prompt if reimpose is None else reimpose
    if mode not in _REIMPOSE_MODES:
        raise ConfigurationError(f"reimpose must be one of {_REIMPOSE_MODES}")
    rng = np.random.default_rng(seed)
    x1 = np.asarray(batch.x1, dtype=np.float64)
    mask = np.asarray(batch.mask, dtype=np.float64)
    B, T, D = x1.shape
    valid = (np.arange(T)[None, :] < batch.valid_len[:, None]).astype(np.float64)[..., None]
    m = mask[..., None]

    x = (1.0 - m) * x1 + m * rng.standard_normal((B, T, D))
    x *= valid
    ts = np.linspace(0.0, 1.0, n_steps + 1)
    with tz.no_grad():
        for k in range(n_steps):
            t = np.full(B, ts[k])
            v, _ = model.forward(x, t, batch.cond, batch.cond_tokens, mask, batch.valid_len)
            x = x + (ts[k + 1] - ts[k]) * v.data * valid
            if mode == "per_step":
                x = m * x + (1.0 - m) * x1 * valid
    if mode == "at_end":
        x = m * x + (1.0 - m) * x1 * valid
    return x
