"""Vision transformer with optional per-layer classification heads.

The model is a pre-norm ViT: flattened image patches are linearly embedded,
a learned class token is prepended, learned positional embeddings are added,
and a stack of transformer blocks follows.  Classification heads are single
linear maps reading the class token after the shared final LayerNorm; with
``per_layer_heads`` there is one head per block (the last one doubles as the
final head), otherwise a single final head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError
from .tensor import Tensor, as_parameter, concat, dropout, layer_norm


@dataclass
class ViTConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    hidden_dim: int = 64
    num_layers: int = 12
    num_heads: int = 4
    mlp_dim: int = 128
    num_classes: int = 8
    dropout_prob: float = 0.0
    per_layer_heads: bool = False
    seed: int = 0

    def validate(self) -> "ViTConfig":
        if self.image_size <= 0 or self.patch_size <= 0:
            raise InvalidArgumentError("image_size and patch_size must be positive")
        if self.image_size % self.patch_size != 0:
            raise InvalidArgumentError(
                f"image_size ({self.image_size}) must be divisible by patch_size ({self.patch_size})")
        if self.hidden_dim % self.num_heads != 0:
            raise InvalidArgumentError(
                f"hidden_dim ({self.hidden_dim}) must be divisible by num_heads ({self.num_heads})")
        if self.num_layers < 1:
            raise InvalidArgumentError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_classes < 2:
            raise InvalidArgumentError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise InvalidArgumentError(f"dropout_prob must be in [0, 1), got {self.dropout_prob}")
        return self

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        return cls(**d).validate()


def mini_config(**overrides) -> ViTConfig:
    """Desk-scale default geometry: 32px images, 12 blocks of width 64."""
    return replace(ViTConfig(), **overrides).validate()


def paper_config(**overrides) -> ViTConfig:
    """Full-size geometry (224/16/768/12) for parameter-count verification."""
    cfg = ViTConfig(image_size=224, patch_size=16, hidden_dim=768, num_layers=12,
                    num_heads=12, mlp_dim=3072, num_classes=8)
    return replace(cfg, **overrides).validate()


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated at +/- 2 std by resampling."""
    out = rng.standard_normal(size=shape, dtype=np.float32)
    bound = np.float32(2.0)
    flat = out.reshape(-1)
    idx = np.flatnonzero(np.abs(flat) > bound)
    for _ in range(8):
        if idx.size == 0:
            break
        repl = rng.standard_normal(size=idx.size, dtype=np.float32)
        flat[idx] = repl
        idx = idx[np.abs(repl) > bound]
    np.clip(out, -bound, bound, out=out)
    out *= np.float32(std)
    return out


class Linear:
    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight  # [d_in, d_out]
        self.bias = bias      # [d_out]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "Linear":
        return cls(as_parameter(trunc_normal(rng, (d_in, d_out))),
                   as_parameter(np.zeros(d_out, dtype=np.float32)))

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        d_in = x.shape[-1]
        flat = x.reshape((-1, d_in)) if x.ndim != 2 else x
        out = flat.matmul(self.weight) + self.bias
        if x.ndim != 2:
            out = out.reshape(lead + (self.weight.shape[1],))
        return out


class LayerNorm:
    def __init__(self, gamma: Tensor, beta: Tensor):
        self.gamma = gamma
        self.beta = beta

    @classmethod
    def init(cls, dim: int) -> "LayerNorm":
        return cls(as_parameter(np.ones(dim, dtype=np.float32)),
                   as_parameter(np.zeros(dim, dtype=np.float32)))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class Attention:
    def __init__(self, q: Linear, k: Linear, v: Linear, o: Linear, num_heads: int):
        self.q, self.k, self.v, self.o = q, k, v, o
        self.num_heads = num_heads

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, num_heads: int) -> "Attention":
        return cls(*(Linear.init(rng, dim, dim) for _ in range(4)), num_heads)

    def __call__(self, x: Tensor):
        b, t, d = x.shape
        h = self.num_heads
        dh = d // h
        scale = 1.0 / math.sqrt(dh)

        def split(y: Tensor) -> Tensor:
            return y.reshape((b, t, h, dh)).transpose((0, 2, 1, 3))

        q = split(self.q(x))
        k = split(self.k(x))
        v = split(self.v(x))
        scores = q.matmul(k.transpose((0, 1, 3, 2))) * scale
        probs = T.softmax(scores, axis=-1)
        ctx = probs.matmul(v).transpose((0, 2, 1, 3)).reshape((b, t, d))
        return self.o(ctx), probs


class Mlp:
    def __init__(self, fc1: Linear, fc2: Linear):
        self.fc1, self.fc2 = fc1, fc2

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, hidden: int) -> "Mlp":
        return cls(Linear.init(rng, dim, hidden), Linear.init(rng, hidden, dim))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())


class TransformerBlock:
    """Pre-norm block: x + attn(ln1(x)), then + mlp(ln2(.))."""

    def __init__(self, ln1: LayerNorm, attn: Attention, ln2: LayerNorm, mlp: Mlp):
        self.ln1, self.attn, self.ln2, self.mlp = ln1, attn, ln2, mlp

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, num_heads: int, mlp_dim: int) -> "TransformerBlock":
        return cls(LayerNorm.init(dim), Attention.init(rng, dim, num_heads),
                   LayerNorm.init(dim), Mlp.init(rng, dim, mlp_dim))

    def __call__(self, x: Tensor, drop_prob: float = 0.0,
                 rng: Optional[np.random.Generator] = None):
        attn_out, probs = self.attn(self.ln1(x))
        if drop_prob > 0.0:
            attn_out = dropout(attn_out, drop_prob, rng)
        x = x + attn_out
        mlp_out = self.mlp(self.ln2(x))
        if drop_prob > 0.0:
            mlp_out = dropout(mlp_out, drop_prob, rng)
        return x + mlp_out, probs


@dataclass
class ForwardOutput:
    per_layer_hidden: List[Tensor]
    per_layer_logits: List[Tensor]
    final_logits: Tensor
    attentions: List[Tensor]


class ViTModel:
    def __init__(self, config: ViTConfig, patch_proj: Linear, class_token: Tensor,
                 pos_embed: Tensor, blocks: List[TransformerBlock],
                 final_norm: LayerNorm, heads: List[Linear]):
        self.config = config
        self.patch_proj = patch_proj
        self.class_token = class_token  # [hidden_dim]
        self.pos_embed = pos_embed      # [num_patches + 1, hidden_dim]
        self.blocks = blocks
        self.final_norm = final_norm
        self.heads = heads              # one per layer if per_layer_heads else [final]

    def _param_sites(self):
        """(name, holder object, attribute) for every trainable tensor."""
        yield "patch_proj.weight", self.patch_proj, "weight"
        yield "patch_proj.bias", self.patch_proj, "bias"
        yield "class_token", self, "class_token"
        yield "pos_embed", self, "pos_embed"
        for i, blk in enumerate(self.blocks):
            p = f"blocks.{i}"
            yield f"{p}.ln1.gamma", blk.ln1, "gamma"
            yield f"{p}.ln1.beta", blk.ln1, "beta"
            for proj_name, proj in (("q", blk.attn.q), ("k", blk.attn.k),
                                    ("v", blk.attn.v), ("o", blk.attn.o)):
                yield f"{p}.attn.{proj_name}.weight", proj, "weight"
                yield f"{p}.attn.{proj_name}.bias", proj, "bias"
            yield f"{p}.ln2.gamma", blk.ln2, "gamma"
            yield f"{p}.ln2.beta", blk.ln2, "beta"
            yield f"{p}.mlp.fc1.weight", blk.mlp.fc1, "weight"
            yield f"{p}.mlp.fc1.bias", blk.mlp.fc1, "bias"
            yield f"{p}.mlp.fc2.weight", blk.mlp.fc2, "weight"
            yield f"{p}.mlp.fc2.bias", blk.mlp.fc2, "bias"
        yield "final_norm.gamma", self.final_norm, "gamma"
        yield "final_norm.beta", self.final_norm, "beta"
        for i, head in enumerate(self.heads):
            yield f"heads.{i}.weight", head, "weight"
            yield f"heads.{i}.bias", head, "bias"

    def named_parameters(self):
        for name, obj, attr in self._param_sites():
            yield name, getattr(obj, attr)

    def set_parameter(self, name: str, tensor: Tensor) -> None:
        """Replace a parameter tensor object (used by the gradient oracle)."""
        for n, obj, attr in self._param_sites():
            if n == name:
                setattr(obj, attr, tensor)
                return
        raise InvalidArgumentError(f"unknown parameter {name!r}")

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_arrays(self, arrays: dict) -> None:
        for name, p in self.named_parameters():
            src = arrays[name]
            if tuple(src.shape) != p.shape:
                raise InvalidArgumentError(
                    f"parameter '{name}' expects shape {p.shape}, got {tuple(src.shape)}")
            # always copy: parameters must never alias a source model's buffers
            p.data = np.array(src, dtype=np.float32, order="C")


def build(config: ViTConfig) -> ViTModel:
    """Fresh model: truncated-normal projections/embeddings, zero biases."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.hidden_dim
    patch_proj = Linear.init(rng, config.patch_dim, d)
    class_token = as_parameter(trunc_normal(rng, (d,)))
    pos_embed = as_parameter(trunc_normal(rng, (config.num_patches + 1, d)))
    blocks = [TransformerBlock.init(rng, d, config.num_heads, config.mlp_dim)
              for _ in range(config.num_layers)]
    final_norm = LayerNorm.init(d)
    n_heads = config.num_layers if config.per_layer_heads else 1
    heads = [Linear.init(rng, d, config.num_classes) for _ in range(n_heads)]
    return ViTModel(config, patch_proj, class_token, pos_embed, blocks, final_norm, heads)


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """[C, H, W] -> [num_patches, patch_size^2 * C], row-major patches,
    channel-major flattening inside each patch."""
    if image.ndim != 3:
        raise InvalidArgumentError(f"expected [C, H, W] image, got shape {image.shape}")
    c, h, w = image.shape
    if h != w:
        raise InvalidArgumentError(f"expected a square image, got {h}x{w}")
    if h % patch_size != 0:
        raise InvalidArgumentError(
            f"image side {h} is not divisible by patch size {patch_size}")
    g = h // patch_size
    x = image.reshape(c, g, patch_size, g, patch_size)
    x = x.transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(x.reshape(g * g, c * patch_size * patch_size))


def unpatchify(patches: np.ndarray, patch_size: int, channels: int) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    n, pd = patches.shape
    g = int(round(math.sqrt(n)))
    x = patches.reshape(g, g, channels, patch_size, patch_size)
    x = x.transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(x.reshape(channels, g * patch_size, g * patch_size))


def _patchify_batch(images: np.ndarray, patch_size: int) -> np.ndarray:
    b, c, h, w = images.shape
    g = h // patch_size
    x = images.reshape(b, c, g, patch_size, g, patch_size)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x.reshape(b, g * g, c * patch_size * patch_size))


def forward(model: ViTModel, images, mode: str = "eval",
            rng: Optional[np.random.Generator] = None) -> ForwardOutput:
    """Run the full stack, recording per-layer hiddens, logits, and attention."""
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = model.config
    data = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float32)
    if data.ndim != 4 or data.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise InvalidArgumentError(
            f"expected images of shape [batch, {cfg.channels}, {cfg.image_size}, "
            f"{cfg.image_size}], got {data.shape}")
    b = data.shape[0]
    if b < 1:
        raise InvalidArgumentError("batch must contain at least one image")
    drop = cfg.dropout_prob if mode == "train" else 0.0
    if drop > 0.0 and rng is None:
        rng = np.random.default_rng(cfg.seed)

    # pixels arrive in [0, 1]; center to [-1, 1] so patch embeddings carry
    # per-sample signal instead of a shared DC component
    patches = Tensor(_patchify_batch(data * np.float32(2.0) - np.float32(1.0), cfg.patch_size))
    tok = model.patch_proj(patches)                                   # [B, N, D]
    cls = model.class_token.reshape((1, 1, cfg.hidden_dim)).expand((b, 1, cfg.hidden_dim))
    x = concat([cls, tok], axis=1) + model.pos_embed                  # [B, N+1, D]
    if drop > 0.0:
        x = dropout(x, drop, rng)

    hiddens: List[Tensor] = []
    attentions: List[Tensor] = []
    for blk in model.blocks:
        x, probs = blk(x, drop, rng)
        hiddens.append(x)
        attentions.append(probs)

    def head_logits(head: Linear, hidden: Tensor) -> Tensor:
        cls_state = hidden[:, 0]
        return head(layer_norm(cls_state, model.final_norm.gamma, model.final_norm.beta))

    if cfg.per_layer_heads:
        per_layer_logits = [head_logits(h, hid) for h, hid in zip(model.heads, hiddens)]
        final_logits = per_layer_logits[-1]
    else:
        per_layer_logits = []
        final_logits = head_logits(model.heads[0], hiddens[-1])

    return ForwardOutput(hiddens, per_layer_logits, final_logits, attentions)


def param_count(model: ViTModel) -> int:
    return int(sum(p.size for _, p in model.named_parameters()))


def cls_attention_map(out: ForwardOutput, layer: int, sample: int) -> np.ndarray:
    """Class-token-to-patch attention, head-averaged, min-max normalized to a grid."""
    if not 0 <= layer < len(out.attentions):
        raise InvalidArgumentError(f"layer {layer} out of range [0, {len(out.attentions)})")
    attn = out.attentions[layer].data
    if not 0 <= sample < attn.shape[0]:
        raise InvalidArgumentError(f"sample {sample} out of range [0, {attn.shape[0]})")
    cls_to_patch = attn[sample, :, 0, 1:].mean(axis=0)
    g = int(round(math.sqrt(cls_to_patch.size)))
    grid = cls_to_patch.reshape(g, g)
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        grid = (grid - lo) / (hi - lo)
    else:
        grid = np.zeros_like(grid)
    return grid.astype(np.float32)


def upsample_nearest(grid: np.ndarray, target_size: int) -> np.ndarray:
    """Nearest-neighbor upsample of a square map to target_size x target_size."""
    g = grid.shape[0]
    if target_size % g != 0:
        raise InvalidArgumentError(f"target size {target_size} not a multiple of grid {g}")
    k = target_size // g
    return np.repeat(np.repeat(grid, k, axis=0), k, axis=1)
