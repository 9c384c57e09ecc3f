"""Vision-Transformer classifier with a locality feed-forward network.

The encoder follows the pre-norm residual arrangement

    z'_{l} = z_l + attention(norm(z_l))
    z_{l+1} = z'_l + ffn(norm(z'_l))

with two interchangeable FFN bodies: the plain expand/activation/squeeze MLP
and the locality variant, which rearranges patch tokens into their 2D grid
and applies a 3x3 depthwise convolution between the fully-connected layers.
The positional-embedding grid can be re-interpolated at any time, so the same
parameters serve every image size the curriculum produces.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import ops
from .errors import ConfigError, ShapeError, StateError
from .rng import STREAM_MODEL_INIT, stream
from .tensor import Tensor, as_tensor

FFN_KINDS = ("locality", "plain")
ACTIVATIONS = ("h_swish", "gelu")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int
    depth: int
    num_heads: int
    patch_size: int
    num_classes: int
    ffn_kind: str = "locality"
    activation: str = "h_swish"
    final_image_size: int = 224
    use_class_token: bool = True
    gelu_approximate: bool = False  # tanh form for fast training builds

    def __post_init__(self):
        if self.embed_dim <= 0 or self.depth < 0 or self.num_heads <= 0:
            raise ConfigError("embed_dim and num_heads must be positive, depth non-negative")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.patch_size <= 0:
            raise ConfigError("patch_size must be positive")
        if self.final_image_size % self.patch_size != 0:
            raise ConfigError(
                f"final_image_size {self.final_image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.num_classes <= 0:
            raise ConfigError("num_classes must be positive")
        if self.ffn_kind not in FFN_KINDS:
            raise ConfigError(f"ffn_kind must be one of {FFN_KINDS}, got {self.ffn_kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def hidden_dim(self) -> int:
        return 4 * self.embed_dim

    @property
    def final_grid(self) -> int:
        return self.final_image_size // self.patch_size


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class PlainFfnParams:
    expand_w: Tensor
    expand_b: Tensor
    squeeze_w: Tensor
    squeeze_b: Tensor


@dataclass
class LocalityFfnParams:
    expand_w: Tensor
    expand_b: Tensor
    conv_k: Tensor
    conv_b: Tensor
    squeeze_w: Tensor
    squeeze_b: Tensor


@dataclass
class BlockParams:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    attn: AttentionParams
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn: object  # PlainFfnParams | LocalityFfnParams


# -- token/grid plumbing ------------------------------------------------------

def patchify(image, patch_size: int) -> Tensor:
    """Split [3, S, S] (or [B, 3, S, S]) into row-major flattened patches.

    Each patch is flattened channel-major then row-major; this order is frozen
    into the checkpoint format.
    """
    image = as_tensor(image)
    batched = image.ndim == 4
    if image.ndim not in (3, 4):
        raise ShapeError(f"patchify: expected [3,S,S] or [B,3,S,S], got {image.shape}")
    c, s_h, s_w = image.shape[-3], image.shape[-2], image.shape[-1]
    if s_h != s_w:
        raise ShapeError(f"patchify: image must be square, got {s_h}x{s_w}")
    if s_h % patch_size != 0:
        raise ShapeError(f"patchify: size {s_h} not divisible by patch size {patch_size}")
    g = s_h // patch_size
    p = patch_size
    if batched:
        b = image.shape[0]
        x = T.reshape(image, (b, c, g, p, g, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        return T.reshape(x, (b, g * g, c * p * p))
    x = T.reshape(image, (c, g, p, g, p))
    x = T.transpose(x, (1, 3, 0, 2, 4))
    return T.reshape(x, (g * g, c * p * p))


def _grid_side(n: int) -> int:
    g = math.isqrt(n)
    if g * g != n:
        raise ShapeError(f"token count {n} is not a perfect square")
    return g


def seq2im(z) -> Tensor:
    """[N, C] -> [C, G, G] (or batched): token i lands on grid cell (i // G, i % G)."""
    z = as_tensor(z)
    if z.ndim == 2:
        n, c = z.shape
        g = _grid_side(n)
        return T.transpose(T.reshape(z, (g, g, c)), (2, 0, 1))
    if z.ndim == 3:
        b, n, c = z.shape
        g = _grid_side(n)
        return T.transpose(T.reshape(z, (b, g, g, c)), (0, 3, 1, 2))
    raise ShapeError(f"seq2im: expected [N,C] or [B,N,C], got {z.shape}")


def im2seq(x) -> Tensor:
    """Exact inverse of seq2im."""
    x = as_tensor(x)
    if x.shape[-2] != x.shape[-1]:
        raise ShapeError(f"im2seq: spatial extents must be square, got {x.shape}")
    g = x.shape[-1]
    if x.ndim == 3:
        c = x.shape[0]
        return T.reshape(T.transpose(x, (1, 2, 0)), (g * g, c))
    if x.ndim == 4:
        b, c = x.shape[0], x.shape[1]
        return T.reshape(T.transpose(x, (0, 2, 3, 1)), (b, g * g, c))
    raise ShapeError(f"im2seq: expected [C,G,G] or [B,C,G,G], got {x.shape}")


def _activate(z, activation: str, gelu_approximate: bool = False) -> Tensor:
    if activation == "h_swish":
        return ops.h_swish(z)
    return ops.gelu(z, approximate=gelu_approximate)


def plain_ffn(z, params: PlainFfnParams, activation: str = "h_swish", gelu_approximate: bool = False) -> Tensor:
    """squeeze(act(expand(z))) applied per token."""
    h = _activate(ops.linear(z, params.expand_w, params.expand_b), activation, gelu_approximate)
    return ops.linear(h, params.squeeze_w, params.squeeze_b)


def locality_ffn(
    z,
    params: LocalityFfnParams,
    use_class_token: bool,
    activation: str = "h_swish",
    gelu_approximate: bool = False,
) -> Tensor:
    """Expand, rearrange tokens to their grid, 3x3 depthwise conv, rearrange back, squeeze.

    The class token has no grid position: it skips the grid/conv sandwich but
    still flows through expand, both activations, and squeeze so parameter
    shapes stay uniform with the plain FFN plus the conv.
    """
    z = as_tensor(z)
    squeeze_back = z.ndim == 2
    if squeeze_back:
        z = T.reshape(z, (1,) + z.shape)
    if z.ndim != 3:
        raise ShapeError(f"locality_ffn: expected [T,D] or [B,T,D], got {z.shape}")

    if use_class_token:
        cls, patches = z[:, :1, :], z[:, 1:, :]
    else:
        cls, patches = None, z
    g = _grid_side(patches.shape[1])

    h = _activate(ops.linear(patches, params.expand_w, params.expand_b), activation, gelu_approximate)
    # The grid rearrangement is the seq2im/im2seq bijection; with channels
    # kept last it reduces to a reshape and the conv runs on contiguous
    # channel vectors (bit-identical to the channels-first route).
    b, n, c = h.shape
    grid = T.reshape(h, (b, g, g, c))
    conv = ops.depthwise_conv3x3_tokens(grid, params.conv_k, params.conv_b)
    h2 = _activate(conv, activation, gelu_approximate)
    out = ops.linear(T.reshape(h2, (b, n, c)), params.squeeze_w, params.squeeze_b)

    if cls is not None:
        c = _activate(ops.linear(cls, params.expand_w, params.expand_b), activation, gelu_approximate)
        c = _activate(c, activation, gelu_approximate)
        c = ops.linear(c, params.squeeze_w, params.squeeze_b)
        out = T.concat([c, out], axis=1)
    if squeeze_back:
        out = T.reshape(out, out.shape[1:])
    return out


def msa(z, params: AttentionParams, num_heads: int) -> Tensor:
    """Scaled dot-product attention over all tokens, heads concatenated, then projected."""
    z = as_tensor(z)
    squeeze_back = z.ndim == 2
    if squeeze_back:
        z = T.reshape(z, (1,) + z.shape)
    b, t, d = z.shape
    if d % num_heads != 0:
        raise ConfigError(f"msa: embed dim {d} not divisible by num_heads {num_heads}")
    dh = d // num_heads

    def to_heads(x):
        return T.transpose(T.reshape(x, (b, t, num_heads, dh)), (0, 2, 1, 3))

    q = to_heads(ops.linear(z, params.wq, params.bq))
    k = to_heads(ops.linear(z, params.wk, params.bk))
    v = to_heads(ops.linear(z, params.wv, params.bv))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = ops.softmax(scores)
    ctx = T.matmul(attn, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    out = ops.linear(ctx, params.wo, params.bo)
    if squeeze_back:
        out = T.reshape(out, out.shape[1:])
    return out


def encoder_block(z, block: BlockParams, config: ModelConfig) -> Tensor:
    """One pre-norm residual block: attention sub-layer then FFN sub-layer."""
    z = as_tensor(z)
    attended = msa(ops.layernorm(z, block.ln1_gamma, block.ln1_beta), block.attn, config.num_heads)
    z = T.add(z, attended)
    normed = ops.layernorm(z, block.ln2_gamma, block.ln2_beta)
    if config.ffn_kind == "locality":
        ff = locality_ffn(normed, block.ffn, config.use_class_token, config.activation, config.gelu_approximate)
    else:
        ff = plain_ffn(normed, block.ffn, config.activation, config.gelu_approximate)
    return T.add(z, ff)


# -- parameter init -----------------------------------------------------------

def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, clip: float = 2.0) -> np.ndarray:
    """Normal(0, std) with values beyond clip*std redrawn (not clamped)."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > clip
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > clip
    return x * std


class VitModel:
    """Model parameters plus the grid state of the positional embeddings.

    Forward passes are pure reads; ``interpolate_pos_embed`` and optimizer
    updates mutate parameters and need exclusive access.
    """

    def __init__(self, config: ModelConfig, params: dict, current_grid: int, dtype=np.float32):
        self.config = config
        self.params = params
        self.current_grid = current_grid
        self.dtype = np.dtype(dtype)

    @classmethod
    def create(cls, config: ModelConfig, init_seed: int = 0, dtype=np.float32) -> "VitModel":
        rng = stream(init_seed, STREAM_MODEL_INIT)
        d = config.embed_dim
        hidden = config.hidden_dim
        grid = config.final_grid
        patch_dim = 3 * config.patch_size * config.patch_size
        dtype = np.dtype(dtype)

        def param(shape, kind="weight"):
            if kind == "weight":
                arr = trunc_normal(rng, shape)
            elif kind == "zeros":
                arr = np.zeros(shape)
            else:  # ones
                arr = np.ones(shape)
            return Tensor(np.ascontiguousarray(arr, dtype=dtype), requires_grad=True)

        p: dict[str, Tensor] = {}
        p["patch_proj.weight"] = param((patch_dim, d))
        p["patch_proj.bias"] = param((d,), "zeros")
        rows = grid * grid + (1 if config.use_class_token else 0)
        p["pos_embed"] = param((rows, d))
        if config.use_class_token:
            p["class_token"] = param((d,))
        for i in range(config.depth):
            pre = f"blocks.{i}."
            p[pre + "ln1.gamma"] = param((d,), "ones")
            p[pre + "ln1.beta"] = param((d,), "zeros")
            for proj in ("q", "k", "v", "out"):
                p[pre + f"attn.{proj}.weight"] = param((d, d))
                p[pre + f"attn.{proj}.bias"] = param((d,), "zeros")
            p[pre + "ln2.gamma"] = param((d,), "ones")
            p[pre + "ln2.beta"] = param((d,), "zeros")
            p[pre + "ffn.expand.weight"] = param((d, hidden))
            p[pre + "ffn.expand.bias"] = param((hidden,), "zeros")
            if config.ffn_kind == "locality":
                p[pre + "ffn.conv.weight"] = param((hidden, 3, 3))
                p[pre + "ffn.conv.bias"] = param((hidden,), "zeros")
            p[pre + "ffn.squeeze.weight"] = param((hidden, d))
            p[pre + "ffn.squeeze.bias"] = param((d,), "zeros")
        p["final_norm.gamma"] = param((d,), "ones")
        p["final_norm.beta"] = param((d,), "zeros")
        p["head.weight"] = param((d, config.num_classes))
        p["head.bias"] = param((config.num_classes,), "zeros")
        return cls(config, p, grid, dtype)

    # -- parameter access ---------------------------------------------------
    def block_params(self, i: int) -> BlockParams:
        p = self.params
        pre = f"blocks.{i}."
        attn = AttentionParams(
            p[pre + "attn.q.weight"], p[pre + "attn.q.bias"],
            p[pre + "attn.k.weight"], p[pre + "attn.k.bias"],
            p[pre + "attn.v.weight"], p[pre + "attn.v.bias"],
            p[pre + "attn.out.weight"], p[pre + "attn.out.bias"],
        )
        if self.config.ffn_kind == "locality":
            ffn = LocalityFfnParams(
                p[pre + "ffn.expand.weight"], p[pre + "ffn.expand.bias"],
                p[pre + "ffn.conv.weight"], p[pre + "ffn.conv.bias"],
                p[pre + "ffn.squeeze.weight"], p[pre + "ffn.squeeze.bias"],
            )
        else:
            ffn = PlainFfnParams(
                p[pre + "ffn.expand.weight"], p[pre + "ffn.expand.bias"],
                p[pre + "ffn.squeeze.weight"], p[pre + "ffn.squeeze.bias"],
            )
        return BlockParams(
            p[pre + "ln1.gamma"], p[pre + "ln1.beta"], attn,
            p[pre + "ln2.gamma"], p[pre + "ln2.beta"], ffn,
        )

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grads(self) -> None:
        for t in self.params.values():
            if isinstance(t, Tensor):
                t.grad = None

    def param_count(self) -> int:
        return sum(int(np.prod(t.data.shape)) for t in self.params.values())

    def param_breakdown(self) -> dict[str, int]:
        return {name: int(np.prod(t.data.shape)) for name, t in self.params.items()}

    # -- forward ------------------------------------------------------------
    def forward(self, images) -> Tensor:
        """images [B, 3, S, S] -> logits [B, num_classes]."""
        images = as_tensor(images)
        if images.ndim != 4:
            raise ShapeError(f"forward: expected [B,3,S,S] images, got {images.shape}")
        s = images.shape[-1]
        cfg = self.config
        if s % cfg.patch_size != 0:
            raise ShapeError(f"forward: image size {s} not divisible by patch size {cfg.patch_size}")
        grid = s // cfg.patch_size
        if grid != self.current_grid:
            raise StateError(
                f"positional-embedding grid is {self.current_grid}x{self.current_grid} but "
                f"{s}px input needs {grid}x{grid}; call interpolate_pos_embed(model, {grid}) first"
            )

        tokens = ops.linear(patchify(images, cfg.patch_size), self.params["patch_proj.weight"],
                            self.params["patch_proj.bias"])
        if cfg.use_class_token:
            b = tokens.shape[0]
            cls = T.broadcast_to(T.reshape(self.params["class_token"], (1, 1, cfg.embed_dim)),
                                 (b, 1, cfg.embed_dim))
            tokens = T.concat([cls, tokens], axis=1)
        z = T.add(tokens, self.params["pos_embed"])
        for i in range(cfg.depth):
            z = encoder_block(z, self.block_params(i), cfg)
        z = ops.layernorm(z, self.params["final_norm.gamma"], self.params["final_norm.beta"])
        if cfg.use_class_token:
            features = z[:, 0, :]
        else:
            features = T.mean(z, axis=1)
        return ops.linear(features, self.params["head.weight"], self.params["head.bias"])


def interpolate_pos_embed(model: VitModel, new_grid: int) -> VitModel:
    """Bilinearly resize the patch-position embedding grid (align_corners=True).

    The class-token row, if present, is copied unchanged. A same-grid call
    leaves the embedding bit-identical.
    """
    if new_grid < 1:
        raise ShapeError(f"interpolate_pos_embed: grid must be >= 1, got {new_grid}")
    if new_grid == model.current_grid:
        return model
    old = model.params["pos_embed"].data
    d = model.config.embed_dim
    g = model.current_grid
    has_cls = model.config.use_class_token
    cls_rows = old[:1] if has_cls else old[:0]
    patch_rows = old[1:] if has_cls else old
    as_image = patch_rows.reshape(g, g, d).transpose(2, 0, 1)
    resized = ops.bilinear_resize_array(as_image, new_grid, new_grid, align_corners=True)
    new_rows = resized.transpose(1, 2, 0).reshape(new_grid * new_grid, d)
    model.params["pos_embed"] = Tensor(
        np.ascontiguousarray(np.concatenate([cls_rows, new_rows], axis=0)), requires_grad=True
    )
    model.current_grid = new_grid
    return model
