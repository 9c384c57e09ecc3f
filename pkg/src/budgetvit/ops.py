"""Differentiable neural-network primitives.

Each op validates its contract, computes the forward pass with numpy, and
registers a fused backward closure on the output tensor. Everything here is
certified against central finite differences (see ``gradcheck``).
"""

import numpy as np
from scipy.special import erf

from .errors import ArgumentError, ShapeError
from .tensor import Tensor, as_tensor, make_node

_SQRT_2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))
_TANH_COEFF = float(np.sqrt(2.0 / np.pi))


def linear(x, weight, bias) -> Tensor:
    """Affine map over the trailing axis: out[..., j] = sum_i x[..., i] W[i, j] + b[j]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
    out_data = x.data @ weight.data + bias.data

    def _bw(g):
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data.T)
        if weight.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.data.reshape(-1, x.shape[-1])
            weight.accumulate_grad(x2.T @ g2)
        if bias.requires_grad:
            bias.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return make_node(out_data, (x, weight, bias), _bw)


def layernorm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize each trailing-axis slice to zero mean / unit variance, then scale and shift.

    Variance uses the biased estimator (denominator D).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layernorm: empty trailing axis")
    if not eps > 0:
        raise ArgumentError(f"layernorm: eps must be positive, got {eps}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match D={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = gamma.data * xhat + beta.data

    def _bw(g):
        if x.requires_grad:
            gy = g * gamma.data
            term = gy - gy.mean(axis=-1, keepdims=True) - xhat * np.mean(gy * xhat, axis=-1, keepdims=True)
            x.accumulate_grad(term * inv)
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, d).sum(axis=0))

    return make_node(out_data, (x, gamma, beta), _bw)


def softmax(x) -> Tensor:
    """Stable softmax over the trailing axis (max subtraction before exp)."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"softmax: needs a non-empty trailing axis, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        x.accumulate_grad(s * (g - np.sum(g * s, axis=-1, keepdims=True)))

    return make_node(s, (x,), _bw)


def _h_swish_forward(x: np.ndarray) -> np.ndarray:
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def _h_swish_deriv(x: np.ndarray) -> np.ndarray:
    # Subgradient 0 at the clamp kinks x = -3 and x = 3.
    inner = ((x > -3.0) & (x < 3.0)).astype(x.dtype)
    return np.clip(x + 3.0, 0.0, 6.0) / 6.0 + x * inner / 6.0


def h_swish(x) -> Tensor:
    """Hard swish: x * clamp(x + 3, 0, 6) / 6."""
    x = as_tensor(x)
    clamped = np.clip(x.data + 3.0, 0.0, 6.0)
    out_data = x.data * clamped / 6.0

    def _bw(g):
        # strict inequalities: subgradient 0 at the clamp kinks
        inner = (clamped > 0.0) & (clamped < 6.0)
        x.accumulate_grad(g * ((clamped + x.data * inner) / 6.0))

    return make_node(out_data, (x,), _bw)


def gelu(x, approximate: bool = False) -> Tensor:
    """Gaussian error linear unit, x * Phi(x).

    ``approximate=True`` switches to the tanh form used by fast training
    builds; the default is the exact erf-based definition.
    """
    x = as_tensor(x)
    if approximate:
        x3 = x.data * x.data * x.data
        inner = _TANH_COEFF * (x.data + 0.044715 * x3)
        t = np.tanh(inner)
        out_data = 0.5 * x.data * (1.0 + t)

        def _bw(g):
            sech2 = 1.0 - t * t
            dinner = _TANH_COEFF * (1.0 + 3.0 * 0.044715 * x.data * x.data)
            x.accumulate_grad(g * (0.5 * (1.0 + t) + 0.5 * x.data * sech2 * dinner))

    else:
        phi_cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))
        out_data = x.data * phi_cdf

        def _bw(g):
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
            x.accumulate_grad(g * (phi_cdf + x.data * pdf))

    return make_node(out_data, (x,), _bw)


def depthwise_conv3x3(x, kernel, bias) -> Tensor:
    """Per-channel 3x3 cross-correlation, stride 1, zero padding 1.

    Accepts [C, H, W] or [B, C, H, W]; spatial shape is preserved and channels
    never mix.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim not in (3, 4):
        raise ShapeError(f"depthwise_conv3x3: expected [C,H,W] or [B,C,H,W], got {x.shape}")
    c, h, w = x.shape[-3], x.shape[-2], x.shape[-1]
    if kernel.shape != (c, 3, 3):
        raise ShapeError(f"depthwise_conv3x3: kernel shape {kernel.shape} does not match {c} input channels")
    if bias.shape != (c,):
        raise ShapeError(f"depthwise_conv3x3: bias shape {bias.shape} does not match {c} input channels")
    if h < 1 or w < 1:
        raise ShapeError(f"depthwise_conv3x3: empty spatial extents in {x.shape}")

    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x.data, pad)
    kcol = kernel.data.reshape(c, 3, 3, 1, 1)
    out_data = np.zeros_like(x.data)
    for di in range(3):
        for dj in range(3):
            out_data += kcol[:, di, dj] * xp[..., di:di + h, dj:dj + w]
    out_data += bias.data.reshape(c, 1, 1)

    def _bw(g):
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    dxp[..., di:di + h, dj:dj + w] += kcol[:, di, dj] * g
            x.accumulate_grad(dxp[..., 1:1 + h, 1:1 + w])
        if kernel.requires_grad:
            dk = np.empty_like(kernel.data)
            for di in range(3):
                for dj in range(3):
                    dk[:, di, dj] = np.sum(
                        g * xp[..., di:di + h, dj:dj + w], axis=tuple(i for i in range(g.ndim) if i != g.ndim - 3)
                    )
            kernel.accumulate_grad(dk)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 3)))

    return make_node(out_data, (x, kernel, bias), _bw)


def depthwise_conv3x3_tokens(x, kernel, bias) -> Tensor:
    """Channels-last variant for the token grid hot path: [B, G, G, C].

    Same math as depthwise_conv3x3 (per-channel 3x3 cross-correlation, zero
    padding 1); the layout keeps the channel axis contiguous, which is several
    times faster on token grids. Results are bit-identical to the
    channels-first op.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"depthwise_conv3x3_tokens: expected [B,G,G,C], got {x.shape}")
    b_, h, w, c = x.shape
    if kernel.shape != (c, 3, 3):
        raise ShapeError(f"depthwise_conv3x3_tokens: kernel shape {kernel.shape} does not match {c} channels")
    if bias.shape != (c,):
        raise ShapeError(f"depthwise_conv3x3_tokens: bias shape {bias.shape} does not match {c} channels")

    xp = np.zeros((b_, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:1 + h, 1:1 + w, :] = x.data
    out_data = np.zeros_like(x.data)
    for di in range(3):
        for dj in range(3):
            out_data += kernel.data[:, di, dj] * xp[:, di:di + h, dj:dj + w, :]
    out_data += bias.data

    def _bw(g):
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    dxp[:, di:di + h, dj:dj + w, :] += kernel.data[:, di, dj] * g
            x.accumulate_grad(dxp[:, 1:1 + h, 1:1 + w, :])
        if kernel.requires_grad:
            dk = np.empty_like(kernel.data)
            for di in range(3):
                for dj in range(3):
                    dk[:, di, dj] = np.einsum("bhwc,bhwc->c", g, xp[:, di:di + h, dj:dj + w, :])
            kernel.accumulate_grad(dk)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 1, 2)))

    return make_node(out_data, (x, kernel, bias), _bw)


_RESIZE_CACHE: dict[tuple, np.ndarray] = {}


def resize_weights(n_in: int, n_out: int, align_corners: bool) -> np.ndarray:
    """Dense [n_out, n_in] interpolation matrix for one separable axis (float64)."""
    key = (n_in, n_out, align_corners)
    cached = _RESIZE_CACHE.get(key)
    if cached is not None:
        return cached
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        if align_corners:
            src = o * (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
        else:
            src = (o + 0.5) * n_in / n_out - 0.5
            src = min(max(src, 0.0), float(n_in - 1))
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    _RESIZE_CACHE[key] = m
    return m


def bilinear_resize(x, out_h: int, out_w: int, align_corners: bool = False) -> Tensor:
    """Separable bilinear interpolation of the two trailing (spatial) axes.

    With align_corners=True the four corner samples are preserved exactly.
    Same-size targets return the input unchanged (bit-exact).
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize: needs spatial trailing axes, got shape {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"bilinear_resize: target extents must be positive, got {out_h}x{out_w}")
    if h < 1 or w < 1:
        raise ShapeError(f"bilinear_resize: empty source extents in {x.shape}")

    if out_h == h and out_w == w:
        def _bw_id(g):
            x.accumulate_grad(g)

        return make_node(x.data.copy(), (x,), _bw_id)

    wh = resize_weights(h, out_h, align_corners).astype(x.dtype)
    ww = resize_weights(w, out_w, align_corners).astype(x.dtype)
    out_data = wh @ x.data @ ww.T

    def _bw(g):
        x.accumulate_grad(wh.T @ g @ ww)

    return make_node(out_data, (x,), _bw)


def bilinear_resize_array(x: np.ndarray, out_h: int, out_w: int, align_corners: bool = False) -> np.ndarray:
    """Non-differentiable fast path for the data pipeline (same math as above)."""
    h, w = x.shape[-2], x.shape[-1]
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"bilinear_resize: target extents must be positive, got {out_h}x{out_w}")
    if out_h == h and out_w == w:
        return x.copy()
    wh = resize_weights(h, out_h, align_corners).astype(x.dtype)
    ww = resize_weights(w, out_w, align_corners).astype(x.dtype)
    return wh @ x @ ww.T


def cross_entropy_ls(logits, labels, epsilon: float = 0.0) -> Tensor:
    """Label-smoothed cross entropy, averaged over the batch.

    Target distribution: (1 - epsilon) * onehot(label) + epsilon / C.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_ls: logits must be [B, C], got {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy_ls: labels shape {labels.shape} does not match batch {b}")
    if not 0.0 <= epsilon < 1.0:
        raise ArgumentError(f"cross_entropy_ls: epsilon must be in [0, 1), got {epsilon}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ArgumentError(f"cross_entropy_ls: labels outside [0, {c})")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.arange(b)
    nll = -logp[rows, labels]
    smooth = -logp.mean(axis=-1)
    loss = np.asarray(((1.0 - epsilon) * nll + epsilon * smooth).mean(), dtype=logits.dtype)

    def _bw(g):
        q = np.full_like(logp, epsilon / c)
        q[rows, labels] += 1.0 - epsilon
        logits.accumulate_grad(g * (np.exp(logp) - q) / b)

    return make_node(loss, (logits,), _bw)
