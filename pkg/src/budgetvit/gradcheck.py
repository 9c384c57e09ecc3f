"""Finite-difference certification of analytic gradients.

Every differentiable primitive (and, on request, a tiny full model) is probed
with central differences in double precision:

    h = 1e-5 * max(1, |x|) per coordinate,
    full coordinate sweep for tensors under 512 entries, else 64 random probes.

The output is reduced to a scalar through a fixed random projection so ops
with tensor outputs can be checked the same way as losses.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import model as model_mod
from . import ops
from .rng import STREAM_GRADCHECK, stream
from .tensor import Tensor

FULL_SWEEP_LIMIT = 512
DEFAULT_PROBES = 64
PRIMITIVE_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    passed: bool
    probe_count: int


def grad_check(
    op_name: str,
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = PRIMITIVE_TOLERANCE,
    exclude: Callable[[int, float], bool] | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare the analytic gradient of ``fn`` against central differences.

    ``fn`` takes one Tensor per entry of ``inputs`` (double precision) and
    returns a Tensor. ``exclude(input_index, value)`` may veto coordinates
    near non-smooth points.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    rng = stream(seed, STREAM_GRADCHECK)
    projection = rng.standard_normal(out.shape)
    out.backward(projection)

    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    if any(not np.isfinite(g).all() for g in analytic):
        return GradCheckReport(op_name, float("inf"), False, 0)

    def scalar_at(point: list[np.ndarray]) -> float:
        value = fn(*[Tensor(p) for p in point])
        return float(np.sum(value.data * projection))

    max_rel = 0.0
    probe_count = 0
    for idx, arr in enumerate(arrays):
        size = arr.size
        if size < FULL_SWEEP_LIMIT:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=DEFAULT_PROBES, replace=False)
        flat = arr.reshape(-1)
        for c in coords:
            x0 = flat[c]
            if exclude is not None and exclude(idx, float(x0)):
                continue
            h = 1e-5 * max(1.0, abs(float(x0)))
            probed = [a.copy() for a in arrays]
            probed[idx].reshape(-1)[c] = x0 + h
            f_plus = scalar_at(probed)
            probed[idx].reshape(-1)[c] = x0 - h
            f_minus = scalar_at(probed)
            numeric = (f_plus - f_minus) / (2.0 * h)
            a_val = float(analytic[idx].reshape(-1)[c])
            rel = abs(a_val - numeric) / max(1.0, abs(a_val), abs(numeric))
            max_rel = max(max_rel, rel)
            probe_count += 1
    return GradCheckReport(op_name, max_rel, max_rel < tolerance, probe_count)


# -- registry ----------------------------------------------------------------

@dataclass
class CheckCase:
    name: str
    build: Callable[[], tuple[Callable[..., Tensor], list[np.ndarray]]]
    tolerance: float = PRIMITIVE_TOLERANCE
    exclude: Callable[[int, float], bool] | None = None


def _away_from_h_swish_kinks(rng, shape) -> np.ndarray:
    x = rng.uniform(-6.0, 6.0, size=shape)
    for kink in (-3.0, 3.0):
        near = np.abs(x - kink) < 0.05
        x[near] = kink + 0.2 * np.sign(x[near] - kink + 1e-12)
    return x


def primitive_checks(seed: int = 1234) -> list[CheckCase]:
    rng = stream(seed, STREAM_GRADCHECK, 1)

    def build_linear():
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((6, 3))
        b = rng.standard_normal(3)
        return ops.linear, [x, w, b]

    def build_layernorm():
        x = rng.standard_normal((3, 7))
        gamma = rng.standard_normal(7)
        beta = rng.standard_normal(7)
        return lambda a, g, bt: ops.layernorm(a, g, bt, eps=1e-6), [x, gamma, beta]

    def build_softmax():
        return ops.softmax, [rng.standard_normal((5, 9))]

    def build_h_swish():
        return ops.h_swish, [_away_from_h_swish_kinks(rng, (64,))]

    def build_gelu():
        return ops.gelu, [rng.standard_normal(64)]

    def build_gelu_tanh():
        return lambda a: ops.gelu(a, approximate=True), [rng.standard_normal(64)]

    def build_dwconv():
        x = rng.standard_normal((4, 5, 5))
        k = rng.standard_normal((4, 3, 3))
        b = rng.standard_normal(4)
        return ops.depthwise_conv3x3, [x, k, b]

    def build_resize_align():
        return lambda a: ops.bilinear_resize(a, 8, 6, align_corners=True), [rng.standard_normal((3, 5, 7))]

    def build_resize_half():
        return lambda a: ops.bilinear_resize(a, 4, 9, align_corners=False), [rng.standard_normal((3, 5, 7))]

    def build_cross_entropy():
        logits = rng.standard_normal((6, 5))
        labels = rng.integers(0, 5, size=6)
        return lambda lg: ops.cross_entropy_ls(lg, labels, epsilon=0.1), [logits]

    kink_guard = lambda _i, v: abs(v + 3.0) < 0.02 or abs(v - 3.0) < 0.02
    return [
        CheckCase("linear", build_linear),
        CheckCase("layernorm", build_layernorm),
        CheckCase("softmax", build_softmax),
        CheckCase("h_swish", build_h_swish, exclude=kink_guard),
        CheckCase("gelu", build_gelu),
        CheckCase("gelu_tanh", build_gelu_tanh),
        CheckCase("depthwise_conv3x3", build_dwconv),
        CheckCase("bilinear_resize_align_corners", build_resize_align),
        CheckCase("bilinear_resize_half_pixel", build_resize_half),
        CheckCase("cross_entropy_ls", build_cross_entropy),
    ]


def model_checks(seed: int = 1234) -> list[CheckCase]:
    """Composite checks: FFN variants, attention, one block, and a tiny full model."""
    rng = stream(seed, STREAM_GRADCHECK, 2)
    kink_guard = lambda _i, v: abs(v + 3.0) < 0.02 or abs(v - 3.0) < 0.02

    def build_plain_ffn():
        d = 6
        z = rng.standard_normal((5, d)) * 0.5
        expand_w = rng.standard_normal((d, 4 * d)) * 0.3
        expand_b = rng.standard_normal(4 * d) * 0.1
        squeeze_w = rng.standard_normal((4 * d, d)) * 0.3
        squeeze_b = rng.standard_normal(d) * 0.1

        def fn(zz, ew, eb, sw, sb):
            params = model_mod.PlainFfnParams(ew, eb, sw, sb)
            return model_mod.plain_ffn(zz, params, activation="h_swish")

        return fn, [z, expand_w, expand_b, squeeze_w, squeeze_b]

    def build_locality_ffn():
        d = 4
        z = rng.standard_normal((10, d)) * 0.5  # 1 class token + 9 patch tokens
        expand_w = rng.standard_normal((d, 4 * d)) * 0.3
        expand_b = rng.standard_normal(4 * d) * 0.1
        conv_k = rng.standard_normal((4 * d, 3, 3)) * 0.3
        conv_b = rng.standard_normal(4 * d) * 0.1
        squeeze_w = rng.standard_normal((4 * d, d)) * 0.3
        squeeze_b = rng.standard_normal(d) * 0.1

        def fn(zz, ew, eb, ck, cb, sw, sb):
            params = model_mod.LocalityFfnParams(ew, eb, ck, cb, sw, sb)
            return model_mod.locality_ffn(zz, params, use_class_token=True)

        return fn, [z, expand_w, expand_b, conv_k, conv_b, squeeze_w, squeeze_b]

    def build_msa():
        d, heads, t = 8, 2, 5
        z = rng.standard_normal((t, d)) * 0.5
        arrays = [z] + [rng.standard_normal((d, d)) * 0.3 for _ in range(4)]
        biases = [rng.standard_normal(d) * 0.1 for _ in range(4)]

        def fn(zz, wq, wk, wv, wo, bq, bk, bv, bo):
            params = model_mod.AttentionParams(wq, bq, wk, bk, wv, bv, wo, bo)
            return model_mod.msa(zz, params, num_heads=heads)

        return fn, arrays + biases

    def build_block():
        cfg = model_mod.ModelConfig(
            embed_dim=8, depth=1, num_heads=2, patch_size=16, num_classes=3,
            ffn_kind="locality", activation="h_swish", final_image_size=48,
            use_class_token=True,
        )
        vit = model_mod.VitModel.create(cfg, init_seed=seed, dtype=np.float64)
        z = rng.standard_normal((10, cfg.embed_dim)) * 0.5
        names = [n for n in vit.params if n.startswith("blocks.0.")]
        arrays = [vit.params[n].data.copy() for n in names]

        def fn(zz, *param_values):
            for name, value in zip(names, param_values):
                vit.params[name] = value
            return model_mod.encoder_block(zz, vit.block_params(0), cfg)

        return fn, [z] + arrays

    def build_tiny_model():
        cfg = model_mod.ModelConfig(
            embed_dim=8, depth=1, num_heads=2, patch_size=16, num_classes=4,
            ffn_kind="locality", activation="h_swish", final_image_size=32,
            use_class_token=True,
        )
        vit = model_mod.VitModel.create(cfg, init_seed=seed, dtype=np.float64)
        images = rng.uniform(-1.0, 1.0, size=(2, 3, 32, 32))
        labels = rng.integers(0, cfg.num_classes, size=2)
        names = list(vit.params)
        arrays = [vit.params[n].data.copy() for n in names]

        def fn(*param_values):
            for name, value in zip(names, param_values):
                vit.params[name] = value
            logits = vit.forward(images)
            return ops.cross_entropy_ls(logits, labels, epsilon=0.1)

        return fn, arrays

    return [
        CheckCase("plain_ffn", build_plain_ffn, exclude=kink_guard),
        CheckCase("locality_ffn", build_locality_ffn, exclude=kink_guard),
        CheckCase("msa", build_msa),
        CheckCase("encoder_block", build_block, tolerance=MODEL_TOLERANCE),
        CheckCase("vit_tiny", build_tiny_model, tolerance=MODEL_TOLERANCE),
    ]


def run_checks(cases: Sequence[CheckCase], seed: int = 0) -> list[GradCheckReport]:
    reports = []
    for case in cases:
        fn, inputs = case.build()
        reports.append(grad_check(case.name, fn, inputs, tolerance=case.tolerance, exclude=case.exclude, seed=seed))
    return reports
