"""Model structure: patching, token/grid bijections, attention, blocks, embeddings."""

import numpy as np
import pytest

from budgetvit import model as M
from budgetvit import ops
from budgetvit.errors import ConfigError, ShapeError, StateError
from budgetvit.tensor import Tensor


def tiny_config(**kw):
    base = dict(embed_dim=8, depth=1, num_heads=2, patch_size=16, num_classes=3,
                ffn_kind="locality", activation="h_swish", final_image_size=48,
                use_class_token=True)
    base.update(kw)
    return M.ModelConfig(**base)


# -- config -------------------------------------------------------------------

def test_config_validates_divisibility():
    with pytest.raises(ConfigError):
        tiny_config(embed_dim=10, num_heads=4)
    with pytest.raises(ConfigError):
        tiny_config(final_image_size=50)
    with pytest.raises(ConfigError):
        tiny_config(ffn_kind="conv")
    with pytest.raises(ConfigError):
        tiny_config(activation="relu")


# -- patchify -----------------------------------------------------------------

def test_patchify_counts():
    assert M.patchify(np.zeros((3, 224, 224)), 16).shape == (196, 768)
    assert M.patchify(np.zeros((3, 32, 32)), 16).shape == (4, 768)


def test_patchify_single_patch_equals_flattened_image():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((3, 16, 16))
    out = M.patchify(img, 16).data
    assert out.shape == (1, 768)
    np.testing.assert_array_equal(out[0], img.reshape(-1))  # channel-major then row-major


def test_patchify_order_matches_manual_extraction():
    rng = np.random.default_rng(1)
    img = rng.standard_normal((3, 8, 8))
    got = M.patchify(img, 4).data
    g = 2
    for gi in range(g):
        for gj in range(g):
            patch = img[:, gi * 4:(gi + 1) * 4, gj * 4:(gj + 1) * 4]
            np.testing.assert_array_equal(got[gi * g + gj], patch.reshape(-1))


def test_patchify_indivisible_size_error():
    with pytest.raises(ShapeError):
        M.patchify(np.zeros((3, 30, 30)), 16)


# -- seq2im / im2seq ----------------------------------------------------------

def test_seq2im_row_major_placement():
    z = np.array([[1.0], [2.0], [3.0], [4.0]])
    out = M.seq2im(z).data
    np.testing.assert_array_equal(out[0], [[1.0, 2.0], [3.0, 4.0]])


def test_seq2im_single_token():
    out = M.seq2im(np.array([[5.0, 6.0]])).data
    assert out.shape == (2, 1, 1)


def test_roundtrips_are_bit_exact():
    rng = np.random.default_rng(2)
    for _ in range(50):
        g = int(rng.integers(1, 12))
        c = int(rng.integers(1, 9))
        z = rng.standard_normal((g * g, c))
        np.testing.assert_array_equal(M.im2seq(M.seq2im(z)).data, z)
        x = rng.standard_normal((c, g, g))
        np.testing.assert_array_equal(M.seq2im(M.im2seq(x)).data, x)


def test_seq2im_rejects_non_square_token_count():
    with pytest.raises(ShapeError):
        M.seq2im(np.zeros((5, 2)))


def test_im2seq_rejects_non_square_grid():
    with pytest.raises(ShapeError):
        M.im2seq(np.zeros((2, 3, 4)))


# -- FFNs ---------------------------------------------------------------------

def rand_locality_params(rng, d):
    return M.LocalityFfnParams(
        rng.standard_normal((d, 4 * d)), rng.standard_normal(4 * d),
        rng.standard_normal((4 * d, 3, 3)), rng.standard_normal(4 * d),
        rng.standard_normal((4 * d, d)), rng.standard_normal(d),
    )


def test_locality_identity_kernel_equals_plain_pipeline():
    rng = np.random.default_rng(3)
    d, n = 6, 16
    z = rng.standard_normal((n, d))
    ew, eb = rng.standard_normal((d, 4 * d)), rng.standard_normal(4 * d)
    sw, sb = rng.standard_normal((4 * d, d)), rng.standard_normal(d)
    k = np.zeros((4 * d, 3, 3))
    k[:, 1, 1] = 1.0
    loc = M.locality_ffn(z, M.LocalityFfnParams(ew, eb, k, np.zeros(4 * d), sw, sb),
                         use_class_token=False)
    plain = ops.linear(ops.h_swish(ops.h_swish(ops.linear(Tensor(z), ew, eb))), sw, sb)
    np.testing.assert_allclose(loc.data, plain.data, atol=1e-12)


def test_locality_zero_expand_broadcasts_squeeze_bias():
    rng = np.random.default_rng(4)
    d = 4
    p = rand_locality_params(rng, d)
    p = M.LocalityFfnParams(np.zeros((d, 4 * d)), np.zeros(4 * d), p.conv_k, np.zeros(4 * d),
                            p.squeeze_w, p.squeeze_b)
    out = M.locality_ffn(rng.standard_normal((9, d)), p, use_class_token=False)
    np.testing.assert_allclose(out.data, np.broadcast_to(p.squeeze_b, (9, d)), atol=1e-15)


def test_locality_non_square_patch_count_error():
    rng = np.random.default_rng(5)
    with pytest.raises(ShapeError):
        M.locality_ffn(rng.standard_normal((7, 4)), rand_locality_params(rng, 4), use_class_token=False)


def test_locality_receptive_field_is_chebyshev_1():
    rng = np.random.default_rng(6)
    d, g = 4, 8
    params = rand_locality_params(rng, d)
    z = rng.standard_normal((g * g, d))
    base = M.locality_ffn(z, params, use_class_token=False).data
    for token in (0, 27, 63):
        z2 = z.copy()
        z2[token] += 0.7
        diff = np.abs(M.locality_ffn(z2, params, use_class_token=False).data - base).max(axis=1)
        yi, xi = divmod(token, g)
        near = np.zeros((g, g), dtype=bool)
        near[max(0, yi - 1):yi + 2, max(0, xi - 1):xi + 2] = True
        assert (diff.reshape(g, g)[~near] < 1e-12).all()
        assert diff.reshape(g, g)[yi, xi] > 0


def test_class_token_never_enters_convolution():
    rng = np.random.default_rng(7)
    d = 4
    params = rand_locality_params(rng, d)
    z = rng.standard_normal((1, 10, d))
    out1 = M.locality_ffn(z, params, use_class_token=True).data
    z2 = z.copy()
    z2[0, 1:, :] = rng.standard_normal((9, d))
    out2 = M.locality_ffn(z2, params, use_class_token=True).data
    np.testing.assert_array_equal(out1[0, 0], out2[0, 0])


def test_plain_ffn_shape_roundtrip_and_bias_broadcast():
    rng = np.random.default_rng(8)
    for d in (4, 6):
        p = M.PlainFfnParams(np.zeros((d, 4 * d)), np.zeros(4 * d),
                             rng.standard_normal((4 * d, d)), rng.standard_normal(d))
        out = M.plain_ffn(rng.standard_normal((5, d)), p, activation="gelu")
        assert out.shape == (5, d)
        np.testing.assert_allclose(out.data, np.broadcast_to(p.squeeze_b, (5, d)), atol=1e-15)


# -- attention ----------------------------------------------------------------

def rand_attention_params(rng, d):
    return M.AttentionParams(*(rng.standard_normal((d, d)) if i % 2 == 0 else rng.standard_normal(d)
                               for i in range(8)))


def test_msa_single_token_reduces_to_projections():
    rng = np.random.default_rng(9)
    d = 8
    p = rand_attention_params(rng, d)
    z = rng.standard_normal((1, d))
    out = M.msa(z, p, num_heads=2).data
    v = z @ p.wv.data + p.bv.data
    expected = v @ p.wo.data + p.bo.data
    np.testing.assert_allclose(out, expected, rtol=1e-10)


def test_msa_permutation_equivariance():
    rng = np.random.default_rng(10)
    d, t = 8, 7
    p = rand_attention_params(rng, d)
    z = rng.standard_normal((t, d))
    perm = rng.permutation(t)
    out_perm = M.msa(z[perm], p, num_heads=4).data
    out = M.msa(z, p, num_heads=4).data
    np.testing.assert_allclose(out_perm, out[perm], rtol=1e-10)


def test_msa_divisibility_error():
    rng = np.random.default_rng(11)
    with pytest.raises(ConfigError):
        M.msa(rng.standard_normal((3, 6)), rand_attention_params(rng, 6), num_heads=4)


# -- encoder block / full model -------------------------------------------------

def zeroed_sublayer_model(cfg, seed=0):
    vit = M.VitModel.create(cfg, init_seed=seed, dtype=np.float64)
    d, h = cfg.embed_dim, cfg.hidden_dim
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        vit.params[pre + "attn.out.weight"] = Tensor(np.zeros((d, d)), requires_grad=True)
        vit.params[pre + "attn.out.bias"] = Tensor(np.zeros(d), requires_grad=True)
        vit.params[pre + "ffn.squeeze.weight"] = Tensor(np.zeros((h, d)), requires_grad=True)
        vit.params[pre + "ffn.squeeze.bias"] = Tensor(np.zeros(d), requires_grad=True)
    return vit


def test_block_is_identity_with_zeroed_sublayer_outputs():
    cfg = tiny_config(depth=2)
    vit = zeroed_sublayer_model(cfg)
    rng = np.random.default_rng(12)
    z = rng.standard_normal((10, cfg.embed_dim))
    out = M.encoder_block(z, vit.block_params(0), cfg)
    np.testing.assert_array_equal(out.data, z)
    # whole stack stays the identity on tokens
    z_t = Tensor(z)
    for i in range(cfg.depth):
        z_t = M.encoder_block(z_t, vit.block_params(i), cfg)
    np.testing.assert_array_equal(z_t.data, z)


def test_block_preserves_shape():
    cfg = tiny_config(final_image_size=224)
    vit = M.VitModel.create(cfg, init_seed=1, dtype=np.float64)
    rng = np.random.default_rng(13)
    for t in (5, 197):
        out = M.encoder_block(rng.standard_normal((t, cfg.embed_dim)), vit.block_params(0), cfg)
        assert out.shape == (t, cfg.embed_dim)


def test_forward_shapes_and_size_agnosticism():
    cfg = M.ModelConfig(embed_dim=64, depth=2, num_heads=4, patch_size=16, num_classes=10,
                        final_image_size=64)
    vit = M.VitModel.create(cfg, init_seed=2, dtype=np.float64)
    rng = np.random.default_rng(14)
    M.interpolate_pos_embed(vit, 2)
    assert vit.forward(rng.standard_normal((2, 3, 32, 32))).shape == (2, 10)
    M.interpolate_pos_embed(vit, 4)
    assert vit.forward(rng.standard_normal((2, 3, 64, 64))).shape == (2, 10)


def test_forward_identical_images_identical_logits():
    cfg = tiny_config(final_image_size=32)
    vit = M.VitModel.create(cfg, init_seed=3, dtype=np.float64)
    rng = np.random.default_rng(15)
    img = rng.standard_normal((1, 3, 32, 32))
    batch = np.concatenate([img, rng.standard_normal((1, 3, 32, 32)), img])
    logits = vit.forward(batch).data
    np.testing.assert_array_equal(logits[0], logits[2])
    assert not np.array_equal(logits[0], logits[1])


def test_forward_grid_mismatch_names_fix():
    cfg = tiny_config(final_image_size=48)
    vit = M.VitModel.create(cfg, init_seed=4)
    with pytest.raises(StateError) as ei:
        vit.forward(np.zeros((1, 3, 32, 32), dtype=np.float32))
    assert "interpolate_pos_embed" in str(ei.value)


def test_forward_without_class_token_uses_mean_pooling():
    cfg = tiny_config(use_class_token=False, final_image_size=32)
    vit = M.VitModel.create(cfg, init_seed=5, dtype=np.float64)
    assert "class_token" not in vit.params
    assert vit.params["pos_embed"].shape == (4, cfg.embed_dim)
    out = vit.forward(np.random.default_rng(16).standard_normal((2, 3, 32, 32)))
    assert out.shape == (2, cfg.num_classes)


# -- parameter accounting -------------------------------------------------------

def test_param_count_d384_locality_ffn():
    cfg = M.ModelConfig(embed_dim=384, depth=1, num_heads=6, patch_size=16, num_classes=1000,
                        final_image_size=224)
    vit = M.VitModel.create(cfg, init_seed=0)
    br = vit.param_breakdown()
    assert br["blocks.0.ffn.expand.weight"] + br["blocks.0.ffn.expand.bias"] == 591360
    assert br["blocks.0.ffn.conv.weight"] + br["blocks.0.ffn.conv.bias"] == 15360
    assert br["blocks.0.ffn.squeeze.weight"] + br["blocks.0.ffn.squeeze.bias"] == 590208
    assert sum(v for k, v in br.items() if ".ffn." in k) == 1196928


def test_locality_minus_plain_is_conv_cost_per_block():
    for d, depth in ((64, 3), (384, 2)):
        cfg_l = M.ModelConfig(embed_dim=d, depth=depth, num_heads=2, patch_size=16,
                              num_classes=10, ffn_kind="locality", final_image_size=32)
        cfg_p = M.ModelConfig(embed_dim=d, depth=depth, num_heads=2, patch_size=16,
                              num_classes=10, ffn_kind="plain", final_image_size=32)
        diff = (M.VitModel.create(cfg_l, init_seed=0).param_count()
                - M.VitModel.create(cfg_p, init_seed=0).param_count())
        assert diff == depth * (9 * 4 * d + 4 * d)


def test_zero_layer_model_parameters():
    cfg = M.ModelConfig(embed_dim=8, depth=0, num_heads=2, patch_size=16, num_classes=5,
                        final_image_size=32)
    vit = M.VitModel.create(cfg, init_seed=0)
    expected = (768 * 8 + 8) + (5 * 8) + 8 + (8 + 8) + (8 * 5 + 5)  # proj, pos, cls, final norm, head
    assert vit.param_count() == expected


# -- positional-embedding interpolation ----------------------------------------

def test_interpolate_same_grid_is_bit_identity():
    cfg = tiny_config(final_image_size=48)
    vit = M.VitModel.create(cfg, init_seed=6, dtype=np.float64)
    before = vit.params["pos_embed"].data
    M.interpolate_pos_embed(vit, 3)
    assert vit.params["pos_embed"].data is before


def test_interpolate_constant_rows_stay_constant():
    cfg = tiny_config(final_image_size=32, use_class_token=False)
    vit = M.VitModel.create(cfg, init_seed=7, dtype=np.float64)
    v = np.arange(cfg.embed_dim, dtype=np.float64)
    vit.params["pos_embed"] = Tensor(np.tile(v, (4, 1)), requires_grad=True)
    for new_grid in (3, 7, 1):
        M.interpolate_pos_embed(vit, new_grid)
        np.testing.assert_allclose(vit.params["pos_embed"].data,
                                   np.tile(v, (new_grid * new_grid, 1)), atol=1e-12)


def test_interpolate_linear_ramp_exact_midpoints():
    cfg = M.ModelConfig(embed_dim=2, depth=0, num_heads=1, patch_size=16, num_classes=2,
                        final_image_size=32, use_class_token=False)
    vit = M.VitModel.create(cfg, init_seed=8, dtype=np.float64)
    ramp = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    vit.params["pos_embed"] = Tensor(ramp.copy(), requires_grad=True)
    M.interpolate_pos_embed(vit, 3)
    grid = vit.params["pos_embed"].data.reshape(3, 3, 2)
    np.testing.assert_allclose(grid[..., 0], [[0, 0, 0], [0.5, 0.5, 0.5], [1, 1, 1]], atol=1e-15)
    np.testing.assert_allclose(grid[..., 1], [[0, 0.5, 1]] * 3, atol=1e-15)


def test_interpolate_class_row_copied_and_grid_tracked():
    cfg = tiny_config(final_image_size=48)
    vit = M.VitModel.create(cfg, init_seed=9, dtype=np.float64)
    cls_row = vit.params["pos_embed"].data[0].copy()
    M.interpolate_pos_embed(vit, 5)
    assert vit.current_grid == 5
    assert vit.params["pos_embed"].shape == (26, cfg.embed_dim)
    np.testing.assert_array_equal(vit.params["pos_embed"].data[0], cls_row)


def test_interpolate_up_down_preserves_corners():
    cfg = tiny_config(final_image_size=64, use_class_token=False)
    vit = M.VitModel.create(cfg, init_seed=10, dtype=np.float64)
    g = vit.current_grid
    before = vit.params["pos_embed"].data.reshape(g, g, -1).copy()
    M.interpolate_pos_embed(vit, 2 * g)
    M.interpolate_pos_embed(vit, g)
    after = vit.params["pos_embed"].data.reshape(g, g, -1)
    for ci, cj in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
        np.testing.assert_array_equal(after[ci, cj], before[ci, cj])
