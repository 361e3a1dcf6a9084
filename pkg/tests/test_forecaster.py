import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenforecast import data as D
from scenforecast import forecaster as F
from scenforecast import tensor as T
from scenforecast.trainer import make_batch
from oracles import gradcheck

CFG = dict(n_in=4, n_sites=2, n_t=16, n_known=8, n_m=8, n_heads=2, n_enc=2, n_dec=1, d_ff=8, d_z=4,
           style_hidden=6, year0=2012)


@pytest.fixture(scope="module")
def setup():
    reg = D.synth_region("wind", 4, 60, 0, n_sites=2)
    al = D.align(D.region_series(reg), ("point_forecast",))
    batch = make_batch(D.window_samples(al, 16, 8, stride=9)[:3])
    model = F.Forecaster(F.ForecasterConfig(**CFG), np.random.default_rng(0))
    return model, batch


def test_mask_p_zero_all_ones():
    m = F.sample_mask({"a": (30, 30)}, 0.0, 1)
    assert np.all(m.masks["a"] == 1.0) and m.zero_fraction() == 0.0


def test_mask_zero_fraction_ci():
    p, n = 0.2, 100_000
    m = F.sample_mask({"a": (n,)}, p, 7)
    half = 2.5758 * math.sqrt(p * (1 - p) / n)
    assert abs(m.zero_fraction() - p) < half


def test_mask_determinism_and_errors():
    a = F.sample_mask({"a": (5, 5)}, 0.3, 4).masks["a"]
    b = F.sample_mask({"a": (5, 5)}, 0.3, 4).masks["a"]
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1.0}
    for p in (1.0, 1.5, -0.1):
        with pytest.raises(ValueError, match="dropout probability"):
            F.sample_mask({"a": (2,)}, p, 0)


def test_mask_inverted_scaling():
    m = F.DropoutMask({"w": np.array([1.0, 0.0, 1.0])}, 0.5)
    W = T.Tensor(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(m.apply("w", W).data, [2.0, 0.0, 6.0])
    assert m.apply("other", W) is W


def test_latent_draw_reproducible():
    a, b = F.LatentDraw.sample(3, 2, 5), F.LatentDraw.sample(3, 2, 5)
    np.testing.assert_array_equal(a.z, b.z)
    assert a.z.shape == (2, 5)


def _style(C=3, d_z=2, hidden=4, seed=0):
    g = np.random.default_rng(seed)
    return {"W1": T.Tensor(g.normal(size=(d_z, hidden))), "b1": T.Tensor(np.zeros(hidden)),
            "W2": T.Tensor(g.normal(size=(hidden, hidden))), "b2": T.Tensor(np.zeros(hidden)),
            "A": T.Tensor(g.normal(size=(hidden, 2 * C))), "a": T.Tensor(g.normal(size=2 * C))}


def test_adain_identity_style_is_instance_norm():
    sp = _style()
    sp["A"].data[...] = 0.0
    sp["a"].data[:] = [1, 1, 1, 0, 0, 0]
    h = np.random.default_rng(1).normal(size=(1, 10, 3)) * 4 + 2
    out = F.adain_inject(h, np.ones((1, 2)), sp).data
    ref = (h - h.mean(1, keepdims=True)) / np.sqrt(h.var(1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_adain_zero_scale_gives_shift():
    sp = _style()
    sp["A"].data[...] = 0.0
    sp["a"].data[:] = [0, 0, 0, 0.1, -0.2, 0.3]
    out = F.adain_inject(np.random.default_rng(2).normal(size=(1, 7, 3)), np.ones((1, 2)), sp).data
    np.testing.assert_allclose(out, np.tile([0.1, -0.2, 0.3], (1, 7, 1)), atol=1e-15)


def test_adain_affine_oracle():
    sp = _style()
    h = np.random.default_rng(3).normal(size=(2, 6, 3))
    z = np.random.default_rng(4).normal(size=(2, 2))
    lr = lambda x: np.where(x > 0, x, 0.2 * x)  # noqa: E731
    w = lr(lr(z @ sp["W1"].data) @ sp["W2"].data)
    ss = w @ sp["A"].data + sp["a"].data
    norm = (h - h.mean(1, keepdims=True)) / np.sqrt(h.var(1, keepdims=True) + 1e-5)
    ref = norm * ss[:, None, :3] + ss[:, None, 3:]
    np.testing.assert_allclose(F.adain_inject(h, z, sp).data, ref, atol=1e-12)
    z2 = z.copy()
    z2[0] += 1.0
    out2 = F.adain_inject(h, z2, sp).data
    assert not np.allclose(out2[0], ref[0]) and np.allclose(out2[1], ref[1])


def test_adain_errors_and_constant_channel():
    with pytest.raises(ValueError, match="twice"):
        F.adain_inject(np.zeros((1, 4, 2)), np.ones((1, 2)), _style(C=3))
    out = F.instance_norm(T.Tensor(np.ones((1, 5, 2)))).data
    assert np.all(np.isfinite(out)) and np.all(out == 0.0)


def test_instance_norm_statistics():
    h = np.random.default_rng(5).normal(size=(3, 40, 6)) * 7 - 3
    out = F.instance_norm(T.Tensor(h)).data
    assert np.all(np.abs(out.mean(1)) < 1e-6)
    assert np.all(np.abs(out.var(1) - 1) < 1e-4)


def test_spatial_block_zero_cross_kernels_decouple_sites():
    g = np.random.default_rng(6)
    K = g.normal(size=(3, 3, 3))
    for i in range(3):
        for j in range(3):
            if i != j:
                K[i, j] = 0.0
    pre = g.normal(size=(1, 10, 3))
    base = F.spatial_block(T.Tensor(pre), T.Tensor(K), T.Tensor(np.zeros(3))).data
    pre2 = pre.copy()
    pre2[..., 1] += 1.0
    moved = F.spatial_block(T.Tensor(pre2), T.Tensor(K), T.Tensor(np.zeros(3))).data
    np.testing.assert_array_equal(base[..., [0, 2]], moved[..., [0, 2]])
    K2 = g.normal(size=(3, 3, 3))
    a = F.spatial_block(T.Tensor(pre), T.Tensor(K2), T.Tensor(np.zeros(3))).data
    b = F.spatial_block(T.Tensor(pre2), T.Tensor(K2), T.Tensor(np.zeros(3))).data
    assert not np.allclose(a[..., 0], b[..., 0])


def test_param_partition_covers_all(setup):
    model, _ = setup
    dr, fi = set(model.dropout_names), set(model.fixed_names)
    assert dr and not dr & fi and dr | fi == set(model.params)
    assert all(n.startswith("enc.") for n in dr)


def test_forward_shape_finite_and_deterministic(setup):
    model, batch = setup
    z = np.random.default_rng(0).normal(size=(3, 4))
    a, n_clip = model.forward_with_stats(batch.enc_x, batch.enc_stamps, batch.dec_x, batch.dec_stamps, z)
    b = F.forecaster_forward(model, batch, z)
    assert a.shape == (3, 8, 2) and np.all(np.isfinite(a.data)) and n_clip >= 0
    np.testing.assert_array_equal(a.data, b.data)
    assert np.all((a.data >= 0) & (a.data <= 1.05))


def test_masks_change_output(setup):
    model, batch = setup
    z = np.zeros((3, 4))
    differ = 0
    for i in range(20):
        m1, m2 = model.sample_mask(0.2, 2 * i), model.sample_mask(0.2, 2 * i + 1)
        o1 = F.forecaster_forward(model, batch, z, m1).data
        o2 = F.forecaster_forward(model, batch, z, m2).data
        differ += not np.array_equal(o1, o2)
    assert differ == 20


def test_same_mask_same_output(setup):
    model, batch = setup
    z = np.ones((3, 4))
    m = model.sample_mask(0.2, 5)
    np.testing.assert_array_equal(F.forecaster_forward(model, batch, z, m).data,
                                  F.forecaster_forward(model, batch, z, m).data)


def test_gradients_flow_to_fixed_and_dropout(setup):
    model, batch = setup
    z = np.random.default_rng(1).normal(size=(3, 4))
    out = F.forecaster_forward(model, batch, z, model.sample_mask(0.3, 0))
    names = list(model.params)
    grads = dict(zip(names, T.grad(T.sum(out * out), [model.params[n] for n in names])))
    assert any(np.any(grads[n].data != 0) for n in model.fixed_names)
    for n in model.dropout_names:
        assert np.any(grads[n].data != 0)


def test_dropped_entries_get_no_gradient(setup):
    model, batch = setup
    m = model.sample_mask(0.5, 3)
    out = F.forecaster_forward(model, batch, np.zeros((3, 4)), m)
    name = model.dropout_names[0]
    (g,) = T.grad(T.sum(out), [model.params[name]])
    assert np.all(g.data[m.masks[name] == 0] == 0.0)


def test_forward_gradcheck_small():
    cfg = F.ForecasterConfig(n_in=2, n_sites=1, n_t=4, n_known=2, n_m=4, n_heads=1, n_enc=2, n_dec=1,
                             d_ff=4, d_z=2, style_hidden=3, attention="full", use_embedding=False,
                             clip_hi=50.0, out_bias=10.0)
    model = F.Forecaster(cfg, np.random.default_rng(2))
    g = np.random.default_rng(3)
    enc, dec = g.random((1, 4, 2)), g.random((1, 4, 2))
    stamps = np.zeros((1, 4, 6), dtype=int)
    W = model.params["dec.0.ff.W1"]

    def f(w):
        model.params["dec.0.ff.W1"] = w
        try:
            return model.forward(enc, stamps, dec, stamps, np.ones((1, 2)))
        finally:
            model.params["dec.0.ff.W1"] = W

    assert gradcheck(f, W.data) < 1e-4


def test_config_validation():
    with pytest.raises(ValueError, match="encoder"):
        F.ForecasterConfig(n_in=2, n_sites=1, n_enc=0)
    with pytest.raises(ValueError, match="divisible"):
        F.ForecasterConfig(n_in=2, n_sites=1, n_m=30, n_heads=4)
    with pytest.raises(ValueError, match="halved"):
        F.ForecasterConfig(n_in=2, n_sites=1, n_t=6, n_known=3, n_enc=3)
    with pytest.raises(ValueError, match="lagging"):
        F.ForecasterConfig(n_in=2, n_sites=1, n_t=8, n_known=8)


def test_numeric_failure_is_reported(setup):
    model, batch = setup
    saved = model.params["out.W"].data.copy()
    model.params["out.W"].data[...] = np.inf
    try:
        with pytest.raises(T.NumericError, match="forecaster forward failed"):
            F.forecaster_forward(model, batch, np.zeros((3, 4)))
    finally:
        model.params["out.W"].data[...] = saved


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.05, 0.6))
def test_forward_bounded_property(seed, p):
    model = F.Forecaster(F.ForecasterConfig(**CFG), np.random.default_rng(seed % 7))
    g = np.random.default_rng(seed)
    enc, dec = g.random((1, 16, 4)), g.random((1, 16, 4))
    dec[:, 8:, :2] = 0.0
    stamps = np.tile([2012, 1, 1, 0, 0, 0], (1, 16, 1))
    out = model.forward(enc, stamps, dec, stamps, g.normal(size=(1, 4)), model.sample_mask(p, seed))
    assert out.shape == (1, 8, 2) and np.all((out.data >= 0) & (out.data <= 1.05))
