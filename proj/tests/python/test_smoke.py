import math

import numpy as np
import pytest

import cfalearn as cl


def test_censuses():
    assert list(cl.census(cl.bayer_pattern(8))) == [16, 32, 16, 0]
    assert list(cl.census(cl.cfz_pattern(8, 4))) == [4, 8, 4, 48]


def test_pattern_text_round_trip(tmp_path):
    p = cl.bayer_pattern(2)
    assert cl.format_pattern(p) == "CFA v1 P=2\nG R\nB G\n"
    np.testing.assert_array_equal(cl.parse_pattern(cl.format_pattern(p)), p)
    cl.write_pattern(p, tmp_path / "b.cfa")
    np.testing.assert_array_equal(cl.read_pattern(tmp_path / "b.cfa"), p)
    with pytest.raises(ValueError):
        cl.parse_pattern("CFA v1 P=2\nG R\nB\n")


def test_soft_select_and_entropy():
    w = np.zeros((8, 8, 4))
    sel = cl.soft_select(w, cl.alpha_at(0))
    np.testing.assert_allclose(sel, 0.25)
    assert cl.mean_entropy(sel) == pytest.approx(math.log(4.0))
    w[..., 2] = 1.0
    assert (cl.harden(w) == 2).all()
    assert cl.alpha_at(1000, 1e-3) == pytest.approx(2.0)


def test_bilinear_on_constant_gray():
    s = np.full((16, 16), 0.3)
    out = cl.bilinear_demosaick(s, cl.bayer_pattern(2))
    assert out.shape == (16, 16, 3)
    np.testing.assert_allclose(out, 0.3, atol=1e-12)


def test_psnr():
    a = np.full((4, 4, 3), 0.5)
    assert cl.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert math.isinf(cl.psnr(a, a))


def test_network_shapes_and_forward():
    params = cl.init_params(period=4, proposals=3, features=5, seed=1)
    assert params.w_log.shape == (144, 16 * 3 * 3)
    rng = np.random.default_rng(0)
    x = rng.uniform(0.05, 1.0, size=(2, 12, 12))
    out = cl.reconstruct(x, params)
    assert out["y_hat"].shape == (2, 4, 4, 3)
    np.testing.assert_allclose((out["f"] * out["lambda"]).sum(axis=-1), out["y_hat"], atol=1e-12)


def test_patch_sampler_geometry():
    img = cl.synthetic_image(32, 32, 4)
    b = cl.sample_patch_pairs([img], period=4, batch=8, seed=1)
    assert b["x"].shape == (8, 12, 12, 4)
    assert b["y"].shape == (8, 4, 4, 3)
    assert all(t % 4 == 0 and t >= 4 for t in b["top"])


def test_tiny_joint_training_is_deterministic():
    imgs = [cl.synthetic_image(48, 48, s) for s in range(3)]
    val = [cl.synthetic_image(48, 48, 99)]
    cfg = cl.TrainConfig(period=4, proposals=2, features=4)
    cfg.batch_size = 4
    cfg.lr = 0.05
    cfg.momentum = 0.9
    cfg.iters = 30
    cfg.validate_every = 10
    cfg.val_patches = 8
    cfg.log_init_scale = 0.1
    cfg.log_init_radius = 1
    a = cl.train_joint(cfg, imgs, val)
    b = cl.train_joint(cfg, imgs, val)
    np.testing.assert_array_equal(a["pattern"], b["pattern"])
    np.testing.assert_array_equal(a["params"].w_log, b["params"].w_log)
    assert [e["iteration"] for e in a["log"]] == [0, 10, 20, 30]
    mosaic = cl.simulate_capture(val[0], a["pattern"], 0.0, 0)
    rec = cl.reconstruct_image(mosaic, a["pattern"], a["params"])
    assert rec.shape == (48, 48, 3)
