import numpy as np
import pytest

from lipdistill.errors import ConfigError, DimensionError, DomainError
from lipdistill.heads import HeadConfig, TemporalHead, head_forward, head_param_count, init_params, param_shapes
from lipdistill.heads.model import PRELU_INIT, _unit
from lipdistill.tensor import Tensor, grad_check

FAMILIES = ["tcn", "mstcn", "ds_tcn", "ds_mstcn"]


def small(family, **kw):
    base = dict(base_width=6, input_dim=5, num_classes=4)
    base.update(kw)
    return HeadConfig.named(family, 1.0, **base)


def features(rng, B, C, T, dtype=np.float32):
    return rng.standard_normal((B, C, T)).astype(dtype)


# ---------------------------------------------------------------- config
def test_named_families_and_widths():
    cfg = HeadConfig.named("mstcn", 3.0)
    assert cfg.width == 768 and cfg.branch_width == 256 and cfg.kernel_sizes == (3, 5, 7)
    assert HeadConfig.named("ds_tcn").depthwise_separable
    assert [cfg.dilation(b) for b in range(4)] == [1, 2, 4, 8]
    with pytest.raises(ConfigError):
        HeadConfig.named("lstm")


@pytest.mark.parametrize("bad", [dict(kernel_sizes=(2,)), dict(dropout=1.0), dict(num_blocks=0),
                                 dict(kind="tcn", kernel_sizes=(3, 5))])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        HeadConfig(**bad)


def test_config_yaml_round_trip():
    cfg = HeadConfig.named("ds_mstcn", 1.5, base_width=8, input_dim=3, num_classes=7)
    assert HeadConfig.from_yaml(cfg.to_yaml()) == cfg
    assert HeadConfig.from_dict({"family": "ds_mstcn", "width_mult": 1.5, "base_width": 8,
                                 "input_dim": 3, "num_classes": 7}) == cfg


# ---------------------------------------------------------------- init
def test_init_statistics():
    cfg = HeadConfig.named("tcn", 1.0, input_dim=512, num_classes=500)
    P = init_params(cfg, seed=0, dtype="f64")
    w = P["block0.conv0.k3.conv.weight"].data
    assert w.var() == pytest.approx(2.0 / (512 * 3), rel=0.02)
    assert abs(w.mean()) < 3 * np.sqrt(2.0 / (512 * 3) / w.size)
    fc = P["fc.weight"].data
    assert fc.var() == pytest.approx(1.0 / 256, rel=0.02)
    assert np.all(P["block0.act.weight"].data == PRELU_INIT)
    assert np.all(P["block0.conv0.k3.bn.weight"].data == 1.0)
    assert np.all(P["block0.conv0.k3.bn.bias"].data == 0.0)
    assert np.all(P["block0.conv0.k3.conv.bias"].data == 0.0)
    assert np.all(P.buffers["block0.conv0.k3.bn.running_var"] == 1.0)


def test_init_is_seeded():
    cfg = small("mstcn")
    a, b, c = init_params(cfg, 1), init_params(cfg, 1), init_params(cfg, 2)
    assert all(np.array_equal(a[k].data, b[k].data) for k in param_shapes(cfg))
    assert not np.array_equal(a["fc.weight"].data, c["fc.weight"].data)


@pytest.mark.parametrize("family", FAMILIES)
def test_param_count_matches_shapes(family):
    cfg = small(family)
    assert TemporalHead(cfg).num_params() == head_param_count(cfg)


# ---------------------------------------------------------------- forward
@pytest.mark.parametrize("family", FAMILIES)
def test_eval_logits_ignore_padding_exactly(family):
    rng = np.random.default_rng(0)
    head = TemporalHead(small(family), seed=3)
    x = features(rng, 3, 5, 20)
    lengths = np.array([20, 11, 7])
    padded = x.copy()
    for i, n in enumerate(lengths):
        padded[i, :, n:] = rng.standard_normal((5, 20 - n)) * 100
    a = head(x, lengths).data
    b = head(padded, lengths).data
    assert np.array_equal(a, b)
    for i, n in enumerate(lengths):
        alone = head(x[i:i + 1, :, :n]).data
        assert np.array_equal(alone[0], a[i])


@pytest.mark.parametrize("family", FAMILIES)
def test_eval_logits_follow_batch_permutation_exactly(family):
    rng = np.random.default_rng(1)
    head = TemporalHead(small(family), seed=4)
    x = features(rng, 5, 5, 12)
    lengths = np.array([12, 5, 9, 12, 3])
    perm = np.array([3, 0, 4, 1, 2])
    a = head(x, lengths).data
    b = head(x[perm], lengths[perm]).data
    assert np.array_equal(a[perm], b)


@pytest.mark.parametrize("family", FAMILIES)
def test_batched_eval_matches_per_sample_eval(family):
    rng = np.random.default_rng(2)
    head = TemporalHead(small(family), seed=5, dtype="f64")
    x = features(rng, 4, 5, 15, np.float64)
    lengths = np.array([15, 4, 9, 15])
    a = head(x, lengths).data
    b = head(x, lengths, per_sample=False).data
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_train_mode_ignores_padding_content_exactly():
    rng = np.random.default_rng(3)
    cfg = small("mstcn", dropout=0.0)
    x = features(rng, 3, 5, 14)
    lengths = np.array([14, 6, 10])
    garbage = x.copy()
    garbage[1, :, 6:] = 55.0
    garbage[2, :, 10:] = -9.0
    a = TemporalHead(cfg, seed=1)(x, lengths, mode="train").data
    b = TemporalHead(cfg, seed=1)(garbage, lengths, mode="train").data
    assert np.array_equal(a, b)


def test_train_mode_updates_running_stats_and_eval_does_not():
    rng = np.random.default_rng(4)
    head = TemporalHead(small("tcn"), seed=0)
    key = "block0.conv0.k3.bn.running_mean"
    before = head.params.buffers[key].copy()
    head(features(rng, 2, 5, 8), mode="eval")
    assert np.array_equal(before, head.params.buffers[key])
    head(features(rng, 2, 5, 8), mode="train", rng=np.random.default_rng(0))
    assert not np.array_equal(before, head.params.buffers[key])


def test_depthwise_unit_with_delta_kernel_and_identity_pointwise_is_identity():
    cfg = small("ds_tcn", base_width=5, input_dim=5)
    P = init_params(cfg, 0, dtype="f64")
    p = "block0.conv0.k3."
    P.params[p + "dw.weight"].data[:] = np.array([0.0, 1.0, 0.0])
    P.params[p + "pw.weight"].data[:] = np.eye(5)[:, :, None]
    for bn in ("dw_bn.", "bn."):
        P.buffers[p + bn + "running_var"][:] = 1.0 - 1e-5  # var + eps == 1
    for act in ("dw_act.weight", "act.weight"):
        P.params[p + act].data[:] = 1.0
    x = Tensor(np.random.default_rng(0).standard_normal((2, 5, 9)))
    y = _unit(cfg, P, p, x, 3, 1, False, None)
    np.testing.assert_allclose(y.data, x.data, atol=1e-12)


def test_depthwise_impulse_response_is_the_kernel():
    from lipdistill.tensor import conv1d

    k = np.array([[[1.0, 2.0, 3.0]], [[-1.0, 0.5, 4.0]]])
    x = np.zeros((1, 2, 7))
    x[0, :, 3] = 1.0
    y = conv1d(Tensor(x), Tensor(k), padding=1, groups=2).data
    # cross-correlation: an impulse at t0 returns the kernel reversed around t0
    assert np.array_equal(y[0, :, 2:5], k[:, 0, ::-1])


def test_shape_and_length_errors():
    head = TemporalHead(small("tcn"))
    with pytest.raises(DimensionError):
        head(np.zeros((1, 4, 8), np.float32))
    with pytest.raises(DimensionError):
        head(np.zeros((2, 5, 8), np.float32), lengths=[8])
    with pytest.raises(DomainError):
        head(np.zeros((1, 5, 8), np.float32), lengths=[9])
    with pytest.raises(DomainError):
        head(np.zeros((1, 5, 8), np.float32), lengths=[0])


def test_full_ds_head_gradient_matches_finite_differences():
    cfg = HeadConfig.named("ds_tcn", 1.0, base_width=3, input_dim=2, num_classes=3, dropout=0.1)
    for seed in range(20):
        P = init_params(cfg, seed, dtype="f64")
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((2, 2, 7)), requires_grad=True)
        coef = rng.standard_normal((2, 3))
        lengths = np.array([7, 5])

        def f():
            z = head_forward(cfg, P, x, lengths, mode="train", rng=np.random.default_rng(seed))
            return (z * coef).sum()

        # a slightly wider step keeps roundoff below truncation for the deep composite
        err = grad_check(f, [x] + list(P), eps=2e-5)
        assert err < 1e-4, (seed, err)


# ---------------------------------------------------------------- persistence
def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    head = TemporalHead(small("ds_mstcn"), seed=9)
    head(features(rng, 4, 5, 10), mode="train", rng=rng)
    head.save(tmp_path / "h.ckpt", {"note": "x"})
    back = TemporalHead.load(tmp_path / "h.ckpt")
    assert back.cfg == head.cfg
    x = features(rng, 2, 5, 10)
    assert np.array_equal(back(x).data, head(x).data)


def test_load_rejects_non_head_checkpoint(tmp_path):
    from lipdistill.tensor import save_checkpoint

    save_checkpoint(tmp_path / "other.ckpt", {"a": np.zeros(2)}, {"kind": "other"})
    with pytest.raises(DomainError):
        TemporalHead.load(tmp_path / "other.ckpt")
