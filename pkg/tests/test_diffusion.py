import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artimech import geometry as geo
from artimech.diffusion import (
    Batch, DenoiserNet, PolicyConfig, denoise_step, fit, grad_check, load_model, loss_and_grad,
    make_schedule, q_sample, sample_trajectory, save_model, timestep_embedding,
)
from artimech.diffusion.policy import (
    DivergenceError, loss_fixed, make_net, project_rotations, sample_normalized,
)
from artimech.diffusion.schedule import NoiseSchedule
from artimech.diffusion.toy import assign_modes, constant_windows, two_mode_windows


def small_batch(n=16, d=40, cond=16, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(n, d)), rng.normal(size=(n, cond // 2)), rng.normal(size=(n, cond // 2)))


# --------------------------------------------------------------------------- schedule

def test_schedule_k100():
    s = make_schedule(100)
    assert s.K == 100 and len(s.alpha_bars) == 100
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[0] >= 0.99 and s.alpha_bars[-1] < 0.01
    assert s.sigmas[0] == 0.0 and np.all(s.sigmas[1:] > 0)
    assert np.all((s.betas > 0) & (s.betas <= 0.999))
    for arr in (s.alphas, s.gammas):
        assert np.all(np.isfinite(arr)) and np.all(arr > 0)


def test_schedule_matches_closed_form_pointwise():
    K, off = 50, 0.008
    s = make_schedule(K)
    f = lambda t: np.cos((t / K + off) / (1 + off) * np.pi / 2) ** 2
    for k in (1, 7, 25, 49):
        beta = min(1 - f(k) / f(k - 1), 0.999)
        assert s.betas[k - 1] == pytest.approx(beta, rel=1e-12)
        assert s.alphas[k - 1] == pytest.approx(1 / np.sqrt(1 - beta), rel=1e-12)
        ab = np.prod([1 - min(1 - f(j) / f(j - 1), 0.999) for j in range(1, k + 1)])
        assert s.alpha_bars[k - 1] == pytest.approx(ab, rel=1e-10)
        assert s.gammas[k - 1] == pytest.approx(beta / np.sqrt(1 - ab), rel=1e-10)


def test_schedule_single_step():
    s = make_schedule(1)
    assert s.K == 1 and s.sigmas[0] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 400))
def test_schedule_invariants(K):
    s = make_schedule(K)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.sigmas[0] == 0 and np.all(np.isfinite(s.sigmas))


def test_schedule_rejects_zero():
    with pytest.raises(ValueError):
        make_schedule(0)


# --------------------------------------------------------------------------- forward noising

def test_q_sample_examples():
    s = make_schedule(100)
    a0 = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(q_sample(a0, 1, np.zeros_like(a0), s), np.sqrt(s.alpha_bars[0]) * a0)
    eps = np.ones_like(a0)
    assert np.allclose(q_sample(a0, 1, eps, s), a0, atol=0.1)


def test_q_sample_variance_monte_carlo():
    s = make_schedule(100)
    rng = np.random.default_rng(0)
    for k in (10, 50, 90):
        eps = rng.standard_normal((10_000, 4))
        x = q_sample(np.full((10_000, 4), 0.7), k, eps, s)
        var = x.var(axis=0)
        assert np.all(np.abs(var / (1 - s.alpha_bars[k - 1]) - 1) < 0.05)


def test_q_sample_errors():
    s = make_schedule(10)
    with pytest.raises(ValueError):
        q_sample(np.zeros((2, 3)), 1, np.zeros((2, 4)), s)
    with pytest.raises(ValueError):
        q_sample(np.zeros(3), 11, np.zeros(3), s)


# --------------------------------------------------------------------------- reverse step

def hand_schedule(alpha, gamma, sigma):
    one = lambda v: np.array([float(v)])
    return NoiseSchedule(one(0.5), one(0.5), one(alpha), one(gamma), one(sigma))


def test_denoise_identity():
    s = hand_schedule(1.0, 0.3, 0.0)
    zero = lambda A, ks, cond: np.zeros_like(A)
    A = np.array([[1.0, -2.0, 3.0]])
    out = denoise_step(zero, A, np.zeros((1, 2)), np.zeros((1, 2)), 1, s, np.random.default_rng(0))
    assert np.array_equal(out, A)


def test_denoise_hand_arithmetic():
    s = hand_schedule(2.0, 0.5, 0.0)
    one = lambda A, ks, cond: np.ones_like(A)
    out = denoise_step(one, np.array([[3.0]]), np.zeros((1, 1)), np.zeros((1, 1)), 1, s, None)
    assert out[0, 0] == 5.0


def test_denoise_noise_term_and_determinism():
    s = make_schedule(20)
    net = DenoiserNet(10, 8, hidden=(16,), seed=1)
    A = np.random.default_rng(0).normal(size=(3, 10))
    O, H = np.zeros((3, 4)), np.zeros((3, 4))
    a = denoise_step(net, A, O, H, 10, s, np.random.default_rng(5))
    b = denoise_step(net, A, O, H, 10, s, np.random.default_rng(5))
    c = denoise_step(net, A, O, H, 10, s, np.random.default_rng(6))
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    alpha, gamma, sigma = s.coefficients(10)
    z = np.random.default_rng(5).standard_normal(A.shape)
    expect = alpha * (A - gamma * net.predict(A, np.full(3, 10), np.hstack([O, H]))) + sigma * z
    assert np.allclose(a, expect, atol=1e-14)
    with pytest.raises(ValueError):
        denoise_step(net, A, O, H, 21, s, np.random.default_rng(0))


def test_divergence_is_reported():
    s = make_schedule(5)
    blow = lambda A, ks, cond: np.full_like(A, np.inf)
    blow.in_dim = 4
    with pytest.raises(DivergenceError):
        sample_normalized(blow, np.zeros((1, 2)), np.zeros((1, 2)), s, np.random.default_rng(0))


def test_untrained_sampling_deterministic():
    net = DenoiserNet(40, 8, seed=0)
    s = make_schedule(100)
    a = sample_normalized(net, np.zeros((2, 4)), np.zeros((2, 4)), s, np.random.default_rng(9))
    b = sample_normalized(net, np.zeros((2, 4)), np.zeros((2, 4)), s, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_delta_distribution_recovery():
    target = np.random.default_rng(3).uniform(-1, 1, 10)
    cfg = PolicyConfig(T_p=1, T_a=1, epochs=40, lr=3e-3, hidden=(64, 64))
    model = fit(constant_windows(4096, target), cfg)
    S = sample_normalized(model.net, np.zeros((200, 4)), np.zeros((200, 4)), model.schedule,
                          np.random.default_rng(0))
    rms = np.sqrt(np.mean((S - target) ** 2, axis=1))
    assert rms.max() < 0.05


# --------------------------------------------------------------------------- loss and gradients

def zero_output_net(d=40, cond=8):
    net = DenoiserNet(d, cond, hidden=(32, 32), seed=0)
    v = net.trunk.views(net.params)
    v["W2"][...] = 0.0
    v["b2"][...] = 0.0
    return net


def test_zero_net_loss_is_window_dimension():
    net = zero_output_net()
    batch = small_batch(n=8192, cond=8)
    loss, _ = loss_and_grad(net, batch, make_schedule(100), np.random.default_rng(0))
    assert abs(loss / 40 - 1) < 0.05


def test_duplicated_rows_contribute_equally():
    net = DenoiserNet(40, 8, hidden=(32,), seed=0)
    one = small_batch(n=1, cond=8)
    two = one.rows(np.array([0, 0]))
    s = make_schedule(10)
    eps = np.random.default_rng(0).normal(size=(1, 40))
    l1, g1 = loss_fixed(net, one, np.array([4]), eps, s)
    l2, g2 = loss_fixed(net, two, np.array([4, 4]), np.vstack([eps, eps]), s)
    assert l1 == pytest.approx(l2, rel=1e-12) and np.allclose(g1, g2, rtol=1e-10, atol=1e-14)


def test_loss_nonnegative():
    net = DenoiserNet(40, 8, hidden=(32,), seed=0)
    for seed in range(5):
        loss, _ = loss_and_grad(net, small_batch(cond=8, seed=seed), make_schedule(100),
                                np.random.default_rng(seed))
        assert loss >= 0


def test_grad_check_fresh_net():
    net = make_net(PolicyConfig(), cond_dim=16)
    assert grad_check(net, small_batch(), make_schedule(100)) < 1e-4


def test_grad_check_without_skip_and_small_net():
    net = DenoiserNet(40, 16, hidden=(32, 32), seed=4)
    assert grad_check(net, small_batch(seed=2), make_schedule(100), np.random.default_rng(1)) < 1e-4


def test_grad_check_corrupted_gradient_detected():
    net = make_net(PolicyConfig(), cond_dim=16)
    batch, s = small_batch(), make_schedule(100)
    bad = lambda p, k, eps: 1.5 * loss_fixed(net, batch, k, eps, s, p)[1]
    assert grad_check(net, batch, s, grad_fn=bad) > 1e-2


def test_grad_check_linear_net_exact():
    # loss is quadratic in each parameter, so central differences are exact up to round-off;
    # a wide step keeps round-off far below the tolerance
    net = DenoiserNet(40, 16, hidden=(), activation="identity", seed=0)
    assert grad_check(net, small_batch(), make_schedule(100), h=1e-2) < 1e-8


def test_grad_check_point_cloud_net():
    net = DenoiserNet(40, 16, hidden=(32,), pc_features=8, seed=0)
    rng = np.random.default_rng(0)
    b = small_batch()
    b.pc = rng.normal(size=(16, 50, 3))
    assert grad_check(net, b, make_schedule(100)) < 1e-4


def test_embedding_shape_and_range():
    e = timestep_embedding(np.arange(1, 101))
    assert e.shape == (100, 32) and np.all(np.abs(e) <= 1)
    assert len({tuple(np.round(r, 12)) for r in e}) == 100


# --------------------------------------------------------------------------- training

def test_epochs_zero_leaves_net_unchanged():
    w, _, _ = two_mode_windows(128)
    net = make_net(PolicyConfig(hidden=(32,)), 8)
    before = net.params.copy()
    model = fit(w, PolicyConfig(epochs=0, hidden=(32,)), net=net)
    assert np.array_equal(model.net.params, before) and np.array_equal(model.net.ema, before)
    assert model.losses == []


def test_training_is_bitwise_deterministic():
    w, _, _ = two_mode_windows(256)
    cfg = PolicyConfig(epochs=3, hidden=(32, 32), lr=1e-3)
    a, b = fit(w, cfg), fit(w, cfg)
    assert np.array_equal(a.net.params, b.net.params) and np.array_equal(a.net.ema, b.net.ema)
    assert a.losses == b.losses


def test_toy_training_reduces_loss_and_finds_both_modes():
    w, centers, spread = two_mode_windows(1024, seed=0)
    model = fit(w, PolicyConfig(epochs=100, lr=1e-3, seed=0))
    assert model.losses[-1] < 0.3 * model.losses[0]
    S = sample_normalized(model.net, np.zeros((200, 4)), np.zeros((200, 4)), model.schedule,
                          np.random.default_rng(1))
    mode, _ = assign_modes(S, centers, spread)
    assert 0 < mode.mean() < 1


def test_nan_loss_aborts():
    w, _, _ = two_mode_windows(64)
    w.batch.A0[3, 0] = np.nan
    with pytest.raises(DivergenceError):
        fit(w, PolicyConfig(epochs=1, hidden=(8,)))


def test_ema_tracks_parameters():
    w, _, _ = two_mode_windows(64)
    cfg = PolicyConfig(epochs=1, hidden=(8,), batch_size=64, ema_decay=0.5)
    net = make_net(cfg, 8)
    p0 = net.params.copy()
    model = fit(w, cfg, net=net)
    assert np.allclose(model.net.ema, 0.5 * p0 + 0.5 * model.net.params)


# --------------------------------------------------------------------------- config, files, outputs

def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(T_a=5, T_p=4).validate()
    with pytest.raises(ValueError):
        PolicyConfig(K=0).validate()
    with pytest.raises(ValueError):
        PolicyConfig.from_dict({"learning_rate": 1})
    cfg = PolicyConfig.from_dict({"hidden": [8, 8], "epochs": 2})
    assert cfg.hidden == (8, 8) and PolicyConfig.from_dict(cfg.to_dict()) == cfg


def tiny_model(pc_features=0):
    from artimech.expert import collect_dataset
    from artimech.diffusion import train
    ds = collect_dataset(["Microwave"], per_object=2, trials=1, seed=0, counts=2)
    cfg = PolicyConfig(epochs=2, hidden=(16,), K=10, pc_features=pc_features, n_points=32)
    clouds = None
    if pc_features:
        rng = np.random.default_rng(0)
        clouds = [rng.normal(size=(len(d.keyframes), 32, 3)) for d in ds.demos]
    return train(ds, cfg, point_clouds=clouds), ds


def test_model_file_roundtrip(tmp_path):
    model, ds = tiny_model()
    path = tmp_path / "m.bin"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(back.net.params, model.net.params) and np.array_equal(back.net.ema, model.net.ema)
    assert back.cfg == model.cfg
    o, a = ds.demos[0].keyframes[0]
    O, H = np.tile(o, (4, 1)), np.tile(o[:10], (4, 1))
    x = sample_trajectory(model, O, H, np.random.default_rng(0))
    y = sample_trajectory(back, O, H, np.random.default_rng(0))
    assert np.array_equal(x, y)
    save_model(back, tmp_path / "again.bin")
    assert path.read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_model_file_errors(tmp_path):
    model, _ = tiny_model()
    path = tmp_path / "m.bin"
    save_model(model, path)
    raw = path.read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_model(tmp_path / "cut.bin")
    bad = raw.replace(b'"v": 1', b'"v": 9')
    (tmp_path / "v.bin").write_bytes(bad)
    with pytest.raises(ValueError):
        load_model(tmp_path / "v.bin")


def test_sampled_rotations_are_valid():
    model, ds = tiny_model()
    o, _ = ds.demos[0].keyframes[0]
    out = sample_trajectory(model, np.tile(o, (4, 1)), np.tile(o[:10], (4, 1)), np.random.default_rng(0))
    assert out.shape == (1, 4, 10)
    for a in out.reshape(-1, 10):
        R = geo.rot6d_decode(a[3:9])
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9 and abs(np.linalg.det(R) - 1) < 1e-9
        assert np.allclose(geo.rot6d_encode(R), a[3:9], atol=1e-12)


def test_project_rotations_idempotent():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 3, 10))
    p = project_rotations(a)
    assert np.allclose(project_rotations(p), p, atol=1e-12)
    assert np.array_equal(p[..., :3], a[..., :3]) and np.array_equal(p[..., 9], a[..., 9])


def test_point_cloud_variant_trains_and_samples():
    model, ds = tiny_model(pc_features=4)
    o, _ = ds.demos[0].keyframes[0]
    pc = np.random.default_rng(1).normal(size=(1, 32, 3))
    out = sample_trajectory(model, np.tile(o, (4, 1)), np.tile(o[:10], (4, 1)), np.random.default_rng(0), pc)
    assert out.shape == (1, 4, 10) and np.all(np.isfinite(out))
    with pytest.raises(ValueError):
        sample_trajectory(model, np.tile(o, (4, 1)), np.tile(o[:10], (4, 1)), np.random.default_rng(0))
