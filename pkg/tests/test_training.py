"""Rollout loss, exact gradients, Adam and the training loop."""

import numpy as np
import pytest

from softsensor import _accel, gainnet, observer, systems, training
from softsensor.errors import ConfigError, TrainingFailed

CFG = observer.SmcConfig(5.0, 0.01)


def small_setup(name="harmonic", steps=5, dt=0.01, hidden=(8, 8), seed=1, noise=None):
    model = systems.builtin_model(name)
    x0 = {"harmonic": [2, -1, 3], "three_tank": [0.6, 0.4, 0.2]}.get(name, [0.5, 0.2])
    xh0 = {"harmonic": [1, 1, 2], "three_tank": [0.3, 0.2, 0.5]}.get(name, [0.0, 0.0])
    ds = training.build_dataset(model, [x0], [xh0], dt, steps * dt, noise)
    dims = gainnet.default_dims(model.n, model.m, model.p, hidden)
    return model, ds, gainnet.xavier_init(dims, model.n, model.m, seed=seed)


def fd_check(params, model, ds, lam=1e-3, **kw):
    """Largest normwise relative error between analytic and central-difference gradients."""
    _, grads = training.rollout_loss(params, model, ds, CFG, lam, **kw)
    arrays = params.arrays()
    worst = 0.0
    for ai, a in enumerate(arrays):
        fd = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            h = 1e-6 * (1 + abs(a[idx]))
            up = [x.copy() for x in arrays]
            dn = [x.copy() for x in arrays]
            up[ai][idx] += h
            dn[ai][idx] -= h
            lp = training.rollout_loss(params.with_arrays(up), model, ds, CFG, lam, want_grad=False, **kw)[0]
            lm = training.rollout_loss(params.with_arrays(dn), model, ds, CFG, lam, want_grad=False, **kw)[0]
            fd[idx] = (lp.total - lm.total) / (2 * h)
        worst = max(worst, np.linalg.norm(grads[ai] - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst


@pytest.mark.parametrize("residual", training.RESIDUALS)
def test_gradient_matches_finite_difference(residual):
    model, ds, p = small_setup()
    assert fd_check(p, model, ds, residual=residual) < 1e-5


def test_gradient_with_projection_and_inputs():
    model, ds, p = small_setup("three_tank", steps=6)
    assert fd_check(p, model, ds, nonnegative=True) < 1e-5


def test_gradient_numba_and_numpy_agree(monkeypatch):
    model, ds, p = small_setup("reverse_duffing", steps=200, hidden=(16, 16))
    fast = training.rollout_loss(p, model, ds, CFG, 1e-3)
    monkeypatch.setattr(_accel, "available", lambda: False)
    slow = training.rollout_loss(p, model, ds, CFG, 1e-3)
    assert fast[0].total == pytest.approx(slow[0].total, rel=1e-12)
    for a, b in zip(fast[1], slow[1]):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_mse_d_residual_identities():
    model, ds, p = small_setup(steps=50)
    times, inputs, outputs, xh0 = ds.stacked()
    z = gainnet.InputScaling(ds.horizon).assemble(times[None], inputs, outputs)
    gains, _ = gainnet.forward(p, z)
    ro = observer.rollout(model, gains, outputs, inputs, xh0, ds.dt, CFG)
    target = np.mean(np.sum(ro.correction ** 2, axis=-1))
    rate, _ = training.rollout_loss(p, model, ds, CFG, want_grad=False, residual="rate")
    step, _ = training.rollout_loss(p, model, ds, CFG, want_grad=False, residual="step")
    assert rate.mse_d == pytest.approx(target, rel=1e-9)
    assert step.mse_d == pytest.approx(ds.dt ** 2 * target, rel=1e-9)
    assert rate.mse_y == pytest.approx(np.mean(np.sum(ro.surface ** 2, axis=-1)), rel=1e-12)


def test_regularizer_and_total():
    model, ds, p = small_setup()
    loss, _ = training.rollout_loss(p, model, ds, CFG, lam=0.5, want_grad=False)
    assert loss.reg == pytest.approx(0.5 * sum(np.sum(W * W) for W in p.weights))
    assert loss.total == pytest.approx(loss.mse_d + loss.mse_y + loss.reg)


def test_full_truncation_window_equals_untruncated():
    model, ds, p = small_setup(steps=20)
    _, full = training.rollout_loss(p, model, ds, CFG, 1e-3)
    _, same = training.rollout_loss(p, model, ds, CFG, 1e-3, truncation=20)
    _, cut = training.rollout_loss(p, model, ds, CFG, 1e-3, truncation=3)
    for a, b in zip(full, same):
        np.testing.assert_allclose(a, b, rtol=1e-12)
    assert any(not np.allclose(a, b) for a, b in zip(full, cut))


def test_loss_never_reads_true_states():
    model, ds, p = small_setup(steps=10)
    before, _ = training.rollout_loss(p, model, ds, CFG, want_grad=False)
    for tr in ds.trajectories:
        tr.states[:] = np.nan
    after, _ = training.rollout_loss(p, model, ds, CFG, want_grad=False)
    assert before == after


def test_adam_step_by_hand():
    cfg = training.TrainConfig(learning_rate=0.1)
    a = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -4.0])]
    new, state = training.adam_step(a, g, training.AdamState.zeros_like(a), cfg)
    # first bias-corrected step moves each entry by lr * sign(g)
    np.testing.assert_allclose(new[0], [0.9, -1.9], rtol=1e-6)
    assert state.t == 1
    with pytest.raises(ConfigError):
        training.adam_step(a, [np.zeros(3)], state, cfg)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        training.TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        training.TrainConfig(residual="other")
    with pytest.raises(ConfigError):
        training.TrainConfig(lam=-1)


def test_training_reduces_loss_and_tracks_best():
    model, ds, p = small_setup("reverse_duffing", steps=300, hidden=(16, 16))
    res = training.train(model, ds, training.TrainConfig(epochs=40, learning_rate=1e-2), CFG, p)
    totals = [h.total for h in res.history]
    assert len(totals) == 40
    assert res.best_loss == min(totals) < totals[0]
    assert res.best_so_far == list(np.minimum.accumulate(totals))


def test_training_is_deterministic():
    model, ds, p = small_setup("reverse_duffing", steps=100, hidden=(8, 8))
    cfg = training.TrainConfig(epochs=10, learning_rate=1e-2)
    a = training.train(model, ds, cfg, CFG, p)
    b = training.train(model, ds, cfg, CFG, p)
    assert a.history == b.history
    assert all(np.array_equal(x, y) for x, y in zip(a.best_params.arrays(), b.best_params.arrays()))


def test_diverging_first_epoch_raises():
    model, ds, p = small_setup("reverse_duffing", steps=500)
    p.biases[-1][:] = [0.0, -1e8]
    with pytest.raises(TrainingFailed):
        training.train(model, ds, training.TrainConfig(epochs=3), CFG, p)


def test_divergence_halves_rate_then_stops():
    model, ds, p = small_setup("reverse_duffing", steps=500)
    res = training.train(model, ds, training.TrainConfig(epochs=50, learning_rate=1e7), CFG, p)
    assert res.stopped_early
    assert len(res.diverged_epochs) == 2
    assert np.isfinite(res.best_loss)


def test_history_csv(tmp_path):
    hist = [training.LossBreakdown.from_parts(0.1, 0.2, 0.3)]
    path = training.write_history_csv(tmp_path / "h.csv", hist)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,total,mse_d,mse_y,reg"
    assert lines[1].startswith("0,")


def test_sample_pairs_ranges():
    x0, xh = training.sample_pairs(25, 0, 2)
    assert len(x0) == len(xh) == 25
    assert np.all(np.abs(x0) <= 1) and np.all(np.abs(xh) <= 2)
