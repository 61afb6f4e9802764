import csv
import os

import numpy as np
import pytest

from wfno import autodiff as ad
from wfno import diffusion as df
from wfno import layers
from wfno import training as tr

SCH = df.DiffusionSchedule()

TINY = layers.ModelConfig(channels=4, wfno_layers=1, attn_layers=1,
                          encoder_blocks=1, stored_modes=4, time_dim=4)


def tiny_images(n=6, size=12, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.uniform(0.05, 0.95, (size, size, 3)) for _ in range(n)]


def tiny_train_config(out_dir, **kw):
    base = dict(seed=0, batch_size=2, patch_size=8, max_steps=4, patience=10,
                val_frac=0.2, scale_range=(1.0, 2.0),
                lr=tr.LrSchedule(warmup_epochs=1, lr_start=1e-3, lr_peak=1e-3,
                                 lr_floor=1e-4, cycle_epochs=4),
                out_dir=str(out_dir))
    base.update(kw)
    return tr.TrainConfig(**base)


# -- learning rate schedule ----------------------------------------------------

def test_lr_schedule_shape():
    s = tr.LrSchedule()
    assert tr.lr_at(s, 0) == 1e-6
    assert tr.lr_at(s, 5) == pytest.approx(3e-4, abs=1e-18)  # warmup lands on peak
    # quarter through the cosine cycle sits exactly halfway down
    mid = tr.lr_at(s, 5 + 25)
    assert mid == pytest.approx(1e-6 + (3e-4 - 1e-6) / 2.0, rel=1e-12)
    # warm restart: the cycle repeats
    assert tr.lr_at(s, 5 + 3) == pytest.approx(tr.lr_at(s, 5 + 53), rel=1e-12)
    with pytest.raises(ValueError):
        tr.lr_at(s, -1)


def test_lr_warmup_is_linear():
    s = tr.LrSchedule(warmup_epochs=4, lr_start=0.0, lr_peak=1.0)
    assert [tr.lr_at(s, e) for e in range(4)] == [0.0, 0.25, 0.5, 0.75]


# -- optimizer -----------------------------------------------------------------

def test_adam_single_step_by_hand():
    state = tr.OptimizerState.zeros(1)
    p = np.array([1.0])
    g = np.array([0.5])
    out = tr.adam_step(state, p, g, lr=0.1)
    # bias correction cancels the (1 - beta) factors on the first step
    want = 1.0 - 0.1 * 0.5 / (np.sqrt(0.25) + 1e-8)
    assert out[0] == pytest.approx(want, abs=1e-16)
    assert state.step == 1
    assert state.m[0] == pytest.approx(0.05)
    assert state.v[0] == pytest.approx(0.00025)


def test_adam_zero_lr_keeps_params():
    state = tr.OptimizerState.zeros(3)
    p = np.array([0.3, -1.2, 4.0])
    out = tr.adam_step(state, p, np.array([1.0, 2.0, 3.0]), lr=0.0)
    assert np.array_equal(out, p)


def test_adam_rejects_shape_mismatch():
    state = tr.OptimizerState.zeros(2)
    with pytest.raises(ValueError):
        tr.adam_step(state, np.zeros(3), np.zeros(3), lr=0.1)


def test_adam_converges_on_quadratic():
    state = tr.OptimizerState.zeros(2)
    p = np.array([5.0, -3.0])
    for _ in range(400):
        p = tr.adam_step(state, p, 2.0 * p, lr=0.05)
    assert np.abs(p).max() < 1e-3


# -- loss ----------------------------------------------------------------------

def test_fresh_net_loss_is_target_norm():
    # a fresh net scores exactly zero, so the loss is the mean squared
    # magnitude of the true score alone
    net = layers.init_score_net(TINY, np.random.default_rng(0))
    items = tiny_images(n=2, size=8, seed=1)
    draws = tr.make_draws(items, SCH, np.random.default_rng(2), (1.0, 2.0))
    got = float(tr.score_loss_items(net, items, SCH, draws).value)
    want = 0.0
    for x0, d in zip(items, draws):
        x_t = df.transition(x0, SCH, d.scale, d.t, d.noise)
        target = df.true_conditional_score(x_t, x0, SCH, d.scale, d.t)
        want += np.mean(np.sum(target ** 2, axis=2))
    want /= len(items)
    assert got == pytest.approx(want, rel=1e-12)


def test_loss_invariant_under_item_order():
    net = layers.init_score_net(TINY, np.random.default_rng(3))
    items = tiny_images(n=2, size=8, seed=4)
    draws = tr.make_draws(items, SCH, np.random.default_rng(5), (1.0, 2.0))
    a = float(tr.score_loss_items(net, items, SCH, draws).value)
    b = float(tr.score_loss_items(net, items[::-1], SCH, draws[::-1]).value)
    assert a == b


def test_loss_validation():
    net = layers.init_score_net(TINY, np.random.default_rng(0))
    with pytest.raises(tr.TrainingError):
        tr.score_loss_items(net, [], SCH, [])
    with pytest.raises(ValueError):
        tr.score_loss_items(net, tiny_images(n=2, size=8), SCH, [])


def test_gamma_receives_gradient():
    # jitter every array first: with the zero-initialized output projection
    # still in place nothing upstream of it would see a gradient
    net = layers.init_score_net(TINY, np.random.default_rng(6))
    rng = np.random.default_rng(7)
    for _, arr in layers.trainable_arrays(net):
        arr += 0.05 * (rng.standard_normal(arr.shape)
                       + (1j * rng.standard_normal(arr.shape) if np.iscomplexobj(arr) else 0))
    items = tiny_images(n=1, size=8, seed=8)
    draws = tr.make_draws(items, SCH, np.random.default_rng(9), (2.0, 2.0))
    wrapped = layers.wrap(net)
    grads = ad.backward(tr.score_loss_items(wrapped, items, SCH, draws))
    assert np.abs(grads["wfno.0.filter.gamma"]).max() > 0


# -- draws and splits ------------------------------------------------------------

def test_make_draws_ranges():
    items = tiny_images(n=50, size=6, seed=10)
    draws = tr.make_draws(items, SCH, np.random.default_rng(11), (1.5, 3.0))
    for x0, d in zip(items, draws):
        assert SCH.t_floor < d.t <= SCH.horizon
        assert 1.5 <= d.scale <= 3.0
        assert d.noise.shape == x0.shape


def test_split_dataset_partition():
    imgs = tiny_images(n=10, size=4, seed=12)
    train, val = tr.split_dataset(imgs, 0.25, np.random.default_rng(13))
    assert len(val) == 3  # ceil(0.25 * 10)
    assert len(train) == 7
    ids = sorted(id(x) for x in train + val)
    assert ids == sorted(id(x) for x in imgs)
    # same seed, same split
    train2, val2 = tr.split_dataset(imgs, 0.25, np.random.default_rng(13))
    assert all(a is b for a, b in zip(val, val2))


def test_split_dataset_minimums():
    imgs = tiny_images(n=3, size=4)
    _, val = tr.split_dataset(imgs, 0.01, np.random.default_rng(0))
    assert len(val) == 1
    with pytest.raises(tr.TrainingError):
        tr.split_dataset(imgs[:1], 0.5, np.random.default_rng(0))


def test_validation_loss_is_repeatable():
    net = layers.init_score_net(TINY, np.random.default_rng(14))
    cfg = tiny_train_config("/tmp/unused")
    imgs = tiny_images(n=3, size=10, seed=15)
    a = tr.validation_loss(net, imgs, cfg, SCH)
    assert a == tr.validation_loss(net, imgs, cfg, SCH)


# -- the training loop -----------------------------------------------------------

def test_train_two_runs_bitwise_identical(tmp_path):
    imgs = tiny_images()
    outs = []
    for sub in ("a", "b"):
        net = layers.init_score_net(TINY, np.random.default_rng(0))
        cfg = tiny_train_config(tmp_path / sub)
        tr.train(net, imgs, cfg, SCH)
        outs.append((layers.flatten_params(layers.trainable_arrays(net)),
                     (tmp_path / sub / "loss.csv").read_bytes()))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert outs[0][1] == outs[1][1]


def test_train_writes_checkpoints_and_csv(tmp_path):
    net = layers.init_score_net(TINY, np.random.default_rng(0))
    cfg = tiny_train_config(tmp_path)
    summary = tr.train(net, tiny_images(), cfg, SCH)
    assert summary["steps"] == 4
    assert os.path.isdir(summary["best_checkpoint"])
    assert os.path.isdir(summary["last_checkpoint"])
    with open(summary["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "epoch", "lr", "train_loss", "val_loss"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4"]
    assert summary["first_train_loss"] > 0


def test_train_resume_continues_counting(tmp_path):
    imgs = tiny_images()
    net = layers.init_score_net(TINY, np.random.default_rng(0))
    cfg = tiny_train_config(tmp_path, max_steps=4)
    tr.train(net, imgs, cfg, SCH)

    net2, state, extra = tr.load_train_state(str(tmp_path / "ckpt_last"))
    assert state is not None and extra["step"] == 4
    cfg2 = tiny_train_config(tmp_path, max_steps=8)
    summary = tr.train(net2, imgs, cfg2, SCH, resume_state=state,
                       start_step=extra["step"], start_epoch=extra["epoch"])
    assert summary["steps"] == 8
    with open(summary["csv"]) as fh:
        rows = list(csv.reader(fh))[1:]
    assert [r[0] for r in rows] == [str(i) for i in range(1, 9)]


def test_load_train_state_roundtrip(tmp_path):
    net = layers.init_score_net(TINY, np.random.default_rng(0))
    cfg = tiny_train_config(tmp_path)
    tr.train(net, tiny_images(), cfg, SCH)
    before = layers.flatten_params(layers.trainable_arrays(net))
    net2, state, extra = tr.load_train_state(str(tmp_path / "ckpt_last"))
    after = layers.flatten_params(layers.trainable_arrays(net2))
    assert np.array_equal(before, after)
    assert state.step == extra["step"] == 4
    assert state.m.shape == before.shape


def test_train_stops_on_stalled_validation(tmp_path):
    # zero LR everywhere: epoch 1 improves on inf, epoch 2 matches epoch 1
    # exactly, and patience=0 ends the run there
    net = layers.init_score_net(TINY, np.random.default_rng(0))
    cfg = tiny_train_config(tmp_path, max_steps=1000, patience=0,
                            lr=tr.LrSchedule(warmup_epochs=1, lr_start=0.0,
                                             lr_peak=0.0, lr_floor=0.0,
                                             cycle_epochs=4))
    summary = tr.train(net, tiny_images(), cfg, SCH)
    assert summary["epochs"] == 2
    assert summary["steps"] < 1000


def test_train_rejects_empty_dataset(tmp_path):
    net = layers.init_score_net(TINY, np.random.default_rng(0))
    with pytest.raises(tr.TrainingError):
        tr.train(net, [], tiny_train_config(tmp_path), SCH)
