"""Score-matching training: loss, Adam, LR schedule, and the epoch loop.

The loss is plain denoising score matching against the exact per-mode
conditional score: for each HR patch we draw a scale, degrade it to the LR
condition, draw a time and a noise realization, and regress the network
output onto grad_x log p(x_t | x_0). Randomness is packaged per item
(DrawSpec) so the loss itself is a pure function and the batch mean is
permutation invariant by construction.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffusion, fileio, layers
from .diffusion import DiffusionSchedule


class TrainingError(RuntimeError):
    pass


@dataclass
class LrSchedule:
    """Linear warmup into cosine cycles with warm restarts."""

    warmup_epochs: int = 5
    lr_start: float = 1e-6
    lr_peak: float = 3e-4
    lr_floor: float = 1e-6
    cycle_epochs: int = 50


def lr_at(sched: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch < sched.warmup_epochs:
        frac = epoch / sched.warmup_epochs
        return sched.lr_start + (sched.lr_peak - sched.lr_start) * frac
    c = ((epoch - sched.warmup_epochs) % sched.cycle_epochs) / sched.cycle_epochs
    return sched.lr_floor + (sched.lr_peak - sched.lr_floor) * (1.0 + np.cos(np.pi * c)) / 2.0


@dataclass
class OptimizerState:
    """Adam moments aligned with the flat trainable vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray,
              lr: float) -> np.ndarray:
    """Bias-corrected Adam; mutates state, returns the updated vector."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter / gradient / moment lengths disagree")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class DrawSpec:
    """Everything random about one loss term, fixed up front."""

    scale: float
    t: float
    noise: np.ndarray


def make_draws(items: list, schedule: DiffusionSchedule, rng: np.random.Generator,
               scale_range: tuple = (1.0, 4.0)) -> list:
    """One DrawSpec per HR patch: scale ~ U[lo, hi], t ~ U(t_floor, T]."""
    lo, hi = scale_range
    draws = []
    for x0 in items:
        s = float(rng.uniform(lo, hi))
        # uniform on (t_floor, T]: flip the half-open end of rng.uniform
        t = float(schedule.horizon + schedule.t_floor - rng.uniform(schedule.t_floor, schedule.horizon))
        draws.append(DrawSpec(scale=s, t=t, noise=rng.standard_normal(x0.shape)))
    return draws


def score_loss_items(net: layers.ScoreNet, items: list, schedule: DiffusionSchedule,
                     draws: list):
    """Mean over items and pixels of the channelwise squared score error.

    Pure given the draws; items are processed one at a time (shapes differ
    per scale), so memory stays bounded by a single graph.
    """
    if len(items) != len(draws):
        raise ValueError("items and draws must pair up")
    if not items:
        raise TrainingError("empty batch")
    total = None
    for x0, d in zip(items, draws):
        x_lr = diffusion.degrade(x0, d.scale)
        x_t = diffusion.transition(x0, schedule, d.scale, d.t, d.noise)
        target = diffusion.true_conditional_score(x_t, x0, schedule, d.scale, d.t)
        pred = layers.score_forward(net, x_t[None], x_lr[None], d.t)
        err = ad.sub(pred, target[None])
        per_item = ad.mean_(ad.sum_(ad.mul(err, err), axis=3))
        total = per_item if total is None else ad.add(total, per_item)
    return ad.mul(1.0 / len(items), total)


def score_loss(net: layers.ScoreNet, items: list, schedule: DiffusionSchedule,
               rng: np.random.Generator, scale_range: tuple = (1.0, 4.0)):
    """Loss with draws taken from rng; returns the Var (call .value for the float)."""
    return score_loss_items(net, items, schedule, make_draws(items, schedule, rng, scale_range))


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    patch_size: int = 16
    max_steps: int = 2000
    patience: int = 50
    val_frac: float = 0.1
    scale_range: tuple = (1.0, 4.0)
    lr: LrSchedule = field(default_factory=LrSchedule)
    out_dir: str = "runs/train"


OPT_SIDECARS = ("opt_m.tnsr", "opt_v.tnsr")


def _save_state(path: str, net: layers.ScoreNet, state: OptimizerState,
                step: int, epoch: int, best_val: float) -> None:
    layers.save_checkpoint(path, net, extra={
        "step": step, "epoch": epoch, "best_val": best_val,
        "adam": {"step": state.step, "beta1": state.beta1,
                 "beta2": state.beta2, "eps": state.eps},
    })
    fileio.save_tensor(os.path.join(path, OPT_SIDECARS[0]), state.m)
    fileio.save_tensor(os.path.join(path, OPT_SIDECARS[1]), state.v)


def load_train_state(path: str):
    """(net, optimizer state or None, manifest extra) from a checkpoint dir."""
    net, manifest = layers.load_checkpoint(path)
    extra = manifest.get("extra", {})
    state = None
    m_path = os.path.join(path, OPT_SIDECARS[0])
    v_path = os.path.join(path, OPT_SIDECARS[1])
    if os.path.exists(m_path) and os.path.exists(v_path) and "adam" in extra:
        a = extra["adam"]
        state = OptimizerState(m=fileio.load_tensor(m_path), v=fileio.load_tensor(v_path),
                               step=int(a["step"]), beta1=float(a["beta1"]),
                               beta2=float(a["beta2"]), eps=float(a["eps"]))
    return net, state, extra


def split_dataset(images: list, val_frac: float, rng: np.random.Generator):
    """Seeded shuffle split; validation gets ceil(val_frac * n), at least 1."""
    n = len(images)
    if n < 2:
        raise TrainingError("need at least 2 images to hold out validation")
    order = rng.permutation(n)
    n_val = max(int(np.ceil(val_frac * n)), 1)
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    return [images[i] for i in train_idx], [images[i] for i in val_idx]


def _crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise TrainingError(f"image {h}x{w} smaller than patch size {size}")
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    return img[i:i + size, j:j + size]


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    i = (h - size) // 2
    j = (w - size) // 2
    return img[i:i + size, j:j + size]


def validation_loss(net: layers.ScoreNet, val_images: list, cfg: TrainConfig,
                    schedule: DiffusionSchedule) -> float:
    """Fixed-draw validation: same crops, scales, times, and noise every call."""
    vrng = np.random.default_rng(cfg.seed + 1)
    items = [_center_crop(img, cfg.patch_size) for img in val_images]
    draws = make_draws(items, schedule, vrng, cfg.scale_range)
    return float(score_loss_items(net, items, schedule, draws).value)


def train(net: layers.ScoreNet, images: list, cfg: TrainConfig,
          schedule: DiffusionSchedule | None = None,
          resume_state: OptimizerState | None = None, start_step: int = 0,
          start_epoch: int = 0) -> dict:
    """Run score-matching training; writes loss CSV and best/last checkpoints.

    Stops at cfg.max_steps or when validation fails to improve for more than
    cfg.patience consecutive epochs. Deterministic for a fixed config and
    dataset. Returns a summary dict with the final losses and paths.
    """
    if not images:
        raise TrainingError("empty dataset")
    schedule = schedule or DiffusionSchedule()
    os.makedirs(cfg.out_dir, exist_ok=True)
    csv_path = os.path.join(cfg.out_dir, "loss.csv")
    best_path = os.path.join(cfg.out_dir, "ckpt_best")
    last_path = os.path.join(cfg.out_dir, "ckpt_last")

    split_rng = np.random.default_rng(cfg.seed)
    train_imgs, val_imgs = split_dataset(images, cfg.val_frac, split_rng)
    pairs = layers.trainable_arrays(net)
    params = layers.flatten_params(pairs)
    state = resume_state or OptimizerState.zeros(params.size)

    step = start_step
    epoch = start_epoch
    best_val = np.inf
    bad_epochs = 0
    val = validation_loss(net, val_imgs, cfg, schedule)
    first_train = None
    last_train = None

    mode = "a" if (start_step > 0 and os.path.exists(csv_path)) else "w"
    with open(csv_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["step", "epoch", "lr", "train_loss", "val_loss"])
        while step < cfg.max_steps:
            epoch_rng = np.random.default_rng(cfg.seed + 1000 + epoch)
            order = epoch_rng.permutation(len(train_imgs))
            lr = lr_at(cfg.lr, epoch)
            for b0 in range(0, len(order), cfg.batch_size):
                idx = order[b0:b0 + cfg.batch_size]
                items = [_crop(train_imgs[i], cfg.patch_size, epoch_rng) for i in idx]
                draws = make_draws(items, schedule, epoch_rng, cfg.scale_range)
                wrapped = layers.wrap(net)
                loss = score_loss_items(wrapped, items, schedule, draws)
                grads = ad.backward(loss)
                gvec = layers.gradient_vector(pairs, grads)
                params = adam_step(state, params, gvec, lr)
                layers.unflatten_params(pairs, params)
                step += 1
                train_val = float(loss.value)
                if first_train is None:
                    first_train = train_val
                last_train = train_val
                writer.writerow([step, epoch, f"{lr:.8g}",
                                 f"{train_val:.10g}", f"{val:.10g}"])
                if step >= cfg.max_steps:
                    break
            val = validation_loss(net, val_imgs, cfg, schedule)
            if val < best_val:
                best_val = val
                bad_epochs = 0
                _save_state(best_path, net, state, step, epoch, best_val)
            else:
                bad_epochs += 1
            epoch += 1
            if bad_epochs > cfg.patience:
                break
    _save_state(last_path, net, state, step, epoch, best_val)
    return {"steps": step, "epochs": epoch, "first_train_loss": first_train,
            "final_train_loss": last_train, "best_val_loss": float(best_val),
            "final_val_loss": float(val), "csv": csv_path,
            "best_checkpoint": best_path, "last_checkpoint": last_path}
