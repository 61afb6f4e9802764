"""Degradation-aware forward diffusion and its exact conditionals.

The forward SDE dx = -1/2 beta(t) (x - Dx) dt + sqrt(beta(t)) dw contracts
only the component killed by the low-pass projection D, while injecting
full-band noise. Because D diagonalizes in the Fourier basis the transition
kernel is Gaussian per mode with closed-form moments:

    surviving (low-pass) modes:   mean factor 1,            variance B(t)
    contracted (high-pass) modes: mean factor e^{-B(t)/2},  variance 1 - e^{-B(t)}

with B(t) the integral of beta. Variances are stated for unit white noise in
pixel space mapped through the unnormalized forward FFT, so sampling works by
scaling the transform of real white noise per mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tensor_ops

# Training and the exact score avoid the degenerate t -> 0 limit below this
# fraction of the horizon.
T_FLOOR_FRACTION = 1e-3


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear noise schedule beta(t) on [0, horizon]."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0

    def beta(self, t: float) -> float:
        return self.beta_min + (self.beta_max - self.beta_min) * t / self.horizon

    def beta_integral(self, t: float) -> float:
        """B(t) = beta_min * t + (beta_max - beta_min) * t^2 / (2 * horizon)."""
        return self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.horizon)

    @property
    def t_floor(self) -> float:
        return T_FLOOR_FRACTION * self.horizon

    def validate(self) -> "DiffusionSchedule":
        if not (0 < self.beta_min <= self.beta_max):
            raise ValueError(f"need 0 < beta_min <= beta_max, got {self.beta_min}, {self.beta_max}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        return self


def degradation_mask(h: int, w: int, scale: float) -> np.ndarray:
    """0/1 per-mode mask of the ideal low-pass projection for this scale."""
    return tensor_ops.low_pass_mask(h, w, scale)


def apply_degradation(x: np.ndarray, scale: float) -> np.ndarray:
    """D x: zero every mode outside the degraded grid's Nyquist rectangle.

    Idempotent and self-adjoint (a 0/1 mask symmetric under xi -> -xi).
    """
    h, w = x.shape[-3], x.shape[-2]
    mask = degradation_mask(h, w, scale)[..., None]
    return tensor_ops.ifft2(mask * tensor_ops.fft2(x)).real


def conditional_moments(schedule: DiffusionSchedule, h: int, w: int, scale: float,
                        t: float) -> tuple[np.ndarray, np.ndarray]:
    """(mean factor, variance) per mode at time t, each shaped (h, w)."""
    if t < 0 or t > schedule.horizon:
        raise ValueError(f"t={t} outside [0, {schedule.horizon}]")
    lp = degradation_mask(h, w, scale)
    big_b = schedule.beta_integral(t)
    decay = np.exp(-0.5 * big_b)
    m_hat = lp + (1.0 - lp) * decay
    v_hat = lp * big_b + (1.0 - lp) * (1.0 - decay * decay)
    return m_hat, v_hat


def conditional_moments_var(schedule: DiffusionSchedule, h: int, w: int, scale: float, t):
    """Same moments as autodiff expressions in t (for tape-recorded sampling).

    Mirrors :func:`conditional_moments` operation for operation, so the two
    paths agree bitwise; the schedule's own methods already accept Vars
    through the operator overloads.
    """
    lp = degradation_mask(h, w, scale)
    big_b = schedule.beta_integral(ad.as_var(t))
    decay = ad.exp(-0.5 * big_b)
    m_hat = lp + (1.0 - lp) * decay
    v_hat = lp * big_b + (1.0 - lp) * (1.0 - decay * decay)
    return m_hat, v_hat


def transition(x0: np.ndarray, schedule: DiffusionSchedule, scale: float, t: float,
               eps: np.ndarray) -> np.ndarray:
    """x_t given x_0 and a concrete white-noise draw eps (same shape as x0)."""
    m_hat, v_hat = conditional_moments(schedule, x0.shape[-3], x0.shape[-2], scale, t)
    spec = m_hat[..., None] * tensor_ops.fft2(x0) + np.sqrt(v_hat)[..., None] * tensor_ops.fft2(eps)
    return tensor_ops.ifft2(spec).real


def sample_xt(x0: np.ndarray, schedule: DiffusionSchedule, scale: float, t: float,
              rng: np.random.Generator) -> np.ndarray:
    """Draw x_t | x_0 exactly: scale the transform of real white noise per mode.

    Using the transform of *real* noise keeps the sample real to rounding.
    t == 0 returns x0 unchanged (and consumes no randomness).
    """
    if t == 0.0:
        return np.array(x0, copy=True)
    return transition(x0, schedule, scale, t, rng.standard_normal(x0.shape))


def true_conditional_score(x_t: np.ndarray, x0: np.ndarray, schedule: DiffusionSchedule,
                           scale: float, t: float) -> np.ndarray:
    """grad_x log p(x_t | x_0), exact: per mode -(x^_t - m^ x^_0) / v^.

    Defined only above the schedule's t_floor, where every per-mode variance
    is strictly positive.
    """
    if t < schedule.t_floor:
        raise ValueError(f"t={t} below t_floor={schedule.t_floor}; conditional is degenerate")
    m_hat, v_hat = conditional_moments(schedule, x_t.shape[-3], x_t.shape[-2], scale, t)
    resid = tensor_ops.fft2(x_t) - m_hat[..., None] * tensor_ops.fft2(x0)
    return tensor_ops.ifft2(-resid / v_hat[..., None]).real


def true_conditional_score_var(x_t, x0_spec: np.ndarray, schedule: DiffusionSchedule,
                               scale: float, t):
    """Tape-recorded exact score, differentiable in x_t and t.

    ``x0_spec`` is the (constant) spectrum of the clean signal. The caller is
    responsible for keeping t at or above the schedule's floor.
    """
    shape = ad.value_of(x_t).shape
    h, w = shape[-3], shape[-2]
    m_hat, v_hat = conditional_moments_var(schedule, h, w, scale, t)
    spec = ad.fft2(ad.as_var(x_t))
    resid = ad.sub(spec, ad.mul(ad.reshape(m_hat, (h, w, 1)), x0_spec))
    shat = ad.neg(ad.div(resid, ad.reshape(v_hat, (h, w, 1))))
    return ad.real(ad.ifft2(shat))


def degrade(image: np.ndarray, scale: float) -> np.ndarray:
    """Bicubic downsample by `scale`: (H, W, C) -> (round(H/s), round(W/s), C)."""
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    h, w = image.shape[-3], image.shape[-2]
    oh = max(int(round(h / scale)), 1)
    ow = max(int(round(w / scale)), 1)
    return tensor_ops.bicubic_resize(image, oh, ow)
