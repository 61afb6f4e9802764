"""Deterministic reverse sampling along the probability-flow ODE.

Three pieces: a learned monotone time warp that places integration nodes
where the trajectory bends (phi / phi_inverse / build_time_grid), fixed-grid
classical RK4, and an embedded Dormand-Prince RK45 with step-size control.
`sample` glues them to a score function for end-to-end super-resolution;
`fit_ats` tunes the warp coefficients by differentiating through the
integrator.

The warp is phi(t) = sum_k psi_k t^k / sum_k psi_k T^k with psi_k = exp(w_k),
k = 1..K. Positivity of psi makes phi strictly increasing, so phi(0) = 0,
phi(T) = 1, and the inverse is well defined. phi is invariant under shifting
every w_k by a constant, which is what makes the exp map safe to evaluate.

RK4 and the drift are written against plain arithmetic operators so the same
code integrates numpy arrays (inference) and autodiff Vars (warp fitting).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffusion, tensor_ops
from .diffusion import DiffusionSchedule


class SamplerError(RuntimeError):
    pass


PHI_TOL = 1e-12
PHI_MAX_NEWTON = 100

# Start at the uniform grid: all weight on the linear basis term.
DEFAULT_OMEGA = (0.0, -40.0, -40.0)


@dataclass(frozen=True)
class AtsParams:
    """Unconstrained warp coefficients; psi_k = exp(omega_k) > 0."""

    omega: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_OMEGA))

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=np.float64)
        if om.ndim != 1 or om.size < 1:
            raise ValueError(f"omega must be a nonempty vector, got shape {om.shape}")
        if not np.all(np.isfinite(om)):
            raise ValueError("omega must be finite")
        object.__setattr__(self, "omega", om)

    @property
    def k(self) -> int:
        return int(self.omega.size)

    def psi(self) -> np.ndarray:
        """Basis weights, normalized by the largest to dodge overflow."""
        return np.exp(self.omega - self.omega.max())


def _phi_parts(t, psi, horizon):
    """num = sum psi_k t^k and den = sum psi_k T^k; t scalar or array."""
    num = 0.0
    den = 0.0
    tk = 1.0
    hk = 1.0
    for w in psi:
        tk = tk * t
        hk = hk * horizon
        num = num + w * tk
        den = den + w * hk
    return num, den


def phi(t, ats: AtsParams, horizon: float = 1.0):
    """Warped time fraction in [0, 1]; monotone, phi(0) = 0, phi(horizon) = 1."""
    num, den = _phi_parts(t, ats.psi(), horizon)
    return num / den


def _phi_dt(t, psi, horizon: float):
    num = 0.0
    den = 0.0
    tk1 = 1.0
    hk = 1.0
    for k, w in enumerate(psi, start=1):
        hk = hk * horizon
        num = num + k * w * tk1
        den = den + w * hk
        tk1 = tk1 * t
    return num / den


def phi_inverse(s: float, ats: AtsParams, horizon: float = 1.0) -> float:
    """The unique t in [0, horizon] with phi(t) = s.

    Safeguarded Newton from the linear-warp guess t = s * horizon, falling
    back to bisection whenever a Newton proposal leaves the current bracket.
    Converges to |phi(t) - s| <= 1e-12.
    """
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"s={s} outside [0, 1]")
    psi = ats.psi()
    lo, hi = 0.0, horizon
    t = s * horizon
    for _ in range(PHI_MAX_NEWTON):
        num, den = _phi_parts(t, psi, horizon)
        f = num / den - s
        if abs(f) <= PHI_TOL:
            return t
        if f > 0:
            hi = t
        else:
            lo = t
        slope = _phi_dt(t, psi, horizon)
        step = f / slope if slope > 0 else np.inf
        t_new = t - step
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        t = t_new
    return t


def build_time_grid(n: int, ats: AtsParams, horizon: float = 1.0) -> np.ndarray:
    """t_i = phi_inverse(i / n), i = 0..n: strictly increasing, exact endpoints."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    grid = np.empty(n + 1)
    grid[0] = 0.0
    grid[n] = horizon
    for i in range(1, n):
        grid[i] = phi_inverse(i / n, ats, horizon)
    if not np.all(np.diff(grid) > 0):
        raise SamplerError("time grid is not strictly increasing")
    return grid


# -- tape-recorded warp, for fitting omega ----------------------------------

def _psi_var(omega):
    shift = float(np.max(ad.value_of(omega)))
    return ad.exp(ad.sub(omega, shift))


def phi_var(t, omega, horizon: float = 1.0):
    """phi as an autodiff expression in t and omega (omega a (K,) Var)."""
    k = ad.value_of(omega).size
    tv = ad.as_var(t)
    powers = []
    tk = tv
    for _ in range(k):
        powers.append(ad.reshape(tk, (1,)))
        tk = ad.mul(tk, tv)
    psi = _psi_var(omega)
    num = ad.sum_(ad.mul(psi, ad.concat(powers, axis=0)))
    den = ad.sum_(ad.mul(psi, horizon ** np.arange(1, k + 1, dtype=np.float64)))
    return ad.div(num, den)


def phi_inverse_var(s: float, omega, horizon: float = 1.0):
    """phi_inverse with gradients to omega via the implicit function theorem.

    At the solution t*, phi(t*, omega) = s, so
    dt*/domega_k = -(dphi/domega_k) / (dphi/dt), both evaluated at t*.
    """
    om_val = np.asarray(ad.value_of(omega), dtype=np.float64)
    ats = AtsParams(om_val)
    t_star = phi_inverse(s, ats, horizon)
    psi = ats.psi()
    _, den = _phi_parts(t_star, psi, horizon)
    ks = np.arange(1, psi.size + 1, dtype=np.float64)
    # dphi/domega_k = psi_k (t^k - phi * T^k) / den, with phi(t*) = s
    d_omega = psi * (t_star ** ks - s * horizon ** ks) / den
    slope = _phi_dt(t_star, psi, horizon)
    grad = -d_omega / slope
    if isinstance(omega, ad.Var):
        return ad.Var(np.asarray(t_star), (omega,),
                      lambda g: (np.real(g) * grad,), op="phi_inverse")
    return t_star


def build_time_grid_var(n: int, omega, horizon: float = 1.0) -> list:
    """Grid of scalar Vars; the fixed endpoints carry no omega gradient."""
    grid = [ad.as_var(np.asarray(0.0))]
    for i in range(1, n):
        grid.append(phi_inverse_var(i / n, omega, horizon))
    grid.append(ad.as_var(np.asarray(horizon)))
    return grid


# -- probability-flow drift and integrators ---------------------------------

def _project_low(x, scale: float):
    """Ideal low-pass D x, on either an ndarray or a Var."""
    if isinstance(x, ad.Var):
        h, w = x.value.shape[-3], x.value.shape[-2]
        mask = diffusion.degradation_mask(h, w, scale)[..., None]
        return ad.real(ad.ifft2(ad.mul(mask, ad.fft2(x))))
    return diffusion.apply_degradation(x, scale)


def reverse_drift(x, t, score_fn, schedule: DiffusionSchedule, scale: float,
                  form: str = "projected"):
    """dx/dt of the probability-flow ODE: linear pull plus -1/2 beta * score.

    form "projected" uses the forward drift -1/2 beta (x - Dx), which leaves
    the low-pass subspace untouched; "plain" uses -1/2 beta x, contracting
    everything. Works on ndarrays and on Vars alike.
    """
    if form not in ("projected", "plain"):
        raise ValueError(f"unknown drift form {form!r}")
    beta = schedule.beta(t)
    s = score_fn(x, t)
    if form == "projected":
        lin = (-0.5 * beta) * (x - _project_low(x, scale))
    else:
        lin = (-0.5 * beta) * x
    out = lin - (0.5 * beta) * s
    if not np.all(np.isfinite(ad.value_of(out))):
        raise SamplerError(f"non-finite drift at t={float(ad.value_of(ad.as_var(t))):.6g}")
    return out


def rk4_step(x, t, h, drift_fn):
    """One classical Runge-Kutta step; h may be negative for reverse time."""
    k1 = drift_fn(x, t)
    k2 = drift_fn(x + (0.5 * h) * k1, t + 0.5 * h)
    k3 = drift_fn(x + (0.5 * h) * k2, t + 0.5 * h)
    k4 = drift_fn(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_grid(x, times, drift_fn):
    """March x across consecutive times (any direction) with RK4 steps.

    Raises on a non-finite state, naming the step that produced it.
    """
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        x = rk4_step(x, times[i], h, drift_fn)
        if not np.all(np.isfinite(ad.value_of(x))):
            raise SamplerError(
                f"non-finite state after step {i} "
                f"(t={float(ad.value_of(ad.as_var(times[i + 1]))):.6g})")
    return x


def remap_times(times, t_end: float, horizon: float):
    """Affinely squeeze a [0, horizon] grid onto [t_end, horizon].

    Keeps warped spacing while stopping short of t = 0, where exact
    conditional scores are singular. Accepts ndarrays or lists of Vars.
    """
    scale = (horizon - t_end) / horizon
    if isinstance(times, np.ndarray):
        return t_end + times * scale
    return [t_end + t * scale for t in times]


# Dormand-Prince 5(4) tableau.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
          187 / 2100, 1 / 40)


def rk45_integrate(x0: np.ndarray, t_start: float, t_end: float, drift_fn,
                   atol: float = 1e-6, rtol: float = 1e-6, h0: float = 1e-2,
                   h_min: float = 1e-4, trace: list | None = None) -> np.ndarray:
    """Adaptive embedded RK45 from t_start to t_end (either direction).

    Accepts a step when the embedded error estimate is <= atol + rtol * ||x||_inf;
    the step then grows or shrinks by 0.9 * (tol / err)^(1/5), clamped to
    [0.2, 5]. A trial step with exactly zero estimated error gives no size
    information, so the remaining interval is retried in one step instead.
    Raises when the required step would fall below h_min. `trace`, if given,
    collects accepted times.
    """
    if t_end == t_start:
        return np.array(x0, copy=True)
    direction = 1.0 if t_end > t_start else -1.0
    x = np.asarray(x0, dtype=np.float64)
    t = t_start
    h = direction * abs(h0)
    if trace is not None:
        trace.append(float(t))
    while (t_end - t) * direction > 0:
        if (t + h - t_end) * direction > 0:
            h = t_end - t
        ks = []
        for i in range(7):
            xi = x
            for a, k in zip(_DP_A[i], ks):
                if a != 0.0:
                    xi = xi + (h * a) * k
            ks.append(drift_fn(xi, t + _DP_C[i] * h))
        x5 = x
        err_vec = 0.0
        for b5, b4, k in zip(_DP_B5, _DP_B4, ks):
            if b5 != 0.0:
                x5 = x5 + (h * b5) * k
            if b5 != b4:
                err_vec = err_vec + (h * (b5 - b4)) * k
        err = float(np.max(np.abs(err_vec)))
        tol = atol + rtol * float(np.max(np.abs(x)))
        if err == 0.0:
            # Perfect trial: commit the whole remaining interval at once.
            if abs(h - (t_end - t)) > 0.0:
                h = t_end - t
                continue
            x = x5
            t = t + h
            if trace is not None:
                trace.append(float(t))
            continue
        if err <= tol:
            x = x5
            t = t + h
            if trace is not None:
                trace.append(float(t))
            if not np.all(np.isfinite(x)):
                raise SamplerError(f"non-finite state at t={t:.6g}")
        factor = min(5.0, max(0.2, 0.9 * (tol / err) ** 0.2))
        h = h * factor
        if abs(h) < h_min and (t_end - t) * direction > abs(h):
            raise SamplerError(
                f"step size underflow ({abs(h):.3g} < {h_min:.3g}) at t={t:.6g}")
    return x


# -- end-to-end sampling -----------------------------------------------------

def init_state(x_lr: np.ndarray, scale: float, schedule: DiffusionSchedule,
               rng: np.random.Generator | None, noise_free: bool = False
               ) -> np.ndarray:
    """Reverse-time start: upsampled LR plus per-mode stationary noise.

    The terminal marginal of the forward process, conditioned on the LR
    content, is the upsampled image plus Gaussian noise whose per-mode
    standard deviation is sqrt(v_hat(T)); noise_free skips the noise term.
    """
    h, w = x_lr.shape[-3], x_lr.shape[-2]
    oh = max(int(round(h * scale)), 1)
    ow = max(int(round(w * scale)), 1)
    up = tensor_ops.bicubic_resize(x_lr, oh, ow)
    if noise_free:
        return up
    if rng is None:
        raise ValueError("rng required unless noise_free")
    _, v_hat = diffusion.conditional_moments(schedule, oh, ow, scale, schedule.horizon)
    eps = rng.standard_normal(up.shape)
    noise = tensor_ops.ifft2(np.sqrt(v_hat)[..., None] * tensor_ops.fft2(eps)).real
    return up + noise


def sample(net, x_lr: np.ndarray, scale: float,
           schedule: DiffusionSchedule | None = None, n_steps: int = 30,
           ats: AtsParams | None = None, mode: str = "rk4-grid",
           rng: np.random.Generator | None = None, noise_free: bool = False,
           drift_form: str = "projected", t_end: float = 0.0,
           atol: float = 1e-6, rtol: float = 1e-6,
           report: dict | None = None) -> np.ndarray:
    """Super-resolve one (H, W, C) image in [0, 1] by reverse ODE integration.

    mode "rk4-grid" integrates over the warped grid (reversed, horizon down
    to t_end); "rk45" uses the adaptive solver. Deterministic given the rng
    state and inputs. Pass a dict as `report` to receive {steps, mode,
    wall_ms, nfe, grid}.
    """
    from . import layers  # deferred: keeps sampler importable without the net stack

    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if mode not in ("rk4-grid", "rk45"):
        raise ValueError(f"unknown mode {mode!r}")
    schedule = schedule or DiffusionSchedule()
    ats = ats or AtsParams()

    x = init_state(x_lr, scale, schedule, rng, noise_free)[None]
    lr_b = x_lr[None]
    nfe = 0

    def drift(xc, tc):
        nonlocal nfe
        nfe += 1
        s = layers.score_forward(net, xc, lr_b, tc).value
        beta = schedule.beta(tc)
        lin = (-0.5 * beta) * (xc - _project_low(xc, scale)) if drift_form == "projected" \
            else (-0.5 * beta) * xc
        out = lin - (0.5 * beta) * s
        if not np.all(np.isfinite(out)):
            raise SamplerError(f"non-finite drift at t={tc:.6g}")
        return out

    t0 = time.perf_counter()
    if mode == "rk4-grid":
        grid = build_time_grid(n_steps, ats, schedule.horizon)
        if t_end > 0.0:
            grid = remap_times(grid, t_end, schedule.horizon)
        x = integrate_grid(x, grid[::-1], drift)
        used = [float(t) for t in grid[::-1]]
    else:
        used = []
        x = rk45_integrate(x, schedule.horizon, t_end, drift,
                           atol=atol, rtol=rtol, trace=used)
    wall_ms = (time.perf_counter() - t0) * 1e3

    if report is not None:
        report.update({"steps": n_steps if mode == "rk4-grid" else max(len(used) - 1, 0),
                       "mode": mode, "wall_ms": wall_ms, "nfe": nfe, "grid": used})
    return np.clip(x[0], 0.0, 1.0)


def fit_ats(score_fn, patches: list, scale: float,
            schedule: DiffusionSchedule | None = None,
            ats0: AtsParams | None = None, n_coarse: int = 8, n_fine: int = 256,
            iters: int = 20, lr: float = 0.5, rng: np.random.Generator | None = None,
            noise_free: bool = True, drift_form: str = "projected",
            t_end: float | None = None, report: dict | None = None) -> AtsParams:
    """Tune warp coefficients so few-step RK4 tracks a many-step reference.

    The objective (our own choice; nothing in the diffusion framework dictates
    one) is the mean squared difference between the n_coarse-step terminal
    state and a detached n_fine-step reference computed on the same warp, both
    started from identical states. Gradients flow to omega through the grid
    times and step sizes by reverse-mode differentiation of the whole coarse
    trajectory, with phi_inverse differentiated implicitly. score_fn must
    accept and return Vars as well as ndarrays. Plain gradient descent; the
    best iterate by objective is returned, so the result never scores worse
    than the initial coefficients.
    """
    schedule = schedule or DiffusionSchedule()
    omega0 = (ats0 or AtsParams()).omega.copy()
    if t_end is None:
        t_end = schedule.t_floor
    horizon = schedule.horizon

    inits = [init_state(p, scale, schedule, rng, noise_free)[None] for p in patches]

    def drift_np(x, t):
        return reverse_drift(x, t, score_fn, schedule, scale, drift_form)

    def objective_and_grad(om: np.ndarray):
        refs = []
        fine = remap_times(build_time_grid(n_fine, AtsParams(om), horizon), t_end, horizon)
        for x0 in inits:
            refs.append(integrate_grid(x0, fine[::-1], drift_np))
        omega_v = ad.Var(om, label="omega")
        coarse = remap_times(build_time_grid_var(n_coarse, omega_v, horizon), t_end, horizon)
        coarse = list(reversed(coarse))
        total = None
        for x0, ref in zip(inits, refs):
            xc = integrate_grid(ad.as_var(x0), coarse, drift_np)
            term = ad.mean_(ad.mul(ad.sub(xc, ref), ad.sub(xc, ref)))
            total = term if total is None else ad.add(total, term)
        loss = ad.mul(1.0 / len(inits), total)
        grads = ad.backward(loss)
        return float(loss.value), grads.get("omega", np.zeros_like(om))

    omega = omega0.copy()
    best_omega = omega.copy()
    best_loss, g = objective_and_grad(omega)
    history = [best_loss]
    for _ in range(iters):
        omega = omega - lr * g
        loss, g = objective_and_grad(omega)
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_omega = omega.copy()
    if report is not None:
        report.update({"initial_loss": history[0], "best_loss": best_loss,
                       "history": history, "omega": [float(v) for v in best_omega]})
    return AtsParams(best_omega)
