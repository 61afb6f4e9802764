"""The forward degradation diffusion, mode by mode.

A clean patch is pushed toward its low-pass projection while noise
accumulates. Kept modes random-walk around the clean spectrum; killed modes
decay toward zero and approach unit stationary variance. The closed-form
per-mode mean and variance make all of this checkable without simulation,
which is what this script does, then it simulates anyway for one time point.
"""

import numpy as np

from wfno import dataset, diffusion, tensor_ops

SCALE = 2.0


def main():
    sch = diffusion.DiffusionSchedule()
    x0 = dataset.make_patch(0, size=16)
    h, w = x0.shape[:2]

    print(f"schedule: beta {sch.beta_min} -> {sch.beta_max} over T = {sch.horizon}")
    print(f"integrated rate B(T) = {sch.beta_integral(sch.horizon):.4f}")

    print("\nper-mode moments (kept mode keeps its mean, killed mode loses it):")
    print(f"{'t':>6} {'m_kept':>10} {'m_killed':>10} {'v_kept':>10} {'v_killed':>10}")
    for t in (0.001, 0.1, 0.3, 0.6, 1.0):
        m, v = diffusion.conditional_moments(sch, h, w, SCALE, t)
        mask = tensor_ops.low_pass_mask(h, w, SCALE).astype(bool)
        print(f"{t:6.3f} {m[mask].mean():10.5f} {m[~mask].mean():10.5f} "
              f"{v[mask].mean():10.5f} {v[~mask].mean():10.5f}")

    t = 0.6
    draws = 16384
    print(f"\nsimulating {draws} draws at t = {t} and comparing with the formulas:")
    m, v = diffusion.conditional_moments(sch, h, w, SCALE, t)
    rng = np.random.default_rng(1)
    spec0 = tensor_ops.fft2(x0)
    n = h * w
    re = {"kept (0,1)": (0, 1), "killed (5,5)": (5, 5)}
    samples = {k: [] for k in re}
    for _ in range(draws):
        spec_t = tensor_ops.fft2(diffusion.sample_xt(x0, sch, SCALE, t, rng))
        for k, idx in re.items():
            samples[k].append(spec_t[idx][0].real)
    for k, idx in re.items():
        arr = np.asarray(samples[k])
        # real part of a generic mode carries half the per-mode variance,
        # and white pixel noise contributes variance n per spectral mode
        want_var = v[idx] * n / 2.0
        se = np.sqrt(want_var / draws)
        print(f"{k:14s} mean {arr.mean():8.3f} +- {se:.3f}  "
              f"want {m[idx] * spec0[idx][0].real:8.3f};  "
              f"var {arr.var():8.2f}  want {want_var:8.2f}")

    print("\nbicubic degradation (the user-facing pipeline):")
    for s in (1.5, 2.0, 3.0):
        lr = diffusion.degrade(x0, s)
        print(f"scale {s:3.1f}: {x0.shape[0]}x{x0.shape[1]} -> {lr.shape[0]}x{lr.shape[1]}")


if __name__ == "__main__":
    main()
