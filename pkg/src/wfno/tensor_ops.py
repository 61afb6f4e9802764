"""Dense array kernels: 2-d FFTs, bicubic resampling, convolution, frequency grids.

Arrays follow the (..., H, W, C) axis convention; batched tensors are
(B, H, W, C) float64, spectra are complex128. The forward FFT is unnormalized
and the inverse carries the 1/(H*W) factor, so ``ifft2(fft2(x)) == x`` and
Parseval reads ``sum|x|^2 == sum|fft2(x)|^2 / (H*W)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def fft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized 2-d DFT over the two axes before the channel axis."""
    if x.ndim < 3:
        raise ValueError(f"fft2 expects (..., H, W, C), got shape {x.shape}")
    return np.fft.fft2(x, axes=(-3, -2))


def ifft2(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2`, normalized by 1/(H*W)."""
    if x.ndim < 3:
        raise ValueError(f"ifft2 expects (..., H, W, C), got shape {x.shape}")
    return np.fft.ifft2(x, axes=(-3, -2))


def signed_freqs(n: int) -> np.ndarray:
    """Integer frequencies in FFT order: 0, 1, ..., then the negative half."""
    return np.fft.fftfreq(n, d=1.0 / n)


@lru_cache(maxsize=None)
def freq_norm_grid(h: int, w: int) -> np.ndarray:
    """|xi| per mode, shape (h, w), in FFT index order."""
    u = signed_freqs(h)[:, None]
    v = signed_freqs(w)[None, :]
    g = np.sqrt(u * u + v * v)
    g.flags.writeable = False
    return g


def freq_flip(x: np.ndarray) -> np.ndarray:
    """Index map (u, v) -> (-u mod H, -v mod W) on the spatial axes.

    Self-inverse permutation; for a real signal's spectrum X it holds that
    conj(freq_flip(X)) == X.
    """
    return np.roll(np.flip(x, axis=(-3, -2)), shift=(1, 1), axis=(-3, -2))


def hermitianize(x: np.ndarray) -> np.ndarray:
    """Project a spectrum onto the conjugate-symmetric subspace."""
    return 0.5 * (x + np.conj(freq_flip(x)))


@lru_cache(maxsize=None)
def low_pass_mask(h: int, w: int, scale: float) -> np.ndarray:
    """0/1 mask keeping modes inside the degraded grid's Nyquist rectangle.

    A mode survives iff |u| <= floor(h/(2*scale)) and |v| <= floor(w/(2*scale)).
    scale == 1 keeps every mode.
    """
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    cu = np.floor(h / (2.0 * scale))
    cv = np.floor(w / (2.0 * scale))
    u = np.abs(signed_freqs(h))[:, None]
    v = np.abs(signed_freqs(w))[None, :]
    m = ((u <= cu) & (v <= cv)).astype(np.float64)
    m.flags.writeable = False
    return m


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5 (Catmull-Rom)."""
    a = -0.5
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    out[near] = (a + 2.0) * t[near] ** 3 - (a + 3.0) * t[near] ** 2 + 1.0
    out[far] = a * (t[far] ** 3 - 5.0 * t[far] ** 2 + 8.0 * t[far] - 4.0)
    return out


@lru_cache(maxsize=None)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic resampling matrix for one axis.

    Pixel centers sit at (i + 0.5)/n (align-corners-false); samples outside
    the input are clamped to the edge, which folds the out-of-range tap
    weights onto the boundary entries. Exact identity when n_out == n_in.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("resize_matrix needs positive sizes")
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = (o + 0.5) * n_in / n_out - 0.5
        base = int(np.floor(src))
        for j in range(base - 1, base + 3):
            w = _catmull_rom(np.asarray(src - j))
            m[o, min(max(j, 0), n_in - 1)] += float(w)
    m.flags.writeable = False
    return m


def bicubic_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom resample of (..., H, W, C) to (..., out_h, out_w, C)."""
    if x.ndim < 3:
        raise ValueError(f"bicubic_resize expects (..., H, W, C), got {x.shape}")
    rh = resize_matrix(x.shape[-3], out_h)
    rw = resize_matrix(x.shape[-2], out_w)
    y = np.einsum("oh,...hwc->...owc", rh, x)
    return np.einsum("pw,...owc->...opc", rw, y)


@lru_cache(maxsize=None)
def upsample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) spectrum embedding for one axis, FFT index order.

    Each input frequency lands on the same signed frequency of the larger
    grid; an even input's Nyquist bin (which aliases +n/2 and -n/2) is split
    half-and-half so conjugate symmetry survives and real signals stay real.
    n_out == n_in gives the identity.
    """
    if n_out < n_in:
        raise ValueError(f"spectrum embedding cannot shrink: {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    for i, f in enumerate(signed_freqs(n_in).astype(int)):
        if n_in % 2 == 0 and i == n_in // 2:
            m[(n_in // 2) % n_out, i] += 0.5
            m[(-(n_in // 2)) % n_out, i] += 0.5
        else:
            m[f % n_out, i] = 1.0
    m.flags.writeable = False
    return m


def spectral_upsample(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Fourier zero-pad interpolation of (..., H, W, C) onto a finer grid.

    The amplitude rescale (out_h*out_w)/(h*w) compensates the unnormalized
    forward transform so constants map to the same constants.
    """
    h, w = x.shape[-3], x.shape[-2]
    spec = fft2(x)
    uh = upsample_matrix(h, out_h)
    uw = upsample_matrix(w, out_w)
    spec = np.einsum("oh,...hwc->...owc", uh, spec)
    spec = np.einsum("pw,...owc->...opc", uw, spec)
    spec *= (out_h * out_w) / (h * w)
    out = ifft2(spec)
    return out.real if np.isrealobj(x) else out


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padded cross-correlation: (B,H,W,Cin) * (kh,kw,Cin,Cout) -> (B,H,W,Cout).

    Zero fill outside the input; even kernels pad one more on the
    bottom/right side.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    if x.shape[3] != kernel.shape[2]:
        raise ValueError(f"channel mismatch: input {x.shape[3]}, kernel {kernel.shape[2]}")
    kh, kw = kernel.shape[:2]
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl), (0, 0)))
    h, w = x.shape[1], x.shape[2]
    out = np.zeros(x.shape[:3] + (kernel.shape[3],))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("bhwc,cd->bhwd", xp[:, i : i + h, j : j + w], kernel[i, j])
    if bias is not None:
        out += bias
    return out
