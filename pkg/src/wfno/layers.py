"""Operator layers and the conditional score network.

Two parallel branches process the concatenation of upsampled low-resolution
condition features with the diffused state: a Fourier-operator stack whose
per-mode filters are reweighted toward high frequencies, and a softmax-free
linear-attention stack. A learned gate fuses them point-wise and a 1x1
projection emits the 3-channel score field.

Parameter containers are plain dataclasses with ndarray leaves. Forward
functions accept either ndarrays or autodiff Vars; passing wrapped parameters
(see :func:`wrap`) records the graph needed for training.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fileio, tensor_ops

LAYERNORM_EPS = 1e-5


class ScoreNetError(RuntimeError):
    """Non-finite activations inside the network, tagged with the stage."""


# ---------------------------------------------------------------------------
# parameter containers

@dataclass
class Conv2dParams:
    kernel: object  # (kh, kw, cin, cout)
    bias: object  # (cout,)


@dataclass
class SpectralFilter:
    P: object  # complex (modes_h, modes_w, C, C)
    gamma: object  # scalar, multiplies |xi|^alpha in the mode weight
    alpha: object  # scalar exponent; trainable only if alpha_learnable
    alpha_learnable: bool = False


@dataclass
class FnoLayer:
    w_linear: Conv2dParams  # 1x1 skip path
    filter: SpectralFilter


@dataclass
class LayerNormParams:
    scale: object  # (C,)
    shift: object  # (C,)


@dataclass
class AttnLayer:
    wq: object  # (C, C)
    wk: object
    wv: object
    ln_k: LayerNormParams
    ln_v: LayerNormParams
    out: Conv2dParams  # 1x1


@dataclass
class FusionParams:
    gate: Conv2dParams  # 1x1, 2C -> 1


@dataclass
class ResBlock:
    conv1: Conv2dParams
    conv2: Conv2dParams


@dataclass
class EncoderParams:
    stem: Conv2dParams
    blocks: list


@dataclass
class TimeProjParams:
    weight: object  # (2*time_dim, C)
    bias: object  # (C,)


@dataclass
class ModelConfig:
    """Structural hyperparameters; everything a checkpoint manifest records."""

    channels: int = 64
    wfno_layers: int = 8
    attn_layers: int = 8
    encoder_blocks: int = 4
    stored_modes: int = 48
    alpha: float = 0.7
    alpha_learnable: bool = False
    time_dim: int = 64  # frequency count; the embedding vector has 2*time_dim entries
    time_mode: str = "add"  # or "concat"
    in_channels: int = 3

    def validate(self) -> "ModelConfig":
        if self.time_dim % 2 != 0:
            raise ValueError(f"time_dim must be even, got {self.time_dim}")
        if self.time_mode not in ("add", "concat"):
            raise ValueError(f"time_mode must be 'add' or 'concat', got {self.time_mode!r}")
        return self


@dataclass
class ScoreNet:
    config: ModelConfig
    encoder: EncoderParams
    time_proj: TimeProjParams
    lift_w: Conv2dParams  # 1x1 on [condition ; state] for the Fourier branch
    lift_a: Conv2dParams  # same for the attention branch
    wfno: list = field(default_factory=list)
    attn: list = field(default_factory=list)
    fusion: FusionParams = None
    projection: Conv2dParams = None  # 1x1 to 3 channels


# ---------------------------------------------------------------------------
# initialization

def _he_conv(rng, kh, kw, cin, cout):
    std = np.sqrt(2.0 / (kh * kw * cin))
    return Conv2dParams(rng.normal(0.0, std, (kh, kw, cin, cout)), np.zeros(cout))


def init_score_net(config: ModelConfig, rng: np.random.Generator) -> ScoreNet:
    """Fresh parameters. Gamma starts at 0 so training begins from uniform mode
    weighting; the output projection starts at zero so the initial score is 0."""
    cfg = config.validate()
    c = cfg.channels
    stem = _he_conv(rng, 3, 3, cfg.in_channels, c)
    blocks = [
        ResBlock(_he_conv(rng, 3, 3, c, c), _he_conv(rng, 3, 3, c, c))
        for _ in range(cfg.encoder_blocks)
    ]
    cond_c = c + (2 * cfg.time_dim if cfg.time_mode == "concat" else 0)
    lift_in = cond_c + cfg.in_channels

    def fno_layer():
        m = cfg.stored_modes
        p = (rng.normal(size=(m, m, c, c)) + 1j * rng.normal(size=(m, m, c, c))) / c
        filt = SpectralFilter(p, np.zeros(()), np.asarray(float(cfg.alpha)), cfg.alpha_learnable)
        return FnoLayer(_he_conv(rng, 1, 1, c, c), filt)

    def attn_layer():
        std = 1.0 / np.sqrt(c)
        return AttnLayer(
            rng.normal(0.0, std, (c, c)),
            rng.normal(0.0, std, (c, c)),
            rng.normal(0.0, std, (c, c)),
            LayerNormParams(np.ones(c), np.zeros(c)),
            LayerNormParams(np.ones(c), np.zeros(c)),
            _he_conv(rng, 1, 1, c, c),
        )

    projection = Conv2dParams(np.zeros((1, 1, c, cfg.in_channels)), np.zeros(cfg.in_channels))
    return ScoreNet(
        config=cfg,
        encoder=EncoderParams(stem, blocks),
        time_proj=TimeProjParams(rng.normal(0.0, 1.0 / np.sqrt(2 * cfg.time_dim), (2 * cfg.time_dim, c)), np.zeros(c)),
        lift_w=_he_conv(rng, 1, 1, lift_in, c),
        lift_a=_he_conv(rng, 1, 1, lift_in, c),
        wfno=[fno_layer() for _ in range(cfg.wfno_layers)],
        attn=[attn_layer() for _ in range(cfg.attn_layers)],
        fusion=FusionParams(Conv2dParams(np.zeros((1, 1, 2 * c, 1)), np.zeros(1))),
        projection=projection,
    )


# ---------------------------------------------------------------------------
# parameter traversal

def named_arrays(obj, prefix: str = "") -> list:
    """Depth-first (name, ndarray) pairs in a stable declaration order."""
    out = []
    if isinstance(obj, np.ndarray):
        out.append((prefix, obj))
    elif isinstance(obj, ad.Var):
        out.append((prefix, obj))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            if f.name == "config":
                continue
            v = getattr(obj, f.name)
            if isinstance(v, (int, float, str, bool)) or v is None:
                continue
            out.extend(named_arrays(v, f"{prefix}.{f.name}" if prefix else f.name))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            out.extend(named_arrays(v, f"{prefix}.{i}" if prefix else str(i)))
    return out


def trainable_arrays(net: ScoreNet) -> list:
    """named_arrays minus fixed alpha exponents."""
    skip_alpha = not net.config.alpha_learnable
    return [
        (n, a) for n, a in named_arrays(net)
        if not (skip_alpha and n.endswith(".alpha"))
    ]


def substitute(net: ScoreNet, values: dict):
    """Copy of the net with named arrays replaced from `values` (Var or ndarray).

    Names not present in `values` keep their current ndarray.
    """

    def rec(obj, prefix):
        if isinstance(obj, np.ndarray):
            return values.get(prefix, obj)
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            kw = {}
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if f.name == "config" or isinstance(v, (int, float, str, bool)) or v is None:
                    kw[f.name] = v
                else:
                    kw[f.name] = rec(v, f"{prefix}.{f.name}" if prefix else f.name)
            return dataclasses.replace(obj, **kw)
        if isinstance(obj, list):
            return [rec(v, f"{prefix}.{i}" if prefix else str(i)) for i, v in enumerate(obj)]
        return obj

    return rec(net, "")


def wrap(net: ScoreNet):
    """Copy of the net with every trainable array replaced by a labeled Var."""
    return substitute(net, {n: ad.Var(a, label=n) for n, a in trainable_arrays(net)})


def flatten_params(pairs) -> np.ndarray:
    """Concatenate arrays into one float64 vector; complex split into re, im."""
    chunks = []
    for _, a in pairs:
        a = ad.value_of(a)
        if np.iscomplexobj(a):
            chunks.extend((a.real.ravel(), a.imag.ravel()))
        else:
            chunks.append(np.asarray(a, dtype=np.float64).ravel())
    return np.concatenate(chunks) if chunks else np.zeros(0)


def unflatten_params(pairs, vec: np.ndarray) -> None:
    """Write a flat vector back into the arrays of (name, ndarray) pairs."""
    pos = 0
    for _, a in pairs:
        n = a.size
        if np.iscomplexobj(a):
            a.real.flat[:] = vec[pos : pos + n]
            a.imag.flat[:] = vec[pos + n : pos + 2 * n]
            pos += 2 * n
        else:
            a.flat[:] = vec[pos : pos + n]
            pos += n
    if pos != vec.size:
        raise ValueError(f"flat vector length {vec.size} does not match parameters ({pos})")


def gradient_vector(pairs, grads: dict) -> np.ndarray:
    """Assemble backward() output into the flat-vector order of `pairs`."""
    chunks = []
    for name, a in pairs:
        a = ad.value_of(a)
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(a)
        if np.iscomplexobj(a):
            g = g.astype(np.complex128)
            chunks.extend((g.real.ravel(), g.imag.ravel()))
        else:
            chunks.append(np.real(g).ravel())
    return np.concatenate(chunks) if chunks else np.zeros(0)


# ---------------------------------------------------------------------------
# layer forward passes

def mode_weight(gamma, alpha, xi_norm, alpha_learnable: bool = False):
    """Frequency reweighting 1 + gamma * |xi|^alpha (weight 1 at the DC mode)."""
    xi = np.asarray(ad.value_of(xi_norm), dtype=np.float64)
    if alpha_learnable:
        mask = (xi > 0).astype(np.float64)
        safe = np.where(xi > 0, xi, 1.0)
        powed = ad.mul(mask, ad.exp(ad.mul(ad.as_var(alpha), np.log(safe))))
    else:
        powed = xi ** float(ad.value_of(alpha))
    return ad.add(1.0, ad.mul(ad.as_var(gamma), powed))


def _stored_indices(n_op: int, n_stored: int) -> np.ndarray:
    """Map operating signed frequencies onto stored filter rows.

    Frequencies beyond the stored extent reuse the outermost stored ring, so a
    filter trained at one resolution can be applied at any other without
    truncating modes.
    """
    f = tensor_ops.signed_freqs(n_op).astype(int)
    clamped = np.clip(f, -(n_stored // 2), (n_stored - 1) // 2)
    return clamped % n_stored


def filter_block(filt: SpectralFilter, h: int, w: int):
    """Per-mode mixing matrices for an h x w operating grid, (h, w, C, C)."""
    p = ad.value_of(filt.P)
    iu = _stored_indices(h, p.shape[0])
    iv = _stored_indices(w, p.shape[1])
    return ad.gather2d(filt.P, iu, iv)


def spectral_conv(v, filt: SpectralFilter):
    """Global convolution in the frequency domain with reweighted modes.

    All modes of the operating grid participate; the product spectrum is
    projected back onto the conjugate-symmetric subspace before the inverse
    transform and the (tiny) imaginary residue is dropped.
    """
    shape = ad.value_of(v).shape
    h, w = shape[-3], shape[-2]
    spec = ad.fft2(ad.as_var(v))
    mixed = ad.einsum2("bhwc,hwcd->bhwd", spec, filter_block(filt, h, w))
    wm = mode_weight(filt.gamma, filt.alpha, tensor_ops.freq_norm_grid(h, w), filt.alpha_learnable)
    weighted = ad.mul(mixed, ad.reshape(wm, (h, w, 1)))
    sym = ad.mul(ad.add(weighted, ad.conj(ad.freq_flip(weighted))), 0.5)
    return ad.real(ad.ifft2(sym))


def fno_layer(v, layer: FnoLayer):
    """GELU(W v + spectral_conv(v)) with a 1x1 pointwise skip path."""
    lin = ad.conv2d(v, layer.w_linear.kernel, layer.w_linear.bias)
    return ad.gelu(ad.add(lin, spectral_conv(v, layer.filter)))


def layer_norm(x, p: LayerNormParams):
    mu = ad.mean_(x, axis=-1, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.mean_(ad.mul(centered, centered), axis=-1, keepdims=True)
    normed = ad.div(centered, ad.sqrt(ad.add(var, LAYERNORM_EPS)))
    return ad.add(ad.mul(normed, p.scale), p.shift)


def galerkin_attention(v, layer: AttnLayer):
    """Softmax-free attention: Q (K~^T V~) / n over the token axis.

    K and V are layer-normalized; cost is linear in token count. Residual
    connection plus a 1x1 output conv.
    """
    b, h, w, c = ad.value_of(v).shape
    n = h * w
    tokens = ad.reshape(v, (b, n, c))
    q = ad.einsum2("bnc,cd->bnd", tokens, layer.wq)
    k = layer_norm(ad.einsum2("bnc,cd->bnd", tokens, layer.wk), layer.ln_k)
    vv = layer_norm(ad.einsum2("bnc,cd->bnd", tokens, layer.wv), layer.ln_v)
    ctx = ad.einsum2("bnc,bnd->bcd", k, vv)
    attn = ad.mul(ad.einsum2("bnc,bcd->bnd", q, ctx), 1.0 / n)
    out = ad.conv2d(ad.reshape(attn, (b, h, w, c)), layer.out.kernel, layer.out.bias)
    return ad.add(v, out)


def bicubic_resize_t(v, out_h: int, out_w: int):
    """Differentiable Catmull-Rom resize (dense per-axis matrices)."""
    shape = ad.value_of(v).shape
    rh = tensor_ops.resize_matrix(shape[-3], out_h)
    rw = tensor_ops.resize_matrix(shape[-2], out_w)
    y = ad.einsum2("oh,bhwc->bowc", rh, ad.as_var(v))
    return ad.einsum2("pw,bowc->bopc", rw, y)


def spectral_upsample_t(v, out_h: int, out_w: int):
    """Differentiable Fourier zero-pad interpolation onto a finer grid."""
    shape = ad.value_of(v).shape
    h, w = shape[-3], shape[-2]
    uh = tensor_ops.upsample_matrix(h, out_h)
    uw = tensor_ops.upsample_matrix(w, out_w)
    spec = ad.fft2(ad.as_var(v))
    spec = ad.einsum2("oh,bhwc->bowc", uh, spec)
    spec = ad.einsum2("pw,bowc->bopc", uw, spec)
    spec = ad.mul(spec, (out_h * out_w) / (h * w))
    return ad.real(ad.ifft2(spec))


def gated_fusion(v_w, v_a, fusion: FusionParams):
    """sigmoid(1x1([v_w ; v_a])) blends the two branches per pixel."""
    stacked = ad.concat([ad.as_var(v_w), ad.as_var(v_a)], axis=3)
    g = ad.sigmoid(ad.conv2d(stacked, fusion.gate.kernel, fusion.gate.bias))
    return ad.add(ad.mul(g, v_w), ad.mul(ad.sub(1.0, g), v_a))


def time_frequencies(dim: int, omega_min: float = 1.0, omega_max: float = 10000.0) -> np.ndarray:
    """Exponentially spaced angular frequencies, omega_1 = omega_min, omega_D = omega_max."""
    if dim < 2:
        return np.full(max(dim, 1), omega_min)
    i = np.arange(dim, dtype=np.float64)
    return omega_min * (omega_max / omega_min) ** (i / (dim - 1))


def time_embedding(t, dim: int, omega_min: float = 1.0, omega_max: float = 10000.0):
    """[sin(w1 t), cos(w1 t), ..., sin(wD t), cos(wD t)] as a (2*dim,) vector."""
    omegas = time_frequencies(dim, omega_min, omega_max)
    phase = ad.mul(omegas, ad.as_var(t))
    s = ad.reshape(ad.sin(phase), (dim, 1))
    c = ad.reshape(ad.cos(phase), (dim, 1))
    return ad.reshape(ad.concat([s, c], axis=1), (2 * dim,))


def encoder_forward(enc: EncoderParams, x):
    y = ad.conv2d(ad.as_var(x), enc.stem.kernel, enc.stem.bias)
    for blk in enc.blocks:
        inner = ad.conv2d(ad.gelu(ad.conv2d(y, blk.conv1.kernel, blk.conv1.bias)),
                          blk.conv2.kernel, blk.conv2.bias)
        y = ad.add(y, inner)
    return y


def attn_no_forward(v, layers, out_h: int, out_w: int):
    """Bicubic upsample, then the attention stack with GELU between layers."""
    x = bicubic_resize_t(v, out_h, out_w)
    for i, layer in enumerate(layers):
        x = galerkin_attention(x, layer)
        if i + 1 < len(layers):
            x = ad.gelu(x)
    return x


def _check_finite(x, stage: str):
    if not np.all(np.isfinite(ad.value_of(x))):
        raise ScoreNetError(f"non-finite activations after {stage}")
    return x


def score_forward(net: ScoreNet, x_t, x_lr, t):
    """Conditional score field s(x_t, t | x_lr), shape (B, H, W, in_channels).

    The LR condition is encoded once, shifted by the time embedding, upsampled
    per branch (spectral zero-pad for the Fourier branch, bicubic for the
    attention branch), concatenated with the state and lifted to the working
    width. Raises ScoreNetError naming the first stage that goes non-finite.
    """
    cfg = net.config
    b, h, w, _ = ad.value_of(x_t).shape
    feats = _check_finite(encoder_forward(net.encoder, x_lr), "encoder")

    emb = time_embedding(t, cfg.time_dim)
    if cfg.time_mode == "add":
        bias = ad.add(ad.einsum2("e,ec->c", emb, net.time_proj.weight), net.time_proj.bias)
        feats = ad.add(feats, ad.reshape(bias, (1, 1, 1, cfg.channels)))
    else:
        lh, lw = ad.value_of(feats).shape[1:3]
        tmap = ad.mul(np.ones((b, lh, lw, 1)), ad.reshape(emb, (1, 1, 1, 2 * cfg.time_dim)))
        feats = ad.concat([feats, tmap], axis=3)

    cond_w = spectral_upsample_t(feats, h, w)
    cond_a = bicubic_resize_t(feats, h, w)
    xv = ad.as_var(x_t)
    v_w = ad.gelu(ad.conv2d(ad.concat([cond_w, xv], 3), net.lift_w.kernel, net.lift_w.bias))
    v_a = ad.gelu(ad.conv2d(ad.concat([cond_a, xv], 3), net.lift_a.kernel, net.lift_a.bias))

    for i, layer in enumerate(net.wfno):
        v_w = _check_finite(fno_layer(v_w, layer), f"wfno.{i}")
    out_a = attn_no_forward(v_a, net.attn, h, w) if net.attn else v_a
    _check_finite(out_a, "attn")

    fused = gated_fusion(v_w, out_a, net.fusion)
    score = ad.conv2d(fused, net.projection.kernel, net.projection.bias)
    return _check_finite(score, "projection")


# ---------------------------------------------------------------------------
# checkpoints: directory of raw tensor files plus a JSON manifest

def _entry_files(pairs):
    for name, arr in pairs:
        arr = ad.value_of(arr)
        if np.iscomplexobj(arr):
            yield f"{name}_re", arr.real
            yield f"{name}_im", arr.imag
        else:
            yield name, arr


def save_checkpoint(path: str, net: ScoreNet, extra: dict | None = None) -> None:
    """One raw tensor file per named entry + manifest.json in a directory."""
    os.makedirs(path, exist_ok=True)
    entries = list(_entry_files(named_arrays(net)))
    for name, arr in entries:
        fileio.save_tensor(os.path.join(path, f"{name}.tnsr"), arr)
    manifest = {
        "format": "wfno-checkpoint-v1",
        "model": dataclasses.asdict(net.config),
        "entries": [n for n, _ in entries],
        "extra": extra or {},
    }
    blob = json.dumps(manifest, indent=2, sort_keys=True).encode()
    fileio._atomic_write(os.path.join(path, "manifest.json"), blob)


def load_checkpoint(path: str):
    """Rebuild (net, manifest) from :func:`save_checkpoint` output."""
    with open(os.path.join(path, "manifest.json"), "rb") as f:
        manifest = json.loads(f.read())
    if manifest.get("format") != "wfno-checkpoint-v1":
        raise fileio.FileFormatError(f"{path}: not a checkpoint manifest")
    cfg = ModelConfig(**manifest["model"]).validate()
    net = init_score_net(cfg, np.random.default_rng(0))
    stored = set(manifest["entries"])
    for name, arr in named_arrays(net):
        def read(entry):
            got = fileio.load_tensor(os.path.join(path, f"{entry}.tnsr"))
            if got.shape != arr.shape:
                raise fileio.FileFormatError(
                    f"{path}: entry {entry} has shape {got.shape}, expected {arr.shape}")
            return got
        if np.iscomplexobj(arr):
            if f"{name}_re" not in stored or f"{name}_im" not in stored:
                raise fileio.FileFormatError(f"{path}: missing checkpoint entry {name}")
            arr[...] = read(f"{name}_re") + 1j * read(f"{name}_im")
        else:
            if name not in stored:
                raise fileio.FileFormatError(f"{path}: missing checkpoint entry {name}")
            arr[...] = read(name)
    return net, manifest
