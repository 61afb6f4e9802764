"""Command line front end.

Module scope imports only the stdlib on purpose: the WFNO_THREADS cap has to
land in the environment before numpy first loads, so every numpy-backed
module is imported inside the command handlers, after main() has applied it.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from . import config

USAGE_EXIT = 1
RUNTIME_EXIT = 2

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")

ATS_SIDECAR = "ats_omega.json"


class UsageError(ValueError):
    pass


def _apply_thread_cap() -> None:
    cap = os.environ.get("WFNO_THREADS")
    if cap is None or cap == "":
        return
    if not cap.isdigit() or int(cap) < 1:
        raise UsageError(f"WFNO_THREADS must be a positive integer, got {cap!r}")
    for var in _THREAD_VARS:
        os.environ[var] = cap


def _merged_config(args) -> config.RunConfig:
    """Run config from --config (or defaults) with explicit flags on top."""
    cfg = config.load(args.config) if getattr(args, "config", None) else config.RunConfig()
    for f in dataclasses.fields(config.RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    return cfg


def _resolve_ats(cfg: config.RunConfig, ckpt_dir: str):
    """(AtsParams, source) with a fitted sidecar in the checkpoint dir winning."""
    import numpy as np

    from . import sampler
    sidecar = os.path.join(ckpt_dir, ATS_SIDECAR)
    if os.path.isfile(sidecar):
        with open(sidecar) as fh:
            omega = json.load(fh)["omega"]
        return sampler.AtsParams(np.asarray(omega, dtype=np.float64)), sidecar
    return config.ats_of(cfg), "config"


def _report_path(out_path: str) -> str:
    return os.path.splitext(out_path)[0] + ".json"


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_degrade(args) -> int:
    from . import diffusion, fileio

    if args.scale < 1.0:
        raise UsageError(f"--scale must be >= 1, got {args.scale}")
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for src in args.inputs:
        img = fileio.load_image(src)
        low = diffusion.degrade(img, args.scale)
        stem = os.path.splitext(os.path.basename(src))[0]
        dst = os.path.join(args.out_dir, f"{stem}_x{args.scale:g}.png")
        fileio.save_image(dst, low)
        rows.append((src, dst, args.scale))
        print(f"{src} {img.shape[0]}x{img.shape[1]} -> {dst} {low.shape[0]}x{low.shape[1]}")
    manifest = os.path.join(args.out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hr", "lr", "scale"])
        writer.writerows(rows)
    print(f"manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    import numpy as np

    from . import dataset, layers, training

    cfg = _merged_config(args)
    images = dataset.load_dataset(cfg.data_dir)
    schedule = config.schedule_of(cfg)
    tcfg = config.train_of(cfg)
    if args.resume:
        net, opt, extra = training.load_train_state(args.resume)
        summary = training.train(net, images, tcfg, schedule, resume_state=opt,
                                 start_step=int(extra.get("step", 0)),
                                 start_epoch=int(extra.get("epoch", 0)))
    else:
        net = layers.init_score_net(config.model_of(cfg), np.random.default_rng(cfg.seed))
        summary = training.train(net, images, tcfg, schedule)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_sample(args) -> int:
    import numpy as np

    from . import fileio, layers, sampler

    cfg = _merged_config(args)
    if args.scale < 1.0:
        raise UsageError(f"--scale must be >= 1, got {args.scale}")
    net, _ = layers.load_checkpoint(cfg.checkpoint)
    x_lr = fileio.load_image(args.input)
    ats, omega_source = _resolve_ats(cfg, cfg.checkpoint)
    report: dict = {}
    out_img = sampler.sample(net, x_lr, args.scale, config.schedule_of(cfg),
                             n_steps=cfg.sample_steps, ats=ats, mode=cfg.mode,
                             rng=np.random.default_rng(cfg.seed),
                             noise_free=cfg.noise_free, drift_form=cfg.drift_form,
                             t_end=cfg.t_end, atol=cfg.atol, rtol=cfg.rtol,
                             report=report)
    fileio.save_image(args.out, out_img)
    report.update({
        "input": args.input, "output": args.out, "scale": args.scale,
        "seed": cfg.seed, "checkpoint": cfg.checkpoint,
        "in_size": [int(x_lr.shape[0]), int(x_lr.shape[1])],
        "out_size": [int(out_img.shape[0]), int(out_img.shape[1])],
        "omega": [float(v) for v in ats.omega], "omega_source": omega_source,
    })
    rpath = _report_path(args.out)
    _write_json(rpath, report)
    print(f"wrote {args.out} ({out_img.shape[0]}x{out_img.shape[1]}) "
          f"nfe={report['nfe']} wall_ms={report['wall_ms']:.1f} report={rpath}")
    return 0


def cmd_eval(args) -> int:
    from . import fileio, metrics

    if len(args.pairs) % 2 != 0:
        raise UsageError("eval expects REF TEST pairs; got an odd number of paths")
    cfg = _merged_config(args)
    rows = []
    for i in range(0, len(args.pairs), 2):
        ref = fileio.load_image(args.pairs[i])
        test = fileio.load_image(args.pairs[i + 1])
        if cfg.y_channel:
            ref = metrics.bt601_luma(ref)
            test = metrics.bt601_luma(test)
        p = metrics.psnr(ref, test)
        s = metrics.ssim(ref, test)
        rows.append({"ref": args.pairs[i], "test": args.pairs[i + 1],
                     "psnr_db": None if p == float("inf") else p, "ssim": s})
        name = os.path.basename(args.pairs[i + 1])
        print(f"{name:30s} psnr={metrics.db_text(p):>8s} ssim={s:.4f}")
    finite = [r["psnr_db"] for r in rows if r["psnr_db"] is not None]
    mean_p = sum(finite) / len(finite) if finite else None
    mean_s = sum(r["ssim"] for r in rows) / len(rows)
    shown = metrics.db_text(mean_p) if mean_p is not None else metrics.db_text(float("inf"))
    print(f"{'mean':30s} psnr={shown:>8s} ssim={mean_s:.4f}")
    if args.json:
        _write_json(args.json, {"pairs": rows, "mean_psnr_db": mean_p,
                                "mean_ssim": mean_s, "y_channel": bool(cfg.y_channel)})
        print(f"report: {args.json}")
    return 0


def cmd_bench(args) -> int:
    import numpy as np

    from . import dataset, diffusion, fileio, layers, metrics, sampler

    cfg = _merged_config(args)
    schedule = config.schedule_of(cfg)
    if args.checkpoint is not None or os.path.isdir(cfg.checkpoint):
        net, _ = layers.load_checkpoint(cfg.checkpoint)
        source = cfg.checkpoint
    else:
        net = layers.init_score_net(config.model_of(cfg), np.random.default_rng(cfg.seed))
        source = "fresh"
    if args.input:
        x_lr = fileio.load_image(args.input)
    else:
        x_lr = diffusion.degrade(dataset.make_patch(0, 16, cfg.seed), args.scale)
    ats, _ = _resolve_ats(cfg, cfg.checkpoint)

    def run_once():
        report: dict = {}
        sampler.sample(net, x_lr, args.scale, schedule, n_steps=cfg.sample_steps,
                       ats=ats, mode=cfg.mode, rng=np.random.default_rng(cfg.seed),
                       noise_free=cfg.noise_free, drift_form=cfg.drift_form,
                       t_end=cfg.t_end, atol=cfg.atol, rtol=cfg.rtol, report=report)
        return report

    stats = metrics.bench(run_once, runs=cfg.runs)
    stats.update({"mode": cfg.mode, "steps": cfg.sample_steps, "scale": args.scale,
                  "net": source, "lr_size": [int(x_lr.shape[0]), int(x_lr.shape[1])]})
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from . import autodiff as ad
    from . import layers

    rng = np.random.default_rng(args.seed)
    mc = layers.ModelConfig(channels=4, wfno_layers=1, attn_layers=1,
                            encoder_blocks=1, stored_modes=4, time_dim=4)
    net = layers.init_score_net(mc, rng)
    # zero-initialized gates and projections give an identically zero score,
    # which would make every gradient trivially zero; jitter first
    for _, a in layers.trainable_arrays(net):
        if np.iscomplexobj(a):
            a += 0.05 * (rng.standard_normal(a.shape) + 1j * rng.standard_normal(a.shape))
        else:
            a += 0.05 * rng.standard_normal(a.shape)

    x_t = rng.uniform(0.0, 1.0, (1, 6, 6, 3))
    x_lr = rng.uniform(0.0, 1.0, (1, 3, 3, 3))
    t = 0.4
    target = rng.standard_normal((1, 6, 6, 3))
    arrays = {n: a for n, a in layers.trainable_arrays(net)}

    def loss_fn(values):
        out = layers.score_forward(layers.substitute(net, values), x_t, x_lr, t)
        err = ad.sub(out, target)
        return ad.mean_(ad.mul(err, err))

    scales = ad.check_gradients(loss_fn, arrays, rtol=args.rtol, atol=args.atol)
    worst = 0.0
    failed = []
    width = max(len(n) for n in scales)
    for name in sorted(scales):
        ok = scales[name] <= 1.0
        print(f"{name:<{width}s} {scales[name]:10.3e} {'ok' if ok else 'FAIL'}")
        worst = max(worst, scales[name])
        if not ok:
            failed.append(name)
    print(f"worst discrepancy scale: {worst:.3e} "
          f"(<= 1.0 passes at rtol={args.rtol:g}, atol={args.atol:g})")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return RUNTIME_EXIT
    return 0


def cmd_ats_fit(args) -> int:
    import numpy as np

    from . import autodiff as ad
    from . import dataset, diffusion, layers, sampler

    cfg = _merged_config(args)
    if args.scale < 1.0:
        raise UsageError(f"--scale must be >= 1, got {args.scale}")
    net, _ = layers.load_checkpoint(cfg.checkpoint)
    images = dataset.load_dataset(cfg.data_dir)
    hr = images[0]
    side = min(hr.shape[0], hr.shape[1], cfg.patch_size)
    hr = hr[:side, :side]
    x_lr = diffusion.degrade(hr, args.scale)
    lr_b = x_lr[None]

    def score_fn(x, t):
        out = layers.score_forward(net, x, lr_b, t)
        if isinstance(x, ad.Var) or isinstance(t, ad.Var):
            return out
        return out.value

    report: dict = {}
    fitted = sampler.fit_ats(score_fn, [x_lr], args.scale, config.schedule_of(cfg),
                             ats0=sampler.AtsParams(np.zeros(len(cfg.omega))),
                             n_coarse=cfg.ats_coarse, n_fine=cfg.ats_fine,
                             iters=cfg.ats_iters, lr=cfg.ats_lr,
                             drift_form=cfg.drift_form, report=report)
    sidecar = os.path.join(cfg.checkpoint, ATS_SIDECAR)
    _write_json(sidecar, {"omega": report["omega"], "initial_loss": report["initial_loss"],
                          "best_loss": report["best_loss"], "history": report["history"],
                          "scale": args.scale, "coarse_steps": cfg.ats_coarse,
                          "fine_steps": cfg.ats_fine})
    print(f"omega: {[round(v, 6) for v in report['omega']]}")
    print(f"objective: {report['initial_loss']:.6g} -> {report['best_loss']:.6g} "
          f"({cfg.ats_iters} iterations)")
    print(f"wrote {sidecar}")
    return 0 if fitted is not None else RUNTIME_EXIT


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wfno",
        description="Arbitrary-scale image super-resolution by score-based "
                    "diffusion over a spectral neural operator.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON",
                        help="run config file; explicit flags override its keys")
    common.add_argument("--seed", type=int, default=None, help="RNG seed")

    p = sub.add_parser("degrade", parents=[common],
                       help="bicubic-downsample images and write a manifest")
    p.add_argument("inputs", nargs="+", metavar="IMAGE")
    p.add_argument("--scale", type=float, default=2.0, help="downsampling factor")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", parents=[common], help="train the score network")
    p.add_argument("--data-dir", dest="data_dir", default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--steps", dest="train_steps", type=int, default=None,
                   help="optimizer step budget")
    p.add_argument("--resume", metavar="CKPT", default=None,
                   help="checkpoint dir to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common],
                       help="super-resolve one image by reverse ODE integration")
    p.add_argument("--input", required=True, metavar="LR_IMAGE")
    p.add_argument("--out", required=True, metavar="OUT_IMAGE")
    p.add_argument("--checkpoint", dest="checkpoint", default=None)
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("--steps", dest="sample_steps", type=int, default=None,
                   help="RK4 grid intervals")
    p.add_argument("--mode", choices=("rk4-grid", "rk45"), default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common],
                       help="PSNR/SSIM over reference/test image pairs")
    p.add_argument("pairs", nargs="+", metavar="REF TEST")
    p.add_argument("--y-channel", dest="y_channel", action="store_true", default=None,
                   help="compare on BT.601 luma instead of RGB")
    p.add_argument("--json", metavar="PATH", default=None, help="also write a JSON report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time repeated sampling runs")
    p.add_argument("--checkpoint", dest="checkpoint", default=None)
    p.add_argument("--input", default=None, metavar="LR_IMAGE",
                   help="default: a small built-in test patch")
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("--steps", dest="sample_steps", type=int, default=None)
    p.add_argument("--mode", choices=("rk4-grid", "rk45"), default=None)
    p.add_argument("--runs", dest="runs", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck",
                       help="compare tape gradients with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ats-fit", parents=[common],
                       help="fit the adaptive time-step warp for a checkpoint")
    p.add_argument("--checkpoint", dest="checkpoint", default=None)
    p.add_argument("--data-dir", dest="data_dir", default=None)
    p.add_argument("--scale", type=float, default=2.0)
    p.add_argument("--iters", dest="ats_iters", type=int, default=None)
    p.add_argument("--coarse", dest="ats_coarse", type=int, default=None)
    p.add_argument("--fine", dest="ats_fine", type=int, default=None)
    p.set_defaults(func=cmd_ats_fit)

    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_EXIT
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for -h and 2 for usage problems; remap the latter
        return 0 if e.code == 0 else USAGE_EXIT
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_EXIT
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
