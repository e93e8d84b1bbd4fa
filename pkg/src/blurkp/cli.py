"""Command-line entry point: ``blurkp <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .blursynth import get_level, synth_pair
from .evalkit import repeatability
from .model import ModelConfig, build_model, detect, score_map

log = logging.getLogger("blurkp")


def _dims(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def cmd_train(args):
    from .supervision import AugmentConfig, TrainConfig, train

    samples = io.load_samples(io.read_manifest(args.manifest))
    tc = TrainConfig(batch_size=args.batch, epochs=args.epochs, lr_initial=args.lr,
                     lr_final=args.lr_final, decay_start_epoch=args.decay_start
                     if args.decay_start is not None else min(20, max(args.epochs - 1, 0)),
                     sigma_gt=args.sigma, seed=args.seed, mix_sharp=args.mix_sharp)
    ac = AugmentConfig(crop=args.crop) if args.augment else AugmentConfig.identity(args.crop)
    model = build_model(ModelConfig(use_rmab=args.rmab), seed=args.seed)

    def progress(epoch, step, loss):
        log.info("epoch %d step %d loss %.6f", epoch, step, loss)

    model, tlog = train(samples, tc, ac, model, progress=progress if args.verbose else None)
    io.save_model(args.out, model)
    if args.loss_log:
        Path(args.loss_log).write_text("".join(f"{i + 1},{v:.9e}\n" for i, v in enumerate(tlog.epoch_losses)))
    print(f"trained {tc.epochs} epochs, final loss {tlog.epoch_losses[-1] if tlog.epoch_losses else float('nan'):.6f}")
    return 0


def cmd_detect(args):
    model = io.load_model(args.model)
    kpts = detect(model, io.read_image(args.image), args.max_kpts, args.threshold)
    io.write_keypoints(args.out, kpts)
    print(f"{len(kpts)} keypoints")
    return 0


def cmd_score_map(args):
    model = io.load_model(args.model)
    r = score_map(model, io.read_image(args.image)).data
    io.write_image(args.out, r, maxval=65535)
    return 0


def cmd_eval(args):
    res = repeatability(io.read_keypoints(args.ref_kpts), io.read_keypoints(args.tgt_kpts),
                        io.read_homography(args.homography), args.ref_dims, args.tgt_dims,
                        top=args.top, eps=args.eps, rho=args.rho)
    print(f"repeatability={100.0 * res.repeatability:.2f}")
    print(f"matches={res.n_matches} ref={res.n_ref} tgt={res.n_tgt}")
    return 0


def cmd_synth_blur(args):
    img = io.read_image(args.input)
    blurred, kern = synth_pair(img, get_level(args.level), np.random.default_rng(args.seed))
    io.write_image(args.out, blurred)
    if args.kernel_out:
        io.write_kernel(args.kernel_out, kern)
    return 0


def cmd_gt_heatmap(args):
    from .supervision import detect_reference_keypoints, render_heatmap

    img = io.read_image(args.image)
    kpts = io.read_keypoints(args.kpts) if args.kpts else detect_reference_keypoints(img[:, :, 0])
    io.write_image(args.out, render_heatmap(kpts, img.shape[0], img.shape[1], args.sigma), maxval=65535)
    return 0


def cmd_gradcheck(args):
    from .gradsuite import TOLERANCE, run_suite

    worst = run_suite(seeds=tuple(range(args.seeds)))
    bad = 0
    for name, err in worst.items():
        ok = err < TOLERANCE
        bad += not ok
        print(f"{name:24s} {err:.3e} {'ok' if ok else 'FAIL'}")
    return 1 if bad else 0


def cmd_draw_matches(args):
    from .viz import draw_matches

    ref, tgt = io.read_image(args.ref), io.read_image(args.tgt)
    canvas = draw_matches(ref[:, :, 0], tgt[:, :, 0], io.read_keypoints(args.ref_kpts),
                          io.read_keypoints(args.tgt_kpts), io.read_homography(args.homography),
                          top=args.top, eps=args.eps, rho=args.rho)
    io.write_image(args.out, canvas)
    return 0


def cmd_synth_dataset(args):
    from .synthetic import corner_dataset

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    level = get_level(args.level)
    entries = []
    for i, (sharp, blurred, kpts) in enumerate(corner_dataset(args.count, args.seed, args.size, level)):
        s, b, k = out / f"{i:04d}_sharp.pgm", out / f"{i:04d}_blur.pgm", out / f"{i:04d}.csv"
        io.write_image(s, sharp)
        io.write_image(b, blurred)
        io.write_keypoints(k, kpts)
        entries.append(io.ManifestEntry(s, b, k))
    io.write_manifest(out / "manifest.txt", entries)
    print(out / "manifest.txt")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="blurkp", description="Blur-robust MLP keypoint detector")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a dataset manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--lr-final", type=float, default=1e-6)
    t.add_argument("--decay-start", type=int, default=None)
    t.add_argument("--crop", type=int, default=256)
    t.add_argument("--sigma", type=float, default=2.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--mix-sharp", type=float, default=0.5)
    t.add_argument("--rmab", type=_on_off, default=True)
    t.add_argument("--augment", type=_on_off, default=True)
    t.add_argument("--loss-log")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="detect keypoints in an image")
    d.add_argument("--model", required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--max-kpts", type=int, default=1000)
    d.add_argument("--threshold", type=float, default=0.02)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("score-map", help="write the response map as 16-bit PGM")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score_map)

    e = sub.add_parser("eval", help="repeatability of two keypoint sets")
    e.add_argument("--ref-kpts", required=True)
    e.add_argument("--tgt-kpts", required=True)
    e.add_argument("--homography", required=True)
    e.add_argument("--ref-dims", type=_dims, required=True)
    e.add_argument("--tgt-dims", type=_dims, required=True)
    e.add_argument("--top", type=int, default=1000)
    e.add_argument("--eps", type=float, default=0.4)
    e.add_argument("--rho", type=float, default=4.0)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("synth-blur", help="blur an image with a random motion kernel")
    b.add_argument("--in", dest="input", required=True)
    b.add_argument("--level", choices=["easy", "hard", "tough"], required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--kernel-out")
    b.set_defaults(func=cmd_synth_blur)

    g = sub.add_parser("gt-heatmap", help="render the Gaussian target heatmap")
    g.add_argument("--image", required=True)
    g.add_argument("--kpts")
    g.add_argument("--sigma", type=float, default=2.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gt_heatmap)

    c = sub.add_parser("gradcheck", help="finite-difference check of every block")
    c.add_argument("--seeds", type=int, default=5)
    c.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("draw-matches", help="side-by-side match visualization (PPM)")
    m.add_argument("--ref", required=True)
    m.add_argument("--tgt", required=True)
    m.add_argument("--ref-kpts", required=True)
    m.add_argument("--tgt-kpts", required=True)
    m.add_argument("--homography", required=True)
    m.add_argument("--top", type=int, default=1000)
    m.add_argument("--eps", type=float, default=0.4)
    m.add_argument("--rho", type=float, default=4.0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_draw_matches)

    y = sub.add_parser("synth-dataset", help="write synthetic corner images and a manifest")
    y.add_argument("--out-dir", required=True)
    y.add_argument("--count", type=int, default=8)
    y.add_argument("--size", type=int, default=256)
    y.add_argument("--level", choices=["easy", "hard", "tough"], default="easy")
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=cmd_synth_dataset)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"blurkp {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
