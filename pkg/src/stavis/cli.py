"""Command-line entry point: ``stavis {train,eval,gradcheck,make-splits,synth,densify}``.

Exit codes: 0 success, 1 usage error, 2 validation error (bad config,
incompatible checkpoint, malformed data), 3 numeric failure (non-finite
loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from stavis.checkpoint import load_checkpoint, load_into, save_checkpoint
from stavis.config import RunConfig, load_config
from stavis.data import io
from stavis.data.clips import VideoSource
from stavis.data.gt import default_sigma, densify_fixations, fixation_map
from stavis.data.manifest import load_manifest
from stavis.data.splits import SplitSpec, make_splits
from stavis.data.synth import synth_dataset, write_dataset
from stavis.errors import ConfigError, NumericError, ShapeError
from stavis.metrics import write_nss_series

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("stavis")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_videos(paths, root=None):
    videos = []
    for p in paths:
        videos.extend(load_manifest(p, root))
    if not videos:
        raise ConfigError("no videos: pass --manifest or set data.manifests in the config")
    return videos


def _sources(cfg: RunConfig, videos):
    b = cfg.model.backbone
    sigma = cfg.data.sigma_frac * max(b.height, b.width)
    return [VideoSource(v, b.height, b.width, sigma) for v in videos]


class _VisualVariant:
    """Predict with the visual path only (sigmoid of S^v)."""

    def __init__(self, model):
        self.model = model

    def predict(self, clips, audio):
        return self.model.predict_maps(clips, audio, stage="visual")


# -- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    from stavis.model import STAViS
    from stavis.train import train_stage

    cfg = load_config(args.config)
    stage = "av" if args.stage in ("av", "audiovisual") else "visual"
    if stage == "av" and not args.init:
        raise ConfigError("the audiovisual stage starts from a visual-stage checkpoint: pass --init")
    videos = _load_videos(args.manifest or cfg.data.manifests, args.data_root)
    keys = [v.key for v in videos]
    if cfg.data.splits:
        spec = SplitSpec.load(cfg.data.splits)
    else:
        spec = make_splits(keys, cfg.data.n_folds, cfg.train.seed)
    spec.validate(keys)
    fold = spec.folds[cfg.data.fold]
    by_key = {v.key: v for v in videos}
    train_src = _sources(cfg, [by_key[k] for k in fold.train])
    val_src = _sources(cfg, [by_key[k] for k in fold.val])

    model = STAViS(cfg.model, seed=cfg.train.seed)
    if args.init:
        init = load_checkpoint(args.init)
        if stage == "av" and init.stage == "visual":
            model.warm_start(init.to_params())
        else:
            load_into(model.params, init.params)
    result = train_stage(model, stage, train_src, val_src, cfg, out_dir=args.out)
    print(f"{stage} stage: {result.steps} steps, {result.epochs} epochs, best loss {result.best_val:.6g} "
          f"(epoch {result.best_epoch}); stopped: {result.stop_reason}")
    print(f"checkpoint: {Path(args.out) / f'{stage}_final.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from stavis.evaluate import evaluate_sources, mean_metrics
    from stavis.model import STAViS

    cfg = load_config(args.config)
    ckpt = load_checkpoint(args.ckpt)
    model = STAViS(cfg.model)
    load_into(model.params, ckpt.params)
    model.stage = ckpt.stage
    sources = _sources(cfg, _load_videos(args.manifest, args.data_root))
    out = Path(args.out)
    bs = cfg.train.batch_size
    visual = evaluate_sources(_VisualVariant(model), sources, bs, "visual", out, args.save_maps)
    av = evaluate_sources(model, sources, bs, "av", out, args.save_maps) if ckpt.stage == "av" else None
    series = out / "nss_series.csv"
    if series.exists():
        series.unlink()
    for i, rv in enumerate(visual):
        nss_av = av[i].per_frame["nss"] if av is not None else [math.nan] * rv.n_frames
        write_nss_series(series, rv.video_id, rv.per_frame["nss"], nss_av)
    for name, reps in (("visual", visual), ("av", av)):
        if reps is not None:
            means = mean_metrics(reps)
            print(name + ": " + " ".join(f"{k}={v:.4f}" for k, v in means.items()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from stavis.gradsuite import format_report, run_suite

    cfg = load_config(args.config) if args.config else RunConfig()
    rows = run_suite(cfg.gradcheck, only=args.only)
    print(format_report(rows))
    failed = [r.name for r in rows if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_make_splits(args) -> int:
    videos = _load_videos(args.manifest, args.data_root)
    fixed = {}
    for path in args.fixed or []:
        doc = SplitSpec.load(path)
        fixed.update(doc.fixed)
    spec = make_splits([v.key for v in videos], args.folds, args.seed, fixed or None, args.val_fraction)
    spec.validate([v.key for v in videos])
    spec.save(args.out)
    print(f"wrote {len(spec.folds)} folds to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    videos = synth_dataset(args.seed, args.videos, not args.no_audio_cue, n_frames=args.frames, size=args.size)
    path = write_dataset(videos, args.out)
    print(f"wrote {len(videos)} videos, manifest {path}")
    return EXIT_OK


def cmd_densify(args) -> int:
    out = Path(args.out)
    count = 0
    for v in _load_videos(args.manifest, args.data_root):
        sigma = args.sigma if args.sigma is not None else default_sigma(v.height, v.width)
        fix = v.fixations_by_frame()
        vdir = out / v.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        for f in range(v.n_frames):
            dense = densify_fixations(fixation_map(fix.get(f, []), v.height, v.width), sigma)
            if args.format == "raw":
                io.write_raw(vdir / f"{f:05d}.tensor", dense)
            else:
                io.write_pgm(vdir / f"{f:05d}.pgm", dense)
            count += 1
    print(f"wrote {count} dense maps under {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stavis", description="Audiovisual video saliency: training, evaluation and tooling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train the visual stage or the audiovisual stage")
    t.add_argument("--config", required=True, help="JSON config, or 'desk' / 'paper_shape'")
    t.add_argument("--stage", required=True, choices=["visual", "av", "audiovisual"])
    t.add_argument("--init", help="checkpoint to start from (required for the av stage)")
    t.add_argument("--manifest", nargs="*", help="manifest JSON file(s); default: data.manifests")
    t.add_argument("--data-root", help="base for relative paths (default: $STAVIS_DATA_ROOT)")
    t.add_argument("--out", required=True, help="directory for checkpoints and the training log")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="sliding-window evaluation of a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", nargs="+", required=True)
    e.add_argument("--data-root")
    e.add_argument("--out", required=True)
    e.add_argument("--save-maps", action="store_true", help="also write every predicted map as PGM")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    g.add_argument("--config", help="config whose gradcheck section sets seeds, h and tol")
    g.add_argument("--only", nargs="*", help="run only checks whose names start with these prefixes")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("make-splits", help="write a k-fold split specification")
    s.add_argument("--manifest", nargs="+", required=True)
    s.add_argument("--data-root")
    s.add_argument("--folds", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--fixed", nargs="*", help="split files whose fixed (per-dataset) splits are kept")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_splits)

    y = sub.add_parser("synth", help="write a synthetic two-blob audiovisual dataset")
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--videos", type=int, default=8)
    y.add_argument("--frames", type=int, default=90)
    y.add_argument("--size", type=int, default=64)
    y.add_argument("--no-audio-cue", action="store_true", help="make the tone uninformative")
    y.set_defaults(func=cmd_synth)

    d = sub.add_parser("densify", help="write dense ground-truth maps for every frame")
    d.add_argument("--manifest", nargs="+", required=True)
    d.add_argument("--data-root")
    d.add_argument("--out", required=True)
    d.add_argument("--sigma", type=float, help="Gaussian sigma in pixels (default 0.035 * max(H, W))")
    d.add_argument("--format", choices=["pgm", "raw"], default="pgm")
    d.set_defaults(func=cmd_densify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
