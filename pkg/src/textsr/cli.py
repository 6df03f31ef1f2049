"""Command-line entry point: ``textsr <subcommand> ...``.

Exit codes: 0 on success, 1 on a domain error (bad data, failed
evaluation), 2 on a usage error. Every run prints its fully resolved
configuration as one JSON line on stderr, prefixed with ``config: ``.
Set ``TEXTSR_CACHE_DIR`` to choose where pretrained network weights are
cached.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataset import ManifestError, TextLine, load_manifest, save_manifest, write_dataset
from .edge import CannyParams, canny, render_edges
from .imageops import load_png, save_png
from .metrics import BackendError, IdentityBackend, MetricReport, RandomConvBackend, TorchVisionBackend
from .report import FORMATS, per_line_csv, render_report

CACHE_ENV = "TEXTSR_CACHE_DIR"
log = logging.getLogger("textsr")


class UsageError(Exception):
    pass


def _echo(resolved):
    print("config: " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)


def _write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _canny_params(args):
    return CannyParams(args.sigma, args.low, args.high)


def _add_canny_flags(p):
    p.add_argument("--sigma", type=float, default=1.4, help="Gaussian pre-smoothing sigma")
    p.add_argument("--low", type=float, default=0.1, help="low hysteresis threshold (fraction of peak)")
    p.add_argument("--high", type=float, default=0.3, help="high hysteresis threshold (fraction of peak)")


# --- prep ---------------------------------------------------------------------


def _entry_items(manifest):
    for entry in manifest.entries:
        yield entry, manifest.load_pair(entry)


def cmd_prep_register(args):
    from .datapipe import apply_registration, register_pair, write_exceptions

    _echo({"command": "prep register", "manifest": args.manifest, "out_dir": args.out_dir,
           "max_residual": args.max_residual, "smooth": args.smooth})
    manifest = load_manifest(args.manifest)
    items, flagged = [], []
    for entry, pair in _entry_items(manifest):
        _, transform = register_pair(pair.lr, pair.hr, pair.scale, max_residual=args.max_residual, smooth=args.smooth)
        pair.lr = apply_registration(pair.lr, transform, pair.scale)
        pair.registration = transform
        if transform.flagged:
            flagged.append(entry.id)
        items.append((entry.id, pair, entry.lines))
    out = write_dataset(items, args.out_dir, manifest.split)
    write_exceptions(flagged, Path(args.out_dir) / "exceptions.txt")
    print(f"registered {len(items)} pairs ({len(flagged)} flagged) -> {out}")


def _shift_line(line, dy, dx, h, w):
    quad = tuple((x - dx, y - dy) for x, y in line.quad)
    if all(0 <= x <= w and 0 <= y <= h for x, y in quad):
        return TextLine(quad=quad, transcript=line.transcript, language=line.language)
    return None


def cmd_prep_crop(args):
    from .datapipe import central_crop_pair, central_crop_window

    _echo({"command": "prep crop", "manifest": args.manifest, "out_dir": args.out_dir, "fraction": args.fraction})
    manifest = load_manifest(args.manifest)
    items, dropped = [], 0
    for entry, pair in _entry_items(manifest):
        y0, x0, ch, cw = central_crop_window(pair, args.fraction)
        lines = [_shift_line(line, y0, x0, ch, cw) for line in entry.lines]
        dropped += sum(line is None for line in lines)
        items.append((entry.id, central_crop_pair(pair, args.fraction), [l for l in lines if l is not None]))
    out = write_dataset(items, args.out_dir, manifest.split)
    print(f"cropped {len(items)} pairs ({dropped} lines outside the crop dropped) -> {out}")


def cmd_prep_synth(args):
    from .datapipe import synth_degrade, synthetic_region

    _echo({"command": "prep synth", **{k: v for k, v in vars(args).items() if k != "func"}})
    rng = np.random.default_rng(args.seed)
    items = []
    if args.from_hr:
        paths = sorted(Path(args.from_hr).glob("*.png"))
        if not paths:
            raise ValueError(f"no PNG files in {args.from_hr}")
        for i, p in enumerate(paths):
            hr = load_png(p)
            h, w = (hr.shape[0] // args.scale) * args.scale, (hr.shape[1] // args.scale) * args.scale
            pair = synth_degrade(hr[:h, :w], args.scale, args.blur, args.noise, seed=args.seed * 100003 + i)
            items.append((p.stem, pair, []))
    else:
        for i in range(args.n):
            hr, lines = synthetic_region(args.hr_height, args.hr_width, rng, n_lines=args.lines)
            pair = synth_degrade(hr, args.scale, args.blur, args.noise, seed=args.seed * 100003 + i)
            items.append((f"synth{i:04d}", pair, lines))
    out = write_dataset(items, args.out_dir, args.split)
    print(f"wrote {len(items)} synthetic pairs -> {out}")


# --- edges --------------------------------------------------------------------


def cmd_edges(args):
    params = _canny_params(args)
    _echo({"command": "edges", "in": args.input, "out": args.out, "canny": vars(params), "inverted": args.inverted})
    src = Path(args.input)
    if src.is_dir():
        paths = sorted(src.glob("*.png"))
        if not paths:
            raise ValueError(f"no PNG files in {src}")
        outs = [Path(args.out) / p.name for p in paths]
    else:
        paths, outs = [src], [Path(args.out)]
    for p, o in zip(paths, outs):
        save_png(render_edges(canny(load_png(p), params), inverted=args.inverted), o)
    print(f"wrote {len(outs)} edge map(s)")


# --- train / infer ------------------------------------------------------------


def _train_overrides(args):
    return {
        "data.manifest": args.manifest,
        "train.max_steps": args.steps,
        "train.epochs": args.epochs,
        "train.seed": args.seed,
        "train.objective": args.objective,
        "train.step_size": args.step_size,
        "loss.alpha": args.alpha,
        "loss.beta": args.beta,
        "loss.extractor": args.extractor,
        "model.scale": args.scale,
    }


def _training_pairs(resolved):
    from .datapipe import glyph_dataset

    data = resolved["data"]
    if data["manifest"]:
        manifest = load_manifest(data["manifest"])
        return [manifest.load_pair(e) for e in manifest.entries]
    return glyph_dataset(
        data["synthetic_pairs"], resolved["model"]["scale"], hr_size=data["synthetic_hr_size"], seed=data["synthetic_seed"]
    )


def build_training(resolved):
    """(model, TrainConfig) described by a resolved configuration dict."""
    from .losses import LossWeights
    from .trainer import ToySRConfig, TrainConfig, build_toy_model

    canny_params = CannyParams(**resolved["canny"])
    model = build_toy_model(ToySRConfig(**resolved["model"]))
    model.canny_params = canny_params
    loss = resolved["loss"]
    tc = TrainConfig(
        weights=LossWeights(loss["alpha"], loss["beta"]),
        extractor=loss["extractor"],
        canny=canny_params,
        **resolved["train"],
    )
    return model, tc


def cmd_train(args):
    from .trainer import parameter_checksum, train

    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    resolved = cfgmod.resolve(cfgmod.read_config(args.config), _train_overrides(args))
    _echo(resolved)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(resolved, out / "config.json")
    model, tc = build_training(resolved)
    model, history = train(model, _training_pairs(resolved), tc, out)
    last = history[-1] if history else {}
    print(f"trained {len(history)} steps; final loss {last.get('total', float('nan')):.6f}; "
          f"checksum {parameter_checksum(model)[:16]} -> {out / 'final.npz'}")


def cmd_infer(args):
    from .trainer import infer, load_checkpoint

    _echo({"command": "infer", "ckpt": args.ckpt, "in": args.input, "out": args.out, "edge_out": args.edge_out})
    model = load_checkpoint(args.ckpt)
    hr, edge = infer(model, load_png(args.input))
    save_png(hr, args.out)
    if args.edge_out:
        if edge is None:
            raise ValueError("checkpoint has no edge head")
        save_png(edge, args.edge_out)
    print(f"wrote {args.out}")


# --- eval / score / report ----------------------------------------------------


def _lpips_backend(name):
    if name == "random":
        return RandomConvBackend()
    if name == "identity":
        return IdentityBackend()
    return TorchVisionBackend(name)


def _run_eval(args, model_spec):
    from .protocol import ProtocolConfig, evaluate, resolve_model, resolve_recognizer

    metrics = frozenset(args.metrics.split(",")) if args.metrics else None
    resolved = {
        "command": args.command,
        "manifest": args.manifest,
        "model": model_spec,
        "recognizer": args.recognizer,
        "mode": args.mode,
        "crop_mode": args.crop_mode,
        "line_height": args.line_height,
        "lpips": args.lpips,
        "metrics": sorted(metrics) if metrics else None,
        "jobs": args.jobs,
        "name": args.name,
    }
    _echo(resolved)
    manifest = load_manifest(args.manifest)
    scales = sorted({e.scale for e in manifest.entries}) or [2]
    if len(scales) > 1:
        raise ValueError(f"manifest mixes scales {scales}; evaluate each zooming mode separately")
    pc = ProtocolConfig(mode=args.mode, line_target_height=args.line_height, crop_mode=args.crop_mode,
                        lpips_backend=_lpips_backend(args.lpips))
    if metrics:
        pc.metrics = metrics
    model = resolve_model(model_spec, scales[0], args.mode, manifest)
    recognizer = resolve_recognizer(args.recognizer, manifest)
    report = evaluate(manifest, model, recognizer, pc, jobs=args.jobs, name=args.name or model_spec)
    d = report.to_dict()
    d["config"] = resolved
    _write_json(d, args.out)
    if args.per_line_csv:
        Path(args.per_line_csv).write_text(per_line_csv(report), encoding="utf-8")
    agg = d["aggregate"]
    print(f"{len(report.per_line)} lines, {len(report.failures)} failed entries: "
          + " ".join(f"{k}={agg[k]}" for k in agg) + f" -> {args.out}")


def cmd_eval(args):
    _run_eval(args, args.model)


def cmd_score(args):
    _run_eval(args, f"preds:{args.pred_dir}")


def cmd_report(args):
    _echo({"command": "report", "inputs": args.inputs, "format": args.format, "out": args.out})
    reports = []
    for path in args.inputs:
        with open(path, encoding="utf-8") as fh:
            reports.append(MetricReport.from_dict(json.load(fh)))
    print(f"wrote {render_report(reports, args.format, args.out)}")


# --- parser -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that prints the full synopsis on usage errors."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_eval_flags(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--recognizer", default="null", help="null | template | py:module:attr")
    p.add_argument("--mode", choices=("region", "line"), default="region")
    p.add_argument("--crop-mode", choices=("rectified", "axis-aligned"), default="rectified")
    p.add_argument("--line-height", type=int, default=32, help="recognizer input height in pixels")
    p.add_argument("--lpips", choices=("random", "identity", "alexnet", "vgg16"), default="random")
    p.add_argument("--metrics", default=None, help="comma-separated subset of psnr,ssim,lpips,acc,ned")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--name", default="")
    p.add_argument("--out", default="report.json")
    p.add_argument("--per-line-csv", default=None)


def build_parser():
    parser = _Parser(prog="textsr", description="Scene-text super-resolution toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    prep = sub.add_parser("prep", help="dataset preparation")
    psub = prep.add_subparsers(dest="prep_command", required=True, parser_class=_Parser)
    p = psub.add_parser("register", help="align LR to HR and color-correct every pair of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-residual", type=float, default=0.05)
    p.add_argument("--smooth", type=float, default=1.0)
    p.set_defaults(func=cmd_prep_register)
    p = psub.add_parser("crop", help="concentric central crop of every pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.set_defaults(func=cmd_prep_crop)
    p = psub.add_parser("synth", help="synthetic degraded pairs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--from-hr", default=None, help="directory of HR PNGs to degrade instead of generating regions")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--scale", type=int, choices=(2, 4), default=2)
    p.add_argument("--hr-height", type=int, default=96)
    p.add_argument("--hr-width", type=int, default=192)
    p.add_argument("--lines", type=int, default=2)
    p.add_argument("--blur", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_prep_synth)

    p = sub.add_parser("edges", help="Canny edge maps for an image or a directory of PNGs")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inverted", action="store_true", help="dark edges on white")
    _add_canny_flags(p)
    p.set_defaults(func=cmd_edges)

    p = sub.add_parser("train", help="train the toy SR model")
    p.add_argument("--config", required=True, help="sectioned key-value config file")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--manifest", default=None, help="training manifest (default: synthetic glyph pairs)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--objective", choices=("edge-aware", "l1"), default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--extractor", choices=("tiny", "identity", "vgg19"), default=None)
    p.add_argument("--scale", type=int, choices=(2, 4), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one image with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edge-out", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a model adapter on a manifest")
    p.add_argument("--model", default="bicubic", help="bicubic | gt | toy:CKPT | preds:DIR | py:module:attr")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score precomputed SR outputs named <entry id>.png")
    p.add_argument("--pred-dir", required=True)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="render one or more JSON reports")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--format", choices=FORMATS, default="table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


DOMAIN_ERRORS = (ValueError, KeyError, OSError, ManifestError, BackendError, RuntimeError, FloatingPointError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if os.environ.get(CACHE_ENV):
        os.environ.setdefault("TORCH_HOME", os.environ[CACHE_ENV])
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"textsr: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"textsr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
