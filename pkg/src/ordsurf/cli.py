"""ordsurf command line: synth, train, predict, stitch, eval, report, thresholds, heatmap.

Every failure prints one line to stderr, ``ordsurf: error: <Kind>: <message>``,
and exits non-zero.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import figures
from .discretize import Midpoint, make_scheme
from .heatmap import diff_heatmap, height_heatmap, write_heatmap
from .inference import predict_image
from .metrics import evaluate
from .net import Checkpoint, NetConfig, parse_value
from .raster import PatchLayout, RasterGrid, load_image, load_raster, save_raster
from .stitch import stitch
from .synth import SceneConfig, generate_dataset, load_dataset
from .trainer import OptimConfig, load_train_config, train, write_epoch_log

log = logging.getLogger("ordsurf")


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.exit(2, f"ordsurf: error: UsageError: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p, cls):
    for f in fields(cls):
        p.add_argument(_flag(f.name), dest=f"cfg_{f.name}", default=None, metavar="VALUE",
                       help=f"override {cls.__name__}.{f.name}")


def _config_overrides(args, cls) -> dict[str, str]:
    return {f.name: getattr(args, f"cfg_{f.name}") for f in fields(cls)
            if getattr(args, f"cfg_{f.name}", None) is not None}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ordsurf", description="Single-image height estimation by ordinal regression")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic image/DSM dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=220)
    s.add_argument("--seed", type=int, default=0)
    for f in fields(SceneConfig):
        if f.name != "seed":
            s.add_argument(_flag(f.name), dest=f"scene_{f.name}", default=None, metavar="VALUE")

    t = sub.add_parser("train", help="train a network on a synthetic manifest")
    t.add_argument("--data", required=True, help="manifest.csv written by `synth`")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--config", help="key = value training config file")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--kind", choices=["sid", "ud"], default="sid")
    t.add_argument("--a", type=float, default=0.0)
    t.add_argument("--b", type=float, default=40.0)
    t.add_argument("--val-fraction", type=float, default=0.1)
    t.add_argument("--log", help="epoch log CSV (default: next to the checkpoint)")
    t.add_argument("--figures", help="directory for training-curve figures")
    _add_config_flags(t, NetConfig)
    _add_config_flags(t, OptimConfig)

    pr = sub.add_parser("predict", help="predict a stitched DSM for one image or a directory of images")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True, help="PPM file or directory of PPM files")
    pr.add_argument("--out", required=True, help="output directory")
    pr.add_argument("--patch", type=int, default=256)
    pr.add_argument("--overlap", type=int, default=2)
    pr.add_argument("--midpoint", choices=[m.value for m in Midpoint], default=Midpoint.GEOMETRIC.value)

    st = sub.add_parser("stitch", help="stitch per-patch HMAPs described by a layout CSV")
    st.add_argument("--layout", required=True)
    st.add_argument("--patches", required=True, help="directory holding patch_rRR_cCC.hmap files")
    st.add_argument("--out", required=True)
    st.add_argument("--shifts", help="per-patch shift report CSV")
    st.add_argument("--overlap", type=int, default=2)

    e = sub.add_parser("eval", help="compare a predicted DSM with a reference")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--epsilon", type=float, default=0.01)
    e.add_argument("--localize-truth", action="store_true",
                   help="subtract the reference minimum before comparing")
    e.add_argument("--json", help="write the report as JSON here")
    e.add_argument("--figure", help="write a reference/prediction/error PNG here")
    e.add_argument("--image", help="optional PPM shown in the figure")

    th = sub.add_parser("thresholds", help="print discretization thresholds and bin widths")
    th.add_argument("--kind", choices=["sid", "ud"], default="sid")
    th.add_argument("--a", type=float, default=0.0)
    th.add_argument("--b", type=float, default=40.0)
    th.add_argument("--k", type=int, default=64)
    th.add_argument("--plot", help="write a bin-width bar chart PNG here")

    rp = sub.add_parser("report", help="metrics table and comparison chart for several predictions")
    rp.add_argument("--truth", required=True)
    rp.add_argument("--pred", action="append", required=True, metavar="NAME=PATH",
                    help="named prediction raster; repeat for each model")
    rp.add_argument("--out", required=True, help="output directory")
    rp.add_argument("--epsilon", type=float, default=0.01)
    rp.add_argument("--localize-truth", action="store_true")

    h = sub.add_parser("heatmap", help="render an HMAP raster as a colour PPM")
    h.add_argument("input")
    h.add_argument("--out", required=True)
    h.add_argument("--min", default="auto")
    h.add_argument("--max", default="auto")
    h.add_argument("--diff", metavar="TRUTH", help="render input - TRUTH with the signed ramp")

    for sp in sub.choices.values():
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress (per-epoch training lines)")
    return p


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"no such file: {path}")
    return path


def cmd_synth(args):
    base = SceneConfig()
    overrides = {f.name: parse_value(getattr(args, f"scene_{f.name}"), getattr(base, f.name))
                 for f in fields(SceneConfig)
                 if f.name != "seed" and getattr(args, f"scene_{f.name}") is not None}
    if args.n < 0:
        raise CLIError("--n must be >= 0")
    config = SceneConfig(**{**{f.name: getattr(base, f.name) for f in fields(SceneConfig)},
                            **overrides, "seed": args.seed})
    manifest = generate_dataset(config, args.n, args.out)
    print(manifest)


def split_train_val(pairs, val_fraction: float):
    n_val = int(round(len(pairs) * val_fraction))
    if n_val >= len(pairs):
        n_val = len(pairs) - 1
    return (pairs[:len(pairs) - n_val], pairs[len(pairs) - n_val:]) if n_val > 0 else (pairs, [])


def resolve_train_config(args) -> tuple[NetConfig, OptimConfig]:
    """Defaults, then the config file, then flags."""
    text = Path(_require_file(args.config)).read_text("utf-8") if args.config else ""
    flag_lines = [f"{k} = {v}" for cls in (NetConfig, OptimConfig) for k, v in _config_overrides(args, cls).items()]
    merged = text + "\n" + "\n".join(flag_lines)
    net, optim = load_train_config(merged)
    return net, optim


def cmd_train(args):
    manifest = _require_file(args.data)
    net, optim = resolve_train_config(args)
    scheme = make_scheme(args.kind, args.a, args.b, net.K)
    pairs = load_dataset(manifest)
    if not pairs:
        raise CLIError(f"dataset {manifest} is empty")
    train_pairs, val_pairs = split_train_val(pairs, args.val_fraction)
    result = train(train_pairs, net, optim, scheme, seed=args.seed, val_pairs=val_pairs or None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.checkpoint.save(out)
    log_path = Path(args.log) if args.log else out.with_suffix(".epochs.csv")
    write_epoch_log(result.history, log_path)
    if args.figures:
        Path(args.figures).mkdir(parents=True, exist_ok=True)
        figures.training_curves(Path(args.figures) / "training_curves.png", result.history)
    print(f"checkpoint {out}")
    print(f"epoch log {log_path}")


def _predict_one(model, scheme, image_path: Path, out_dir: Path, args):
    image = load_image(image_path)
    pred = predict_image(model, scheme, image, args.patch, args.overlap, midpoint=args.midpoint)
    out_dir.mkdir(parents=True, exist_ok=True)
    for (r, c, *_), patch in zip(pred.layout.rects, pred.patches):
        save_raster(patch, out_dir / f"patch_r{r:02d}_c{c:02d}.hmap")
    pred.layout.to_csv(out_dir / "layout.csv")
    pred.result.write_shift_report(pred.layout, out_dir / "shifts.csv")
    save_raster(pred.result.raster, out_dir / "stitched.hmap")
    print(f"{image_path} -> {out_dir / 'stitched.hmap'} ({pred.layout.rows}x{pred.layout.cols} patches)")


def cmd_predict(args):
    ckpt = Checkpoint.load(_require_file(args.checkpoint))
    if args.patch % 8:
        raise CLIError(f"--patch must be a multiple of 8 for this network, got {args.patch}")
    model = ckpt.build_model()
    src, out = Path(args.image), Path(args.out)
    if src.is_dir():
        images = sorted(src.glob("*.ppm"))
        if not images:
            raise CLIError(f"no .ppm files in {src}")
        for path in images:
            _predict_one(model, ckpt.scheme, path, out / path.stem, args)
    else:
        _predict_one(model, ckpt.scheme, _require_file(src), out, args)


def cmd_stitch(args):
    layout = PatchLayout.from_csv(_require_file(args.layout), overlap=args.overlap)
    patch_dir = Path(args.patches)
    patches = []
    for r, c, *_ in layout.rects:
        patches.append(load_raster(_require_file(patch_dir / f"patch_r{r:02d}_c{c:02d}.hmap")))
    result = stitch(patches, layout)
    save_raster(result.raster, args.out)
    if args.shifts:
        result.write_shift_report(layout, args.shifts)
    print(args.out)


def cmd_eval(args):
    pred = load_raster(_require_file(args.pred))
    truth = load_raster(_require_file(args.truth))
    if args.localize_truth:
        truth = RasterGrid(truth.data - np.nanmin(truth.data))
    report = evaluate(pred, truth, args.epsilon)
    print(report.table())
    print(report.to_json())
    if args.json:
        Path(args.json).write_text(report.to_json(indent=2) + "\n")
    if args.figure:
        image = load_image(_require_file(args.image)).data if args.image else None
        figures.prediction_panels(args.figure, truth.data, pred.data, image)


def cmd_thresholds(args):
    scheme = make_scheme(args.kind, args.a, args.b, args.k)
    edges = scheme.bin_edges_m()
    print("i,threshold,height_m,bin_width_m")
    for i, t in enumerate(scheme.thresholds):
        width = f"{edges[i + 1] - edges[i]:.6f}" if i < scheme.K else ""
        print(f"{i},{t:.6f},{edges[i]:.6f},{width}")
    if args.plot:
        figures.threshold_bins(args.plot, scheme)


def cmd_report(args):
    truth = load_raster(_require_file(args.truth))
    if args.localize_truth:
        truth = RasterGrid(truth.data - np.nanmin(truth.data))
    reports = {}
    for item in args.pred:
        name, sep, path = item.partition("=")
        if not sep or not name:
            raise CLIError(f"--pred expects NAME=PATH, got {item!r}")
        reports[name] = evaluate(load_raster(_require_file(path)), truth, args.epsilon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, report in reports.items():
        print(f"[{name}]")
        print(report.table())
        (out / f"{name}.json").write_text(report.to_json(indent=2) + "\n")
    figures.ablation_bars(out / "comparison.png", reports)
    print(out / "comparison.png")


def _limit(raw: str, fallback: float) -> float:
    return fallback if raw == "auto" else float(raw)


def cmd_heatmap(args):
    grid = load_raster(_require_file(args.input))
    if args.diff:
        truth = load_raster(_require_file(args.diff))
        limit = None if args.max == "auto" else abs(float(args.max))
        rgb = diff_heatmap(grid, truth, limit)
    else:
        vmin = _limit(args.min, float(np.nanmin(grid.data)))
        vmax = _limit(args.max, float(np.nanmax(grid.data)))
        rgb = height_heatmap(grid, vmin, vmax)
    write_heatmap(rgb, args.out)
    print(args.out)


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "stitch": cmd_stitch,
    "eval": cmd_eval, "thresholds": cmd_thresholds, "heatmap": cmd_heatmap,
    "report": cmd_report,
}


def _thread_limit():
    raw = os.environ.get("ORDSURF_THREADS")
    if not raw:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(raw)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            COMMANDS[args.command](args)
    except (CLIError, ValueError, OSError, RuntimeError) as exc:
        kind = type(exc).__name__
        msg = " ".join(str(exc).split())
        print(f"ordsurf: error: {kind}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
