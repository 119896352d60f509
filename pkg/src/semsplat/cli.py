"""Command-line entry point: ``semsplat {fuse,render,eval,sparsify,synth}``.

Exit codes: 0 success, 1 I/O, 2 file format, 3 dimension/contract, 4 bad flags.

A ``--config`` file holds flat ``key = value`` lines (TOML syntax: strings
quoted, numbers bare, ``#`` comments). Keys are the :class:`RunConfig`
field names; command-line flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .errors import DimensionError, FormatError, SemsplatError
from .prob_render import image_uncertainty, pixel_confidence_heuristic, rasterize_semantics
from .scene_io import (
    IGNORE,
    load_cameras,
    load_gaussian_ply,
    load_label_image,
    load_mask,
    load_rgb_image,
    load_semantic_state,
    save_label_image,
    save_rgb_png,
    save_semantic_state,
    write_pfm,
)
from .semantic_fusion import DEFAULT_BACKGROUND, DEFAULT_PRIOR, fuse_dataset, init_state
from .splat_raster import TILE_SIZE, pixel_contributions, render_color
from .synthetic import PALETTE, generate_scene, write_scene_dir

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("semsplat")

EXIT_IO, EXIT_FORMAT, EXIT_DIMENSION, EXIT_FLAGS = 1, 2, 3, 4


@dataclass
class RunConfig:
    num_classes: int | None = None
    prior_value: float = DEFAULT_PRIOR
    background_value: float = DEFAULT_BACKGROUND
    sparsification_bins: int = ev.DEFAULT_BINS
    tile_size: int = TILE_SIZE
    thread_count: int = 0
    scene: str | None = None
    cameras: str | None = None
    gt_cameras: str | None = None
    state: str | None = None
    output: str | None = None

    def validate(self):
        if self.num_classes is not None and self.num_classes < 2:
            raise BadFlags("num_classes must be >= 2")
        if not self.prior_value > 0 or not self.background_value > 0:
            raise BadFlags("prior_value and background_value must be positive")
        if self.sparsification_bins < 1:
            raise BadFlags("sparsification_bins must be >= 1")
        if self.tile_size < 1:
            raise BadFlags("tile_size must be >= 1")
        if self.thread_count < 0:
            raise BadFlags("thread_count must be >= 0")
        return self


class BadFlags(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FLAGS, f"{self.prog}: error: {message}\n")


# flag dest -> RunConfig field
_CONFIG_FLAGS = {
    "num_classes": "num_classes", "prior": "prior_value", "background": "background_value",
    "bins": "sparsification_bins", "tile_size": "tile_size", "threads": "thread_count",
    "scene": "scene", "cameras": "cameras", "gt_cameras": "gt_cameras", "state": "state",
    "out": "output",
}


def load_config(path) -> dict:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise BadFlags(f"config {path}: {e}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise BadFlags(f"config {path}: unknown keys {sorted(unknown)}")
    return data


def resolve_config(args) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for dest, name in _CONFIG_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values).validate()


def _require(cfg: RunConfig, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise BadFlags("missing required setting(s): " + ", ".join(missing))


def _raster_kw(cfg: RunConfig) -> dict:
    return {"tile_size": cfg.tile_size, "threads": cfg.thread_count}


def _select_views(cams, args):
    if args.views is not None:
        cams = [cams[i] for i in _parse_indices(args.views, len(cams))]
    return cams


def _parse_indices(spec: str, count: int) -> list[int]:
    """``"3"``, ``"0:10"``, ``"1,4,7"`` or combinations; ranges are half-open."""
    out = []
    try:
        for part in spec.split(","):
            if ":" in part:
                lo, hi = part.split(":")
                out.extend(range(int(lo or 0), int(hi) if hi else count))
            elif part:
                out.append(int(part))
    except ValueError:
        raise BadFlags(f"bad view selection {spec!r}") from None
    if any(not 0 <= i < count for i in out):
        raise BadFlags(f"view selection {spec!r} out of range for {count} views")
    return out


def _parse_rgb(text: str):
    try:
        rgb = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise BadFlags(f"bad color {text!r}") from None
    if len(rgb) != 3:
        raise BadFlags("background color needs three components")
    return rgb


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fuse(args) -> int:
    cfg = resolve_config(args)
    _require(cfg, "scene", "cameras", "num_classes", "output")
    cloud = load_gaussian_ply(cfg.scene)
    cams = _select_views(load_cameras(cfg.cameras), args)
    if args.train_fraction is not None:
        cams = cams[:int(round(len(cams) * args.train_fraction))]
    state = init_state(len(cloud), cfg.num_classes, cfg.prior_value, cfg.background_value)
    if not cams:
        log.warning("no views to fuse; writing the prior state unchanged")
    views = []
    for i, cam in enumerate(cams):
        if cam.label_path is None:
            raise FormatError(f"camera {i} has no label_path")
        views.append((cam, load_label_image(cam.label_path, cfg.num_classes)))

    def progress(i, mass):
        print(f"view {i + 1}/{len(views)}: +{mass:.6f} mass", flush=True)

    state = fuse_dataset(state, cloud, views, progress=progress, **_raster_kw(cfg))
    save_semantic_state(state, cfg.output)
    added = float(state.concentrations.sum() - len(cloud) * cfg.num_classes * cfg.prior_value)
    print(f"fused {len(views)} views into {len(cloud)} gaussians; accumulated mass {added:.6f}")
    return 0


def _write_channels(out: Path, name: str, maps: np.ndarray, layout: str):
    if layout == "interleaved":
        h, w, c = maps.shape
        write_pfm(out / f"{name}.pfm", maps.reshape(h, w * c))
    else:
        for k in range(maps.shape[2]):
            write_pfm(out / f"{name}_c{k:02d}.pfm", maps[:, :, k])


def cmd_render(args) -> int:
    cfg = resolve_config(args)
    _require(cfg, "scene", "cameras", "state", "output")
    cloud = load_gaussian_ply(cfg.scene)
    cams = load_cameras(cfg.cameras)
    if not 0 <= args.view < len(cams):
        raise BadFlags(f"view {args.view} out of range for {len(cams)} cameras")
    cam = cams[args.view]
    state = load_semantic_state(cfg.state)
    if cfg.num_classes is not None and cfg.num_classes != state.num_classes:
        raise DimensionError(f"state has {state.num_classes} classes, expected {cfg.num_classes}")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)

    contrib = pixel_contributions(cloud, cam, **_raster_kw(cfg))
    maps = rasterize_semantics(state, cloud, cam, contributions=contrib)
    confidence = pixel_confidence_heuristic(state, cloud, cam, contributions=contrib)
    unc = image_uncertainty(maps)

    save_label_image(maps.argmax_category.astype(np.uint8), out / "segmentation.png")
    save_rgb_png(PALETTE[maps.argmax_category % len(PALETTE)] / 255.0, out / "segmentation_color.png")
    _write_channels(out, "expectation", maps.expectation, args.pfm_layout)
    _write_channels(out, "variance", maps.variance, args.pfm_layout)
    write_pfm(out / "top_expectation.pfm", maps.top_expectation)
    write_pfm(out / "top_variance.pfm", maps.top_variance)
    write_pfm(out / "confidence.pfm", confidence)
    write_pfm(out / "background_weight.pfm", maps.background_weight)
    if args.color:
        save_rgb_png(render_color(cloud, cam, _parse_rgb(args.background_color), contributions=contrib),
                     out / "color.png")
    summary = {"view": args.view, "u_var": unc.u_var, "u_exp": unc.u_exp}
    (out / "uncertainty.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"u_var {unc.u_var:.9g}")
    print(f"u_exp {unc.u_exp:.9g}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _require(cfg, "num_classes")
    if len(args.pred) != len(args.gt):
        raise BadFlags("--pred and --gt must be given the same number of times")
    if args.mask and len(args.mask) != len(args.pred):
        raise BadFlags("--mask must be given once per --pred")
    cm = ev.ConfusionMatrix(np.zeros((cfg.num_classes,) * 2, dtype=np.int64))
    unpredicted = 0
    for k, (p, g) in enumerate(zip(args.pred, args.gt)):
        pred = load_label_image(p, cfg.num_classes).category_ids
        gt = load_label_image(g, cfg.num_classes)
        mask = None
        if args.mask:
            mask = load_mask(args.mask[k])
        gt.check_shape(pred.shape)
        unpredicted += int(((pred == IGNORE) & gt.valid & (True if mask is None else mask)).sum())
        cm = cm + ev.confusion(pred, gt, cfg.num_classes, mask)
    psnr_db = None
    if args.image or args.reference:
        if len(args.image) != len(args.reference):
            raise BadFlags("--image and --reference must be paired")
        values = [ev.psnr(load_rgb_image(a), load_rgb_image(b)) for a, b in zip(args.image, args.reference)]
        psnr_db = float(np.mean(values))
    report = ev.metrics_report(cm, psnr_db)
    report["evaluated_pixels"] = cm.total
    report["unpredicted_pixels"] = unpredicted
    if cfg.output:
        ev.write_report(cfg.output, report)
    print(f"mIoU {report['miou']:.4f}  accuracy {report['accuracy']:.4f}"
          + ("" if psnr_db is None else f"  PSNR {psnr_db:.4f}"))
    return 0


def cmd_sparsify(args) -> int:
    cfg = resolve_config(args)
    _require(cfg, "scene", "cameras", "state", "output")
    cloud = load_gaussian_ply(cfg.scene)
    cams = load_cameras(cfg.cameras)
    indices = _parse_indices(args.views, len(cams)) if args.views else list(range(len(cams)))
    state = load_semantic_state(cfg.state)
    orderings = args.ordering or (
        ["by-variance", "by-expectation", "by-heuristic", "oracle", "random"] if args.level == "pixel"
        else ["by-variance", "by-expectation", "oracle", "random"])
    curves = []
    if args.level == "pixel":
        gt_cams = load_cameras(cfg.gt_cameras or cfg.cameras)
        if len(gt_cams) != len(cams):
            raise DimensionError("ground-truth cameras file lists a different number of views")
        unc = {"by-variance": [], "by-expectation": [], "by-heuristic": []}
        errors = []
        for i in indices:
            cam = cams[i]
            if gt_cams[i].label_path is None:
                raise FormatError(f"camera {i} has no label_path for ground truth")
            gt = load_label_image(gt_cams[i].label_path, state.num_classes)
            gt.check_matches(cam)
            contrib = pixel_contributions(cloud, cam, **_raster_kw(cfg))
            maps = rasterize_semantics(state, cloud, cam, contributions=contrib)
            conf = pixel_confidence_heuristic(state, cloud, cam, contributions=contrib)
            keep = gt.valid
            unc["by-variance"].append(maps.top_variance[keep])
            unc["by-expectation"].append(1.0 - maps.top_expectation[keep])
            unc["by-heuristic"].append(-conf[keep])
            errors.append(maps.argmax_category[keep] != gt.category_ids[keep])
        errors = np.concatenate(errors)
        for o in orderings:
            u = np.concatenate(unc[o]) if o in unc else None
            curves.append(ev.sparsify_pixels(u, errors, cfg.sparsification_bins, o,
                                             seed=args.seed, repeats=args.repeats))
    else:
        u = {"by-variance": [], "by-expectation": [], "by-heuristic": []}
        psnrs = []
        for i in indices:
            cam = cams[i]
            if cam.image_path is None:
                raise FormatError(f"camera {i} has no image_path for PSNR")
            contrib = pixel_contributions(cloud, cam, **_raster_kw(cfg))
            reference = load_rgb_image(cam.image_path)
            rendered = render_color(cloud, cam, _parse_rgb(args.background_color), contributions=contrib)
            if reference.shape != rendered.shape:
                raise DimensionError(f"camera {i}: reference image size differs from camera")
            psnrs.append(ev.psnr(rendered, reference))
            unc_i = image_uncertainty(rasterize_semantics(state, cloud, cam, contributions=contrib))
            u["by-variance"].append(unc_i.u_var)
            u["by-expectation"].append(unc_i.u_exp)
            u["by-heuristic"].append(-float(np.mean(
                pixel_confidence_heuristic(state, cloud, cam, contributions=contrib))))
        for o in orderings:
            curves.append(ev.sparsify_images(u.get(o), psnrs, cfg.sparsification_bins, o,
                                             seed=args.seed, repeats=args.repeats))
    ev.write_curves_csv(cfg.output, curves)
    for c in curves:
        print(f"{c.ordering}: area {c.area:.6f}")
    return 0


def cmd_synth(args) -> int:
    if not 0.0 <= args.noise < 1.0:
        raise BadFlags("--noise must lie in [0, 1)")
    scene = generate_scene(args.seed, args.num_gaussians, args.num_classes, args.extent,
                           args.num_views, args.width, args.height)
    write_scene_dir(scene, args.out, args.noise, args.label_seed, _parse_rgb(args.background_color))
    print(f"wrote {len(scene.cloud)} gaussians and {len(scene.cameras)} views to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semsplat", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *, scene=True, state=False):
        sp.add_argument("--config", help="TOML key = value file; flags override it")
        if scene:
            sp.add_argument("--scene", help="splat PLY")
            sp.add_argument("--cameras", help="cameras JSON")
            sp.add_argument("--tile-size", type=int)
            sp.add_argument("--threads", type=int, help="worker threads, 0 = all cores")
        if state:
            sp.add_argument("--state", help="CSSD semantic state")
        sp.add_argument("--num-classes", type=int)
        sp.add_argument("--out", help="output path")

    f = sub.add_parser("fuse", help="fold labelled views into per-gaussian Dirichlet beliefs")
    common(f)
    f.add_argument("--prior", type=float, help="Dirichlet prior per category (default 0.001)")
    f.add_argument("--background", type=float, help="background concentration per category")
    f.add_argument("--views", help="view selection, e.g. 0:10 or 1,3,5")
    f.add_argument("--train-fraction", type=float, help="fuse only the first fraction of the views")
    f.set_defaults(func=cmd_fuse)

    r = sub.add_parser("render", help="render segmentation and uncertainty maps for one view")
    common(r, state=True)
    r.add_argument("--view", type=int, default=0)
    r.add_argument("--color", action="store_true", help="also write color.png")
    r.add_argument("--background-color", default="0,0,0")
    r.add_argument("--pfm-layout", choices=("per-channel", "interleaved"), default="per-channel")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="mIoU / accuracy / PSNR report")
    common(e, scene=False)
    e.add_argument("--pred", action="append", default=[], help="predicted label PNG (repeatable)")
    e.add_argument("--gt", action="append", default=[], help="ground-truth label PNG (repeatable)")
    e.add_argument("--mask", action="append", default=[], help="evaluation mask PNG, nonzero = keep")
    e.add_argument("--image", action="append", default=[], help="rendered RGB PNG (repeatable)")
    e.add_argument("--reference", action="append", default=[], help="reference RGB PNG (repeatable)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sparsify", help="sparsification curves as CSV")
    common(s, state=True)
    s.add_argument("--gt-cameras", help="cameras JSON whose label_path entries are ground truth")
    s.add_argument("--level", choices=("pixel", "image"), default="pixel")
    s.add_argument("--ordering", action="append", choices=ev.ORDERINGS)
    s.add_argument("--bins", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repeats", type=int, default=1, help="random permutations averaged")
    s.add_argument("--views", help="view selection, e.g. 10:30")
    s.add_argument("--background-color", default="0,0,0")
    s.set_defaults(func=cmd_sparsify)

    y = sub.add_parser("synth", help="write a synthetic scene directory")
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--num-gaussians", type=int, default=50)
    y.add_argument("--num-classes", type=int, default=5)
    y.add_argument("--num-views", type=int, default=20)
    y.add_argument("--width", type=int, default=64)
    y.add_argument("--height", type=int, default=64)
    y.add_argument("--extent", type=float, default=1.0)
    y.add_argument("--noise", type=float, default=0.0, help="symmetric label noise rate")
    y.add_argument("--label-seed", type=int, default=0)
    y.add_argument("--background-color", default="0,0,0")
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except BadFlags as e:
        print(f"semsplat: error: {e}", file=sys.stderr)
        return EXIT_FLAGS
    except SemsplatError as e:
        print(f"semsplat: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"semsplat: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
