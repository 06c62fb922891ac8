"""Command-line front end: ``oispec <subcommand> ...``.

Exit status is 0 on success, 2 when inputs or options are invalid and 3 when
a computation fails.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import _parallel
from .calibrate import FULL_SCALE
from .colorimetry import extract_region_spectrum
from .io import FrameReadError, ManifestError, MissingFrameError, load_mask_png, load_stack, save_png
from .pipeline import (
    BUILTIN_DICTIONARY,
    PROJECTIONS,
    ConfigError,
    PipelineConfig,
    StageError,
    _preview,
    log,
    run_calibrate,
    run_flatten,
    run_normals,
    run_pipeline,
    run_project,
    run_register,
    run_render,
    run_unmix,
)
from .project import project
from .simulate import SceneSpec, preset, simulate_to_dir
from .unmix import DictionaryError

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3
# bad inputs or options; DomainError, DimensionError and GeometryError are ValueErrors
_INVALID = (ValueError, ManifestError, FrameReadError, MissingFrameError, DictionaryError, OSError, KeyError)


def _pair(text):
    """``"x,y"`` to a float pair."""
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y, got {text!r}") from None
    return (x, y)


def _simulate(a):
    if (a.spec is None) == (a.preset is None):
        raise ConfigError("give exactly one of --spec or --preset")
    if a.spec:
        spec = SceneSpec.from_json(a.spec)
    else:
        spec = preset(a.preset, **({"size": a.size} if a.size else {}))
    path = simulate_to_dir(spec, a.seed, a.out)
    log(f"wrote {path}")


def _calibrate(a):
    log(f"wrote {run_calibrate(a.cube, a.out, a.white, a.darks, a.eps_den, a.white_mode, a.allow_missing)}")


def _register(a):
    log(f"wrote {run_register(a.cube, a.out, a.mode, a.landmarks, a.center)}")


def _normals(a):
    log(f"wrote {run_normals(a.cube, a.out, a.eps_alb, a.trim, a.channel)}")


def _flatten(a):
    log(f"wrote {run_flatten(a.cube, a.normals, a.out, a.eps_cos)}")


def _project(a):
    for kind, path in run_project(a.cube, a.out, a.kind, a.rank, flat=len(a.kind) == 1).items():
        log(f"{kind}: {path}")


def _unmix(a):
    log(f"wrote {run_unmix(a.cube, a.dictionary, a.out, a.k, a.nnls, a.norm, a.eps_res)}")


def _select_view(stack, angle):
    """(stack, angle index) for an azimuth in degrees or ``"min"``."""
    if angle == "min":
        return project(stack, "min"), 0
    try:
        beta = float(angle)
    except ValueError:
        raise ConfigError(f"--angle takes an azimuth in degrees or 'min', got {angle!r}") from None
    hits = [i for i, b in enumerate(stack.geometry.azimuths_deg) if abs(b - beta) < 1e-6]
    if not hits:
        raise ConfigError(f"no view at azimuth {beta:g}; have {list(stack.geometry.azimuths_deg)}")
    return stack, hits[0]


def _render(a):
    if a.projections:
        root = Path(a.projections)
        found = {k: root / k for k in PROJECTIONS if (root / k).is_dir()}
        if not found:
            raise ConfigError(f"no projection cubes under {root}")
        log(f"wrote {run_render(found, a.out, a.normals)}")
        return
    if not a.cube:
        raise ConfigError("give --stack or --projections")
    stack, index = _select_view(load_stack(a.cube), a.angle)
    kind = "diff" if stack.frame == "difference" else "rgb"
    save_png(a.out, _preview(stack, kind, index))
    log(f"wrote {a.out}")


def _region_mask(text, shape):
    """A mask PNG path, or a box ``x0,y0,x1,y1`` (end exclusive)."""
    if Path(text).is_file():
        return load_mask_png(text)
    try:
        x0, y0, x1, y1 = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--region must be a mask PNG or x0,y0,x1,y1, got {text!r}") from None
    region = np.zeros(shape, dtype=bool)
    region[y0:y1, x0:x1] = True
    return region


def _spectra(a):
    stack, index = _select_view(load_stack(a.cube), a.angle)
    region = _region_mask(a.region, (stack.height, stack.width))
    spec = extract_region_spectrum(stack, region, index)
    spec.to_csv(a.out)
    log(f"wrote {a.out} ({int(spec.n_pixels.min())} pixels)")


def _pipeline(a):
    doc = {}
    if a.config:
        doc = PipelineConfig.from_json(a.config).to_dict()
    for f in fields(PipelineConfig):
        v = getattr(a, f.name, None)
        if v is not None:
            doc[f.name] = v
    cfg = PipelineConfig.from_dict(doc)
    log(f"wrote {run_pipeline(cfg)}")


def _add_pipeline_overrides(p):
    p.add_argument("--input", help="raw cube directory or manifest")
    p.add_argument("--output", help="output directory")
    p.add_argument("--dict", "--dictionary", dest="dictionary", help=f"dictionary CSV/JSON or {BUILTIN_DICTIONARY}")
    p.add_argument("--k", "-k", type=int, dest="k")
    p.add_argument("--white")
    p.add_argument("--darks")
    p.add_argument("--eps-den", type=float)
    p.add_argument("--white-mode", choices=("resolved", "mean"))
    p.add_argument("--allow-missing", action="store_const", const=True)
    p.add_argument("--register-mode", choices=("auto", "landmarks"))
    p.add_argument("--landmarks")
    p.add_argument("--center", type=_pair, metavar="X,Y")
    p.add_argument("--eps-alb", type=float)
    p.add_argument("--trim", action="store_const", const=True)
    p.add_argument("--channel", choices=("luminance", "mean"))
    p.add_argument("--eps-cos", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--nnls", action="store_const", const=True)
    p.add_argument("--norm", choices=("max", "sum"))
    p.add_argument("--eps-res", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads (default: all cores)")

    parser = argparse.ArgumentParser(prog="oispec", description="Multi-angle spectral microscopy processing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render a synthetic raw cube with ground truth")
    p.add_argument("--spec", help="scene spec JSON")
    p.add_argument("--preset", help="named scene (flat-white, mockup4, mockup4-dense)")
    p.add_argument("--size", type=int, help="image side for presets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="raw counts to reflectance")
    p.add_argument("--stack", "--cube", dest="cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--white", help="cube holding the white references (default: --cube)")
    p.add_argument("--darks", help="cube holding the dark frames (default: --cube)")
    p.add_argument("--eps-den", type=float, default=1e-6 * FULL_SCALE)
    p.add_argument("--white-mode", choices=("resolved", "mean"), default="resolved")
    p.add_argument("--allow-missing", action="store_true")
    p.set_defaults(func=_calibrate)

    p = sub.add_parser("register", parents=[common], help="derotate and align all views to the first")
    p.add_argument("--stack", "--cube", dest="cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("auto", "landmarks"), default="auto")
    p.add_argument("--landmarks", help="JSON of landmark pairs per azimuth")
    p.add_argument("--center", type=_pair, metavar="X,Y", help="rotation center in pixels")
    p.set_defaults(func=_register)

    p = sub.add_parser("normals", parents=[common], help="photometric-stereo normal map")
    p.add_argument("--stack", "--cube", dest="cube", required=True)
    p.add_argument("--out", required=True, help="normals.bin path (PNG preview beside it) or a directory")
    p.add_argument("--eps-alb", type=float)
    p.add_argument("--trim", action="store_true", help="drop brightest and darkest light per pixel")
    p.add_argument("--channel", choices=("luminance", "mean"), default="luminance")
    p.set_defaults(func=_normals)

    p = sub.add_parser("flatten", parents=[common], help="divide out Lambertian shading")
    p.add_argument("--stack", "--cube", dest="cube", required=True)
    p.add_argument("--normals", required=True, help="normals.bin from the normals stage")
    p.add_argument("--out", required=True)
    p.add_argument("--eps-cos", type=float, default=0.05)
    p.set_defaults(func=_flatten)

    p = sub.add_parser("project", parents=[common], help="min/max/avg/diff over angles")
    p.add_argument("--stack", "--cube", dest="cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", nargs="+", choices=PROJECTIONS, default=list(PROJECTIONS),
                   help="one kind writes its cube into --out; several write one subdirectory each")
    p.add_argument("--rank", type=int, default=1, help="r-th smallest value for the minimum")
    p.set_defaults(func=_project)

    p = sub.add_parser("unmix", parents=[common], help="K-sparse abundance maps")
    p.add_argument("--stack", "--cube", dest="cube", required=True, help="single-angle cube, usually the min projection")
    p.add_argument("--dict", "--dictionary", dest="dictionary", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", "-k", type=int, dest="k", default=2)
    p.add_argument("--nnls", action="store_true", help="nonnegative refit on the selected support")
    p.add_argument("--norm", choices=("max", "sum"), default="max")
    p.add_argument("--eps-res", type=float, default=1e-8)
    p.set_defaults(func=_unmix)

    p = sub.add_parser("render", parents=[common], help="sRGB previews")
    p.add_argument("--stack", "--cube", dest="cube", help="cube to render to a single PNG")
    p.add_argument("--angle", default="0", help="azimuth in degrees, or 'min' for the minimum projection")
    p.add_argument("--projections", help="directory from the project stage")
    p.add_argument("--normals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_render)

    p = sub.add_parser("spectra", parents=[common], help="mean and sd spectrum of a region to CSV")
    p.add_argument("--stack", "--cube", dest="cube", required=True)
    p.add_argument("--region", required=True, help="mask PNG (nonzero = inside) or box x0,y0,x1,y1")
    p.add_argument("--angle", default="0", help="azimuth in degrees, or 'min' for the minimum projection")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_spectra)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage from a JSON config")
    p.add_argument("--config", help="pipeline config JSON; flags below override it")
    _add_pipeline_overrides(p)
    p.set_defaults(func=_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _parallel.set_threads(args.threads)
        args.func(args)
    except StageError as exc:
        log(f"error: {exc}")
        return EXIT_FAILED
    except _INVALID as exc:
        log(f"error: {exc}")
        return EXIT_INVALID
    except Exception as exc:
        log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
