"""File-to-file processing stages and the one-shot pipeline runner.

Every stage reads its inputs from disk and writes its outputs to its own
directory, so running the stages one at a time gives the same bytes as the
composed pipeline. Stage outputs are written to a temporary sibling and moved
into place only on success; a failing stage leaves earlier outputs alone.
"""
from __future__ import annotations

import hashlib
import json
import shutil
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import _parallel
from .calibrate import FULL_SCALE, average_darks, calibrate_stack
from .colorimetry import rgb_image, stack_to_xyz
from .core import DomainError, SpectralError
from .io import (
    MANIFEST,
    load_normals,
    load_references,
    load_stack,
    read_manifest,
    save_normals,
    save_png,
    save_stack,
)
from .pigments import pigment_dictionary
from .project import project
from .register import load_landmarks, register_stack, save_transforms
from .shape import flatten, stack_normals
from .unmix import SpectralDictionary, load_dictionary, unmix_stack

PROJECTIONS = ("min", "max", "avg", "diff")
STAGES = ("calibrate", "register", "normals", "flatten", "project", "render", "unmix")
BUILTIN_DICTIONARY = "builtin:pigments"


class ConfigError(DomainError):
    """Pipeline configuration is incomplete or inconsistent."""


class StageError(SpectralError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def resolve_dictionary(spec: str) -> SpectralDictionary:
    if spec == BUILTIN_DICTIONARY:
        return pigment_dictionary()
    return load_dictionary(spec)


class _Staging:
    """Write into ``<out>.partial`` and swap it in on success."""

    def __init__(self, out):
        self.out = Path(out)
        self.tmp = self.out.with_name(self.out.name + ".partial")

    def __enter__(self) -> Path:
        if self.tmp.exists():
            shutil.rmtree(self.tmp)
        self.tmp.mkdir(parents=True)
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.out.exists():
            shutil.rmtree(self.out)
        self.tmp.rename(self.out)
        return False


# -- stages -------------------------------------------------------------------

def run_calibrate(cube, out, white=None, darks=None, eps_den=1e-6 * FULL_SCALE, white_mode="resolved",
                  allow_missing=False) -> Path:
    """Raw cube -> reflectance cube. White and dark frames default to the cube's own references."""
    stack = load_stack(cube, allow_missing=allow_missing)
    white_planes = load_references(white or cube, "white")
    dark = average_darks(load_references(darks or cube, "dark"))
    refl = calibrate_stack(stack, white_planes, dark, eps_den, white_mode)
    with _Staging(out) as tmp:
        save_stack(refl, tmp)
    return Path(out) / MANIFEST


def run_register(cube, out, mode="auto", landmarks=None, center=None) -> Path:
    stack = load_stack(cube)
    marks = load_landmarks(landmarks) if landmarks else None
    reg, transforms = register_stack(stack, center=center, mode=mode, landmarks=marks)
    with _Staging(out) as tmp:
        save_stack(reg, tmp)
        save_transforms(transforms, tmp / "transforms.json")
    return Path(out) / MANIFEST


def run_normals(cube, out, eps_alb=None, trim=False, channel="luminance") -> Path:
    """Normal map plus RGB preview. ``out`` is a directory, or a ``.bin`` path with the PNG beside it."""
    stack = load_stack(cube)
    nm = stack_normals(stack, eps_alb=eps_alb, trim=trim, channel=channel)
    out = Path(out)
    if out.suffix == ".bin":
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_name(out.name + ".partial")
        save_normals(nm, tmp)
        save_png(out.with_suffix(".png"), nm.to_rgb())
        tmp.replace(out)
        return out
    with _Staging(out) as tmp:
        save_normals(nm, tmp / "normals.bin")
        save_png(tmp / "normals.png", nm.to_rgb())
    return out / "normals.bin"


def run_flatten(cube, normals, out, eps_cos=0.05) -> Path:
    stack = load_stack(cube)
    flat = flatten(stack, load_normals(normals), eps_cos)
    with _Staging(out) as tmp:
        save_stack(flat, tmp)
    return Path(out) / MANIFEST


def run_project(cube, out, kinds=PROJECTIONS, rank=1, flat=False) -> dict:
    """One cube subdirectory per projection kind; ``flat`` writes a single kind straight into ``out``."""
    stack = load_stack(cube)
    if flat and len(kinds) != 1:
        raise ConfigError("a flat projection output takes exactly one kind")
    with _Staging(out) as tmp:
        for kind in kinds:
            save_stack(project(stack, kind, rank), tmp if flat else tmp / kind)
    if flat:
        return {kinds[0]: Path(out) / MANIFEST}
    return {k: Path(out) / k / MANIFEST for k in kinds}


def _preview(stack, kind, angle_index=0):
    if kind == "diff":
        # scatter magnitude as grey, scaled to the brightest valid pixel
        y = stack_to_xyz(stack, angle_index)[0][1]
        top = y.max()
        return y / top if top > 0 else y
    return rgb_image(stack, angle_index)


def run_render(projections: dict, out, normals=None) -> Path:
    """sRGB previews of projection cubes (keyed by kind) and an optional normal map."""
    stacks = {k: load_stack(p) for k, p in projections.items()}
    nm = load_normals(normals) if normals else None
    with _Staging(out) as tmp:
        for kind, stack in stacks.items():
            save_png(tmp / f"{kind}.png", _preview(stack, kind))
        if nm is not None:
            save_png(tmp / "normals.png", nm.to_rgb())
    return Path(out)


def run_unmix(cube, dictionary, out, k=2, nnls=False, norm="max", eps_res=1e-8) -> Path:
    stack = load_stack(cube)
    d = dictionary if isinstance(dictionary, SpectralDictionary) else resolve_dictionary(dictionary)
    amap = unmix_stack(stack, d, k, nnls=nnls, norm=norm, eps_res=eps_res)
    with _Staging(out) as tmp:
        amap.save(tmp)
    return Path(out) / "abundances.json"


# -- configuration ------------------------------------------------------------

@dataclass
class PipelineConfig:
    input: str | None = None
    output: str | None = None
    dictionary: str | None = None
    k: int = 2
    white: str | None = None
    darks: str | None = None
    eps_den: float = 1e-6 * FULL_SCALE
    white_mode: str = "resolved"
    allow_missing: bool = False
    register_mode: str = "auto"
    landmarks: str | None = None
    center: list | None = None
    eps_alb: float | None = None
    trim: bool = False
    channel: str = "luminance"
    eps_cos: float = 0.05
    rank: int = 1
    nnls: bool = False
    norm: str = "max"
    eps_res: float = 1e-8
    threads: int | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)


def validate(cfg: PipelineConfig) -> SpectralDictionary:
    """Check everything that can be checked without computing; returns the dictionary."""
    for key in ("input", "output", "dictionary"):
        if not getattr(cfg, key):
            raise ConfigError(f"config lacks required field {key!r}")
    doc, _ = read_manifest(cfg.input)
    if doc["frame_kind"] != "raw":
        raise ConfigError(f"pipeline input must be a raw cube, got {doc['frame_kind']!r}")
    load_references(cfg.white or cfg.input, "white")
    load_references(cfg.darks or cfg.input, "dark")
    d = resolve_dictionary(cfg.dictionary)
    grid_wl = np.arange(doc["grid"]["count"]) * doc["grid"]["step_nm"] + doc["grid"]["start_nm"]
    d.resample(grid_wl)
    if not 1 <= cfg.k <= len(d):
        raise ConfigError(f"k must be in 1..{len(d)}, got {cfg.k}")
    if cfg.white_mode not in ("resolved", "mean"):
        raise ConfigError(f"unknown white mode {cfg.white_mode!r}")
    if cfg.register_mode not in ("auto", "landmarks"):
        raise ConfigError(f"unknown registration mode {cfg.register_mode!r}")
    if cfg.register_mode == "landmarks" and not cfg.landmarks:
        raise ConfigError("landmark registration needs a landmarks file")
    if cfg.landmarks and not Path(cfg.landmarks).is_file():
        raise ConfigError(f"landmarks file {cfg.landmarks} not found")
    if cfg.norm not in ("max", "sum"):
        raise ConfigError(f"unknown weight normalisation {cfg.norm!r}")
    if cfg.channel not in ("luminance", "mean"):
        raise ConfigError(f"unknown normals channel {cfg.channel!r}")
    if cfg.rank < 1:
        raise ConfigError("rank must be >= 1")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return d


def _checksums(path: Path) -> dict:
    files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
    base = path.parent if path.is_file() else path
    return {p.relative_to(base).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


def run_pipeline(cfg: PipelineConfig) -> Path:
    """Run every stage into ``cfg.output`` and write ``run_report.json``.

    The report's ``timings_s`` block is the only part that varies between
    identical runs.
    """
    d = validate(cfg)
    _parallel.set_threads(cfg.threads)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    dirs = {s: out / s for s in STAGES}
    center = tuple(cfg.center) if cfg.center is not None else None
    steps = [
        ("calibrate", lambda: run_calibrate(cfg.input, dirs["calibrate"], cfg.white, cfg.darks, cfg.eps_den,
                                            cfg.white_mode, cfg.allow_missing)),
        ("register", lambda: run_register(dirs["calibrate"], dirs["register"], cfg.register_mode,
                                          cfg.landmarks, center)),
        ("normals", lambda: run_normals(dirs["register"], dirs["normals"], cfg.eps_alb, cfg.trim, cfg.channel)),
        ("flatten", lambda: run_flatten(dirs["register"], dirs["normals"] / "normals.bin", dirs["flatten"],
                                        cfg.eps_cos)),
        ("project", lambda: run_project(dirs["flatten"], dirs["project"], PROJECTIONS, cfg.rank)),
        ("render", lambda: run_render({k: dirs["project"] / k for k in PROJECTIONS}, dirs["render"],
                                      dirs["normals"] / "normals.bin")),
        ("unmix", lambda: run_unmix(dirs["project"] / "min", d, dirs["unmix"], cfg.k, cfg.nnls, cfg.norm,
                                    cfg.eps_res)),
    ]
    timings, checksums = {}, {}
    for name, fn in steps:
        log(f"[{name}] running")
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise StageError(name, exc) from exc
        timings[name] = round(time.perf_counter() - t0, 3)
        checksums[name] = _checksums(dirs[name])
        log(f"[{name}] done in {timings[name]:.2f} s")
    report = {"parameters": cfg.to_dict(), "stages": list(STAGES), "checksums": checksums,
              "timings_s": timings}
    path = out / "run_report.json"
    path.write_text(json.dumps(report, indent=1, sort_keys=True))
    return path
