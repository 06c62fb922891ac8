"""On-disk data-cube container.

One directory per acquisition, described by ``manifest.json``::

    {"width": W, "height": H,
     "grid": {"start_nm": ..., "step_nm": ..., "count": ...},
     "geometry": {"polar_deg": ..., "azimuths_deg": [...]},
     "frame_kind": "raw" | "reflectance" | ...,
     "center": [x, y],                       # optional rotation center
     "files": [{"azimuth_deg": b, "wavelength_nm": l, "path": "...",
                "mask": "..."}],             # mask optional, uint8
     "references": {"white": [{"wavelength_nm": l, "path": ...}],
                    "dark": [{"path": ...}]}}

Raw frames are 16-bit binary PGM (P5, maxval 65535, big-endian). All other
frames are headerless little-endian float32 with dimensions from the manifest.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .core import (
    DimensionError,
    DomainError,
    IlluminationGeometry,
    ImagePlane,
    SpectralError,
    SpectralStack,
    WavelengthGrid,
)

MANIFEST = "manifest.json"

_PGM_HEADER = re.compile(
    rb"^P5\s(?:\s*#.*[\r\n])*\s*(\d+)\s(?:\s*#.*[\r\n])*\s*(\d+)\s(?:\s*#.*[\r\n])*\s*(\d+)\s"
)


class ManifestError(SpectralError):
    """The manifest is missing, not JSON, or lacks required fields."""


class FrameReadError(SpectralError):
    """A frame file referenced by the manifest cannot be read or decoded."""


class MissingFrameError(SpectralError):
    """The manifest does not list a frame for some (azimuth, wavelength)."""

    def __init__(self, missing):
        self.missing = list(missing)
        listed = ", ".join(f"(beta={b:g}, lambda={w:g})" for b, w in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" and {len(self.missing) - 10} more"
        super().__init__(f"missing frames: {listed}{more}")


# -- frames -------------------------------------------------------------------

def write_pgm(path, values) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DimensionError("PGM frames must be 2-D")
    if np.any(arr < 0) or np.any(arr > 65535) or np.any(arr != np.round(arr)):
        raise DomainError("raw frames must hold integers in [0, 65535]")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(arr.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FrameReadError(f"cannot read {path}: {exc}") from exc
    m = _PGM_HEADER.match(buf)
    if m is None:
        raise FrameReadError(f"not a binary PGM file: {path}")
    w, h, maxval = (int(g) for g in m.groups())
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h
    if len(buf) - m.end() < n * np.dtype(dtype).itemsize:
        raise FrameReadError(f"truncated PGM data in {path}")
    return np.frombuffer(buf, dtype=dtype, count=n, offset=m.end()).reshape(h, w)


def write_f32(path, values) -> None:
    np.ascontiguousarray(values, dtype="<f4").tofile(path)


def read_f32(path, height: int, width: int) -> np.ndarray:
    try:
        data = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise FrameReadError(f"cannot read {path}: {exc}") from exc
    if data.size != height * width:
        raise DimensionError(f"{path} holds {data.size} samples, expected {height}x{width}")
    return data.reshape(height, width)


def _write_mask(path, valid) -> None:
    np.ascontiguousarray(valid, dtype=np.uint8).tofile(path)


def _read_mask(path, height, width) -> np.ndarray:
    try:
        data = np.fromfile(path, dtype=np.uint8)
    except OSError as exc:
        raise FrameReadError(f"cannot read mask {path}: {exc}") from exc
    if data.size != height * width:
        raise DimensionError(f"mask {path} has {data.size} entries, expected {height}x{width}")
    return data.reshape(height, width).astype(bool)


def _read_frame(path: Path, raw: bool, height: int, width: int) -> np.ndarray:
    if not path.exists():
        raise FrameReadError(f"frame file does not exist: {path}")
    if raw:
        arr = read_pgm(path)
        if arr.shape != (height, width):
            raise DimensionError(f"{path} is {arr.shape[1]}x{arr.shape[0]}, manifest says {width}x{height}")
        return arr.astype(np.float32)
    return read_f32(path, height, width)


# -- manifest -----------------------------------------------------------------

def read_manifest(path) -> tuple[dict, Path]:
    """Return the parsed manifest and its directory; ``path`` may be either."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"manifest {path} must be a JSON object")
    for key in ("width", "height", "grid", "geometry", "frame_kind", "files"):
        if key not in doc:
            raise ManifestError(f"manifest {path} lacks required field {key!r}")
    return doc, path.parent


def _grid_geometry(doc) -> tuple[WavelengthGrid, IlluminationGeometry]:
    try:
        grid = WavelengthGrid(**{k: doc["grid"][k] for k in ("start_nm", "step_nm", "count")})
        geometry = IlluminationGeometry(doc["geometry"]["polar_deg"], tuple(doc["geometry"]["azimuths_deg"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed grid/geometry: {exc}") from exc
    return grid, geometry


def load_stack(manifest_path, allow_missing: bool = False) -> SpectralStack:
    """Load the sample frames of a data cube.

    Frames absent from the manifest raise :class:`MissingFrameError` unless
    ``allow_missing`` is set, in which case those planes are masked invalid.
    """
    doc, root = read_manifest(manifest_path)
    grid, geometry = _grid_geometry(doc)
    try:
        width, height = int(doc["width"]), int(doc["height"])
        kind = str(doc["frame_kind"])
        entries = list(doc["files"])
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest fields: {exc}") from exc
    raw = kind == "raw"

    values = np.zeros((geometry.n_angles, grid.count, height, width), dtype=np.float32)
    valid = np.zeros(values.shape, dtype=bool)
    seen = np.zeros(values.shape[:2], dtype=bool)
    az_index = {b: i for i, b in enumerate(geometry.azimuths_deg)}
    for e in entries:
        try:
            b, wl, rel = float(e["azimuth_deg"]), float(e["wavelength_nm"]), e["path"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed file entry {e!r}") from exc
        if b not in az_index:
            raise ManifestError(f"file entry azimuth {b} not in geometry")
        try:
            j = grid.index_of(wl)
        except KeyError as exc:
            raise ManifestError(f"file entry wavelength {wl} not on grid") from exc
        i = az_index[b]
        values[i, j] = _read_frame(root / rel, raw, height, width)
        valid[i, j] = _read_mask(root / e["mask"], height, width) if e.get("mask") else True
        seen[i, j] = True

    if not seen.all():
        missing = [(geometry.azimuths_deg[i], grid.wavelength(j)) for i, j in zip(*np.nonzero(~seen))]
        if not allow_missing:
            raise MissingFrameError(missing)

    center = doc.get("center")
    return SpectralStack(grid, geometry, values, valid, frame=kind,
                         center=tuple(center) if center is not None else None,
                         meta=dict(doc.get("meta", {})))


def _frame_name(i: int, j: int, raw: bool) -> str:
    return f"a{i:02d}_w{j:03d}.{'pgm' if raw else 'f32'}"


def save_stack(stack: SpectralStack, directory, references: dict | None = None) -> Path:
    """Write ``stack`` as a manifest directory and return the manifest path.

    ``references`` may carry ``{"white": [ImagePlane per wavelength],
    "dark": [ImagePlane, ...]}``; they are written as raw frames with reserved
    roles when the stack is raw, float32 otherwise.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    raw = stack.frame == "raw"
    files = []
    for i, b in enumerate(stack.geometry.azimuths_deg):
        for j in range(stack.grid.count):
            name = _frame_name(i, j, raw)
            if raw:
                write_pgm(directory / name, stack.values[i, j])
            else:
                write_f32(directory / name, stack.values[i, j])
            entry = {"azimuth_deg": b, "wavelength_nm": stack.grid.wavelength(j), "path": name}
            if not stack.valid[i, j].all():
                entry["mask"] = name.rsplit(".", 1)[0] + ".mask"
                _write_mask(directory / entry["mask"], stack.valid[i, j])
            files.append(entry)

    doc = {
        "width": stack.width,
        "height": stack.height,
        "grid": stack.grid.to_dict(),
        "geometry": stack.geometry.to_dict(),
        "frame_kind": stack.frame,
        "files": files,
    }
    if stack.center is not None:
        doc["center"] = list(stack.center)
    if stack.meta:
        doc["meta"] = stack.meta
    if references:
        doc["references"] = _write_references(directory, references, raw, stack.grid)
    path = directory / MANIFEST
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def _write_references(directory: Path, refs: dict, raw: bool, grid: WavelengthGrid) -> dict:
    out = {}
    ext = "pgm" if raw else "f32"
    writer = write_pgm if raw else write_f32
    if refs.get("white") is not None:
        out["white"] = []
        for j, plane in enumerate(refs["white"]):
            name = f"white_w{j:03d}.{ext}"
            writer(directory / name, plane.values)
            out["white"].append({"wavelength_nm": grid.wavelength(j), "path": name})
    if refs.get("dark") is not None:
        out["dark"] = []
        for k, plane in enumerate(refs["dark"]):
            name = f"dark_{k:03d}.{ext}"
            writer(directory / name, plane.values)
            out["dark"].append({"path": name})
    return out


def load_references(manifest_path, role: str) -> list[ImagePlane]:
    """Frames stored under a reserved role (``"white"`` or ``"dark"``)."""
    doc, root = read_manifest(manifest_path)
    refs = doc.get("references", {}).get(role)
    if not refs:
        raise ManifestError(f"manifest in {root} has no {role!r} reference frames")
    raw = doc["frame_kind"] == "raw"
    h, w = int(doc["height"]), int(doc["width"])
    if role == "white":
        grid, _ = _grid_geometry(doc)
        refs = sorted(refs, key=lambda e: float(e["wavelength_nm"]))
        got = [float(e["wavelength_nm"]) for e in refs]
        if len(got) != grid.count or not np.allclose(got, grid.wavelengths):
            raise DimensionError(f"white reference wavelengths {got} do not match the grid")
    return [ImagePlane(_read_frame(root / e["path"], raw, h, w)) for e in refs]


# -- normal maps --------------------------------------------------------------

def save_normals(normals, path) -> Path:
    """Write interleaved float32 (nx, ny, nz, k) per pixel plus a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.concatenate([normals.normals, normals.albedo[..., None]], axis=-1)
    write_f32(path, data)
    mask_path = path.with_suffix(".mask")
    _write_mask(mask_path, normals.valid)
    header = {
        "width": int(normals.valid.shape[1]),
        "height": int(normals.valid.shape[0]),
        "layout": ["nx", "ny", "nz", "k"],
        "dtype": "<f4",
        "data": path.name,
        "mask": mask_path.name,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=1, sort_keys=True))
    return path


def load_normals(path):
    from .shape import NormalMap

    path = Path(path)
    try:
        header = json.loads(path.with_suffix(".json").read_text())
        h, w = int(header["height"]), int(header["width"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ManifestError(f"bad normal-map header for {path}: {exc}") from exc
    data = np.fromfile(path, dtype="<f4")
    if data.size != h * w * 4:
        raise DimensionError(f"{path} holds {data.size} values, expected {h * w * 4}")
    data = data.reshape(h, w, 4).astype(float)
    valid = _read_mask(path.parent / header["mask"], h, w)
    return NormalMap(data[..., :3], data[..., 3], valid)


# -- 8-bit previews -----------------------------------------------------------

def save_png(path, rgb_or_gray) -> None:
    """Save an array with values in [0, 1] as an 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(rgb_or_gray, dtype=float), 0.0, 1.0)
    img = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(img).save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    from PIL import Image

    try:
        img = np.asarray(Image.open(path).convert("L"))
    except OSError as exc:
        raise FrameReadError(f"cannot read mask image {path}: {exc}") from exc
    return img > 0
