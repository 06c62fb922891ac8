"""Forward model producing raw multi-angle stacks with known ground truth.

The scene is analytic: layers are horizontal bands with wavy boundaries,
optional round particles sit on top, and the surface height is a sum of
sinusoids whose gradient gives the normals. Every view is rendered by
evaluating the scene at the sample coordinates that land on each detector
pixel, so stage rotation and jitter introduce no resampling error.

Raw intensity for view ``l``, wavelength ``j``::

    gain * source(j) * (diffuse(j) * max(0, N . L_l) + corruption(l, j)) + dark + noise

quantised to 16 bits. Corruption is additive and non-negative; by default
one illumination angle per pixel stays clean.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _parallel
from .core import DomainError, IlluminationGeometry, ImagePlane, SpectralStack, WavelengthGrid, light_vector
from .pigments import pigment_dictionary
from .register import RigidTransform
from .shape import NormalMap
from .unmix import SpectralDictionary, load_dictionary

MAX_COUNT = 65535.0


@dataclass
class Layer:
    name: str
    y0: float
    y1: float
    mixture: dict
    mixing: str = "linear"
    density: float = 1.0
    corruption: float = 0.0
    roughness: float = 1.0


@dataclass
class SceneSpec:
    width: int = 64
    height: int = 64
    grid: WavelengthGrid = field(default_factory=lambda: WavelengthGrid(430.0, 5.0, 115))
    geometry: IlluminationGeometry = field(default_factory=IlluminationGeometry.ring)
    layers: list = field(default_factory=list)
    particles: dict | None = None
    boundary_wave_px: float = 0.0
    normals: dict = field(default_factory=lambda: {"kind": "flat"})
    clean_angle: bool = True
    corruption_period_px: float = 40.0
    gain: float = 60000.0
    source: str = "flat"
    dark_level: float = 300.0
    dark_pattern: float = 20.0
    noise_sigma: float = 0.0
    n_darks: int = 50
    jitter_px: float = 0.0
    rotate_views: bool = True
    dictionary: str | None = None
    center: tuple | None = None
    k_true: int = 2

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = WavelengthGrid(**self.grid)
        if isinstance(self.geometry, dict):
            self.geometry = IlluminationGeometry(self.geometry["polar_deg"], tuple(self.geometry["azimuths_deg"]))
        self.layers = [Layer(**l) if isinstance(l, dict) else l for l in self.layers]
        if not self.layers:
            raise DomainError("scene needs at least one layer")
        for l in self.layers:
            if any(f < 0 for f in l.mixture.values()):
                raise DomainError(f"layer {l.name!r} has a negative fraction")
            if l.corruption < 0:
                raise DomainError(f"layer {l.name!r} has negative corruption")
            if sum(f > 0 for f in l.mixture.values()) > self.k_true:
                raise DomainError(f"layer {l.name!r} mixes more than k_true={self.k_true} atoms")
            if l.mixing not in ("linear", "dense"):
                raise DomainError(f"layer {l.name!r}: unknown mixing {l.mixing!r}")

    @property
    def center_xy(self) -> tuple[float, float]:
        if self.center is not None:
            return (float(self.center[0]), float(self.center[1]))
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        d["geometry"] = self.geometry.to_dict()
        return d

    @classmethod
    def from_json(cls, path) -> "SceneSpec":
        doc = json.loads(Path(path).read_text())
        if "preset" in doc:
            overrides = {k: v for k, v in doc.items() if k != "preset"}
            return preset(doc["preset"], **overrides)
        return cls(**doc)

    def load_dictionary(self) -> SpectralDictionary:
        if self.dictionary is None:
            return pigment_dictionary()
        return load_dictionary(self.dictionary)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Reference-frame truth for a scene; arrays are (H, W) or (n, H, W)."""

    spec: SceneSpec
    seed: int
    atom_names: tuple
    labels: np.ndarray
    region_names: tuple
    normals: NormalMap
    abundances: np.ndarray
    diffuse: np.ndarray
    transforms: tuple
    params: dict

    def atom_region(self, name: str) -> np.ndarray:
        return self.abundances[self.atom_names.index(name)] > 0


@dataclass(frozen=True, eq=False)
class Rendering:
    stack: SpectralStack
    white: list
    darks: list


# -- scene fields -------------------------------------------------------------

def _regions(spec: SceneSpec, rng) -> tuple[list, list]:
    """(name, mixture, mixing, density, corruption, roughness) per region and particle discs.

    Particles take ``particles["mixture"]``, or with ``from_layer`` a pure
    grain of one of the host layer's atoms, cycling through them.
    """
    regions = [(l.name, dict(l.mixture), l.mixing, l.density, l.corruption, l.roughness) for l in spec.layers]
    discs = []
    p = spec.particles
    if p:
        r0 = float(p.get("radius_px", 2.5))
        for i in range(int(p.get("count", 0))):
            x = rng.uniform(0, spec.width - 1)
            y = rng.uniform(0, spec.height - 1)
            r = r0 * rng.uniform(0.7, 1.3)
            if p.get("from_layer"):
                host = spec.layers[int((y >= np.array([l.y0 for l in spec.layers[1:]])).sum())]
                atoms = sorted(a for a, f in host.mixture.items() if f > 0)
                mixture = {atoms[i % len(atoms)]: 1.0}
                corr, rough = host.corruption, host.roughness
            else:
                mixture = dict(p["mixture"])
                corr, rough = float(p.get("corruption", 0.0)), 1.0
            regions.append((f"particle{i}", mixture, "linear", 1.0, corr, rough))
            discs.append((x, y, r))
    return regions, discs


def _sample_params(spec: SceneSpec, seed: int) -> dict:
    rng = np.random.default_rng([seed, 0])
    regions, discs = _regions(spec, rng)
    n = spec.normals
    waves = []
    kind = n.get("kind", "flat")
    if kind in ("bumps", "grooves"):
        period = float(n.get("period_px", 16.0))
        amp = float(n.get("slope", 0.3)) * period / (2 * math.pi)
        count = int(n.get("count", 6 if kind == "bumps" else 1))
        for _ in range(count):
            th = rng.uniform(0, 2 * math.pi) if kind == "bumps" else math.radians(float(n.get("direction_deg", 0.0)))
            p = period * (rng.uniform(0.7, 1.4) if kind == "bumps" else 1.0)
            k = 2 * math.pi / p
            waves.append((amp * (p / period) / math.sqrt(count), k * math.cos(th), k * math.sin(th),
                          rng.uniform(0, 2 * math.pi)))
    wave_phase = rng.uniform(0, 2 * math.pi)
    lobe_phase = rng.uniform(0, 2 * math.pi)
    jrng = np.random.default_rng([seed, 5])
    jitter = [(0.0, 0.0)] + [tuple(jrng.uniform(-spec.jitter_px, spec.jitter_px, 2))
                             for _ in range(spec.geometry.n_angles - 1)]
    return {"regions": regions, "discs": discs, "waves": waves, "wave_phase": wave_phase,
            "lobe_phase": lobe_phase, "jitter": jitter}


def _labels_at(spec, params, x, y):
    bounds = np.array([l.y0 for l in spec.layers[1:]])
    wave = spec.boundary_wave_px * np.sin(2 * math.pi * x / max(spec.width, 1) * 2 + params["wave_phase"])
    labels = np.zeros(x.shape, dtype=int)
    for b in bounds:
        labels += (y >= b + wave).astype(int)
    for i, (cx, cy, r) in enumerate(params["discs"]):
        labels = np.where((x - cx) ** 2 + (y - cy) ** 2 <= r * r, len(spec.layers) + i, labels)
    return labels


def _normals_at(spec, params, x, y, labels):
    n = spec.normals
    kind = n.get("kind", "flat")
    hx = np.zeros(x.shape)
    hy = np.zeros(x.shape)
    if kind == "tilted":
        hx += -float(n.get("nx", 0.0)) / float(n.get("nz", 1.0))
        hy += -float(n.get("ny", 0.0)) / float(n.get("nz", 1.0))
    for a, kx, ky, ph in params["waves"]:
        c = a * np.cos(kx * x + ky * y + ph)
        hx += c * kx
        hy += c * ky
    if kind in ("bumps", "grooves"):
        rough = np.array([r[5] for r in params["regions"]])[labels]
        hx *= rough
        hy *= rough
    elif kind not in ("flat", "tilted"):
        raise DomainError(f"unknown normal field {kind!r}")
    N = np.stack([-hx, -hy, np.ones(x.shape)], axis=-1)
    return N / np.linalg.norm(N, axis=-1, keepdims=True)


def _region_spectra(params, dictionary: SpectralDictionary, wavelengths):
    d = dictionary.resample(wavelengths)
    out = []
    for name, mix, mixing, density, _, _ in params["regions"]:
        unknown = set(mix) - set(d.names)
        if unknown:
            raise DomainError(f"region {name!r} references unknown atoms {sorted(unknown)}")
        fr = np.zeros(len(d))
        for atom, f in mix.items():
            fr[d.names.index(atom)] = f
        if mixing == "linear":
            s = fr @ d.spectra
        else:
            # subtractive mixing of a heavily loaded paint: weighted geometric mean, darkened
            w = fr / fr.sum()
            s = np.exp(w @ np.log(np.clip(d.spectra, 1e-6, None))) ** density
        out.append((fr, s))
    return d, np.array([f for f, _ in out]), np.array([s for _, s in out])


def _scene_coords(spec, transform: RigidTransform):
    """Scene (x, y) seen by every detector pixel of a view with ``transform``."""
    h, w = spec.height, spec.width
    cx, cy = transform.center_xy
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    dx = xx - transform.translation_xy[0] - cx
    dy = yy - transform.translation_xy[1] - cy
    th = math.radians(transform.rotation_deg)
    c, s = math.cos(th), math.sin(th)
    return cx + c * dx + s * dy, cy - s * dx + c * dy


def generate_scene(spec: SceneSpec, seed: int = 0) -> GroundTruth:
    params = _sample_params(spec, seed)
    dictionary = spec.load_dictionary()
    d, fractions, spectra = _region_spectra(params, dictionary, spec.grid.wavelengths)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(float)
    labels = _labels_at(spec, params, xx, yy)
    N = _normals_at(spec, params, xx, yy, labels)
    ones = np.ones(labels.shape, dtype=bool)
    normals = NormalMap(N, np.ones(labels.shape), ones, np.zeros(labels.shape))
    abundances = np.moveaxis(fractions[labels], -1, 0)
    diffuse = np.moveaxis(spectra[labels], -1, 0)
    center = spec.center_xy
    transforms = tuple(
        RigidTransform(b if spec.rotate_views else 0.0, center, params["jitter"][i])
        for i, b in enumerate(spec.geometry.azimuths_deg))
    return GroundTruth(spec, seed, d.names, labels, tuple(r[0] for r in params["regions"]), normals,
                       abundances, diffuse, transforms, params)


def _source_profile(kind, wl):
    if kind == "flat":
        return np.ones_like(wl)
    if kind == "xenon":
        # lamp times detector response falling off in the NIR
        return 0.35 + 0.65 / (1.0 + np.exp((wl - 850.0) / 60.0))
    raise DomainError(f"unknown source profile {kind!r}")


def render_components(truth: GroundTruth, angle_index: int):
    """Noise-free pieces of one view: (diffuse * shading, corruption), each (n_wl, H, W).

    Values are in reflectance units before gain and source weighting.
    """
    spec, params = truth.spec, truth.params
    t = truth.transforms[angle_index]
    x, y = _scene_coords(spec, t)
    labels = _labels_at(spec, params, x, y)
    N = _normals_at(spec, params, x, y, labels)
    beta = spec.geometry.azimuths_deg[angle_index]
    L = np.array(light_vector(spec.geometry.polar_deg, beta))
    shade = np.clip(N @ L, 0.0, None)
    _, _, spectra = _region_spectra(params, spec.load_dictionary(), spec.grid.wavelengths)
    diffuse = np.moveaxis(spectra[labels], -1, 0)
    amp = np.array([r[4] for r in params["regions"]])[labels]
    corr = diffuse * (amp * _lobe(spec, params, x, y, angle_index))
    return diffuse * shade, corr


def _lobe(spec, params, x, y, angle_index):
    """Angular weight of the additive scatter; zero at each pixel's clean angle."""
    az = np.radians(np.array(spec.geometry.azimuths_deg))
    phi = 2 * math.pi * (x + 0.5 * y) / spec.corruption_period_px + params["lobe_phase"]
    facing = np.cos(az[:, None, None] - phi[None])
    lobe = 0.25 + 0.75 * 0.5 * (1.0 + facing[angle_index])
    if spec.clean_angle and len(az) > 1:
        clean = np.argmin(facing, axis=0)
        lobe = np.where(clean == angle_index, 0.0, lobe)
    return lobe


def _quantise(x):
    return np.clip(np.round(x), 0.0, MAX_COUNT)


def render_stack(truth: GroundTruth, spec: SceneSpec | None = None) -> Rendering:
    """Raw 16-bit stack, a white lambda-stack and ``n_darks`` dark frames."""
    spec = spec or truth.spec
    seed = truth.seed
    wl = spec.grid.wavelengths
    src = _source_profile(spec.source, wl)
    h, w = spec.height, spec.width
    fixed = np.random.default_rng([seed, 4]).normal(0.0, 1.0, (h, w))
    dark_map = spec.dark_level + spec.dark_pattern * fixed

    def noise(key):
        if spec.noise_sigma <= 0:
            return 0.0
        return np.random.default_rng([seed, *key]).normal(0.0, spec.noise_sigma, (h, w))

    values = np.empty((spec.geometry.n_angles, spec.grid.count, h, w), dtype=np.float32)

    def view(i):
        # noise is keyed per (angle, wavelength) plane, so thread count never matters
        lit, corr = render_components(truth, i)
        signal = spec.gain * src[:, None, None] * (lit + corr)
        for j in range(spec.grid.count):
            values[i, j] = _quantise(signal[j] + dark_map + noise((1, i, j)))

    _parallel.map_ordered(view, range(spec.geometry.n_angles))

    cos_a = math.cos(math.radians(spec.geometry.polar_deg))
    white = [ImagePlane(_quantise(spec.gain * src[j] * cos_a + dark_map + noise((3, j))))
             for j in range(spec.grid.count)]
    darks = [ImagePlane(_quantise(dark_map + noise((2, k)))) for k in range(spec.n_darks)]
    stack = SpectralStack(spec.grid, spec.geometry, values, frame="raw", center=spec.center,
                          meta={"derotated": not spec.rotate_views})
    return Rendering(stack, white, darks)


def save_truth(truth: GroundTruth, directory) -> Path:
    """Write normals, per-atom abundances, labels and the diffuse cube."""
    from .io import save_normals, write_f32

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_normals(truth.normals, directory / "normals.bin")
    for i, name in enumerate(truth.atom_names):
        write_f32(directory / f"abundance_{i:02d}.f32", truth.abundances[i])
    write_f32(directory / "diffuse.f32", truth.diffuse)
    np.ascontiguousarray(truth.labels, dtype="<i4").tofile(directory / "labels.i32")
    doc = {
        "width": truth.spec.width, "height": truth.spec.height, "seed": truth.seed,
        "atoms": list(truth.atom_names), "regions": list(truth.region_names),
        "abundances": [f"abundance_{i:02d}.f32" for i in range(len(truth.atom_names))],
        "diffuse": {"path": "diffuse.f32", "shape": list(truth.diffuse.shape)},
        "labels": "labels.i32", "normals": "normals.bin",
        "transforms": [t.to_dict() for t in truth.transforms],
        "spec": truth.spec.to_dict(),
    }
    path = directory / "truth.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def simulate_to_dir(spec: SceneSpec, seed: int, directory) -> Path:
    """Generate, render and write a manifest cube with a ``truth/`` subdirectory."""
    from .io import save_stack

    directory = Path(directory)
    truth = generate_scene(spec, seed)
    r = render_stack(truth, spec)
    path = save_stack(r.stack, directory, references={"white": r.white, "dark": r.darks})
    save_truth(truth, directory / "truth")
    return path


# -- presets ------------------------------------------------------------------

def _mockup_layers(height, dense=False):
    q = height / 4.0
    second = ({"madder lake": 0.5, "ultramarine": 0.5} if dense else {"madder lake": 0.6, "zinc white": 0.4})
    return [
        Layer("layer1", 0.0, q, {"ultramarine": 0.5, "zinc white": 0.5}, corruption=0.15, roughness=0.3),
        Layer("layer2", q, 2 * q, second, mixing="dense" if dense else "linear", density=2.0 if dense else 1.0,
              corruption=0.25, roughness=1.0),
        Layer("layer3", 2 * q, 3 * q, {"vermilion": 0.7, "cadmium yellow": 0.3}, corruption=0.15, roughness=0.3),
        Layer("layer4", 3 * q, 4 * q, {"cadmium yellow": 0.5, "zinc white": 0.5}, corruption=0.1, roughness=0.3),
    ]


def preset(name: str, **overrides) -> SceneSpec:
    """Named scene configurations.

    ``flat-white``: one zinc-white layer, flat, no corruption or noise.
    ``mockup4``: four pigment layers (bottom ultramarine/zinc white, madder
    lake/zinc white, vermilion/cadmium yellow, cadmium yellow/zinc white),
    bumpy surface roughest in the madder layer, additive scatter with one
    clean angle, mild noise, stage jitter and rotation.
    ``mockup4-dense``: as ``mockup4`` with the second layer a dense
    madder/ultramarine paint whose near-black spectrum mimics Prussian blue.
    """
    size = int(overrides.pop("size", 96))
    if name == "flat-white":
        base = dict(width=size, height=size, layers=[Layer("white", 0.0, size, {"zinc white": 1.0})])
    elif name in ("mockup4", "mockup4-dense"):
        base = dict(width=size, height=size, layers=_mockup_layers(size, dense=name == "mockup4-dense"),
                    particles={"count": 40, "radius_px": 2.0, "from_layer": True},
                    boundary_wave_px=3.0,
                    normals={"kind": "bumps", "period_px": 18.0, "slope": 0.15},
                    noise_sigma=2.0, jitter_px=3.0, rotate_views=True)
    else:
        raise DomainError(f"unknown scene preset {name!r}")
    base.update(overrides)
    return SceneSpec(**base)
