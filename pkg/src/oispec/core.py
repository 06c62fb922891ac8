"""Domain types and geometry shared by every processing stage.

Coordinate convention used throughout the package: ``x`` runs along image
columns (increasing right), ``y`` along image rows (increasing down) and ``z``
along the optical axis toward the detector. Azimuths are measured from +x
toward +y in the registered frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

FRAME_KINDS = ("raw", "reflectance", "flattened", "diffuse", "maximum", "average", "difference")


class SpectralError(Exception):
    """Base class for all errors raised by oispec."""


class DomainError(SpectralError, ValueError):
    """An argument lies outside the domain of an operation."""


class GeometryError(SpectralError, ValueError):
    """Illumination geometry cannot support the requested computation."""


class DimensionError(SpectralError, ValueError):
    """Arrays, planes or stacks have incompatible shapes or grids."""


@dataclass(frozen=True)
class WavelengthGrid:
    start_nm: float
    step_nm: float
    count: int

    def __post_init__(self):
        if not (self.step_nm > 0):
            raise DomainError(f"step_nm must be positive, got {self.step_nm}")
        if int(self.count) != self.count or self.count < 1:
            raise DomainError(f"count must be a positive integer, got {self.count}")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "start_nm", float(self.start_nm))
        object.__setattr__(self, "step_nm", float(self.step_nm))

    @classmethod
    def from_range(cls, start_nm: float, end_nm: float, step_nm: float) -> "WavelengthGrid":
        return cls(start_nm, step_nm, wavelength_count(start_nm, end_nm, step_nm))

    def wavelength(self, i: int) -> float:
        if not 0 <= i < self.count:
            raise IndexError(i)
        return self.start_nm + i * self.step_nm

    @property
    def wavelengths(self) -> np.ndarray:
        return self.start_nm + self.step_nm * np.arange(self.count)

    @property
    def end_nm(self) -> float:
        return self.start_nm + (self.count - 1) * self.step_nm

    def index_of(self, wavelength_nm: float, tol: float = 1e-6) -> int:
        i = round((wavelength_nm - self.start_nm) / self.step_nm)
        if not 0 <= i < self.count or abs(self.wavelength(i) - wavelength_nm) > tol:
            raise KeyError(f"{wavelength_nm} nm is not on the grid")
        return i

    def to_dict(self) -> dict:
        return {"start_nm": self.start_nm, "step_nm": self.step_nm, "count": self.count}


@dataclass(frozen=True)
class IlluminationGeometry:
    polar_deg: float
    azimuths_deg: tuple[float, ...]

    def __post_init__(self):
        az = tuple(float(a) for a in self.azimuths_deg)
        object.__setattr__(self, "azimuths_deg", az)
        object.__setattr__(self, "polar_deg", float(self.polar_deg))
        if not 0 <= self.polar_deg < 90:
            raise DomainError(f"polar angle must lie in [0, 90), got {self.polar_deg}")
        if not az:
            raise DomainError("at least one azimuth is required")
        if any(not 0 <= a < 360 for a in az):
            raise DomainError(f"azimuths must lie in [0, 360): {az}")
        if len(set(az)) != len(az):
            raise DomainError(f"duplicate azimuths: {az}")

    @classmethod
    def ring(cls, polar_deg: float = 50.0, n: int = 10) -> "IlluminationGeometry":
        """Evenly spaced azimuths starting at 0, e.g. 10 views every 36 degrees."""
        return cls(polar_deg, tuple(360.0 * i / n for i in range(n)))

    @property
    def n_angles(self) -> int:
        return len(self.azimuths_deg)

    def lights(self) -> list["LightVector"]:
        return [light_vector(self.polar_deg, b) for b in self.azimuths_deg]

    def lighting_matrix(self) -> np.ndarray:
        """(n_angles, 3) array of unit light vectors."""
        return np.array(self.lights(), dtype=float)

    def to_dict(self) -> dict:
        return {"polar_deg": self.polar_deg, "azimuths_deg": list(self.azimuths_deg)}


class LightVector(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class ImagePlane:
    """A single 2-D image with an explicit validity mask.

    ``values`` has shape (height, width). Invalid pixels may hold anything;
    consumers must consult ``valid``.
    """

    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"image plane must be 2-D, got shape {values.shape}")
        if self.valid is None:
            valid = np.isfinite(values)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise DimensionError(f"mask shape {valid.shape} != values shape {values.shape}")
            valid = valid & np.isfinite(values)
        values = np.where(valid, values, 0.0)
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def constant(cls, value: float, height: int, width: int) -> "ImagePlane":
        return cls(np.full((height, width), float(value)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SpectralStack:
    """Four-dimensional reflectance data: (angle, wavelength, row, column).

    Values are stored as float32. ``valid`` has the same shape as ``values``.
    """

    grid: WavelengthGrid
    geometry: IlluminationGeometry
    values: np.ndarray
    valid: np.ndarray = None
    frame: str = "raw"
    center: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        expected = (self.geometry.n_angles, self.grid.count)
        if values.ndim != 4 or values.shape[:2] != expected:
            raise DimensionError(
                f"stack values must have shape (angles={expected[0]}, wavelengths={expected[1]}, H, W), "
                f"got {values.shape}"
            )
        if self.valid is None:
            valid = np.isfinite(values)
        else:
            valid = np.broadcast_to(np.asarray(self.valid, dtype=bool), values.shape) & np.isfinite(values)
        values = np.where(valid, values, np.float32(0.0))
        if self.frame not in FRAME_KINDS:
            raise DomainError(f"unknown frame kind {self.frame!r}")
        values.flags.writeable = False
        valid = np.ascontiguousarray(valid)
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)
        if self.center is not None:
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def height(self) -> int:
        return self.values.shape[2]

    @property
    def width(self) -> int:
        return self.values.shape[3]

    @property
    def n_angles(self) -> int:
        return self.values.shape[0]

    @property
    def rotation_center(self) -> tuple[float, float]:
        """Explicit center if set, else the exact image center."""
        if self.center is not None:
            return self.center
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def plane(self, angle_index: int, wavelength_index: int) -> ImagePlane:
        return ImagePlane(self.values[angle_index, wavelength_index], self.valid[angle_index, wavelength_index])

    def replace(self, **changes) -> "SpectralStack":
        kw = dict(grid=self.grid, geometry=self.geometry, values=self.values, valid=self.valid,
                  frame=self.frame, center=self.center, meta=dict(self.meta))
        kw.update(changes)
        return SpectralStack(**kw)


def light_vector(polar_deg: float, azimuth_deg: float) -> LightVector:
    """Unit vector pointing from the sample toward the light."""
    if not 0 <= polar_deg < 90:
        raise DomainError(f"polar angle must lie in [0, 90), got {polar_deg}")
    a = math.radians(polar_deg)
    b = math.radians(azimuth_deg)
    s = math.sin(a)
    return LightVector(s * math.cos(b), s * math.sin(b), math.cos(a))


def lighting_matrix(lights: Sequence[Sequence[float]]) -> np.ndarray:
    L = np.asarray(lights, dtype=float)
    if L.ndim != 2 or L.shape[1] != 3:
        raise DimensionError(f"lights must be an (n, 3) array, got {L.shape}")
    return L


def wavelength_count(start_nm: float, end_nm: float, step_nm: float) -> int:
    if step_nm <= 0:
        raise DomainError(f"step must be positive, got {step_nm}")
    if end_nm < start_nm:
        raise DomainError(f"end ({end_nm}) precedes start ({start_nm})")
    n = (end_nm - start_nm) / step_nm
    if abs(n - round(n)) > 1e-9:
        raise DomainError(f"range {start_nm}-{end_nm} nm is not divisible by step {step_nm} nm")
    return int(round(n)) + 1


def total_images(geometry: IlluminationGeometry, grid: WavelengthGrid) -> int:
    return geometry.n_angles * grid.count


def rayleigh_limit(lambda_nm: float, numerical_aperture: float) -> float:
    """Diffraction-limited resolution 0.61 lambda / NA, in micrometres."""
    if lambda_nm <= 0 or numerical_aperture <= 0:
        raise DomainError("wavelength and numerical aperture must be positive")
    return 0.61 * lambda_nm / numerical_aperture / 1000.0
