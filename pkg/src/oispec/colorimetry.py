"""Collapse lambda stacks to CIE XYZ and sRGB; region spectra extraction."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._cmf import CMF_1931_2DEG
from .core import DimensionError, DomainError, ImagePlane, SpectralStack

# IEC 61966-2-1 linear-sRGB <- XYZ (D65)
XYZ_TO_SRGB = np.array([
    [3.2406, -1.5372, -0.4986],
    [-0.9689, 1.8758, 0.0415],
    [0.0557, -0.2040, 1.0570],
])
SRGB_TO_XYZ = np.linalg.inv(XYZ_TO_SRGB)
D65_WHITE = np.array([0.9505, 1.0, 1.0890])


def cmf_at(wavelengths_nm) -> np.ndarray:
    """Colour-matching functions linearly interpolated at ``wavelengths_nm``.

    Returns shape (n, 3); zero outside 380-780 nm.
    """
    wl = np.asarray(wavelengths_nm, dtype=float)
    table = CMF_1931_2DEG
    out = np.stack([np.interp(wl, table[:, 0], table[:, c], left=0.0, right=0.0) for c in (1, 2, 3)], axis=-1)
    return out


def xyz_weights(wavelengths_nm) -> np.ndarray:
    """(n, 3) weights turning a sampled spectrum into XYZ with Y(1) = 1."""
    cmf = cmf_at(wavelengths_nm)
    used = cmf.sum(axis=1) > 0
    ysum = cmf[used, 1].sum()
    if ysum <= 0:
        wl = np.asarray(wavelengths_nm, dtype=float)
        raise DomainError(f"wavelengths {wl.min():g}-{wl.max():g} nm do not overlap the visible band")
    return cmf / ysum


def spectrum_to_xyz(spectrum, wavelengths_nm) -> np.ndarray:
    """Riemann sum of spectrum times the CMFs, normalised by the summed ybar.

    ``spectrum`` may carry leading batch axes; the last axis is wavelength.
    """
    s = np.asarray(spectrum, dtype=float)
    wl = np.asarray(getattr(wavelengths_nm, "wavelengths", wavelengths_nm), dtype=float)
    if s.shape[-1] != wl.size:
        raise DimensionError(f"spectrum has {s.shape[-1]} samples for {wl.size} wavelengths")
    used = _contributing(wl)
    # sum over CMF-weighted samples only; out-of-band samples must not touch the result
    return s[..., used] @ xyz_weights(wl)[used]


def _srgb_encode(c):
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1 / 2.4) - 0.055)


def _srgb_decode(c):
    c = np.asarray(c, dtype=float)
    return np.where(c <= 0.04045, c / 12.92, np.power((c + 0.055) / 1.055, 2.4))


def xyz_to_srgb(xyz) -> np.ndarray:
    """XYZ (last axis) to gamma-encoded sRGB in [0, 1]; out-of-gamut clamps."""
    lin = np.asarray(xyz, dtype=float) @ XYZ_TO_SRGB.T
    return _srgb_encode(lin)


def srgb_to_xyz(rgb) -> np.ndarray:
    return _srgb_decode(rgb) @ SRGB_TO_XYZ.T


def chromaticity(xyz) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=float)
    return xyz[..., :2] / xyz.sum(axis=-1, keepdims=True)


def _contributing(wl) -> np.ndarray:
    return cmf_at(wl).sum(axis=1) > 0


def stack_to_xyz(stack: SpectralStack, angle_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(3, H, W) XYZ image for one angle and its validity mask.

    A pixel is valid when every wavelength carrying CMF weight is valid there.
    """
    wl = stack.grid.wavelengths
    w = xyz_weights(wl)
    used = _contributing(wl)
    vals = stack.values[angle_index].astype(float)
    xyz = np.tensordot(w[used].T, vals[used], axes=(1, 0))
    valid = stack.valid[angle_index][used].all(axis=0)
    return np.where(valid, xyz, 0.0), valid


def luminance(stack: SpectralStack) -> tuple[np.ndarray, np.ndarray]:
    """CIE Y per angle: arrays of shape (n_angles, H, W) for values and mask."""
    wl = stack.grid.wavelengths
    wy = xyz_weights(wl)[:, 1]
    used = _contributing(wl)
    y = np.tensordot(wy[used], stack.values[:, used].astype(float), axes=(0, 1))
    valid = stack.valid[:, used].all(axis=1)
    return np.where(valid, y, 0.0), valid


def stack_to_rgb(stack: SpectralStack, angle_index: int = 0) -> tuple[ImagePlane, ImagePlane, ImagePlane]:
    xyz, valid = stack_to_xyz(stack, angle_index)
    rgb = xyz_to_srgb(np.moveaxis(xyz, 0, -1))
    return tuple(ImagePlane(rgb[..., c], valid) for c in range(3))


def rgb_image(stack: SpectralStack, angle_index: int = 0) -> np.ndarray:
    """(H, W, 3) sRGB array with invalid pixels painted black."""
    r, g, b = stack_to_rgb(stack, angle_index)
    return np.stack([r.values, g.values, b.values], axis=-1)


@dataclass(frozen=True, eq=False)
class RegionSpectrum:
    wavelengths_nm: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    n_pixels: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["wavelength_nm", "mean", "sd"])
            for row in zip(self.wavelengths_nm, self.mean, self.sd):
                w.writerow([f"{row[0]:g}", repr(float(row[1])), repr(float(row[2]))])


def extract_region_spectrum(stack: SpectralStack, region, angle_index: int = 0) -> RegionSpectrum:
    """Masked mean and population standard deviation per wavelength."""
    region = np.asarray(region, dtype=bool)
    if region.shape != (stack.height, stack.width):
        raise DimensionError(f"region {region.shape} does not match image {(stack.height, stack.width)}")
    if not region.any():
        raise DomainError("empty region")
    vals = stack.values[angle_index].astype(float)
    ok = stack.valid[angle_index] & region
    n = ok.sum(axis=(1, 2))
    if np.any(n == 0):
        bad = stack.grid.wavelengths[n == 0]
        raise DomainError(f"region has no valid pixel at {bad.tolist()} nm")
    mean = np.where(ok, vals, 0.0).sum(axis=(1, 2)) / n
    dev = np.where(ok, vals - mean[:, None, None], 0.0)
    sd = np.sqrt((dev ** 2).sum(axis=(1, 2)) / n)
    return RegionSpectrum(stack.grid.wavelengths, mean, sd, n)
