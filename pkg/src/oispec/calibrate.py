"""Dark-frame averaging and reflectance normalisation against a white standard."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DimensionError, DomainError, ImagePlane, SpectralStack

FULL_SCALE = 65535.0


@dataclass(frozen=True, eq=False)
class DarkFrame:
    plane: ImagePlane
    n_frames: int


def average_darks(frames: Sequence[ImagePlane]) -> DarkFrame:
    """Per-pixel mean over the frames that are valid at that pixel."""
    if len(frames) == 0:
        raise DomainError("no dark frames given")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise DimensionError("dark frames differ in size")
    vals = np.stack([f.values for f in frames])
    ok = np.stack([f.valid for f in frames])
    n = ok.sum(axis=0)
    total = np.where(ok, vals, 0.0).sum(axis=0)
    mean = np.divide(total, n, out=np.zeros(shape), where=n > 0)
    return DarkFrame(ImagePlane(mean, n > 0), len(frames))


def _as_dark(dark) -> ImagePlane:
    return dark.plane if isinstance(dark, DarkFrame) else dark


def reflectance(image: ImagePlane, white: ImagePlane, dark, eps_den: float = 1e-6 * FULL_SCALE,
                white_mode: str = "resolved") -> ImagePlane:
    """``(image - dark) / (white - dark)``, not clamped.

    Pixels where the white-minus-dark denominator is within ``eps_den`` of zero
    are masked invalid. With ``white_mode="mean"`` the denominator is the
    spatial mean of ``white - dark`` over valid pixels.
    """
    dark = _as_dark(dark)
    if not image.shape == white.shape == dark.shape:
        raise DimensionError(f"shape mismatch: image {image.shape}, white {white.shape}, dark {dark.shape}")
    valid = image.valid & white.valid & dark.valid
    den = white.values - dark.values
    if white_mode == "mean":
        ok = white.valid & dark.valid
        if not ok.any():
            return ImagePlane(np.zeros(image.shape), np.zeros(image.shape, bool))
        den = np.full(image.shape, den[ok].mean())
    elif white_mode != "resolved":
        raise DomainError(f"unknown white mode {white_mode!r}")
    valid &= np.abs(den) > eps_den
    num = image.values - dark.values
    out = np.divide(num, den, out=np.zeros(image.shape), where=valid)
    return ImagePlane(out, valid)


def calibrate_stack(stack: SpectralStack, white: Sequence[ImagePlane], dark, eps_den: float = 1e-6 * FULL_SCALE,
                    white_mode: str = "resolved") -> SpectralStack:
    """Convert a raw stack to reflectance with one white plane per wavelength.

    The same white lambda-stack is applied to every azimuth.
    """
    if stack.frame != "raw":
        raise DomainError(f"calibration expects a raw stack, got frame {stack.frame!r}")
    if len(white) != stack.grid.count:
        raise DimensionError(f"{len(white)} white planes for {stack.grid.count} wavelengths")
    dark = _as_dark(dark)
    values = np.empty(stack.values.shape, dtype=np.float32)
    valid = np.empty(stack.valid.shape, dtype=bool)
    for i in range(stack.n_angles):
        for j in range(stack.grid.count):
            r = reflectance(stack.plane(i, j), white[j], dark, eps_den, white_mode)
            values[i, j] = r.values
            valid[i, j] = r.valid
    return stack.replace(values=values, valid=valid, frame="reflectance")
