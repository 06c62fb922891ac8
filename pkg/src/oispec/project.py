"""Reductions over the illumination-angle axis.

Scattering from outside the focal plane can only add light to a pixel, so the
per-wavelength minimum over angles estimates the direct diffuse reflectance
and the max-minus-min difference isolates the extra scatter.
"""
from __future__ import annotations

import numpy as np

from .core import DomainError, IlluminationGeometry, SpectralStack

_KIND_FRAME = {"min": "diffuse", "max": "maximum", "avg": "average", "diff": "difference"}


def _collapse(stack: SpectralStack, values, valid, kind) -> SpectralStack:
    geometry = IlluminationGeometry(stack.geometry.polar_deg, (0.0,))
    meta = dict(stack.meta, projection=kind, source_azimuths_deg=list(stack.geometry.azimuths_deg))
    return SpectralStack(stack.grid, geometry, values[None], valid[None], frame=_KIND_FRAME[kind],
                         center=stack.center, meta=meta)


def _any_valid(stack):
    return stack.valid.any(axis=0)


def min_projection(stack: SpectralStack, rank: int = 1) -> SpectralStack:
    """Per pixel and wavelength, the minimum over valid angles.

    ``rank=r`` takes the r-th smallest valid value instead (a soft minimum
    that resists negative noise excursions); pixels with fewer than ``r``
    valid angles fall back to their largest valid value.
    """
    if rank < 1:
        raise DomainError("rank must be >= 1")
    if rank == 1:
        vals = np.where(stack.valid, stack.values, np.inf).min(axis=0)
    else:
        ordered = np.sort(np.where(stack.valid, stack.values, np.inf), axis=0)
        nvalid = stack.valid.sum(axis=0)
        pick = np.clip(np.minimum(rank, nvalid) - 1, 0, None)
        vals = np.take_along_axis(ordered, pick[None], axis=0)[0]
    ok = _any_valid(stack)
    return _collapse(stack, np.where(ok, vals, 0.0), ok, "min")


def max_projection(stack: SpectralStack) -> SpectralStack:
    vals = np.where(stack.valid, stack.values, -np.inf).max(axis=0)
    ok = _any_valid(stack)
    return _collapse(stack, np.where(ok, vals, 0.0), ok, "max")


def avg_projection(stack: SpectralStack) -> SpectralStack:
    n = stack.valid.sum(axis=0)
    # sorted accumulation makes the result independent of angle order
    total = np.sort(np.where(stack.valid, stack.values.astype(float), 0.0), axis=0).sum(axis=0)
    ok = n > 0
    vals = np.divide(total, n, out=np.zeros(total.shape), where=ok)
    # float32 rounding can push the mean just outside [min, max]
    lo = np.where(stack.valid, stack.values, np.inf).min(axis=0)
    hi = np.where(stack.valid, stack.values, -np.inf).max(axis=0)
    vals = np.where(ok, np.clip(vals.astype(np.float32), lo, hi), 0.0)
    return _collapse(stack, vals, ok, "avg")


def difference_image(stack: SpectralStack) -> SpectralStack:
    """Max minus min over valid angles."""
    if stack.n_angles < 2:
        raise DomainError("difference image needs at least 2 angles")
    hi = max_projection(stack)
    lo = min_projection(stack)
    ok = hi.valid[0]
    vals = np.where(ok, hi.values[0].astype(float) - lo.values[0].astype(float), 0.0)
    return _collapse(stack, vals, ok, "diff")


def project(stack: SpectralStack, kind: str, rank: int = 1) -> SpectralStack:
    if kind == "min":
        return min_projection(stack, rank)
    if kind == "max":
        return max_projection(stack)
    if kind == "avg":
        return avg_projection(stack)
    if kind == "diff":
        return difference_image(stack)
    raise DomainError(f"unknown projection kind {kind!r}")
