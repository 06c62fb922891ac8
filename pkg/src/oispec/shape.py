"""Photometric stereo with known light directions, and shading removal.

The scaled normal ``k N`` of every pixel solves the linear least-squares
problem ``I_l = (k N) . L_l`` over the lights; its length is the albedo.
Dividing each image by its shading ``N . L_l`` flattens the illumination
fall-off caused by surface tilt.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .colorimetry import luminance
from .core import DimensionError, GeometryError, ImagePlane, SpectralStack, light_vector


@dataclass(frozen=True, eq=False)
class NormalMap:
    """Unit normals (H, W, 3), albedo (H, W), validity mask and fit residual."""

    normals: np.ndarray
    albedo: np.ndarray
    valid: np.ndarray
    residual: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def to_rgb(self) -> np.ndarray:
        """Normals mapped to [0, 1] colours via (n + 1) / 2; invalid pixels black."""
        rgb = (self.normals + 1.0) / 2.0
        return np.where(self.valid[..., None], rgb, 0.0)


def _rank(L) -> int:
    sv = np.linalg.svd(np.asarray(L, dtype=float), compute_uv=False)
    return int((sv > 1e-9).sum())


def solve_normals(images: Sequence[ImagePlane], lights, eps_alb: float | None = None,
                  trim: bool = False) -> NormalMap:
    """Per-pixel least-squares normals from one intensity plane per light.

    ``eps_alb`` defaults to 1e-4 of the largest valid intensity. With ``trim``
    the brightest and darkest valid light are discarded at pixels that have
    at least five valid lights.
    """
    L = np.asarray(lights, dtype=float)
    if L.ndim != 2 or L.shape[1] != 3:
        raise DimensionError(f"lights must be an (n, 3) array, got {L.shape}")
    if len(images) != len(L):
        raise DimensionError(f"{len(images)} images for {len(L)} lights")
    if len(L) < 3 or _rank(L) < 3:
        raise GeometryError("lighting directions span fewer than 3 dimensions")
    I = np.stack([p.values for p in images]).astype(float)
    W = np.stack([p.valid for p in images]).astype(float)
    if eps_alb is None:
        peak = I[W > 0].max() if (W > 0).any() else 0.0
        eps_alb = 1e-4 * peak

    if trim:
        nvalid = W.sum(axis=0)
        big = np.where(W > 0, I, -np.inf).argmax(axis=0)
        small = np.where(W > 0, I, np.inf).argmin(axis=0)
        drop = nvalid >= 5
        idx = np.arange(len(L))[:, None, None]
        W = np.where(drop & ((idx == big) | (idx == small)), 0.0, W)

    # weighted normal equations, batched over pixels
    A = np.einsum("lhw,li,lj->hwij", W, L, L)
    b = np.einsum("lhw,lhw,li->hwi", W, I, L)
    nlights = W.sum(axis=0)
    det = np.linalg.det(A)
    ok = (nlights >= 3) & (np.abs(det) > 1e-9)
    A_safe = np.where(ok[..., None, None], A, np.eye(3))
    g = np.linalg.solve(A_safe, b[..., None])[..., 0]
    g = np.where(ok[..., None], g, 0.0)

    albedo = np.linalg.norm(g, axis=-1)
    ok &= albedo > eps_alb
    n = np.divide(g, albedo[..., None], out=np.zeros_like(g), where=ok[..., None])
    ok &= n[..., 2] > 0

    pred = np.einsum("hwi,li->lhw", g, L)
    dof = np.maximum(nlights, 1.0)
    residual = np.sqrt((W * (I - pred) ** 2).sum(axis=0) / dof)
    n = np.where(ok[..., None], n, 0.0)
    return NormalMap(n, np.where(ok, albedo, 0.0), ok, np.where(ok, residual, 0.0))


def shading_gradient(normals: NormalMap, light, eps_cos: float = 0.05) -> ImagePlane:
    """Per-pixel N . L; self-shadowed or grazing pixels (<= eps_cos) invalid."""
    L = np.asarray(light, dtype=float)
    g = normals.normals @ L
    ok = normals.valid & (g > eps_cos)
    return ImagePlane(np.where(ok, g, 0.0), ok)


def stack_normals(stack: SpectralStack, eps_alb: float | None = None, trim: bool = False,
                  channel: str = "luminance") -> NormalMap:
    """Normals from a registered stack, one scalar image per angle.

    ``channel="luminance"`` uses CIE Y of each lambda stack; ``"mean"`` uses
    the plain average over all wavelengths.
    """
    if channel == "luminance":
        y, yvalid = luminance(stack)
    elif channel == "mean":
        vals = stack.values.astype(float)
        yvalid = stack.valid.all(axis=1)
        y = np.where(yvalid, vals.mean(axis=1), 0.0)
    else:
        raise ValueError(f"unknown channel {channel!r}")
    images = [ImagePlane(y[i], yvalid[i]) for i in range(stack.n_angles)]
    return solve_normals(images, stack.geometry.lighting_matrix(), eps_alb=eps_alb, trim=trim)


def flatten_gradients(stack: SpectralStack, normals: NormalMap, eps_cos: float = 0.05,
                      relative: bool | None = None) -> list[ImagePlane]:
    """Shading plane used to flatten each angle of ``stack``.

    Reflectance frames were already divided by a flat white target lit from
    the same direction, whose shading is cos(polar); for those the gradient
    is taken relative to that, ``N . L / cos(polar)``. ``relative`` forces
    either behaviour.
    """
    if normals.shape != (stack.height, stack.width):
        raise DimensionError(f"normal map {normals.shape} does not match stack {(stack.height, stack.width)}")
    if relative is None:
        relative = stack.frame == "reflectance"
    ref = np.cos(np.radians(stack.geometry.polar_deg)) if relative else 1.0
    out = []
    for b in stack.geometry.azimuths_deg:
        g = shading_gradient(normals, light_vector(stack.geometry.polar_deg, b), eps_cos)
        out.append(ImagePlane(g.values / ref, g.valid))
    return out


def flatten(stack: SpectralStack, normals: NormalMap, eps_cos: float = 0.05,
            relative: bool | None = None) -> SpectralStack:
    """Divide every plane by the shading gradient of its angle."""
    if relative is None:
        relative = stack.frame == "reflectance"
    grads = flatten_gradients(stack, normals, eps_cos, relative)
    g = np.stack([p.values for p in grads])[:, None]
    gv = np.stack([p.valid for p in grads])[:, None]
    valid = stack.valid & gv
    values = np.divide(stack.values.astype(float), g, out=np.zeros(stack.values.shape), where=valid)
    meta = dict(stack.meta, flatten_relative=bool(relative))
    return stack.replace(values=values, valid=valid, frame="flattened", meta=meta)


def reshade(flat: SpectralStack, normals: NormalMap, eps_cos: float = 0.05,
            relative: bool | None = None) -> SpectralStack:
    """Inverse of :func:`flatten` where valid."""
    if relative is None:
        relative = bool(flat.meta.get("flatten_relative", False))
    grads = flatten_gradients(flat, normals, eps_cos, relative)
    g = np.stack([p.values for p in grads])[:, None]
    valid = flat.valid & np.stack([p.valid for p in grads])[:, None]
    return flat.replace(values=np.where(valid, flat.values * g, 0.0), valid=valid)
