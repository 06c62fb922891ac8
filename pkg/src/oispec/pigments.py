"""Synthetic reference reflectance spectra for six artists' pigments.

The curves are smooth analytic stand-ins built from logistic edges and
Gaussian bands placed where the real pigments have their characteristic
features: the ultramarine blue band and NIR rise, the sharp cadmium yellow and
vermilion edges, the paired madder absorptions near 510/540 nm, and the dark,
flat Prussian blue with its late NIR rise. Edge positions, widths and NIR
levels were tuned so that every pair of atoms stays distinguishable by greedy
2-sparse pursuit. They are meant for simulation and testing, not for
identifying real samples.
"""
from __future__ import annotations

import numpy as np

WAVELENGTHS_NM = np.arange(430.0, 1000.0 + 1e-9, 5.0)

PIGMENT_NAMES = ("ultramarine", "cadmium yellow", "vermilion", "madder lake", "zinc white", "Prussian blue")


def _edge(wl, center, width):
    return 1.0 / (1.0 + np.exp(-(wl - center) / width))


def _band(wl, center, sigma):
    return np.exp(-0.5 * ((wl - center) / sigma) ** 2)


def pigment_spectrum(name: str, wavelengths_nm=WAVELENGTHS_NM) -> np.ndarray:
    wl = np.asarray(wavelengths_nm, dtype=float)
    if name == "ultramarine":
        nir = 0.3783 * (_edge(wl, 743.78, 25) - 0.2908 * _edge(wl, 961.36, 30))
        return 0.0268 + 0.3879 * _band(wl, 442.18, 31.90) + nir
    if name == "cadmium yellow":
        return 0.0468 + 0.5359 * (_edge(wl, 513.43, 10.076) - 0.7458 * _edge(wl, 991.63, 30))
    if name == "vermilion":
        return 0.0518 + 0.6264 * (_edge(wl, 595.94, 9.739) - 0.6722 * _edge(wl, 655.06, 30))
    if name == "madder lake":
        base = 0.0614 + 0.0628 * _band(wl, 415, 25) + 0.4698 * (_edge(wl, 606.40, 11.18) - 0.6180 * _edge(wl, 723.05, 30))
        return base - 0.0360 * (_band(wl, 510, 9) + 1.2 * _band(wl, 543, 10))
    if name == "zinc white":
        return 0.9203 - 0.1936 * (wl - 430.0) / 570.0
    if name == "Prussian blue":
        return 0.0315 + 0.0317 * _band(wl, 470, 35) + 0.4240 * _edge(wl, 736.01, 25.14)
    raise KeyError(f"unknown pigment {name!r}")


def pigment_dictionary(wavelengths_nm=WAVELENGTHS_NM, names=PIGMENT_NAMES):
    """:class:`~oispec.unmix.SpectralDictionary` of the synthetic pigments."""
    from .unmix import SpectralDictionary

    wl = np.asarray(wavelengths_nm, dtype=float)
    return SpectralDictionary(tuple(names), wl, np.stack([pigment_spectrum(n, wl) for n in names]))
