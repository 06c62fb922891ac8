"""Per-pixel sparse unmixing over a dictionary of reference spectra.

Each diffuse spectrum ``x`` is approximated as ``D w`` with at most K
non-zero weights, found greedily by orthogonal matching pursuit.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _parallel
from .core import DimensionError, DomainError, SpectralError, SpectralStack


class DictionaryError(SpectralError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralDictionary:
    """Named reference spectra sampled on a shared wavelength axis.

    ``spectra`` has shape (n_atoms, n_wavelengths).
    """

    names: tuple[str, ...]
    wavelengths_nm: np.ndarray
    spectra: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        wl = np.asarray(self.wavelengths_nm, dtype=float)
        spectra = np.atleast_2d(np.asarray(self.spectra, dtype=float))
        if not names:
            raise DictionaryError("dictionary has no atoms")
        if len(set(names)) != len(names):
            raise DictionaryError(f"atom names are not unique: {names}")
        if spectra.shape != (len(names), wl.size):
            raise DimensionError(f"spectra shape {spectra.shape} != ({len(names)}, {wl.size})")
        if wl.size > 1 and np.any(np.diff(wl) <= 0):
            raise DictionaryError("wavelengths must be strictly increasing")
        norms = np.linalg.norm(spectra, axis=1)
        if np.any(~(norms > 0)):
            raise DictionaryError(f"atoms with zero norm: {[n for n, v in zip(names, norms) if not v > 0]}")
        for name, arr in (("wavelengths_nm", wl), ("spectra", spectra)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_norms", norms)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def matrix(self) -> np.ndarray:
        """(n_wavelengths, n_atoms) matrix D."""
        return self.spectra.T

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    def resample(self, wavelengths_nm) -> "SpectralDictionary":
        """Linear interpolation onto new wavelengths; no extrapolation."""
        target = np.asarray(getattr(wavelengths_nm, "wavelengths", wavelengths_nm), dtype=float)
        lo, hi = self.wavelengths_nm[0], self.wavelengths_nm[-1]
        if target.min() < lo - 1e-9 or target.max() > hi + 1e-9:
            raise DimensionError(
                f"target range {target.min():g}-{target.max():g} nm exceeds dictionary support {lo:g}-{hi:g} nm")
        if target.shape == self.wavelengths_nm.shape and np.allclose(target, self.wavelengths_nm, atol=1e-9):
            return self
        spectra = np.stack([np.interp(target, self.wavelengths_nm, s) for s in self.spectra])
        return SpectralDictionary(self.names, target, spectra)

    def subset(self, names) -> "SpectralDictionary":
        idx = [self.names.index(n) for n in names]
        return SpectralDictionary(tuple(names), self.wavelengths_nm, self.spectra[idx])

    # -- files ---------------------------------------------------------------

    @classmethod
    def from_csv(cls, path) -> "SpectralDictionary":
        with open(path, newline="") as f:
            rows = [r for r in csv.reader(f) if r]
        if not rows or rows[0][0].strip() != "wavelength_nm" or len(rows[0]) < 2:
            raise DictionaryError(f"{path}: first column must be 'wavelength_nm' followed by atom columns")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]])
        except ValueError as exc:
            raise DictionaryError(f"{path}: non-numeric entry: {exc}") from exc
        if data.ndim != 2 or data.shape[1] != len(rows[0]):
            raise DictionaryError(f"{path}: ragged rows")
        return cls(tuple(h.strip() for h in rows[0][1:]), data[:, 0], data[:, 1:].T)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["wavelength_nm", *self.names])
            for i, wl in enumerate(self.wavelengths_nm):
                w.writerow([repr(float(wl)), *(repr(float(v)) for v in self.spectra[:, i])])

    @classmethod
    def from_json(cls, path) -> "SpectralDictionary":
        try:
            doc = json.loads(Path(path).read_text())
            atoms = doc["atoms"]
            return cls(tuple(atoms), doc["wavelength_nm"], [atoms[n] for n in atoms])
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DictionaryError(f"{path}: expected {{'wavelength_nm': [...], 'atoms': {{name: [...]}}}}") from exc

    def to_json(self, path) -> None:
        doc = {"wavelength_nm": self.wavelengths_nm.tolist(),
               "atoms": {n: s.tolist() for n, s in zip(self.names, self.spectra)}}
        Path(path).write_text(json.dumps(doc, indent=1))


def load_dictionary(path) -> SpectralDictionary:
    path = Path(path)
    if not path.exists():
        raise DictionaryError(f"dictionary file not found: {path}")
    if path.suffix.lower() == ".json":
        return SpectralDictionary.from_json(path)
    return SpectralDictionary.from_csv(path)


def _as_matrix(dictionary) -> np.ndarray:
    if isinstance(dictionary, SpectralDictionary):
        return dictionary.matrix
    D = np.asarray(dictionary, dtype=float)
    if D.ndim != 2 or D.shape[1] == 0:
        raise DictionaryError("dictionary matrix must be (n_wavelengths, n_atoms) with at least one atom")
    if np.any(~(np.linalg.norm(D, axis=0) > 0)):
        raise DictionaryError("dictionary has a zero-norm atom")
    return D


def omp_batch(X, D, k: int, eps_res: float = 1e-8, return_history: bool = False):
    """Orthogonal matching pursuit for many spectra at once.

    ``X`` is (n_pixels, n_wavelengths), ``D`` is (n_wavelengths, n_atoms).
    Returns (n_pixels, n_atoms) coefficients for the un-normalised atoms, and
    with ``return_history`` also the residual norm after each step, shape
    (n_pixels, k + 1), with steps skipped by early stopping repeating the
    final value.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = np.asarray(D, dtype=float)
    if X.shape[1] != D.shape[0]:
        raise DimensionError(f"spectra have {X.shape[1]} samples, dictionary has {D.shape[0]}")
    n_atoms = D.shape[1]
    if not 1 <= k <= n_atoms:
        raise DomainError(f"sparsity must lie in [1, {n_atoms}], got {k}")
    norms = np.linalg.norm(D, axis=0)
    Dn = D / norms
    P = X.shape[0]

    R = X.copy()
    xnorm = np.linalg.norm(X, axis=1)
    tol = eps_res * xnorm
    support = np.zeros((P, k), dtype=int)
    z = np.zeros((P, k))
    size = np.zeros(P, dtype=int)
    chosen = np.zeros((P, n_atoms), dtype=bool)
    history = np.empty((P, k + 1))
    history[:, 0] = xnorm
    rnorm = xnorm.copy()

    for t in range(k):
        active = (rnorm > tol) & (xnorm > 0)
        if active.any():
            idx = np.nonzero(active)[0]
            corr = np.abs(R[idx] @ Dn)
            corr[chosen[idx]] = -np.inf
            j = np.argmax(corr, axis=1)
            support[idx, t] = j
            chosen[idx, j] = True
            size[idx] = t + 1
            S = support[idx, : t + 1]
            A = Dn.T[S]                                    # (p, t+1, n)
            G = A @ A.transpose(0, 2, 1)
            rhs = A @ X[idx, :, None]
            zi = np.linalg.solve(G, rhs)[..., 0]
            z[idx, : t + 1] = zi
            R[idx] = X[idx] - np.einsum("ps,psn->pn", zi, A)
            rnorm[idx] = np.linalg.norm(R[idx], axis=1)
        history[:, t + 1] = rnorm

    coef = np.zeros((P, n_atoms))
    rows = np.repeat(np.arange(P), k)
    cols = support.ravel()
    used = (np.arange(k)[None, :] < size[:, None]).ravel()
    coef[rows[used], cols[used]] = z.ravel()[used] / norms[cols[used]]
    if return_history:
        return coef, history
    return coef


def omp(spectrum, dictionary, k_sparsity: int, eps_res: float = 1e-8) -> np.ndarray:
    """Sparse coefficients (one per atom) for a single spectrum."""
    D = _as_matrix(dictionary)
    x = np.asarray(spectrum, dtype=float)
    if x.ndim != 1:
        raise DimensionError("spectrum must be 1-D")
    return omp_batch(x[None], D, k_sparsity, eps_res)[0]


def brute_force_sparse(spectrum, dictionary, k_sparsity: int, budget: int = 100_000) -> np.ndarray:
    """Globally optimal support of size <= k by exhaustive search.

    Residuals equal to within 1e-12 of the spectrum norm count as ties; ties
    go to the smaller support, then the lexicographically smallest one.
    """
    D = _as_matrix(dictionary)
    x = np.asarray(spectrum, dtype=float)
    if x.shape != (D.shape[0],):
        raise DimensionError(f"spectrum has shape {x.shape}, dictionary has {D.shape[0]} samples")
    m = D.shape[1]
    if not 1 <= k_sparsity <= m:
        raise DomainError(f"sparsity must lie in [1, {m}], got {k_sparsity}")
    n_subsets = sum(math.comb(m, s) for s in range(1, k_sparsity + 1))
    if n_subsets > budget:
        raise DomainError(f"{n_subsets} candidate supports exceed the budget of {budget}")

    tie = 1e-12 * max(np.linalg.norm(x), 1e-300)
    best = None
    for s in range(1, k_sparsity + 1):
        for S in itertools.combinations(range(m), s):
            cols = list(S)
            w, *_ = np.linalg.lstsq(D[:, cols], x, rcond=None)
            r = float(np.linalg.norm(x - D[:, cols] @ w))
            if best is None or r < best[0] - tie:
                best = (r, cols, w)
    coef = np.zeros(m)
    coef[best[1]] = best[2]
    return coef


def residual_norm(spectrum, dictionary, coef) -> float:
    D = _as_matrix(dictionary)
    return float(np.linalg.norm(np.asarray(spectrum, float) - D @ coef))


def _nnls_refit(X, D, coef):
    from scipy.optimize import nnls

    out = np.zeros_like(coef)
    for p in range(X.shape[0]):
        cols = np.nonzero(coef[p])[0]
        if cols.size:
            out[p, cols], _ = nnls(D[:, cols], X[p])
    return out


def normalize_weights(coef, norm: str = "max") -> np.ndarray:
    """Clamp negative coefficients to zero, then scale each pixel to [0, 1].

    ``coef`` has atoms on the first axis. ``"max"`` divides by the per-pixel
    largest weight, ``"sum"`` by the per-pixel total.
    """
    w = np.clip(np.asarray(coef, dtype=float), 0.0, None)
    if norm == "max":
        scale = w.max(axis=0)
    elif norm == "sum":
        scale = w.sum(axis=0)
    else:
        raise DomainError(f"unknown normalisation {norm!r}")
    return np.divide(w, scale, out=np.zeros_like(w), where=scale > 0)


@dataclass(frozen=True, eq=False)
class AbundanceMap:
    """Per-atom coefficient and normalised weight images, shape (n_atoms, H, W)."""

    names: tuple[str, ...]
    coefficients: np.ndarray
    weights: np.ndarray
    valid: np.ndarray
    k: int
    norm: str = "max"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[self.names.index(name)]

    @property
    def support_size(self) -> np.ndarray:
        return (self.coefficients != 0).sum(axis=0)

    def save(self, directory) -> Path:
        from .io import save_png, write_f32

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        atoms = []
        for i, name in enumerate(self.names):
            stem = f"{i:02d}_" + "".join(c if c.isalnum() else "_" for c in name)
            write_f32(directory / f"{stem}.f32", self.weights[i])
            write_f32(directory / f"{stem}.coef.f32", self.coefficients[i])
            save_png(directory / f"{stem}.png", self.weights[i])
            atoms.append({"name": name, "weights": f"{stem}.f32", "coefficients": f"{stem}.coef.f32",
                          "preview": f"{stem}.png"})
        np.ascontiguousarray(self.valid, dtype=np.uint8).tofile(directory / "valid.mask")
        doc = {"width": int(self.valid.shape[1]), "height": int(self.valid.shape[0]), "k": self.k,
               "norm": self.norm, "atoms": atoms, "mask": "valid.mask"}
        (directory / "abundances.json").write_text(json.dumps(doc, indent=1))
        return directory / "abundances.json"

    @classmethod
    def load(cls, directory) -> "AbundanceMap":
        from .io import read_f32

        directory = Path(directory)
        doc = json.loads((directory / "abundances.json").read_text())
        h, w = doc["height"], doc["width"]
        names = tuple(a["name"] for a in doc["atoms"])
        weights = np.stack([read_f32(directory / a["weights"], h, w) for a in doc["atoms"]]).astype(float)
        coefs = np.stack([read_f32(directory / a["coefficients"], h, w) for a in doc["atoms"]]).astype(float)
        valid = np.fromfile(directory / doc["mask"], dtype=np.uint8).reshape(h, w).astype(bool)
        return cls(names, coefs, weights, valid, int(doc["k"]), doc.get("norm", "max"))


def unmix_stack(stack: SpectralStack, dictionary: SpectralDictionary, k_sparsity: int = 2,
                nnls: bool = False, norm: str = "max", eps_res: float = 1e-8,
                chunk: int = 4096) -> AbundanceMap:
    """OMP on every valid pixel of a single-angle (diffuse) stack.

    Invalid pixels get all-zero abundances and are flagged in ``valid``.
    """
    if stack.n_angles != 1:
        raise DomainError(f"unmixing expects a single-angle stack, got {stack.n_angles} angles")
    d = dictionary.resample(stack.grid.wavelengths)
    D = d.matrix
    h, w = stack.height, stack.width
    X = stack.values[0].reshape(stack.grid.count, -1).T.astype(float)
    ok = stack.valid[0].all(axis=0).ravel()
    idx = np.nonzero(ok)[0]
    chunks = [idx[i:i + chunk] for i in range(0, idx.size, chunk)]

    def solve(sel):
        c = omp_batch(X[sel], D, k_sparsity, eps_res)
        if nnls:
            c = _nnls_refit(X[sel], D, c)
        return c

    coef = np.zeros((h * w, len(d)))
    for sel, c in zip(chunks, _parallel.map_ordered(solve, chunks)):
        coef[sel] = c
    coef = coef.T.reshape(len(d), h, w)
    return AbundanceMap(d.names, coef, normalize_weights(coef, norm), ok.reshape(h, w), k_sparsity, norm)
