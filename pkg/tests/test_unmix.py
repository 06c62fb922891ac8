import itertools
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.linear_model import orthogonal_mp

from oispec.core import DimensionError, DomainError, IlluminationGeometry, SpectralStack, WavelengthGrid
from oispec.pigments import PIGMENT_NAMES, pigment_dictionary
from oispec.unmix import (
    AbundanceMap,
    DictionaryError,
    SpectralDictionary,
    brute_force_sparse,
    load_dictionary,
    normalize_weights,
    omp,
    omp_batch,
    unmix_stack,
)


def random_dictionary(seed, n=30, m=8):
    return np.abs(np.random.default_rng(seed).normal(size=(n, m))) + 0.05


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_omp_matches_reference_implementation(seed, k):
    D = random_dictionary(seed)
    x = np.random.default_rng(seed + 1).normal(size=D.shape[0])
    norms = np.linalg.norm(D, axis=0)
    ref = orthogonal_mp(D / norms, x, n_nonzero_coefs=k) / norms
    assert np.allclose(omp(x, D, k), ref, atol=1e-9)


def test_orthogonal_dictionary_exact():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(12, 5)))
    D = q * np.array([1.0, 2.0, 0.5, 3.0, 1.5])
    w = np.array([0.0, 0.7, 0.0, -0.2, 0.0])
    c = omp(D @ w, D, 2)
    assert np.allclose(c, w, atol=1e-12)
    assert np.allclose(brute_force_sparse(D @ w, D, 2), w, atol=1e-12)


@given(st.integers(0, 10_000))
def test_history_is_monotone(seed):
    D = random_dictionary(seed)
    X = np.random.default_rng(seed).normal(size=(20, D.shape[0]))
    _, hist = omp_batch(X, D, 4, return_history=True)
    assert np.all(np.diff(hist, axis=1) <= 1e-12)


def test_early_stop_on_exact_fit():
    D = random_dictionary(1)
    x = 0.8 * D[:, 2]
    c, hist = omp_batch(x[None], D, 3, return_history=True)
    assert np.count_nonzero(c) == 1 and c[0, 2] == pytest.approx(0.8)
    assert hist[0, 1] == hist[0, 3]


def test_zero_spectrum_gives_zero_coefficients():
    assert not np.any(omp(np.zeros(30), random_dictionary(0), 2))


@given(st.integers(0, 10_000))
def test_brute_force_is_optimal(seed):
    D = random_dictionary(seed, n=10, m=5)
    x = np.random.default_rng(seed).normal(size=10)
    c = brute_force_sparse(x, D, 2)
    best = min(
        np.linalg.norm(x - D[:, list(S)] @ np.linalg.lstsq(D[:, list(S)], x, rcond=None)[0])
        for S in itertools.combinations(range(5), 2)
    )
    assert np.linalg.norm(x - D @ c) == pytest.approx(best, rel=1e-10)
    # greedy never beats the exhaustive optimum
    assert np.linalg.norm(x - D @ omp(x, D, 2)) >= best - 1e-12


def test_brute_force_ties_prefer_small_then_lexicographic():
    D = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    c = brute_force_sparse(np.array([2.0, 0.0]), D, 2)
    assert c.tolist() == [2.0, 0.0, 0.0]


def test_brute_force_budget_and_errors():
    D = random_dictionary(0, m=20)
    with pytest.raises(DomainError):
        brute_force_sparse(np.ones(30), D, 10, budget=1000)
    with pytest.raises(DomainError):
        brute_force_sparse(np.ones(30), D, 0)
    with pytest.raises(DimensionError):
        brute_force_sparse(np.ones(29), D, 2)
    with pytest.raises(DomainError):
        omp(np.ones(30), D, 21)
    with pytest.raises(DictionaryError):
        omp(np.ones(3), np.zeros((3, 2)), 1)


@given(st.integers(0, 10_000))
def test_normalized_weights_in_unit_interval(seed):
    c = np.random.default_rng(seed).normal(size=(6, 4, 3))
    for norm in ("max", "sum"):
        w = normalize_weights(c, norm)
        assert np.all((w >= 0) & (w <= 1))
        assert np.all(w[c <= 0] == 0)
    w = normalize_weights(c, "max")
    has = (c > 0).any(axis=0)
    assert np.allclose(w.max(axis=0)[has], 1.0)
    s = normalize_weights(c, "sum").sum(axis=0)
    assert np.allclose(s[has], 1.0)
    with pytest.raises(DomainError):
        normalize_weights(c, "l2")


def test_dictionary_validation():
    with pytest.raises(DictionaryError):
        SpectralDictionary((), [1.0], np.zeros((0, 1)))
    with pytest.raises(DictionaryError):
        SpectralDictionary(("a", "a"), [1.0, 2.0], np.ones((2, 2)))
    with pytest.raises(DictionaryError):
        SpectralDictionary(("a", "b"), [1.0, 2.0], [[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DictionaryError):
        SpectralDictionary(("a",), [2.0, 1.0], [[1.0, 1.0]])
    with pytest.raises(DimensionError):
        SpectralDictionary(("a",), [1.0, 2.0], [[1.0, 1.0, 1.0]])


def test_resample_interpolates_and_refuses_extrapolation():
    d = SpectralDictionary(("a",), [400.0, 500.0], [[0.2, 0.6]])
    assert d.resample([450.0]).spectra[0, 0] == pytest.approx(0.4)
    assert d.resample([400.0, 500.0]) is d
    with pytest.raises(DimensionError):
        d.resample([390.0, 450.0])


@pytest.mark.parametrize("suffix", [".csv", ".json"])
def test_dictionary_file_round_trip(tmp_path, suffix):
    d = pigment_dictionary()
    path = tmp_path / f"dict{suffix}"
    (d.to_csv if suffix == ".csv" else d.to_json)(path)
    back = load_dictionary(path)
    assert back.names == d.names
    assert np.array_equal(back.spectra, d.spectra)
    assert np.array_equal(back.wavelengths_nm, d.wavelengths_nm)


def test_dictionary_file_errors(tmp_path):
    with pytest.raises(DictionaryError):
        load_dictionary(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("nm,a\n1,2\n")
    with pytest.raises(DictionaryError):
        load_dictionary(bad)
    bad.write_text("wavelength_nm,a\n1,x\n")
    with pytest.raises(DictionaryError):
        load_dictionary(bad)
    bad = tmp_path / "bad.json"
    bad.write_text('{"atoms": {}}')
    with pytest.raises(DictionaryError):
        load_dictionary(bad)


def test_pigment_dictionary_shape():
    d = pigment_dictionary()
    assert d.names == PIGMENT_NAMES
    assert d.wavelengths_nm[0] == 430.0 and d.wavelengths_nm[-1] == 1000.0
    assert len(d.wavelengths_nm) == 115
    assert np.all((d.spectra > 0) & (d.spectra < 1))


def _cube(values, valid=None):
    n_wl, h, w = values.shape
    grid = WavelengthGrid(430.0, 5.0, n_wl)
    return SpectralStack(grid, IlluminationGeometry.ring(50, 1), values[None].astype(np.float32),
                         valid=None if valid is None else valid[None], frame="diffuse")


def test_unmix_stack_recovers_pixelwise_mixtures():
    d = pigment_dictionary()
    r = np.random.default_rng(0)
    h, w = 6, 7
    truth = np.zeros((len(d), h, w))
    for y in range(h):
        for x in range(w):
            a, b = r.choice(len(d), 2, replace=False)
            truth[[a, b], y, x] = r.uniform(0.3, 0.7, 2)
    cube = np.einsum("an,ahw->nhw", d.spectra, truth)
    valid = np.ones(cube.shape, bool)
    valid[3, 0, 0] = False
    amap = unmix_stack(_cube(cube, valid), d, 2)
    assert not amap.valid[0, 0] and not amap.coefficients[:, 0, 0].any()
    ok = amap.valid
    assert np.array_equal((amap.coefficients != 0)[:, ok], (truth != 0)[:, ok])
    assert np.allclose(amap.coefficients[:, ok], truth[:, ok], atol=1e-5)
    assert amap.support_size.max() == 2
    assert amap["vermilion"].shape == (h, w)


def test_unmix_rejects_multi_angle(small_stack):
    with pytest.raises(DomainError):
        unmix_stack(small_stack, pigment_dictionary(), 2)


def test_nnls_refit_clears_negatives():
    d = pigment_dictionary()
    x = d.spectra[0] - 0.3 * d.spectra[1] + 0.01
    cube = np.repeat(x[:, None, None], 2, axis=2).repeat(2, axis=1)
    a = unmix_stack(_cube(cube), d, 2, nnls=True)
    assert np.all(a.coefficients >= 0)


def test_abundance_map_round_trip(tmp_path):
    d = pigment_dictionary()
    cube = np.einsum("an,ahw->nhw", d.spectra, np.random.default_rng(2).uniform(0, 1, (6, 4, 5)))
    amap = unmix_stack(_cube(cube), d, 2)
    amap.save(tmp_path / "ab")
    back = AbundanceMap.load(tmp_path / "ab")
    assert back.names == amap.names and back.k == 2
    assert np.array_equal(back.valid, amap.valid)
    assert np.allclose(back.weights, amap.weights, atol=1e-6)
    assert np.allclose(back.coefficients, amap.coefficients, rtol=1e-6, atol=1e-7)


def test_ten_thousand_pixels_under_a_second():
    d = pigment_dictionary()
    X = np.random.default_rng(0).uniform(0, 1, (10_000, 6)) @ d.spectra
    omp_batch(X[:100], d.matrix, 2)
    t0 = time.perf_counter()
    omp_batch(X, d.matrix, 2)
    assert time.perf_counter() - t0 < 1.0
