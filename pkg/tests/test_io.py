import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oispec.core import DimensionError, DomainError, ImagePlane
from oispec.io import (
    FrameReadError,
    ManifestError,
    MissingFrameError,
    load_mask_png,
    load_normals,
    load_references,
    load_stack,
    read_f32,
    read_manifest,
    read_pgm,
    save_normals,
    save_png,
    save_stack,
    write_f32,
    write_pgm,
)
from oispec.shape import NormalMap

from conftest import make_stack


def test_pgm_bytes_are_big_endian(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.array([[1, 258]]))
    data = (tmp_path / "a.pgm").read_bytes()
    assert data == b"P5\n2 1\n65535\n" + bytes([0, 1, 1, 2])


def test_pgm_reader_accepts_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n# depth\n65535\n" + bytes([0, 7, 255, 255]))
    assert read_pgm(p).tolist() == [[7, 65535]]


def test_pgm_reader_rejects_garbage(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FrameReadError):
        read_pgm(p)
    p.write_bytes(b"P5\n4 4\n65535\n\x00\x01")
    with pytest.raises(FrameReadError):
        read_pgm(p)


@given(arrays(np.uint16, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_pgm_round_trip(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(p, a)
    assert np.array_equal(read_pgm(p), a)


@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_f32_round_trip(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("f32") / "x.f32"
    write_f32(p, a)
    assert np.array_equal(read_f32(p, *a.shape), a)


def test_f32_size_mismatch(tmp_path):
    write_f32(tmp_path / "x.f32", np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        read_f32(tmp_path / "x.f32", 3, 3)


def test_stack_round_trip_is_lossless(tmp_path):
    s = make_stack(valid=None, center=(1.25, 2.0), meta={"note": "x"})
    valid = np.ones(s.values.shape, bool)
    valid[1, 2, 0, 0] = False
    s = s.replace(valid=valid)
    save_stack(s, tmp_path / "cube")
    back = load_stack(tmp_path / "cube")
    assert np.array_equal(back.values, s.values)
    assert np.array_equal(back.valid, s.valid)
    assert back.center == (1.25, 2.0)
    assert back.meta == {"note": "x"}
    assert back.frame == "reflectance"


def test_raw_stack_rejects_fractional_counts(tmp_path):
    with pytest.raises(DomainError):
        save_stack(make_stack(frame="raw"), tmp_path / "raw")


def test_raw_stack_uses_pgm(tmp_path):
    s = make_stack(frame="raw")
    s = s.replace(values=np.round(s.values * 60000))
    save_stack(s, tmp_path / "raw")
    doc, _ = read_manifest(tmp_path / "raw")
    assert all(e["path"].endswith(".pgm") for e in doc["files"])
    assert np.array_equal(load_stack(tmp_path / "raw").values, s.values)


def _drop_entry(path, azimuth, wavelength):
    doc = json.loads(path.read_text())
    doc["files"] = [e for e in doc["files"] if not (e["azimuth_deg"] == azimuth and e["wavelength_nm"] == wavelength)]
    path.write_text(json.dumps(doc))


def test_missing_frame_names_the_pair(tmp_path):
    s = make_stack()
    m = save_stack(s, tmp_path / "cube")
    _drop_entry(m, 120.0, 510.0)
    with pytest.raises(MissingFrameError, match=r"beta=120, lambda=510") as err:
        load_stack(m)
    assert err.value.missing == [(120.0, 510.0)]
    partial = load_stack(m, allow_missing=True)
    assert not partial.valid[1, 1].any()
    assert partial.valid[0].all()


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"width": 1}))
    with pytest.raises(ManifestError, match="height"):
        read_manifest(tmp_path)


def test_unknown_azimuth_rejected(tmp_path):
    m = save_stack(make_stack(), tmp_path / "cube")
    doc = json.loads(m.read_text())
    doc["files"][0]["azimuth_deg"] = 7.0
    m.write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_stack(m)


def test_references_round_trip(tmp_path):
    s = make_stack(frame="raw")
    white = [ImagePlane(np.full((6, 5), 1000.0 + j)) for j in range(4)]
    darks = [ImagePlane(np.full((6, 5), 10.0 + k)) for k in range(3)]
    m = save_stack(s.replace(values=np.round(s.values * 100)), tmp_path / "c", {"white": white, "dark": darks})
    w = load_references(m, "white")
    d = load_references(m, "dark")
    assert [p.values[0, 0] for p in w] == [1000, 1001, 1002, 1003]
    assert [p.values[0, 0] for p in d] == [10, 11, 12]
    m2 = save_stack(s.replace(frame="reflectance"), tmp_path / "noref")
    with pytest.raises(ManifestError):
        load_references(m2, "white")


def test_normals_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    n = rng.normal(size=(4, 5, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    valid = rng.random((4, 5)) > 0.2
    nm = NormalMap(n.astype(np.float32).astype(float), rng.random((4, 5)).astype(np.float32).astype(float), valid)
    p = save_normals(nm, tmp_path / "n" / "normals.bin")
    back = load_normals(p)
    assert np.array_equal(back.normals, nm.normals)
    assert np.array_equal(back.albedo, nm.albedo)
    assert np.array_equal(back.valid, valid)


def test_png_mask_round_trip(tmp_path):
    m = np.zeros((5, 7))
    m[1:3, 2:6] = 1.0
    save_png(tmp_path / "m.png", m)
    assert np.array_equal(load_mask_png(tmp_path / "m.png"), m > 0)
    with pytest.raises(FrameReadError):
        load_mask_png(tmp_path / "missing.png")
