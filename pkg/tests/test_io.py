import json

import numpy as np

from cdilab import io
from cdilab.fields import ScalarField, VectorField
from cdilab.grid import RegionMask

from conftest import disk, square


def test_scalar_csv_round_trip_is_bit_exact(tmp_path, rng):
    g = disk(16)
    v = ScalarField(g, rng.normal(size=(17, 17)) * 1e-7 + np.pi)
    io.write_field_csv(tmp_path / "v.csv", v)
    back = io.read_field_csv(tmp_path / "v.csv")
    assert back.grid == g
    assert np.array_equal(back.values, v.values)


def test_vector_csv_round_trip(tmp_path, rng):
    g = square(8)
    w = VectorField(g, rng.normal(size=(9, 9)), rng.normal(size=(9, 9)))
    io.write_field_csv(tmp_path / "w.csv", w)
    back = io.read_field_csv(tmp_path / "w.csv")
    assert np.array_equal(back.x, w.x) and np.array_equal(back.y, w.y)


def test_csv_header_layout(tmp_path):
    g = square(4)
    io.write_field_csv(tmp_path / "v.csv", ScalarField.constant(g, 1.0))
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "nx,ny,h,shape"
    assert lines[1] == "5,5,0.25,square"
    assert lines[2] == "i,j,x,y,value"
    assert len(lines) == 3 + 25


def test_region_csv_and_pgm(tmp_path):
    g = square(8)
    m = np.zeros((9, 9), dtype=bool)
    m[2:5, 3:6] = True
    side = np.where(m, 2, 0)
    r = RegionMask(g, m, "stability", side)
    io.write_region_csv(tmp_path / "r.csv", r)
    back = io.read_region_csv(tmp_path / "r.csv", g)
    assert np.array_equal(back.mask, m) and np.array_equal(back.side, side)
    io.write_region_pgm(tmp_path / "r.pgm", r)
    img = io.read_pgm(tmp_path / "r.pgm")
    assert img.shape == (9, 9)
    # row 0 of the image is the top (max y)
    assert img[8 - 3, 2] == 170 and img[0, 0] == 96
    io.write_region_pgm(tmp_path / "r2.pgm", r, (RegionMask(g, g.interior),))
    img = io.read_pgm(tmp_path / "r2.pgm")
    assert img[8 - 3, 2] == 255 and img[1, 1] == 170 and img[0, 0] == 96


def test_json_handles_numpy_and_nonfinite(tmp_path):
    io.write_json(tmp_path / "a.json", {"a": np.float64(1.5), "b": np.arange(3), "c": float("nan"), "d": np.bool_(True)})
    d = json.loads((tmp_path / "a.json").read_text())
    assert d == {"a": 1.5, "b": [0, 1, 2], "c": None, "d": True}
