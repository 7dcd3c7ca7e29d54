import numpy as np
import pytest

from splatloc.errors import PlyDataError, PlyFormatError
from splatloc.ply import SH_C0, load_ply, write_ply
from splatloc.scene import SyntheticSpec, generate_synthetic, load_scene


def write_raw(path, props, rows, fmt="binary_little_endian"):
    """PLY writer independent of splatloc.ply, one float per property."""
    dt = np.dtype([(p, "<f4" if fmt == "binary_little_endian" else ">f4") for p in props])
    data = np.zeros(len(rows), dtype=dt)
    for i, row in enumerate(rows):
        for p in props:
            data[p][i] = row.get(p, 0.0)
    header = f"ply\nformat {fmt} 1.0\ncomment test\nelement vertex {len(rows)}\n"
    header += "".join(f"property float {p}\n" for p in props) + "end_header\n"
    path.write_bytes(header.encode() + data.tobytes())


BASE = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
        "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]


def test_activations(tmp_path):
    path = tmp_path / "a.ply"
    write_raw(path, BASE, [{"rot_0": 2.0, "scale_0": np.log(0.5)}])
    scene = load_ply(path)
    np.testing.assert_allclose(scene.colors[0], [0.5, 0.5, 0.5])
    assert scene.opacities[0] == pytest.approx(0.5)
    np.testing.assert_allclose(scene.scales[0], [0.5, 1.0, 1.0], rtol=1e-6)
    np.testing.assert_allclose(scene.rots[0], [1, 0, 0, 0])


def test_color_clamped(tmp_path):
    path = tmp_path / "a.ply"
    write_raw(path, BASE, [{"rot_0": 1.0, "f_dc_0": 10.0, "f_dc_1": -10.0, "f_dc_2": 1.0}])
    scene = load_ply(path)
    np.testing.assert_allclose(scene.colors[0], [1.0, 0.0, 0.5 + SH_C0], rtol=1e-6)


def test_roundtrip_1000(tmp_path):
    scene = generate_synthetic(SyntheticSpec(count=1000, seed=5, opacity_range=(0.01, 0.99)))
    path = tmp_path / "s.ply"
    write_ply(scene, path)
    back = load_ply(path)
    assert len(back) == 1000
    for name in ("means", "rots", "scales", "opacities", "colors"):
        np.testing.assert_allclose(getattr(back, name), getattr(scene, name), atol=1e-6, rtol=0)


def test_standard_layout_with_sh_rest(tmp_path):
    props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    props += [f"f_rest_{i}" for i in range(45)]
    props += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    rows = [
        {"x": 1.0, "y": 2.0, "z": 3.0, "rot_0": 1.0, "f_rest_7": 5.0, "f_dc_1": 1.0, "opacity": 2.0},
        {"x": -1.0, "rot_3": 1.0, "f_rest_44": -3.0},
    ]
    path = tmp_path / "std.ply"
    write_raw(path, props, rows)
    scene = load_scene(path)
    assert len(scene) == 2
    np.testing.assert_allclose(scene.means[0], [1, 2, 3])
    np.testing.assert_allclose(scene.colors[0], [0.5, 0.5 + SH_C0, 0.5], rtol=1e-6)
    assert scene.opacities[0] == pytest.approx(1 / (1 + np.exp(-2.0)), rel=1e-6)
    np.testing.assert_allclose(scene.rots[1], [0, 0, 0, 1])


def test_writer_emits_standard_header(tmp_path):
    scene = generate_synthetic(SyntheticSpec(count=3, seed=0))
    path = tmp_path / "w.ply"
    write_ply(scene, path)
    head = path.read_bytes().split(b"end_header\n")[0].decode()
    assert "format binary_little_endian 1.0" in head
    assert "property float f_rest_44" in head
    assert head.count("property float") == 62


def test_big_endian_accepted(tmp_path):
    path = tmp_path / "be.ply"
    write_raw(path, BASE, [{"x": 1.5, "rot_0": 1.0}], fmt="binary_big_endian")
    assert load_ply(path).means[0, 0] == 1.5


def test_missing_property_named(tmp_path):
    path = tmp_path / "m.ply"
    write_raw(path, [p for p in BASE if p != "scale_1"], [{"rot_0": 1.0}])
    with pytest.raises(PlyFormatError, match="scale_1"):
        load_ply(path)


def test_nonfinite_value_reports_index(tmp_path):
    path = tmp_path / "n.ply"
    write_raw(path, BASE, [{"rot_0": 1.0}, {"rot_0": 1.0}, {"rot_0": 1.0, "y": np.nan}])
    with pytest.raises(PlyDataError, match="vertex 2"):
        load_ply(path)


def test_ascii_rejected(tmp_path):
    path = tmp_path / "a.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nend_header\n")
    with pytest.raises(PlyFormatError):
        load_ply(path)


def test_truncated(tmp_path):
    path = tmp_path / "t.ply"
    write_raw(path, BASE, [{"rot_0": 1.0}] * 3)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(PlyDataError):
        load_ply(path)
