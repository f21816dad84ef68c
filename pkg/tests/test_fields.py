import numpy as np
import pytest

from hmflow.errors import HorizonMismatch, ShapeMismatch
from hmflow.fields import MapField, c01_norm, difference_c01, sup_norm
from hmflow.sources import Circle, Sphere2, constant_radius
from hmflow.targets import UnitSphere


def identity_field(n_theta=64, horizon=0.25, n_t=10, radius=1.0):
    c = Circle(constant_radius(radius), n_theta=n_theta, horizon=max(horizon, 1.0))
    h = np.stack([np.cos(c.thetas), np.sin(c.thetas)], axis=-1)
    return MapField.constant_in_time(c, UnitSphere(1), h, horizon, n_t)


def test_c01_norm_constant_map():
    c = Circle(constant_radius(1.0), n_theta=64)
    p0 = np.array([0.3, -0.4])
    vals = np.broadcast_to(p0, (64, 2)).copy()
    f = MapField.constant_in_time(c, UnitSphere(1), vals, 0.5, 5)
    assert c01_norm(f) == pytest.approx(0.5, abs=1e-12)


def test_c01_norm_identity_map():
    assert c01_norm(identity_field()) == pytest.approx(2.0, abs=1e-10)
    assert c01_norm(identity_field(radius=2.0)) == pytest.approx(1.5, abs=1e-10)


def test_difference_c01_and_mismatch():
    a = identity_field()
    b = a.copy()
    b.values[:] *= 0.5
    assert difference_c01(a, b) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(HorizonMismatch):
        difference_c01(a, identity_field(n_t=11))


def test_time_interpolation_linear():
    f = identity_field(n_t=4, horizon=1.0)
    ramp = np.linspace(0.0, 1.0, 5)[:, None, None]
    f = MapField(f.times, f.values * ramp, f.source, f.target)
    sl = f.slice_at(0.375)
    np.testing.assert_allclose(sl, 0.375 * f.values[-1], atol=1e-14)
    # endpoints are returned exactly
    assert f.slice_at(0.0) is f.values[0] or np.array_equal(f.slice_at(0.0), f.values[0])
    np.testing.assert_array_equal(f.slice_at(1.0), f.values[4])


def test_evaluate_spatial_spectral():
    f = identity_field(n_theta=32, n_t=2)
    q = 1.2345
    np.testing.assert_allclose(f.evaluate(0.1, q), [np.cos(q), np.sin(q)],
                               atol=1e-12)


def test_non_finite_rejected():
    f = identity_field()
    bad = f.values.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ShapeMismatch):
        MapField(f.times, bad, f.source, f.target)


def test_sup_norm():
    f = identity_field()
    assert sup_norm(f) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_save_load_roundtrip(tmp_path, fmt):
    f = identity_field(n_theta=16, n_t=3)
    f.values[1] *= 0.9993712345678912  # non-trivial digits
    path = tmp_path / f"field.{fmt}"
    f.save(path, fmt=fmt)
    g = MapField.load(path, f.source, f.target)
    np.testing.assert_array_equal(g.values, f.values)
    np.testing.assert_array_equal(g.times, f.times)
    assert g.horizon == f.horizon


def test_load_extension_sniffing(tmp_path):
    f = identity_field(n_theta=16, n_t=2)
    f.save(tmp_path / "field.csv")          # csv by extension
    f.save(tmp_path / "field.dat")          # binary by default
    a = MapField.load(tmp_path / "field.csv", f.source, f.target)
    b = MapField.load(tmp_path / "field.dat", f.source, f.target)
    np.testing.assert_array_equal(a.values, b.values)


def test_load_rejects_wrong_grid(tmp_path):
    f = identity_field(n_theta=16, n_t=2)
    f.save(tmp_path / "field.csv")
    other = Circle(constant_radius(1.0), n_theta=32)
    with pytest.raises(ShapeMismatch):
        MapField.load(tmp_path / "field.csv", other, f.target)


def test_load_rejects_truncated(tmp_path):
    f = identity_field(n_theta=16, n_t=2)
    p = tmp_path / "field.csv"
    f.save(p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(ShapeMismatch):
        MapField.load(p, f.source, f.target)


def test_sphere_field_roundtrip(tmp_path):
    s = Sphere2(constant_radius(1.0), n_theta=8, n_phi=16)
    vals = s.grid_points()
    f = MapField.constant_in_time(s, UnitSphere(2), vals, 0.1, 2)
    f.save(tmp_path / "f.bin")
    g = MapField.load(tmp_path / "f.bin", s, f.target)
    np.testing.assert_array_equal(g.values, f.values)
    assert g.grid_shape == (8, 16)
