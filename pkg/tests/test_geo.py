import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gazemap.geo import BBox, GeoPoint, LocalProjection, bearing_deg, destination, haversine_m, wrap360

lats = st.floats(-80, 80)
lons = st.floats(-179, 179)


def test_geopoint_rejects_out_of_range():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, float("nan"))


def test_bbox_rejects_inverted_but_allows_degenerate():
    BBox(1.0, 2.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        BBox(2.0, 0.0, 1.0, 1.0)


def test_one_degree_of_latitude_is_about_111_km():
    d = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
    assert d == pytest.approx(2 * math.pi * 6_378_137 / 360, rel=1e-9)


@given(lats, lons, st.floats(-2000, 2000), st.floats(-2000, 2000))
def test_projection_round_trip(lat, lon, x, y):
    proj = LocalProjection(GeoPoint(lat, lon))
    p = proj.to_geo(x, y)
    x2, y2 = proj.to_xy(p)
    assert x2 == pytest.approx(x, abs=1e-6)
    assert y2 == pytest.approx(y, abs=1e-6)


@given(lats, lons, st.floats(0, 360), st.floats(1, 500))
def test_projection_distance_matches_haversine_locally(lat, lon, bearing, dist):
    a = GeoPoint(lat, lon)
    b = destination(a, bearing, dist)
    x, y = LocalProjection(a).to_xy(b)
    assert math.hypot(x, y) == pytest.approx(haversine_m(a, b), rel=1e-3)


@given(lats, lons, st.floats(0, 359.9), st.floats(10, 1000))
def test_destination_bearing_consistency(lat, lon, bearing, dist):
    a = GeoPoint(lat, lon)
    b = destination(a, bearing, dist)
    assert haversine_m(a, b) == pytest.approx(dist, rel=1e-9)
    diff = (bearing_deg(a, b) - bearing + 180) % 360 - 180
    assert abs(diff) < 1e-6


@given(st.floats(-1e6, 1e6))
def test_wrap360_range(d):
    w = wrap360(d)
    assert 0.0 <= w < 360.0
    assert math.isclose(math.cos(math.radians(w)), math.cos(math.radians(d)), abs_tol=1e-6)


def test_expanded_grows_by_offset():
    box = BBox(45.0, 7.0, 45.0, 7.0, offset_m=500.0).expanded()
    c = GeoPoint(45.0, 7.0)
    assert haversine_m(c, GeoPoint(box.max_lat, 7.0)) == pytest.approx(500.0, rel=1e-6)
    assert haversine_m(c, GeoPoint(45.0, box.max_lon)) == pytest.approx(500.0, rel=1e-3)
    assert np.isclose(box.center.lat, 45.0)
