import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobclust.preprocess import (PoiIndex, RawTrajectory, StayPoint, TrajectoryError,
                                 build_context_vector, build_dataset, detect_stay_points,
                                 haversine_m, read_plt, read_poi_csv, read_type_dictionary,
                                 sum_representation, write_type_dictionary)

LAT0, LON0 = 39.98, 116.32
M_PER_DEG_LAT = 111_195.0


def offset(dn_m, de_m, lat=LAT0, lon=LON0):
    """Point displaced dn meters north and de meters east (small offsets)."""
    return (lat + dn_m / M_PER_DEG_LAT,
            lon + de_m / (M_PER_DEG_LAT * math.cos(math.radians(lat))))


def dwell(n, t0, span_s, radius_m, rng, center=(0.0, 0.0)):
    ts = t0 + np.linspace(0, span_s, n)
    r = radius_m * np.sqrt(rng.random(n))
    a = rng.random(n) * 2 * np.pi
    return [(*offset(center[0] + rr * np.sin(aa), center[1] + rr * np.cos(aa)), t)
            for rr, aa, t in zip(r, a, ts)]


# -- brute-force stay-point oracle --------------------------------------------

def brute_force_stay_points(points, duration, radius):
    """Enumerate every window [i, j] independently: a window qualifies when all
    members are within ``radius`` of both the first point and the members'
    centroid.  From each anchor (earliest first) the longest qualifying
    window is taken if it spans ``duration``; scanning resumes after it."""
    lat = np.array([p[0] for p in points])
    lon = np.array([p[1] for p in points])
    t = np.array([p[2] for p in points])
    n = len(points)

    def ok(i, j):
        if j > i and not all(haversine_m(lat[i], lon[i], lat[k], lon[k]) <= radius
                             for k in range(i, j + 1)):
            return False
        cl, cn = lat[i:j + 1].mean(), lon[i:j + 1].mean()
        return all(haversine_m(cl, cn, lat[k], lon[k]) <= radius for k in range(i, j + 1))

    def prefix_ok(i, j):
        return all(haversine_m(lat[i], lon[i], lat[k], lon[k]) <= radius for k in range(i, j + 1))

    out, i = [], 0
    while i < n:
        reach = max(j for j in range(i, n) if prefix_ok(i, j))
        best = max(j for j in range(i, reach + 1) if ok(i, j))
        if t[best] - t[i] >= duration:
            out.append((i, best, lat[i:best + 1].mean(), lon[i:best + 1].mean()))
            i = best + 1
        else:
            i += 1
    return out


def as_tuples(sps):
    return [(s.first, s.last, s.lat, s.lon) for s in sps]


def test_single_dwell_is_one_stay_point_at_centroid(rng):
    pts = dwell(10, 0.0, 30 * 60, 50.0, rng)
    traj = RawTrajectory.from_points(pts)
    sps = detect_stay_points(traj, 20 * 60, 200)
    assert len(sps) == 1
    assert as_tuples(sps) == brute_force_stay_points(pts, 20 * 60, 200)
    assert sps[0].lat == pytest.approx(np.mean([p[0] for p in pts]), abs=1e-12)
    assert sps[0].lon == pytest.approx(np.mean([p[1] for p in pts]), abs=1e-12)


def test_empty_trajectory_gives_no_stay_points():
    assert detect_stay_points(RawTrajectory.from_points([]), 1200, 200) == []


def test_two_dwells_with_transit(rng):
    a = dwell(12, 0.0, 30 * 60, 60.0, rng)
    transit = [(*offset(500.0 * k, 0.0), 30 * 60 + 60.0 * k) for k in range(1, 10)]
    b = dwell(12, 40 * 60, 30 * 60, 60.0, rng, center=(5000.0, 0.0))
    pts = a + transit + b
    sps = detect_stay_points(RawTrajectory.from_points(pts), 20 * 60, 200)
    assert len(sps) == 2
    assert as_tuples(sps) == brute_force_stay_points(pts, 20 * 60, 200)


@st.composite
def wandering(draw):
    n = draw(st.integers(1, 25))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    steps = rng.normal(scale=draw(st.sampled_from([20.0, 80.0, 200.0])), size=(n, 2)).cumsum(axis=0)
    dt = rng.integers(30, 400, size=n).cumsum().astype(float)
    return [(*offset(dn, de), t) for (dn, de), t in zip(steps, dt)]


@settings(max_examples=80, deadline=None)
@given(wandering(), st.sampled_from([300.0, 900.0, 1200.0]), st.sampled_from([100.0, 200.0]))
def test_matches_brute_force_oracle(points, duration, radius):
    sps = detect_stay_points(RawTrajectory.from_points(points), duration, radius)
    expected = brute_force_stay_points(points, duration, radius)
    assert [(s.first, s.last) for s in sps] == [(e[0], e[1]) for e in expected]
    for s, e in zip(sps, expected):
        assert s.lat == pytest.approx(e[2], abs=1e-12) and s.lon == pytest.approx(e[3], abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(wandering(), st.sampled_from([300.0, 1200.0]), st.sampled_from([100.0, 200.0]))
def test_stay_points_are_sound(points, duration, radius):
    traj = RawTrajectory.from_points(points)
    sps = detect_stay_points(traj, duration, radius)
    for s in sps:
        assert s.departure - s.arrival >= duration
        d = haversine_m(s.lat, s.lon, traj.lat[s.first:s.last + 1], traj.lon[s.first:s.last + 1])
        assert d.max() <= radius
    # ordered and non-overlapping in time
    for a, b in zip(sps, sps[1:]):
        assert a.departure < b.arrival


def test_invalid_coordinates_are_rejected_with_location():
    with pytest.raises(TrajectoryError) as info:
        RawTrajectory.from_points([(10.0, 10.0, 0.0), (95.0, 10.0, 1.0)])
    assert info.value.index == 1
    with pytest.raises(TrajectoryError) as info:
        RawTrajectory.from_points([(10.0, 10.0, 0.0), (10.0, 200.0, 1.0)])
    assert info.value.index == 1


def test_non_increasing_time_rejected():
    with pytest.raises(TrajectoryError) as info:
        RawTrajectory.from_points([(0, 0, 0.0), (0, 0, 5.0), (0, 0, 5.0)])
    assert info.value.index == 2


def test_thresholds_must_be_positive():
    traj = RawTrajectory.from_points([(0.0, 0.0, 0.0)])
    with pytest.raises(ValueError):
        detect_stay_points(traj, 0, 100)
    with pytest.raises(ValueError):
        detect_stay_points(traj, 100, -1)


# -- context vectors ----------------------------------------------------------

def stay_at(lat=LAT0, lon=LON0):
    return StayPoint(lat, lon, 0.0, 1.0, 0, 0)


def test_context_vector_counts_types_within_radius():
    near = [offset(50, 0), offset(0, 120), offset(-100, -100), offset(10, 10)]
    far = [offset(1000, 0), offset(0, -900)]
    poi = PoiIndex(np.array([p[0] for p in near + far]), np.array([p[1] for p in near + far]),
                   np.array([2, 2, 2, 5, 2, 7]), 10)
    v = build_context_vector(stay_at(), poi, 300.0)
    expected = np.zeros(10, dtype=np.int64)
    expected[2], expected[5] = 3, 1
    np.testing.assert_array_equal(v, expected)


def test_context_vector_empty_neighbourhood_is_zero():
    poi = PoiIndex(np.array([offset(5000, 0)[0]]), np.array([LON0]), np.array([1]), 4)
    np.testing.assert_array_equal(build_context_vector(stay_at(), poi, 300.0), np.zeros(4))


def test_poi_exactly_at_radius_is_counted():
    lat, lon = offset(250.0, 0.0)
    poi = PoiIndex(np.array([lat]), np.array([lon]), np.array([0]), 1)
    d = float(haversine_m(LAT0, LON0, lat, lon))
    assert build_context_vector(stay_at(), poi, d)[0] == 1
    assert build_context_vector(stay_at(), poi, np.nextafter(d, 0))[0] == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 60), st.floats(50, 2000))
def test_context_totals_match_brute_force(seed, n_poi, radius):
    rng = np.random.default_rng(seed)
    pts = [offset(*rng.uniform(-2500, 2500, 2)) for _ in range(n_poi)]
    types = rng.integers(0, 6, n_poi)
    poi = PoiIndex(np.array([p[0] for p in pts]), np.array([p[1] for p in pts]), types, 6)
    v = build_context_vector(stay_at(), poi, radius)
    expected = np.zeros(6, dtype=np.int64)
    for (la, lo), k in zip(pts, types):
        if haversine_m(LAT0, LON0, la, lo) <= radius:
            expected[k] += 1
    np.testing.assert_array_equal(v, expected)
    assert v.sum() == expected.sum()


def test_poi_type_ids_validated():
    with pytest.raises(ValueError):
        PoiIndex(np.zeros(1), np.zeros(1), np.array([3]), 3)


def test_haversine_quarter_meridian():
    assert haversine_m(0.0, 0.0, 90.0, 0.0) == pytest.approx(math.pi / 2 * 6_371_000.0)


# -- sum representation -------------------------------------------------------

def test_toy_sum_is_order_free():
    v1, v2 = [4, 1], [2, 3]
    a, b = sum_representation([v1, v2]), sum_representation([v2, v1])
    np.testing.assert_array_equal(a, [6.0, 4.0])
    np.testing.assert_array_equal(b, [6.0, 4.0])
    assert np.linalg.norm(a - b) == 0.0


def test_single_element_sum_is_identity():
    np.testing.assert_array_equal(sum_representation([[3, 0, 2]]), [3.0, 0.0, 2.0])


def test_toy_distances():
    v1, v2, v3 = np.array([4, 1]), np.array([2, 3]), np.array([3, 3])
    assert 2 * np.linalg.norm(v1 - v2) == pytest.approx(5.66, abs=0.005)
    assert np.linalg.norm(v1 - v3) == pytest.approx(2.24, abs=0.005)


def test_sum_rejects_empty():
    with pytest.raises(ValueError):
        sum_representation(np.zeros((0, 3)))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(1, 8), st.integers(0, 2**31), st.booleans())
def test_permutation_equivalence_is_bitwise(t, d, seed, real):
    rng = np.random.default_rng(seed)
    seq = rng.normal(scale=1e3, size=(t, d)) if real else rng.integers(0, 50, size=(t, d))
    perm = rng.permutation(t)
    a, b = sum_representation(seq), sum_representation(seq[perm])
    assert a.tobytes() == b.tobytes()


def test_dataset_drops_short_sequences(rng):
    poi = PoiIndex(np.array([LAT0]), np.array([LON0]), np.array([0]), 2)
    long_traj = RawTrajectory.from_points(
        dwell(8, 0, 1500, 30, rng) + dwell(8, 3000, 1500, 30, rng, center=(3000.0, 0.0)))
    short = RawTrajectory.from_points(dwell(8, 0, 1500, 30, rng))
    ids, seqs = build_dataset({"b": long_traj, "a": short}, poi)
    assert ids == ["b"]
    assert seqs[0].shape == (2, 2)
    np.testing.assert_array_equal(seqs[0][:, 0], [1, 0])


# -- readers ------------------------------------------------------------------

PLT_HEAD = "Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n0,2,255,My Track,0,0,2,8421376\n0\n"


def test_read_plt(tmp_path):
    path = tmp_path / "a.plt"
    path.write_text(PLT_HEAD + "39.9,116.3,0,492,39744.1,2008-10-23,02:53:04\n"
                    "39.91,116.31,0,492,39744.1,2008-10-23,02:53:10\n")
    traj = read_plt(path)
    np.testing.assert_allclose(traj.lat, [39.9, 39.91])
    assert traj.t[1] - traj.t[0] == 6.0
    assert traj.t[0] == 1224730384.0  # 2008-10-23T02:53:04Z


def test_read_plt_reports_line(tmp_path):
    path = tmp_path / "a.plt"
    path.write_text(PLT_HEAD + "39.9,116.3,0,492,39744.1,2008-10-23,02:53:04\nbroken\n")
    with pytest.raises(TrajectoryError, match="line 8"):
        read_plt(path)


def test_read_plt_bad_coordinate_reports_file_line(tmp_path):
    path = tmp_path / "a.plt"
    path.write_text(PLT_HEAD + "39.9,116.3,0,0,0,2008-10-23,02:53:04\n"
                    "99.9,116.3,0,0,0,2008-10-23,02:53:05\n")
    with pytest.raises(TrajectoryError, match="line 8"):
        read_plt(path)


def test_poi_csv_and_type_dictionary(tmp_path):
    path = tmp_path / "poi.csv"
    path.write_text("lat,lon,type\n1.0,2.0,shop\n1.5,2.5,cafe\n1.2,2.2,shop\n")
    poi, vocab = read_poi_csv(path)
    assert vocab == ["cafe", "shop"]
    np.testing.assert_array_equal(poi.type_id, [1, 0, 1])
    write_type_dictionary(tmp_path / "types.tsv", vocab)
    assert read_type_dictionary(tmp_path / "types.tsv") == vocab


def test_poi_csv_errors(tmp_path):
    path = tmp_path / "poi.csv"
    path.write_text("x,y,z\n")
    with pytest.raises(ValueError, match=":1:"):
        read_poi_csv(path)
    path.write_text("lat,lon,type\n1.0,2.0,a\nnan-ish,2,b\n")
    with pytest.raises(ValueError, match=":3:"):
        read_poi_csv(path)
