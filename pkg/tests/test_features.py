import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drivepred.errors import CorruptFile, DegenerateVector, SeriesTooShort
from drivepred.features import (
    WIDTH,
    FeatureMatrix,
    FeatureSet,
    ScalerKind,
    apply_scaler,
    extract_features,
    fit_scaler,
    load_dataset,
    noise_variance_ratio,
    save_dataset,
    spherical_projection,
    window_sequences,
)
from drivepred.nn import param_count
from drivepred.sim import DriverProfile, arm_pose, simulate_session
from drivepred.track import one_hot_many


def test_projection_anchor_and_pole():
    assert spherical_projection([0, 0, 0], [1, 0, 0]) == (0.0, 0.0)
    az, el = spherical_projection([0, 0, 0], [0, -1, 0])
    assert az == 0.0 and el == pytest.approx(-math.pi / 2)
    az, el = spherical_projection([0, 0, 0], [0, 2, 0])
    assert az == 0.0 and el == pytest.approx(math.pi / 2)


def test_projection_degenerate():
    with pytest.raises(DegenerateVector):
        spherical_projection([1, 2, 3], [1, 2, 3])


vec = arrays(np.float64, 3, elements=st.floats(-2, 2)).filter(lambda u: np.linalg.norm(u) > 1e-3)


@given(vec, st.floats(0.01, 100.0))
def test_projection_radial_invariance(u, k):
    a = spherical_projection(np.zeros(3), u)
    b = spherical_projection(np.zeros(3), k * u)
    assert b == pytest.approx(a, abs=1e-9)


@given(vec, arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_projection_reconstructs_direction(u, origin):
    az, el = spherical_projection(origin, origin + u)
    # inverse map back to a unit direction
    d = np.array([math.cos(el) * math.cos(az), math.sin(el), math.cos(el) * math.sin(az)])
    np.testing.assert_allclose(d, u / np.linalg.norm(u), atol=1e-6)


def test_widths_and_parameter_count_consistency(short_session):
    expected = {FeatureSet.SET1: 15, FeatureSet.SET2: 12, FeatureSet.SET3: 4, FeatureSet.SET4: 7, FeatureSet.SET5: 15}
    for set_id, width in expected.items():
        fm = extract_features(short_session, set_id)
        assert WIDTH[set_id] == width
        assert fm.values.shape == (len(short_session), width)
        assert len(fm.column_names) == width
        assert np.all(np.isfinite(fm.values))
    assert [d for d in range(1, 20) if param_count(160, d) == 216003] == [7]


def test_set_composition(short_session):
    s1 = extract_features(short_session, 1).values
    s2 = extract_features(short_session, 2).values
    s3 = extract_features(short_session, 3).values
    s4 = extract_features(short_session, 4).values
    s5 = extract_features(short_session, 5).values
    np.testing.assert_array_equal(s2, s1[:, 3:])
    np.testing.assert_array_equal(s4[:, :4], s3)
    np.testing.assert_array_equal(s5[:, :12], s2)
    np.testing.assert_array_equal(s4[:, 4:], s5[:, 12:])
    np.testing.assert_array_equal(s4[:, 4], short_session.steer)
    np.testing.assert_array_equal(s4[:, 6], np.abs(short_session.v))


def test_zero_steer_angles_mirror():
    # mirroring the lateral axis maps the right-arm azimuth onto the left one
    j = arm_pose(DriverProfile(), 0.0)
    l_az, l_el = spherical_projection(j[1], j[3])
    r_az, r_el = spherical_projection(j[2], j[4])
    assert l_el == pytest.approx(r_el, abs=1e-12)
    assert math.remainder(r_az - (math.pi - l_az), 2 * math.pi) == pytest.approx(0.0, abs=1e-12)
    mirrored_r_az, _ = spherical_projection(j[2] * [-1, 1, 1], j[4] * [-1, 1, 1])
    assert mirrored_r_az == pytest.approx(l_az, abs=1e-12)


def test_scaler_examples():
    m = np.array([[0.0, 2.0, 7.0], [5.0, 4.0, 7.0], [10.0, 6.0, 7.0]])
    mm = apply_scaler(fit_scaler(m, ScalerKind.MINMAX_SYMMETRIC), m)
    np.testing.assert_allclose(mm[:, 0], [-1, 0, 1])
    np.testing.assert_array_equal(mm[:, 2], 0.0)
    sd = apply_scaler(fit_scaler(m, ScalerKind.STANDARDIZE), m)
    np.testing.assert_allclose(sd[:, 1], [-1.2247, 0, 1.2247], atol=1e-4)
    np.testing.assert_allclose(sd[:, 1], (m[:, 1] - 4) / math.sqrt(8 / 3), atol=1e-12)
    np.testing.assert_array_equal(sd[:, 2], 0.0)


def test_scaler_uses_training_statistics_only():
    train = np.array([[0.0], [10.0]])
    sc = fit_scaler(train)
    np.testing.assert_allclose(apply_scaler(sc, np.array([[20.0], [-10.0]])), [[3.0], [-3.0]])


matrices = arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 6)), elements=st.floats(-1e3, 1e3).map(lambda x: round(x, 6)))  # micrometre resolution


@given(matrices)
def test_scaler_properties(m):
    mm = apply_scaler(fit_scaler(m, "minmax_symmetric"), m)
    assert mm.min() >= -1 - 1e-12 and mm.max() <= 1 + 1e-12
    sc = fit_scaler(m, ScalerKind.STANDARDIZE)
    sd = apply_scaler(sc, m)
    live = np.ptp(m, axis=0) > 0
    assert np.all(np.abs(sd.mean(axis=0)) < 1e-9)
    np.testing.assert_allclose(sd.std(axis=0)[live], 1.0, atol=1e-9)
    np.testing.assert_array_equal(sd[:, ~live], 0.0)


def test_scaler_feature_matrix_and_dict():
    m = FeatureMatrix(np.arange(8.0).reshape(2, 4), FeatureSet.SET3, ("a", "b", "c", "d"))
    sc = fit_scaler(m)
    out = apply_scaler(sc, m)
    assert isinstance(out, FeatureMatrix) and out.column_names == m.column_names
    assert type(sc).from_dict(sc.to_dict()) == sc


def _fm(T, d=2):
    return FeatureMatrix(np.arange(T * d, dtype=np.float64).reshape(T, d), FeatureSet.SET1, tuple(f"c{i}" for i in range(d)))


def test_window_counts():
    # windows end at t = 29..70 inclusive
    assert len(window_sequences(_fm(100), np.ones(100, int), 30, 30, 1)) == 42
    assert len(window_sequences(_fm(59), np.ones(59, int), 30, 30, 1)) == 1
    with pytest.raises(SeriesTooShort):
        window_sequences(_fm(58), np.ones(58, int), 30, 30, 1)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 5), st.integers(0, 40), st.data())
def test_window_alignment(t_wi, t_wo, stride, extra, data):
    T = t_wi + t_wo - 1 + extra
    labels = np.array(data.draw(st.lists(st.integers(0, 2), min_size=T, max_size=T)))
    fm = _fm(T)
    ds = window_sequences(fm, labels, t_wi, t_wo, stride, subject_id=4)
    ends = list(range(t_wi - 1, T - t_wo + 1, stride))
    assert len(ds) == len(ends)
    for n, t in enumerate(ends):
        np.testing.assert_array_equal(ds.X[n], fm.values[t - t_wi + 1 : t + 1])
        np.testing.assert_array_equal(ds.Y[n], one_hot_many(labels[t : t + t_wo]))
    assert np.all(ds.Y.sum(axis=2) == 1)
    assert np.all(ds.subject_id == 4)


@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 30), st.data())
def test_stride_two_roundtrip(t_wi, t_wo, extra, data):
    T = t_wi + t_wo - 1 + extra
    labels = np.array(data.draw(st.lists(st.integers(0, 2), min_size=T, max_size=T)))
    ds = window_sequences(_fm(T), labels, t_wi, t_wo, stride=t_wo)
    tail = ds.Y.reshape(-1, 3)
    start = t_wi - 1
    np.testing.assert_array_equal(tail, one_hot_many(labels[start : start + len(tail)]))


def test_dataset_file_roundtrip(tmp_path, short_session):
    fm = extract_features(short_session, 4)
    ds = window_sequences(fm, short_session.label, stride=5, subject_id=3)
    save_dataset(ds, tmp_path / "a.mfw")
    raw = (tmp_path / "a.mfw").read_bytes()
    assert raw[:4] == b"MFW1"
    back = load_dataset(tmp_path / "a.mfw")
    np.testing.assert_array_equal(back.X, ds.X.astype(np.float32))
    np.testing.assert_array_equal(back.Y, ds.Y)
    assert (back.t_wi, back.t_wo, back.d, back.set_id, back.stride) == (30, 30, 7, FeatureSet.SET4, 5)
    np.testing.assert_array_equal(back.subject_id, 3)
    save_dataset(back, tmp_path / "b.mfw")
    assert load_dataset(tmp_path / "b.mfw") == back
    (tmp_path / "c.mfw").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptFile):
        load_dataset(tmp_path / "c.mfw")
    flipped = bytearray(raw)
    flipped[100] ^= 0xFF
    (tmp_path / "d.mfw").write_bytes(bytes(flipped))
    with pytest.raises(CorruptFile):
        load_dataset(tmp_path / "d.mfw")


def test_angle_features_attenuate_depth_noise(small_track):
    noisy = simulate_session(small_track, DriverProfile(seed=11), duration=120.0)
    clean = simulate_session(small_track, DriverProfile(seed=11).noise_free(), duration=120.0)
    r_angles = noise_variance_ratio(extract_features(noisy, 3).values, extract_features(clean, 3).values)
    r_raw = noise_variance_ratio(noisy.joints[:, 3:, 2], clean.joints[:, 3:, 2])
    assert r_angles.mean() < r_raw.mean()
