import math

import numpy as np
import pytest

from pnevm import spectrum as sp
from pnevm.spectrum import OscillatorProfile, SsbMeasurement

FIG5 = OscillatorProfile(1e4, 10.0, 1e-11, 1.0)


def test_profile_validation():
    with pytest.raises(sp.SpectrumError):
        OscillatorProfile(-1.0, 1.0, 0.0)
    with pytest.raises(sp.SpectrumError):
        OscillatorProfile(0.0, 0.0, 0.0)
    with pytest.raises(sp.SpectrumError):
        OscillatorProfile(1.0, 0.0, 0.0, gamma=0.0)
    with pytest.raises(sp.SpectrumError):
        OscillatorProfile(float("nan"), 1.0, 0.0)


def test_profile_dict_roundtrip():
    p = OscillatorProfile(5e3, 0.06, 1.7e-15, 2.0, center_freq_hz=10e9)
    assert OscillatorProfile.from_dict(p.to_dict()) == p
    assert "center_freq_hz" not in FIG5.to_dict()
    with pytest.raises(sp.SpectrumError):
        OscillatorProfile.from_dict({"k3": 1, "k2": 1, "k0": 1, "bogus": 2})
    with pytest.raises(sp.SpectrumError):
        OscillatorProfile.from_dict({"k3": 1, "k2": 1})


def test_measurement_validation():
    with pytest.raises(sp.SpectrumError):
        SsbMeasurement((1.0, 2.0), (-80.0, -90.0))
    with pytest.raises(sp.SpectrumError):
        SsbMeasurement((1.0, 3.0, 2.0), (-80.0, -90.0, -95.0))
    with pytest.raises(sp.SpectrumError):
        SsbMeasurement((0.0, 3.0, 20.0), (-80.0, -90.0, -95.0))
    m = SsbMeasurement.from_points([(10, -60), (100, -80), (1000, -100)])
    assert m.points == [(10.0, -60.0), (100.0, -80.0), (1000.0, -100.0)]


def test_total_psd_reference_profile_at_1mhz():
    assert sp.total_psd(FIG5, 1e6) == pytest.approx(2.001e-11, rel=1e-9)


def test_total_psd_pure_floor():
    p = OscillatorProfile(0.0, 0.0, 1e-11)
    np.testing.assert_allclose(sp.total_psd(p, [0.0, 1.0, 1e3, 1e9]), 1e-11)


def test_total_psd_terms_equal_at_corner():
    p = OscillatorProfile(5e3, 0.06, 10 ** (-147.67 / 10))
    f = 83.3e3
    t3, t2 = p.k3 / (f**3 + 1), p.k2 / (f**2 + 1)
    assert t3 == pytest.approx(8.65e-12, rel=2e-3)
    assert t2 == pytest.approx(t3, rel=2e-3)


def test_total_psd_at_dc_is_finite():
    assert math.isfinite(sp.total_psd(FIG5, 0.0))
    assert sp.total_psd(FIG5, 0.0) == pytest.approx(1e4 + 10 + 1e-11)


@pytest.mark.parametrize("k3,k2,expected", [(5e3, 0.06, 83333.33), (7.0, 7.0, 1.0), (1e4, 10, 1e3)])
def test_corner_frequency(k3, k2, expected):
    assert sp.corner_frequency(OscillatorProfile(k3, k2, 0.0)) == pytest.approx(expected, rel=1e-6)


def test_corner_frequency_undefined():
    with pytest.raises(sp.UndefinedCornerError):
        sp.corner_frequency(OscillatorProfile(0.0, 1.0, 0.0))
    with pytest.raises(sp.UndefinedCornerError):
        sp.corner_frequency(OscillatorProfile(1.0, 0.0, 0.0))


def test_dbc_conversions():
    assert sp.dbc_to_linear(-110) == pytest.approx(1e-11, rel=1e-12)
    assert sp.linear_to_dbc(1e-11) == pytest.approx(-110.0, abs=1e-12)
    assert sp.dbc_to_linear(-147.67) == pytest.approx(1.71e-15, rel=2e-3)
    with pytest.raises(ValueError):
        sp.linear_to_dbc(0.0)
    with pytest.raises(ValueError):
        sp.linear_to_dbc([1.0, -1.0])


def _grid(lo=10.0, hi=1e7, n=61):
    return np.geomspace(lo, hi, n)


def test_fit_noiseless_recovers_reference_profile():
    res = sp.fit_profile(sp.synthesize_measurement(FIG5, _grid()))
    p = res.profile
    assert p.k3 == pytest.approx(1e4, rel=1e-2)
    assert p.k2 == pytest.approx(10, rel=1e-2)
    assert p.k0 == pytest.approx(1e-11, rel=1e-2)
    assert res.rms_db < 1e-3


def test_fit_pure_flicker_shape_drops_k2():
    # -30 dB/decade straight into the floor
    truth = OscillatorProfile(4.2e4, 0.0, 10 ** (-153.83 / 10))
    res = sp.fit_profile(sp.synthesize_measurement(truth, _grid(1e3, 1e7, 41)))
    assert res.profile.k2 == 0.0
    assert res.profile.k3 == pytest.approx(4.2e4, rel=1e-2)
    assert sp.linear_to_dbc(res.profile.k0) == pytest.approx(-153.83, abs=0.05)


def test_fit_with_1db_noise_within_25_percent():
    rng = np.random.default_rng(11)
    f = _grid()
    worst = 0.0
    for _ in range(20):
        clean = sp.synthesize_measurement(FIG5, f)
        noisy = SsbMeasurement(clean.offsets_hz,
                               tuple(np.asarray(clean.levels_dbc) + rng.normal(0, 1.0, f.size)))
        p = sp.fit_profile(noisy).profile
        for got, want in ((p.k3, 1e4), (p.k2, 10.0), (p.k0, 1e-11)):
            worst = max(worst, abs(got / want - 1))
    assert worst < 0.25


def test_fit_excludes_offsets_below_gamma_and_needs_a_decade():
    meas = sp.synthesize_measurement(FIG5, np.geomspace(1.0, 9.0, 10))
    with pytest.raises(sp.DegenerateMeasurementError):
        sp.fit_profile(meas)
    # all points below gamma leave nothing to fit
    with pytest.raises(sp.DegenerateMeasurementError):
        sp.fit_profile(sp.synthesize_measurement(FIG5, np.geomspace(1, 100, 10)), gamma=1e3)


def test_fit_failure_threshold():
    f = _grid(10, 1e6, 30)
    levels = -60 + 20 * np.sin(np.arange(f.size))  # not a power-law spectrum
    with pytest.raises(sp.FitFailureError):
        sp.fit_profile(SsbMeasurement(tuple(f), tuple(levels)), max_rms_db=3.0)


def test_measurement_csv_roundtrip(tmp_path):
    meas = sp.synthesize_measurement(FIG5, _grid(10, 1e6, 7))
    path = tmp_path / "m.csv"
    sp.write_measurement_csv(meas, path)
    assert path.read_text().splitlines()[0] == "offset_hz,dbc_per_hz"
    assert sp.read_measurement_csv(path) == meas


def test_measurement_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f,L\n1,2\n")
    with pytest.raises(sp.SpectrumError):
        sp.read_measurement_csv(path)


def test_profile_json_roundtrip(tmp_path):
    path = tmp_path / "p.json"
    sp.write_profile_json(FIG5, path)
    assert sp.read_profile_json(path) == FIG5
