import math
from math import comb

import numpy as np
import pytest
from scipy.special import binom

from pnevm.simulate import generator as gen
from pnevm.simulate import psd as psd_mod
from pnevm.spectrum import OscillatorProfile
from pnevm.statistics import r_zeta2

T = 1e-6


def test_frac_filter_first_terms():
    h = gen.frac_filter_coeffs(1.5, 5)
    assert h[0] == 1.0
    assert h[1] == 1.5
    assert h[2] == 15 / 8
    k = np.arange(5)
    np.testing.assert_allclose(h, (-1.0) ** k * binom(-1.5, k), rtol=1e-14)
    # integer order: (1 - z^-1)^-2 has coefficients k + 1
    np.testing.assert_allclose(gen.frac_filter_coeffs(2.0, 6), np.arange(1, 7))
    assert comb(4, 2) == 6  # sanity of the reference


def test_frac_filter_growth_and_positivity():
    h = gen.frac_filter_coeffs(1.5, 10_000)
    assert np.all(h > 0) and np.all(np.diff(h) > 0)
    k = 9_999
    assert h[k] == pytest.approx(math.sqrt(k) / math.gamma(1.5), rel=1e-3)


def test_frac_filter_response():
    # Abel damping r^k suppresses the truncation edge of the growing
    # sequence; the damped sum tends to (1 - r e^{-jw})^{-3/2}
    n = 2**16
    r = 1.0 - 20.0 / n
    h = gen.frac_filter_coeffs(1.5, n) * r ** np.arange(n)
    H2 = np.abs(np.fft.rfft(h, 4 * n)) ** 2
    fT = np.arange(H2.size) / (4 * n)
    sel = (fT >= 1e-3) & (fT <= 0.1)
    ratio = H2[sel] * (2 * np.sin(np.pi * fT[sel])) ** 3
    assert np.all(np.abs(ratio - 1) < 0.02)
    assert np.median(ratio) == pytest.approx(1.0, rel=0.02)


def test_frac_filter_rejects_empty():
    with pytest.raises(ValueError):
        gen.frac_filter_coeffs(1.5, 0)


def test_input_variances_and_convention():
    p = OscillatorProfile(1e4, 10.0, 1e-11)
    v = gen.input_variances(p, T)
    assert v["w0"] == pytest.approx(1e-5)
    assert v["w2"] == pytest.approx(4 * math.pi**2 * 10 * T)
    assert v["w3"] == pytest.approx(8 * math.pi**3 * 1e4 * T**2)
    half = gen.input_variances(p, T, "two_sided_paper_table")
    for k in v:
        assert half[k] == pytest.approx(v[k] / 2)
    # the halved table values for these inputs
    assert half["w0"] == pytest.approx(5e-6)
    assert half["w2"] == pytest.approx(1.97e-4, rel=3e-3)
    assert half["w3"] == pytest.approx(1.24e-6, rel=3e-3)
    with pytest.raises(ValueError):
        gen.input_variances(p, T, "bogus")


def test_trace_structure_and_reproducibility():
    p = OscillatorProfile(1e4, 10.0, 1e-11)
    a = gen.generate_pn(p, T, 1000, seed=42)
    b = gen.generate_pn(p, T, 1000, seed=42)
    np.testing.assert_array_equal(a.phi, b.phi)
    np.testing.assert_array_equal(a.phi, a.phi0 + a.phi2 + a.phi3)
    assert a.seed == 42 and a.T == T
    c = gen.generate_pn(p, T, 1000, seed=43)
    assert not np.array_equal(a.phi, c.phi)


def test_fixed_draw_order():
    # zeroing one level must not change the other components
    full = gen.generate_pn(OscillatorProfile(1e4, 10.0, 1e-11), T, 256, seed=7)
    no3 = gen.generate_pn(OscillatorProfile(0.0, 10.0, 1e-11), T, 256, seed=7)
    np.testing.assert_array_equal(full.phi2, no3.phi2)
    np.testing.assert_array_equal(full.phi0, no3.phi0)
    assert np.all(no3.phi3 == 0)


def test_generate_rejects_bad_input():
    p = OscillatorProfile(0, 0, 1e-11)
    with pytest.raises(ValueError):
        gen.generate_pn(p, T, 0)
    with pytest.raises(ValueError):
        gen.generate_pn(p, 0.0, 10)


def test_white_variance_matches_floor():
    p = OscillatorProfile(0.0, 0.0, 1e-11)
    v = np.array([gen.generate_pn(p, T, 4096, seed=s).phi.var() for s in range(100)])
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - 1e-5) < 3 * se


def test_k2_increment_variance():
    p = OscillatorProfile(0.0, 10.0, 0.0)
    d = np.concatenate([np.diff(gen.generate_pn(p, T, 4096, seed=s).phi) for s in range(50)])
    want = 4 * math.pi**2 * 10 * T
    assert d.var() == pytest.approx(want, rel=4 * math.sqrt(2 / d.size))
    assert want == pytest.approx(r_zeta2(10.0, 0.0, T, 0))


def test_welch_white_noise_level():
    rng = np.random.default_rng(0)
    acc = 0
    for _ in range(100):
        f, p = psd_mod.psd_estimate(rng.standard_normal(8192), 1.0, 1024)
        acc = acc + p
    acc /= 100
    # the lowest bins carry the mean-removal notch
    inner = acc[2:-1]
    assert np.all(np.abs(10 * np.log10(inner / 2.0)) < 0.5)


def test_welch_parseval_and_sinusoid():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(2**14)
    f, p = psd_mod.psd_estimate(x, 1e-3, 2**10)
    assert np.trapezoid(p, f) == pytest.approx(x.var(), rel=0.01)
    n = np.arange(2**14)
    A, f0 = 0.7, 0.125
    f, p = psd_mod.psd_estimate(A * np.sin(2 * np.pi * f0 * n), 1.0, 2**10)
    peak = (f > f0 - 0.01) & (f < f0 + 0.01)
    assert np.trapezoid(p[peak], f[peak]) == pytest.approx(A**2 / 2, rel=0.01)


def test_welch_rejects_bad_segments():
    with pytest.raises(ValueError):
        psd_mod.psd_estimate(np.zeros(4096), 1.0, 1000)
    with pytest.raises(ValueError):
        psd_mod.psd_estimate(np.zeros(1000), 1.0, 1024)
    with pytest.raises(ValueError):
        psd_mod.psd_estimate(np.zeros(4096), 1.0, 1024, overlap=1.0)


def test_phi3_slope():
    p = OscillatorProfile(1e4, 0.0, 0.0)
    acc = 0
    for s in range(20):
        f, pp = psd_mod.psd_estimate(gen.generate_pn(p, T, 2**16, seed=s).phi3, T, 2**13)
        acc = acc + pp
    assert psd_mod.loglog_slope(f, acc, 1e3, 3e4) == pytest.approx(-3.0, abs=0.1)


def test_component_psd_integrates_to_variance():
    # floor: the one-sided estimate integrates to K0/T
    p = OscillatorProfile(0.0, 0.0, 1e-11)
    vals = []
    for s in range(100):
        f, pp = psd_mod.psd_estimate(gen.generate_pn(p, T, 2**13, seed=s).phi0, T, 2**10)
        vals.append(np.trapezoid(pp, f))
    vals = np.array(vals)
    assert abs(vals.mean() - 1e-5) < 3 * vals.std(ddof=1) / 10
    # 1/f^2 branch: increments integrate to r_zeta2(0)
    p = OscillatorProfile(0.0, 10.0, 0.0)
    vals = []
    for s in range(100):
        f, pp = psd_mod.psd_estimate(np.diff(gen.generate_pn(p, T, 2**13 + 1, seed=s).phi2),
                                     T, 2**10)
        vals.append(np.trapezoid(pp, f))
    vals = np.array(vals)
    assert abs(vals.mean() - r_zeta2(10.0, 0.0, T, 0)) < 3 * vals.std(ddof=1) / 10


def test_sampled_psd_reference():
    p = OscillatorProfile(1e4, 10.0, 1e-11)
    f = np.array([1e3, 1e4, 1e5])
    s = psd_mod.sampled_psd(p, T, f)
    # well inside the band the images are negligible and the estimate reads 2 S(f)
    from pnevm.spectrum import total_psd
    assert s[0] == pytest.approx(2 * total_psd(p, 1e3), rel=1e-3)
    assert np.all(s >= 2 * total_psd(p, f))
    floor_only = psd_mod.sampled_psd(OscillatorProfile(0, 0, 1e-11), T, f)
    np.testing.assert_allclose(floor_only, 2e-11)


def test_loglog_slope_needs_points():
    with pytest.raises(ValueError):
        psd_mod.loglog_slope([1.0, 2.0], [1.0, 1.0], 5.0, 6.0)
