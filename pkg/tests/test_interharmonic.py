import cmath
import math

import numpy as np
import pytest

from ssolab import interharmonic as ih
from ssolab.fixtures import pow_fixture
from ssolab.signal import ChannelSet, PowRecord, UniformSeries, bandpass, instantaneous_pq


def am_record(fm, depth=0.05, dur=4.0, i_scale=0.5):
    """Balanced 60 Hz set whose amplitude is modulated at ``fm``; the current
    follows a resistive device so the power pulses at ``fm`` too."""
    half = depth / 2
    return pow_fixture({60.0: (1.0, i_scale), 60.0 - fm: (half, i_scale * half),
                        60.0 + fm: (half, i_scale * half)}, duration=dur)


def phasor(f, values, t=None):
    values = np.asarray(values, complex)
    t = np.arange(values.size) * 1e-3 if t is None else t
    return ih.InterharmonicPhasor(f, t, values)


# ---------------------------------------------------------------- estimate_fsub

@pytest.mark.parametrize("fm", [19.2, 18.4])
def test_estimate_modulation(fm):
    assert ih.estimate_fsub(am_record(fm), 10, 25) == pytest.approx(fm, abs=0.1)


def test_estimate_clean_fundamental_fails():
    with pytest.raises(ih.SspError, match="significant"):
        ih.estimate_fsub(pow_fixture({60.0: (1.0, 0.5)}, duration=3.0), 10, 25)


def test_estimate_needs_two_seconds():
    with pytest.raises(ih.SspError):
        ih.estimate_fsub(am_record(19.0, dur=1.5), 10, 25)


# ---------------------------------------------------------------- sliding phasor

def test_window_length_rule():
    fs = 15000.0
    # 41 Hz: 6 cycles of 60 Hz = 0.1 s -> 5 cycles of 41 Hz (0.122 s)
    assert ih.window_length(41.0, 60.0, fs) == round(5 * fs / 41.0)
    assert ih.window_length(60.0, 60.0, fs) == round(6 * fs / 60.0)


def test_fundamental_probe():
    rec = pow_fixture({60.0: (1.0, 0.3)}, duration=1.0)
    ph = ih.sliding_phasor(rec, 60.0)
    assert np.max(np.abs(np.abs(ph.phasor) - 1.0)) <= 1e-3


def test_fundamental_leakage_at_19():
    rec = pow_fixture({60.0: (1.0, 0.3)}, duration=1.0)
    assert np.max(np.abs(ih.sliding_phasor(rec, 19.0).phasor)) <= 0.005


def test_zero_waveforms():
    rec = pow_fixture({60.0: (0.0, 0.0)}, duration=0.5)
    assert np.all(ih.sliding_phasor(rec, 41.0, "i").phasor == 0)


def test_probe_above_nyquist():
    rec = pow_fixture({60.0: (1.0, 0.3)}, fs=100.0, duration=1.0)
    with pytest.raises(ih.SspError):
        ih.sliding_phasor(rec, 60.0)


def test_interharmonic_phasor_value():
    V = 0.02 * cmath.exp(0.7j)
    rec = pow_fixture({60.0: (1.0, 0.5), 41.0: (V, 0.0)}, duration=1.0)
    ph = ih.sliding_phasor(rec, 41.0, reject_fundamental_hz=5.0)
    core = ph.phasor[100:-100]
    assert np.allclose(core, V, atol=2e-4)


# ---------------------------------------------------------------- ssp_power

def test_source_closed_form():
    n = 50
    r = ih.ssp_power(phasor(41, np.full(n, 0.02)), phasor(41, np.full(n, -0.05)),
                     phasor(79, np.zeros(n)), phasor(79, np.zeros(n)), window=None)
    assert r.mean_p_sc == pytest.approx(-0.0015, rel=1e-12)
    assert ih.classify_ssp([r], threshold=1e-4)[0].is_source


def test_sink_closed_form():
    n = 50
    r = ih.ssp_power(phasor(41, np.full(n, 0.02)), phasor(41, np.full(n, 0.05)),
                     phasor(79, np.zeros(n)), phasor(79, np.zeros(n)), window=None)
    assert r.mean_p_sc == pytest.approx(0.0015, rel=1e-12)
    assert not ih.classify_ssp([r], threshold=1e-4)[0].is_source


def test_zero_phasors():
    z = np.zeros(20)
    r = ih.ssp_power(phasor(41, z), phasor(41, z), phasor(79, z), phasor(79, z), window=None)
    assert np.all(r.p_sc.values == 0)
    assert not ih.classify_ssp([r], threshold=0.0)[0].is_source


def test_frequency_pair_mismatch():
    z = np.zeros(20)
    with pytest.raises(ih.SspError):
        ih.ssp_power(phasor(41, z), phasor(41, z), phasor(80, z), phasor(80, z))
    with pytest.raises(ih.SspError):
        ih.ssp_power(phasor(41, z), phasor(42, z), phasor(79, z), phasor(79, z))


def test_pipeline_closed_form():
    rec = pow_fixture({60.0: (1.0, -0.5), 41.0: (0.02, cmath.rect(0.05, math.pi))})
    r = ih.device_ssp(rec, 19.0)
    assert r.f_sub + r.f_sup == 120.0
    assert r.mean_p_sc == pytest.approx(-0.0015, rel=5e-3)


def test_super_component_adds():
    rec = pow_fixture({60.0: (1.0, -0.5), 41.0: (0.02, -0.05), 79.0: (0.01, -0.02)})
    assert ih.device_ssp(rec, 19.0).mean_p_sc == pytest.approx(-0.0015 - 0.0003, rel=5e-3)


# ---------------------------------------------------------------- classify

def _res(dev, m):
    s = UniformSeries("p", 0.0, 1.0, [m])
    return ih.SspResult(dev, 41.0, 79.0, s, s, s, m)


def test_classify_constructed():
    out = ih.classify_ssp([_res("c", 0.0005), _res("a", -0.002), _res("b", -0.001)], 1e-4)
    assert [r.device for r in out] == ["a", "b", "c"]
    assert [r.is_source for r in out] == [True, True, False]


def test_classify_all_positive():
    assert not any(r.is_source for r in ih.classify_ssp([_res("a", 0.1), _res("b", 0.2)]))


def test_classify_default_threshold():
    out = ih.classify_ssp([_res("a", -1.0), _res("b", -0.005), _res("c", -0.02)])
    assert {r.device for r in out if r.is_source} == {"a", "c"}


# ---------------------------------------------------------------- properties

def test_sideband_pair_sums_to_twice_f0():
    fm = 17.3
    rec = am_record(fm, depth=0.1)
    r = ih.device_ssp(rec, fm)
    assert r.f_sub == pytest.approx(60 - fm) and r.f_sup == pytest.approx(60 + fm)
    on = ih.sliding_phasor(rec, 60 - fm, reject_fundamental_hz=5.0)
    off = ih.sliding_phasor(rec, 60 - fm - 3.0, reject_fundamental_hz=5.0)
    assert np.abs(on.phasor[200:-200]).mean() == pytest.approx(0.05, rel=0.01)
    # stationary at the true sideband, rotating at the probe offset elsewhere
    rate_on = np.polyfit(on.times[200:-200], np.unwrap(np.angle(on.phasor[200:-200])), 1)[0]
    rate_off = np.polyfit(off.times[200:-200], np.unwrap(np.angle(off.phasor[200:-200])), 1)[0]
    assert abs(rate_on) < 1e-3
    assert rate_off / (2 * math.pi) == pytest.approx(3.0, rel=1e-3)


def test_current_polarity_antisymmetry():
    rec = pow_fixture({60.0: (1.0, -0.5), 41.0: (0.02, 0.03 * cmath.exp(2j)), 79.0: (0.01, 0.02j)})
    flipped = ChannelSet([c.with_values(-c.values) if c.name.startswith("i") else c for c in rec.data.channels])
    a = ih.device_ssp(rec, 19.0)
    b = ih.device_ssp(PowRecord(flipped), 19.0)
    assert np.array_equal(a.p_sc.values, -b.p_sc.values)


def test_power_oscillation_consistent_with_phasors():
    comps = {60.0: (1.0, -0.5 * cmath.exp(0.2j)), 41.0: (0.02, 0.04 * cmath.exp(2.5j)),
             79.0: (0.015 * cmath.exp(1j), 0.02 * cmath.exp(-0.4j))}
    rec = pow_fixture(comps)
    p, _ = instantaneous_pq(rec)
    osc = bandpass(p, 15, 23).window(0.5, 3.5).values
    amp_time = math.sqrt(2) * np.sqrt(np.mean(osc ** 2))
    ext = {f: (ih.sliding_phasor(rec, f, "v", reject_fundamental_hz=5.0 if f != 60 else None).phasor[1000:-1000].mean(),
               ih.sliding_phasor(rec, f, "i", reject_fundamental_hz=5.0 if f != 60 else None).phasor[1000:-1000].mean())
           for f in comps}
    (V1, I1), (Vs, Is), (Vp, Ip) = ext[60.0], ext[41.0], ext[79.0]
    A = V1 * np.conj(Is) + np.conj(Vs) * I1 + Vp * np.conj(I1) + np.conj(V1) * Ip
    assert amp_time == pytest.approx(1.5 * abs(A), rel=0.05)


def test_locate_skips_missing_device():
    recs = {"A": pow_fixture({60.0: (1.0, -0.5), 41.0: (0.02, -0.05)}),
            "B": pow_fixture({60.0: (1.0, -0.5), 41.0: (0.02, 0.01)})}
    with pytest.warns(UserWarning, match="C"):
        res, fm = ih.locate_sources(recs, ["A", "B", "C"], (10, 25))
    assert fm == pytest.approx(19.0, abs=0.05)
    assert [r.device for r in res] == ["A", "B"]
    assert [r.is_source for r in res] == [True, False]


def test_locate_without_any_pow():
    with pytest.raises(ih.SspError):
        with pytest.warns(UserWarning):
            ih.locate_sources({}, ["A"], (10, 25))


def test_report(tmp_path):
    r = ih.device_ssp(pow_fixture({60.0: (1.0, -0.5), 41.0: (0.02, -0.05)}), 19.0, device="X")
    lines = ih.write_ssp_report(ih.classify_ssp([r]), tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "device,f_sub_hz,f_sup_hz,mean_p_sc_pu,is_source"
    assert lines[1].startswith("X,41.0,79.0,") and lines[1].endswith(",true")
