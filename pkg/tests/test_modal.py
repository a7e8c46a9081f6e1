import math

import numpy as np
import pytest

from ssolab.modal import Mode, ModalError, extract_shape, fit_modes, reconstruct, write_mode_table
from ssolab.signal import ChannelSet


def ringdown(amps, phases_deg, f=19.0, sigma=-0.30, fs=1000.0, dur=2.0, names=None):
    t = np.arange(int(round(fs * dur))) / fs
    data = {}
    for k, (a, ph) in enumerate(zip(amps, phases_deg)):
        name = names[k] if names else f"c{k}_p_pu"
        data[name] = a * np.exp(sigma * t) * np.cos(2 * math.pi * f * t + math.radians(ph))
    return ChannelSet.from_arrays(0.0, 1 / fs, data)


def test_single_channel_mode():
    modes = fit_modes(ringdown([1.0], [0.0]), 10, 25)
    assert len(modes) == 1
    m = modes[0]
    assert m.frequency == pytest.approx(19.0, abs=0.05)
    assert m.sigma == pytest.approx(-0.30, abs=0.02)
    assert abs(m.residues[0]) == pytest.approx(1.0, rel=1e-6)


def test_constant_channel_has_no_mode():
    cs = ChannelSet.from_arrays(0.0, 1e-3, {"c": np.full(2000, 0.7)})
    assert fit_modes(cs, 18, 20) == []


def test_antiphase_channels():
    m = fit_modes(ringdown([1.0, 1.0], [0.0, 180.0]), 18, 20)[0]
    d = math.degrees(np.angle(m.residues[1] / m.residues[0]))
    assert abs(abs(d) - 180.0) <= 5.0


def test_max_order_checks():
    cs = ringdown([1.0], [0.0], dur=0.02)
    with pytest.raises(ModalError):
        fit_modes(cs, 10, 25, max_order=1)
    with pytest.raises(ModalError):
        fit_modes(cs, 10, 25, max_order=10)


def test_zeta_identity():
    m = Mode(19.0, -0.3, np.array([1 + 0j]))
    assert m.zeta == pytest.approx(0.3 / math.hypot(0.3, 2 * math.pi * 19), abs=1e-12)


def test_shape_normalisation():
    m = Mode(19.0, -0.3, np.array([2 * np.exp(1j * math.radians(10)), np.exp(1j * math.radians(190))]), ["a", "b"])
    sh = extract_shape([m], 18, 20)
    assert sh.residues[0] == pytest.approx(1.0)
    assert abs(sh.residues[1]) == pytest.approx(0.5)
    assert sh.phase_deg("b") == pytest.approx(180.0, abs=1e-9) or sh.phase_deg("b") == pytest.approx(-180.0, abs=1e-9)
    assert sh.reference == "a"


def test_shape_empty_band():
    with pytest.raises(ModalError, match="no mode"):
        extract_shape([Mode(5.0, -1.0, np.array([1 + 0j]))], 18, 20)


def test_shape_picks_highest_energy():
    weak = Mode(18.5, -0.1, np.array([0.1 + 0j]), ["a"])
    strong = Mode(19.5, -0.5, np.array([1.0 + 0j]), ["a"])
    assert extract_shape([weak, strong], 18, 20).mode is strong


def test_two_modes_sorted_by_energy():
    a = ringdown([1.0, 0.5], [0, 30])
    b = ringdown([0.2, 0.3], [0, 90], f=14.0, sigma=-1.0)
    cs = ChannelSet.from_arrays(0.0, 1e-3, {n: a[n].values + b[n].values for n in a.names})
    modes = fit_modes(cs, 10, 25)
    assert [round(m.frequency) for m in modes] == [19, 14]
    assert modes[1].sigma == pytest.approx(-1.0, abs=0.01)


def test_reconstruction_error():
    cs = ringdown([1.0, 0.7, 0.3], [0, 40, 200])
    modes = fit_modes(cs, 0, 500)
    y = reconstruct(modes, cs)
    x = cs.matrix()
    assert np.sqrt(np.mean((y - x) ** 2)) / np.sqrt(np.mean(x ** 2)) < 1e-3


def test_pole_invariance_under_scaling():
    cs = ringdown([1.0, 0.6], [0, 120])
    m1 = fit_modes(cs, 10, 25)[0]
    scaled = ChannelSet.from_arrays(0.0, 1e-3, {"c0_p_pu": cs["c0_p_pu"].values,
                                                "c1_p_pu": 7.5 * cs["c1_p_pu"].values})
    m2 = fit_modes(scaled, 10, 25)[0]
    assert abs(m1.frequency - m2.frequency) < 1e-9
    assert abs(m1.sigma - m2.sigma) < 1e-9
    assert abs(m2.residues[1]) == pytest.approx(7.5 * abs(m1.residues[1]), rel=1e-6)


def test_mode_table(tmp_path):
    modes = fit_modes(ringdown([1.0, 0.5], [0, 180]), 10, 25)
    p = write_mode_table(modes, tmp_path / "m.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "freq_hz,sigma_1_per_s,zeta,channel,residue_mag,residue_phase_deg"
    assert len(lines) == 1 + 2 * len(modes)
