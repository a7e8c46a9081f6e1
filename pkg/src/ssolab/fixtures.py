"""Synthetic measurement sets with known answers, shipped as CSV for the CLI."""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .signal import ChannelSet, PowRecord, export_csv

DEF_SOURCES = ("G1", "G2")
# (P amplitude, theta amplitude); a negative theta amplitude makes a sink
_DEF_DEVICES = {"G1": (0.10, 0.05), "G2": (0.06, 0.04), "G3": (0.08, -0.05), "G4": (0.0, 0.0)}


def def_fixture(fs=480.0, duration=6.0, f_osc=19.0) -> ChannelSet:
    """Four devices with a 19 Hz oscillation whose P-theta phasing is set by
    construction: G1 and G2 inject energy, G3 absorbs it, G4 is quiet."""
    t = np.arange(int(round(duration * fs))) / fs
    w = 2 * math.pi * f_osc
    data = {}
    for k, (dev, (ap, ath)) in enumerate(_DEF_DEVICES.items()):
        data[f"{dev}_p_pu"] = 0.2 + 0.05 * k + ap * np.cos(w * t)
        data[f"{dev}_q_pu"] = np.full(t.size, 0.02)
        data[f"{dev}_vmag_pu"] = np.full(t.size, 1.0)
        data[f"{dev}_theta_rad"] = 0.1 * k + ath * np.sin(w * t)
    return ChannelSet.from_arrays(0.0, 1.0 / fs, data)


def constant_fixture(fs=1000.0, duration=4.0) -> ChannelSet:
    n = int(round(duration * fs))
    return ChannelSet.from_arrays(0.0, 1.0 / fs, {"IBR1_p_pu": np.full(n, 0.3), "IBR2_p_pu": np.full(n, 0.2)})


def balanced_set(phasor, f, t):
    """Positive-sequence three-phase waveforms (n x 3) of peak ``phasor`` at ``f``."""
    ph = np.asarray([0.0, -2 * math.pi / 3, 2 * math.pi / 3])
    return np.real(complex(phasor) * np.exp(1j * (2 * math.pi * f * t[:, None] + ph[None, :])))


def pow_fixture(components, fs=15000.0, duration=4.0, f0=60.0) -> PowRecord:
    """Point-on-wave record from ``{frequency: (V phasor, I phasor)}``;
    currents are into the device."""
    t = np.arange(int(round(duration * fs))) / fs
    v = np.zeros((t.size, 3))
    i = np.zeros((t.size, 3))
    for f, (V, I) in components.items():
        v += balanced_set(V, f, t)
        i += balanced_set(I, f, t)
    data = {"va": v[:, 0], "vb": v[:, 1], "vc": v[:, 2], "ia": i[:, 0], "ib": i[:, 1], "ic": i[:, 2]}
    return PowRecord(ChannelSet.from_arrays(0.0, 1.0 / fs, data), f0)


def fixture_path(name):
    return Path(str(resources.files("ssolab").joinpath("data", "fixtures", name)))


def write_fixtures(directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return [export_csv(def_fixture(), d / "def_synthetic.csv"),
            export_csv(constant_fixture(), d / "constant.csv")]
