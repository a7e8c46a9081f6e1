"""Sub/super-synchronous power flow source location from point-on-wave data.

A modulation at f_m seen in power and frequency shows up in the three-phase
waveforms as a pair of positive-sequence components at f_sub = f0 - f_m and
f_sup = f0 + f_m. Their combined active power, with currents measured into
the device, is negative at an oscillation source.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .modal import DEFAULT_WINDOW
from .signal import PowRecord, SignalError, UniformSeries, band_peak, detrend, instantaneous_pq, stft

A120 = np.exp(2j * math.pi / 3)
MIN_F0_CYCLES = 6
DEFAULT_HOP = 1e-3
FUND_REJECT_HZ = 5.0
DEFAULT_REL_THRESHOLD = 0.01


class SspError(SignalError):
    pass


@dataclass
class InterharmonicPhasor:
    f_target: float
    times: np.ndarray
    phasor: np.ndarray        # complex, peak value, positive sequence

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.phasor = np.asarray(self.phasor, complex)


@dataclass
class SspResult:
    device: str
    f_sub: float
    f_sup: float
    p_sub: UniformSeries
    p_sup: UniformSeries
    p_sc: UniformSeries
    mean_p_sc: float
    is_source: bool = False


def space_vector(x3):
    """Positive-sequence space vector of a three-phase set (n x 3), peak scale."""
    return (2.0 / 3.0) * (x3[:, 0] + A120 * x3[:, 1] + A120 ** 2 * x3[:, 2])


def window_length(f_target, f0, fs):
    """Samples in the smallest whole number of ``f_target`` cycles that spans
    at least six fundamental cycles."""
    cycles = max(math.ceil(MIN_F0_CYCLES * f_target / f0 - 1e-9), 1)
    return max(int(round(cycles * fs / f_target)), 2)


def _reject_fundamental(sv, t, f0, f_cut, fs):
    rot = np.exp(-2j * math.pi * f0 * t)
    base = sv * rot
    sos = sps.butter(4, f_cut, fs=fs, output="sos")
    slow = sps.sosfiltfilt(sos, base.real) + 1j * sps.sosfiltfilt(sos, base.imag)
    return sv - slow / rot


def sliding_phasor(pow: PowRecord, f_target: float, quantity: str = "v", hop_s: float = DEFAULT_HOP,
                   reject_fundamental_hz: float | None = None) -> InterharmonicPhasor:
    """Hann-weighted sliding single-bin projection of the positive-sequence
    space vector onto ``exp(j 2 pi f_target t)``.

    Phasors are referenced to absolute time, so voltage and current phasors
    at the same frequency can be multiplied directly. With
    ``reject_fundamental_hz`` the slowly varying fundamental (within that many
    hertz of f0) is removed first so its window leakage cannot bias the
    interharmonic power.
    """
    fs = pow.fs
    if not 0 < f_target < fs / 2:
        raise SspError(f"probe frequency {f_target} Hz must lie in (0, {fs / 2}) Hz")
    if quantity not in ("v", "i"):
        raise SspError("quantity must be 'v' or 'i'")
    x3 = pow.v() if quantity == "v" else pow.i()
    c0 = pow.data.channels[0]
    n = x3.shape[0]
    t = c0.t0 + c0.dt * np.arange(n)
    N = window_length(f_target, pow.nominal_frequency, fs)
    if n < N:
        raise SspError("record shorter than one analysis window")
    sv = space_vector(x3)
    if reject_fundamental_hz:
        sv = _reject_fundamental(sv, t, pow.nominal_frequency, reject_fundamental_hz, fs)
    y = sv * np.exp(-2j * math.pi * f_target * t)
    w = sps.get_window("hann", N)
    ph = sps.fftconvolve(y, w[::-1], mode="valid") / w.sum()      # window starting at k
    h = max(int(round(hop_s * fs)), 1)
    half = N // 2
    first = -(-half // h) * h
    centers = np.arange(first, n - N + half + 1, h)
    return InterharmonicPhasor(f_target, t[centers], ph[centers - half])


def _align(*phs):
    t = phs[0].times
    common = t
    for p in phs[1:]:
        common = np.intersect1d(np.round(common, 9), np.round(p.times, 9))
    if common.size < 2:
        raise SspError("phasor series do not overlap in time")
    out = []
    for p in phs:
        idx = np.searchsorted(np.round(p.times, 9), common)
        out.append(p.phasor[idx])
    return common, out


def ssp_power(V_sub, I_sub, V_sup, I_sup, window=DEFAULT_WINDOW, f0: float = 60.0,
              device: str = "") -> SspResult:
    """Interharmonic active powers ``(3/2) Re(V conj(I))`` with currents into
    the device; ``mean_p_sc`` averages ``p_sub + p_sup`` over ``window``."""
    if V_sub.f_target != I_sub.f_target or V_sup.f_target != I_sup.f_target:
        raise SspError("voltage and current phasors must share their probe frequency")
    f_sub, f_sup = V_sub.f_target, V_sup.f_target
    if abs(f_sub + f_sup - 2 * f0) > 1e-9 * f0:
        raise SspError(f"f_sup = {f_sup} is not 2*f0 - f_sub = {2 * f0 - f_sub}")
    t, (vs, is_, vp, ip) = _align(V_sub, I_sub, V_sup, I_sup)
    p_sub = 1.5 * np.real(vs * np.conj(is_))
    p_sup = 1.5 * np.real(vp * np.conj(ip))
    p_sc = p_sub + p_sup
    dt = float(t[1] - t[0])
    mk = lambda name, v: UniformSeries(name, float(t[0]), dt, v, "pu", "power")
    sel = np.ones(t.size, bool) if window is None else (t >= window[0]) & (t < window[1])
    if not np.any(sel):
        raise SspError(f"averaging window {window} holds no phasor samples")
    return SspResult(device, f_sub, f_sup, mk("p_sub", p_sub), mk("p_sup", p_sup), mk("p_sc", p_sc),
                     float(np.mean(p_sc[sel])))


def estimate_fsub(pow: PowRecord, f_lo: float, f_hi: float, window_s: float = 2.0) -> float:
    """Modulation frequency of the record's instantaneous active power inside
    [f_lo, f_hi]; the interharmonic pair sits at f0 -/+ this value."""
    p, _ = instantaneous_pq(pow)
    if p.n * p.dt < 2.0 - 1e-9:
        raise SspError("record must span at least 2 s")
    sp = stft(detrend(p, "mean"), window_s, 0.25 * window_s)
    bp = band_peak(sp, f_lo, f_hi)
    if not bp.significant:
        raise SspError(f"no significant peak in [{f_lo}, {f_hi}] Hz")
    return bp.f_peak


def device_ssp(pow: PowRecord, f_mod: float, window=DEFAULT_WINDOW, device="", hop_s=DEFAULT_HOP,
               reject_fundamental_hz=FUND_REJECT_HZ) -> SspResult:
    f0 = pow.nominal_frequency
    f_sub, f_sup = f0 - f_mod, f0 + f_mod
    kw = dict(hop_s=hop_s, reject_fundamental_hz=reject_fundamental_hz)
    return ssp_power(sliding_phasor(pow, f_sub, "v", **kw), sliding_phasor(pow, f_sub, "i", **kw),
                     sliding_phasor(pow, f_sup, "v", **kw), sliding_phasor(pow, f_sup, "i", **kw),
                     window, f0, device)


def classify_ssp(results, threshold: float | None = None) -> list[SspResult]:
    """Flag ``mean_p_sc < -threshold`` (default 1% of the largest |mean|) and
    sort most negative first."""
    res = list(results)
    if threshold is None:
        threshold = DEFAULT_REL_THRESHOLD * max((abs(r.mean_p_sc) for r in res), default=0.0)
    for r in res:
        r.is_source = bool(r.mean_p_sc < -threshold)
    res.sort(key=lambda r: r.mean_p_sc)
    return res


def locate_sources(pows: dict, devices, band=(10.0, 25.0), window=DEFAULT_WINDOW, f_mod=None,
                   threshold=None):
    """SSP verdicts for ``devices``; devices without PoW data are skipped with
    a warning. The modulation frequency defaults to the strongest in-band
    power peak among the available records."""
    avail = []
    for d in devices:
        if d in pows:
            avail.append(d)
        else:
            warnings.warn(f"no point-on-wave record for {d}; skipped", stacklevel=2)
    if not avail:
        raise SspError("no device has point-on-wave data")
    if f_mod is None:
        f_mod = _common_fmod(pows, avail, band, window)
    return classify_ssp([device_ssp(pows[d], f_mod, window, d) for d in avail], threshold), f_mod


def _common_fmod(pows, devices, band, window):
    best = None
    for d in devices:
        rec = pows[d]
        p, _ = instantaneous_pq(rec)
        if window is not None:
            p = p.window(*window)
        if p.n * p.dt < 2.0 - 1e-9:
            raise SspError("analysis window must span at least 2 s")
        sp = stft(detrend(p, "mean"), 2.0, 0.5)
        bp = band_peak(sp, *band)
        if bp.significant and (best is None or bp.mag_db > best.mag_db):
            best = bp
    if best is None:
        raise SspError(f"no significant power oscillation in [{band[0]}, {band[1]}] Hz")
    return best.f_peak


def write_ssp_report(results, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["device", "f_sub_hz", "f_sup_hz", "mean_p_sc_pu", "is_source"])
        for r in results:
            w.writerow([r.device, repr(r.f_sub), repr(r.f_sup), repr(r.mean_p_sc), str(r.is_source).lower()])
    return Path(path)
