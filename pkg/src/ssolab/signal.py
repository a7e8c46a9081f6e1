"""Uniformly sampled channels, CSV interchange and the basic signal operations
every analysis consumes (resampling, detrending, zero-phase band-pass,
instantaneous three-phase power, STFT spectrograms)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import signal as sps

KINDS = ("instantaneous", "phasor_magnitude", "phasor_angle", "power", "frequency")
DB_FLOOR = -200.0
POW_NAMES = ("va", "vb", "vc", "ia", "ib", "ic")


class SignalError(ValueError):
    pass


def kind_from_name(name: str) -> tuple[str, str]:
    """(kind, unit) implied by the channel-name suffix convention."""
    n = name.lower()
    if n.endswith("_rad"):
        return "phasor_angle", "rad"
    if n.endswith("_hz"):
        return "frequency", "Hz"
    if "vmag" in n:
        return "phasor_magnitude", "pu"
    if n.endswith("_pu"):
        return "power", "pu"
    if n.endswith("_mw"):
        return "power", "MW"
    return "instantaneous", "pu"


@dataclass
class UniformSeries:
    name: str
    t0: float
    dt: float
    values: np.ndarray
    unit: str = "pu"
    kind: str = "instantaneous"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if not self.dt > 0:
            raise SignalError(f"{self.name}: dt must be positive")
        if self.values.size < 1:
            raise SignalError(f"{self.name}: empty series")
        if not np.all(np.isfinite(self.values)):
            raise SignalError(f"{self.name}: non-finite samples")
        if self.kind not in KINDS:
            raise SignalError(f"unknown series kind {self.kind!r}")
        if self.kind == "phasor_angle":
            self.values = np.unwrap(self.values)

    @classmethod
    def named(cls, name, t0, dt, values):
        kind, unit = kind_from_name(name)
        return cls(name, t0, dt, values, unit, kind)

    @property
    def fs(self):
        return 1.0 / self.dt

    @property
    def n(self):
        return self.values.size

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(self.n)

    def with_values(self, values, **kw):
        return replace(self, values=np.asarray(values, dtype=float), **kw)

    def window(self, t_start, t_stop):
        """Samples with ``t_start <= t < t_stop`` (tolerant to rounding)."""
        i0 = max(int(math.ceil((t_start - self.t0) / self.dt - 1e-9)), 0)
        i1 = min(int(math.ceil((t_stop - self.t0) / self.dt - 1e-9)), self.n)
        if i1 <= i0:
            raise SignalError(f"{self.name}: window [{t_start}, {t_stop}) holds no samples")
        return self.with_values(self.values[i0:i1], t0=self.t0 + i0 * self.dt)


@dataclass
class ChannelSet:
    channels: list = field(default_factory=list)

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise SignalError("channel names must be unique")
        if self.channels:
            c0 = self.channels[0]
            for c in self.channels[1:]:
                if c.n != c0.n or abs(c.dt - c0.dt) > 1e-12 * c0.dt or abs(c.t0 - c0.t0) > 1e-9 * max(c0.dt, 1.0):
                    raise SignalError(f"channel {c.name} does not share the time base")

    @classmethod
    def from_arrays(cls, t0, dt, data: dict):
        return cls([UniformSeries.named(k, t0, dt, v) for k, v in data.items()])

    @property
    def names(self):
        return [c.name for c in self.channels]

    @property
    def t0(self):
        return self.channels[0].t0

    @property
    def dt(self):
        return self.channels[0].dt

    @property
    def n(self):
        return self.channels[0].n

    @property
    def t(self):
        return self.channels[0].t

    def __getitem__(self, name) -> UniformSeries:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name):
        return name in self.names

    def __len__(self):
        return len(self.channels)

    def select(self, names):
        return ChannelSet([self[n] for n in names])

    def window(self, t_start, t_stop):
        return ChannelSet([c.window(t_start, t_stop) for c in self.channels])

    def matrix(self, names=None):
        names = self.names if names is None else names
        return np.column_stack([self[n].values for n in names])


@dataclass
class PowRecord:
    """Six point-on-wave channels. Currents are positive into the device."""

    data: ChannelSet
    nominal_frequency: float = 60.0

    def __post_init__(self):
        if sorted(self.data.names) != sorted(POW_NAMES):
            raise SignalError(f"PoW record needs exactly the channels {POW_NAMES}")
        self.data = self.data.select(POW_NAMES)

    @property
    def fs(self):
        return 1.0 / self.data.dt

    def v(self):
        return self.data.matrix(POW_NAMES[:3])

    def i(self):
        return self.data.matrix(POW_NAMES[3:])


@dataclass
class Spectrogram:
    times: np.ndarray
    frequencies: np.ndarray
    magnitude: np.ndarray   # dB, shape (time, frequency)
    floor: float = DB_FLOOR


# --------------------------------------------------------------------------
# CSV interchange

def ingest_csv(path) -> ChannelSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SignalError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "time_s":
        raise SignalError(f"{path}: first column must be 'time_s'")
    body = [r for r in rows[1:] if r]
    if not body:
        raise SignalError(f"{path}: no data rows")
    data = np.empty((len(body), len(header)))
    for k, r in enumerate(body):
        if len(r) != len(header):
            raise SignalError(f"{path}: ragged row {k + 2}")
        try:
            data[k] = [float(x) for x in r]
        except ValueError:
            raise SignalError(f"{path}: non-numeric cell in row {k + 2}") from None
    t = data[:, 0]
    if t.size > 1:
        steps = np.diff(t)
        dt = (t[-1] - t[0]) / (t.size - 1)
        if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
            raise SignalError(f"{path}: non-uniform time step")
    else:
        dt = 1.0
    return ChannelSet.from_arrays(t[0], dt, {h: data[:, k + 1] for k, h in enumerate(header[1:])})


def _fmt(x):
    return repr(float(x))


def export_csv(channels: ChannelSet, path):
    path = Path(path)
    t = channels.t
    cols = [c.values for c in channels.channels]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s"] + channels.names)
        for k in range(channels.n):
            w.writerow([_fmt(t[k])] + [_fmt(c[k]) for c in cols])
    return path


def export_spectrogram_csv(spec: Spectrogram, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "freq_hz", "mag_db"])
        for i, t in enumerate(spec.times):
            for j, f in enumerate(spec.frequencies):
                w.writerow([_fmt(t), _fmt(f), _fmt(spec.magnitude[i, j])])
    return Path(path)


# --------------------------------------------------------------------------
# operations

def resample(s: UniformSeries, fs_new: float) -> UniformSeries:
    """Rational polyphase resampling with a linear-phase anti-alias FIR whose
    transition band sits between 0.4 and 0.5 of the lower sample rate."""
    if not fs_new > 0:
        raise SignalError("fs_new must be positive")
    fs_old = s.fs
    if abs(fs_new - fs_old) <= 1e-12 * fs_old:
        return s.with_values(s.values.copy())
    ratio = Fraction(fs_new / fs_old).limit_denominator(2000)
    up, down = ratio.numerator, ratio.denominator
    if abs(up / down - fs_new / fs_old) > 1e-9 * fs_new / fs_old:
        raise SignalError("sample-rate ratio is not a small rational number")
    fs_hi = fs_old * up
    f_lo = min(fs_old, fs_new)
    trans = 0.1 * f_lo
    numtaps, beta = sps.kaiserord(80.0, trans / (0.5 * fs_hi))
    numtaps |= 1
    h = sps.firwin(numtaps, 0.45 * f_lo, window=("kaiser", beta), fs=fs_hi)
    # equal DC gain in every polyphase branch, so a constant stays constant
    for k in range(up):
        h[k::up] /= h[k::up].sum() * up
    y = sps.resample_poly(s.values, up, down, window=h, padtype="line")
    return s.with_values(y, dt=1.0 / fs_new)


def detrend(s: UniformSeries, mode: str = "mean") -> UniformSeries:
    if mode == "mean":
        return s.with_values(s.values - s.values.mean())
    if mode == "linear":
        if s.n < 2:
            raise SignalError("linear detrend needs at least two samples")
        x = np.arange(s.n, dtype=float)
        coef = np.polyfit(x, s.values, 1)
        y = s.values - np.polyval(coef, x)
        return s.with_values(y - y.mean())
    raise SignalError(f"unknown detrend mode {mode!r}")


def bandpass_sos(fs, f_lo, f_hi):
    if not 0 < f_lo < f_hi < fs / 2:
        raise SignalError(f"band [{f_lo}, {f_hi}] Hz must lie inside (0, {fs / 2}) Hz")
    return sps.butter(2, [f_lo, f_hi], btype="bandpass", fs=fs, output="sos")


def bandpass(s: UniformSeries, f_lo: float, f_hi: float) -> UniformSeries:
    """Zero-phase 4th-order Butterworth band-pass (forward-backward)."""
    sos = bandpass_sos(s.fs, f_lo, f_hi)
    return s.with_values(sps.sosfiltfilt(sos, s.values))


def instantaneous_pq(pow: PowRecord):
    """Three-phase instantaneous active and reactive power (current-sign
    convention of the record)."""
    v, i = pow.v(), pow.i()
    va, vb, vc = v.T
    ia, ib, ic = i.T
    p = va * ia + vb * ib + vc * ic
    q = ((vb - vc) * ia + (vc - va) * ib + (va - vb) * ic) / math.sqrt(3.0)
    c0 = pow.data.channels[0]
    return (UniformSeries("p_pu", c0.t0, c0.dt, p, "pu", "power"),
            UniformSeries("q_pu", c0.t0, c0.dt, q, "pu", "power"))


def stft(s: UniformSeries, window_s: float, hop_s: float | None = None) -> Spectrogram:
    """Hann-windowed amplitude spectrogram in dB re 1 unit^2.

    A steady unit-amplitude tone reads 0 dB at its bin regardless of window
    length; zero-energy cells sit at ``DB_FLOOR``.
    """
    hop_s = 0.5 * window_s if hop_s is None else hop_s
    if hop_s <= 0 or hop_s > window_s:
        raise SignalError("hop must lie in (0, window]")
    nw = int(round(window_s * s.fs))
    hop = max(int(round(hop_s * s.fs)), 1)
    if nw < 2 or s.n < nw:
        raise SignalError("series shorter than one STFT window")
    w = sps.get_window("hann", nw, fftbins=True)
    starts = np.arange(0, s.n - nw + 1, hop)
    frames = np.lib.stride_tricks.sliding_window_view(s.values, nw)[starts] * w
    amp = 2.0 * np.abs(np.fft.rfft(frames, axis=1)) / w.sum()
    amp[:, 0] *= 0.5
    if nw % 2 == 0:
        amp[:, -1] *= 0.5
    pw = amp ** 2
    with np.errstate(divide="ignore"):
        db = np.where(pw > 1e-20, 10.0 * np.log10(np.maximum(pw, 1e-300)), DB_FLOOR)
    times = s.t0 + (starts + 0.5 * nw) * s.dt
    freqs = np.fft.rfftfreq(nw, s.dt)
    return Spectrogram(times, freqs, np.maximum(db, DB_FLOOR))


class BandPeak(NamedTuple):
    f_peak: float
    mag_db: float
    significant: bool
    prominence_db: float


def band_peak(spec: Spectrogram, f_lo: float, f_hi: float, min_prominence_db: float = 10.0) -> BandPeak:
    """Peak of the time-averaged spectrum inside [f_lo, f_hi], refined by a
    parabola through the log magnitudes of the three bins around it.

    The peak counts as significant when it stands ``min_prominence_db`` above
    the median level of the band widened by its own width on both sides.
    """
    f = spec.frequencies
    if f_lo < f[0] - 1e-12 or f_hi > f[-1] + 1e-12 or f_hi <= f_lo:
        raise SignalError(f"band [{f_lo}, {f_hi}] outside spectrogram range")
    idx = np.flatnonzero((f >= f_lo - 1e-9) & (f <= f_hi + 1e-9))
    if idx.size == 0:
        raise SignalError("empty band")
    lin = np.mean(10.0 ** (spec.magnitude / 10.0), axis=0)
    with np.errstate(divide="ignore"):
        avg = np.maximum(np.where(lin > 1e-20, 10.0 * np.log10(np.maximum(lin, 1e-300)), spec.floor), spec.floor)
    k = idx[np.argmax(avg[idx])]
    peak_db = float(avg[k])
    f_pk = float(f[k])
    if 0 < k < f.size - 1 and peak_db > spec.floor:
        a, b, c = avg[k - 1], avg[k], avg[k + 1]
        den = a - 2 * b + c
        if den < 0:
            d = 0.5 * (a - c) / den
            d = min(max(d, -0.5), 0.5)
            f_pk = float(f[k] + d * (f[1] - f[0]))
            peak_db = float(b - 0.25 * (a - c) * d)
    width = (f_hi - f_lo) + 4 * (f[1] - f[0])
    ctx = (f >= f_lo - width) & (f <= f_hi + width)
    prom = peak_db - float(np.median(avg[ctx]))
    significant = peak_db > spec.floor + 1.0 and prom >= min_prominence_db
    return BandPeak(f_pk, peak_db, bool(significant), prom)
