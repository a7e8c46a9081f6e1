"""Dissipating-energy-flow source location from phasor-rate measurements.

A device whose oscillation-band energy W(t) = int dP dtheta + dQ d(ln V)
grows steadily is injecting oscillation energy into the grid (P and Q are
taken positive from the device into the grid).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signal import ChannelSet, SignalError, UniformSeries, bandpass, detrend

MIN_R2 = 0.5
DEFAULT_REL_THRESHOLD = 0.05


class DefError(SignalError):
    pass


@dataclass
class DefInputs:
    P: UniformSeries
    Q: UniformSeries
    Vmag: UniformSeries
    theta: UniformSeries | None = None
    freq: UniformSeries | None = None

    def __post_init__(self):
        if (self.theta is None) == (self.freq is None):
            raise DefError("give exactly one of theta or freq")
        ref = self.P
        for s in (self.Q, self.Vmag, self.angle_series):
            if s.n != ref.n or abs(s.dt - ref.dt) > 1e-12 * ref.dt or abs(s.t0 - ref.t0) > 1e-9:
                raise DefError(f"{s.name} does not share the time base of {ref.name}")
        if np.any(self.Vmag.values <= 0):
            raise DefError("voltage magnitude must stay positive")

    @property
    def angle_series(self):
        return self.theta if self.theta is not None else self.freq

    @classmethod
    def from_channels(cls, cs: ChannelSet, device: str, use_frequency=False):
        """Inputs for ``device`` from the ``<device>_p_pu`` channel naming."""
        get = lambda suffix: cs[f"{device}_{suffix}"]
        try:
            if use_frequency or f"{device}_theta_rad" not in cs:
                return cls(get("p_pu"), get("q_pu"), get("vmag_pu"), freq=get("f_hz"))
            return cls(get("p_pu"), get("q_pu"), get("vmag_pu"), theta=get("theta_rad"))
        except KeyError as e:
            raise DefError(f"missing channel {e.args[0]}") from None


@dataclass
class DefResult:
    device: str
    W: UniformSeries
    slope: float = 0.0
    fit_r2: float = 0.0
    is_source: bool = False


def _dev(s: UniformSeries, f_lo, f_hi):
    return bandpass(detrend(s, "linear"), f_lo, f_hi).values


def def_energy(inp: DefInputs, f_lo: float, f_hi: float) -> UniformSeries:
    """Cumulative dissipating energy (trapezoidal), ``W[0] = 0``."""
    dP = _dev(inp.P, f_lo, f_hi)
    dQ = _dev(inp.Q, f_lo, f_hi)
    dlnv = _dev(inp.Vmag.with_values(np.log(inp.Vmag.values)), f_lo, f_hi)
    if inp.theta is not None:
        th = _dev(inp.theta, f_lo, f_hi)
    else:
        f = inp.freq.values
        inc = 2 * math.pi * (f - f.mean()) * inp.freq.dt
        th = _dev(inp.freq.with_values(np.concatenate([[0.0], np.cumsum(inc[1:])])), f_lo, f_hi)
    dw = 0.5 * (dP[1:] + dP[:-1]) * np.diff(th) + 0.5 * (dQ[1:] + dQ[:-1]) * np.diff(dlnv)
    W = np.concatenate([[0.0], np.cumsum(dw)])
    return UniformSeries("W", inp.P.t0, inp.P.dt, W, "pu*rad", "instantaneous")


def _line_fit(t, y):
    tc = t - t.mean()
    den = float(np.dot(tc, tc))
    if den == 0.0:
        return 0.0, 0.0
    slope = float(np.dot(tc, y - y.mean()) / den)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-30:
        return slope, 0.0
    resid = y - y.mean() - slope * tc
    return slope, 1.0 - float(np.sum(resid ** 2)) / ss_tot


def def_rank(results, window, threshold: float | None = None) -> list[DefResult]:
    """Fit a line to each W over ``window`` and rank devices by slope.

    ``results`` holds DefResult objects or ``(device, W)`` pairs. The default
    threshold is 5% of the largest absolute slope.
    """
    frags = [r if isinstance(r, DefResult) else DefResult(r[0], r[1]) for r in results]
    t0, t1 = window
    if not t1 > t0:
        raise DefError("empty analysis window")
    out = []
    for r in frags:
        w = r.W.window(t0, t1)
        if w.n < 3:
            raise DefError(f"{r.device}: window holds fewer than three samples")
        slope, r2 = _line_fit(w.t, w.values)
        out.append(DefResult(r.device, r.W, slope, r2))
    if threshold is None:
        threshold = DEFAULT_REL_THRESHOLD * max((abs(r.slope) for r in out), default=0.0)
    for r in out:
        r.is_source = bool(r.slope > threshold and r.fit_r2 >= MIN_R2)
    out.sort(key=lambda r: -r.slope)
    return out


def locate_sources(cs: ChannelSet, devices, band, window, threshold=None, use_frequency=False):
    """DEF verdicts for every device in ``devices`` found in ``cs``."""
    frags = []
    for d in devices:
        frags.append((d, def_energy(DefInputs.from_channels(cs, d, use_frequency), *band)))
    return def_rank(frags, window, threshold)


def write_def_report(results, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["device", "slope_pu_rad_per_s", "fit_r2", "is_source"])
        for r in results:
            w.writerow([r.device, repr(r.slope), repr(r.fit_r2), str(r.is_source).lower()])
    return Path(path)


def energy_channels(results) -> ChannelSet:
    return ChannelSet([r.W.with_values(r.W.values, name=f"{r.device}_W") for r in results])
