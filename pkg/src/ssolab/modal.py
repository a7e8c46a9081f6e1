"""Damped-sinusoid fitting of multi-channel ring-downs (matrix pencil) and
mode shapes."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import ChannelSet, SignalError

SV_THRESHOLD = 1e-8
DEFAULT_WINDOW = (0.5, 3.5)   # seconds after the event


class ModalError(SignalError):
    pass


@dataclass
class Mode:
    frequency: float               # Hz, >= 0
    sigma: float                   # 1/s, negative means decaying
    residues: np.ndarray           # complex amplitude per channel
    channels: list = field(default_factory=list)

    @property
    def zeta(self):
        w = 2 * math.pi * self.frequency
        den = math.hypot(self.sigma, w)
        return -self.sigma / den if den > 0 else 0.0

    @property
    def energy(self):
        return float(np.sum(np.abs(self.residues) ** 2))

    def magnitudes(self):
        return np.abs(self.residues)

    def phases_deg(self):
        return np.degrees(np.angle(self.residues))


@dataclass
class ModeShape:
    mode: Mode
    residues: np.ndarray           # normalised: largest magnitude is 1 at 0 deg
    channels: list

    @property
    def reference(self):
        return self.channels[int(np.argmax(np.abs(self.residues)))]

    def phase_deg(self, channel):
        return float(np.degrees(np.angle(self.residues[self.channels.index(channel)])))


def _poles(y, order_cap, threshold):
    """Shared discrete poles of the columns of ``y`` (n x m)."""
    n, m = y.shape
    L = n // 3
    rows = n - L
    H = np.empty((rows * m, L + 1))
    for c in range(m):
        H[c * rows:(c + 1) * rows] = np.lib.stride_tricks.sliding_window_view(y[:, c], L + 1)
    _, s, vt = np.linalg.svd(H, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ModalError("rank-deficient pencil: input carries no signal")
    r = int(np.sum(s > threshold * s[0]))
    if order_cap is not None:
        r = min(r, order_cap)
    if r == 0:
        raise ModalError("rank-deficient pencil")
    v = vt[:r].T
    return np.linalg.eigvals(np.linalg.pinv(v[:-1]) @ v[1:])


def fit_modes(data: ChannelSet, f_lo: float, f_hi: float, max_order: int | None = None,
              threshold: float = SV_THRESHOLD) -> list[Mode]:
    """Jointly fit damped sinusoids with poles shared across all channels.

    The model order is the number of singular values above ``threshold``
    times the largest, capped at ``max_order`` (no cap when None). Residues
    are reported as cosine amplitude and phase, so a channel
    ``a e^{sigma t} cos(2 pi f t + phi)`` yields ``a e^{j phi}`` (time measured
    from the first sample). Modes in ``[f_lo, f_hi]`` are returned by
    decreasing energy.
    """
    if max_order is not None:
        if max_order < 2:
            raise ModalError("max_order must be at least 2")
        if data.n < 4 * max_order:
            raise ModalError(f"need at least {4 * max_order} samples for order {max_order}")
    y = data.matrix()
    if data.n < 6:
        raise ModalError("too few samples for a pencil")
    z = _poles(y, max_order, threshold)
    z = z[np.abs(z) > 1e-12]
    n = np.arange(data.n)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        V = z[None, :] ** n[:, None]
    if not np.all(np.isfinite(V)):
        keep = np.all(np.isfinite(V), axis=0)
        z, V = z[keep], V[:, keep]
    R, *_ = np.linalg.lstsq(V, y.astype(complex), rcond=None)
    s = np.log(z) / data.dt
    modes = []
    for k in range(z.size):
        w = s[k].imag
        if w < 0:
            continue
        f = w / (2 * math.pi)
        # conjugate partner carries the mirrored residue; fold it in
        res = 2.0 * R[k] if w > 0 else R[k].real.astype(complex)
        if f_lo <= f <= f_hi:
            modes.append(Mode(float(f), float(s[k].real), np.asarray(res), list(data.names)))
    modes.sort(key=lambda m: -m.energy)
    return modes


def reconstruct(modes, data: ChannelSet):
    """Sum of the fitted modes sampled on the time base of ``data``."""
    t = np.arange(data.n) * data.dt
    out = np.zeros((data.n, len(data.names)))
    for m in modes:
        w = 2 * math.pi * m.frequency
        env = np.exp(m.sigma * t)
        for c in range(len(data.names)):
            r = m.residues[c]
            out[:, c] += env * np.abs(r) * np.cos(w * t + np.angle(r))
    return out


def extract_shape(modes, f_lo: float, f_hi: float) -> ModeShape:
    band = [m for m in modes if f_lo <= m.frequency <= f_hi]
    if not band:
        raise ModalError(f"no mode in [{f_lo}, {f_hi}] Hz")
    m = max(band, key=lambda m: m.energy)
    ref = m.residues[int(np.argmax(np.abs(m.residues)))]
    return ModeShape(m, m.residues / ref, list(m.channels))


def write_mode_table(modes, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "sigma_1_per_s", "zeta", "channel", "residue_mag", "residue_phase_deg"])
        for m in modes:
            for c, r in zip(m.channels, m.residues):
                w.writerow([repr(m.frequency), repr(m.sigma), repr(m.zeta), c,
                            repr(float(abs(r))), repr(float(np.degrees(np.angle(r))))])
    return Path(path)
