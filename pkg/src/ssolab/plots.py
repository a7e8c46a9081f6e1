"""SVG figures, each written next to a CSV holding the plotted data."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "ssolab"
matplotlib.rcParams["svg.fonttype"] = "none"
SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    path = Path(path).with_suffix(".svg")
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def _csv(path, header, cols):
    path = Path(path).with_suffix(".csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(x)) for x in row])
    return path


def lines(path, t, series: dict, xlabel="time (s)", ylabel="", title=""):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for name, y in series.items():
        ax.plot(t, y, lw=0.8, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path), _csv(path, [xlabel.split(" ")[0] or "x"] + list(series), [t] + list(series.values()))


def heatmap(path, spec, f_max=None):
    f = spec.frequencies
    keep = f <= (f_max if f_max else f[-1])
    fig, ax = plt.subplots(figsize=(7, 3.5))
    dt = spec.times[1] - spec.times[0] if spec.times.size > 1 else 1.0
    edges_t = np.concatenate([spec.times - 0.5 * dt, [spec.times[-1] + 0.5 * dt]])
    df = f[1] - f[0]
    fk = f[keep]
    edges_f = np.concatenate([fk - 0.5 * df, [fk[-1] + 0.5 * df]])
    mesh = ax.pcolormesh(edges_t, edges_f, spec.magnitude[:, keep].T, shading="flat", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="dB")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (Hz)")
    fig.tight_layout()
    svg = _save(fig, path)
    tt, ff = np.meshgrid(spec.times, fk, indexing="ij")
    return svg, _csv(path, ["time_s", "freq_hz", "mag_db"], [tt.ravel(), ff.ravel(), spec.magnitude[:, keep].ravel()])


def polar_shape(path, shape):
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(projection="polar")
    mags = np.abs(shape.residues)
    angs = np.angle(shape.residues)
    for c, a, m in zip(shape.channels, angs, mags):
        ax.plot([0, a], [0, m], lw=1.5)
        ax.plot([a], [m], "o", ms=4)
        ax.annotate(c, (a, m), fontsize=7)
    ax.set_title(f"{shape.mode.frequency:.2f} Hz, zeta {shape.mode.zeta:.4f}", fontsize=9)
    fig.tight_layout()
    svg = _save(fig, path)
    p = Path(path).with_suffix(".csv")
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "mag", "phase_deg"])
        for c, m, a in zip(shape.channels, mags, np.degrees(angs)):
            w.writerow([c, repr(float(m)), repr(float(a))])
    return svg, p


def trace_and_spectrum(path, t, traces: dict, band, t_start=0.5):
    """Time trace panel plus amplitude spectrum panel (after ``t_start``)."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    spectra = {}
    freqs = None
    for name, y in traces.items():
        a1.plot(t, y, lw=0.8, label=name)
        sel = t >= t_start
        x = y[sel] - np.mean(y[sel])
        w = np.hanning(x.size)
        amp = 2 * np.abs(np.fft.rfft(x * w)) / w.sum()
        freqs = np.fft.rfftfreq(x.size, t[1] - t[0])
        spectra[name] = amp
        b = (freqs >= 0.5 * band[0]) & (freqs <= 2 * band[1])
        a2.semilogy(freqs[b], np.maximum(amp[b], 1e-12), lw=0.8, label=name)
    a2.axvspan(band[0], band[1], color="0.9")
    a1.set_xlabel("time (s)")
    a1.set_ylabel("frequency (Hz)")
    a2.set_xlabel("frequency (Hz)")
    a2.set_ylabel("amplitude")
    a1.legend(fontsize=7)
    a1.grid(alpha=0.3)
    a2.grid(alpha=0.3)
    fig.tight_layout()
    svg = _save(fig, path)
    csv_t = _csv(path, ["time_s"] + list(traces), [t] + list(traces.values()))
    spath = Path(path).with_name(Path(path).stem + "_spectrum.csv")
    _csv(spath, ["freq_hz"] + list(spectra), [freqs] + list(spectra.values()))
    return svg, csv_t, spath
