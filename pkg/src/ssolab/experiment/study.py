"""Event studies on simulated data, parameter sweeps and mitigation checks."""
from __future__ import annotations

import itertools
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import energy_flow as ef
from .. import interharmonic as ih
from ..grid import ModelError, SimResult, Simulator
from ..modal import ModalError, extract_shape, fit_modes
from ..signal import (BandPeak, ChannelSet, SignalError, Spectrogram, band_peak, detrend,
                      export_csv, stft)
from .scenario import Scenario

METRICS = ("band_mode_zeta", "band_peak_db", "def_slope_max")
MODE_FLOOR = 1e-6          # pu; in-band modes weaker than this count as numerical noise
CRITICAL_REL = 0.1         # modes this far below the strongest residue are ignored for damping
PRONY_ORDER = 40
STFT_WINDOW = 2.0


@dataclass
class StudyBundle:
    scenario: str
    band: tuple
    window: tuple
    monitor: str
    spectrogram: Spectrogram
    band_peak: BandPeak
    modes: list
    shape: object                 # ModeShape or None
    critical: object              # least-damped significant in-band Mode or None
    def_results: list
    ssp_results: list | None
    f_mod: float | None
    shed_fraction: float
    notes: list = field(default_factory=list)

    @property
    def mode(self):
        return self.critical

    @property
    def zeta(self):
        return math.nan if self.critical is None else self.critical.zeta

    def def_sources(self):
        return sorted(r.device for r in self.def_results if r.is_source)

    def ssp_sources(self):
        return None if self.ssp_results is None else sorted(r.device for r in self.ssp_results if r.is_source)

    def metric(self, name):
        if name == "band_mode_zeta":
            return self.zeta
        if name == "band_peak_db":
            return self.band_peak.mag_db
        if name == "def_slope_max":
            return max((r.slope for r in self.def_results), default=math.nan)
        raise ValueError(f"unknown metric {name!r}")

    def to_dict(self):
        m = self.mode
        out = {
            "scenario": self.scenario,
            "band_hz": list(self.band),
            "window_s": list(self.window),
            "monitor": self.monitor,
            "band_peak": {"f_hz": self.band_peak.f_peak, "mag_db": self.band_peak.mag_db,
                          "significant": self.band_peak.significant,
                          "prominence_db": self.band_peak.prominence_db},
            "mode": None if m is None else {
                "freq_hz": m.frequency, "sigma_1_per_s": m.sigma, "zeta": m.zeta},
            "shape": None if self.shape is None else {
                "freq_hz": self.shape.mode.frequency, "zeta": self.shape.mode.zeta,
                "channels": {c: {"mag": float(abs(r)), "phase_deg": float(np.degrees(np.angle(r)))}
                             for c, r in zip(self.shape.channels, self.shape.residues)}},
            "def": [{"device": r.device, "slope_pu_rad_per_s": r.slope, "fit_r2": r.fit_r2,
                     "is_source": r.is_source} for r in self.def_results],
            "def_sources": self.def_sources(),
            "ssp": None if self.ssp_results is None else [
                {"device": r.device, "f_sub_hz": r.f_sub, "f_sup_hz": r.f_sup,
                 "mean_p_sc_pu": r.mean_p_sc, "is_source": r.is_source} for r in self.ssp_results],
            "ssp_sources": self.ssp_sources(),
            "f_mod_hz": self.f_mod,
            "shed_fraction": self.shed_fraction,
            "notes": list(self.notes),
        }
        return out


def simulate(scenario: Scenario) -> SimResult:
    sim = Simulator(scenario.effective_model, dt=scenario.dt, output_rate=scenario.output_rate)
    return sim.run(scenario.duration, scenario.events, scenario.pow_synthesis)


def _monitor_spectrum(cs: ChannelSet, name, t_start, t_stop):
    s = cs[name].window(t_start, t_stop)
    win = min(STFT_WINDOW, s.n * s.dt)
    return stft(detrend(s, "linear"), win, 0.25 * win)


def critical_mode(modes, rel=CRITICAL_REL):
    """Least-damped mode among those whose largest residue is at least ``rel``
    times the strongest one; heavily damped transients dominate residue size
    at the window start, while stability is set by the slowest decay."""
    if not modes:
        return None
    big = max(float(np.max(np.abs(m.residues))) for m in modes)
    cand = [m for m in modes if np.max(np.abs(m.residues)) >= rel * big]
    return min(cand, key=lambda m: (m.zeta, -m.frequency))


def analyse(result: SimResult, scenario: Scenario) -> StudyBundle:
    """Spectrogram/band peak, modes and shape, DEF and (with PoW) SSP."""
    cs = result.channels
    band, window = scenario.band, scenario.window
    devices = scenario.analysis_devices()
    notes = []
    t_end = cs.t[-1] + cs.dt
    spec = _monitor_spectrum(cs, scenario.monitor_channel(), window[0], t_end)
    bp = band_peak(spec, *band)

    p_names = [f"{d}_p_pu" for d in devices]
    data = cs.window(*window).select(p_names)
    modes = fit_modes(data, band[0], band[1], max_order=min(PRONY_ORDER, data.n // 4))
    modes = [m for m in modes if np.max(np.abs(m.residues)) > MODE_FLOOR]
    shape = critical = None
    if modes:
        shape = extract_shape(modes, *band)
        critical = critical_mode(modes)
    else:
        notes.append("no in-band mode above the noise floor")

    def_res = ef.locate_sources(cs, devices, band, window)

    ssp_res, f_mod = None, None
    if result.pow:
        pows = {d: rec for d, rec in result.pow.items() if d in scenario.recorded_pow()}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                ssp_res, f_mod = ih.locate_sources(pows, devices, band, window)
            except SignalError as e:
                notes.append(f"sub/super-synchronous analysis skipped: {e}")
        notes += [str(w.message) for w in caught]
    return StudyBundle(scenario.name, band, window, scenario.monitor_channel(), spec, bp, modes, shape,
                       critical, def_res, ssp_res, f_mod, result.shed_fraction, notes)


def run_event_study(scenario: Scenario):
    result = simulate(scenario)
    result.pow = {d: rec for d, rec in result.pow.items() if d in scenario.recorded_pow()}
    return result, analyse(result, scenario)


# --------------------------------------------------------------------------
# sweeps

@dataclass
class SweepParam:
    paths: tuple          # one or more parameter paths set to the same value
    values: tuple

    def __post_init__(self):
        if isinstance(self.paths, str):
            self.paths = (self.paths,)
        self.paths = tuple(self.paths)
        self.values = tuple(self.values)
        if not self.paths or not self.values:
            raise ModelError("a sweep parameter needs a path and at least one value")

    @property
    def label(self):
        return "+".join(self.paths)


@dataclass
class SweepSpec:
    params: list
    metric: str = "band_mode_zeta"
    band: tuple | None = None

    def __post_init__(self):
        self.params = [p if isinstance(p, SweepParam) else SweepParam(*p) for p in self.params]
        if not self.params:
            raise ModelError("a sweep needs at least one parameter")
        if self.metric not in METRICS:
            raise ModelError(f"metric must be one of {METRICS}")

    def combinations(self):
        for combo in itertools.product(*(p.values for p in self.params)):
            yield combo

    def overrides(self, combo):
        out = {}
        for p, v in zip(self.params, combo):
            for path in p.paths:
                out[path] = v
        return out

    @classmethod
    def from_dict(cls, doc):
        params = []
        for p in doc.get("param", []):
            paths = p.get("paths") or [p["path"]]
            params.append(SweepParam(tuple(paths), tuple(p["values"])))
        band = doc.get("band")
        return cls(params, doc.get("metric", "band_mode_zeta"), tuple(band) if band else None)


@dataclass
class SweepTable:
    labels: list
    metric: str
    rows: list            # (values tuple, metric value)

    def to_dict(self):
        return {"metric": self.metric, "parameters": self.labels,
                "rows": [{"values": list(v), "metric": m} for v, m in self.rows]}

    def write_csv(self, path):
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.labels + [self.metric])
            for v, m in self.rows:
                w.writerow([repr(float(x)) for x in v] + [repr(float(m))])
        return Path(path)


def _sweep_job(args):
    scenario, overrides, metric = args
    _, bundle = run_event_study(scenario.with_overrides(overrides))
    return float(bundle.metric(metric))


def sensitivity_sweep(spec: SweepSpec, base: Scenario, threads: int = 1) -> SweepTable:
    """Run every value combination on a fresh simulator; rows follow the
    order of ``itertools.product`` over the parameter value lists."""
    for p in spec.params:
        for path in p.paths:
            base.model.get_param(path)
    scen = base if spec.band is None else base.with_overrides({}, band=spec.band)
    combos = list(spec.combinations())
    jobs = [(scen, spec.overrides(c), spec.metric) for c in combos]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            values = list(ex.map(_sweep_job, jobs))
    else:
        values = [_sweep_job(j) for j in jobs]
    return SweepTable([p.label for p in spec.params], spec.metric, list(zip(combos, values)))


# --------------------------------------------------------------------------
# mitigation

MITIGATIONS = {
    "method1_droop": ("droop_pf", 4.0),
    "method2_pll": ("pll_kp", 0.10),
}
MITIGATION_TARGETS = ("IBR1", "IBR2")


def mitigation_overrides(method, targets=MITIGATION_TARGETS):
    try:
        name, value = MITIGATIONS[method]
    except KeyError:
        raise ModelError(f"unknown mitigation {method!r}; choose from {sorted(MITIGATIONS)}") from None
    return {f"devices.{t}.{name}": value for t in targets}


@dataclass
class Comparison:
    method: str
    labels: tuple                  # (reference, candidate)
    reference: dict
    candidate: dict
    deltas: dict                   # candidate - reference
    valid: bool
    overlay: dict                  # time + monitor traces
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"method": self.method, "labels": list(self.labels), "reference": self.reference,
                "candidate": self.candidate, "deltas": self.deltas, "valid": self.valid,
                "notes": list(self.notes)}

    def swapped(self) -> "Comparison":
        return compare(self.method, (self.labels[1], self.labels[0]), self.candidate, self.reference,
                       {"time_s": self.overlay["time_s"], self.labels[1]: self.overlay[self.labels[1]],
                        self.labels[0]: self.overlay[self.labels[0]]})


def _summary(bundle: StudyBundle):
    m = bundle.mode
    return {"zeta": bundle.zeta, "band_peak_db": bundle.band_peak.mag_db,
            "band_peak_hz": bundle.band_peak.f_peak, "mode_hz": math.nan if m is None else m.frequency,
            "has_mode": m is not None, "shed_fraction": bundle.shed_fraction}


def compare(method, labels, ref: dict, cand: dict, overlay: dict) -> Comparison:
    deltas = {k: cand[k] - ref[k] for k in ("zeta", "band_peak_db")}
    notes = []
    valid = bool(ref["has_mode"])
    if not valid:
        notes.append(f"{labels[0]} shows no in-band mode; comparison is not meaningful")
    return Comparison(method, tuple(labels), ref, cand, deltas, valid, overlay, notes)


def mitigation_compare(method: str, base: Scenario, targets=MITIGATION_TARGETS):
    """Paired base/mitigated runs. Deltas are mitigated minus base."""
    ov = mitigation_overrides(method, targets)
    res_b, b = run_event_study(base)
    res_m, m = run_event_study(base.with_overrides(ov))
    mon = base.monitor_channel()
    overlay = {"time_s": res_b.channels.t, "base": res_b.channels[mon].values,
               "mitigated": res_m.channels[mon].values}
    return compare(method, ("base", "mitigated"), _summary(b), _summary(m), overlay), (b, m)


# --------------------------------------------------------------------------
# export

def export_for_analysis(result: SimResult, directory) -> list:
    """One CSV per device (P, Q, Vmag, angle, frequency), bus channels, and
    ``<device>_pow.csv`` point-on-wave files when synthesised."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {d}: {e}") from e
    cs = result.channels
    files = []
    for dev in result.device_ids():
        names = [n for n in cs.names if n.startswith(dev + "_")]
        files.append(export_csv(cs.select(names), d / f"{dev}.csv"))
    bus = [n for n in cs.names if n.startswith("bus")]
    if bus:
        files.append(export_csv(cs.select(bus), d / "buses.csv"))
    for dev in sorted(result.pow):
        files.append(export_csv(result.pow[dev].data, d / f"{dev}_pow.csv"))
    return files


def write_json(obj, path):
    def clean(x):
        if isinstance(x, dict):
            return {str(k): clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, (np.floating, float)):
            x = float(x)
            return None if not math.isfinite(x) else x
        if isinstance(x, (np.integer,)):
            return int(x)
        if isinstance(x, np.bool_):
            return bool(x)
        return x
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)
