"""Command-line front end.

    ssolab analyze {spectrogram,modes,def,ssp} INPUT... [flags]
    ssolab sim {run,sweep,scr,mitigate} SCENARIO [flags]

Exit codes: 0 success, 2 input or parse error, 3 analysis error,
4 simulation divergence. Results go to ``--out`` (default ``$SSOLAB_OUT`` or
``./ssolab_out``); a manifest with input hashes is written first.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import energy_flow as ef
from . import interharmonic as ih
from .devices import ParamError
from .grid import Event, ModelError, SimulationDiverged, load_model
from .grid.network import scr as scr_value
from .modal import DEFAULT_WINDOW, ModalError, extract_shape, fit_modes, write_mode_table
from .signal import ChannelSet, PowRecord, SignalError, band_peak, detrend, export_spectrogram_csv, ingest_csv, stft

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

OUT_ENV = "SSOLAB_OUT"
EXIT_OK, EXIT_INPUT, EXIT_ANALYSIS, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("ssolab")


class InputError(Exception):
    pass


class AnalysisError(Exception):
    pass


# --------------------------------------------------------------------------
# manifest

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: list
    inputs: list
    overrides: dict
    out_dir: str
    version: str = __version__
    hashes: dict = field(default_factory=dict)
    created: str = ""

    def write(self):
        self.hashes = {str(p): sha256(p) for p in self.inputs if Path(p).is_file()}
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        stamp = float(epoch) if epoch else time.time()
        self.created = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(stamp))
        doc = {"command": self.command, "inputs": [str(p) for p in self.inputs], "overrides": self.overrides,
               "out_dir": self.out_dir, "tool_version": self.version, "input_sha256": self.hashes,
               "created": self.created}
        path = Path(self.out_dir) / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


# --------------------------------------------------------------------------
# flag parsing

def parse_range(text, what):
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise InputError(f"{what} must look like a:b, got {text!r}") from None
    if not b > a:
        raise InputError(f"{what} needs a < b")
    return a, b


def parse_sets(items):
    out = {}
    for it in items or []:
        if "=" not in it:
            raise InputError(f"--set expects path=value, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v.strip()
    return out


def parse_trip(text):
    dev, _, t = text.partition("@")
    try:
        return Event(float(t or 0.0), "trip", dev)
    except ValueError:
        raise InputError(f"--trip expects device@time, got {text!r}") from None


def out_dir(args):
    d = Path(args.out or os.environ.get(OUT_ENV) or "ssolab_out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _ingest(paths) -> ChannelSet:
    sets = []
    for p in paths:
        try:
            sets.append(ingest_csv(p))
        except FileNotFoundError:
            raise InputError(f"input file not found: {p}") from None
        except SignalError as e:
            raise InputError(str(e)) from None
    chans = []
    for s in sets:
        chans.extend(s.channels)
    try:
        return ChannelSet(chans)
    except SignalError as e:
        raise InputError(f"inputs do not share a time base: {e}") from None


def _manifest(args, inputs, overrides, out):
    RunManifest(["ssolab"] + list(args.argv), [str(p) for p in inputs], overrides, str(out)).write()


# --------------------------------------------------------------------------
# analyze

def cmd_analyze(args):
    from . import plots
    from .experiment.study import MODE_FLOOR, PRONY_ORDER, critical_mode
    inputs = [Path(p) for p in args.inputs]
    for p in inputs:
        if not p.exists():
            raise InputError(f"input file not found: {p}")
    band = parse_range(args.band, "--band")
    window = parse_range(args.window, "--window") if args.window else DEFAULT_WINDOW
    out = out_dir(args)
    _manifest(args, inputs, {}, out)
    summary = {"command": args.sub, "band_hz": list(band), "window_s": list(window)}

    if args.sub == "ssp":
        pows = {}
        for p in inputs:
            dev = p.stem[:-4] if p.stem.endswith("_pow") else p.stem
            cs = _ingest([p])
            try:
                pows[dev] = PowRecord(cs, args.f0)
            except SignalError as e:
                raise InputError(f"{p}: {e}") from None
        devices = args.devices.split(",") if args.devices else sorted(pows)
        try:
            res, fm = ih.locate_sources(pows, devices, band, window, f_mod=args.fmod)
        except SignalError as e:
            raise AnalysisError(str(e)) from None
        ih.write_ssp_report(res, out / "ssp_report.csv")
        ser = {f"{r.device}_p_sc": r.p_sc.values for r in res}
        t = res[0].p_sc.t
        n = min(len(v) for v in ser.values())
        plots.lines(out / "p_sc", t[:n], {k: v[:n] for k, v in ser.items()}, ylabel="p_sc (pu)")
        summary.update(f_mod_hz=fm, sources=[r.device for r in res if r.is_source],
                       results=[{"device": r.device, "f_sub_hz": r.f_sub, "f_sup_hz": r.f_sup,
                                 "mean_p_sc_pu": r.mean_p_sc, "is_source": r.is_source} for r in res])
        _write_summary(out, summary)
        print("ssp sources:", ",".join(summary["sources"]) or "none")
        return EXIT_OK

    cs = _ingest(inputs)
    if args.sub == "spectrogram":
        name = args.channel or cs.names[0]
        if name not in cs:
            raise InputError(f"no channel {name!r} in input")
        try:
            s = detrend(cs[name], "linear")
            spec = stft(s, args.stft_window, args.stft_window * 0.5)
            bp = band_peak(spec, *band)
        except SignalError as e:
            raise AnalysisError(str(e)) from None
        export_spectrogram_csv(spec, out / "spectrogram_data.csv")
        plots.heatmap(out / "spectrogram", spec, f_max=min(spec.frequencies[-1], 4 * band[1]))
        summary.update(channel=name, f_peak_hz=bp.f_peak, mag_db=bp.mag_db, significant=bp.significant,
                       prominence_db=bp.prominence_db)
        _write_summary(out, summary)
        print(f"band peak {bp.f_peak:.3f} Hz, {bp.mag_db:.1f} dB")
        return EXIT_OK

    if args.sub == "modes":
        names = args.channels.split(",") if args.channels else (
            [n for n in cs.names if n.endswith("_p_pu")] or cs.names)
        for n in names:
            if n not in cs:
                raise InputError(f"no channel {n!r} in input")
        try:
            data = cs.select(names).window(*window) if args.window else cs.select(names)
            order = args.max_order or min(PRONY_ORDER, data.n // 4)
            modes = fit_modes(data, band[0], band[1], max_order=order)
            modes = [m for m in modes if np.max(np.abs(m.residues)) > MODE_FLOOR]
            shape = extract_shape(modes, *band)
            crit = critical_mode(modes)
        except ModalError as e:
            msg = str(e)
            raise AnalysisError("no in-band mode" if "no mode in" in msg else msg) from None
        except SignalError as e:
            raise AnalysisError(str(e)) from None
        write_mode_table(modes, out / "mode_table.csv")
        plots.polar_shape(out / "mode_shape", shape)
        m = crit
        summary.update(freq_hz=m.frequency, sigma_1_per_s=m.sigma, zeta=m.zeta, reference=shape.reference,
                       dominant_freq_hz=shape.mode.frequency, dominant_zeta=shape.mode.zeta,
                       shape={c: {"mag": float(abs(r)), "phase_deg": float(np.degrees(np.angle(r)))}
                              for c, r in zip(shape.channels, shape.residues)})
        _write_summary(out, summary)
        print(f"mode {m.frequency:.3f} Hz, zeta {m.zeta:.4f}")
        return EXIT_OK

    if args.sub == "def":
        devices = args.devices.split(",") if args.devices else sorted(
            {n[:-5] for n in cs.names if n.endswith("_p_pu")})
        if not devices:
            raise InputError("no <device>_p_pu channels in input")
        try:
            res = ef.locate_sources(cs, devices, band, window, args.threshold, args.use_frequency)
        except ef.DefError as e:
            if "missing channel" in str(e):
                raise InputError(str(e)) from None
            raise AnalysisError(str(e)) from None
        except SignalError as e:
            raise AnalysisError(str(e)) from None
        ef.write_def_report(res, out / "def_report.csv")
        W = ef.energy_channels(res)
        plots.lines(out / "def_energy", W.t, {c.name: c.values for c in W.channels}, ylabel="W (pu rad)")
        summary.update(sources=[r.device for r in res if r.is_source],
                       results=[{"device": r.device, "slope_pu_rad_per_s": r.slope, "fit_r2": r.fit_r2,
                                 "is_source": r.is_source} for r in res])
        _write_summary(out, summary)
        print("def sources:", ",".join(summary["sources"]) or "none")
        return EXIT_OK
    raise InputError(f"unknown analyze command {args.sub}")


def _write_summary(out, summary):
    from .experiment import write_json
    write_json(summary, Path(out) / "summary.json")


# --------------------------------------------------------------------------
# sim

def _scenario(args, overrides):
    from .experiment import Scenario, kauai_mini, load_scenario
    ref = args.scenario
    if ref in ("kauai-mini", "builtin:kauai-mini"):
        sc = kauai_mini()
        inputs = [sc.model_path]
    else:
        p = Path(ref)
        if not p.exists():
            raise InputError(f"scenario file not found: {p}")
        try:
            with open(p, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise InputError(f"{p}: {e}") from None
        inputs = [p]
        if "scenario" in doc:
            sc = load_scenario(p)
            if sc.model_path:
                inputs.append(Path(sc.model_path))
        else:
            model = load_model(p)
            if model.name == "kauai-mini":
                # same analysis setup and recorder coverage as the shipped benchmark
                sc = replace(kauai_mini(trip=False), model=model, name=model.name, model_path=str(p))
            else:
                sc = Scenario(model, [], 10.0, 1000.0, True, name=model.name, model_path=str(p))
    trips = [parse_trip(t) for t in getattr(args, "trip", None) or []]
    kw = {}
    if trips:
        kw["events"] = sorted(list(sc.events) + trips)
    if args.dt:
        kw["dt"] = float(args.dt)
    if args.band:
        kw["band"] = parse_range(args.band, "--band")
    if args.window:
        kw["window"] = parse_range(args.window, "--window")
    if getattr(args, "duration", None):
        kw["duration"] = float(args.duration)
    if getattr(args, "pow_devices", None):
        kw["pow_devices"] = args.pow_devices.split(",")
    if getattr(args, "no_pow", False):
        kw["pow_synthesis"] = False
    sc = sc.with_overrides(overrides, **kw)
    sc.effective_model  # reject bad override values before anything is written
    return sc, inputs


def _study_outputs(out, result, bundle, scenario):
    from . import plots
    from .experiment import export_for_analysis, write_json
    export_for_analysis(result, out / "data")
    write_json(bundle.to_dict(), out / "study.json")
    write_mode_table(bundle.modes, out / "mode_table.csv")
    ef.write_def_report(bundle.def_results, out / "def_report.csv")
    if bundle.ssp_results is not None:
        ih.write_ssp_report(bundle.ssp_results, out / "ssp_report.csv")
    cs = result.channels
    mon = scenario.monitor_channel()
    plots.trace_and_spectrum(out / "frequency", cs.t, {mon: cs[mon].values}, scenario.band, scenario.window[0])
    if bundle.shape is not None:
        plots.polar_shape(out / "mode_shape", bundle.shape)


def cmd_sim(args):
    from .experiment import (SweepSpec, mitigation_compare, run_event_study, sensitivity_sweep, write_json)
    overrides = parse_sets(args.set)
    if args.sub == "scr":
        return _cmd_scr(args, overrides)
    sc, inputs = _scenario(args, overrides)
    out = out_dir(args)
    if args.sub == "sweep":
        p = Path(args.sweep)
        if not p.exists():
            raise InputError(f"sweep file not found: {p}")
        with open(p, "rb") as fh:
            spec = SweepSpec.from_dict(tomllib.load(fh))
        inputs.append(p)
    _manifest(args, inputs, overrides, out)

    if args.sub == "run":
        result, bundle = run_event_study(sc)
        _study_outputs(out, result, bundle, sc)
        m = bundle.mode
        print(f"{sc.name}: shed {bundle.shed_fraction:.3f}; "
              + (f"mode {m.frequency:.2f} Hz zeta {m.zeta:.4f}" if m else "no in-band mode")
              + f"; DEF sources {bundle.def_sources()}; SSP sources {bundle.ssp_sources()}")
        return EXIT_OK
    if args.sub == "sweep":
        from . import plots
        table = sensitivity_sweep(spec, sc, threads=args.threads)
        table.write_csv(out / "sweep.csv")
        write_json(table.to_dict(), out / "sweep.json")
        x = np.array([float(v[0]) for v, _ in table.rows])
        y = np.array([m for _, m in table.rows])
        plots.lines(out / "sweep_plot", x, {table.metric: y}, xlabel=table.labels[0] + " ", ylabel=table.metric)
        for v, m in table.rows:
            print(", ".join(f"{x:g}" for x in v), "->", f"{m:.6g}")
        return EXIT_OK
    if args.sub == "mitigate":
        from . import plots
        method = {"method1": "method1_droop", "method2": "method2_pll"}.get(args.method, args.method)
        comp, _ = mitigation_compare(method, sc)
        write_json(comp.to_dict(), out / "mitigation.json")
        ov = comp.overlay
        plots.trace_and_spectrum(out / "mitigation_overlay", ov["time_s"],
                                 {"base": ov["base"], "mitigated": ov["mitigated"]}, sc.band, sc.window[0])
        print(f"{method}: zeta {comp.reference['zeta']:.4f} -> {comp.candidate['zeta']:.4f} "
              f"(delta {comp.deltas['zeta']:+.4f}); band peak delta {comp.deltas['band_peak_db']:+.1f} dB"
              + ("" if comp.valid else " [invalid: base has no in-band mode]"))
        return EXIT_OK
    raise InputError(f"unknown sim command {args.sub}")


def _cmd_scr(args, overrides):
    from .experiment import write_json
    from .experiment.scenario import builtin_model_path
    ref = args.scenario
    path = builtin_model_path() if ref in ("kauai-mini", "builtin:kauai-mini") else Path(ref)
    if not Path(path).exists():
        raise InputError(f"model file not found: {path}")
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    if "scenario" in doc:
        from .experiment import load_scenario
        model = load_scenario(path).model
    else:
        model = load_model(path)
    model = model.with_params(overrides)
    target = args.bus
    try:
        dev = model.device(target)
        bus, rating = dev.bus, dev.params.rating
    except ModelError:
        bus = target
        model.bus_index(bus)
        if args.rating is None:
            raise InputError("--rating is required when --bus names a bus") from None
        rating = args.rating
    if args.rating is not None:
        rating = args.rating
    without = set(args.without or [])
    for w in without:
        model.device(w)
    in_service = [d.id for d in model.devices if d.id not in without]
    value = scr_value(model, bus, rating, in_service)
    out = out_dir(args)
    _manifest(args, [path], overrides, out)
    write_json({"bus": bus, "target": target, "rating_mva": rating, "without": sorted(without), "scr": value},
               out / "scr.json")
    print(f"SCR at {target} ({bus}, {rating:g} MVA){' without ' + ','.join(sorted(without)) if without else ''}: {value:.3f}")
    return EXIT_OK


# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--band", default=None, help="analysis band f_lo:f_hi in Hz")
    p.add_argument("--window", default=None, help="analysis window t0:t1 in s")
    p.add_argument("--dt", default=None, type=float, help="simulation step in s")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./ssolab_out)")
    p.add_argument("--set", action="append", default=[], help="parameter override path=value (repeatable)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")


def build_parser():
    ap = argparse.ArgumentParser(prog="ssolab", description="Subsynchronous oscillation forensics and simulation")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    top = ap.add_subparsers(dest="group", required=True)

    an = top.add_parser("analyze", help="analyze recorded data")
    asub = an.add_subparsers(dest="sub", required=True)
    for name in ("spectrogram", "modes", "def", "ssp"):
        p = asub.add_parser(name)
        p.add_argument("inputs", nargs="+", help="CSV files (first column time_s)")
        _common(p)
        p.set_defaults(band="10:25")
        if name == "spectrogram":
            p.add_argument("--channel")
            p.add_argument("--stft-window", type=float, default=2.0)
        if name == "modes":
            p.add_argument("--channels")
            p.add_argument("--max-order", type=int, default=None)
        if name == "def":
            p.add_argument("--devices")
            p.add_argument("--threshold", type=float, default=None)
            p.add_argument("--use-frequency", action="store_true")
        if name == "ssp":
            p.add_argument("--devices")
            p.add_argument("--fmod", type=float, default=None, help="modulation frequency (Hz); estimated if omitted")
            p.add_argument("--f0", type=float, default=60.0)

    sm = top.add_parser("sim", help="run simulations")
    ssub = sm.add_subparsers(dest="sub", required=True)
    for name in ("run", "sweep", "scr", "mitigate"):
        p = ssub.add_parser(name)
        p.add_argument("scenario", help="scenario or model TOML, or 'kauai-mini'")
        _common(p)
        if name in ("run", "sweep", "mitigate"):
            p.add_argument("--trip", action="append", default=[], help="device@time (repeatable)")
            p.add_argument("--duration", type=float, default=None)
            p.add_argument("--no-pow", action="store_true", help="skip point-on-wave synthesis")
            p.add_argument("--pow-devices", help="comma list of devices with point-on-wave records")
        if name == "sweep":
            p.add_argument("sweep", help="sweep spec TOML")
        if name == "scr":
            p.add_argument("--bus", required=True, help="device id or bus id")
            p.add_argument("--without", action="append", default=[], help="device out of service (repeatable)")
            p.add_argument("--rating", type=float, default=None, help="MVA (defaults to the device rating)")
        if name == "mitigate":
            p.add_argument("--method", required=True,
                           choices=["method1", "method2", "method1_droop", "method2_pll"])
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code not in (0, None) else EXIT_OK
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.group == "analyze":
            return cmd_analyze(args)
        return cmd_sim(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, ModelError, ParamError, tomllib.TOMLDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (AnalysisError, SignalError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
