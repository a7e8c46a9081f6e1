"""Scenario files and the shipped kauai-mini benchmark.

A scenario file (TOML)::

    [scenario]
    name = "plant A trip"
    model = "kauai_mini.toml"        # path relative to this file, or "builtin:kauai-mini"
    duration = 10.0
    output_rate = 1000.0
    dt = 50e-6
    pow_synthesis = true

    [analysis]
    band = [10.0, 25.0]
    window = [0.5, 3.5]
    devices = ["IBR1", "IBR2", "IBR3", "IBR4"]
    pow_devices = ["IBR1", "IBR2", "IBR4"]
    monitor = "IBR1_f_hz"

    [[events]]
    time = 0.0
    action = "trip"                  # trip | set | shed
    target = "plantA"

    [set]                            # parameter overrides applied before the run
    "devices.IBR1.droop_pf" = 3.0
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from ..grid import Event, GridModel, ModelError, load_model
from ..modal import DEFAULT_WINDOW

BUILTIN = {"kauai-mini": "kauai_mini.toml"}
KAUAI_SCR_PRE = {"IBR1": 4.3, "IBR2": 3.4, "IBR3": 6.2, "IBR4": 4.4}
KAUAI_SCR_POST = {"IBR1": 3.4, "IBR2": 2.6, "IBR3": 5.7, "IBR4": 2.9}
KAUAI_SHARES = {"plantA": 0.606, "IBR1": 0.041, "IBR2": 0.046, "IBR3": 0.0, "IBR4": 0.041,
                "biomass": 0.137, "hydros": 0.130}
KAUAI_SHED = 0.037
KAUAI_LOAD_MW = 55.0
KAUAI_IBRS = ["IBR1", "IBR2", "IBR3", "IBR4"]
# the recorders of the original event had no point-on-wave channel at IBR3
KAUAI_POW_DEVICES = ["IBR1", "IBR2", "IBR4"]


@dataclass
class Scenario:
    model: GridModel
    events: list = field(default_factory=list)
    duration: float = 10.0
    output_rate: float = 1000.0
    pow_synthesis: bool = False
    dt: float = 50e-6
    name: str = "scenario"
    band: tuple = (10.0, 25.0)
    window: tuple = DEFAULT_WINDOW
    devices: list | None = None          # analysed devices (default: all inverters)
    pow_devices: list | None = None      # devices with point-on-wave records (default: devices)
    monitor: str | None = None           # channel judged by the band peak
    overrides: dict = field(default_factory=dict)
    model_path: str | None = None

    def __post_init__(self):
        self.events = sorted(self.events)
        self.band = tuple(float(x) for x in self.band)
        self.window = tuple(float(x) for x in self.window)
        self.validate()

    def validate(self):
        if not self.duration > 0:
            raise ModelError("duration must be positive")
        for ev in self.events:
            if not 0.0 <= ev.time <= self.duration:
                raise ModelError(f"event at t = {ev.time} s outside [0, {self.duration}]")
            if ev.action == "trip":
                self.model.device(ev.target)
            elif ev.action == "set":
                self.model.get_param(ev.target)
        for path in self.overrides:
            self.model.get_param(path)
        if not 0 < self.band[0] < self.band[1]:
            raise ModelError("analysis band must satisfy 0 < f_lo < f_hi")
        if not self.window[1] > self.window[0]:
            raise ModelError("analysis window must have positive length")
        for d in self.analysis_devices():
            self.model.device(d)

    @property
    def effective_model(self) -> GridModel:
        return self.model.with_params(self.overrides) if self.overrides else self.model

    def analysis_devices(self):
        if self.devices is not None:
            return list(self.devices)
        return [d.id for d in self.model.devices if d.kind in ("gfl", "vsm")]

    def recorded_pow(self):
        return self.analysis_devices() if self.pow_devices is None else list(self.pow_devices)

    def monitor_channel(self):
        if self.monitor:
            return self.monitor
        return f"{self.analysis_devices()[0]}_f_hz"

    def with_overrides(self, overrides: dict, **kw) -> "Scenario":
        ov = dict(self.overrides)
        ov.update(overrides)
        kw.setdefault("events", list(self.events))
        return replace(self, overrides=ov, **kw)

    def without_events(self) -> "Scenario":
        return replace(self, events=[])


def builtin_model_path(name="kauai-mini"):
    try:
        fname = BUILTIN[name]
    except KeyError:
        raise ModelError(f"unknown built-in model {name!r}") from None
    return Path(str(resources.files("ssolab").joinpath("data", fname)))


def resolve_model(ref, base_dir=None):
    ref = str(ref)
    if ref.startswith("builtin:"):
        p = builtin_model_path(ref.split(":", 1)[1])
    else:
        p = Path(ref)
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
    if not p.exists():
        raise FileNotFoundError(p)
    return load_model(p), str(p)


def scenario_from_dict(doc: dict, base_dir=None) -> Scenario:
    sc = doc.get("scenario", {})
    an = doc.get("analysis", {})
    if "model" not in sc:
        raise ModelError("scenario needs a model reference")
    model, mpath = resolve_model(sc["model"], base_dir)
    events = []
    for e in doc.get("events", []):
        try:
            events.append(Event(float(e["time"]), str(e["action"]), str(e.get("target", "")),
                                float(e.get("value", 0.0))))
        except KeyError as k:
            raise ModelError(f"event missing {k.args[0]!r}") from None
    return Scenario(model, events, float(sc.get("duration", 10.0)), float(sc.get("output_rate", 1000.0)),
                    bool(sc.get("pow_synthesis", False)), float(sc.get("dt", 50e-6)),
                    str(sc.get("name", "scenario")), tuple(an.get("band", (10.0, 25.0))),
                    tuple(an.get("window", DEFAULT_WINDOW)), an.get("devices"), an.get("pow_devices"),
                    an.get("monitor"), dict(doc.get("set", {})), mpath)


def load_scenario(path) -> Scenario:
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return scenario_from_dict(doc, path.parent)


def kauai_mini(trip=True, duration=10.0, pow_synthesis=True, dt=50e-6) -> Scenario:
    """The benchmark event: plant A trips at t = 0."""
    path = builtin_model_path()
    model = load_model(path)
    events = [Event(0.0, "trip", "plantA")] if trip else []
    return Scenario(copy.deepcopy(model), events, duration, 1000.0, pow_synthesis, dt,
                    "kauai-mini plant A trip" if trip else "kauai-mini steady state",
                    (10.0, 25.0), DEFAULT_WINDOW, list(KAUAI_IBRS), list(KAUAI_POW_DEVICES),
                    "IBR1_f_hz", {}, str(path))
