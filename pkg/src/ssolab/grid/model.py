"""Network description and its TOML file format.

A model file has these sections (SI units, stated in the key names)::

    [grid]      base_mva, f0_hz, name
    [[buses]]   id, kv
    [[branches]] from, to, r_ohm, l_h
    [[shunts]]  bus, c_f
    [[loads]]   bus, p_mw, q_mvar            # constant impedance at 1 pu
    [[devices]] id, type = "sg"|"gfl"|"vsm", bus, share, v_set, <parameters>
    [ufls]      bus, stages = [[f_hz, fraction, delay_s], ...], meas_tau (s)

``share`` is the device's fraction of total pre-event generation.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from ..devices import GflParams, SgParams, UflsParams, VsmParams

DEVICE_TYPES = {"sg": SgParams, "gfl": GflParams, "vsm": VsmParams}


class ModelError(ValueError):
    pass


@dataclass
class Bus:
    id: str
    kv: float


@dataclass
class Branch:
    frm: str
    to: str
    r_ohm: float
    l_h: float


@dataclass
class Load:
    bus: str
    p_mw: float
    q_mvar: float


@dataclass
class Device:
    id: str
    kind: str
    bus: str
    params: object
    share: float = 0.0
    v_set: float | None = None


@dataclass
class GridModel:
    buses: list
    branches: list
    loads: list
    devices: list
    shunts: dict = field(default_factory=dict)
    base_mva: float = 100.0
    f0: float = 60.0
    name: str = "grid"
    ufls: UflsParams | None = None
    ufls_bus: str | None = None

    def __post_init__(self):
        self.validate()

    # -- lookups
    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    def bus_index(self, bus_id):
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise ModelError(f"unknown bus {bus_id!r}") from None

    def device(self, dev_id):
        for d in self.devices:
            if d.id == dev_id:
                return d
        raise ModelError(f"unknown device {dev_id!r}")

    def zbase(self, bus_id):
        kv = self.buses[self.bus_index(bus_id)].kv
        return kv * kv / self.base_mva

    @property
    def total_load_mw(self):
        return sum(ld.p_mw for ld in self.loads)

    def validate(self):
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate bus id")
        dev_ids = [d.id for d in self.devices]
        if len(set(dev_ids)) != len(dev_ids):
            raise ModelError("duplicate device id")
        for br in self.branches:
            for b in (br.frm, br.to):
                self.bus_index(b)
            if br.r_ohm <= 0 or br.l_h <= 0:
                raise ModelError(f"branch {br.frm}-{br.to} needs positive R and L (zero-impedance branch)")
        for b, c in self.shunts.items():
            self.bus_index(b)
            if c <= 0:
                raise ModelError(f"shunt at {b} must be positive")
        for ld in self.loads:
            self.bus_index(ld.bus)
            if ld.p_mw <= 0:
                raise ModelError("loads must consume positive active power")
        for d in self.devices:
            self.bus_index(d.bus)
            if d.kind not in DEVICE_TYPES:
                raise ModelError(f"unknown device type {d.kind!r}")
        self._check_connected()

    def _check_connected(self):
        adj = {b: set() for b in self.bus_ids}
        for br in self.branches:
            adj[br.frm].add(br.to)
            adj[br.to].add(br.frm)
        seen = set()
        stack = [self.bus_ids[0]] if self.bus_ids else []
        while stack:
            b = stack.pop()
            if b in seen:
                continue
            seen.add(b)
            stack.extend(adj[b] - seen)
        if len(seen) != len(self.bus_ids):
            missing = sorted(set(self.bus_ids) - seen)
            raise ModelError(f"network graph is disconnected (unreached: {missing})")

    # -- parameter paths
    def get_param(self, path: str):
        obj, name = self._resolve(path)
        return getattr(obj, name)

    def with_params(self, overrides: dict) -> "GridModel":
        """Copy of the model with dotted-path overrides applied, e.g.
        ``{"devices.IBR1.pll_kp": 0.1}``."""
        m = copy.deepcopy(self)
        for path, value in overrides.items():
            obj, name = m._resolve(path)
            cur = getattr(obj, name)
            if isinstance(cur, bool):
                value = bool(value)
            elif isinstance(cur, (int, float)) and not isinstance(value, (list, tuple)):
                value = float(value)
            setattr(obj, name, value)
            if hasattr(obj, "__post_init__"):
                obj.__post_init__()
        return m

    def _resolve(self, path):
        parts = path.split(".")
        if len(parts) == 3 and parts[0] == "devices":
            dev = self.device(parts[1])
            if parts[2] in ("share", "v_set"):
                return dev, parts[2]
            if parts[2] not in {f.name for f in fields(dev.params)}:
                raise ModelError(f"device {parts[1]} has no parameter {parts[2]!r}")
            return dev.params, parts[2]
        if len(parts) == 2 and parts[0] == "grid" and parts[1] in ("base_mva", "f0"):
            return self, parts[1]
        if len(parts) == 2 and parts[0] == "ufls" and parts[1] == "stages" and self.ufls is not None:
            return self.ufls, "stages"
        raise ModelError(f"unresolvable parameter path {path!r}")


def _device_from_dict(d):
    d = dict(d)
    try:
        kind = d.pop("type")
        dev_id = d.pop("id")
        bus = d.pop("bus")
    except KeyError as e:
        raise ModelError(f"device entry missing {e.args[0]!r}") from None
    share = float(d.pop("share", 0.0))
    v_set = d.pop("v_set", None)
    cls = DEVICE_TYPES.get(kind)
    if cls is None:
        raise ModelError(f"unknown device type {kind!r}")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ModelError(f"device {dev_id}: unknown parameters {sorted(extra)}")
    return Device(dev_id, kind, bus, cls(**d), share, v_set)


def model_from_dict(doc: dict) -> GridModel:
    g = doc.get("grid", {})
    try:
        buses = [Bus(str(b["id"]), float(b["kv"])) for b in doc["buses"]]
        branches = [Branch(str(b["from"]), str(b["to"]), float(b["r_ohm"]), float(b["l_h"]))
                    for b in doc.get("branches", [])]
        loads = [Load(str(x["bus"]), float(x["p_mw"]), float(x.get("q_mvar", 0.0)))
                 for x in doc.get("loads", [])]
        shunts = {}
        for s in doc.get("shunts", []):
            shunts[str(s["bus"])] = shunts.get(str(s["bus"]), 0.0) + float(s["c_f"])
    except KeyError as e:
        raise ModelError(f"model file missing field {e.args[0]!r}") from None
    devices = [_device_from_dict(d) for d in doc.get("devices", [])]
    ufls = ufls_bus = None
    if "ufls" in doc:
        ufls = UflsParams(doc["ufls"].get("stages", []), float(doc["ufls"].get("meas_tau", 0.05)))
        ufls_bus = doc["ufls"].get("bus")
    return GridModel(buses, branches, loads, devices, shunts,
                     base_mva=float(g.get("base_mva", 100.0)), f0=float(g.get("f0_hz", 60.0)),
                     name=str(g.get("name", "grid")), ufls=ufls, ufls_bus=ufls_bus)


def load_model(path) -> GridModel:
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return model_from_dict(doc)


def zpu_line(model: GridModel, br: Branch):
    zb = model.zbase(br.frm)
    return br.r_ohm / zb, br.l_h / zb


def wpu(model: GridModel):
    return 2.0 * math.pi * model.f0
