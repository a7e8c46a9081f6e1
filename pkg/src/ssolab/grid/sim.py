"""Simulation driver: initialisation from a steady state, event handling
between kernel segments, and conversion of recordings into channel sets."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import devices as dv
from ..signal import ChannelSet, PowRecord, UniformSeries
from . import kernels
from .model import GridModel, ModelError
from .network import assemble, discretize, layout_of, power_flow, static_state

log = logging.getLogger(__name__)

ACTIONS = ("trip", "set", "shed")
FIELD_INDEX = {
    "sg": {"H": dv.SG_H, "D": dv.SG_D, "R": dv.SG_R, "Tg": dv.SG_TG, "Ka": dv.SG_KA,
           "Ta": dv.SG_TA, "pmax": dv.SG_PMAX, "kd": dv.SG_KD},
    "gfl": {"pll_kp": dv.GF_KP, "pll_ki": dv.GF_KI, "current_bw": dv.GF_FCC,
            "droop_pf": dv.GF_DROOP, "ffr_delay": dv.GF_FFR_DELAY, "ffr_deadband": dv.GF_FFR_DB,
            "i_max": dv.GF_IMAX, "ffr_power": dv.GF_FFR_P, "ffr_tau": dv.GF_FFR_TAU,
            "ffr_enabled": dv.GF_FFR_ON, "v_filter": dv.GF_TV, "droop_filter": dv.GF_TF, "pll_filter": dv.GF_TPLL},
    "vsm": {"H_v": dv.VS_H, "D_v": dv.VS_D, "q_droop": dv.VS_MQ, "q_filter": dv.VS_TQ},
}


class SimulationDiverged(RuntimeError):
    def __init__(self, t_fail):
        super().__init__(f"simulation diverged at t = {t_fail:.6f} s")
        self.t_fail = t_fail


@dataclass(order=True)
class Event:
    time: float
    action: str = field(compare=False)
    target: str = field(compare=False, default="")
    value: float = field(compare=False, default=0.0)

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ModelError(f"unknown event action {self.action!r}")


@dataclass
class SimResult:
    channels: ChannelSet
    pow: dict                      # device id -> PowRecord (may be empty)
    shed_fraction: float
    shed_log: list
    events: list
    model_name: str = ""

    def device_ids(self):
        return sorted({n.split("_")[0] for n in self.channels.names if not n.startswith("bus")})


class Simulator:
    """One isolated simulation instance of ``model``."""

    def __init__(self, model: GridModel, dt=50e-6, output_rate=1000.0, tau_f=0.002):
        if not 0 < dt <= 100e-6 + 1e-15:
            raise ModelError("dt must lie in (0, 100] microseconds")
        rec_every = output_rate * dt
        self.rec_every = int(round(1.0 / rec_every))
        if abs(self.rec_every * dt * output_rate - 1.0) > 1e-9:
            raise ModelError("output period must be an integer number of steps")
        self.model = copy.deepcopy(model)
        self.dt = dt
        self.output_rate = output_rate
        self.tau_f = tau_f
        self.lay = layout_of(self.model)
        self.online = {d.id: True for d in self.model.devices}
        self.load_scale = np.ones(len(self.model.loads))
        self.n = 0
        self._init_state()

    # ------------------------------------------------------------------ init
    def _init_state(self):
        m, lay = self.model, self.lay
        pf = power_flow(m)
        self.pf = pf
        kinds = {d.id: d.kind for d in m.devices}
        self.sg_ids = [d.id for d in m.devices if d.kind == "sg"]
        self.gf_ids = [d.id for d in m.devices if d.kind == "gfl"]
        self.vs_ids = [d.id for d in m.devices if d.kind == "vsm"]
        self.dev_order = self.sg_ids + self.gf_ids + self.vs_ids
        u = np.zeros(lay.n_input, dtype=complex)
        for j, dev_id in enumerate(lay.src_devices):
            d = m.device(dev_id)
            bi = m.bus_index(d.bus)
            ratio = d.params.rating / m.base_mva
            init = dv.sg_init if kinds[dev_id] == "sg" else dv.vsm_init
            _, _, emf = init(d.params, ratio, pf.v[bi], pf.i_dev[dev_id])
            u[j] = emf
        for j, dev_id in enumerate(lay.gfl_devices):
            u[lay.n_src + j] = pf.i_dev[dev_id]
        A, B = assemble(m)
        x = static_state(m, A, B, u)
        vb = lay.i_bus

        def rows(ids, np_, nx, init, with_branch):
            P = np.zeros((len(ids), np_))
            S = np.zeros((len(ids), nx))
            for k, dev_id in enumerate(ids):
                d = m.device(dev_id)
                bi = m.bus_index(d.bus)
                ratio = d.params.rating / m.base_mva
                if with_branch:
                    i = x[lay.i_src + lay.src_devices.index(dev_id)]
                else:
                    i = u[lay.n_src + lay.gfl_devices.index(dev_id)]
                P[k], S[k], _ = init(d.params, ratio, x[vb + bi], i)
            return P, S

        self.sg_p, self.sg_s = rows(self.sg_ids, dv.SG_NP, dv.SG_NX, dv.sg_init, True)
        self.gf_p, self.gf_s = rows(self.gf_ids, dv.GF_NP, dv.GF_NX, dv.gfl_init, False)
        self.vs_p, self.vs_s = rows(self.vs_ids, dv.VS_NP, dv.VS_NX, dv.vsm_init, True)
        # the EMF is a function of state; recompute so u matches the rows exactly
        for k, dev_id in enumerate(self.sg_ids):
            s = self.sg_s[k]
            u[lay.src_devices.index(dev_id)] = s[dv.SGX_E] * np.exp(1j * s[dv.SGX_DELTA])
        for k, dev_id in enumerate(self.vs_ids):
            s, p = self.vs_s[k], self.vs_p[k]
            u[lay.src_devices.index(dev_id)] = dv.abs_emf(p, s) * np.exp(1j * s[dv.VSX_DELTA])
        x = static_state(m, A, B, u)
        self.u = u
        self.x = x
        self.fmeas = np.full(lay.n_bus, m.f0)
        if m.ufls is not None and m.ufls.stages:
            self.uf_thr, self.uf_frac, self.uf_delay = m.ufls.arrays()
            self.uf_bus = m.bus_index(m.ufls_bus or m.loads[0].bus)
            self.uf_tau = m.ufls.meas_tau
        else:
            self.uf_tau = 0.0
            self.uf_thr = self.uf_frac = self.uf_delay = np.zeros(0)
            self.uf_bus = 0
        self.uf_timer = np.zeros_like(self.uf_thr)
        self.uf_trip = np.zeros_like(self.uf_thr)
        self.uf_fm = np.array([m.f0])
        self._set_ramps([])
        self._index()
        self._rebuild()

    def _index(self):
        m, lay = self.model, self.lay
        bus = lambda ids: np.array([m.bus_index(m.device(i).bus) for i in ids], dtype=np.int64)
        self.sg_bus, self.gf_bus, self.vs_bus = bus(self.sg_ids), bus(self.gf_ids), bus(self.vs_ids)
        self.sg_br = np.array([lay.i_src + lay.src_devices.index(i) for i in self.sg_ids], dtype=np.int64)
        self.vs_br = np.array([lay.i_src + lay.src_devices.index(i) for i in self.vs_ids], dtype=np.int64)
        self.sg_u = np.array([lay.src_devices.index(i) for i in self.sg_ids], dtype=np.int64)
        self.vs_u = np.array([lay.src_devices.index(i) for i in self.vs_ids], dtype=np.int64)
        self.gf_u = np.array([lay.n_src + lay.gfl_devices.index(i) for i in self.gf_ids], dtype=np.int64)

    def _rebuild(self):
        A, B = assemble(self.model, self.online, self.load_scale)
        self.A, self.B = A, B
        self.Md, self.Bd = discretize(A, B, self.dt)

    # ---------------------------------------------------------------- events
    def _row_of(self, dev_id):
        kind = self.model.device(dev_id).kind
        ids, P, S = {"sg": (self.sg_ids, self.sg_p, self.sg_s), "gfl": (self.gf_ids, self.gf_p, self.gf_s),
                     "vsm": (self.vs_ids, self.vs_p, self.vs_s)}[kind]
        k = ids.index(dev_id)
        return kind, P[k], S[k]

    def _set_ramps(self, ramps):
        self.ramps = list(ramps)
        self.rp_u = np.array([r[0] for r in ramps], dtype=np.int64)
        self.rp_i0 = np.array([r[1] for r in ramps], dtype=complex)
        self.rp_n0 = np.array([r[2] for r in ramps], dtype=np.int64)
        self.rp_len = np.array([r[3] for r in ramps], dtype=np.int64)

    def apply(self, ev: Event):
        """Apply ``ev`` at the current step (its ``time`` is not consulted)."""
        m = self.model
        if ev.action == "trip":
            kind, p, _ = self._row_of(ev.target)
            on = {"sg": dv.SG_ON, "gfl": dv.GF_ON, "vsm": dv.VS_ON}[kind]
            if p[on] == 0.0:
                raise ModelError(f"{ev.target} is already disconnected")
            p[on] = 0.0
            self.online[ev.target] = False
            # the breaker clears the current envelope over half a cycle
            n0 = self.n
            n_clear = max(int(round(0.5 / (m.f0 * self.dt))), 1)
            if kind == "gfl":
                slot = int(self.gf_u[self.gf_ids.index(ev.target)])
            else:
                j = self.lay.src_devices.index(ev.target)
                k = self.lay.i_src + j
                slot = self.lay.i_trip + j
                self.u[slot] = self.x[k]
                self.x[k] = 0.0
                self.u[j] = 0.0
            self._set_ramps(self.ramps + [(slot, self.u[slot], n0, n_clear)])
        elif ev.action == "shed":
            self._shed(float(ev.value), ev.target or None)
        elif ev.action == "set":
            parts = ev.target.split(".")
            if len(parts) != 3 or parts[0] != "devices":
                raise ModelError(f"cannot change {ev.target!r} during a run")
            kind, p, _ = self._row_of(parts[1])
            idx = FIELD_INDEX[kind].get(parts[2])
            if idx is None:
                raise ModelError(f"parameter {ev.target!r} is not changeable during a run")
            setattr(m.device(parts[1]).params, parts[2], ev.value)
            p[idx] = float(ev.value)
        self._rebuild()

    def _shed(self, fraction, bus=None):
        """Remove ``fraction`` of the pre-event load (at ``bus`` or everywhere)."""
        for j, ld in enumerate(self.model.loads):
            if bus is None or ld.bus == bus:
                self.load_scale[j] = max(self.load_scale[j] - fraction, 0.0)
        idx = self.lay.i_load + np.flatnonzero(self.load_scale <= 0)
        self.x[idx] = 0.0

    # ------------------------------------------------------------------- run
    def run(self, duration, events=(), pow_synthesis=False, pow_rate=15000.0):
        dt = self.dt
        n_end = int(round(duration / dt))
        n_rec = n_end // self.rec_every + 1
        nd = len(self.dev_order)
        nb = self.lay.n_bus
        rec_v = np.zeros((n_rec, nb), dtype=complex)
        rec_i = np.zeros((n_rec, nd), dtype=complex)
        rec_f = np.zeros((n_rec, nd))
        rec_fb = np.zeros((n_rec, nb))
        npow = n_end + 1 if pow_synthesis else 0
        pow_v = np.zeros((npow, nd), dtype=complex)
        pow_i = np.zeros((npow, nd), dtype=complex)
        self._record0(rec_v, rec_i, rec_f, rec_fb, pow_v, pow_i, pow_synthesis)
        queue = sorted(events)
        for ev in queue:
            if not 0 <= ev.time <= duration:
                raise ModelError(f"event at t = {ev.time} outside [0, {duration}]")
        shed_log = []
        shed_out = np.zeros(1)
        # steps are counted from the simulator's creation so runs can be chained;
        # event times and the returned time axis are relative to this call
        base = self.n
        n_end += base
        at = lambda ev: base + int(round(ev.time / dt))
        n = base
        qi = 0
        while True:
            while qi < len(queue) and at(queue[qi]) <= n:
                self.apply(queue[qi])
                qi += 1
            if n >= n_end:
                break
            n_stop = n_end if qi >= len(queue) else min(at(queue[qi]), n_end)
            if n_stop > n:
                n, code = kernels.run_segment(
                    self.Md, self.Bd, self.x, self.u, self.lay.i_bus,
                    self.sg_p, self.sg_s, self.sg_bus, self.sg_br, self.sg_u,
                    self.gf_p, self.gf_s, self.gf_bus, self.gf_u,
                    self.vs_p, self.vs_s, self.vs_bus, self.vs_br, self.vs_u,
                    self.rp_u, self.rp_i0, self.rp_n0, self.rp_len,
                    self.uf_thr, self.uf_frac, self.uf_delay, self.uf_timer, self.uf_trip, self.uf_bus,
                    self.uf_fm, self.uf_tau,
                    self.fmeas, self.tau_f, n, n_stop, base, dt, self.rec_every,
                    rec_v, rec_i, rec_f, rec_fb, pow_v, pow_i, shed_out)
                self.n = n
                if code == kernels.DIVERGED:
                    raise SimulationDiverged((n - base) * dt)
                if code == kernels.UFLS_TRIP:
                    shed_log.append(((n - base) * dt, float(shed_out[0])))
                    log.info("UFLS stage trip at t=%.4f s, shedding %.3f", (n - base) * dt, shed_out[0])
                    self._shed(float(shed_out[0]))
                    self._rebuild()
        return self._result(rec_v, rec_i, rec_f, rec_fb, pow_v, pow_i, pow_synthesis, pow_rate,
                            shed_log, list(queue))

    def _record0(self, rec_v, rec_i, rec_f, rec_fb, pow_v, pow_i, pow_on):
        kernels._store(rec_v, rec_i, rec_f, rec_fb, 0, self.x, self.u, self.lay.i_bus, self.fmeas,
                       self.sg_s, self.sg_br, self.gf_s, self.gf_u, self.vs_s, self.vs_br)
        if pow_on:
            kernels._store_pow(pow_v, pow_i, 0, self.x, self.u, self.lay.i_bus, self.sg_bus, self.sg_br,
                               self.gf_bus, self.gf_u, self.vs_bus, self.vs_br)

    def device_currents(self):
        out = {}
        for dev_id in self.dev_order:
            if dev_id in self.gf_ids:
                out[dev_id] = self.u[self.gf_u[self.gf_ids.index(dev_id)]]
            else:
                out[dev_id] = self.x[self.lay.i_src + self.lay.src_devices.index(dev_id)]
        return out

    def _result(self, rec_v, rec_i, rec_f, rec_fb, pow_v, pow_i, pow_on, pow_rate, shed_log, events):
        m = self.model
        dt_out = 1.0 / self.output_rate
        data = {}
        for j, dev_id in enumerate(self.dev_order):
            bi = m.bus_index(m.device(dev_id).bus)
            v = rec_v[:, bi]
            s = v * np.conj(rec_i[:, j])
            data[f"{dev_id}_p_pu"] = s.real
            data[f"{dev_id}_q_pu"] = s.imag
            data[f"{dev_id}_vmag_pu"] = np.abs(v)
            data[f"{dev_id}_theta_rad"] = np.angle(v)
            data[f"{dev_id}_f_hz"] = rec_fb[:, bi]
            data[f"{dev_id}_fint_hz"] = rec_f[:, j]
        for b, bus_id in enumerate(m.bus_ids):
            data[f"bus{bus_id}_vmag_pu"] = np.abs(rec_v[:, b])
            data[f"bus{bus_id}_f_hz"] = rec_fb[:, b]
        channels = ChannelSet.from_arrays(0.0, dt_out, data)
        pows = {}
        if pow_on:
            t_step = self.dt * np.arange(pow_v.shape[0])
            t_pow = np.arange(0.0, t_step[-1] + 1e-12, 1.0 / pow_rate)
            for j, dev_id in enumerate(self.dev_order):
                vdq = np.interp(t_pow, t_step, pow_v[:, j].real) + 1j * np.interp(t_pow, t_step, pow_v[:, j].imag)
                idq = np.interp(t_pow, t_step, pow_i[:, j].real) + 1j * np.interp(t_pow, t_step, pow_i[:, j].imag)
                vabc = kernels.abc_from_dq(vdq, t_pow, 2 * math.pi * m.f0)
                # recorder convention: current positive into the device
                iabc = -kernels.abc_from_dq(idq, t_pow, 2 * math.pi * m.f0)
                cs = ChannelSet.from_arrays(0.0, 1.0 / pow_rate, {
                    "va": vabc[:, 0], "vb": vabc[:, 1], "vc": vabc[:, 2],
                    "ia": iabc[:, 0], "ib": iabc[:, 1], "ic": iabc[:, 2]})
                pows[dev_id] = PowRecord(cs, m.f0)
        total = float(sum(x for _, x in shed_log))
        return SimResult(channels, pows, total, shed_log, events, m.name)


def run(model: GridModel, scenario, dt=50e-6) -> SimResult:
    """Run ``scenario`` (anything with ``duration``, ``events``,
    ``output_rate`` and ``pow_synthesis``) on a fresh instance of ``model``."""
    sim = Simulator(model, dt=dt, output_rate=getattr(scenario, "output_rate", 1000.0))
    return sim.run(scenario.duration, scenario.events, getattr(scenario, "pow_synthesis", False))
