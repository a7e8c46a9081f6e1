"""dq-frame network assembly, steady-state solution and short-circuit strength.

State vector layout (complex, per unit)::

    [line currents | source-branch currents | load-branch currents | bus voltages]

Source branches carry the internal impedance of voltage-behind-impedance
devices (generator subtransient reactance, VSM virtual reactance). Loads are
series R-L branches to ground sized at 1 pu voltage. Every bus has a shunt
capacitance so current-source devices always see a capacitive node.

Inputs are ``[source EMFs | GFL currents | trip currents]``. The last block
injects a decaying current at the bus of a voltage-source device that has just
been disconnected, standing in for the breaker clearing its current.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ..devices import F0, W0
from .model import GridModel, ModelError, zpu_line


class NoSourceError(ModelError):
    pass


@dataclass
class Layout:
    n_line: int
    src_devices: list      # device ids with a source branch (sg, vsm)
    gfl_devices: list
    n_load: int
    n_bus: int

    @property
    def n_src(self):
        return len(self.src_devices)

    @property
    def i_src(self):
        return self.n_line

    @property
    def i_load(self):
        return self.n_line + self.n_src

    @property
    def i_bus(self):
        return self.n_line + self.n_src + self.n_load

    @property
    def n_state(self):
        return self.i_bus + self.n_bus

    @property
    def i_trip(self):
        return self.n_src + len(self.gfl_devices)

    @property
    def n_input(self):
        return 2 * self.n_src + len(self.gfl_devices)


def layout_of(model: GridModel) -> Layout:
    src = [d.id for d in model.devices if d.kind in ("sg", "vsm")]
    gfl = [d.id for d in model.devices if d.kind == "gfl"]
    return Layout(len(model.branches), src, gfl, len(model.loads), len(model.buses))


def source_impedance(model: GridModel, dev_id) -> complex:
    """Internal impedance of a voltage-source device on the system base."""
    d = model.device(dev_id)
    ratio = d.params.rating / model.base_mva
    if d.kind == "sg":
        return complex(d.params.rs, d.params.xd_sub) / ratio
    if d.kind == "vsm":
        return complex(d.params.r_v, d.params.x_v) / ratio
    raise ModelError(f"{dev_id} is not a voltage-source device")


def load_admittance(model: GridModel, k: int, scale: float = 1.0) -> complex:
    ld = model.loads[k]
    return scale * complex(ld.p_mw, -ld.q_mvar) / model.base_mva


def shunt_c(model: GridModel):
    c = np.zeros(len(model.buses))
    for b, cf in model.shunts.items():
        i = model.bus_index(b)
        c[i] = cf * model.zbase(b)
    if np.any(c <= 0):
        missing = [model.bus_ids[i] for i in np.flatnonzero(c <= 0)]
        raise ModelError(f"buses without shunt capacitance: {missing}")
    return c


def assemble(model: GridModel, online=None, load_scale=None):
    """Continuous-time system ``dx/dt = A x + B u``.

    ``online`` maps device id to bool (default all online); ``load_scale``
    holds one multiplier per load (default 1).
    """
    if abs(model.f0 - F0) > 1e-12:
        raise ModelError(f"device kernels are built for f0 = {F0} Hz")
    lay = layout_of(model)
    online = online or {}
    scale = np.ones(lay.n_load) if load_scale is None else np.asarray(load_scale, float)
    n = lay.n_state
    A = np.zeros((n, n), dtype=complex)
    B = np.zeros((n, lay.n_input), dtype=complex)
    cbus = shunt_c(model)
    vb = lay.i_bus

    def coupled_branch(k, z_r, l_pu, a, b):
        A[k, k] = -(z_r + 1j * W0 * l_pu) / l_pu
        if a is not None:
            A[k, vb + a] += 1.0 / l_pu
            A[vb + a, k] -= 1.0 / cbus[a]
        if b is not None:
            A[k, vb + b] -= 1.0 / l_pu
            A[vb + b, k] += 1.0 / cbus[b]

    for k, br in enumerate(model.branches):
        r, l = zpu_line(model, br)
        coupled_branch(k, r, l, model.bus_index(br.frm), model.bus_index(br.to))

    for j, dev_id in enumerate(lay.src_devices):
        k = lay.i_src + j
        if not online.get(dev_id, True):
            A[k, k] = -1.0
            continue
        z = source_impedance(model, dev_id)
        l_pu = z.imag / W0
        bi = model.bus_index(model.device(dev_id).bus)
        coupled_branch(k, z.real, l_pu, None, bi)
        B[k, j] = 1.0 / l_pu

    for j, dev_id in enumerate(lay.src_devices):
        bi = model.bus_index(model.device(dev_id).bus)
        B[vb + bi, lay.i_trip + j] = 1.0 / cbus[bi]

    for j, ld in enumerate(model.loads):
        k = lay.i_load + j
        if scale[j] <= 0:
            A[k, k] = -1.0
            continue
        z = 1.0 / load_admittance(model, j, scale[j])
        coupled_branch(k, z.real, z.imag / W0, model.bus_index(ld.bus), None)

    for i in range(lay.n_bus):
        A[vb + i, vb + i] = -1j * W0

    for j, dev_id in enumerate(lay.gfl_devices):
        if online.get(dev_id, True):
            bi = model.bus_index(model.device(dev_id).bus)
            B[vb + bi, lay.n_src + j] = 1.0 / cbus[bi]
    return A, B


def discretize(A, B, dt):
    """Trapezoidal update ``x1 = Md x0 + Bd (u0 + u1)``."""
    n = A.shape[0]
    h = 0.5 * dt
    lhs = np.eye(n) - h * A
    lu = _lu(lhs)
    Md = lu(np.eye(n) + h * A)
    Bd = lu(h * B)
    return np.ascontiguousarray(Md), np.ascontiguousarray(Bd)


def _lu(m):
    from scipy.linalg import lu_factor, lu_solve
    fac = lu_factor(m)
    return lambda rhs: lu_solve(fac, rhs)


# --------------------------------------------------------------------------
# phasor-domain matrices at f0

def ybus(model: GridModel, include_loads=True, include_shunts=True, load_scale=None, extra=None):
    nb = len(model.buses)
    Y = np.zeros((nb, nb), dtype=complex)
    for br in model.branches:
        r, l = zpu_line(model, br)
        y = 1.0 / complex(r, W0 * l)
        a, b = model.bus_index(br.frm), model.bus_index(br.to)
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y
    if include_shunts:
        c = shunt_c(model)
        Y[np.diag_indices(nb)] += 1j * W0 * c
    if include_loads:
        scale = np.ones(len(model.loads)) if load_scale is None else load_scale
        for j, ld in enumerate(model.loads):
            if scale[j] > 0:
                i = model.bus_index(ld.bus)
                Y[i, i] += load_admittance(model, j, scale[j])
    for i, y in (extra or []):
        Y[i, i] += y
    return Y


def thevenin(model: GridModel, bus, in_service=None) -> complex:
    """Driving-point impedance at ``bus`` (system pu) with synchronous
    generators as subtransient reactances to ground and inverter-based devices
    open-circuited. Loads and shunt capacitance are neglected.

    ``in_service`` is the set of device ids considered connected (default:
    all devices).
    """
    ids = {d.id for d in model.devices} if in_service is None else set(in_service)
    extra = []
    for d in model.devices:
        if d.kind == "sg" and d.id in ids:
            extra.append((model.bus_index(d.bus), 1.0 / source_impedance(model, d.id)))
    if not extra:
        raise NoSourceError("no voltage source in service")
    Y = ybus(model, include_loads=False, include_shunts=False, extra=extra)
    i = model.bus_index(bus)
    e = np.zeros(len(model.buses), dtype=complex)
    e[i] = 1.0
    return complex(np.linalg.solve(Y, e)[i])


def scr(model: GridModel, bus, rating, in_service=None) -> float:
    """Short-circuit ratio: short-circuit MVA at the bus over ``rating`` (MVA).

    The bus voltage is taken at nominal (1 pu).
    """
    if rating <= 0:
        raise ValueError("rating must be positive")
    z = thevenin(model, bus, in_service)
    return (1.0 / abs(z)) * model.base_mva / rating


# --------------------------------------------------------------------------
# steady state

@dataclass
class PowerFlow:
    v: np.ndarray              # bus voltages (complex pu)
    p_dev: dict                # device id -> complex power injected (pu)
    i_dev: dict                # device id -> injected current (pu)
    total_gen: float
    residual: float


def power_flow(model: GridModel, online=None, load_scale=None, tol=1e-12) -> PowerFlow:
    """Steady state with each device producing ``share`` of total generation.

    Voltage-source devices (sg, vsm) regulate their bus at ``v_set``; GFL
    devices inject ``q0`` reactive power. Losses are spread over all
    generators in proportion to their share (distributed slack).
    """
    online = online or {}
    devs = [d for d in model.devices if online.get(d.id, True)]
    nb = len(model.buses)
    Y = ybus(model, load_scale=load_scale)
    pv = {}
    for d in devs:
        if d.kind in ("sg", "vsm"):
            bi = model.bus_index(d.bus)
            if bi in pv:
                raise ModelError(f"two voltage-regulating devices at bus {d.bus}")
            pv[bi] = 1.0 if d.v_set is None else float(d.v_set)
    if not pv:
        raise NoSourceError("power flow needs at least one voltage-source device")
    ref = sorted(pv)[0]
    share = np.zeros(nb)
    q_fix = np.zeros(nb)
    for d in devs:
        bi = model.bus_index(d.bus)
        share[bi] += d.share
        if d.kind == "gfl":
            q_fix[bi] += d.params.q0 * d.params.rating / model.base_mva
    if abs(sum(d.share for d in devs)) < 1e-12:
        raise ModelError("device shares sum to zero")
    ang_idx = [i for i in range(nb) if i != ref]
    pq_idx = [i for i in range(nb) if i not in pv]

    def unpack(z):
        th = np.zeros(nb)
        vm = np.ones(nb)
        th[ang_idx] = z[:len(ang_idx)]
        vm[pq_idx] = z[len(ang_idx):len(ang_idx) + len(pq_idx)]
        for i, v in pv.items():
            vm[i] = v
        return vm * np.exp(1j * th), z[-1]

    def resid(z):
        v, lam = unpack(z)
        s = v * np.conj(Y @ v)
        dp = s.real - share * lam
        dq = s.imag - q_fix
        return np.concatenate([dp, dq[pq_idx]])

    z0 = np.concatenate([np.zeros(len(ang_idx)), np.ones(len(pq_idx)),
                         [model.total_load_mw / model.base_mva]])
    sol = optimize.root(resid, z0, method="hybr", tol=1e-14)
    res = float(np.max(np.abs(resid(sol.x))))
    if res > 1e-9:
        raise ModelError(f"power flow did not converge (residual {res:.2e})")
    v, lam = unpack(sol.x)
    s_bus = v * np.conj(Y @ v)
    p_dev, i_dev = {}, {}
    for d in devs:
        bi = model.bus_index(d.bus)
        if d.kind == "gfl":
            s = complex(d.share * lam, d.params.q0 * d.params.rating / model.base_mva)
        else:
            others = sum(complex(o.share * lam, o.params.q0 * o.params.rating / model.base_mva)
                         for o in devs if o.kind == "gfl" and o.bus == d.bus)
            s = complex(d.share * lam, s_bus[bi].imag) - complex(0, others.imag)
        p_dev[d.id] = s
        i_dev[d.id] = np.conj(s / v[bi])
    return PowerFlow(v, p_dev, i_dev, float(lam), res)


def static_state(model: GridModel, A, B, u):
    """Network state solving ``A x + B u = 0``."""
    return np.linalg.solve(A, -B @ u)
