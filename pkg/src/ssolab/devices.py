"""Dynamic device models attached to network buses.

Every model is an average (fundamental-frequency) model stepped explicitly with
the terminal quantities of the previous network solution. Parameters live in
flat float64 rows so the stepping kernels run unchanged under numba or plain
Python; the dataclasses below are the user-facing view of those rows.

Voltage-behind-impedance devices (synchronous generators and the VSM) return
their internal EMF; the impedance itself is a branch of the network, so the
injected current is a network state. The grid-following inverter is a
controlled current source and returns its injected current directly.

All complex quantities are dq phasors in the network frame rotating at the
nominal frequency, per unit of peak phase quantities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ._accel import njit

F0 = 60.0
W0 = 2.0 * math.pi * F0

# synchronous generator parameter row
(SG_S, SG_H, SG_D, SG_XD, SG_RS, SG_R, SG_TG, SG_KA, SG_TA, SG_PREF, SG_E0, SG_VREF, SG_PMAX,
 SG_KD, SG_ON) = range(15)
SG_NP = 15
# synchronous generator state row
SGX_DELTA, SGX_DW, SGX_PM, SGX_E, SGX_VTH, SGX_WB = range(6)
SG_NX = 6
SLIP_TAU = 0.005   # bus-frequency filter used by the damper-winding term

# grid-following inverter parameter row
(GF_S, GF_KP, GF_KI, GF_FCC, GF_DROOP, GF_FFR_DELAY, GF_FFR_DB, GF_IMAX, GF_P0, GF_Q0,
 GF_FFR_P, GF_FFR_TAU, GF_TV, GF_FFR_ON, GF_TF, GF_TPLL, GF_NF, GF_DLY, GF_ON) = range(19)
GF_NP = 19
# grid-following inverter state row
(GFX_TH, GFX_XI, GFX_ID, GFX_IQ, GFX_VF, GFX_TIMER, GFX_ARMED, GFX_PFFR, GFX_DF,
 GFX_VRE, GFX_VIM, GFX_PADE, GFX_FM) = range(13)
GF_MAX_STAGES = 4
GF_NX = GFX_FM + GF_MAX_STAGES - 1

# virtual synchronous machine parameter row
VS_S, VS_H, VS_D, VS_XV, VS_RV, VS_P0, VS_Q0, VS_E0, VS_MQ, VS_TQ, VS_ON = range(11)
VS_NP = 11
VSX_DELTA, VSX_DW, VSX_QF = range(3)
VS_NX = 3


class ParamError(ValueError):
    pass


@dataclass
class SgParams:
    """Synchronous generator with first-order governor and proportional AVR.

    Per-unit values are on the machine rating except ``xd_sub``/``rs`` which
    are on the machine rating too and converted when the network is built.
    """

    rating: float
    H: float = 4.0
    D: float = 0.0
    xd_sub: float = 0.2
    rs: float = 0.003
    R: float = 0.05
    Tg: float = 0.5
    Ka: float = 20.0
    Ta: float = 0.05
    pmax: float = 1.0
    kd: float = 0.0
    pref: float = 0.0
    e0: float = 1.0
    vref: float = 1.0

    def __post_init__(self):
        if self.H <= 0 or self.R <= 0 or self.xd_sub <= 0:
            raise ParamError("SG requires H > 0, R > 0 and xd_sub > 0")
        if self.rating <= 0:
            raise ParamError("rating must be positive")
        if self.D < 0 or self.kd < 0:
            raise ParamError("damping coefficients must be non-negative")

    def row(self, base_mva: float | None = None) -> np.ndarray:
        p = np.zeros(SG_NP)
        p[SG_S] = self.rating / (base_mva or self.rating)
        p[SG_H], p[SG_D], p[SG_XD], p[SG_RS] = self.H, self.D, self.xd_sub, self.rs
        p[SG_R], p[SG_TG], p[SG_KA], p[SG_TA] = self.R, self.Tg, self.Ka, self.Ta
        p[SG_PREF], p[SG_E0], p[SG_VREF], p[SG_PMAX] = self.pref, self.e0, self.vref, self.pmax
        p[SG_KD] = self.kd
        p[SG_ON] = 1.0
        return p


@dataclass
class GflParams:
    """Grid-following inverter: SRF-PLL, P/f droop, fast frequency response,
    first-order current loop with a current-magnitude limit.

    ``pll_kp`` is in pu frequency per pu q-axis voltage and ``pll_ki`` in
    pu/s; ``droop_pf`` is the percent frequency deviation for a 1 pu power
    change.
    """

    rating: float
    pll_kp: float = 0.15
    pll_ki: float = 5.0
    current_bw: float = 300.0
    droop_pf: float = 3.0
    ffr_delay: float = 0.03
    ffr_deadband: float = 0.3
    i_max: float = 1.1
    ffr_power: float = 0.0
    ffr_tau: float = 0.005
    ffr_enabled: bool = True
    v_filter: float = 0.005
    droop_filter: float = 0.01
    pll_filter: float = 0.001
    droop_filter_order: int = 2
    meas_delay: float = 0.0
    p0: float = 0.0
    q0: float = 0.0

    def __post_init__(self):
        if self.pll_kp <= 0:
            raise ParamError("pll_kp must be positive")
        if not 0 < self.droop_pf <= 10:
            raise ParamError("droop_pf must lie in (0, 10] percent")
        if self.ffr_delay > 0.05:
            raise ParamError("ffr_delay must not exceed 50 ms")
        if self.rating <= 0 or self.i_max <= 0:
            raise ParamError("rating and i_max must be positive")
        if not 1 <= self.droop_filter_order <= GF_MAX_STAGES:
            raise ParamError(f"droop_filter_order must lie in 1..{GF_MAX_STAGES}")

    def row(self, base_mva: float | None = None) -> np.ndarray:
        p = np.zeros(GF_NP)
        p[GF_S] = self.rating / (base_mva or self.rating)
        p[GF_KP], p[GF_KI], p[GF_FCC] = self.pll_kp, self.pll_ki, self.current_bw
        p[GF_DROOP], p[GF_FFR_DELAY], p[GF_FFR_DB] = self.droop_pf, self.ffr_delay, self.ffr_deadband
        p[GF_IMAX], p[GF_P0], p[GF_Q0] = self.i_max, self.p0, self.q0
        p[GF_FFR_P], p[GF_FFR_TAU], p[GF_TV] = self.ffr_power, self.ffr_tau, self.v_filter
        p[GF_FFR_ON] = 1.0 if self.ffr_enabled else 0.0
        p[GF_TF] = self.droop_filter
        p[GF_TPLL] = self.pll_filter
        p[GF_NF] = self.droop_filter_order
        p[GF_DLY] = self.meas_delay
        p[GF_ON] = 1.0
        return p


@dataclass
class VsmParams:
    """Virtual synchronous machine: virtual swing equation driving an internal
    EMF behind a virtual reactance, with Q-V droop on the EMF magnitude."""

    rating: float
    H_v: float = 2.0
    D_v: float = 33.3
    x_v: float = 0.15
    r_v: float = 0.005
    q_droop: float = 5.0
    q_filter: float = 0.02
    p0: float = 0.0
    q0: float = 0.0
    e0: float = 1.0

    def __post_init__(self):
        if self.H_v <= 0 or self.D_v < 0:
            raise ParamError("VSM requires H_v > 0 and D_v >= 0")
        if self.rating <= 0 or self.x_v <= 0:
            raise ParamError("rating and x_v must be positive")

    def row(self, base_mva: float | None = None) -> np.ndarray:
        p = np.zeros(VS_NP)
        p[VS_S] = self.rating / (base_mva or self.rating)
        p[VS_H], p[VS_D], p[VS_XV], p[VS_RV] = self.H_v, self.D_v, self.x_v, self.r_v
        p[VS_P0], p[VS_Q0], p[VS_E0] = self.p0, self.q0, self.e0
        p[VS_MQ], p[VS_TQ] = self.q_droop, self.q_filter
        p[VS_ON] = 1.0
        return p


@dataclass
class UflsParams:
    """Staged underfrequency load shedding: (threshold Hz, fraction, delay s).

    ``meas_tau`` is the time constant of the relay's own frequency filter.
    """

    stages: list = field(default_factory=list)
    meas_tau: float = 0.05

    def __post_init__(self):
        self.stages = [tuple(float(x) for x in s) for s in self.stages]
        thr = [s[0] for s in self.stages]
        if any(b >= a for a, b in zip(thr, thr[1:])):
            raise ParamError("UFLS thresholds must be strictly decreasing")
        if any(not 0 < s[1] <= 1 for s in self.stages):
            raise ParamError("UFLS shed fractions must lie in (0, 1]")
        if any(s[2] < 0 for s in self.stages):
            raise ParamError("UFLS delays must be non-negative")
        if self.meas_tau < 0:
            raise ParamError("UFLS meas_tau must be non-negative")

    def arrays(self):
        a = np.array(self.stages, dtype=float).reshape(-1, 3)
        return a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy()


def param_names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


# --------------------------------------------------------------------------
# stepping kernels (in-place on the state row)

@njit
def _lag(x, target, dt, tau):
    if tau <= 0.0:
        return target
    return x + (target - x) * (1.0 - math.exp(-dt / tau))


@njit
def sg_advance(p, s, v, i, dt):
    if p[SG_ON] == 0.0:
        return 0j
    emf = s[SGX_E] * complex(math.cos(s[SGX_DELTA]), math.sin(s[SGX_DELTA]))
    pe = (emf * i.conjugate()).real / p[SG_S]
    # terminal-bus frequency deviation, for the damper-winding (slip) torque
    th = math.atan2(v.imag, v.real)
    dth = th - s[SGX_VTH]
    dth -= 2.0 * math.pi * math.floor((dth + math.pi) / (2.0 * math.pi))
    s[SGX_VTH] = th
    s[SGX_WB] = _lag(s[SGX_WB], dth / (W0 * dt), dt, SLIP_TAU)
    dw = s[SGX_DW]
    torque = s[SGX_PM] - pe - p[SG_D] * dw - p[SG_KD] * (dw - s[SGX_WB])
    dw_new = dw + dt * torque / (2.0 * p[SG_H])
    s[SGX_DW] = dw_new
    s[SGX_DELTA] += dt * W0 * 0.5 * (dw + dw_new)
    pm = _lag(s[SGX_PM], p[SG_PREF] - dw / p[SG_R], dt, p[SG_TG])
    s[SGX_PM] = min(max(pm, 0.0), p[SG_PMAX])
    s[SGX_E] = _lag(s[SGX_E], p[SG_E0] + p[SG_KA] * (p[SG_VREF] - abs(v)), dt, p[SG_TA])
    return s[SGX_E] * complex(math.cos(s[SGX_DELTA]), math.sin(s[SGX_DELTA]))


@njit
def gfl_advance(p, s, v, dt):
    if p[GF_ON] == 0.0:
        return 0j
    s[GFX_VRE] = _lag(s[GFX_VRE], v.real, dt, p[GF_TPLL])
    s[GFX_VIM] = _lag(s[GFX_VIM], v.imag, dt, p[GF_TPLL])
    rot = complex(math.cos(s[GFX_TH]), -math.sin(s[GFX_TH]))
    vq = (complex(s[GFX_VRE], s[GFX_VIM]) * rot).imag
    w_dev = p[GF_KP] * vq + s[GFX_XI]
    s[GFX_XI] += dt * p[GF_KI] * vq
    s[GFX_TH] += dt * W0 * w_dev
    df = F0 * w_dev
    # frequency measurement for droop: latency (first-order Pade all-pass)
    # followed by cascaded identical lags
    x = df
    if p[GF_DLY] > 0.0:
        s[GFX_PADE] = _lag(s[GFX_PADE], df, dt, 0.5 * p[GF_DLY])
        x = 2.0 * s[GFX_PADE] - df
    for k in range(int(p[GF_NF]) - 1):
        s[GFX_FM + k] = _lag(s[GFX_FM + k], x, dt, p[GF_TF])
        x = s[GFX_FM + k]
    s[GFX_DF] = _lag(s[GFX_DF], x, dt, p[GF_TF])
    p_droop = -(s[GFX_DF] / F0) / (p[GF_DROOP] / 100.0)

    if p[GF_FFR_ON] != 0.0 and s[GFX_ARMED] == 0.0:
        if df < -p[GF_FFR_DB]:
            s[GFX_TIMER] += dt
            if s[GFX_TIMER] >= p[GF_FFR_DELAY] - 1e-12:
                s[GFX_ARMED] = 1.0
        else:
            s[GFX_TIMER] = 0.0
    s[GFX_PFFR] = _lag(s[GFX_PFFR], s[GFX_ARMED] * p[GF_FFR_P], dt, p[GF_FFR_TAU])

    s[GFX_VF] = _lag(s[GFX_VF], abs(v), dt, p[GF_TV])
    vf = max(s[GFX_VF], 0.1)
    id_ref = (p[GF_P0] + p_droop + s[GFX_PFFR]) / vf
    iq_ref = -p[GF_Q0] / vf
    imax = p[GF_IMAX]
    id_ref = min(max(id_ref, -imax), imax)
    iq_lim = math.sqrt(max(imax * imax - id_ref * id_ref, 0.0))
    iq_ref = min(max(iq_ref, -iq_lim), iq_lim)
    a = 1.0 - math.exp(-dt * 2.0 * math.pi * p[GF_FCC])
    s[GFX_ID] += a * (id_ref - s[GFX_ID])
    s[GFX_IQ] += a * (iq_ref - s[GFX_IQ])
    return p[GF_S] * complex(s[GFX_ID], s[GFX_IQ]) * complex(math.cos(s[GFX_TH]), math.sin(s[GFX_TH]))


@njit
def vsm_advance(p, s, v, i, dt):
    if p[VS_ON] == 0.0:
        return 0j
    emf0 = abs_emf(p, s) * complex(math.cos(s[VSX_DELTA]), math.sin(s[VSX_DELTA]))
    pe = (emf0 * i.conjugate()).real / p[VS_S]
    q = (v * i.conjugate()).imag / p[VS_S]
    dw = s[VSX_DW]
    dw_new = dw + dt * (p[VS_P0] - pe - p[VS_D] * dw) / (2.0 * p[VS_H])
    s[VSX_DW] = dw_new
    s[VSX_DELTA] += dt * W0 * 0.5 * (dw + dw_new)
    s[VSX_QF] = _lag(s[VSX_QF], q, dt, p[VS_TQ])
    return abs_emf(p, s) * complex(math.cos(s[VSX_DELTA]), math.sin(s[VSX_DELTA]))


@njit
def abs_emf(p, s):
    return p[VS_E0] - p[VS_MQ] / 100.0 * (s[VSX_QF] - p[VS_Q0])


@njit
def ufls_advance(thr, frac, delay, timers, tripped, f, dt):
    shed = 0.0
    for k in range(thr.shape[0]):
        if tripped[k] != 0.0:
            continue
        if f < thr[k]:
            timers[k] += dt
            if timers[k] >= delay[k] - 1e-12:
                tripped[k] = 1.0
                shed += frac[k]
        else:
            timers[k] = 0.0
    return shed


# --------------------------------------------------------------------------
# python-level single-step API

def sg_step(params: SgParams, state, v: complex, dt: float, i: complex, base_mva=None):
    """Advance a generator one step; returns ``(new_state, emf)``."""
    s = np.array(state, dtype=float)
    emf = sg_advance(params.row(base_mva), s, complex(v), complex(i), dt)
    return s, emf


def gfl_step(params: GflParams, state, v: complex, dt: float, base_mva=None):
    """Advance a grid-following inverter one step; returns ``(new_state, current)``."""
    s = np.array(state, dtype=float)
    cur = gfl_advance(params.row(base_mva), s, complex(v), dt)
    return s, cur


def vsm_step(params: VsmParams, state, v: complex, dt: float, i: complex, base_mva=None):
    """Advance a VSM one step; returns ``(new_state, emf)``."""
    s = np.array(state, dtype=float)
    emf = vsm_advance(params.row(base_mva), s, complex(v), complex(i), dt)
    return s, emf


class UflsRelay:
    """Stateful wrapper over the staged relay kernel."""

    def __init__(self, params: UflsParams):
        self.thr, self.frac, self.delay = params.arrays()
        self.timers = np.zeros_like(self.thr)
        self.tripped = np.zeros_like(self.thr)

    def step(self, f: float, dt: float) -> float:
        """Return the load fraction to shed at this step (0 when nothing trips)."""
        return ufls_advance(self.thr, self.frac, self.delay, self.timers, self.tripped, f, dt)


def ufls_step(params: UflsParams, state, f: float, dt: float):
    """Functional form: ``state`` is ``(timers, tripped)``; returns ``(state, shed)``."""
    thr, frac, delay = params.arrays()
    timers = np.array(state[0], dtype=float)
    tripped = np.array(state[1], dtype=float)
    shed = ufls_advance(thr, frac, delay, timers, tripped, f, dt)
    return (timers, tripped), shed


# --------------------------------------------------------------------------
# equilibrium initialisation from terminal conditions (system per unit)

def sg_init(params: SgParams, s_ratio: float, v: complex, i: complex):
    """Return (param row, state row, emf) in equilibrium with terminal v, i."""
    z = complex(params.rs, params.xd_sub) / s_ratio
    emf = v + z * i
    p = params.row()
    p[SG_S] = s_ratio
    s = np.zeros(SG_NX)
    s[SGX_DELTA] = np.angle(emf)
    s[SGX_E] = abs(emf)
    s[SGX_VTH] = np.angle(v)
    pe = (emf * np.conj(i)).real / s_ratio
    s[SGX_PM] = pe
    p[SG_PREF] = pe
    p[SG_E0] = abs(emf)
    p[SG_VREF] = abs(v)
    return p, s, emf


def gfl_init(params: GflParams, s_ratio: float, v: complex, i: complex):
    p = params.row()
    p[GF_S] = s_ratio
    s = np.zeros(GF_NX)
    th = float(np.angle(v))
    s[GFX_TH] = th
    idq = i * np.exp(-1j * th) / s_ratio
    s[GFX_ID], s[GFX_IQ] = idq.real, idq.imag
    s[GFX_VF] = abs(v)
    s[GFX_VRE], s[GFX_VIM] = v.real, v.imag
    p[GF_P0] = idq.real * abs(v)
    p[GF_Q0] = -idq.imag * abs(v)
    if abs(idq) > p[GF_IMAX]:
        raise ParamError("initial GFL current exceeds i_max")
    return p, s, i


def vsm_init(params: VsmParams, s_ratio: float, v: complex, i: complex):
    z = complex(params.r_v, params.x_v) / s_ratio
    emf = v + z * i
    p = params.row()
    p[VS_S] = s_ratio
    s = np.zeros(VS_NX)
    s[VSX_DELTA] = np.angle(emf)
    q = (v * np.conj(i)).imag / s_ratio
    s[VSX_QF] = q
    p[VS_Q0] = q
    p[VS_E0] = abs(emf)
    p[VS_P0] = (emf * np.conj(i)).real / s_ratio
    return p, s, emf
