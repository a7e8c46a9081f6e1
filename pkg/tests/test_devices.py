import cmath
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssolab import devices as dv

DT = 50e-6
V0 = 1.02 * cmath.exp(0.3j)


def sg_equilibrium(H=4.0, i=0.6 * cmath.exp(-0.1j)):
    par = dv.SgParams(rating=50.0, H=H, kd=10.0)
    p, s, emf = dv.sg_init(par, 1.0, V0, i)
    par = replace(par, pref=p[dv.SG_PREF], e0=p[dv.SG_E0], vref=p[dv.SG_VREF])
    return par, s, emf


def gfl_equilibrium(**kw):
    par = dv.GflParams(rating=20.0, **kw)
    i = 0.5 * cmath.exp(0.25j)
    p, s, _ = dv.gfl_init(par, 1.0, V0, i)
    return replace(par, p0=p[dv.GF_P0], q0=p[dv.GF_Q0]), s


def vsm_equilibrium(H_v=2.0, i=0.4 * cmath.exp(0.1j)):
    par = dv.VsmParams(rating=20.0, H_v=H_v)
    p, s, emf = dv.vsm_init(par, 1.0, V0, i)
    return replace(par, p0=p[dv.VS_P0], q0=p[dv.VS_Q0], e0=p[dv.VS_E0]), s, emf


# ---------------------------------------------------------------- parameters

def test_param_invariants():
    with pytest.raises(dv.ParamError):
        dv.SgParams(rating=10, H=0)
    with pytest.raises(dv.ParamError):
        dv.GflParams(rating=10, pll_kp=0)
    with pytest.raises(dv.ParamError):
        dv.GflParams(rating=10, droop_pf=12)
    with pytest.raises(dv.ParamError):
        dv.GflParams(rating=10, ffr_delay=0.06)
    with pytest.raises(dv.ParamError):
        dv.VsmParams(rating=10, D_v=-1)
    with pytest.raises(dv.ParamError):
        dv.UflsParams([(59.0, 0.1, 0.1), (59.5, 0.1, 0.1)])
    with pytest.raises(dv.ParamError):
        dv.UflsParams([(59.5, 0.0, 0.1)])


def test_defaults_match_documented_values():
    g = dv.GflParams(rating=1.0)
    assert (g.pll_kp, g.pll_ki, g.current_bw, g.droop_pf) == (0.15, 5.0, 300.0, 3.0)
    assert g.ffr_delay <= 0.05


# ---------------------------------------------------------------- equilibrium

def test_sg_equilibrium_persists():
    par, s, emf = sg_equilibrium()
    i = 0.6 * cmath.exp(-0.1j)
    for _ in range(100):
        s2, e2 = dv.sg_step(par, s, V0, DT, i, base_mva=50.0)
        assert np.max(np.abs(s2 - s)) < 1e-12
        s = s2
    assert abs(e2 - emf) < 1e-12


def test_gfl_equilibrium_constant_current():
    par, s = gfl_equilibrium()
    _, i0 = dv.gfl_step(par, s, V0, DT, base_mva=20.0)
    for _ in range(200):
        s, i = dv.gfl_step(par, s, V0, DT, base_mva=20.0)
        assert abs(i - i0) < 1e-12
    assert abs(i0 - 0.5 * cmath.exp(0.25j)) < 1e-12


def test_vsm_equilibrium_persists():
    par, s, emf = vsm_equilibrium()
    i = 0.4 * cmath.exp(0.1j)
    for _ in range(100):
        s2, e2 = dv.vsm_step(par, s, V0, DT, i, base_mva=20.0)
        assert np.max(np.abs(s2 - s)) < 1e-12
        s = s2
    assert abs(e2 - emf) < 1e-12


# ---------------------------------------------------------------- swing identity

def _initial_rate_sg(H, dp=0.1):
    par, s, emf = sg_equilibrium(H=H)
    i = 0.6 * cmath.exp(-0.1j)
    i_step = i + dp / emf.conjugate()      # raises Pe by dp on the machine base
    s2, _ = dv.sg_step(par, s, V0, DT, i_step, base_mva=50.0)
    return s2[dv.SGX_DW] / DT


def _initial_rate_vsm(H, dp=0.1):
    par, s, emf = vsm_equilibrium(H_v=H)
    i = 0.4 * cmath.exp(0.1j)
    s2, _ = dv.vsm_step(par, s, V0, DT, i + dp / emf.conjugate(), base_mva=20.0)
    return s2[dv.VSX_DW] / DT


@pytest.mark.parametrize("rate", [_initial_rate_sg, _initial_rate_vsm])
def test_swing_identity(rate):
    r1 = rate(4.0)
    assert r1 == pytest.approx(-0.1 / (2 * 4.0), rel=0.01)
    assert rate(8.0) == pytest.approx(0.5 * r1, rel=0.01)


# ---------------------------------------------------------------- PLL

def _pll_run(kp, v_of_t, dur, th0=None, ffr=None):
    kw = {"pll_kp": kp}
    if ffr:
        kw.update(ffr)
    par = dv.GflParams(rating=1.0, **kw)
    p, s, _ = dv.gfl_init(par, 1.0, 1.0 + 0j, 0.5 + 0j)
    if th0 is not None:
        s[dv.GFX_TH] = th0
    n = int(round(dur / DT))
    err = np.zeros(n)
    pffr = np.zeros(n)
    for k in range(n):
        v = v_of_t(k * DT)
        dv.gfl_advance(p, s, v, DT)
        err[k] = dv.F0 * (p[dv.GF_KP] * (complex(s[dv.GFX_VRE], s[dv.GFX_VIM]) * cmath.exp(-1j * s[dv.GFX_TH])).imag
                          + s[dv.GFX_XI])
        pffr[k] = s[dv.GFX_PFFR]
    return err, s, pffr


def test_pll_zero_error_on_stiff_source():
    err, s, _ = _pll_run(0.15, lambda t: 1.0 + 0j, 1.0, th0=-0.05)
    assert abs(err[-1]) < 1e-6
    assert abs(s[dv.GFX_TH]) < 1e-6


def _settling_time(kp):
    step = cmath.exp(0.1j)
    n = int(0.5 / DT)
    par = dv.GflParams(rating=1.0, pll_kp=kp)
    p, s, _ = dv.gfl_init(par, 1.0, 1.0 + 0j, 0.5 + 0j)
    last_out = 0.0
    for k in range(n):
        dv.gfl_advance(p, s, step, DT)
        if abs(s[dv.GFX_TH] - 0.1) > 0.005:
            last_out = k * DT
    return last_out


def test_pll_speed_increases_with_kp():
    assert _settling_time(0.15) < _settling_time(0.10)


def _ramp(rate):
    # terminal voltage whose frequency falls at ``rate`` Hz/s, clamped at -0.5 Hz
    def v(t):
        t_c = min(t, 0.5 / rate)
        ang = -2 * math.pi * (0.5 * rate * t_c * t_c + max(t - t_c, 0.0) * rate * t_c)
        return cmath.exp(1j * ang)
    return v


FFR = {"ffr_power": 0.1, "ffr_deadband": 0.3, "ffr_delay": 0.03}


def test_ffr_inactive_inside_deadband():
    def v(t):
        return cmath.exp(-1j * 2 * math.pi * 0.1 * t * t)   # ramps to -0.2 Hz over 1 s
    _, _, pffr = _pll_run(0.15, v, 1.0, ffr=FFR)
    assert np.all(pffr == 0.0)


def test_ffr_reacts_within_50ms():
    err, _, pffr = _pll_run(0.15, _ramp(2.0), 0.6, ffr=FFR)
    k_cross = int(np.argmax(err < -0.3))
    assert k_cross > 0
    k_50 = k_cross + int(round(0.05 / DT))
    assert pffr[k_cross - 1] == 0.0
    assert pffr[k_50] > 0.5 * FFR["ffr_power"]


def test_ffr_removed_is_pure_droop_inside_deadband():
    def v(t):
        return cmath.exp(-1j * 2 * math.pi * 0.1 * t * t)
    outs = []
    for enabled in (True, False):
        par = dv.GflParams(rating=1.0, ffr_power=0.2, ffr_enabled=enabled)
        p, s, _ = dv.gfl_init(par, 1.0, 1.0 + 0j, 0.5 + 0j)
        cur = [dv.gfl_advance(p, s, v(k * DT), DT) for k in range(10000)]
        outs.append(np.array(cur))
    assert np.array_equal(outs[0], outs[1])


@settings(max_examples=60, deadline=None)
@given(vmag=st.floats(0.05, 1.5), vang=st.floats(-math.pi, math.pi), i_max=st.floats(0.2, 1.5),
       p0=st.floats(-3, 3), q0=st.floats(-3, 3), df=st.floats(-5, 5), r=st.floats(0, 1), a=st.floats(-math.pi, math.pi))
def test_gfl_current_never_exceeds_limit(vmag, vang, i_max, p0, q0, df, r, a):
    par = dv.GflParams(rating=1.0, i_max=i_max, p0=p0, q0=q0)
    p = par.row()
    s = np.zeros(dv.GF_NX)
    s[dv.GFX_ID], s[dv.GFX_IQ] = r * i_max * math.cos(a), r * i_max * math.sin(a)
    s[dv.GFX_VF] = vmag
    s[dv.GFX_DF] = df
    v = vmag * cmath.exp(1j * vang)
    for _ in range(50):
        i = dv.gfl_advance(p, s, v, DT)
        assert abs(i) <= i_max * (1 + 1e-12)


# ---------------------------------------------------------------- UFLS

def test_ufls_no_dip_no_shed():
    relay = dv.UflsRelay(dv.UflsParams([(59.5, 0.037, 0.3), (59.0, 0.05, 0.3)]))
    assert sum(relay.step(59.8, 1e-3) for _ in range(5000)) == 0.0


def test_ufls_stage_sheds_once():
    relay = dv.UflsRelay(dv.UflsParams([(59.5, 0.037, 0.3), (59.0, 0.05, 0.3)]))
    sheds = [relay.step(59.3, 1e-3) for _ in range(2000)]
    assert sum(sheds) == pytest.approx(0.037)
    assert sum(1 for x in sheds if x > 0) == 1
    assert sheds.index(0.037) == 299


def test_ufls_short_dip_resets_timer():
    relay = dv.UflsRelay(dv.UflsParams([(59.5, 0.037, 0.3)]))
    total = 0.0
    for k in range(3000):
        f = 59.4 if (k // 200) % 2 == 0 else 59.7     # 0.2 s below, 0.2 s above
        total += relay.step(f, 1e-3)
    assert total == 0.0


def test_ufls_functional_form():
    par = dv.UflsParams([(59.5, 0.04, 0.01)])
    state = (np.zeros(1), np.zeros(1))
    shed = 0.0
    for _ in range(20):
        state, x = dv.ufls_step(par, state, 59.0, 1e-3)
        shed += x
    assert shed == pytest.approx(0.04)
