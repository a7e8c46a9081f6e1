"""Hot loop of the simulator: device stepping plus trapezoidal network update."""
import math

import numpy as np

from .._accel import njit
from ..devices import (F0, GFX_DF, SGX_DW, VSX_DW, gfl_advance, sg_advance,
                       ufls_advance, vsm_advance)

DONE, UFLS_TRIP, DIVERGED = 0, 1, 2


@njit
def run_segment(Md, Bd, x, u, vb,
                sg_p, sg_s, sg_bus, sg_br, sg_u,
                gf_p, gf_s, gf_bus, gf_u,
                vs_p, vs_s, vs_bus, vs_br, vs_u,
                rp_u, rp_i0, rp_n0, rp_len,
                uf_thr, uf_frac, uf_delay, uf_timer, uf_trip, uf_bus, uf_fm, uf_tau,
                fmeas, tau_f, n0, n1, nbase, dt, rec_every,
                rec_v, rec_i, rec_f, rec_fbus,
                pow_v, pow_i, shed_out):
    """Advance from step ``n0`` to ``n1``; returns ``(n_stop, code)``.

    ``x``, ``u``, device states, ``fmeas`` and UFLS state are updated in place.
    Recording arrays are indexed from step ``nbase`` and written at every
    multiple of ``rec_every``;
    ``pow_v``/``pow_i`` (per device, every step) when they have rows.
    Inputs listed in ``rp_u`` ramp linearly from ``rp_i0`` at step ``rp_n0``
    to zero over ``rp_len`` steps (disconnected devices).
    """
    nb = fmeas.shape[0]
    n_sg = sg_p.shape[0]
    n_gf = gf_p.shape[0]
    n_vs = vs_p.shape[0]
    n_dev = n_sg + n_gf + n_vs
    u_new = np.empty_like(u)
    a_f = 1.0 - math.exp(-dt / tau_f)
    inv2pidt = 1.0 / (2.0 * math.pi * dt)
    do_pow = pow_v.shape[0] > 0
    n = n0
    while n < n1:
        u_new[:] = u
        for k in range(n_sg):
            u_new[sg_u[k]] = sg_advance(sg_p[k], sg_s[k], x[vb + sg_bus[k]], x[sg_br[k]], dt)
        for k in range(n_gf):
            u_new[gf_u[k]] = gfl_advance(gf_p[k], gf_s[k], x[vb + gf_bus[k]], dt)
        for k in range(n_vs):
            u_new[vs_u[k]] = vsm_advance(vs_p[k], vs_s[k], x[vb + vs_bus[k]], x[vs_br[k]], dt)
        for k in range(rp_u.shape[0]):
            left = 1.0 - (n + 1 - rp_n0[k]) / rp_len[k]
            u_new[rp_u[k]] = rp_i0[k] * max(left, 0.0)
        x_new = Md @ x + Bd @ (u + u_new)

        bad = False
        for b in range(nb):
            v1 = x_new[vb + b]
            mag = abs(v1)
            if not (mag > 0.0 and mag < 2.0):
                bad = True
            dth = math.atan2((v1 * x[vb + b].conjugate()).imag, (v1 * x[vb + b].conjugate()).real)
            fmeas[b] += a_f * (F0 + dth * inv2pidt - fmeas[b])
        x[:] = x_new
        u[:] = u_new
        n += 1
        if bad:
            return n, DIVERGED

        if do_pow:
            _store_pow(pow_v, pow_i, n - nbase, x, u, vb, sg_bus, sg_br, gf_bus, gf_u, vs_bus, vs_br)
        if (n - nbase) % rec_every == 0:
            r = (n - nbase) // rec_every
            _store(rec_v, rec_i, rec_f, rec_fbus, r, x, u, vb, fmeas,
                   sg_s, sg_br, gf_s, gf_u, vs_s, vs_br)

        if uf_thr.shape[0] > 0:
            if uf_tau > 0.0:
                uf_fm[0] += (1.0 - math.exp(-dt / uf_tau)) * (fmeas[uf_bus] - uf_fm[0])
            else:
                uf_fm[0] = fmeas[uf_bus]
            shed = ufls_advance(uf_thr, uf_frac, uf_delay, uf_timer, uf_trip, uf_fm[0], dt)
            if shed > 0.0:
                shed_out[0] = shed
                return n, UFLS_TRIP
    return n, DONE


@njit
def _store(rec_v, rec_i, rec_f, rec_fbus, r, x, u, vb, fmeas, sg_s, sg_br, gf_s, gf_u, vs_s, vs_br):
    nb = fmeas.shape[0]
    for b in range(nb):
        rec_v[r, b] = x[vb + b]
        rec_fbus[r, b] = fmeas[b]
    j = 0
    for k in range(sg_s.shape[0]):
        rec_i[r, j] = x[sg_br[k]]
        rec_f[r, j] = F0 * (1.0 + sg_s[k, SGX_DW])
        j += 1
    for k in range(gf_s.shape[0]):
        rec_i[r, j] = u[gf_u[k]]
        rec_f[r, j] = F0 + gf_s[k, GFX_DF]
        j += 1
    for k in range(vs_s.shape[0]):
        rec_i[r, j] = x[vs_br[k]]
        rec_f[r, j] = F0 * (1.0 + vs_s[k, VSX_DW])
        j += 1


@njit
def _store_pow(pow_v, pow_i, n, x, u, vb, sg_bus, sg_br, gf_bus, gf_u, vs_bus, vs_br):
    j = 0
    for k in range(sg_bus.shape[0]):
        pow_v[n, j] = x[vb + sg_bus[k]]
        pow_i[n, j] = x[sg_br[k]]
        j += 1
    for k in range(gf_bus.shape[0]):
        pow_v[n, j] = x[vb + gf_bus[k]]
        pow_i[n, j] = u[gf_u[k]]
        j += 1
    for k in range(vs_bus.shape[0]):
        pow_v[n, j] = x[vb + vs_bus[k]]
        pow_i[n, j] = x[vs_br[k]]
        j += 1


@njit
def abc_from_dq(phasor, t, w0):
    """Balanced three-phase samples ``Re(X e^{j(w0 t - 2πk/3)})``."""
    out = np.empty((t.shape[0], 3))
    for n in range(t.shape[0]):
        for k in range(3):
            ang = w0 * t[n] - 2.0 * math.pi * k / 3.0
            out[n, k] = phasor[n].real * math.cos(ang) - phasor[n].imag * math.sin(ang)
    return out
