"""Small-signal eigenanalysis of the discrete simulator map.

The one-step map of a :class:`Simulator` (devices, network, measurement
filters) is differentiated by central differences about the current state.
Discrete eigenvalues ``z`` map to continuous ones through ``log(z)/dt``, so the
result describes exactly the integrator the time-domain runs use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass
class Eigen:
    lam: np.ndarray        # continuous-time eigenvalues (1/s)
    vectors: np.ndarray    # right eigenvectors in the packed real state
    labels: list

    @property
    def freq(self):
        return self.lam.imag / (2 * math.pi)

    @property
    def zeta(self):
        return -self.lam.real / np.abs(self.lam)

    def in_band(self, f_lo, f_hi):
        idx = np.flatnonzero((self.freq >= f_lo) & (self.freq <= f_hi))
        return idx[np.argsort(self.zeta[idx])]

    def participation(self, k):
        """Label -> normalised participation factor of mode ``k``."""
        w = np.linalg.inv(self.vectors)
        pf = np.abs(self.vectors[:, k] * w[k, :])
        pf /= pf.max()
        return dict(zip(self.labels, pf))


def _pack(sim):
    parts = [sim.x.real, sim.x.imag, sim.u.real, sim.u.imag,
             sim.sg_s.ravel(), sim.gf_s.ravel(), sim.vs_s.ravel()]
    return np.concatenate(parts)


def _labels(sim):
    lay = sim.lay
    m = sim.model
    names = [f"line{k}" for k in range(lay.n_line)] + [f"src:{d}" for d in lay.src_devices]
    names += [f"load{k}" for k in range(lay.n_load)] + [f"v:{b}" for b in m.bus_ids]
    xs = [f"{n}.re" for n in names] + [f"{n}.im" for n in names]
    us = [f"u{k}.re" for k in range(lay.n_input)] + [f"u{k}.im" for k in range(lay.n_input)]
    dev = []
    for ids, nx in ((sim.sg_ids, sim.sg_s.shape[1]), (sim.gf_ids, sim.gf_s.shape[1]), (sim.vs_ids, sim.vs_s.shape[1])):
        for i in ids:
            dev += [f"{i}.s{j}" for j in range(nx)]
    return xs + us + dev


def _unpack(sim, z):
    n, nu = sim.x.size, sim.u.size
    k = 0
    sim.x[:] = z[k:k + n] + 1j * z[k + n:k + 2 * n]
    k += 2 * n
    sim.u[:] = z[k:k + nu] + 1j * z[k + nu:k + 2 * nu]
    k += 2 * nu
    for arr in (sim.sg_s, sim.gf_s, sim.vs_s):
        arr.ravel()[:] = z[k:k + arr.size]
        k += arr.size


def step_map(sim):
    """Return ``f(z) -> z_next`` over the packed real state of ``sim``.

    The UFLS relay is not part of the map (it is a discrete event).
    """
    empty = np.zeros(0)
    nd = len(sim.dev_order)
    dummy_c = np.zeros((1, max(sim.lay.n_bus, nd)), dtype=complex)
    dummy_r = np.zeros((1, max(sim.lay.n_bus, nd)))
    pv = np.zeros((0, nd), dtype=complex)
    shed = np.zeros(1)

    def f(z):
        _unpack(sim, z)
        fmeas = sim.fmeas.copy()
        kernels.run_segment(
            sim.Md, sim.Bd, sim.x, sim.u, sim.lay.i_bus,
            sim.sg_p, sim.sg_s, sim.sg_bus, sim.sg_br, sim.sg_u,
            sim.gf_p, sim.gf_s, sim.gf_bus, sim.gf_u,
            sim.vs_p, sim.vs_s, sim.vs_bus, sim.vs_br, sim.vs_u,
            sim.rp_u, sim.rp_i0, sim.rp_n0, sim.rp_len,
            empty, empty, empty, empty, empty, 0, np.zeros(1), 0.0,
            fmeas, sim.tau_f, sim.n, sim.n + 1, sim.n, sim.dt, 1 << 30,
            dummy_c, dummy_c, dummy_r, dummy_r, pv, pv, shed)
        return _pack(sim)
    return f


def eigen(sim, eps=1e-7) -> Eigen:
    """Eigenvalues of the linearised one-step map about the current state."""
    z0 = _pack(sim)
    saved = (sim.x.copy(), sim.u.copy(), sim.sg_s.copy(), sim.gf_s.copy(), sim.vs_s.copy())
    f = step_map(sim)
    n = z0.size
    J = np.empty((n, n))
    for k in range(n):
        dz = np.zeros(n)
        dz[k] = eps
        J[:, k] = (f(z0 + dz) - f(z0 - dz)) / (2 * eps)
    sim.x[:], sim.u[:], sim.sg_s[:], sim.gf_s[:], sim.vs_s[:] = saved
    zs, vecs = np.linalg.eig(J)
    # rigid-angle and offline directions give z = 1 or 0; keep them finite
    lam = np.log(np.where(np.abs(zs) < 1e-300, 1e-300, zs).astype(complex)) / sim.dt
    return Eigen(lam, vecs, _labels(sim))
