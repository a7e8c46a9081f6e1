"""Acceptance checks. Each test prints one PASS/FAIL line with the measured
value, the tolerance and the wall-clock time, then asserts."""
import cmath
import math
import time

import numpy as np

from grids import LOAD_STEP, power_balance, sg_island, worst_rms_difference
from ssolab import energy_flow as ef
from ssolab import interharmonic as ih
from ssolab.cli import main
from ssolab.experiment import KAUAI_SCR_POST, KAUAI_SCR_PRE, builtin_model_path
from ssolab.fixtures import pow_fixture
from ssolab.grid import Simulator, load_model, scr
from ssolab.modal import fit_modes
from ssolab.signal import ChannelSet, UniformSeries


def report(capsys, n, name, ok, detail, runtime):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {name}: {'PASS' if ok else 'FAIL'} | {detail} | {runtime:.2f} s")


def rel(a, b):
    return abs(a / b - 1)


def test_1_def_closed_form(capsys):
    t0 = time.perf_counter()
    w = 2 * math.pi * 19
    slopes = {}
    for fs in (4800.0, 480.0):
        t = np.arange(int(10 * fs)) / fs
        mk = lambda n, v: UniformSeries.named(n, 0.0, 1 / fs, v)
        P, th = 0.1 * np.cos(w * t), 0.05 * np.sin(w * t)
        inp = ef.DefInputs(mk("p_pu", P), mk("q_pu", 0 * t), mk("vmag_pu", 1 + 0 * t), theta=mk("theta_rad", th))
        slope = ef.def_rank([("X", ef.def_energy(inp, 15, 25))], (1.0, 9.0))[0].slope
        W = np.concatenate([[0.0], np.cumsum(0.5 * (P[1:] + P[:-1]) * np.diff(th))])
        sel = (t >= 1.0) & (t < 9.0)
        slopes[fs] = (slope, np.polyfit(t[sel], W[sel], 1)[0])
    dt = time.perf_counter() - t0
    e_closed = rel(slopes[4800.0][0], 0.2985)
    e_oracle = rel(slopes[480.0][0], slopes[480.0][1])
    ok = e_closed <= 1e-3 and e_oracle <= 1e-3 and dt < 1.0
    report(capsys, 1, "DEF slope", ok,
           f"slope {slopes[4800.0][0]:.5f} vs 0.2985 (rel {e_closed:.1e}); at 480 Hz {slopes[480.0][0]:.5f} vs "
           f"trapezoid oracle {slopes[480.0][1]:.5f} (rel {e_oracle:.1e}); tol 0.1%, < 1 s", dt)
    assert ok


def test_2_ssp_closed_form(capsys):
    t0 = time.perf_counter()
    rec = pow_fixture({60.0: (1.0, -0.5), 41.0: (0.02, cmath.rect(0.05, math.pi))})
    res, f_mod = ih.locate_sources({"X": rec}, ["X"], (10, 25), (0.5, 3.5))
    dt = time.perf_counter() - t0
    p = res[0].mean_p_sc
    ok = rel(p, -0.0015) <= 5e-3 and res[0].is_source and dt < 5.0
    report(capsys, 2, "SSP p_sc", ok, f"p_sc {p:.7f} vs -0.0015 (rel {rel(p, -0.0015):.1e}), "
                                     f"f_mod {f_mod:.2f} Hz; tol 0.5%, < 5 s", dt)
    assert ok


def test_3_prony_recovery(capsys):
    t0 = time.perf_counter()
    fs = 1000.0
    t = np.arange(int(2 * fs)) / fs
    phases = (0.0, 20.0, 180.0, 200.0)
    data = {f"c{k}_p_pu": np.exp(-0.30 * t) * np.cos(2 * math.pi * 19 * t + math.radians(ph))
            for k, ph in enumerate(phases)}
    m = fit_modes(ChannelSet.from_arrays(0.0, 1 / fs, data), 10, 25)[0]
    dt = time.perf_counter() - t0
    got = [math.degrees(cmath.phase(r / m.residues[0])) % 360 for r in m.residues]
    ph_err = max(abs((g - p + 180) % 360 - 180) for g, p in zip(got, phases))
    ok = abs(m.frequency - 19) <= 0.05 and abs(m.sigma + 0.30) <= 0.02 and ph_err <= 5 and dt < 5.0
    report(capsys, 3, "Prony", ok, f"f {m.frequency:.4f} Hz, sigma {m.sigma:.4f}, phases "
                                   f"{', '.join(f'{g:.1f}' for g in got)} (max err {ph_err:.2e} deg); "
                                   "tol 0.05 Hz / 0.02 / 5 deg, < 5 s", dt)
    assert ok


def test_4_simulator_physics(capsys):
    t0 = time.perf_counter()
    sim = Simulator(sg_island(), dt=50e-6)
    a = sim.run(15.0, [LOAD_STEP]).channels
    b = Simulator(sg_island(), dt=25e-6).run(15.0, [LOAD_STEP]).channels
    dt = time.perf_counter() - t0
    p = a["G1_p_pu"].values
    expect = -0.05 * (p[-1] - p[0]) / 0.2 * 60.0
    f_err = abs(a["G1_fint_hz"].values[-1] - 60.0 - expect)
    diff = worst_rms_difference(a, b)
    bal = abs(power_balance(sim))
    ok = f_err <= 0.01 and diff < 1e-4 and bal < 1e-6 and dt < 30.0
    report(capsys, 4, "simulator physics", ok,
           f"droop df error {f_err:.2e} Hz (analytic {expect:.4f} Hz, tol 0.01); dt-halving RMS {diff:.2e} pu "
           f"(tol 1e-4); balance {bal:.1e} pu (tol 1e-6); < 30 s", dt)
    assert ok


def test_5_benchmark_event(capsys, kauai_study):
    _, b, run_time = kauai_study
    t0 = time.perf_counter()
    model = load_model(builtin_model_path())
    others = {d.id for d in model.devices} - {"plantA"}
    scr_err = []
    decreasing = True
    for dev, paper_pre in KAUAI_SCR_PRE.items():
        d = model.device(dev)
        pre = scr(model, d.bus, d.params.rating)
        post = scr(model, d.bus, d.params.rating, others)
        decreasing &= post < pre
        scr_err += [rel(pre, paper_pre), rel(post, KAUAI_SCR_POST[dev])]
    dt = run_time + time.perf_counter() - t0
    ok = (b.mode is not None and b.zeta < 0.05 and abs(b.shed_fraction - 0.037) <= 0.005
          and decreasing and max(scr_err) <= 0.15 and dt <= 120)
    report(capsys, 5, "benchmark event", ok,
           f"mode {b.mode.frequency:.2f} Hz zeta {b.zeta:.4f} (< 0.05); shed {100 * b.shed_fraction:.2f}% "
           f"(3.7 +- 0.5); SCR decreasing {decreasing}, worst SCR deviation {100 * max(scr_err):.1f}% (<= 15%); "
           "<= 120 s", dt)
    assert ok


def test_6_cross_method_agreement(capsys, kauai_study):
    _, b, run_time = kauai_study
    d, s = b.def_sources(), b.ssp_sources()
    ok = d == s == ["IBR1", "IBR2"]
    report(capsys, 6, "DEF/SSP agreement", ok, f"DEF {d}, SSP {s}; expected ['IBR1', 'IBR2']", run_time)
    assert ok


def test_7_mitigation_direction(capsys, mitigation_runs):
    runs, dt = mitigation_runs
    droop, pll = runs["method1_droop"][0], runs["method2_pll"][0]
    ok = (droop.candidate["zeta"] > droop.reference["zeta"] and pll.candidate["zeta"] > pll.reference["zeta"]
          and droop.deltas["band_peak_db"] <= -10 and pll.deltas["band_peak_db"] <= -10 and dt < 300)
    report(capsys, 7, "mitigation", ok,
           f"zeta droop 3->4: {droop.reference['zeta']:.4f} -> {droop.candidate['zeta']:.4f}, "
           f"pll_kp 0.15->0.10: {pll.reference['zeta']:.4f} -> {pll.candidate['zeta']:.4f}; band peak change "
           f"{droop.deltas['band_peak_db']:.1f} / {pll.deltas['band_peak_db']:.1f} dB (<= -10); < 300 s", dt)
    assert ok


def test_8_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["sim", "run", "kauai-mini", "--out", str(d)]) == 0
        outs.append({p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    dt = time.perf_counter() - t0
    differ = sorted(k for k in outs[0] if outs[0][k] != outs[1].get(k))
    ok = outs[0].keys() == outs[1].keys() and differ == ["manifest.json"]
    report(capsys, 8, "determinism", ok, f"{len(outs[0])} files, differing: {differ} (manifest only)", dt)
    assert ok
