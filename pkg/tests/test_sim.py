import dataclasses
import math

import numpy as np
import pytest
from scipy import signal

from egfl.plant import gl_siso
from egfl.ratcore import RatFun
from egfl.sim import (
    TRACE_COLUMNS,
    DiscreteFilter,
    DivergenceError,
    GridEvent,
    GridModel,
    SimError,
    SimTrace,
    _deriv,
    abc_to_dq,
    asymmetry_event,
    build_scenario,
    dq_to_abc,
    grid_voltage,
    measure_harmonics,
    power_to_current,
    run_scenario,
    sequence_components,
    sos_preload,
    transient_metrics,
    tustin_sos,
)

W60 = 2 * math.pi * 60
V0 = 120 * math.sqrt(2)


# reference computation ----------------------------------------------------------------

def test_power_to_current_examples():
    assert power_to_current(1000.0, 0.0, (170.0, 0.0)) == pytest.approx((3.922, 0.0), abs=5e-4)
    assert power_to_current(1000.0, 0.0, (170.0, 0.0))[1] == 0.0
    three = power_to_current(500.0, 200.0, (160.0, 5.0))
    single = power_to_current(500.0, 200.0, (160.0, 5.0), phases="single")
    np.testing.assert_allclose(single, np.array(three) * 1.5)


def test_power_to_current_voltage_floor():
    assert power_to_current(1000.0, 0.0, (1.0, 0.0), v_floor=0.05 * V0) is None


# frame transforms -------------------------------------------------------------------------

def test_aligned_and_quadrature_frames():
    th = 0.7
    abc = 10 * np.cos(th - np.array([0, 2 * np.pi / 3, -2 * np.pi / 3]))
    assert abc_to_dq(abc, th) == pytest.approx((10.0, 0.0), abs=1e-12)
    assert abc_to_dq(abc, th - np.pi / 2) == pytest.approx((0.0, 10.0), abs=1e-12)


def test_transform_round_trip():
    rng = np.random.default_rng(4)
    d, q, th = rng.normal(size=50), rng.normal(size=50), rng.uniform(-10, 10, 50)
    d2, q2 = abc_to_dq(dq_to_abc(d, q, th), th)
    np.testing.assert_allclose(d2, d, atol=1e-12)
    np.testing.assert_allclose(q2, q, atol=1e-12)


# grid ---------------------------------------------------------------------------------------

def test_balanced_grid():
    t = np.linspace(0, 0.05, 101)
    v = grid_voltage(t, GridModel(V0, W60))
    np.testing.assert_allclose(v[:, 0], V0 * np.cos(W60 * t), atol=1e-9)
    np.testing.assert_allclose(v[:, 1], V0 * np.cos(W60 * t - 2 * np.pi / 3), atol=1e-9)


def test_pure_negative_sequence_reverses_order():
    t = np.linspace(0, 0.05, 101)
    ev = GridEvent("asymmetry", a=0.0, b=1.0)
    v = grid_voltage(t, GridModel(V0, W60, events=(ev,)))
    np.testing.assert_allclose(v[:, 1], V0 * np.cos(W60 * t + 2 * np.pi / 3), atol=1e-9)


def test_sequence_components_oracle():
    # two phases at half magnitude, one at full
    ph = [1.0 + 0j, 0.5 * np.exp(-2j * np.pi / 3), 0.5 * np.exp(2j * np.pi / 3)]
    a_op = np.exp(2j * np.pi / 3)
    m = np.array([[1, 1, 1], [1, a_op, a_op**2], [1, a_op**2, a_op]]) / 3
    zero, pos, neg = m @ np.array(ph)
    a, b, psi, v0, psi0 = sequence_components(ph)
    assert (a, b, v0) == pytest.approx((abs(pos), abs(neg), abs(zero)), abs=1e-12)
    assert a == pytest.approx(2 / 3) and b == pytest.approx(1 / 6) and v0 == pytest.approx(1 / 6)


def test_asymmetry_event_reproduces_phasors():
    ph = [0.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)]
    ev = asymmetry_event(ph, 0.0, v_mag=1.0)
    t = np.arange(0, 1 / 60, 1e-5)
    v = grid_voltage(t, GridModel(1.0, W60, events=(ev,)))
    ref = np.real(np.array(ph)[None, :] * np.exp(1j * W60 * t)[:, None])
    np.testing.assert_allclose(v, ref, atol=1e-12)


def test_positive_sequence_harmonic_appears_at_twice_fundamental_in_dq():
    fs = 20e3
    t = np.arange(int(fs / 60 * 6)) / fs
    g = GridModel(1.0, W60, events=(GridEvent("harmonic", order=3, value=0.1, sequence="positive"),))
    d, q = abc_to_dq(grid_voltage(t, g), g.angle(t))
    spec = np.abs(np.fft.rfft(d - d.mean())) / t.size * 2
    f = np.fft.rfftfreq(t.size, 1 / fs)
    assert f[np.argmax(spec)] == pytest.approx(120.0)
    assert spec.max() == pytest.approx(0.1, rel=1e-6)


def test_grid_event_validation():
    with pytest.raises(SimError):
        GridEvent("sag", value=0.0)
    with pytest.raises(SimError):
        GridEvent("earthquake")
    with pytest.raises(SimError):
        GridEvent("sag", t_start=1.0, t_end=0.5, value=0.5)


# metrology -------------------------------------------------------------------------------------

FS = 20e3


def _tt(cycles=6):
    return np.arange(int(round(cycles * FS / 60))) / FS


def test_harmonic_orthogonality():
    t = _tt()
    rep = measure_harmonics(np.sin(3 * W60 * t), FS, W60, (0.0, t.size / FS))
    assert rep.magnitudes[3] == pytest.approx(1.0, abs=1e-9)
    assert all(v <= 1e-9 for k, v in rep.magnitudes.items() if k != 3)


def test_thd_and_dc_rejection():
    t = _tt()
    x = 5.0 + np.cos(W60 * t) + 0.1 * np.cos(3 * W60 * t + 0.3)
    rep = measure_harmonics(x, FS, W60, (0.0, t.size / FS))
    assert rep.thd == pytest.approx(0.1, abs=1e-9)
    assert rep.magnitudes[1] == pytest.approx(1.0, abs=1e-9)


def test_harmonic_window_must_be_whole_cycles():
    with pytest.raises(SimError):
        measure_harmonics(np.zeros(1000), FS, W60, (0.0, 0.021))


def test_first_order_transient():
    tau = 0.05
    t = np.arange(int(2.0 * FS)) / FS
    t0 = 0.1
    x = np.where(t >= t0, 1 - np.exp(-(t - t0) / tau), 0.0)
    m = transient_metrics(x, FS, t0)
    assert m.overshoot == 0
    assert m.settle_time == pytest.approx(math.log(50) * tau, rel=1e-3)
    assert m.rocof_max == pytest.approx(1 / tau, rel=1e-2)


def test_zero_step_is_flagged():
    m = transient_metrics(np.zeros(1000), FS, 0.01)
    assert not m.defined and m.rocof_max == 0 and m.overshoot == 0


def test_no_step_inside_trace():
    with pytest.raises(SimError):
        transient_metrics(np.zeros(100), FS, 1.0)


# discrete controllers ------------------------------------------------------------------------------

def test_tustin_keeps_integrator_exact():
    sos = tustin_sos(RatFun.integrator(), FS)
    # some section has a pole exactly at z = 1
    assert np.any(1.0 + sos[:, 4] + sos[:, 5] == 0.0)
    f = DiscreteFilter(sos)
    out = [f.step(1.0) for _ in range(200)]
    # trapezoidal integration of a unit step from rest
    assert out[-1] == pytest.approx((200 - 0.5) / FS, rel=1e-12)


def test_tustin_matches_continuous_response():
    r = RatFun.from_coeffs([100.0], [100.0, 1.0])
    f = DiscreteFilter.from_ratfun(r, FS)
    y = np.array([f.step(1.0) for _ in range(2000)])
    t = np.arange(2000) / FS
    np.testing.assert_allclose(y, 1 - np.exp(-100 * t), atol=5e-3)


def test_preload_holds_equilibrium(line, inverter, design):
    from egfl.design import design_set, realize_cascade

    real = realize_cascade(design_set(line, design), inverter, line, design)
    for sos, u, y in ((tustin_sos(real.kv_d, FS), 170.0, 0.0), (tustin_sos(real.ki, FS), 0.0, 0.05)):
        f = DiscreteFilter(sos)
        f.state = sos_preload(sos, u, y)
        out = [f.step(u) for _ in range(100)]
        np.testing.assert_allclose(out, y, atol=1e-9 * max(1.0, abs(u)))


# plant ---------------------------------------------------------------------------------------------------

def _rk4(x, h, n, **kw):
    xs = [x]
    for _ in range(n):
        k1 = _deriv(x, **kw)
        k2 = _deriv(x + 0.5 * h * k1, **kw)
        k3 = _deriv(x + 0.5 * h * k2, **kw)
        k4 = _deriv(x + h * k3, **kw)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs.append(x)
    return np.array(xs)


def test_unforced_plant_is_passive(inverter, line):
    kw = dict(m0=0.0, m1=0.0, vgd=0.0, vgq=0.0, wdot=W60, Li=inverter.Li, Ri=inverter.Ri, Ci=inverter.Ci,
              L=line.L, R=line.R, half_vdc=200.0)
    xs = _rk4(np.array([5.0, -2.0, 100.0, 30.0, 3.0, 1.0]), 5e-6, 4000, **kw)
    e = 0.5 * (inverter.Li * (xs[:, 0] ** 2 + xs[:, 1] ** 2) + inverter.Ci * (xs[:, 2] ** 2 + xs[:, 3] ** 2)
               + line.L * (xs[:, 4] ** 2 + xs[:, 5] ** 2))
    assert np.all(np.diff(e) <= 1e-12 * e[0])
    assert e[-1] < e[0]


def test_line_step_matches_rational_model(line):
    # pin vc = (1, 0) and integrate only the line-current rows of the plant
    kw = dict(m0=0.0, m1=0.0, vgd=0.0, vgq=0.0, wdot=line.omega0, Li=1.0, Ri=0.0, Ci=1.0,
              L=line.L, R=line.R, half_vdc=1.0)
    vc = np.array([0.0, 0.0, 1.0, 0.0])

    def f(ig):
        return _deriv(np.concatenate([vc, ig]), **kw)[4:]

    h, n = 5e-6, 4000
    ig = np.zeros(2)
    out = [ig]
    for _ in range(n):
        k1 = f(ig)
        k2 = f(ig + 0.5 * h * k1)
        k3 = f(ig + 0.5 * h * k2)
        k4 = f(ig + h * k3)
        ig = ig + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(ig)
    out = np.array(out)
    g = gl_siso(line)
    sys = signal.lti(np.asarray(g.num.coeffs[::-1]), np.asarray(g.den.coeffs[::-1]))
    _, y = signal.step(sys, T=np.arange(n + 1) * h)
    assert np.max(np.abs(out[:, 0] - y)) <= 0.01 * np.max(np.abs(y))


# scenarios ------------------------------------------------------------------------------------------------------

@pytest.fixture
def scenario(line, inverter, design):
    return build_scenario(line, inverter, design, GridModel(V0, W60), 1000.0, duration=0.1)


def test_steady_state_start_is_an_equilibrium(scenario):
    tr = run_scenario(scenario)
    for ch in ("iga_d", "ig_q", "vc_d", "vc_q", "iL_d", "iL_q"):
        x = tr[ch]
        assert np.max(np.abs(x - x[0])) <= 1e-6 * max(1.0, abs(x[0]))
    assert np.max(np.abs(tr["dw"])) < 1e-9


def test_determinism(scenario):
    a, b = run_scenario(scenario), run_scenario(scenario)
    for c in TRACE_COLUMNS:
        np.testing.assert_array_equal(a[c], b[c])


def test_csv_round_trip(scenario, tmp_path):
    tr = run_scenario(scenario)
    p = tmp_path / "trace.csv"
    tr.to_csv(p)
    header = p.read_text().splitlines()[0].split(",")
    assert [h.split(" ")[0] for h in header] == list(TRACE_COLUMNS)
    assert header[0] == "t [s]" and header[1] == "iga_d [A]"
    back = SimTrace.read_csv(p, tr.fs, tr.omega0, tr.v0)
    for c in TRACE_COLUMNS:
        np.testing.assert_allclose(back[c], tr[c], rtol=1e-8, atol=1e-12)


def test_frequency_step_converges(line, inverter, design):
    g = GridModel(V0, W60, events=(GridEvent("freq_step", t_start=0.1, value=2 * math.pi),))
    tr = run_scenario(build_scenario(line, inverter, design, g, 1000.0, duration=4.0))
    assert abs(np.mean(tr["dw"][-2000:]) - 2 * math.pi) <= 2 * math.pi * 0.01


def test_phase_jump_recovers(line, inverter, design):
    g = GridModel(V0, W60, events=(GridEvent("phase_jump", t_start=0.1, value=math.radians(5)),))
    tr = run_scenario(build_scenario(line, inverter, design, g, 1000.0, duration=3.0))
    assert np.max(np.abs(tr["vc_q"])) > 1.0
    assert abs(np.mean(tr["vc_q"][-3333:])) < 0.005 * V0


def test_tracking_error_vanishes(scenario):
    tr = run_scenario(dataclasses.replace(scenario, steps=(), duration=0.5,
                                          grid=GridModel(V0, W60, events=(GridEvent("sag", 0.05, 0.9),))))
    e = np.hypot(tr["e_d"][-3333:], tr["e_q"][-3333:])
    assert np.mean(e) < 0.005 * np.hypot(tr["i0_d"][-1], tr["i0_q"][-1])


def test_low_dc_link_saturates_but_continues(line, design):
    from egfl.plant import InverterParams

    weak = InverterParams(Li=1e-3, Ci=50e-6, Ri=0.01, vdc=300.0, fs=20e3, fsw=20e3, v0=V0)
    tr = run_scenario(build_scenario(line, weak, design, GridModel(V0, W60), 1000.0, duration=0.05))
    assert tr.saturated > 0 and len(tr) == 1000


def test_divergence_keeps_partial_trace(scenario):
    bad = dataclasses.replace(scenario.realization, kc_d=scenario.realization.kc_d * RatFun.const(-5.0))
    inv = dataclasses.replace(scenario.inverter, vdc=1e9)
    cfg = dataclasses.replace(scenario, realization=bad, inverter=inv, duration=0.5)
    with pytest.raises(DivergenceError) as info:
        run_scenario(cfg)
    tr = info.value.trace
    assert tr.status == "diverged" and 0 < len(tr) < 10000
    assert run_scenario(cfg, raise_on_divergence=False).status == "diverged"


def test_scenario_validation(scenario):
    with pytest.raises(SimError):
        dataclasses.replace(scenario, duration=0.0)
    with pytest.raises(SimError):
        dataclasses.replace(scenario, setpoint_mode="torque")
