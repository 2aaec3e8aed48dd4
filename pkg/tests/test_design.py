import math
import warnings

import numpy as np
import pytest

from egfl.design import (
    AuxCompensator,
    DesignError,
    DesignParams,
    ValidityWarning,
    delay_phase,
    design_k1q,
    design_k2q,
    design_kd,
    design_set,
    inner_loop,
    lead,
    lead_max_phase,
    notch,
    pr_compensator,
    predicted_pm,
    realize_cascade,
    sync_conditions,
    theta_open_loop,
)
from egfl.plant import gl_siso
from egfl.ratcore import Polynomial, RatFun

WD, WQ, WT = 2 * math.pi * 300, 2 * math.pi * 240, 2 * math.pi * 10


def test_kd_without_lead(line):
    k = design_kd(line, 1.0, WD)
    ref = RatFun.make(line.L * WD * math.hypot(WD, line.lam), [], [Polynomial.s()])
    assert k.coeff_equal(ref, rtol=1e-12)


def test_kd_crossover_and_integrator(line):
    k = design_kd(line, 0.4, WD)
    assert abs((k * gl_siso(line))(1j * WD)) == pytest.approx(1.0, rel=0.15)
    assert k.origin_poles() == 1


def test_k1q_shape(line):
    k = design_k1q(line, 0.5, WQ, WT, 0.01)
    assert k(0.0) == 0
    assert k.origin_zeros() == 1  # net count: one zero, no pole at s = 0
    assert abs((k * gl_siso(line))(1j * WQ)) == pytest.approx(1.0, rel=0.15)


def test_k2q_cancels_line(line):
    k = design_k2q(line, 0.5, WT)
    assert (k * gl_siso(line)).coeff_equal(theta_open_loop(0.5, WT), rtol=1e-12)
    assert k.origin_poles() == 2


def test_sync_counts(line, design):
    c = sync_conditions(design_set(line, design))
    assert c["k1q_over_k2q_origin_zeros"] == 3
    assert c["tracking"] and c["synchronization"]


def test_pr_compensator():
    w0 = 2 * math.pi * 60
    pr = pr_compensator(100.0, 0.01, 3, w0)
    assert abs(pr(3j * w0)) == pytest.approx(101.0, rel=1e-12)
    assert pr(0.0) == pytest.approx(1.0)
    assert pr_compensator(0.0, 0.01, 3, w0).coeff_equal(RatFun.const(1.0))


def test_lead_and_notch():
    assert lead_max_phase(0.4) == pytest.approx(46.397, abs=1e-3)
    ld = lead(0.4, 1000.0)
    assert math.degrees(np.angle(ld(1000j))) == pytest.approx(lead_max_phase(0.4), abs=1e-9)
    n = notch(500.0)
    assert abs(n(500j)) < 1e-12
    assert abs(n(0.0)) == pytest.approx(1.0)


def test_predicted_pm(line, design):
    assert predicted_pm(design, line, "d") == pytest.approx(46.4, abs=0.1)
    q1 = DesignParams(0.4, WD, 1.0, WQ, 0.5, WT)
    assert predicted_pm(q1, line, "q") == pytest.approx(0.0, abs=1e-12)
    d1 = DesignParams(1.0, 1e6, 0.5, WQ, 0.5, WT)
    assert predicted_pm(d1, line, "d") == pytest.approx(0.0, abs=1e-3)


def test_pm_validity_warning(line):
    low = DesignParams(0.4, 2 * math.pi * 5, 0.5, 2 * math.pi * 5, 0.5, 2 * math.pi * 1)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        predicted_pm(low, line, "d")
    assert any(issubclass(r.category, ValidityWarning) for r in rec)


def test_inner_loop(inverter):
    ki, ti, si = inner_loop(inverter, 1e-4)
    assert ti(0.0) == pytest.approx(1.0) and si(0.0) == 0
    assert abs(ti(1j / 1e-4)) == pytest.approx(1 / math.sqrt(2))
    loop = inverter.gi() * ki
    assert (loop / (1 + loop)).coeff_equal(ti, rtol=1e-12)


def test_cascade_gains(line, inverter, design):
    cs = design_set(line, design)
    real = realize_cascade(cs, inverter, line, design, 1e-4)
    assert real.omega_lc2 == pytest.approx(2e7)
    assert real.kc_d(0.0).real == pytest.approx(WD * math.hypot(WD, line.lam) / (0.4 * 2e7), rel=1e-12)
    assert real.kc_d(0.0).real == pytest.approx(0.444, abs=1e-3)
    d1 = DesignParams(1.0, WD, 0.5, WQ, 0.5, WT, 0.01)
    assert realize_cascade(design_set(line, d1), inverter, line, d1).kv_d.is_zero


def test_cascade_reconstructs_loop_controllers(line, inverter, design):
    cs = design_set(line, design)
    real = realize_cascade(cs, inverter, line, design, 1e-4)
    w = np.logspace(0, 3, 200)
    for axis, k in (("d", cs.kd), ("q", cs.k1q)):
        ratio = np.abs(real.equivalent(inverter, axis).freqresp(w) / k.freqresp(w))
        assert ratio.min() >= 0.95 and ratio.max() <= 1.05


def test_delay_phase():
    assert delay_phase(20e3, 2 * math.pi * 300) == pytest.approx(-0.1414, abs=1e-4)
    assert delay_phase(20e3, 0.0) == 0
    assert delay_phase(20e3, 2 * math.pi * 20e3 / 3) == pytest.approx(-math.pi)


@pytest.mark.parametrize("alpha", [0.0, 1.5, -0.2])
def test_alpha_out_of_range(alpha):
    with pytest.raises(DesignError):
        DesignParams(alpha, WD, 0.5, WQ, 0.5, WT)


def test_aux_validation():
    with pytest.raises(DesignError):
        AuxCompensator("pr", k=0.0, xi=0.01)
    with pytest.raises(DesignError):
        AuxCompensator("lead", alpha=1.0, omega=10.0)
    with pytest.raises(DesignError):
        AuxCompensator("wobble")
    with pytest.raises(DesignError):
        AuxCompensator("pr", k=10.0, xi=0.001).check_pr_damping(2 * math.pi, 2 * math.pi * 60)


def test_only_notch_on_theta_path(line, design):
    with pytest.raises(DesignError):
        design_set(line, design, aux_theta=(AuxCompensator("pr", k=10, xi=0.01),))


def test_cascade_rejects_improper(line, inverter, design):
    cs = design_set(line, design)
    bad = type(cs)(kd=RatFun.const(1.0), k1q=cs.k1q, k2q=cs.k2q)
    with pytest.raises(DesignError):
        realize_cascade(bad, inverter, line, design)
