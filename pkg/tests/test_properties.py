"""Property-based checks over randomly drawn parameters."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from egfl.analysis import closed_loop_set, coupling_perturbation, factored_sensitivity, mimo_sensitivity
from egfl.design import DesignParams, design_set, pr_compensator
from egfl.plant import LineParams, UncertaintyBox, coupling_gap, decoupling_bound, gl_siso, nominal_plant, rs_weights
from egfl.ratcore import FreqGrid, Polynomial, RatFun, is_hurwitz, sigma_max
from egfl.sim import abc_to_dq, dq_to_abc, power_to_current, sequence_components

W60 = 2 * math.pi * 60
finite = dict(allow_nan=False, allow_infinity=False)
coef = st.one_of(st.just(0.0), st.floats(1e-3, 10, **finite), st.floats(-10, -1e-3, **finite))
pos = st.floats(0.1, 10, **finite)


@st.composite
def ratfuns(draw):
    num = draw(st.lists(coef, min_size=1, max_size=3).filter(lambda c: any(abs(x) > 1e-3 for x in c)))
    roots = draw(st.lists(pos, min_size=1, max_size=3))
    den = Polynomial.from_roots([-r for r in roots]).coeffs
    return RatFun.from_coeffs(num, den)


omegas = st.floats(0.01, 100.0, **finite)


@given(ratfuns(), ratfuns(), omegas)
def test_arithmetic_is_pointwise(a, b, w):
    s = 1j * w
    scale = max(1.0, abs(a(s)) + abs(b(s)))
    assert abs((a + b)(s) - (a(s) + b(s))) <= 1e-9 * scale
    assert abs((a * b)(s) - a(s) * b(s)) <= 1e-9 * max(1.0, abs(a(s) * b(s)))
    assert abs((a - b)(s) - (a(s) - b(s))) <= 1e-9 * scale


@given(ratfuns(), omegas)
def test_feedback_identity(g, w):
    s = 1j * w
    sens = 1 / (1 + g)
    comp = g / (1 + g)
    assert abs(sens(s) + comp(s) - 1) <= 1e-8 * max(1.0, abs(sens(s)) + abs(comp(s)))


@given(st.lists(st.floats(0.05, 50, **finite), min_size=1, max_size=5))
def test_left_half_plane_roots_are_hurwitz(rs):
    den = Polynomial.from_roots([-r for r in rs])
    assert is_hurwitz(RatFun.make(1.0, [], [den]))
    flipped = Polynomial.from_roots([r for r in rs])
    assert not is_hurwitz(RatFun.make(1.0, [], [flipped]))


@given(st.floats(-5, 5, **finite), st.floats(-5, 5, **finite))
def test_sigma_max_of_scaled_rotation(a, b):
    assert math.isclose(sigma_max(np.array([[a, b], [-b, a]])), math.hypot(a, b), rel_tol=1e-9, abs_tol=1e-12)


@given(st.floats(1e-4, 1e-2, **finite), st.floats(1e-4, 1.0, **finite), st.floats(0.0, 1e4, **finite))
def test_gap_and_bound_are_reciprocal(L, R, w):
    p = LineParams(L, R, W60)
    assert math.isclose(coupling_gap(p, w) * decoupling_bound(p, w), 1.0, rel_tol=1e-9)


@given(st.floats(1e-4, 5e-3, **finite), st.floats(1.0, 5.0, **finite),
       st.floats(0.0, 0.1, **finite), st.floats(1e-3, 0.5, **finite))
@settings(max_examples=40, deadline=None)
def test_weights_cover_every_box(lmin, ratio, rmin, rspan):
    box = UncertaintyBox(lmin, lmin * ratio, rmin, rmin + rspan)
    nom = nominal_plant(box, W60)
    assert box.Lmin <= nom.L0 <= box.Lmax
    assert box.lambda_min <= nom.lambda0 <= box.lambda_max
    rs_weights(box, nom, 2 * math.pi * 300, grid=FreqGrid.logspace(1e-1, 1e5, 300))


@given(st.floats(0.2, 1.0, **finite), st.floats(200, 400, **finite), st.floats(0.3, 1.0, **finite),
       st.floats(150, 300, **finite), st.floats(5, 20, **finite))
@settings(max_examples=25, deadline=None)
def test_design_identities_hold(ad, fd, aq, fq, ft):
    line = LineParams(1e-3, 1e-3, W60)
    d = DesignParams(ad, 2 * math.pi * fd, aq, 2 * math.pi * fq, 0.5, 2 * math.pi * ft, 0.01)
    cs = design_set(line, d)
    grid = FreqGrid.logspace(1e-1, 1e5, 200)
    sens = closed_loop_set(gl_siso(line), cs, grid)
    assert sens.max_identity_error(grid) <= 1e-10
    w = grid.omegas[::10]
    direct = mimo_sensitivity(line, cs, w)
    fact = factored_sensitivity(sens, line, w)
    assert np.max(np.abs(fact - direct)) <= 1e-8 * max(1.0, np.max(np.abs(direct)))
    rep = coupling_perturbation(sens, line, grid)
    assert rep.bound_holds


@given(st.floats(0.0, 500.0, **finite), st.floats(1e-4, 0.1, **finite), st.integers(2, 7))
def test_pr_gain_at_resonance(k, xi, n):
    pr = pr_compensator(k, xi, n, W60)
    assert math.isclose(abs(pr(1j * n * W60)), 1 + k, rel_tol=1e-9)
    assert math.isclose(abs(pr(0.0)), 1.0, rel_tol=1e-12)


@given(st.floats(-100, 100, **finite), st.floats(-100, 100, **finite), st.floats(-50, 50, **finite))
def test_park_round_trip(d, q, th):
    d2, q2 = abc_to_dq(dq_to_abc(d, q, th), th)
    assert math.isclose(d2, d, abs_tol=1e-9) and math.isclose(q2, q, abs_tol=1e-9)


@given(st.floats(-5e3, 5e3, **finite), st.floats(-5e3, 5e3, **finite),
       st.floats(50, 300, **finite), st.floats(-50, 50, **finite))
def test_power_reference_delivers_requested_power(P, Q, vd, vq):
    i = power_to_current(P, Q, (vd, vq))
    # amplitude-invariant frame: P = 3/2 (v_d i_d + v_q i_q), Q = 3/2 (v_q i_d - v_d i_q)
    assert math.isclose(1.5 * (vd * i[0] + vq * i[1]), P, abs_tol=1e-6 * max(1.0, abs(P), abs(Q)))
    assert math.isclose(1.5 * (vq * i[0] - vd * i[1]), Q, abs_tol=1e-6 * max(1.0, abs(P), abs(Q)))


@given(st.floats(0.1, 2, **finite), st.floats(0, 2, **finite), st.floats(-3, 3, **finite),
       st.floats(0, 2, **finite), st.floats(-3, 3, **finite), st.floats(-3, 3, **finite))
def test_sequence_components_recover_construction(a, b, psi, v0, psi0, ref):
    shift = np.array([0.0, 2 * np.pi / 3, -2 * np.pi / 3])
    ph = np.exp(1j * ref) * (a * np.exp(-1j * shift) + b * np.exp(1j * (psi + shift)) + v0 * np.exp(1j * psi0))
    a2, b2, psi2, v02, psi02 = sequence_components(ph)
    assert math.isclose(a2, a, abs_tol=1e-9) and math.isclose(b2, b, abs_tol=1e-9)
    assert math.isclose(v02, v0, abs_tol=1e-9)
    if b > 1e-6:
        assert abs(np.exp(1j * psi2) - np.exp(1j * psi)) < 1e-6
    if v0 > 1e-6:
        assert abs(np.exp(1j * psi02) - np.exp(1j * psi0)) < 1e-6
