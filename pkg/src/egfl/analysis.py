"""
Closed-loop objects built from the line admittance and a controller set,
and the verdicts derived from them: nominal and robust stability,
synchronization, loop margins and the sensitivity-integral audit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .design import CascadeRealization, ControllerSet, sync_conditions
from .plant import (
    InverterParams,
    LineParams,
    NominalPlant,
    UncertaintyBox,
    coupling_gap,
    decoupling_bound,
    gamma,
    gl_mimo,
    gl_siso,
    rs_weights,
)
from .ratcore import FreqGrid, PoleReport, RatFun, default_grid, inv2, is_hurwitz, sigma_max_batch

IDENTITY_RTOL = 1e-10


class AnalysisError(RuntimeError):
    pass


def siso_sensitivity(gl: RatFun, k: RatFun) -> RatFun:
    """S~ = 1/(1 + gl k), built on the characteristic polynomial directly."""
    loop = gl * k
    if loop.is_zero:
        return RatFun.const(1.0)
    char = loop.den + loop.num
    if char.is_zero:
        raise AnalysisError("1 + gl k vanishes identically")
    return RatFun.make(1.0, loop.den_factors, [char])


def _complementary(loop: RatFun, s: RatFun) -> RatFun:
    # T = L S with S's numerator (the loop denominator) cancelled exactly
    if loop.is_zero:
        return RatFun.const(0.0)
    return RatFun.make(loop.gain, loop.num_factors, s.den_factors)


@dataclass(frozen=True)
class SensitivitySet:
    s_d: RatFun
    s_q: RatFun
    t_d: RatFun
    t_q: RatFun
    t_theta: RatFun
    t_v: RatFun

    def max_identity_error(self, grid: FreqGrid) -> float:
        """Largest relative residual of S+T=1 and T^q = T_theta + T_v on ``grid``."""
        w = grid.omegas
        sd, sq = self.s_d.freqresp(w), self.s_q.freqresp(w)
        td, tq = self.t_d.freqresp(w), self.t_q.freqresp(w)
        tt, tv = self.t_theta.freqresp(w), self.t_v.freqresp(w)
        r1 = np.abs(sd + td - 1) / np.maximum(1.0, np.abs(sd) + np.abs(td))
        r2 = np.abs(sq + tq - 1) / np.maximum(1.0, np.abs(sq) + np.abs(tq))
        r3 = np.abs(tt + tv - tq) / np.maximum.reduce([np.abs(tq), np.abs(tt) + np.abs(tv), np.ones_like(w)])
        return float(max(r1.max(), r2.max(), r3.max()))


def closed_loop_set(gl: RatFun, cs: ControllerSet, grid: FreqGrid | None = None) -> SensitivitySet:
    """All six closed-loop transfer functions of the 2-SISO loops.

    The identities are checked on ``grid`` before returning; a violation
    means an arithmetic bug and raises :class:`AnalysisError`.
    """
    ld = gl * cs.kd
    lq = gl * cs.kq
    sd = siso_sensitivity(gl, cs.kd)
    sq = siso_sensitivity(gl, cs.kq)
    td = _complementary(ld, sd)
    tq = _complementary(lq, sq)
    t_theta = gl * cs.k2q * sq
    t_v = gl * cs.k1q * sq
    out = SensitivitySet(sd, sq, td, tq, t_theta, t_v)
    err = out.max_identity_error(grid or default_grid())
    if not err <= IDENTITY_RTOL:
        raise AnalysisError(f"algebraic inconsistency (residual {err:.3e})")
    return out


def sensitivity_norm(sens: SensitivitySet, omega) -> np.ndarray:
    """||S~(j omega)||_2 of the diagonal 2-SISO sensitivity."""
    return np.maximum(np.abs(sens.s_d.freqresp(omega)), np.abs(sens.s_q.freqresp(omega)))


# MIMO sensitivity and its factorization ----------------------------------------

def mimo_sensitivity(line: LineParams, cs: ControllerSet, omega) -> np.ndarray:
    """(I + G_L K)^-1 evaluated directly, shape (n, 2, 2)."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    g = gl_mimo(line).freqresp(w)
    k = np.zeros_like(g)
    k[:, 0, 0] = cs.kd.freqresp(w)
    k[:, 1, 1] = cs.kq.freqresp(w)
    return inv2(np.eye(2) + g @ k)


def coupled_dynamics(sens: SensitivitySet, line: LineParams, omega) -> np.ndarray:
    """X_c = (I + (Gamma - I) S~)^-1, shape (n, 2, 2)."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    gm = gamma(line).freqresp(w) - np.eye(2)
    s = np.zeros_like(gm)
    s[:, 0, 0] = sens.s_d.freqresp(w)
    s[:, 1, 1] = sens.s_q.freqresp(w)
    return inv2(np.eye(2) + gm @ s)


def factored_sensitivity(sens: SensitivitySet, line: LineParams, omega) -> np.ndarray:
    """S~ X_c Gamma, which equals :func:`mimo_sensitivity`."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    s = np.zeros((w.size, 2, 2), dtype=complex)
    s[:, 0, 0] = sens.s_d.freqresp(w)
    s[:, 1, 1] = sens.s_q.freqresp(w)
    return s @ coupled_dynamics(sens, line, w) @ gamma(line).freqresp(w)


def mimo_return_difference(line: LineParams, cs: ControllerSet) -> RatFun:
    """det(I + G_L K) for diagonal K, using det G_L = 1/(L^2 (s^2 + 2 lambda s + lambda^2 + omega0^2))."""
    g = gl_siso(line)
    det_g = RatFun.make(1.0 / line.L**2, [], [line.pole_poly()])
    return 1 + g * (cs.kd + cs.kq) + det_g * cs.kd * cs.kq


def mimo_closed_loop_poles(line: LineParams, cs: ControllerSet) -> PoleReport:
    """Hurwitz test on the zeros of det(I + G_L K), the exact MIMO closed-loop poles."""
    rd = mimo_return_difference(line, cs)
    return is_hurwitz(RatFun.make(1.0, rd.den_factors, rd.num_factors))


# verdicts -------------------------------------------------------------------------

@dataclass(frozen=True)
class NominalVerdict:
    passed: bool
    hurwitz_d: PoleReport
    hurwitz_q: PoleReport
    eps_max: float
    omega_eps_max: float

    def __bool__(self) -> bool:
        return self.passed


def coupling_measure(sens: SensitivitySet, line: LineParams, omega) -> np.ndarray:
    """eps(omega) = ||S~(j omega)||_2 * ||Gamma(j omega) - I||_2."""
    return sensitivity_norm(sens, omega) * coupling_gap(line, np.asarray(omega, dtype=float))


def check_nominal_stability(sens: SensitivitySet, line: LineParams, grid: FreqGrid | None = None) -> NominalVerdict:
    grid = grid or default_grid()
    w = grid.omegas
    eps = coupling_measure(sens, line, w)
    i = int(np.argmax(eps))
    hd, hq = is_hurwitz(sens.s_d), is_hurwitz(sens.s_q)
    ok = bool(hd) and bool(hq) and bool(eps[i] < 1.0)
    return NominalVerdict(ok, hd, hq, float(eps[i]), float(w[i]))


@dataclass(frozen=True)
class CouplingReport:
    omega: np.ndarray
    eps: np.ndarray
    xc_gap: np.ndarray
    bound: np.ndarray
    applicable: np.ndarray

    @property
    def bound_holds(self) -> bool:
        a = self.applicable
        return bool(np.all(self.xc_gap[a] <= self.bound[a] * (1 + 1e-9) + 1e-12))


def coupling_perturbation(sens: SensitivitySet, line: LineParams, grid: FreqGrid | None = None) -> CouplingReport:
    """Per-frequency coupling measure, the exact X_c gap and its Neumann bound.

    Points with eps >= 1 are flagged inapplicable and carry ``nan`` bounds.
    """
    w = (grid or default_grid()).omegas
    eps = coupling_measure(sens, line, w)
    xc = coupled_dynamics(sens, line, w)
    gap = sigma_max_batch(xc - np.eye(2))
    ok = eps < 1.0
    bound = np.full_like(eps, np.nan)
    bound[ok] = eps[ok] / (1.0 - eps[ok])
    return CouplingReport(w, eps, gap, bound, ok)


@dataclass(frozen=True)
class RSReport:
    passed: bool
    omega: np.ndarray
    s0: np.ndarray
    ceiling1: np.ndarray
    ceiling2: np.ndarray
    applicable1: np.ndarray
    margin1: np.ndarray
    margin2: np.ndarray
    binding_omega: float
    hurwitz: bool

    def __bool__(self) -> bool:
        return self.passed


def check_robust_stability(
    nom: NominalPlant,
    cs: ControllerSet,
    box: UncertaintyBox,
    omega_bw: float,
    grid: FreqGrid | None = None,
    w2_form: str = "auto",
) -> RSReport:
    """Small-gain test of the nominal sensitivity against both ceilings.

    ``ceiling1`` comes from the multiplicative line-parameter weights and
    ``ceiling2`` is the decoupling bound at the most resistive-poor line
    (smallest lambda).  Where ``|W1||W3| >= 1`` the first ceiling is not
    positive and the point fails.
    """
    grid = grid or default_grid()
    w = grid.omegas
    w1, w2, w3 = rs_weights(box, nom, omega_bw, grid=grid, w2_form=w2_form)
    gl0 = nom.gl0
    sd = siso_sensitivity(gl0, cs.kd)
    sq = siso_sensitivity(gl0, cs.kq)
    s0 = np.maximum(np.abs(sd.freqresp(w)), np.abs(sq.freqresp(w)))
    a1 = np.abs(w1.freqresp(w)) * np.abs(w3.freqresp(w))
    m2 = np.abs(w2.freqresp(w))
    with np.errstate(divide="ignore"):
        c1 = np.where(m2 > 0, (1.0 - a1) / m2, np.inf)
    c1 = np.where(a1 < 1.0, c1, np.nan)
    worst = LineParams.from_lambda(nom.L0, box.lambda_min, nom.omega0)
    c2 = decoupling_bound(worst, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        m1 = np.where(np.isnan(c1), np.inf, s0 / c1)
        mm2 = s0 / c2
    hur = bool(is_hurwitz(sd)) and bool(is_hurwitz(sq))
    total = np.maximum(m1, mm2)
    ok = hur and bool(np.all(total < 1.0))
    return RSReport(
        passed=ok,
        omega=w,
        s0=s0,
        ceiling1=c1,
        ceiling2=c2,
        applicable1=a1 < 1.0,
        margin1=m1,
        margin2=mm2,
        binding_omega=float(w[int(np.argmax(total))]),
        hurwitz=hur,
    )


@dataclass(frozen=True)
class SyncVerdict:
    passed: bool
    counts: dict

    def __bool__(self) -> bool:
        return self.passed


def check_synchronization(cs: ControllerSet) -> SyncVerdict:
    c = sync_conditions(cs)
    return SyncVerdict(bool(c["tracking"] and c["synchronization"]), c)


# loop metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class LoopReport:
    ms: float
    omega_ms: float
    pm: float
    gm: float
    crossover: float
    omega_b: float
    omega_t: float


def _log_interp(w: np.ndarray, y: np.ndarray, i: int, level: float) -> float:
    """Frequency where y crosses ``level`` between samples i and i+1 (log-linear)."""
    y0, y1 = y[i], y[i + 1]
    if y1 == y0:
        return float(w[i])
    f = (level - y0) / (y1 - y0)
    return float(np.exp(np.log(w[i]) + f * (np.log(w[i + 1]) - np.log(w[i]))))


def _peak_sensitivity(loop: RatFun, w: np.ndarray, mag_s: np.ndarray) -> tuple[float, float]:
    i = int(np.argmax(mag_s))
    lo = w[max(i - 1, 0)]
    hi = w[min(i + 1, w.size - 1)]
    best = (float(mag_s[i]), float(w[i]))
    if hi > lo:
        def neg(u):
            return -abs(1.0 / (1.0 + loop(1j * math.exp(u))))

        r = optimize.minimize_scalar(neg, bounds=(math.log(lo), math.log(hi)), method="bounded",
                                     options={"xatol": 1e-10})
        if -r.fun > best[0]:
            best = (float(-r.fun), float(math.exp(r.x)))
    return best


def loop_metrics(loop: RatFun, grid: FreqGrid | None = None) -> LoopReport:
    """Peak sensitivity, margins and the two bandwidth markers of a SISO loop.

    ``pm`` is ``inf`` when the loop never crosses unit gain and ``gm`` is
    ``inf`` when the phase never reaches -180 degrees.
    """
    if loop.relative_degree < 1:
        raise AnalysisError("open loop must be strictly proper")
    w = (grid or default_grid()).omegas
    lj = loop.freqresp(w)
    mag = np.abs(lj)
    mag_s = np.abs(1.0 / (1.0 + lj))
    ms, w_ms = _peak_sensitivity(loop, w, mag_s)

    # gain crossovers
    above = mag >= 1.0
    idx = np.nonzero(above[:-1] != above[1:])[0]
    ph = np.unwrap(np.angle(lj))
    pm, wc = math.inf, math.nan
    for i in idx:
        wx = _log_interp(w, np.log(mag), i, 0.0)
        phx = np.angle(loop(1j * wx), deg=True)
        m = (phx + 180.0) % 360.0
        m = m - 360.0 if m > 180.0 else m
        if m < pm:
            pm, wc = m, wx

    # phase crossings of -180 deg (mod 360)
    gm = math.inf
    k = np.floor((ph + math.pi) / (2 * math.pi))
    for i in np.nonzero(k[:-1] != k[1:])[0]:
        level = (max(k[i], k[i + 1])) * 2 * math.pi - math.pi
        wx = _log_interp(w, ph, i, level)
        g = 1.0 / abs(loop(1j * wx))
        gm = min(gm, g)

    # omega_B: the |S| <= 1 region starting from dc
    bad = np.nonzero(mag_s > 1.0)[0]
    if bad.size == 0:
        w_b = float(w[-1])
    elif bad[0] == 0:
        w_b = float(w[0])
    else:
        j = bad[0] - 1
        w_b = _log_interp(w, np.log(mag_s), j, 0.0)

    # omega_T: smallest grid w_T with |L(jw)| <= 0.5 (w_T/w)^2 for every larger grid w
    scaled = mag * w**2
    suffix = np.maximum.accumulate(scaled[::-1])[::-1]
    ok = suffix <= 0.5 * w**2
    w_t = float(w[int(np.argmax(ok))]) if ok.any() else math.inf

    if math.isnan(wc):
        wc = math.inf
    return LoopReport(ms=ms, omega_ms=w_ms, pm=pm, gm=gm, crossover=wc, omega_b=w_b, omega_t=w_t)


def ms_margin_bounds(ms: float) -> tuple[float, float]:
    """Guaranteed (PM in degrees, GM ratio) for a loop with peak sensitivity ``ms``."""
    if ms < 1:
        raise ValueError("peak sensitivity is at least one")
    pm = math.degrees(2.0 * math.asin(1.0 / (2.0 * ms)))
    gm = ms / (ms - 1.0) if ms > 1 else math.inf
    return pm, gm


# sensitivity integral -------------------------------------------------------------

@dataclass(frozen=True)
class BodeAudit:
    integral: float
    abs_integral: float
    low_band: float
    lhs: float
    ln_ms: float
    omega_b: float
    omega_t: float
    passed: bool


def _log_quad(f, a: float, b: float, breaks=()) -> float:
    """Integral of f over [a, b] taken in the variable u = ln(omega)."""
    pts = sorted({a, b, *[p for p in breaks if a < p < b]})
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(lambda u: f(math.exp(u)) * math.exp(u), math.log(lo), math.log(hi),
                                limit=400, epsabs=0.0, epsrel=1e-10)
        total += val
    return total


def bode_integral_audit(s_tilde: RatFun, loop: RatFun, grid: FreqGrid | None = None) -> BodeAudit:
    """Numerical check of the zero-area sensitivity integral and the peak bound."""
    if loop.relative_degree < 2:
        raise AnalysisError("Bode integral prerequisites unmet")
    if not is_hurwitz(s_tilde):
        raise AnalysisError("Bode integral prerequisites unmet")
    grid = grid or default_grid()
    rep = loop_metrics(loop, grid)
    w_b, w_t = rep.omega_b, rep.omega_t
    w_max = 100.0 * w_t
    # break the quadrature at every lightly damped pole or zero
    feats = [abs(p) for p in np.concatenate([s_tilde.poles(), s_tilde.zeros(), loop.poles()]) if abs(p) > 0]
    w_lo = 1e-9 * max(w_t, 1.0)
    breaks = [x for x in feats if w_lo < x < w_max] + [w_b, w_t]

    def ln_s(x):
        return math.log(abs(s_tilde(1j * x)))

    body = _log_quad(ln_s, w_lo, w_max, breaks)
    body_abs = _log_quad(lambda x: abs(ln_s(x)), w_lo, w_max, breaks)
    tail, _ = integrate.quad(lambda x: -loop(1j * x).real, w_max, np.inf, limit=200)
    # below w_lo, ln|S| ~ ln|c w^k| has an integrable singularity
    head = _origin_head(s_tilde, w_lo)
    integral = head + body + tail
    total_abs = abs(head) + body_abs + abs(tail)
    low_band = abs(head + _log_quad(ln_s, w_lo, w_b, breaks)) if w_b > w_lo else 0.0
    lhs = (low_band - 0.75 * w_t) / (w_t - w_b) if w_t > w_b else math.inf
    ln_ms = math.log(rep.ms)
    passed = lhs <= ln_ms + 1e-6 and abs(integral) <= 0.02 * total_abs
    return BodeAudit(integral, total_abs, low_band, lhs, ln_ms, w_b, w_t, passed)


def _origin_head(s_tilde: RatFun, w_lo: float) -> float:
    # |S(jw)| ~ c w^k near the origin: int_0^a ln(c w^k) dw = a (ln c + k ln a - k)
    k = s_tilde.origin_zeros()
    c = abs(s_tilde(1j * w_lo)) / w_lo**k if k else abs(s_tilde(1j * w_lo))
    return w_lo * (math.log(c) + k * math.log(w_lo) - k)


# closed loop of the realized cascade ---------------------------------------------

def cascade_closed_loop(
    line: LineParams, inv: InverterParams, cs: ControllerSet, real: CascadeRealization, omega
) -> np.ndarray:
    """Reference-to-current response of the realized cascade, shape (n, 2, 2).

    Unlike the 2-SISO design model this keeps the dq coupling of the line,
    the finite inner current-loop bandwidth (the ``i_g`` feed-forward only
    cancels the line current through ``T_i``), the rotational cross terms
    left uncancelled by that bandwidth, and the frame-angle path of K2^q.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    s = 1j * w
    n = w.size
    ti = 1.0 / (1.0 + s * real.tau_i)
    eye = np.broadcast_to(np.eye(2), (n, 2, 2))
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])

    def diag(a, b):
        out = np.zeros((n, 2, 2), dtype=complex)
        out[:, 0, 0] = a
        out[:, 1, 1] = b
        return out

    kv = diag(real.kv_d.freqresp(w), real.kv_q.freqresp(w))
    kc = diag(real.kc_d.freqresp(w), real.kc_q.freqresp(w))
    k2 = diag(np.zeros(n), cs.k2q.freqresp(w))
    m = (inv.Ci * s)[:, None, None] * eye + ti[:, None, None] * kv
    m = m - ((ti - 1.0) * inv.Ci * line.omega0)[:, None, None] * rot
    m_inv = inv2(m)
    a = m_inv * ti[:, None, None]
    b = m_inv * (ti - 1.0)[:, None, None]
    g = gl_mimo(line).freqresp(w)
    loop = g @ (a @ kc + k2)
    return inv2(eye - g @ b + loop) @ loop


__all__ = [
    "AnalysisError",
    "cascade_closed_loop",
    "siso_sensitivity",
    "SensitivitySet",
    "closed_loop_set",
    "sensitivity_norm",
    "mimo_sensitivity",
    "coupled_dynamics",
    "factored_sensitivity",
    "mimo_return_difference",
    "mimo_closed_loop_poles",
    "NominalVerdict",
    "coupling_measure",
    "check_nominal_stability",
    "CouplingReport",
    "coupling_perturbation",
    "RSReport",
    "check_robust_stability",
    "SyncVerdict",
    "check_synchronization",
    "LoopReport",
    "loop_metrics",
    "ms_margin_bounds",
    "BodeAudit",
    "bode_integral_audit",
    "gl_siso",
]
