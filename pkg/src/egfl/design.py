"""
Controller synthesis: d-axis and parallel q-axis controllers, auxiliary
compensators, closed-form margin predictions and the cascade (inner current,
outer voltage, series compensator) realization around the LC filter.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .plant import InverterParams, LineParams, gl_siso
from .ratcore import Polynomial, RatFun

TWO_PI = 2.0 * math.pi
PM_VALID_MIN = TWO_PI * 120.0
DEFAULT_TAU_I = 1e-4
DEFAULT_NOTCH_XI = 0.7


class DesignError(ValueError):
    pass


class ValidityWarning(UserWarning):
    """A closed-form prediction was requested outside its validity range."""


@dataclass(frozen=True)
class DesignParams:
    alpha_d: float
    omega_d: float
    alpha_q: float
    omega_q: float
    alpha_theta: float
    omega_theta: float
    bandpass_ratio: float = 0.2

    def __post_init__(self):
        for name in ("alpha_d", "alpha_q", "alpha_theta"):
            a = getattr(self, name)
            if not (0 < a <= 1):
                raise DesignError(f"{name} must lie in (0, 1], got {a}")
        for name in ("omega_d", "omega_q", "omega_theta"):
            if not getattr(self, name) > 0:
                raise DesignError(f"{name} must be positive")
        if not self.omega_theta < self.omega_q:
            raise DesignError("omega_theta must be below omega_q")
        if not self.bandpass_ratio > 0:
            raise DesignError("bandpass_ratio must be positive")

    @property
    def omega_bp(self) -> float:
        """Low corner of the K1^q band-pass (rad/s)."""
        return self.bandpass_ratio * self.omega_theta


@dataclass(frozen=True)
class AuxCompensator:
    """PR, lead or notch term cascaded with a loop controller.

    Only the fields of the chosen ``kind`` are used: PR needs ``k``, ``xi``,
    ``n``; lead needs ``alpha``, ``omega``; notch needs ``omega`` and ``xi``.
    """

    kind: str
    k: float = 0.0
    xi: float = 0.0
    n: int = 2
    alpha: float = 1.0
    omega: float = 0.0

    def __post_init__(self):
        if self.kind == "pr":
            if not (self.k > 0 and self.xi > 0):
                raise DesignError("PR needs k > 0 and xi > 0")
            if int(self.n) != self.n or self.n < 2:
                raise DesignError("PR harmonic order must be an integer >= 2")
        elif self.kind == "lead":
            if not (0 < self.alpha < 1 and self.omega > 0):
                raise DesignError("lead needs 0 < alpha < 1 and omega > 0")
        elif self.kind == "notch":
            if not (self.omega > 0 and self.xi > 0):
                raise DesignError("notch needs omega > 0 and xi > 0")
        else:
            raise DesignError(f"unknown compensator kind {self.kind!r}")

    def check_pr_damping(self, max_dev: float, omega0: float) -> None:
        if self.kind == "pr" and self.xi < abs(max_dev) / omega0:
            raise DesignError("PR damping below the anticipated frequency deviation")

    def tf(self, omega0: float) -> RatFun:
        if self.kind == "pr":
            return pr_compensator(self.k, self.xi, self.n, omega0)
        if self.kind == "lead":
            return lead(self.alpha, self.omega)
        return notch(self.omega, self.xi)


def _lead_factor(alpha: float, w: float) -> RatFun:
    return RatFun.make(1.0, [Polynomial((alpha * w, 1.0))], [Polynomial((w / alpha, 1.0))])


def design_kd(line: LineParams, alpha_d: float, omega_d: float) -> RatFun:
    """Integrator plus lead placing the d-axis crossover near ``omega_d``."""
    if not (0 < alpha_d <= 1) or not omega_d > 0:
        raise DesignError("need 0 < alpha_d <= 1 and omega_d > 0")
    g = line.L * omega_d * math.sqrt(omega_d**2 + line.lam**2) / alpha_d
    return RatFun.make(g, [], [Polynomial.s()]) * _lead_factor(alpha_d, omega_d)


def design_k1q(
    line: LineParams, alpha_q: float, omega_q: float, omega_theta: float, bandpass_ratio: float = 0.2
) -> RatFun:
    """Lead plus band-pass: the q-axis path that absorbs disturbances into v_c^q.

    The band-pass low corner sits at ``bandpass_ratio * omega_theta``.  The
    default 0.2 leaves the q loop with a right-half-plane pole pair for
    crossovers like ``omega_q = 2 pi 240``: the flat band gain of K1^q G~_L
    (about ``alpha_q omega_q^2 / omega0^2``) overtakes the double-integrator
    path while it still carries phase lead, so the Nyquist curve crosses
    the negative real axis far left of -1.  The bundled presets use 0.01.
    """
    if not (0 < alpha_q <= 1) or not (0 < omega_theta < omega_q):
        raise DesignError("need 0 < alpha_q <= 1 and 0 < omega_theta < omega_q")
    if not bandpass_ratio > 0:
        raise DesignError("bandpass_ratio must be positive")
    g = line.L * omega_q**2 / alpha_q
    corner = bandpass_ratio * omega_theta
    band = RatFun.make(1.0, [Polynomial.s()], [Polynomial((line.lam, 1.0)), Polynomial((corner, 1.0))])
    return RatFun.const(g) * _lead_factor(alpha_q, omega_q) * band


def design_k2q(line: LineParams, alpha_theta: float, omega_theta: float) -> RatFun:
    """Double integrator path that drives the frame angle.

    The line poles and the line zero are cancelled by construction, so
    ``design_k2q(...) * gl_siso(line)`` equals :func:`theta_open_loop`
    coefficient for coefficient.
    """
    if not (0 < alpha_theta <= 1) or not omega_theta > 0:
        raise DesignError("need 0 < alpha_theta <= 1 and omega_theta > 0")
    g = line.L * omega_theta**2 / alpha_theta
    base = RatFun.make(g, [], [Polynomial.s(), Polynomial.s()]) * _lead_factor(alpha_theta, omega_theta)
    return base * RatFun.make(1.0, [line.pole_poly()], [Polynomial((line.lam, 1.0))])


def theta_open_loop(alpha_theta: float, omega_theta: float) -> RatFun:
    """omega_theta^2/(alpha_theta s^2) * (s + alpha_theta omega_theta)/(s + omega_theta/alpha_theta)."""
    return RatFun.make(omega_theta**2 / alpha_theta, [], [Polynomial.s(), Polynomial.s()]) * _lead_factor(
        alpha_theta, omega_theta
    )


def pr_compensator(k: float, xi: float, n: int, omega0: float) -> RatFun:
    """1 + k * 2 n xi w0 s / (s^2 + 2 n xi w0 s + n^2 w0^2)."""
    if k < 0 or not xi > 0 or n < 1:
        raise DesignError("need k >= 0, xi > 0, n >= 1")
    if k == 0:
        return RatFun.const(1.0)
    wn = n * omega0
    den = Polynomial((wn * wn, 2.0 * n * xi * omega0, 1.0))
    return 1 + RatFun.make(k * 2.0 * n * xi * omega0, [Polynomial.s()], [den])


def lead(alpha: float, omega_r: float) -> RatFun:
    """(s + alpha w_r)/(s + w_r/alpha); dc gain alpha^2, unity at high frequency."""
    if not (0 < alpha < 1) or not omega_r > 0:
        raise DesignError("need 0 < alpha < 1 and omega_r > 0")
    return _lead_factor(alpha, omega_r)


def lead_max_phase(alpha: float) -> float:
    """Peak phase of :func:`lead` in degrees, reached at ``omega_r``."""
    return math.degrees(math.asin((1 - alpha**2) / (1 + alpha**2)))


def notch(omega_n: float, xi_n: float = DEFAULT_NOTCH_XI) -> RatFun:
    """(s^2 + w_n^2)/(s^2 + 2 xi_n w_n s + w_n^2)."""
    if not (omega_n > 0 and xi_n > 0):
        raise DesignError("need omega_n > 0 and xi_n > 0")
    return RatFun.make(
        1.0,
        [Polynomial((omega_n**2, 0.0, 1.0))],
        [Polynomial((omega_n**2, 2.0 * xi_n * omega_n, 1.0))],
    )


def predicted_pm(design: DesignParams, line: LineParams, axis: str) -> float:
    """Closed-form phase margin (degrees) of the designed d or q loop."""
    if axis == "d":
        a, w = design.alpha_d, design.omega_d
        pm = 90.0 + lead_max_phase(a) - math.degrees(math.atan2(w, line.lam))
    elif axis == "q":
        a, w = design.alpha_q, design.omega_q
        pm = lead_max_phase(a)
    else:
        raise ValueError("axis must be 'd' or 'q'")
    if w < PM_VALID_MIN:
        warnings.warn("prediction outside validity range", ValidityWarning, stacklevel=2)
    return pm


@dataclass(frozen=True)
class ControllerSet:
    """Loop controllers with their auxiliary compensators already folded in.

    ``kd``, ``k1q`` and ``k2q`` are the complete transfer functions used in
    the loops.  ``base`` keeps the bare designs for the cascade realization.
    """

    kd: RatFun
    k1q: RatFun
    k2q: RatFun
    aux_d: tuple[AuxCompensator, ...] = ()
    aux_q: tuple[AuxCompensator, ...] = ()
    aux_theta: tuple[AuxCompensator, ...] = ()
    base: tuple[RatFun, RatFun, RatFun] | None = field(default=None, compare=False)

    @property
    def kq(self) -> RatFun:
        return self.k1q + self.k2q


def _aux_product(aux, omega0: float) -> RatFun:
    out = RatFun.const(1.0)
    for a in aux:
        out = out * a.tf(omega0)
    return out


def design_set(
    line: LineParams,
    design: DesignParams,
    aux_d=(),
    aux_q=(),
    aux_theta=(),
) -> ControllerSet:
    """Build {K^d, K1^q, K2^q} and cascade the auxiliary compensators.

    PR and lead terms go on K^d and K1^q; only a notch may go on K2^q.
    """
    if any(a.kind != "notch" for a in aux_theta):
        raise DesignError("only a notch may be cascaded with K2^q")
    kd0 = design_kd(line, design.alpha_d, design.omega_d)
    k1q0 = design_k1q(line, design.alpha_q, design.omega_q, design.omega_theta, design.bandpass_ratio)
    k2q0 = design_k2q(line, design.alpha_theta, design.omega_theta)
    w0 = line.omega0
    return ControllerSet(
        kd=kd0 * _aux_product(aux_d, w0),
        k1q=k1q0 * _aux_product(aux_q, w0),
        k2q=k2q0 * _aux_product(aux_theta, w0),
        aux_d=tuple(aux_d),
        aux_q=tuple(aux_q),
        aux_theta=tuple(aux_theta),
        base=(kd0, k1q0, k2q0),
    )


def sync_conditions(cs: ControllerSet) -> dict:
    """Origin pole/zero counts behind zero tracking error and synchronization."""
    kd_poles = cs.kd.origin_poles()
    kq_poles = cs.kq.origin_poles()
    ratio_zeros = (cs.k1q / cs.k2q).origin_zeros() if not cs.k1q.is_zero else math.inf
    return {
        "kd_origin_poles": kd_poles,
        "kq_origin_poles": kq_poles,
        "k1q_over_k2q_origin_zeros": ratio_zeros,
        "tracking": kd_poles >= 1 and kq_poles >= 2,
        "synchronization": ratio_zeros >= 2,
    }


# cascade realization ----------------------------------------------------------

def inner_loop(inv: InverterParams, tau_i: float = DEFAULT_TAU_I) -> tuple[RatFun, RatFun, RatFun]:
    """Current compensator K_i and the resulting inner loop T_i, S_i."""
    if not tau_i > 0:
        raise DesignError("tau_i must be positive")
    ki = RatFun.make(1.0 / tau_i, [Polynomial((inv.Ri, inv.Li))], [Polynomial.s()])
    corner = Polynomial((1.0 / tau_i, 1.0))
    ti = RatFun.make(1.0 / tau_i, [], [corner])
    si = RatFun.make(1.0, [Polynomial.s()], [corner])
    return ki, ti, si


@dataclass(frozen=True)
class CascadeRealization:
    """Inner current, outer voltage and series compensators per axis.

    ``kc_d``/``kc_q`` include any PR or lead compensators of the set.
    """

    ki: RatFun
    kv_d: RatFun
    kv_q: RatFun
    kc_d: RatFun
    kc_q: RatFun
    tau_i: float
    omega_lc2: float

    def equivalent(self, inv: InverterParams, axis: str, exact: bool = True) -> RatFun:
        """Loop controller seen by the line, G_v T_i S_v K_c (T_i -> 1 when not exact)."""
        gv = inv.gv()
        ti = inner_loop(inv, self.tau_i)[1] if exact else RatFun.const(1.0)
        kv = self.kv_d if axis == "d" else self.kv_q
        kc = self.kc_d if axis == "d" else self.kc_q
        sv = 1 / (1 + gv * ti * kv)
        return gv * ti * sv * kc


def realize_cascade(
    cs: ControllerSet,
    inv: InverterParams,
    line: LineParams,
    design: DesignParams,
    tau_i: float = DEFAULT_TAU_I,
) -> CascadeRealization:
    """Map K^d and K1^q onto {K_c, K_v} around the inner current loop."""
    for name, k in (("kd", cs.kd), ("k1q", cs.k1q)):
        if k.relative_degree < 1:
            raise DesignError(f"{name}: not realizable through cascade")
    ki, _, _ = inner_loop(inv, tau_i)
    lam = line.lam
    ad, wd = design.alpha_d, design.omega_d
    aq, wq = design.alpha_q, design.omega_q
    wb = design.omega_bp
    wlc2 = 1.0 / (line.L * inv.Ci)
    kc_d = RatFun.const(wd * math.sqrt(wd**2 + lam**2) / (ad * wlc2))
    kv_d = RatFun.make(inv.Ci * wd * (1.0 / ad - ad), [Polynomial.s()], [Polynomial((wd * ad, 1.0))])
    kc_q = RatFun.const(wq**2 / (aq * wlc2)) * _lead_factor(aq, wq)
    # C_i (lambda + w_bp) + C_i lambda w_bp / s
    kv_q = RatFun.make(inv.Ci, [Polynomial((lam * wb, lam + wb))], [Polynomial.s()])
    kc_d = kc_d * _aux_product(cs.aux_d, line.omega0)
    kc_q = kc_q * _aux_product(cs.aux_q, line.omega0)
    return CascadeRealization(ki=ki, kv_d=kv_d, kv_q=kv_q, kc_d=kc_d, kc_q=kc_q, tau_i=tau_i, omega_lc2=wlc2)


def delay_phase(fs: float, omega):
    """Phase lag (rad) of the 1.5-sample PWM plus computation delay."""
    if not fs > 0:
        raise DesignError("fs must be positive")
    return -1.5 * np.asarray(omega, dtype=float) / fs


__all__ = [
    "DesignParams",
    "AuxCompensator",
    "ControllerSet",
    "CascadeRealization",
    "design_kd",
    "design_k1q",
    "design_k2q",
    "theta_open_loop",
    "pr_compensator",
    "lead",
    "lead_max_phase",
    "notch",
    "predicted_pm",
    "design_set",
    "sync_conditions",
    "inner_loop",
    "realize_cascade",
    "delay_phase",
    "gl_siso",
]
