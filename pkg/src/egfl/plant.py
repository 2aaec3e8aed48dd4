"""
Line and inverter plant objects in the dq frame, and the impedance
uncertainty machinery used by the robust-stability test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ratcore import FreqGrid, Polynomial, RatFun, TF2, default_grid, sigma_max_batch

OMEGA_60HZ = 2.0 * math.pi * 60.0


class PlantError(ValueError):
    pass


@dataclass(frozen=True)
class LineParams:
    """RL line between the filter capacitor and the grid.

    Parameters
    ----------
    L : float
        Line inductance (H).
    R : float
        Line resistance (Ohm).
    omega0 : float
        Nominal grid angular frequency (rad/s).
    """

    L: float
    R: float
    omega0: float = OMEGA_60HZ

    def __post_init__(self):
        if not (self.L > 0):
            raise PlantError("line inductance must be positive")
        if not (self.R >= 0):
            raise PlantError("line resistance must be non-negative")
        if not (self.omega0 > 0):
            raise PlantError("omega0 must be positive")

    @property
    def lam(self) -> float:
        return self.R / self.L

    @classmethod
    def from_lambda(cls, L: float, lam: float, omega0: float = OMEGA_60HZ) -> "LineParams":
        return cls(L=L, R=lam * L, omega0=omega0)

    def pole_poly(self) -> Polynomial:
        """s^2 + 2 lambda s + lambda^2 + omega0^2 (one shared object per line)."""
        return _pole_poly(self.lam, self.omega0)


def _pole_poly(lam: float, w0: float) -> Polynomial:
    return Polynomial((lam * lam + w0 * w0, 2.0 * lam, 1.0))


@dataclass(frozen=True)
class InverterParams:
    """Averaged inverter with output LC filter (Li, Ri, Ci).

    ``v0`` is the nominal grid phase-voltage amplitude, which equals the
    d-axis voltage in the amplitude-invariant dq frame.
    """

    Li: float
    Ci: float
    Ri: float
    vdc: float
    fs: float
    fsw: float
    v0: float
    phases: str = "three"

    def __post_init__(self):
        for name in ("Li", "Ci", "Ri", "vdc", "fs", "fsw", "v0"):
            if not (getattr(self, name) > 0):
                raise PlantError(f"{name} must be positive")
        if self.phases not in ("single", "three"):
            raise PlantError("phases must be 'single' or 'three'")
        if self.fs != self.fsw:
            raise PlantError("sampling and switching frequency must coincide")

    @property
    def Ts(self) -> float:
        return 1.0 / self.fs

    def gi(self) -> RatFun:
        """Inductor dynamics 1/(Li s + Ri)."""
        return RatFun.make(1.0, [], [Polynomial((self.Ri, self.Li))])

    def gv(self) -> RatFun:
        """Capacitor dynamics 1/(Ci s)."""
        return RatFun.make(1.0 / self.Ci, [], [Polynomial.s()])


@dataclass(frozen=True)
class UncertaintyBox:
    """Interval uncertainty of the line inductance and resistance."""

    Lmin: float
    Lmax: float
    Rmin: float
    Rmax: float

    def __post_init__(self):
        if not (0 < self.Lmin <= self.Lmax):
            raise PlantError("need 0 < Lmin <= Lmax")
        if not (0 <= self.Rmin <= self.Rmax):
            raise PlantError("need 0 <= Rmin <= Rmax")

    @property
    def lambda_min(self) -> float:
        return self.Rmin / self.Lmax

    @property
    def lambda_max(self) -> float:
        return self.Rmax / self.Lmin

    def corners(self) -> list[tuple[float, float]]:
        """The four (L, R) combinations of interval end points."""
        return [(L, R) for L in (self.Lmin, self.Lmax) for R in (self.Rmin, self.Rmax)]

    @classmethod
    def point(cls, L: float, R: float) -> "UncertaintyBox":
        return cls(L, L, R, R)


@dataclass(frozen=True)
class NominalPlant:
    L0: float
    lambda0: float
    omega0: float
    gl0: RatFun

    @property
    def line(self) -> LineParams:
        return LineParams.from_lambda(self.L0, self.lambda0, self.omega0)


def gl_mimo(p: LineParams) -> TF2:
    """Line admittance G_L(s) in the dq frame."""
    den = [p.pole_poly()]
    diag = RatFun.make(1.0 / p.L, [Polynomial((p.lam, 1.0))], den)
    off = RatFun.make(p.omega0 / p.L, [], den)
    return TF2(((diag, off), (-off, diag)))


def gl_siso(p: LineParams) -> RatFun:
    """Scalar part of the line admittance, ((s + lambda)/L)/(s^2 + 2 lambda s + lambda^2 + omega0^2)."""
    return RatFun.make(1.0 / p.L, [Polynomial((p.lam, 1.0))], [p.pole_poly()])


def gamma(p: LineParams) -> TF2:
    """Coupling matrix Gamma = G~_L * inv(G_L)."""
    den = [p.pole_poly()]
    w0 = p.omega0
    diag = 1 + RatFun.make(-w0 * w0, [], den)
    off = RatFun.make(-w0, [Polynomial((p.lam, 1.0))], den)
    return TF2(((diag, off), (-off, diag)))


def gamma_minus_identity(p: LineParams, omega) -> np.ndarray:
    """Evaluate Gamma(j omega) - I directly (shape (..., 2, 2))."""
    w = np.asarray(omega, dtype=float)
    s = 1j * w
    d = p.pole_poly()(s)
    a = -p.omega0**2 / d
    b = -p.omega0 * (s + p.lam) / d
    out = np.empty(w.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = a
    out[..., 0, 1] = b
    out[..., 1, 0] = -b
    out[..., 1, 1] = a
    return out


def coupling_gap(p: LineParams, omega):
    """||Gamma(j omega) - I||_2 in closed form (vectorised over omega)."""
    w = np.asarray(omega, dtype=float)
    lam, w0 = p.lam, p.omega0
    num = w0 * np.sqrt((w + w0) ** 2 + lam**2)
    den = np.abs((w + 1j * lam) ** 2 - w0**2)
    with np.errstate(divide="ignore"):
        out = num / den
    return out if out.ndim else float(out)


def coupling_gap_svd(p: LineParams, omega) -> np.ndarray:
    """Cross-check of :func:`coupling_gap` through the evaluated matrix."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    return sigma_max_batch(gamma_minus_identity(p, w))


def decoupling_bound(p: LineParams, omega):
    """Admissible ceiling on ||S~(j omega)||_2 keeping the coupling measure below one."""
    w = np.asarray(omega, dtype=float)
    lam, w0 = p.lam, p.omega0
    num = np.abs((w + 1j * lam) ** 2 - w0**2)
    den = w0 * np.sqrt((w + w0) ** 2 + lam**2)
    out = num / den
    return out if out.ndim else float(out)


def nominal_plant(box: UncertaintyBox, omega0: float = OMEGA_60HZ) -> NominalPlant:
    lmin, lmax = box.Lmin, box.Lmax
    # both are weighted means of the interval ends; clamp away rounding
    L0 = min(max(2.0 * lmin * lmax / (lmin + lmax), lmin), lmax)
    lam0 = (box.lambda_max * lmax + box.lambda_min * lmin) / (lmin + lmax)
    lam0 = min(max(lam0, box.lambda_min), box.lambda_max)
    line = LineParams.from_lambda(L0, lam0, omega0)
    return NominalPlant(L0=L0, lambda0=lam0, omega0=omega0, gl0=gl_siso(line))


def _w1_cover(box: UncertaintyBox, nom: NominalPlant, w: np.ndarray) -> np.ndarray:
    s = 1j * w
    ref = (s + nom.lambda0) / nom.L0
    worst = np.zeros_like(w)
    for L in (box.Lmin, box.Lmax):
        for lam in (box.lambda_min, box.lambda_max):
            worst = np.maximum(worst, np.abs(((s + lam) / L - ref) / ref))
    return worst


def _w2_cover(box: UncertaintyBox, nom: NominalPlant, w: np.ndarray) -> np.ndarray:
    s = 1j * w
    l0, w0 = nom.lambda0, nom.omega0
    den = 2 * l0 * s + l0**2 + w0**2 - w**2
    worst = np.zeros_like(w)
    for lam in (box.lambda_min, box.lambda_max):
        worst = np.maximum(worst, np.abs((2 * lam * s + lam**2 - (2 * l0 * s + l0**2)) / den))
    return worst


def rs_weights(
    box: UncertaintyBox,
    nom: NominalPlant,
    omega_bw: float,
    grid: FreqGrid | None = None,
    rtol: float = 1e-9,
    w2_form: str = "auto",
) -> tuple[RatFun, RatFun, RatFun]:
    """Uncertainty weights (W1 on the zero, W2 on the poles, W3 ~ nominal T~).

    The frequency-wise covering of the box corners is verified on ``grid``.

    ``w2_form`` selects the pole weight: ``"paper"`` keeps the lambda_max
    form, ``"cover"`` uses the worst-side form
    ``2 d (s + (lambda_max + lambda0)/2) / den`` with
    ``d = max(lambda_max - lambda0, lambda0 - lambda_min)``, and ``"auto"``
    falls back to ``"cover"`` only when the first form fails the check.
    """
    if not omega_bw > 0:
        raise PlantError("omega_bw must be positive")
    L0, l0, w0 = nom.L0, nom.lambda0, nom.omega0
    lmin, lmax = box.lambda_min, box.lambda_max
    w1 = RatFun.make(1.0, [Polynomial((l0 / L0 - lmin / box.Lmax, 1.0 / L0 - 1.0 / box.Lmax))],
                     [Polynomial((l0 / L0, 1.0 / L0))])
    w3 = RatFun.make(omega_bw, [], [Polynomial((omega_bw, 1.0))])
    grid = grid or default_grid()
    w = grid.omegas
    c1 = _w1_cover(box, nom, w)
    c2 = _w2_cover(box, nom, w)

    # the lambda_max form only covers the box when lambda0 sits closer to
    # lambda_min; otherwise widen to the worst side of the interval
    w2 = RatFun.make(1.0, [Polynomial((lmax**2 - l0**2, 2.0 * (lmax - l0)))], [_pole_poly(l0, w0)])
    if w2_form == "auto" and np.any(np.abs(w2.freqresp(w)) * (1 + rtol) < c2):
        w2_form = "cover"
    if w2_form == "cover":
        spread = max(lmax - l0, l0 - lmin)
        w2 = RatFun.make(2.0 * spread, [Polynomial(((lmax + l0) / 2.0, 1.0))], [_pole_poly(l0, w0)])

    m1 = np.abs(w1.freqresp(w))
    m2 = np.abs(w2.freqresp(w))
    tol1 = rtol * np.maximum(c1, 1e-12)
    tol2 = rtol * np.maximum(c2, 1e-12)
    if np.any(m1 + tol1 < c1) or np.any(m2 + tol2 < c2):
        raise PlantError("weights do not cover box")
    return w1, w2, w3


__all__ = [
    "LineParams",
    "InverterParams",
    "UncertaintyBox",
    "NominalPlant",
    "gl_mimo",
    "gl_siso",
    "gamma",
    "gamma_minus_identity",
    "coupling_gap",
    "coupling_gap_svd",
    "decoupling_bound",
    "nominal_plant",
    "rs_weights",
    "PlantError",
]
