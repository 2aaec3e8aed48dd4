"""
Rational functions of the Laplace variable.

Polynomials are stored with ascending coefficients.  A :class:`RatFun` keeps
its numerator and denominator as a gain times a list of monic factors so that
factors created by construction (plant poles cancelled by a controller, the
common denominator of a sensitivity and its complement) cancel exactly,
coefficient for coefficient.  Nothing is ever cancelled numerically.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: relative margin used to call a pole strictly stable
TAU_STAB = 1e-9


class RatCoreError(ValueError):
    """Raised on undefined rational-function operations."""


def _trim(coeffs: Iterable[float]) -> tuple[float, ...]:
    c = [float(x) for x in coeffs]
    while c and c[-1] == 0.0:
        c.pop()
    return tuple(c)


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial in ``s`` with ascending coefficients.

    The zero polynomial is the empty coefficient tuple (degree -1).
    """

    coeffs: tuple[float, ...]

    def __init__(self, coeffs: Iterable[float] = ()):
        object.__setattr__(self, "coeffs", _trim(coeffs))

    # constructors -------------------------------------------------------
    @classmethod
    def s(cls) -> "Polynomial":
        return cls((0.0, 1.0))

    @classmethod
    def const(cls, c: float) -> "Polynomial":
        return cls((c,))

    @classmethod
    def from_roots(cls, roots: Sequence[complex]) -> "Polynomial":
        """Monic polynomial with the given roots (conjugate pairs expected)."""
        c = np.poly(np.asarray(roots, dtype=complex))[::-1]
        if np.max(np.abs(c.imag), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(c))):
            raise RatCoreError("roots do not form conjugate pairs")
        return cls(c.real)

    # queries -------------------------------------------------------------
    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def lead(self) -> float:
        return self.coeffs[-1] if self.coeffs else 0.0

    def origin_multiplicity(self) -> int:
        """Number of exactly-zero low-order coefficients (roots at s = 0)."""
        n = 0
        for c in self.coeffs:
            if c != 0.0:
                break
            n += 1
        return n

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs)) if self.coeffs else 0.0

    def __call__(self, s):
        """Horner evaluation; ``s`` may be a scalar or an array."""
        acc = np.zeros_like(np.asarray(s, dtype=complex))
        for c in reversed(self.coeffs):
            acc = acc * s + c
        return acc if np.ndim(acc) else complex(acc)

    # arithmetic ------------------------------------------------------------
    def __add__(self, other: "Polynomial") -> "Polynomial":
        a, b = self.coeffs, other.coeffs
        n = max(len(a), len(b))
        return Polynomial(
            (a[i] if i < len(a) else 0.0) + (b[i] if i < len(b) else 0.0) for i in range(n)
        )

    def __neg__(self) -> "Polynomial":
        return Polynomial(-c for c in self.coeffs)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            return Polynomial(c * float(other) for c in self.coeffs)
        if self.is_zero or other.is_zero:
            return Polynomial()
        out = [0.0] * (len(self.coeffs) + len(other.coeffs) - 1)
        for i, a in enumerate(self.coeffs):
            if a == 0.0:
                continue
            for j, b in enumerate(other.coeffs):
                out[i + j] += a * b
        return Polynomial(out)

    __rmul__ = __mul__

    def monic(self) -> tuple[float, "Polynomial"]:
        """Split into (leading coefficient, monic polynomial)."""
        if self.is_zero:
            raise RatCoreError("zero polynomial has no monic form")
        g = self.lead
        return g, Polynomial(c / g for c in self.coeffs)

    def derivative(self) -> "Polynomial":
        return Polynomial(i * c for i, c in enumerate(self.coeffs) if i > 0)

    def roots(self) -> np.ndarray:
        return poly_roots(self)


def poly_roots(p: Polynomial) -> np.ndarray:
    """Roots from companion-matrix eigenvalues, each polished by one Newton step."""
    if p.is_zero:
        raise RatCoreError("undefined roots")
    if p.degree < 1:
        return np.zeros(0, dtype=complex)
    k = p.origin_multiplicity()
    core = Polynomial(p.coeffs[k:])
    roots = [0j] * k
    if core.degree >= 1:
        c = np.asarray(core.coeffs)
        n = core.degree
        comp = np.zeros((n, n))
        comp[0, :] = -c[-2::-1] / c[-1]
        comp[1:, :-1] = np.eye(n - 1)
        est = np.linalg.eigvals(comp)
        dp = core.derivative()
        for r in est:
            d = dp(r)
            if d != 0:
                step = core(r) / d
                cand = r - step
                # keep the polish only when it actually reduces the residual
                if abs(core(cand)) <= abs(core(r)):
                    r = cand
            roots.append(complex(r))
    return np.array(roots, dtype=complex)


_S = Polynomial.s()


def _key(p: Polynomial) -> tuple[float, ...]:
    return p.coeffs


def _product(factors: Sequence[Polynomial]) -> Polynomial:
    out = Polynomial.const(1.0)
    for f in factors:
        out = out * f
    return out


def _split_common(a: Sequence[Polynomial], b: Sequence[Polynomial]):
    """Multiset intersection of two factor lists plus the two remainders."""
    ca, cb = Counter(_key(f) for f in a), Counter(_key(f) for f in b)
    common = ca & cb
    lookup = {_key(f): f for f in list(a) + list(b)}
    com = [lookup[k] for k, n in sorted(common.items()) for _ in range(n)]
    ra = [lookup[k] for k, n in sorted((ca - common).items()) for _ in range(n)]
    rb = [lookup[k] for k, n in sorted((cb - common).items()) for _ in range(n)]
    return com, ra, rb


def _canonical_factors(factors: Iterable[Polynomial]) -> tuple[float, list[Polynomial]]:
    gain = 1.0
    out = []
    for f in factors:
        if f.is_zero:
            raise RatCoreError("zero factor")
        if f.degree == 0:
            gain *= f.coeffs[0]
            continue
        g, m = f.monic()
        gain *= g
        # pull origin roots out as separate ``s`` factors so counting is exact
        k = m.origin_multiplicity()
        out.extend([_S] * k)
        if k:
            m = Polynomial(m.coeffs[k:])
        if m.degree >= 1:
            out.append(m)
    return gain, sorted(out, key=_key)


@dataclass(frozen=True)
class RatFun:
    """Real rational function ``gain * prod(num_factors) / prod(den_factors)``.

    All factors are monic, so the expanded denominator is monic.  Use the
    :meth:`make` or :meth:`from_coeffs` constructors.
    """

    gain: float
    num_factors: tuple[Polynomial, ...] = field(default=())
    den_factors: tuple[Polynomial, ...] = field(default=())

    # constructors ------------------------------------------------------------
    @classmethod
    def make(cls, gain: float, num: Iterable[Polynomial] = (), den: Iterable[Polynomial] = ()) -> "RatFun":
        num, den = list(num), list(den)
        if any(f.is_zero for f in den):
            raise RatCoreError("zero denominator")
        if gain == 0.0 or any(f.is_zero for f in num):
            return cls(0.0)
        gn, nf = _canonical_factors(num)
        gd, df = _canonical_factors(den)
        g = float(gain) * gn / gd
        if g == 0.0:
            return cls(0.0)
        com, rn, rd = _split_common(nf, df)
        return cls(g, tuple(rn), tuple(rd))

    @classmethod
    def from_coeffs(cls, num: Sequence[float], den: Sequence[float]) -> "RatFun":
        """Ascending-coefficient numerator and denominator."""
        d = Polynomial(den)
        if d.is_zero:
            raise RatCoreError("zero denominator")
        n = Polynomial(num)
        if n.is_zero:
            return cls(0.0)
        return cls.make(1.0, [n], [d])

    @classmethod
    def const(cls, c: float) -> "RatFun":
        return cls(float(c))

    @classmethod
    def s(cls) -> "RatFun":
        return cls(1.0, (_S,), ())

    @classmethod
    def integrator(cls, order: int = 1) -> "RatFun":
        return cls(1.0, (), (_S,) * order)

    # expanded views ------------------------------------------------------------
    @property
    def num(self) -> Polynomial:
        if self.gain == 0.0:
            return Polynomial()
        return _product(self.num_factors) * self.gain

    @property
    def den(self) -> Polynomial:
        return _product(self.den_factors)

    @property
    def is_zero(self) -> bool:
        return self.gain == 0.0

    @property
    def relative_degree(self) -> int:
        if self.is_zero:
            raise RatCoreError("relative degree of zero")
        return sum(f.degree for f in self.den_factors) - sum(f.degree for f in self.num_factors)

    def origin_poles(self) -> int:
        """Net poles at s = 0 (negative means zeros), from exact coefficients."""
        if self.is_zero:
            return 0
        return self.den.origin_multiplicity() - self.num.origin_multiplicity()

    def origin_zeros(self) -> int:
        return -self.origin_poles()

    def poles(self) -> np.ndarray:
        rs = [poly_roots(f) for f in self.den_factors]
        return np.concatenate(rs) if rs else np.zeros(0, dtype=complex)

    def zeros(self) -> np.ndarray:
        rs = [poly_roots(f) for f in self.num_factors]
        return np.concatenate(rs) if rs else np.zeros(0, dtype=complex)

    def dcgain(self) -> float:
        if self.origin_poles() > 0:
            return float("inf")
        if self.origin_poles() < 0:
            return 0.0
        return float(self(0.0).real)

    # evaluation ----------------------------------------------------------------
    def __call__(self, s):
        """Value at complex ``s`` (scalar or array), factor by factor with Horner."""
        s_arr = np.asarray(s, dtype=complex)
        num = np.full(s_arr.shape, self.gain, dtype=complex)
        for f in self.num_factors:
            num = num * f(s_arr)
        den = np.ones(s_arr.shape, dtype=complex)
        for f in self.den_factors:
            den = den * f(s_arr)
        if np.any(den == 0):
            raise RatCoreError("on-axis pole")
        out = num / den
        return out if out.ndim else complex(out)

    def freqresp(self, omega) -> np.ndarray:
        return np.asarray(self(1j * np.asarray(omega, dtype=float)))

    # arithmetic ----------------------------------------------------------------
    def _coerce(self, other) -> "RatFun":
        if isinstance(other, RatFun):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return RatFun.const(float(other))
        return NotImplemented

    def __mul__(self, other) -> "RatFun":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        if self.is_zero or other.is_zero:
            return RatFun(0.0)
        return RatFun.make(
            self.gain * other.gain,
            self.num_factors + other.num_factors,
            self.den_factors + other.den_factors,
        )

    __rmul__ = __mul__

    def inv(self) -> "RatFun":
        if self.is_zero:
            raise RatCoreError("division by zero rational")
        return RatFun(1.0 / self.gain, self.den_factors, self.num_factors)

    def __truediv__(self, other) -> "RatFun":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self * other.inv()

    def __rtruediv__(self, other) -> "RatFun":
        return self._coerce(other) * self.inv()

    def __neg__(self) -> "RatFun":
        return RatFun(-self.gain, self.num_factors, self.den_factors)

    def __add__(self, other) -> "RatFun":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        # shared numerator and denominator factors stay factored
        cn, an, bn = _split_common(self.num_factors, other.num_factors)
        cd, ad, bd = _split_common(self.den_factors, other.den_factors)
        top = _product(an + bd) * self.gain + _product(bn + ad) * other.gain
        if top.is_zero:
            return RatFun(0.0)
        return RatFun.make(1.0, cn + [top], cd + ad + bd)

    __radd__ = __add__

    def __sub__(self, other) -> "RatFun":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "RatFun":
        return self._coerce(other) + (-self)

    def coeff_equal(self, other: "RatFun", rtol: float = 0.0) -> bool:
        """Coefficient-wise equality of the expanded, normalized forms."""
        a_n, a_d = self.num.coeffs, self.den.coeffs
        b_n, b_d = other.num.coeffs, other.den.coeffs
        if len(a_n) != len(b_n) or len(a_d) != len(b_d):
            return False
        a = np.array(a_n + a_d)
        b = np.array(b_n + b_d)
        scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-300)
        return bool(np.all(np.abs(a - b) <= rtol * scale))

    def __repr__(self) -> str:
        return f"RatFun(num={self.num.coeffs}, den={self.den.coeffs})"


def ratfun_arith(a: RatFun, b: RatFun, op: str) -> RatFun:
    """Functional form of ``a <op> b`` for op in {add, sub, mul, div}."""
    ops = {"add": a.__add__, "sub": a.__sub__, "mul": a.__mul__, "div": a.__truediv__}
    if op not in ops:
        raise ValueError(f"unknown op {op!r}")
    return ops[op](b)


def freq_eval(r: RatFun, omega: float) -> complex:
    return r(1j * omega)


@dataclass(frozen=True)
class PoleReport:
    stable: bool
    poles: np.ndarray

    def __bool__(self) -> bool:
        return self.stable

    @property
    def max_real(self) -> float:
        return float(np.max(self.poles.real)) if self.poles.size else float("-inf")


def is_hurwitz(r: RatFun, tau: float = TAU_STAB) -> PoleReport:
    """Strict open-left-half-plane test; marginal poles count as unstable."""
    p = r.poles()
    ok = bool(np.all(p.real < -tau * np.maximum(1.0, np.abs(p)))) if p.size else True
    return PoleReport(ok, p)


# 2x2 complex helpers ------------------------------------------------------------

def sigma_max(m: np.ndarray) -> float:
    """Largest singular value of a 2x2 complex matrix in closed form."""
    return float(sigma_max_batch(np.asarray(m, dtype=complex)[None])[0])


def sigma_max_batch(m: np.ndarray) -> np.ndarray:
    """Largest singular value over a stack of 2x2 matrices, shape (n, 2, 2).

    Uses the larger eigenvalue of the Hermitian product M^H M written as a
    sum of non-negative terms, which stays accurate when both singular
    values coincide (the scaled-rotation case).
    """
    m = np.asarray(m, dtype=complex)
    a, b, c, d = m[:, 0, 0], m[:, 0, 1], m[:, 1, 0], m[:, 1, 1]
    p = np.abs(a) ** 2 + np.abs(c) ** 2
    s = np.abs(b) ** 2 + np.abs(d) ** 2
    r = np.conj(a) * b + np.conj(c) * d
    lam = 0.5 * (p + s) + np.hypot(0.5 * (p - s), np.abs(r))
    return np.sqrt(lam)


def inv2(m: np.ndarray) -> np.ndarray:
    """Inverse of a 2x2 (or stack of 2x2) complex matrix by the adjugate."""
    m = np.asarray(m, dtype=complex)
    a, b, c, d = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    det = a * d - b * c
    out = np.empty_like(m)
    out[..., 0, 0] = d / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -c / det
    out[..., 1, 1] = a / det
    return out


@dataclass(frozen=True)
class TF2:
    """2x2 matrix of rational functions."""

    entries: tuple[tuple[RatFun, RatFun], tuple[RatFun, RatFun]]

    def __call__(self, s) -> np.ndarray:
        s_arr = np.asarray(s, dtype=complex)
        out = np.empty(s_arr.shape + (2, 2), dtype=complex)
        for i in range(2):
            for j in range(2):
                out[..., i, j] = self.entries[i][j](s_arr)
        return out

    def freqresp(self, omega) -> np.ndarray:
        return self(1j * np.asarray(omega, dtype=float))

    def __getitem__(self, ij: tuple[int, int]) -> RatFun:
        return self.entries[ij[0]][ij[1]]


@dataclass(frozen=True)
class FreqGrid:
    """Strictly increasing positive angular frequencies (rad/s)."""

    omegas: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w <= 0) or np.any(np.diff(w) <= 0):
            raise ValueError("frequency grid must be strictly increasing and positive")
        w.setflags(write=False)
        object.__setattr__(self, "omegas", w)

    @classmethod
    def logspace(cls, wmin: float = 1e-1, wmax: float = 1e6, n: int = 2000) -> "FreqGrid":
        return cls(np.logspace(np.log10(wmin), np.log10(wmax), n))

    def __len__(self) -> int:
        return self.omegas.size

    def __iter__(self):
        return iter(self.omegas)


def default_grid(n: int = 2000) -> FreqGrid:
    return FreqGrid.logspace(1e-1, 1e6, n)
