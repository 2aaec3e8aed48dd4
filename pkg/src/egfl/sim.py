"""
Averaged time-domain simulation of the filter, line and discrete E-GFL
controller, scenario-driven grid models and the metrology used on traces.

The plant is integrated in the controller's rotating frame with classical
RK4 and a fixed number of substeps per sampling period.  Grid voltages are
evaluated in abc at every RK4 stage time and transformed with the frame
angle at that instant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import signal

from .design import (
    CascadeRealization,
    ControllerSet,
    DesignParams,
    design_set,
    realize_cascade,
)
from .plant import InverterParams, LineParams
from .ratcore import RatFun, poly_roots

TWO_PI = 2.0 * math.pi
SHIFT = np.array([0.0, 2.0 * math.pi / 3.0, -2.0 * math.pi / 3.0])
DIVERGENCE_FACTOR = 1e6
TRACE_COLUMNS = (
    "t", "iga_d", "ig_q", "vc_d", "vc_q", "iL_d", "iL_q", "theta", "dw", "u_theta", "vq",
    "e_d", "e_q", "vg_a", "vg_b", "vg_c", "i0_d", "i0_q",
)
TRACE_UNITS = (
    "s", "A", "A", "V", "V", "A", "A", "rad", "rad/s", "V", "V",
    "A", "A", "V", "V", "V", "A", "A",
)


class SimError(RuntimeError):
    pass


class DivergenceError(SimError):
    """The state left its plausible range; the partial trace is attached."""

    def __init__(self, msg: str, trace: "SimTrace | None" = None):
        super().__init__(msg)
        self.trace = trace


# frame transforms -----------------------------------------------------------------

def abc_to_dq(abc, theta):
    """Amplitude-invariant Park transform.

    Parameters
    ----------
    abc : array_like, shape (..., 3)
        Phase quantities.
    theta : array_like
        Frame angle (rad), broadcast against the leading axes of ``abc``.

    Returns
    -------
    (d, q) : tuple of ndarray
    """
    x = np.asarray(abc, dtype=float)
    th = np.asarray(theta, dtype=float)[..., None] - SHIFT
    d = (2.0 / 3.0) * np.sum(x * np.cos(th), axis=-1)
    q = -(2.0 / 3.0) * np.sum(x * np.sin(th), axis=-1)
    return d, q


def dq_to_abc(d, q, theta) -> np.ndarray:
    """Inverse of :func:`abc_to_dq` (zero-sequence free), shape (..., 3)."""
    th = np.asarray(theta, dtype=float)[..., None] - SHIFT
    return np.asarray(d, dtype=float)[..., None] * np.cos(th) - np.asarray(q, dtype=float)[..., None] * np.sin(th)


def power_to_current(P0: float, Q0: float, vc_dq, phases: str = "three", v_floor: float = 0.0):
    """Current reference from power set-points and the capacitor voltage.

    Returns ``None`` when ``||vc|| < v_floor`` so that the caller can hold
    its previous reference.
    """
    vd, vq = float(vc_dq[0]), float(vc_dq[1])
    n2 = vd * vd + vq * vq
    if n2 < v_floor * v_floor or n2 == 0.0:
        return None
    phi = 2.0 / 3.0 if phases == "three" else 1.0
    k = phi / n2
    return k * (vd * P0 + vq * Q0), k * (vq * P0 - vd * Q0)


# grid model --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridEvent:
    """One scheduled grid change.

    ``kind`` selects the meaning of the payload:

    * ``freq_step``: ``value`` is the frequency change (rad/s)
    * ``phase_jump``: ``value`` is the angle step (rad)
    * ``sag``: ``value`` is the remaining fraction of the nominal magnitude
    * ``harmonic``: ``order``, ``value`` (fraction of nominal), ``phase``, ``sequence``
    * ``asymmetry``: ``a``, ``b``, ``phase`` (negative-sequence angle), ``vg0`` (V)
      and ``phase0`` (zero-sequence angle)

    Sag, harmonic and asymmetry events end at ``t_end`` when it is given.
    """

    kind: str
    t_start: float = 0.0
    value: float = 0.0
    t_end: float | None = None
    order: int = 1
    phase: float = 0.0
    sequence: str = "positive"
    a: float = 1.0
    b: float = 0.0
    vg0: float = 0.0
    phase0: float = 0.0

    def __post_init__(self):
        kinds = ("freq_step", "phase_jump", "sag", "harmonic", "asymmetry")
        if self.kind not in kinds:
            raise SimError(f"unknown grid event {self.kind!r}")
        if self.kind == "sag" and not (0 < self.value <= 1):
            raise SimError("sag fraction must lie in (0, 1]")
        if self.kind == "harmonic":
            if self.value < 0 or self.order < 1 or int(self.order) != self.order:
                raise SimError("harmonic needs an integer order >= 1 and a non-negative fraction")
            if self.sequence not in ("positive", "negative", "natural"):
                raise SimError("harmonic sequence must be positive, negative or natural")
        if self.kind == "asymmetry" and (self.a < 0 or self.b < 0):
            raise SimError("sequence magnitudes a, b must be non-negative")
        if self.t_end is not None and self.t_end <= self.t_start:
            raise SimError("event must end after it starts")

    def active(self, t: np.ndarray) -> np.ndarray:
        on = t >= self.t_start
        if self.t_end is not None:
            on &= t < self.t_end
        return on


@dataclass(frozen=True)
class GridModel:
    """Stiff voltage source behind the line, described by an event timeline."""

    v_mag: float
    omega0: float = TWO_PI * 60.0
    theta0: float = 0.0
    events: tuple[GridEvent, ...] = ()

    def __post_init__(self):
        if not self.v_mag > 0:
            raise SimError("grid magnitude must be positive")
        object.__setattr__(self, "events", tuple(self.events))

    def angle(self, t) -> np.ndarray:
        """Positive-sequence grid angle including frequency steps and jumps."""
        t = np.asarray(t, dtype=float)
        th = self.theta0 + self.omega0 * t
        for ev in self.events:
            if ev.kind == "freq_step":
                th = th + ev.value * np.maximum(t - ev.t_start, 0.0)
            elif ev.kind == "phase_jump":
                th = th + ev.value * (t >= ev.t_start)
        return th

    def frequency(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        w = np.full_like(t, self.omega0)
        for ev in self.events:
            if ev.kind == "freq_step":
                w = w + ev.value * (t >= ev.t_start)
        return w


def grid_voltage(t, grid: GridModel) -> np.ndarray:
    """Phase voltages (V) at times ``t``; shape (len(t), 3)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    th = grid.angle(t)[:, None]
    mag = np.full(t.shape, grid.v_mag)
    for ev in grid.events:
        if ev.kind == "sag":
            mag = np.where(ev.active(t), mag * ev.value, mag)
    a = np.ones_like(t)
    b = np.zeros_like(t)
    psi = np.zeros_like(t)
    v0 = np.zeros_like(t)
    psi0 = np.zeros_like(t)
    for ev in grid.events:
        if ev.kind == "asymmetry":
            on = ev.active(t)
            a = np.where(on, ev.a, a)
            b = np.where(on, ev.b, b)
            psi = np.where(on, ev.phase, psi)
            v0 = np.where(on, ev.vg0, v0)
            psi0 = np.where(on, ev.phase0, psi0)
    m = mag[:, None]
    v = (a[:, None] * m * np.cos(th - SHIFT)
         + b[:, None] * m * np.cos(th + psi[:, None] + SHIFT)
         + v0[:, None] * np.cos(th + psi0[:, None]))
    for ev in grid.events:
        if ev.kind == "harmonic":
            n = ev.order
            if ev.sequence == "positive":
                arg = n * th + ev.phase - SHIFT
            elif ev.sequence == "negative":
                arg = n * th + ev.phase + SHIFT
            else:
                arg = n * (th - SHIFT) + ev.phase
            v = v + (ev.active(t) * ev.value * grid.v_mag)[:, None] * np.cos(arg)
    return v


def sequence_components(phasors) -> tuple[float, float, float, float, float]:
    """Symmetrical components of three phase phasors, normalised to the positive sequence.

    Parameters
    ----------
    phasors : sequence of 3 complex
        Phase a, b, c phasors in per unit of the nominal magnitude.

    Returns
    -------
    a, b, psi, v0, psi0
        Positive and negative sequence magnitudes, the negative-sequence
        angle relative to the positive one, and the zero-sequence magnitude
        and relative angle.
    """
    alpha = np.exp(2j * math.pi / 3)
    va, vb, vc = (complex(x) for x in phasors)
    z = (va + vb + vc) / 3
    p = (va + alpha * vb + alpha**2 * vc) / 3
    n = (va + alpha**2 * vb + alpha * vc) / 3
    scale = abs(va) + abs(vb) + abs(vc)
    ref = np.angle(p) if abs(p) > 1e-12 * scale else 0.0
    if abs(p) <= 1e-12 * scale:
        p = 0.0
    if abs(n) <= 1e-12 * scale:
        n = 0.0
    return abs(p), abs(n), float(np.angle(n) - ref), abs(z), float(np.angle(z) - ref)


def asymmetry_event(phasors, t_start: float, t_end: float | None = None, v_mag: float = 1.0) -> GridEvent:
    """Grid event reproducing the given per-unit phase phasors."""
    a, b, psi, z, psi0 = sequence_components(phasors)
    return GridEvent("asymmetry", t_start=t_start, t_end=t_end, a=a, b=b, phase=psi, vg0=z * v_mag, phase0=psi0)


# discrete controllers -------------------------------------------------------------------

def _zpk(r: RatFun):
    zs = [poly_roots(f) for f in r.num_factors]
    ps = [poly_roots(f) for f in r.den_factors]
    z = np.concatenate(zs) if zs else np.zeros(0, complex)
    p = np.concatenate(ps) if ps else np.zeros(0, complex)
    return z, p, r.gain


def tustin_sos(r: RatFun, fs: float) -> np.ndarray:
    """Bilinear discretisation of a proper rational function as second-order sections."""
    if r.is_zero:
        return np.array([[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]])
    if r.relative_degree < 0:
        raise SimError("controller must be proper to be discretised")
    z, p, k = _zpk(r)
    if p.size == 0 and z.size == 0:
        return np.array([[k, 0.0, 0.0, 1.0, 0.0, 0.0]])
    zd, pd, kd = signal.bilinear_zpk(z, p, k, fs)
    # integrators map to z = 1 exactly; keep them exact after the roots pass
    pd = np.where(np.abs(pd - 1.0) < 1e-12, 1.0, pd)
    return signal.zpk2sos(zd, pd, kd, pairing="nearest")


@numba.njit(cache=True)
def _sos_step(sos, st, x):
    y = x
    for i in range(sos.shape[0]):
        b0, b1, b2, a1, a2 = sos[i, 0], sos[i, 1], sos[i, 2], sos[i, 4], sos[i, 5]
        out = b0 * y + st[i, 0]
        st[i, 0] = b1 * y - a1 * out + st[i, 1]
        st[i, 1] = b2 * y - a2 * out
        y = out
    return y


def sos_preload(sos: np.ndarray, u: float, y: float) -> np.ndarray:
    """Section states that hold a constant input ``u`` at a constant output ``y``.

    Sections with a pole at z = 1 absorb the required output; they must then
    see zero input, which is the case when ``u`` is zero or an earlier
    section blocks dc.
    """
    n = sos.shape[0]
    gains = np.empty(n)
    integ = np.zeros(n, dtype=bool)
    for i, (b0, b1, b2, _, a1, a2) in enumerate(sos):
        den = 1.0 + a1 + a2
        integ[i] = abs(den) < 1e-12
        gains[i] = 0.0 if integ[i] else (b0 + b1 + b2) / den
    st = np.zeros((n, 2))
    x = float(u)
    for i, (b0, b1, b2, _, a1, a2) in enumerate(sos):
        if integ[i]:
            if x != 0.0:
                raise SimError("integrating section cannot hold a non-zero constant input")
            later = np.prod(gains[i + 1:]) if i + 1 < n else 1.0
            out = y / later if later != 0.0 else 0.0
        else:
            out = gains[i] * x
        st[i, 1] = b2 * x - a2 * out
        st[i, 0] = out - b0 * x
        x = out
    return st


class DiscreteFilter:
    """Stateful SOS filter (transposed direct form II per section)."""

    def __init__(self, sos: np.ndarray):
        self.sos = np.ascontiguousarray(sos, dtype=float)
        self.state = np.zeros((self.sos.shape[0], 2))

    @classmethod
    def from_ratfun(cls, r: RatFun, fs: float) -> "DiscreteFilter":
        return cls(tustin_sos(r, fs))

    def step(self, x: float) -> float:
        return _sos_step(self.sos, self.state, float(x))

    def reset(self) -> None:
        self.state[:] = 0.0


# scenario and trace ----------------------------------------------------------------------

@dataclass(frozen=True)
class SetpointStep:
    t: float
    P: float
    Q: float


@dataclass(frozen=True)
class Probe:
    """Sinusoidal additive perturbation of the current reference on one axis."""

    amplitude: float
    omega: float
    axis: str = "d"
    t_start: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    line: LineParams
    inverter: InverterParams
    controllers: ControllerSet
    realization: CascadeRealization
    grid: GridModel
    P0: float
    Q0: float = 0.0
    steps: tuple[SetpointStep, ...] = ()
    duration: float = 1.0
    substeps: int = 10
    delay_enabled: bool = False
    probe: Probe | None = None
    setpoint_mode: str = "power"
    name: str = "scenario"

    def __post_init__(self):
        if not self.duration > 0:
            raise SimError("duration must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise SimError("substeps must be a positive integer")
        if self.setpoint_mode not in ("power", "current"):
            raise SimError("setpoint_mode must be 'power' or 'current'")
        object.__setattr__(self, "steps", tuple(self.steps))


def build_scenario(
    line: LineParams,
    inverter: InverterParams,
    design: DesignParams,
    grid: GridModel,
    P0: float,
    Q0: float = 0.0,
    aux_d=(),
    aux_q=(),
    aux_theta=(),
    design_line: LineParams | None = None,
    tau_i: float = 1e-4,
    **kw,
) -> ScenarioConfig:
    """Design controllers on ``design_line`` (default: the actual line) and wrap a scenario."""
    dl = design_line or line
    cs = design_set(dl, design, aux_d, aux_q, aux_theta)
    real = realize_cascade(cs, inverter, dl, design, tau_i)
    return ScenarioConfig(line=line, inverter=inverter, controllers=cs, realization=real, grid=grid,
                          P0=P0, Q0=Q0, **kw)


@dataclass
class SimTrace:
    """Uniformly sampled signals at the controller rate."""

    data: dict[str, np.ndarray]
    fs: float
    omega0: float
    v0: float
    events: tuple = ()
    status: str = "ok"
    saturated: int = 0
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    @property
    def t(self) -> np.ndarray:
        return self.data["t"]

    def __len__(self) -> int:
        return self.data["t"].size

    def window(self, t0: float, t1: float) -> slice:
        i0 = int(round(t0 * self.fs))
        i1 = int(round(t1 * self.fs))
        if i0 < 0 or i1 > len(self) or i1 <= i0:
            raise SimError("window exceeds trace")
        return slice(i0, i1)

    def to_csv(self, path) -> None:
        header = ",".join(f"{c} [{u}]" for c, u in zip(TRACE_COLUMNS, TRACE_UNITS))
        cols = np.column_stack([self.data[c] for c in TRACE_COLUMNS])
        np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.9g")

    @classmethod
    def read_csv(cls, path, fs: float, omega0: float, v0: float) -> "SimTrace":
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls({c: arr[:, i] for i, c in enumerate(TRACE_COLUMNS)}, fs, omega0, v0)


# steady state and the integration kernel -------------------------------------------------------

def _steady_state(cfg: ScenarioConfig):
    """Plant state aligned with the capacitor voltage at the initial set-points.

    Returns (x0, theta0) where x0 = [iL_d, iL_q, vc_d, vc_q, ig_d, ig_q].
    """
    line, inv, grid = cfg.line, cfg.inverter, cfg.grid
    w0 = grid.omega0
    V = grid_voltage([0.0], grid)
    vgd, vgq = abc_to_dq(V[0], grid.angle(0.0))
    vmag = math.hypot(float(vgd), float(vgq))
    vd = vmag
    idq = (0.0, 0.0)
    delta = 0.0
    for _ in range(50):
        if cfg.setpoint_mode == "power":
            idq = power_to_current(cfg.P0, cfg.Q0, (vd, 0.0), inv.phases)
        else:
            idq = (cfg.P0, cfg.Q0)
        id_, iq = idq
        # vc = vg + (R + w0 L J) ig with vc = (vd, 0) and vg = vmag (cos d, sin d)
        rq = -(line.R * iq + w0 * line.L * id_)
        s = max(-1.0, min(1.0, rq / vmag))
        delta = math.asin(s)
        vd = vmag * math.cos(delta) + line.R * id_ - w0 * line.L * iq
    id_, iq = idq
    theta = float(grid.angle(0.0)) - delta
    iLd = id_
    iLq = iq + inv.Ci * w0 * vd
    return np.array([iLd, iLq, vd, 0.0, id_, iq]), theta


@numba.njit(cache=True)
def _deriv(x, m0, m1, vgd, vgq, wdot, Li, Ri, Ci, L, R, half_vdc):
    iLd, iLq, vcd, vcq, igd, igq = x[0], x[1], x[2], x[3], x[4], x[5]
    out = np.empty(6)
    out[0] = (half_vdc * m0 - vcd - Ri * iLd + Li * wdot * iLq) / Li
    out[1] = (half_vdc * m1 - vcq - Ri * iLq - Li * wdot * iLd) / Li
    out[2] = (iLd - igd + Ci * wdot * vcq) / Ci
    out[3] = (iLq - igq - Ci * wdot * vcd) / Ci
    out[4] = (vcd - vgd - R * igd + L * wdot * igq) / L
    out[5] = (vcq - vgq - R * igq - L * wdot * igd) / L
    return out


@numba.njit(cache=True)
def _park(va, vb, vc, th):
    c0, c1, c2 = math.cos(th), math.cos(th - 2.0943951023931953), math.cos(th + 2.0943951023931953)
    s0, s1, s2 = math.sin(th), math.sin(th - 2.0943951023931953), math.sin(th + 2.0943951023931953)
    d = (2.0 / 3.0) * (va * c0 + vb * c1 + vc * c2)
    q = -(2.0 / 3.0) * (va * s0 + vb * s1 + vc * s2)
    return d, q


@numba.njit(cache=True)
def _kernel(
    n_steps, sub, Ts, x0, theta0, omega0, v0, vg_fine,
    Li, Ri, Ci, L, R, vdc, phi, v_floor, mode_power,
    P_arr, Q_arr, probe_d, probe_q,
    sos_cd, st_cd, sos_cq, st_cq, sos_vd, st_vd, sos_vq, st_vq,
    sos_id, st_id, sos_iq, st_iq, sos_w, st_w,
    delay, limit, out,
):
    x = x0.copy()
    theta = theta0
    u_theta = 0.0
    h = Ts / sub
    half_vdc = 0.5 * vdc
    i0d_prev, i0q_prev = 0.0, 0.0
    have_prev = False
    sat = 0
    # initial modulation for the delay line
    m_hist0 = np.zeros(2)
    m_hist1 = np.zeros(2)
    m_hist0[0] = (x[2] + Ri * x[0] - Li * omega0 * x[1]) / half_vdc
    m_hist0[1] = (x[3] + Ri * x[1] + Li * omega0 * x[0]) / half_vdc
    m_hist1[0] = m_hist0[0]
    m_hist1[1] = m_hist0[1]
    for k in range(n_steps):
        base = k * 2 * sub
        iLd, iLq, vcd, vcq, igd, igq = x[0], x[1], x[2], x[3], x[4], x[5]
        for j in range(6):
            if not math.isfinite(x[j]) or abs(x[j]) > limit[j]:
                return k, sat
        # current reference
        if mode_power:
            n2 = vcd * vcd + vcq * vcq
            if n2 >= v_floor * v_floor and n2 > 0.0:
                kk = phi / n2
                i0d = kk * (vcd * P_arr[k] + vcq * Q_arr[k])
                i0q = kk * (vcq * P_arr[k] - vcd * Q_arr[k])
                i0d_prev, i0q_prev = i0d, i0q
                have_prev = True
            else:
                i0d, i0q = i0d_prev, i0q_prev
        else:
            i0d, i0q = P_arr[k], Q_arr[k]
        i0d += probe_d[k]
        i0q += probe_q[k]
        ed = i0d - igd
        eq = i0q - igq
        # frame rate from the double-integrator path
        dw = _sos_step(sos_w, st_w, eq) / v0
        wdot = omega0 + dw
        # outer loops
        ucd = _sos_step(sos_cd, st_cd, ed)
        ucq = _sos_step(sos_cq, st_cq, eq)
        ild_ref = ucd + igd - _sos_step(sos_vd, st_vd, vcd) - Ci * wdot * vcq
        ilq_ref = ucq + igq - _sos_step(sos_vq, st_vq, vcq) + Ci * wdot * vcd
        uid = _sos_step(sos_id, st_id, ild_ref - iLd)
        uiq = _sos_step(sos_iq, st_iq, ilq_ref - iLq)
        md = (uid + vcd - Li * wdot * iLq) / half_vdc
        mq = (uiq + vcq + Li * wdot * iLd) / half_vdc
        if md > 1.0 or md < -1.0 or mq > 1.0 or mq < -1.0:
            sat += 1
            md = min(1.0, max(-1.0, md))
            mq = min(1.0, max(-1.0, mq))
        # record pre-step sample
        vga = vg_fine[base, 0]
        vgb = vg_fine[base, 1]
        vgc = vg_fine[base, 2]
        vgd0, vgq0 = _park(vga, vgb, vgc, theta)
        out[k, 0] = igd
        out[k, 1] = igq
        out[k, 2] = vcd
        out[k, 3] = vcq
        out[k, 4] = iLd
        out[k, 5] = iLq
        out[k, 6] = theta
        out[k, 7] = dw
        out[k, 8] = u_theta
        out[k, 9] = vgq0
        out[k, 10] = ed
        out[k, 11] = eq
        out[k, 12] = vga
        out[k, 13] = vgb
        out[k, 14] = vgc
        out[k, 15] = i0d
        out[k, 16] = i0q
        out[k, 17] = md
        out[k, 18] = mq
        # modulation actually applied over this period
        if delay:
            # 1.5-sample transport delay: first half holds m[k-2], second half m[k-1]
            ma0, ma1 = m_hist1[0], m_hist1[1]
            mb0, mb1 = m_hist0[0], m_hist0[1]
        else:
            ma0, ma1, mb0, mb1 = md, mq, md, mq
        for s in range(sub):
            if delay and s < sub // 2:
                m0, m1 = ma0, ma1
            elif delay:
                m0, m1 = mb0, mb1
            else:
                m0, m1 = md, mq
            t_loc = s * h
            th_a = theta + wdot * t_loc
            th_b = th_a + 0.5 * wdot * h
            th_c = th_a + wdot * h
            ia = base + 2 * s
            da, qa = _park(vg_fine[ia, 0], vg_fine[ia, 1], vg_fine[ia, 2], th_a)
            db, qb = _park(vg_fine[ia + 1, 0], vg_fine[ia + 1, 1], vg_fine[ia + 1, 2], th_b)
            dc, qc = _park(vg_fine[ia + 2, 0], vg_fine[ia + 2, 1], vg_fine[ia + 2, 2], th_c)
            k1 = _deriv(x, m0, m1, da, qa, wdot, Li, Ri, Ci, L, R, half_vdc)
            k2 = _deriv(x + 0.5 * h * k1, m0, m1, db, qb, wdot, Li, Ri, Ci, L, R, half_vdc)
            k3 = _deriv(x + 0.5 * h * k2, m0, m1, db, qb, wdot, Li, Ri, Ci, L, R, half_vdc)
            k4 = _deriv(x + h * k3, m0, m1, dc, qc, wdot, Li, Ri, Ci, L, R, half_vdc)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        m_hist1[0], m_hist1[1] = m_hist0[0], m_hist0[1]
        m_hist0[0], m_hist0[1] = md, mq
        theta += wdot * Ts
        u_theta += v0 * dw * Ts
    return n_steps, sat


def _schedule(cfg: ScenarioConfig, t: np.ndarray):
    P = np.full(t.shape, float(cfg.P0))
    Q = np.full(t.shape, float(cfg.Q0))
    for st in sorted(cfg.steps, key=lambda s: s.t):
        on = t >= st.t
        P[on] = st.P
        Q[on] = st.Q
    pd = np.zeros_like(t)
    pq = np.zeros_like(t)
    pr = cfg.probe
    if pr is not None:
        wave = pr.amplitude * np.sin(pr.omega * (t - pr.t_start)) * (t >= pr.t_start)
        if pr.axis == "d":
            pd = wave
        else:
            pq = wave
    return P, Q, pd, pq


def run_scenario(cfg: ScenarioConfig, raise_on_divergence: bool = True) -> SimTrace:
    """Simulate ``cfg`` and return the sampled trace.

    On divergence a :class:`DivergenceError` carrying the partial trace is
    raised (or, with ``raise_on_divergence=False``, the partial trace is
    returned with ``status == "diverged"``).
    """
    inv, line, grid = cfg.inverter, cfg.line, cfg.grid
    fs = inv.fs
    Ts = 1.0 / fs
    n = int(round(cfg.duration * fs))
    sub = int(cfg.substeps)
    t = np.arange(n) * Ts
    fine_t = np.arange(2 * sub * n + 1) * (Ts / (2 * sub))
    vg_fine = np.ascontiguousarray(grid_voltage(fine_t, grid))
    x0, th0 = _steady_state(cfg)
    P, Q, pd, pq = _schedule(cfg, t)

    real, cs = cfg.realization, cfg.controllers
    v0 = grid.v_mag
    kw = cs.k2q * RatFun.s()
    filters = [
        tustin_sos(real.kc_d, fs), tustin_sos(real.kc_q, fs),
        tustin_sos(real.kv_d, fs), tustin_sos(real.kv_q, fs),
        tustin_sos(real.ki, fs), tustin_sos(real.ki, fs),
        tustin_sos(kw, fs),
    ]
    # the current compensators integrate to the ESR drop; start them there
    # and let the capacitor-voltage filters see their constant input already
    preload = {2: (x0[2], 0.0), 3: (x0[3], 0.0), 4: (0.0, inv.Ri * x0[0]), 5: (0.0, inv.Ri * x0[1])}
    args = []
    for i, sos in enumerate(filters):
        st = sos_preload(sos, *preload[i]) if i in preload else np.zeros((sos.shape[0], 2))
        args += [np.ascontiguousarray(sos), st]
    i_nom = max(abs(x0[0]), abs(x0[1]), abs(x0[4]), abs(x0[5]), 1.0)
    limit = np.array([i_nom, i_nom, v0, v0, i_nom, i_nom]) * DIVERGENCE_FACTOR
    out = np.zeros((n, 19))
    phi = 2.0 / 3.0 if inv.phases == "three" else 1.0
    done, sat = _kernel(
        n, sub, Ts, x0, th0, grid.omega0, v0, vg_fine,
        inv.Li, inv.Ri, inv.Ci, line.L, line.R, inv.vdc, phi, 0.05 * v0,
        cfg.setpoint_mode == "power", P, Q, pd, pq, *args,
        cfg.delay_enabled, limit, out,
    )
    data = {"t": t[:done]}
    names = ["iga_d", "ig_q", "vc_d", "vc_q", "iL_d", "iL_q", "theta", "dw", "u_theta", "vq",
             "e_d", "e_q", "vg_a", "vg_b", "vg_c", "i0_d", "i0_q", "m_d", "m_q"]
    for i, nm in enumerate(names):
        data[nm] = out[:done, i].copy()
    data["theta_unwrapped"] = data["theta"].copy()
    data["theta"] = np.mod(data["theta"], TWO_PI)
    events = tuple(sorted({ev.t_start for ev in grid.events} | {s.t for s in cfg.steps}))
    trace = SimTrace(data, fs, grid.omega0, v0, events=events, saturated=int(sat),
                     meta={"name": cfg.name})
    if done < n:
        trace.status = "diverged"
        if raise_on_divergence:
            raise DivergenceError(f"numerical divergence at t = {done * Ts:.6f} s", trace)
    return trace


# metrology -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class HarmonicReport:
    magnitudes: dict
    thd: float
    window: tuple[float, float]


def bin_amplitude(x: np.ndarray, fs: float, omega: float) -> float:
    """Amplitude of the ``omega`` component by single-bin projection."""
    n = x.size
    tt = np.arange(n) / fs
    return float(2.0 / n * abs(np.sum(x * np.exp(-1j * omega * tt))))


def measure_harmonics(x, fs: float, omega0: float, window: tuple[float, float], orders=range(1, 14)) -> HarmonicReport:
    """Harmonic magnitudes of ``x`` over ``window`` (seconds into the record).

    The window must hold an integer number of fundamental periods and an
    integer number of samples per those periods.
    """
    x = np.asarray(x, dtype=float)
    t0, t1 = window
    cycles = (t1 - t0) * omega0 / TWO_PI
    if abs(cycles - round(cycles)) > 1e-6 or round(cycles) < 1:
        raise SimError("window must span an integer number of fundamental periods")
    if abs((t1 - t0) * fs - round((t1 - t0) * fs)) > 1e-6:
        raise SimError("window must hold an integer number of samples")
    i0 = int(round(t0 * fs))
    n = int(round((t1 - t0) * fs))
    if i0 < 0 or i0 + n > x.size:
        raise SimError("window exceeds trace")
    seg = x[i0:i0 + n]
    mags = {k: bin_amplitude(seg, fs, k * omega0) for k in orders}
    a1 = mags.get(1, 0.0)
    rest = math.sqrt(sum(v * v for k, v in mags.items() if k >= 2))
    thd = rest / a1 if a1 > 0 else math.inf
    return HarmonicReport(mags, thd, (t0, t1))


@dataclass(frozen=True)
class TransientMetrics:
    rocof_max: float
    extremum: float
    settle_time: float
    overshoot: float
    defined: bool = True


def transient_metrics(x, fs: float, t_step: float, band: float = 0.02, tail: float = 0.1) -> TransientMetrics:
    """Step-response metrics of ``x`` after ``t_step``.

    The final value is the mean over the last ``tail`` seconds.  RoCoF is the
    largest magnitude of a centred five-point derivative.
    """
    x = np.asarray(x, dtype=float)
    i0 = int(round(t_step * fs))
    if not 0 <= i0 < x.size - 5:
        raise SimError("no step event inside the trace")
    pre = x[max(i0 - 1, 0)]
    seg = x[i0:]
    n_tail = max(1, int(tail * fs))
    final = float(np.mean(seg[-n_tail:]))
    step = final - pre
    d = np.zeros_like(seg)
    d[2:-2] = (-seg[4:] + 8 * seg[3:-1] - 8 * seg[1:-3] + seg[:-4]) * fs / 12.0
    rocof = float(np.max(np.abs(d)))
    if step == 0.0:
        return TransientMetrics(rocof, float(pre), 0.0, 0.0, defined=False)
    sign = 1.0 if step > 0 else -1.0
    ext = float(np.max(seg * sign) * sign)
    overshoot = max(0.0, (ext - final) * sign / abs(step))
    outside = np.nonzero(np.abs(seg - final) > band * abs(step))[0]
    settle = 0.0 if outside.size == 0 else (outside[-1] + 1) / fs
    return TransientMetrics(rocof, ext, float(settle), float(overshoot))


def probe_gain(trace: SimTrace, channel: str, omega: float, t0: float, periods: int) -> float:
    """Amplitude of ``channel`` at ``omega`` over an integer number of probe periods."""
    n = int(round(periods * TWO_PI / omega * trace.fs))
    i0 = int(round(t0 * trace.fs))
    if i0 + n > len(trace):
        raise SimError("window exceeds trace")
    return bin_amplitude(trace[channel][i0:i0 + n], trace.fs, omega)


__all__ = [
    "abc_to_dq",
    "dq_to_abc",
    "power_to_current",
    "GridEvent",
    "GridModel",
    "grid_voltage",
    "sequence_components",
    "asymmetry_event",
    "tustin_sos",
    "DiscreteFilter",
    "sos_preload",
    "SetpointStep",
    "Probe",
    "ScenarioConfig",
    "build_scenario",
    "SimTrace",
    "run_scenario",
    "HarmonicReport",
    "measure_harmonics",
    "bin_amplitude",
    "TransientMetrics",
    "transient_metrics",
    "probe_gain",
    "SimError",
    "DivergenceError",
    "TRACE_COLUMNS",
]
