"""
Command bodies shared by the CLI and the tests: controller reports,
analysis bundles, simulation metrics and the pass/fail checks behind the
exit code.  Nothing here touches the filesystem.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .analysis import (
    AnalysisError,
    bode_integral_audit,
    check_nominal_stability,
    check_robust_stability,
    check_synchronization,
    closed_loop_set,
    coupling_perturbation,
    loop_metrics,
)
from .config import Setup
from .design import ValidityWarning, design_set, predicted_pm, realize_cascade
from .plant import gl_siso, nominal_plant
from .ratcore import FreqGrid, RatFun, default_grid, poly_roots
from .sim import (
    TWO_PI,
    ScenarioConfig,
    SimTrace,
    bin_amplitude,
    dq_to_abc,
    measure_harmonics,
    probe_gain,
    transient_metrics,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float

    def as_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in asdict(self).items()}


def ratfun_dict(r: RatFun) -> dict:
    """Coefficients (descending powers, gain included in the numerator) with poles and zeros."""
    def cplx(z):
        return [[float(x.real), float(x.imag)] for x in z]

    zeros = np.concatenate([poly_roots(f) for f in r.num_factors]) if r.num_factors else np.zeros(0)
    poles = np.concatenate([poly_roots(f) for f in r.den_factors]) if r.den_factors else np.zeros(0)
    return {
        "num_desc": [float(c) for c in r.num.coeffs[::-1]],
        "den_desc": [float(c) for c in r.den.coeffs[::-1]],
        "zeros": cplx(zeros),
        "poles": cplx(poles),
    }


def controllers_for(setup: Setup):
    cs = design_set(setup.design_line, setup.design, setup.aux_d, setup.aux_q, setup.aux_theta)
    real = realize_cascade(cs, setup.inverter, setup.design_line, setup.design, setup.tau_i) if setup.inverter else None
    return cs, real


def design_report(setup: Setup, grid: FreqGrid | None = None) -> tuple[dict, list[CheckResult]]:
    """Controller coefficients, predicted and numeric phase margins and the synchronization verdict."""
    grid = grid or default_grid()
    cs, real = controllers_for(setup)
    gl = gl_siso(setup.design_line)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ValidityWarning)
        pm_pred = {ax: predicted_pm(setup.design, setup.design_line, ax) for ax in ("d", "q")}
    pm_num = {"d": loop_metrics(gl * cs.kd, grid).pm, "q": loop_metrics(gl * cs.kq, grid).pm}
    sync = check_synchronization(cs)
    rep = {
        "design_line": {"L_henry": setup.design_line.L, "R_ohm": setup.design_line.R,
                        "omega0_rad_per_s": setup.design_line.omega0},
        "controllers": {"kd": ratfun_dict(cs.kd), "k1q": ratfun_dict(cs.k1q), "k2q": ratfun_dict(cs.k2q)},
        "predicted_pm_deg": pm_pred,
        "numeric_pm_deg": pm_num,
        "sync": {"passed": sync.passed, **{k: (v if not isinstance(v, float) or math.isfinite(v) else None)
                                          for k, v in sync.counts.items()}},
    }
    if real is not None:
        rep["realization"] = {
            "tau_i_s": real.tau_i,
            "ki": ratfun_dict(real.ki),
            "kv_d": ratfun_dict(real.kv_d),
            "kv_q": ratfun_dict(real.kv_q),
            "kc_d": ratfun_dict(real.kc_d),
            "kc_q": ratfun_dict(real.kc_q),
        }
    return rep, [CheckResult("sync", sync.passed, float(sync.counts["k1q_over_k2q_origin_zeros"]), 2.0)]


def analysis_bundle(setup: Setup, grid: FreqGrid | None = None, checks=None) -> tuple[dict, dict, list[CheckResult]]:
    """Per-frequency table, summary report and checks.

    ``checks`` selects among ``nominal``, ``sync``, ``bode`` and ``rs``; the
    default runs all that the config supports.
    """
    grid = grid or default_grid()
    w = grid.omegas
    cs, _ = controllers_for(setup)
    line = setup.design_line
    gl = gl_siso(line)
    sens = closed_loop_set(gl, cs, grid)
    verdict = check_nominal_stability(sens, line, grid)
    cpl = coupling_perturbation(sens, line, grid)
    table = {
        "omega_rad_per_s": w,
        "Sd_mag": np.abs(sens.s_d.freqresp(w)),
        "Sq_mag": np.abs(sens.s_q.freqresp(w)),
        "Td_mag": np.abs(sens.t_d.freqresp(w)),
        "Tq_mag": np.abs(sens.t_q.freqresp(w)),
        "Ttheta_mag": np.abs(sens.t_theta.freqresp(w)),
        "Tv_mag": np.abs(sens.t_v.freqresp(w)),
        "eps": cpl.eps,
        "xc_gap": cpl.xc_gap,
        "xc_bound": cpl.bound,
    }
    loops = {}
    for ax, k in (("d", cs.kd), ("q", cs.kq)):
        lr = loop_metrics(gl * k, grid)
        loops[ax] = {"Ms": lr.ms, "omega_Ms": lr.omega_ms, "PM_deg": lr.pm, "GM": lr.gm,
                     "crossover": lr.crossover, "omega_B": lr.omega_b, "omega_T": lr.omega_t}
    rep: dict = {
        "nominal": {"passed": verdict.passed, "hurwitz_d": bool(verdict.hurwitz_d), "hurwitz_q": bool(verdict.hurwitz_q),
                    "eps_max": verdict.eps_max, "omega_eps_max": verdict.omega_eps_max},
        "coupling_bound_holds": cpl.bound_holds,
        "loops": loops,
    }
    sync = check_synchronization(cs)
    rep["sync"] = {"passed": sync.passed}
    try:
        audit = bode_integral_audit(sens.s_d, gl * cs.kd, grid)
        rep["bode_d"] = asdict(audit)
    except AnalysisError as exc:
        audit = None
        rep["bode_d"] = {"error": str(exc)}
    rs = None
    if setup.box is not None:
        nom = nominal_plant(setup.box, line.omega0)
        rs = check_robust_stability(nom, cs, setup.box, setup.omega_bw, grid, setup.w2_form)
        table.update(rs_s0=rs.s0, rs_ceiling1=rs.ceiling1, rs_ceiling2=rs.ceiling2,
                     rs_margin1=rs.margin1, rs_margin2=rs.margin2)
        rep["rs"] = {"passed": rs.passed, "hurwitz": rs.hurwitz, "binding_omega": rs.binding_omega,
                     "max_margin1": float(np.max(rs.margin1)), "max_margin2": float(np.max(rs.margin2))}

    wanted = checks if checks is not None else ["nominal", "sync", "bode"] + (["rs"] if rs is not None else [])
    results = []
    for c in wanted:
        if c == "nominal":
            results.append(CheckResult("nominal", verdict.passed, verdict.eps_max, 1.0))
        elif c == "sync":
            results.append(CheckResult("sync", sync.passed, float(sync.counts["k1q_over_k2q_origin_zeros"]), 2.0))
        elif c == "bode":
            ok = audit is not None and audit.passed
            results.append(CheckResult("bode", ok, audit.lhs if audit else math.nan, audit.ln_ms if audit else math.nan))
        elif c == "rs":
            if rs is None:
                raise AnalysisError("robust stability requested without an uncertainty box")
            worst = float(np.max(np.maximum(rs.margin1, rs.margin2)))
            results.append(CheckResult("rs", rs.passed, worst, 1.0))
        else:
            raise AnalysisError(f"unknown analysis check {c!r}")
    return table, rep, results


# simulation ---------------------------------------------------------------------------------

def _cycle_window(trace: SimTrace, max_cycles: int = 12) -> tuple[float, float] | None:
    """Longest trailing window of whole fundamental periods that is also whole in samples."""
    f0 = trace.omega0 / TWO_PI
    t_end = len(trace) / trace.fs
    for c in range(max_cycles, 0, -1):
        n = c * trace.fs / f0
        if abs(n - round(n)) < 1e-9 and c / f0 <= t_end:
            return t_end - c / f0, t_end
    return None


def _tail(trace: SimTrace, cycles: int = 10) -> slice:
    n = int(round(cycles * TWO_PI / trace.omega0 * trace.fs))
    return slice(max(0, len(trace) - n), len(trace))


def phase_current(trace: SimTrace) -> np.ndarray:
    """Line currents in abc (A), shape (n, 3)."""
    return dq_to_abc(trace["iga_d"], trace["ig_q"], trace["theta_unwrapped"])


def simulation_metrics(trace: SimTrace, cfg: ScenarioConfig) -> dict:
    """Flat dictionary of scalar metrics for reports and sweep tables."""
    m: dict = {"status": trace.status, "saturated_samples": trace.saturated, "samples": len(trace)}
    tail = _tail(trace)
    m["vcq_mean_tail_volt"] = float(np.mean(trace["vc_q"][tail]))
    e = np.hypot(trace["e_d"][tail], trace["e_q"][tail])
    i0 = np.hypot(trace["i0_d"][tail], trace["i0_q"][tail])
    m["tracking_error_frac"] = float(np.mean(e) / max(np.mean(i0), 1e-12))
    m["dw_final_hz"] = float(np.mean(trace["dw"][tail]) / TWO_PI)
    events = [t for t in trace.events if 0 < t < len(trace) / trace.fs]
    if events:
        t_ev = events[0]
        i_ev = int(round(t_ev * trace.fs))
        tm = transient_metrics(trace["dw"], trace.fs, t_ev)
        m.update(event_s=t_ev, rocof_max=tm.rocof_max, dw_extremum=tm.extremum, dw_settle_time_s=tm.settle_time,
                 dw_overshoot=tm.overshoot, dw_step_defined=tm.defined,
                 vcq_peak_volt=float(np.max(np.abs(trace["vc_q"][i_ev:]))))
    win = _cycle_window(trace)
    if win is not None and trace.status == "ok":
        ia = phase_current(trace)[:, 0]
        hr = measure_harmonics(ia, trace.fs, trace.omega0, win)
        m["harmonic_window_s"] = list(win)
        for k, v in hr.magnitudes.items():
            m[f"iga_h{k}_amp"] = v
        m["iga_thd"] = hr.thd
        s = trace.window(*win)
        w2 = 2 * trace.omega0
        m["dw_2w0_amp"] = bin_amplitude(trace["dw"][s], trace.fs, w2)
        m["igd_2w0_amp"] = bin_amplitude(trace["iga_d"][s], trace.fs, w2)
        m["igq_2w0_amp"] = bin_amplitude(trace["ig_q"][s], trace.fs, w2)
    if cfg.probe is not None and trace.status == "ok":
        pr = cfg.probe
        periods = max(1, int(math.floor(0.2 * pr.omega / TWO_PI)))
        t0 = len(trace) / trace.fs - periods * TWO_PI / pr.omega
        ch = "iga_d" if pr.axis == "d" else "ig_q"
        m["probe_gain"] = probe_gain(trace, ch, pr.omega, t0, periods) / pr.amplitude
        m["probe_omega_rad_per_s"] = pr.omega
    return m


def simulation_checks(trace: SimTrace, cfg: ScenarioConfig, spec) -> list[CheckResult]:
    """Evaluate the ``scenario.checks`` list of a config against a finished trace."""
    out = [CheckResult("stable", trace.status == "ok", float(len(trace)), float(round(cfg.duration * cfg.inverter.fs)))]
    if trace.status != "ok":
        return out
    tail = _tail(trace)
    v0 = cfg.grid.v_mag
    for c in spec or ():
        kind = c.get("kind")
        if kind == "frequency_settle":
            n = int(round(float(c.get("window_s", 0.1)) * trace.fs))
            t_end = (len(trace) - 1) / trace.fs
            target = (float(cfg.grid.frequency(t_end)) - cfg.grid.omega0) / TWO_PI
            err = abs(float(np.mean(trace["dw"][-n:])) / TWO_PI - target)
            out.append(CheckResult("frequency_settle", err <= c["tol_hz"], err, float(c["tol_hz"])))
        elif kind == "sync":
            val = abs(float(np.mean(trace["vc_q"][tail]))) / v0
            out.append(CheckResult("sync", val <= c["tol_frac"], val, float(c["tol_frac"])))
        elif kind == "tracking":
            e = np.mean(np.hypot(trace["e_d"][tail], trace["e_q"][tail]))
            i0 = np.mean(np.hypot(trace["i0_d"][tail], trace["i0_q"][tail]))
            val = float(e / max(i0, 1e-12))
            out.append(CheckResult("tracking", val <= c["tol_frac"], val, float(c["tol_frac"])))
        elif kind == "vcq_recovery":
            i_ev = int(round(float(c["event_s"]) * trace.fs))
            above = np.nonzero(np.abs(trace["vc_q"][i_ev:]) > c["tol_frac"] * v0)[0]
            t_rec = 0.0 if above.size == 0 else (above[-1] + 1) / trace.fs
            out.append(CheckResult("vcq_recovery", t_rec <= c["within_s"], t_rec, float(c["within_s"])))
        else:
            raise ValueError(f"unknown simulation check {kind!r}")
    return out


__all__ = [
    "CheckResult",
    "ratfun_dict",
    "controllers_for",
    "design_report",
    "analysis_bundle",
    "phase_current",
    "simulation_metrics",
    "simulation_checks",
]
