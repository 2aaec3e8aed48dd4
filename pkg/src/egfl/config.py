"""
JSON configuration: parsing into the domain objects, preset lookup and
parameter-path editing used by sweeps.

Every physical field carries its unit in the key (``L_henry``,
``omega_d_rad_per_s`` ...).  Angular frequencies may instead be given in
hertz with the ``_hz`` suffix.  A config may name a base file with
``"extends"``; the two are deep-merged, the child winning.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .design import AuxCompensator, DesignParams
from .plant import OMEGA_60HZ, InverterParams, LineParams, UncertaintyBox, nominal_plant
from .sim import GridEvent, GridModel, Probe, ScenarioConfig, SetpointStep, asymmetry_event, build_scenario


class ConfigError(ValueError):
    pass


PRESET_PACKAGE = "egfl.presets"


def preset_names() -> list[str]:
    root = resources.files(PRESET_PACKAGE)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_path(name: str) -> Path:
    p = resources.files(PRESET_PACKAGE) / f"{name}.json"
    if not p.is_file():
        raise ConfigError(f"no preset named {name!r}")
    return Path(str(p))


def _merge(base: dict, child: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in child.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config_path(ref: str | Path) -> Path:
    """A filesystem path, or the bare name of a bundled preset."""
    p = Path(ref)
    if p.is_file():
        return p
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    if str(ref) == name or str(ref) == f"{name}.json":
        return preset_path(name)
    raise ConfigError(f"config not found: {ref}")


def load_config(ref: str | Path, _seen: tuple = ()) -> dict:
    """Read a config, resolving ``extends`` chains against the same directory or the presets."""
    path = resolve_config_path(ref)
    key = str(path.resolve())
    if key in _seen:
        raise ConfigError("cyclic 'extends'")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    parent = raw.pop("extends", None)
    if parent is None:
        return raw
    sibling = path.parent / (parent if parent.endswith(".json") else parent + ".json")
    base = load_config(sibling if sibling.is_file() else parent, _seen + (key,))
    return _merge(base, raw)


# parameter paths ------------------------------------------------------------------

def _split(path: str) -> list:
    return [int(p) if p.isdigit() else p for p in path.split(".")]


def get_path(cfg: dict, path: str) -> Any:
    node = cfg
    try:
        for part in _split(path):
            node = node[part]
    except (KeyError, IndexError, TypeError) as exc:
        raise ConfigError(f"no parameter at {path!r}") from exc
    return node


def set_path(cfg: dict, path: str, value: Any) -> dict:
    """Copy of ``cfg`` with the scalar at ``path`` replaced."""
    current = get_path(cfg, path)
    if isinstance(current, (dict, list)) or isinstance(current, bool):
        raise ConfigError(f"{path!r} does not address a scalar")
    out = copy.deepcopy(cfg)
    parts = _split(path)
    node = out
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value
    return out


# field readers -------------------------------------------------------------------------

def _req(d: dict, key: str, where: str) -> float:
    if key not in d:
        raise ConfigError(f"{where}: missing {key!r}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be a finite number")
    return float(v)


def _omega(d: dict, base: str, where: str, default: float | None = None) -> float:
    if f"{base}_rad_per_s" in d:
        return _req(d, f"{base}_rad_per_s", where)
    if f"{base}_hz" in d:
        return 2.0 * math.pi * _req(d, f"{base}_hz", where)
    if default is not None:
        return default
    raise ConfigError(f"{where}: missing {base}_rad_per_s (or {base}_hz)")


def _section(cfg: dict, key: str) -> dict:
    sec = cfg.get(key)
    if not isinstance(sec, dict):
        raise ConfigError(f"missing section {key!r}")
    return sec


def parse_line(d: dict, where: str = "line") -> LineParams:
    return LineParams(
        L=_req(d, "L_henry", where),
        R=_req(d, "R_ohm", where),
        omega0=_omega(d, "omega0", where, OMEGA_60HZ),
    )


def parse_inverter(d: dict) -> InverterParams:
    w = "inverter"
    return InverterParams(
        Li=_req(d, "Li_henry", w),
        Ci=_req(d, "Ci_farad", w),
        Ri=_req(d, "Ri_ohm", w),
        vdc=_req(d, "vdc_volt", w),
        fs=_req(d, "fs_hz", w),
        fsw=_req(d, "fsw_hz", w),
        v0=_req(d, "v0_volt", w),
        phases=d.get("phases", "three"),
    )


def parse_design(d: dict) -> DesignParams:
    w = "design"
    return DesignParams(
        alpha_d=_req(d, "alpha_d", w),
        omega_d=_omega(d, "omega_d", w),
        alpha_q=_req(d, "alpha_q", w),
        omega_q=_omega(d, "omega_q", w),
        alpha_theta=_req(d, "alpha_theta", w),
        omega_theta=_omega(d, "omega_theta", w),
        bandpass_ratio=float(d.get("bandpass_ratio", 0.2)),
    )


def parse_aux(items, where: str) -> tuple[AuxCompensator, ...]:
    """Auxiliary compensators; a PR entry with ``k == 0`` stands for 'no PR'."""
    out = []
    for i, a in enumerate(items or ()):
        at = f"{where}[{i}]"
        kind = a.get("kind")
        if kind == "pr":
            k = _req(a, "k", at)
            if k == 0:
                continue
            out.append(AuxCompensator("pr", k=k, xi=_req(a, "xi", at), n=int(_req(a, "n", at))))
        elif kind == "lead":
            out.append(AuxCompensator("lead", alpha=_req(a, "alpha", at), omega=_omega(a, "omega", at)))
        elif kind == "notch":
            out.append(AuxCompensator("notch", omega=_omega(a, "omega", at), xi=float(a.get("xi", 0.7))))
        else:
            raise ConfigError(f"{at}: unknown compensator kind {kind!r}")
    return tuple(out)


def parse_box(d: dict) -> UncertaintyBox:
    w = "uncertainty"
    return UncertaintyBox(_req(d, "Lmin_henry", w), _req(d, "Lmax_henry", w), _req(d, "Rmin_ohm", w), _req(d, "Rmax_ohm", w))


def _event(e: dict, v_mag: float, i: int) -> GridEvent:
    w = f"grid.events[{i}]"
    kind = e.get("kind")
    t0 = _req(e, "t_start_s", w)
    t1 = float(e["t_end_s"]) if e.get("t_end_s") is not None else None
    if kind == "freq_step":
        return GridEvent("freq_step", t_start=t0, value=_omega(e, "delta_omega", w))
    if kind == "phase_jump":
        return GridEvent("phase_jump", t_start=t0, value=_req(e, "angle_rad", w))
    if kind == "sag":
        return GridEvent("sag", t_start=t0, t_end=t1, value=_req(e, "fraction", w))
    if kind == "harmonic":
        return GridEvent("harmonic", t_start=t0, t_end=t1, order=int(_req(e, "order", w)),
                         value=_req(e, "fraction", w), phase=float(e.get("phase_rad", 0.0)),
                         sequence=e.get("sequence", "positive"))
    if kind == "asymmetry":
        if "phasors_pu" in e:
            ph = [complex(m * math.cos(a), m * math.sin(a)) for m, a in e["phasors_pu"]]
            return asymmetry_event(ph, t0, t1, v_mag)
        return GridEvent("asymmetry", t_start=t0, t_end=t1, a=_req(e, "a", w), b=_req(e, "b", w),
                         phase=float(e.get("psi_rad", 0.0)), vg0=float(e.get("vg0_volt", 0.0)),
                         phase0=float(e.get("psi0_rad", 0.0)))
    raise ConfigError(f"{w}: unknown event kind {kind!r}")


def parse_grid(d: dict, inv: InverterParams, omega0: float) -> GridModel:
    v = float(d.get("v_mag_volt", inv.v0))
    events = tuple(_event(e, v, i) for i, e in enumerate(d.get("events", ())))
    return GridModel(v_mag=v, omega0=omega0, theta0=float(d.get("theta0_rad", 0.0)), events=events)


@dataclass(frozen=True)
class Setup:
    """Everything a command needs, parsed once."""

    raw: dict
    line: LineParams
    design_line: LineParams
    inverter: InverterParams | None
    design: DesignParams
    aux_d: tuple
    aux_q: tuple
    aux_theta: tuple
    box: UncertaintyBox | None
    omega_bw: float
    w2_form: str
    tau_i: float


def parse_setup(cfg: dict) -> Setup:
    line = parse_line(_section(cfg, "line"))
    inv = parse_inverter(cfg["inverter"]) if "inverter" in cfg else None
    design = parse_design(_section(cfg, "design"))
    box = parse_box(cfg["uncertainty"]) if "uncertainty" in cfg else None
    dl_spec = cfg.get("design_line", "actual")
    if dl_spec == "actual":
        dline = line
    elif dl_spec == "nominal":
        if box is None:
            raise ConfigError("design_line 'nominal' needs an uncertainty section")
        dline = nominal_plant(box, line.omega0).line
    elif isinstance(dl_spec, dict):
        dline = parse_line(dl_spec, "design_line")
    else:
        raise ConfigError("design_line must be 'actual', 'nominal' or a line object")
    aux = cfg.get("aux", {}) or {}
    an = cfg.get("analysis", {}) or {}
    return Setup(
        raw=cfg,
        line=line,
        design_line=dline,
        inverter=inv,
        design=design,
        aux_d=parse_aux(aux.get("d"), "aux.d"),
        aux_q=parse_aux(aux.get("q"), "aux.q"),
        aux_theta=parse_aux(aux.get("theta"), "aux.theta"),
        box=box,
        omega_bw=_omega(an, "omega_bw", "analysis", design.omega_d),
        w2_form=an.get("w2_form", "auto"),
        tau_i=float(cfg.get("scenario", {}).get("tau_i_s", 1e-4)),
    )


def parse_scenario(cfg: dict, setup: Setup | None = None) -> ScenarioConfig:
    setup = setup or parse_setup(cfg)
    if setup.inverter is None:
        raise ConfigError("simulation needs an inverter section")
    sc = _section(cfg, "scenario")
    w = "scenario"
    inv = setup.inverter
    grid = parse_grid(sc.get("grid", {}), inv, setup.line.omega0)
    mode = sc.get("setpoint_mode", "power")
    if mode == "power":
        p0, q0 = _req(sc, "P0_watt", w), float(sc.get("Q0_var", 0.0))
        steps = tuple(SetpointStep(_req(s, "t_s", w), _req(s, "P_watt", w), float(s.get("Q_var", 0.0)))
                      for s in sc.get("steps", ()))
    else:
        p0, q0 = _req(sc, "i0d_amp", w), float(sc.get("i0q_amp", 0.0))
        steps = tuple(SetpointStep(_req(s, "t_s", w), _req(s, "i0d_amp", w), float(s.get("i0q_amp", 0.0)))
                      for s in sc.get("steps", ()))
    probe = None
    if sc.get("probe"):
        p = sc["probe"]
        probe = Probe(_req(p, "amplitude_amp", "probe"), _omega(p, "omega", "probe"),
                      p.get("axis", "d"), float(p.get("t_start_s", 0.0)))
    return build_scenario(
        setup.line, inv, setup.design, grid, p0, q0,
        aux_d=setup.aux_d, aux_q=setup.aux_q, aux_theta=setup.aux_theta,
        design_line=setup.design_line, tau_i=setup.tau_i,
        steps=steps, duration=_req(sc, "duration_s", w), substeps=int(sc.get("substeps", 10)),
        delay_enabled=bool(sc.get("delay_enabled", False)), probe=probe, setpoint_mode=mode,
        name=cfg.get("name", "scenario"),
    )


__all__ = [
    "ConfigError",
    "Setup",
    "load_config",
    "resolve_config_path",
    "preset_names",
    "preset_path",
    "get_path",
    "set_path",
    "parse_setup",
    "parse_scenario",
    "parse_line",
    "parse_inverter",
    "parse_design",
    "parse_aux",
    "parse_box",
    "parse_grid",
]
