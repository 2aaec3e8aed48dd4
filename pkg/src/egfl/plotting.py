"""Figures rendered straight to PNG files next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_trace(trace, out_dir: Path) -> list[Path]:
    """Currents, capacitor voltage and frame frequency against time."""
    t = trace.t
    fig, ax = plt.subplots(3, 1, sharex=True, figsize=(8, 7))
    ax[0].plot(t, trace["iga_d"], label="ig_d")
    ax[0].plot(t, trace["ig_q"], label="ig_q")
    ax[0].plot(t, trace["i0_d"], "--", lw=0.8, label="i0_d")
    ax[0].plot(t, trace["i0_q"], "--", lw=0.8, label="i0_q")
    ax[0].set_ylabel("current [A]")
    ax[0].legend(loc="upper right", fontsize=8)
    ax[1].plot(t, trace["vc_d"], label="vc_d")
    ax[1].plot(t, trace["vc_q"], label="vc_q")
    ax[1].set_ylabel("voltage [V]")
    ax[1].legend(loc="upper right", fontsize=8)
    ax[2].plot(t, trace["dw"] / (2 * np.pi))
    ax[2].set_ylabel("frame frequency deviation [Hz]")
    ax[2].set_xlabel("time [s]")
    for a in ax:
        a.grid(True, alpha=0.3)
    return [_save(fig, Path(out_dir) / "trace.png")]


def plot_analysis(table: dict, out_dir: Path) -> list[Path]:
    """Sensitivity magnitudes with the coupling measure and, if present, the robust-stability ceilings."""
    w = table["omega_rad_per_s"]
    fig, ax = plt.subplots(2, 1, sharex=True, figsize=(8, 7))
    for key in ("Sd_mag", "Sq_mag", "Ttheta_mag", "Tv_mag"):
        ax[0].loglog(w, table[key], label=key.replace("_mag", ""))
    if "rs_ceiling1" in table:
        ax[0].loglog(w, table["rs_ceiling1"], "k--", lw=0.8, label="RS ceiling 1")
        ax[0].loglog(w, table["rs_ceiling2"], "k:", lw=0.8, label="RS ceiling 2")
    ax[0].set_ylabel("magnitude")
    ax[0].legend(fontsize=8)
    ax[1].loglog(w, table["eps"], label="eps")
    ax[1].loglog(w, table["xc_gap"], label="Xc gap")
    ax[1].loglog(w, table["xc_bound"], "--", label="gap bound")
    ax[1].axhline(1.0, color="k", lw=0.6)
    ax[1].set_xlabel("omega [rad/s]")
    ax[1].legend(fontsize=8)
    for a in ax:
        a.grid(True, which="both", alpha=0.3)
    return [_save(fig, Path(out_dir) / "analysis.png")]


def plot_sweep(rows: list[dict], keys: list[str], metric: str, out_dir: Path) -> list[Path]:
    """One metric against the sweep index, labelled by the swept values."""
    vals = [r.get(metric) for r in rows]
    if not any(isinstance(v, (int, float)) for v in vals):
        return []
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(rows))
    ax.plot(x, [v if isinstance(v, (int, float)) else np.nan for v in vals], "o-")
    ax.set_xticks(x, [", ".join(str(r[k]) for k in keys) for r in rows], rotation=20, fontsize=8)
    ax.set_ylabel(metric)
    ax.grid(True, alpha=0.3)
    return [_save(fig, Path(out_dir) / f"sweep_{metric}.png")]


__all__ = ["plot_trace", "plot_analysis", "plot_sweep"]
