"""Report serialization and figure rendering for the CLI.

Reports serialize deterministically: keys sorted, floats in shortest
round-trip form, complex numbers as {"re", "im"} pairs, and no timing
fields under reproducible mode.  CSV floats carry 17 significant digits.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _coerce(value):
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, complex):
        return {"im": value.imag, "re": value.real}
    if isinstance(value, np.complexfloating):
        return {"im": float(value.imag), "re": float(value.real)}
    if isinstance(value, np.ndarray):
        return [_coerce(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_coerce(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _coerce(v) for k, v in value.items()}
    return value


def report_json_bytes(report: dict) -> bytes:
    return json.dumps(_coerce(report), sort_keys=True, indent=2,
                      ensure_ascii=True).encode() + b"\n"


def write_report(out_dir, report: dict, name: str = "report.json") -> Path:
    path = Path(out_dir) / name
    path.write_bytes(report_json_bytes(report))
    return path


def fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, complex):
        return f"{value.real:.17g}{value.imag:+.17g}j"
    return str(value)


def write_csv(out_dir, name: str, header, rows) -> Path:
    path = Path(out_dir) / name
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


# ---------------------------------------------------------------------------
# figures (rendered on the report path unless disabled)


def _axes(title, xlabel, ylabel):
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6.0, 4.0), constrained_layout=True)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    return fig, ax


def _save(fig, out_dir, name) -> Path:
    path = Path(out_dir) / name
    fig.savefig(path, dpi=130)
    import matplotlib.pyplot as plt
    plt.close(fig)
    return path


def figure_spectrum(out_dir, name, eigenvalues, omega, title="spectrum") -> Path:
    lam = np.asarray(eigenvalues, dtype=complex)
    fig, ax = _axes(title, "Re", "Im")
    ax.scatter(lam.real, lam.imag, s=12, color="tab:blue", zorder=3)
    radius = 1.1 * max(np.max(np.abs(lam)), 1e-12)
    for sign in (1, -1):
        for ang in (omega, -omega):
            ax.plot([0, sign * radius * np.cos(ang)], [0, sign * radius * np.sin(ang)],
                    color="tab:red", lw=0.8, ls="--")
    ax.axhline(0, color="black", lw=0.5)
    ax.axvline(0, color="black", lw=0.5)
    ax.set_aspect("equal", adjustable="datalim")
    return _save(fig, out_dir, name)


def figure_loglog(out_dir, name, rows, xlabel, ylabel, title,
                  reference_slope=None) -> Path:
    data = np.asarray(rows, dtype=float)
    fig, ax = _axes(title, xlabel, ylabel)
    ax.loglog(data[:, 0], np.maximum(data[:, 1], 1e-300), "o-", color="tab:blue")
    if reference_slope is not None and len(data) >= 2:
        x0, y0 = data[0, 0], max(data[0, 1], 1e-300)
        ax.loglog(data[:, 0], y0 * (data[:, 0] / x0) ** reference_slope,
                  ls=":", color="tab:gray",
                  label=f"slope {reference_slope:g}")
        ax.legend()
    return _save(fig, out_dir, name)


def figure_series(out_dir, name, series, xlabel, ylabel, title,
                  logy=False) -> Path:
    fig, ax = _axes(title, xlabel, ylabel)
    for label, rows in series.items():
        data = np.asarray(rows, dtype=float)
        if logy:
            ax.semilogy(data[:, 0], np.maximum(data[:, 1], 1e-300), "o-", label=label)
        else:
            ax.plot(data[:, 0], data[:, 1], "o-", label=label)
    if series:
        ax.legend()
    return _save(fig, out_dir, name)


def figure_bars(out_dir, name, labels, values, ylabel, title, logy=False) -> Path:
    fig, ax = _axes(title, "", ylabel)
    ax.bar(range(len(values)), values, color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    if logy:
        ax.set_yscale("log")
    return _save(fig, out_dir, name)
