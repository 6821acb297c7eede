"""CSV tables and static SVG figures from reports, trajectories and histories.

CSV is the canonical output.  SVGs use a fixed hash salt and no date stamp,
so reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "write_hamiltonian_csv",
    "write_error_time_csv",
    "write_solution_csv",
    "plot_hamiltonians",
    "plot_error_time",
    "plot_solution",
    "plot_history",
    "error_vs_time",
]

plt.rcParams["svg.hashsalt"] = "hamrom"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def error_vs_time(ref: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Per-step relative L2 error ``||ref_n - pred_n|| / ||ref_n||`` (0 where the reference vanishes)."""
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    num = np.linalg.norm(ref - pred, axis=-1)
    den = np.linalg.norm(ref, axis=-1)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def write_hamiltonian_csv(report: dict, path, dt: float | None = None) -> int:
    """One row per (test, step).  Returns the number of data rows."""
    dt = report.get("dt", 1.0) if dt is None else dt
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test", "step", "time", "H_pred", "H_ref"])
        for r in report.get("results", []):
            h, href = r.get("hamiltonian", []), r.get("hamiltonian_ref", [])
            for n, hv in enumerate(h):
                w.writerow([r["name"], n, repr(n * dt), repr(float(hv)), repr(float(href[n])) if n < len(href) else ""])
                rows += 1
    return rows


def write_error_time_csv(times, errors: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "error"])
        for n, (t, e) in enumerate(zip(times, errors)):
            w.writerow([n, repr(float(t)), repr(float(e))])


def write_solution_csv(x, fields: dict[str, np.ndarray], path) -> None:
    names = list(fields)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", *names])
        for i, xi in enumerate(x):
            w.writerow([repr(float(xi)), *(repr(float(fields[k][i])) for k in names)])


def plot_hamiltonians(report: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    dt = report.get("dt", 1.0)
    for r in report.get("results", []):
        h = np.asarray(r.get("hamiltonian", []), dtype=np.float64)
        t = np.arange(h.size) * dt
        ax.plot(t, h, label=f"{r['name']} ({report.get('method', '')})")
        if r.get("hamiltonian_ref"):
            ax.plot(t, r["hamiltonian_ref"], "k--", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("H")
    if report.get("results"):
        ax.legend(fontsize=7)
    _save(fig, path)


def plot_error_time(times, errors: dict[str, np.ndarray], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, e in errors.items():
        ax.semilogy(times, np.maximum(e, 1e-300), label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("relative error")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_solution(x, fields: dict[str, np.ndarray], path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, u in fields.items():
        ax.plot(x, u, label=name)
    ax.set_xlabel("x")
    ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_history(csv_path, path) -> None:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        steps = [int(r["step"]) for r in rows]
        for col in ("ae", "pred_reduced", "stab", "pred", "val_objective"):
            vals = np.array([float(r[col]) for r in rows])
            ax.semilogy(steps, np.maximum(vals, 1e-300), label=col)
        ax.legend(fontsize=7)
    ax.set_xlabel("step")
    ax.set_ylabel("weighted loss")
    _save(fig, path)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
