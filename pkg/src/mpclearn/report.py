"""Experiment outputs: CSV tables, a markdown summary, and figures.

CSV files are the canonical data boundary; every file embeds the base
seed and the problem fingerprint in a leading comment line. Figures are
rendered next to the CSVs as PNG files. All writers are deterministic so
reruns produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .experiment import ExperimentResult
from .polytope import HPolytope
from .sampling import sample_states


def _fmt(x: float) -> str:
    if isinstance(x, float) and not np.isfinite(x):
        return "-inf" if x < 0 else ("inf" if x > 0 else "nan")
    return f"{x:.10g}"


def _stamp(result: ExperimentResult) -> str:
    return f"# problem_hash={result.problem_hash} base_seed={result.config.base_seed}"


def _write(path: Path, lines: list) -> None:
    path.write_text("\n".join(lines) + "\n")


def write_nmse_runs_csv(result: ExperimentResult, path) -> None:
    lines = [_stamp(result), "gamma,train_size,seed,nmse_db,epochs_run,stop_reason"]
    from .experiment import cell_seed

    cfg = result.config
    for c in result.cells:
        si = cfg.train_sizes.index(c.size)
        gi = cfg.gammas.index(c.gamma)
        seed = cell_seed(cfg.base_seed, si, gi, c.replicate, 0)
        db = "error" if c.error is not None else _fmt(c.nmse_db)
        lines.append(f"{_fmt(c.gamma)},{c.size},{seed},{db},{c.epochs_run},{c.stop_reason}")
    _write(Path(path), lines)


def write_nmse_summary_csv(result: ExperimentResult, path) -> None:
    cfg = result.config
    header = ["train_size"] + [f"nmse_db_gamma_{_fmt(g)}" for g in cfg.gammas] + ["best_gamma"]
    lines = [_stamp(result), ",".join(header)]
    for size in cfg.train_sizes:
        row = [str(size)]
        row += [_fmt(result.cell_mean_db(size, g)) for g in cfg.gammas]
        row.append(_fmt(result.best_gamma(size)))
        lines.append(",".join(row))
    _write(Path(path), lines)


def write_cost_runs_csv(result: ExperimentResult, path) -> None:
    """Per-trajectory costs averaged over the networks of each compared cell."""
    lines = [_stamp(result), "set_label,gamma,traj_index,J"]
    for size, gamma in result.cost_pairs:
        label = f"S{size}"
        avg = result.averaged_trajectory_costs(size, gamma)
        for i, val in enumerate(avg):
            lines.append(f"{label},{_fmt(gamma)},{i},{_fmt(val)}")
    _write(Path(path), lines)


def write_cost_summary_csv(result: ExperimentResult, path) -> None:
    lines = [_stamp(result), "set_label,gamma,mean_J,violating_steps,excluded_starts"]
    for size, gamma in result.cost_pairs:
        cells = [
            c for c in result.cells
            if c.size == size and c.gamma == gamma and c.error is None
        ]
        viol = sum(c.cost_violations for c in cells)
        excl = sum(c.cost_excluded for c in cells)
        lines.append(
            f"S{size},{_fmt(gamma)},{_fmt(result.mean_cost(size, gamma))},{viol},{excl}"
        )
    _write(Path(path), lines)


def write_markdown_report(result: ExperimentResult, path) -> None:
    cfg = result.config
    lines = [
        "# Surrogate controller evaluation",
        "",
        f"- problem fingerprint: `{result.problem_hash}`",
        f"- base seed: {cfg.base_seed}",
        f"- invariant set: {result.c_inf.nrows} facets, "
        f"fixed point after {result.cinf_iterations} iterations",
        f"- networks per cell: {cfg.networks_per_cell}, "
        f"hidden widths {list(cfg.hidden_widths)}, "
        f"closed loop {cfg.steps} steps over {cfg.n_traj} trajectories",
        "",
        "## Test NMSE by regularization constant",
        "",
        "Cell values are 10*log10 of the NMSE averaged over the networks of",
        "the cell. Lower is better.",
        "",
        "| Set | " + " | ".join(f"gamma={_fmt(g)}" for g in cfg.gammas) + " | best gamma |",
        "|---" * (len(cfg.gammas) + 2) + "|",
    ]
    for size in cfg.train_sizes:
        cells = " | ".join(f"{result.cell_mean_db(size, g):.4f}" for g in cfg.gammas)
        lines.append(f"| S({size}) | {cells} | {_fmt(result.best_gamma(size))} |")

    lines += [
        "",
        "## NMSE with and without gradient information",
        "",
        "| Set | NMSE [dB] (no regularization) | NMSE [dB] (best) | best gamma |",
        "|---|---|---|---|",
    ]
    for size in cfg.train_sizes:
        no_reg = result.cell_mean_db(size, 0.0) if 0.0 in cfg.gammas else float("nan")
        best_g = result.best_gamma(size)
        lines.append(
            f"| S({size}) | {no_reg:.4f} | {result.cell_mean_db(size, best_g):.4f} "
            f"| {_fmt(best_g)} |"
        )

    lines += [
        "",
        "## Closed-loop control cost",
        "",
        "| {Set, gamma} | J (avg. over test trajectories) |",
        "|---|---|",
    ]
    for size, gamma in result.cost_pairs:
        lines.append(f"| {{S({size}), {_fmt(gamma)}}} | {result.mean_cost(size, gamma):.4f} |")

    if result.failures:
        lines += ["", "## Failed cells", ""]
        for c in result.failures:
            lines.append(f"- size={c.size} gamma={_fmt(c.gamma)} replicate={c.replicate}: {c.error}")

    _write(Path(path), lines)


def _axes(title: str, xlabel: str, ylabel: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return fig, ax


def plot_invariant_samples(c_inf: HPolytope, path, n_points: int = 1000, seed: int = 0) -> None:
    """Scatter of hit-and-run points inside the (2D) invariant set boundary."""
    if c_inf.dim != 2:
        raise ValueError("sample figure is only drawn for 2-dimensional sets")
    pts = sample_states(c_inf, n_points, seed)
    fig, ax = _axes(f"{n_points} hit-and-run samples of the invariant set", "x1", "x2")

    lo, hi = pts.min() - 1.0, pts.max() + 1.0
    grid = np.linspace(lo, hi, 400)
    Xg, Yg = np.meshgrid(grid, grid)
    vals = np.max(
        c_inf.C @ np.stack([Xg.ravel(), Yg.ravel()]) - c_inf.d[:, None], axis=0
    ).reshape(Xg.shape)
    ax.contour(Xg, Yg, vals, levels=[0.0], colors="black", linewidths=1.2)
    ax.scatter(pts[:, 0], pts[:, 1], s=4, alpha=0.5)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    _close(fig)


def plot_nmse_vs_gamma(result: ExperimentResult, path) -> None:
    cfg = result.config
    fig, ax = _axes("Test NMSE vs regularization constant", "gamma", "NMSE [dB]")
    xs = np.arange(len(cfg.gammas))
    for size in cfg.train_sizes:
        ys = [result.cell_mean_db(size, g) for g in cfg.gammas]
        ax.plot(xs, ys, marker="o", label=f"S({size})")
    ax.set_xticks(xs, [_fmt(g) for g in cfg.gammas])
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    _close(fig)


def plot_control_costs(result: ExperimentResult, path) -> None:
    fig, ax = _axes("Closed-loop cost per test trajectory", "trajectory", "J")
    for size, gamma in result.cost_pairs:
        avg = result.averaged_trajectory_costs(size, gamma)
        if avg.size:
            ax.plot(np.arange(avg.size), avg, lw=1.0, label=f"{{S({size}), gamma={_fmt(gamma)}}}")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    _close(fig)


def _close(fig) -> None:
    import matplotlib.pyplot as plt

    plt.close(fig)


def write_all(result: ExperimentResult, out_dir) -> list:
    """Write every report artifact into out_dir; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, writer):
        p = out / name
        writer(p)
        paths.append(p)

    emit("nmse_runs.csv", lambda p: write_nmse_runs_csv(result, p))
    emit("nmse_summary.csv", lambda p: write_nmse_summary_csv(result, p))
    emit("cost_runs.csv", lambda p: write_cost_runs_csv(result, p))
    emit("cost_summary.csv", lambda p: write_cost_summary_csv(result, p))
    emit("report.md", lambda p: write_markdown_report(result, p))
    if result.c_inf.dim == 2:
        emit(
            "fig_invariant_samples.png",
            lambda p: plot_invariant_samples(
                result.c_inf, p, seed=result.config.base_seed + 1
            ),
        )
    emit("fig_nmse_vs_gamma.png", lambda p: plot_nmse_vs_gamma(result, p))
    emit("fig_control_cost.png", lambda p: plot_control_costs(result, p))
    return paths
