"""Full evaluation grid: train sizes x regularization constants x replicates.

Each grid cell gets a fresh seeded dataset and training run. Cells are
independent jobs executed on a process pool; results are aggregated in
task order, so reruns with the same configuration reproduce every output
byte for byte.

Seed mixing: every stream seed is

    base_seed + 1_000_000*(size_index+1) + 10_000*(gamma_index+1)
              + 100*replicate + stream

with stream 0 for the training dataset and 1 for the network, so any cell
can be regenerated in isolation. Test sets use base_seed + 500_000 + size
index, cost-evaluation initial states use base_seed + 600_000.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, generate
from .evaluation import nmse, trajectory_costs
from .invariant import max_control_invariant
from .mpc import MpcProblem, condense, problem_hash
from .neural import MlpArchitecture, TrainConfig, forward, train
from .polytope import HPolytope
from .sampling import sample_states

TEST_SEED_OFFSET = 500_000
TRAJ_SEED_OFFSET = 600_000


@dataclass(frozen=True)
class ExperimentConfig:
    problem_path: str
    gammas: tuple = (0.0, 0.1, 1.0, 10.0)
    train_sizes: tuple = (25, 50, 100)
    networks_per_cell: int = 10
    test_size: int = 100
    n_traj: int = 100
    steps: int = 3
    base_seed: int = 2024
    hidden_widths: tuple = (16, 16)
    batch_size: int = 5
    learning_rate: float = 1e-3
    loss_target: float = 0.01
    max_epochs: int = 50_000
    act_tol: float = 1e-7
    jobs: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "train_sizes", tuple(int(s) for s in self.train_sizes))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if any(g < 0 for g in self.gammas) or not self.gammas:
            raise ValueError("gammas must be a nonempty list of nonnegative values")
        for name in ("networks_per_cell", "test_size", "n_traj", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not self.train_sizes or any(s < 1 for s in self.train_sizes):
            raise ValueError("train_sizes must be a nonempty list of positive counts")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict) or "problem" not in doc:
            raise ValueError(f"{path}: config must be an object with a 'problem' entry")
        known = {
            "gammas", "train_sizes", "networks_per_cell", "test_size", "n_traj",
            "steps", "base_seed", "hidden_widths", "batch_size", "learning_rate",
            "loss_target", "max_epochs", "act_tol", "jobs",
        }
        extra = set(doc) - known - {"problem"}
        if extra:
            raise ValueError(f"{path}: unknown config fields {sorted(extra)}")
        problem = Path(doc["problem"])
        if not problem.is_absolute():
            problem = path.parent / problem
        kwargs = {k: doc[k] for k in known if k in doc}
        for tup in ("gammas", "train_sizes", "hidden_widths"):
            if tup in kwargs:
                kwargs[tup] = tuple(kwargs[tup])
        return cls(problem_path=str(problem), **kwargs)

    def to_json_dict(self) -> dict:
        return {
            "problem": self.problem_path,
            "gammas": list(self.gammas),
            "train_sizes": list(self.train_sizes),
            "networks_per_cell": self.networks_per_cell,
            "test_size": self.test_size,
            "n_traj": self.n_traj,
            "steps": self.steps,
            "base_seed": self.base_seed,
            "hidden_widths": list(self.hidden_widths),
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "loss_target": self.loss_target,
            "max_epochs": self.max_epochs,
            "act_tol": self.act_tol,
        }


def cell_seed(base_seed: int, size_idx: int, gamma_idx: int, replicate: int, stream: int) -> int:
    return base_seed + 1_000_000 * (size_idx + 1) + 10_000 * (gamma_idx + 1) + 100 * replicate + stream


@dataclass(frozen=True)
class CellResult:
    size: int
    gamma: float
    replicate: int
    nmse_ratio: float
    nmse_db: float
    epochs_run: int
    stop_reason: str
    trajectory_costs: np.ndarray | None
    cost_violations: int
    cost_excluded: int
    error: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem_hash: str
    c_inf: HPolytope
    cinf_iterations: int
    cells: list = field(default_factory=list)
    cost_pairs: tuple = ()

    @property
    def failures(self) -> list:
        return [c for c in self.cells if c.error is not None]

    def cell_mean_db(self, size: int, gamma: float) -> float:
        ratios = [
            c.nmse_ratio for c in self.cells
            if c.size == size and c.gamma == gamma and c.error is None
        ]
        if not ratios:
            return float("nan")
        return float(10.0 * np.log10(np.mean(ratios)))

    def best_gamma(self, size: int) -> float:
        gammas = self.config.gammas
        scores = [self.cell_mean_db(size, g) for g in gammas]
        return float(gammas[int(np.nanargmin(scores))])

    def mean_cost(self, size: int, gamma: float) -> float:
        per = [
            c.trajectory_costs for c in self.cells
            if c.size == size and c.gamma == gamma and c.error is None
            and c.trajectory_costs is not None and c.trajectory_costs.size
        ]
        if not per:
            return float("nan")
        return float(np.mean([t.mean() for t in per]))

    def averaged_trajectory_costs(self, size: int, gamma: float) -> np.ndarray:
        per = [
            c.trajectory_costs for c in self.cells
            if c.size == size and c.gamma == gamma and c.error is None
            and c.trajectory_costs is not None and c.trajectory_costs.size
        ]
        if not per:
            return np.zeros(0)
        shortest = min(t.size for t in per)
        return np.mean([t[:shortest] for t in per], axis=0)


def default_cost_pairs(cfg: ExperimentConfig) -> tuple:
    """The data-efficiency comparison: small set with gradients against
    large set without, falling back gracefully for reduced grids."""
    small, large = min(cfg.train_sizes), max(cfg.train_sizes)
    nonzero = [g for g in cfg.gammas if g > 0]
    g_small = 1.0 if 1.0 in cfg.gammas else (nonzero[0] if nonzero else cfg.gammas[0])
    g_large = 0.0 if 0.0 in cfg.gammas else min(cfg.gammas)
    return ((small, g_small), (large, g_large))


def _run_cell(task: dict) -> CellResult:
    """One grid cell: fresh dataset, one training run, both metrics."""
    cfg: ExperimentConfig = task["cfg"]
    problem = MpcProblem.from_dict(task["problem"])
    c_inf = HPolytope.from_dict(task["c_inf"])
    size_idx, gamma_idx, rep = task["size_idx"], task["gamma_idx"], task["rep"]
    size = cfg.train_sizes[size_idx]
    gamma = cfg.gammas[gamma_idx]
    try:
        qp = condense(problem)
        ds = generate(
            problem, c_inf, size,
            seed=cell_seed(cfg.base_seed, size_idx, gamma_idx, rep, 0),
            kind="train", act_tol=cfg.act_tol, qp=qp,
        )
        arch = MlpArchitecture(problem.system.n, cfg.hidden_widths, problem.system.m)
        train_cfg = TrainConfig(
            gamma=gamma,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            loss_target=cfg.loss_target,
            max_epochs=cfg.max_epochs,
            seed=cell_seed(cfg.base_seed, size_idx, gamma_idx, rep, 1),
        )
        report = train(ds, arch, train_cfg)
        params = report.final_params

        preds = forward(params, np.asarray(task["test_x"]))
        quality = nmse(preds, np.asarray(task["test_u"]))

        costs = None
        violations = excluded = 0
        if task["with_cost"]:
            sweep = trajectory_costs(
                problem, lambda x: forward(params, x), np.asarray(task["traj_x0"]), cfg.steps
            )
            costs, violations, excluded = sweep.per_trajectory, sweep.violations, sweep.n_excluded
        return CellResult(
            size=size, gamma=gamma, replicate=rep,
            nmse_ratio=quality.ratio, nmse_db=quality.db,
            epochs_run=report.epochs_run, stop_reason=report.stop_reason.value,
            trajectory_costs=costs, cost_violations=violations, cost_excluded=excluded,
        )
    except Exception as exc:  # cell failures are recorded, the grid continues
        return CellResult(
            size=size, gamma=gamma, replicate=rep,
            nmse_ratio=float("nan"), nmse_db=float("nan"),
            epochs_run=0, stop_reason="error",
            trajectory_costs=None, cost_violations=0, cost_excluded=0,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_experiment(
    cfg: ExperimentConfig,
    problem: MpcProblem,
    jobs: int | None = None,
    max_cinf_iter: int = 100,
) -> ExperimentResult:
    inv = max_control_invariant(
        problem.X, problem.U_set, problem.system.A, problem.system.B, max_iter=max_cinf_iter
    )
    if not inv.converged:
        raise RuntimeError(f"invariant set did not converge within {max_cinf_iter} iterations")

    qp = condense(problem)
    cost_pairs = default_cost_pairs(cfg)

    # one test set per train size, as in the evaluation protocol
    test_sets: dict[int, Dataset] = {}
    for i, size in enumerate(cfg.train_sizes):
        test_sets[size] = generate(
            problem, inv.c_inf, cfg.test_size,
            seed=cfg.base_seed + TEST_SEED_OFFSET + i,
            kind="test", act_tol=cfg.act_tol, qp=qp,
        )
    traj_x0 = sample_states(inv.c_inf, cfg.n_traj, cfg.base_seed + TRAJ_SEED_OFFSET)

    tasks = []
    for si, size in enumerate(cfg.train_sizes):
        for gi, gamma in enumerate(cfg.gammas):
            for rep in range(cfg.networks_per_cell):
                tasks.append(
                    {
                        "cfg": cfg,
                        "problem": problem.to_dict(),
                        "c_inf": inv.c_inf.to_dict(),
                        "size_idx": si,
                        "gamma_idx": gi,
                        "rep": rep,
                        "test_x": test_sets[size].states().tolist(),
                        "test_u": test_sets[size].inputs().tolist(),
                        "traj_x0": traj_x0.tolist(),
                        "with_cost": (size, gamma) in cost_pairs,
                    }
                )

    jobs = jobs if jobs is not None else cfg.jobs
    if jobs is None or jobs > 1:
        # heaviest cells first so no straggler idles the pool at the end;
        # results are restored to canonical grid order afterwards
        def weight(item):
            task = item[1]
            size = cfg.train_sizes[task["size_idx"]]
            return size * (2.0 if cfg.gammas[task["gamma_idx"]] > 0 else 1.0)

        order = sorted(enumerate(tasks), key=weight, reverse=True)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            shuffled = list(pool.map(_run_cell, [t for _, t in order], chunksize=1))
        cells = [None] * len(tasks)
        for (idx, _), cell in zip(order, shuffled):
            cells[idx] = cell
    else:
        cells = [_run_cell(t) for t in tasks]

    return ExperimentResult(
        config=cfg,
        problem_hash=problem_hash(problem),
        c_inf=inv.c_inf,
        cinf_iterations=inv.iterations,
        cells=cells,
        cost_pairs=cost_pairs,
    )
