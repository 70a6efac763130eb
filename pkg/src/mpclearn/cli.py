"""Command-line pipeline: invariant set, sampling, data, training, evaluation.

Exit codes: 0 success, 2 usage or parse failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_io
from . import neural
from .dataset import DatasetFormatError
from .evaluation import evaluate_surrogate
from .experiment import ExperimentConfig, run_experiment
from .invariant import max_control_invariant
from .mpc import MpcProblem, problem_hash, two_dim_benchmark
from .polytope import GeometryError, HPolytope, membership_mask
from .qp import QpSolverError
from .report import write_all
from .sampling import SamplerConfig, hit_and_run

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _load_json(path: Path, what: str) -> dict:
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValueError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return doc


def _load_problem(path: str) -> MpcProblem:
    return MpcProblem.from_dict(_load_json(Path(path), "problem"))


def _load_polytope(path: str) -> HPolytope:
    return HPolytope.from_dict(_load_json(Path(path), "polytope"))


def cmd_init(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem_path = out / "problem_2d.json"
    problem_path.write_text(
        json.dumps(two_dim_benchmark().to_dict(), sort_keys=True, indent=1) + "\n"
    )
    cfg = ExperimentConfig(problem_path="problem_2d.json")
    (out / "experiment.json").write_text(json.dumps(cfg.to_json_dict(), sort_keys=True, indent=1) + "\n")
    print(f"wrote {problem_path} and {out / 'experiment.json'}")
    return EXIT_OK


def cmd_cinf(args) -> int:
    problem = _load_problem(args.problem)
    result = max_control_invariant(
        problem.X, problem.U_set, problem.system.A, problem.system.B,
        max_iter=args.max_iter, tol=args.tol,
    )
    doc = {
        "problem_hash": problem_hash(problem),
        "converged": result.converged,
        "iterations": result.iterations,
        **result.c_inf.to_dict(),
    }
    Path(args.out).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    if args.log:
        Path(args.log).write_text(
            "iterations,converged,rows\n"
            f"{result.iterations},{int(result.converged)},{result.c_inf.nrows}\n"
        )
    if not result.converged:
        print(f"invariant set did not converge within {args.max_iter} iterations", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"invariant set: {result.c_inf.nrows} facets after {result.iterations} iterations -> {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    poly = _load_polytope(args.polytope)
    cfg = SamplerConfig(
        seed=args.seed, count=args.count, two_sided=args.two_sided,
        burn_in=args.burn_in, thin=args.thin,
    )
    points = hit_and_run(poly, cfg)
    if not membership_mask(poly, points, 1e-9).all():
        print("sampler produced a point outside the polytope", file=sys.stderr)
        return EXIT_NUMERICAL
    header = ",".join(f"x{i + 1}" for i in range(poly.dim))
    rows = [header] + [",".join(repr(float(v)) for v in p) for p in points]
    Path(args.out).write_text("\n".join(rows) + "\n")
    print(f"wrote {args.count} points -> {args.out}")
    return EXIT_OK


def cmd_gen(args) -> int:
    problem = _load_problem(args.problem)
    cinf_doc = _load_json(Path(args.cinf), "invariant set")
    if cinf_doc.get("problem_hash") not in (None, problem_hash(problem)):
        raise ValueError(
            f"invariant set {args.cinf} belongs to problem {cinf_doc['problem_hash']}, "
            f"not to {problem_hash(problem)}"
        )
    c_inf = HPolytope.from_dict(cinf_doc)
    ds = ds_io.generate(
        problem, c_inf, args.count, seed=args.seed, kind=args.kind, act_tol=args.act_tol
    )
    ds_io.save(ds, args.out)
    flagged = sum(s.on_boundary for s in ds.samples)
    print(f"wrote {len(ds)} {args.kind} triplets ({flagged} boundary-flagged) -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    problem = _load_problem(args.problem)
    ds = ds_io.load(args.dataset)
    ds_io.verify_problem_binding(ds, problem)
    hidden = tuple(int(w) for w in args.hidden.split(",") if w)
    arch = neural.MlpArchitecture(ds.state_dim, hidden, ds.input_dim)
    cfg = neural.TrainConfig(
        gamma=args.gamma,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        loss_target=args.loss_target,
        max_epochs=args.max_epochs,
        seed=args.seed,
    )
    report = neural.train(ds, arch, cfg)
    neural.save_params(
        report.final_params,
        args.out,
        meta={
            "problem_hash": ds.problem_hash,
            "dataset_seed": ds.seed,
            "seed": cfg.seed,
            "gamma": cfg.gamma,
            "epochs_run": report.epochs_run,
            "final_loss": report.loss_history[-1],
            "stop_reason": report.stop_reason.value,
        },
    )
    if args.loss_history:
        neural.write_loss_history(report.loss_history, args.loss_history)
    print(
        f"trained for {report.epochs_run} epochs "
        f"(final loss {report.loss_history[-1]:.6g}, {report.stop_reason.value}) -> {args.out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    problem = _load_problem(args.problem)
    test_ds = ds_io.load(args.test_dataset)
    params, meta = neural.load_params(args.params)
    if meta.get("problem_hash") not in (None, problem_hash(problem)):
        raise ValueError(
            f"parameters {args.params} were trained against problem "
            f"{meta['problem_hash']}, not {problem_hash(problem)}"
        )
    c_inf = HPolytope.from_dict(_load_json(Path(args.cinf), "invariant set"))
    quality, costs = evaluate_surrogate(
        params, test_ds, problem, c_inf, n_traj=args.n_traj, steps=args.steps, seed=args.seed
    )
    lines = [
        f"# problem_hash={problem_hash(problem)} seed={args.seed}",
        "metric,value",
        f"nmse_ratio,{quality.ratio!r}",
        f"nmse_db,{quality.db!r}",
        f"mean_J,{costs.mean!r}",
        f"violating_steps,{costs.violations}",
        f"excluded_starts,{costs.n_excluded}",
    ]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"NMSE {quality.db:.2f} dB, mean J {costs.mean:.4f} -> {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_json(Path(args.config))
    if args.jobs is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "jobs": args.jobs})
    problem = _load_problem(cfg.problem_path)
    result = run_experiment(cfg, problem, jobs=cfg.jobs)
    paths = write_all(result, args.out_dir)
    for p in paths:
        print(f"wrote {p}")
    if result.failures:
        print(f"{len(result.failures)} of {len(result.cells)} cells failed", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpclearn",
        description="Learn and evaluate neural surrogates of linear MPC controllers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write the benchmark problem and a default experiment config")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("cinf", help="compute the maximal control invariant set")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-7)
    p.set_defaults(func=cmd_cinf)

    p = sub.add_parser("sample", help="hit-and-run sample a polytope to CSV")
    p.add_argument("--polytope", required=True, help="polytope JSON ({'C': ..., 'd': ...})")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--two-sided", action="store_true")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gen", help="generate a dataset of (state, input, gradient) triplets")
    p.add_argument("--problem", required=True)
    p.add_argument("--cinf", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--kind", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--act-tol", type=float, default=1e-7)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a surrogate network on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", default="16,16", help="comma-separated hidden widths")
    p.add_argument("--batch-size", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--loss-target", type=float, default=0.01)
    p.add_argument("--max-epochs", type=int, default=50_000)
    p.add_argument("--loss-history", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained parameters on a test dataset")
    p.add_argument("--params", required=True)
    p.add_argument("--test-dataset", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--cinf", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-traj", type=int, default=100)
    p.add_argument("--steps", type=int, default=3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the full train-size x gamma grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, DatasetFormatError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GeometryError, QpSolverError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
