"""Training and test triplets (state, optimal input, law gradient).

Datasets are bound to the generating problem through its fingerprint and
persist as a single JSON document: metadata envelope plus flat row-major
sample arrays. Serialization is byte-deterministic for a fixed dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mpc import CondensedQp, MpcProblem, condense, problem_hash, qp_solve, sensitivity
from .polytope import HPolytope
from .qp import ACT_TOL, QpStatus
from .sampling import sample_states

FORMAT_VERSION = "v1"


class DatasetFormatError(ValueError):
    """A dataset file failed to parse or validate."""


class DatasetGenerationError(RuntimeError):
    """A sampled state turned out infeasible; the sampling domain is wrong."""


@dataclass(frozen=True)
class SampleTriplet:
    x: np.ndarray
    u: np.ndarray
    u_grad: np.ndarray
    on_boundary: bool = False

    def __eq__(self, other):
        if not isinstance(other, SampleTriplet):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.u_grad, other.u_grad)
            and self.on_boundary == other.on_boundary
        )


@dataclass
class Dataset:
    problem_hash: str
    seed: int
    kind: str  # "train" or "test"
    state_dim: int
    input_dim: int
    samples: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("train", "test"):
            raise ValueError(f"kind must be 'train' or 'test', got {self.kind!r}")

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.problem_hash == other.problem_hash
            and self.seed == other.seed
            and self.kind == other.kind
            and self.state_dim == other.state_dim
            and self.input_dim == other.input_dim
            and self.samples == other.samples
        )

    def states(self) -> np.ndarray:
        return np.asarray([s.x for s in self.samples])

    def inputs(self) -> np.ndarray:
        return np.asarray([s.u for s in self.samples])

    def gradients(self) -> np.ndarray:
        return np.asarray([s.u_grad for s in self.samples])


def generate(
    problem: MpcProblem,
    c_inf: HPolytope,
    n: int,
    seed: int,
    kind: str = "train",
    act_tol: float = ACT_TOL,
    qp: CondensedQp | None = None,
) -> Dataset:
    """Sample n states from c_inf and solve/differentiate the law at each.

    Gradients are computed for test datasets too; the evaluation path just
    never reads them.
    """
    if qp is None:
        qp = condense(problem)
    states = sample_states(c_inf, n, seed)
    ds = Dataset(
        problem_hash=problem_hash(problem),
        seed=seed,
        kind=kind,
        state_dim=problem.system.n,
        input_dim=problem.system.m,
    )
    for x in states:
        sol = qp_solve(qp, x, act_tol=act_tol)
        if sol.status is not QpStatus.OPTIMAL:
            raise DatasetGenerationError(
                f"sampled state {x.tolist()} is MPC-infeasible; "
                "the invariant set does not match this problem"
            )
        grad = sensitivity(qp, sol, x)
        ds.samples.append(SampleTriplet(x=x.copy(), u=sol.u0, u_grad=grad, on_boundary=sol.on_boundary))
    return ds


def save(ds: Dataset, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": ds.kind,
        "seed": ds.seed,
        "problem_hash": ds.problem_hash,
        "state_dim": ds.state_dim,
        "input_dim": ds.input_dim,
        "grad_shape": [ds.input_dim, ds.state_dim],
        "x": [s.x.tolist() for s in ds.samples],
        "u": [s.u.tolist() for s in ds.samples],
        "u_grad": [s.u_grad.ravel().tolist() for s in ds.samples],
        "on_boundary": [bool(s.on_boundary) for s in ds.samples],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load(path) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise DatasetFormatError(f"{path}: expected a JSON object at top level")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version!r}")
    for key in ("kind", "seed", "problem_hash", "state_dim", "input_dim", "x", "u", "u_grad", "on_boundary"):
        if key not in doc:
            raise DatasetFormatError(f"{path}: missing field {key!r}")
    n_dim, m_dim = int(doc["state_dim"]), int(doc["input_dim"])
    ds = Dataset(
        problem_hash=str(doc["problem_hash"]),
        seed=int(doc["seed"]),
        kind=str(doc["kind"]),
        state_dim=n_dim,
        input_dim=m_dim,
    )
    rows = [doc["x"], doc["u"], doc["u_grad"], doc["on_boundary"]]
    if len({len(r) for r in rows}) != 1:
        raise DatasetFormatError(f"{path}: sample arrays have inconsistent lengths")
    for i, (x, u, g, flag) in enumerate(zip(*rows)):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        g = np.asarray(g, dtype=float)
        if x.shape != (n_dim,) or u.shape != (m_dim,) or g.size != n_dim * m_dim:
            raise DatasetFormatError(f"{path}: sample {i} has inconsistent shapes")
        ds.samples.append(
            SampleTriplet(x=x, u=u, u_grad=g.reshape(m_dim, n_dim), on_boundary=bool(flag))
        )
    return ds


def verify_problem_binding(ds: Dataset, problem: MpcProblem) -> None:
    """Refuse to pair a dataset with a problem it was not generated from."""
    expect = problem_hash(problem)
    if ds.problem_hash != expect:
        raise ValueError(
            f"dataset was generated from problem {ds.problem_hash}, "
            f"but the given problem hashes to {expect}; refusing to mix artifacts"
        )
