"""Hit-and-run sampling from a bounded halfspace polytope.

The default stepping keeps only positive ray intersections (walk forward
along the drawn direction); the classical symmetric variant, which is the
one with uniform stationary distribution, is available via `two_sided`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polytope import GeometryError, HPolytope, chebyshev_center, contains

_DENOM_TOL = 1e-14


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    count: int
    start: np.ndarray | None = None  # None -> chebyshev center
    two_sided: bool = False
    burn_in: int = 0
    thin: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("burn_in must be >= 0 and thin >= 1")


def _step(P: HPolytope, x: np.ndarray, rng: np.random.Generator, two_sided: bool) -> np.ndarray:
    direction = rng.standard_normal(P.dim)
    direction /= np.linalg.norm(direction)
    proj = P.C @ direction
    gap = P.d - P.C @ x

    forward = proj > _DENOM_TOL
    if not forward.any():
        raise GeometryError("polytope unbounded along sampled direction")
    lam_hi = np.min(gap[forward] / proj[forward])

    if two_sided:
        backward = proj < -_DENOM_TOL
        if not backward.any():
            raise GeometryError("polytope unbounded along sampled direction")
        lam_lo = np.max(gap[backward] / proj[backward])
        lam = rng.uniform(lam_lo, lam_hi)
    else:
        lam = rng.uniform(0.0, lam_hi)
    return x + lam * direction


def hit_and_run(P: HPolytope, cfg: SamplerConfig) -> np.ndarray:
    """Markov chain of `count` points; the first emitted point is the start.

    Deterministic in (P, cfg): the direction is a normalized standard
    normal draw and the step length is uniform over the admissible
    interval, both from a generator seeded with cfg.seed.
    """
    if P.nrows == 0:
        raise GeometryError("cannot sample from the whole space")
    if cfg.start is None:
        x, radius = chebyshev_center(P)
        if radius <= 0.0:
            raise GeometryError("start point must be strictly interior")
    else:
        x = np.asarray(cfg.start, dtype=float).ravel()
        if x.size != P.dim:
            raise ValueError(f"start point must have dimension {P.dim}")
        if not contains(P, x):
            raise ValueError("given start point lies outside the polytope")
        x = x.copy()

    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.burn_in):
        x = _step(P, x, rng, cfg.two_sided)

    points = np.empty((cfg.count, P.dim))
    points[0] = x
    for i in range(1, cfg.count):
        for _ in range(cfg.thin):
            x = _step(P, x, rng, cfg.two_sided)
        points[i] = x
    return points


def sample_states(c_inf: HPolytope, n: int, seed: int, two_sided: bool = False) -> np.ndarray:
    """n states for dataset generation, chain started at the chebyshev center."""
    return hit_and_run(c_inf, SamplerConfig(seed=seed, count=n, two_sided=two_sided))
