"""Distance-based cutoff functions subordinate to capacitors.

All cutoffs sample a closed-form radial profile at the vertices; the P1
interpolant then carries the profile's Lipschitz structure up to mesh
resolution.  Along any edge the difference quotient of a distance-based
cutoff never exceeds the claimed budget, because graph distances to the
center differ by at most the edge length.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .decomposition import Capacitor
from .geometry import DiscreteSpace, Mesh, VertexSet


def profile_f(t):
    """The basic profile: 1 on [0, 1/2], 2 - 2t on [1/2, 1], 0 beyond.

    Lipschitz with constant 2.  Accepts scalars or arrays; negative
    arguments are rejected.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("profile argument must be nonnegative")
    out = np.clip(2.0 - 2.0 * arr, 0.0, 1.0)
    if np.isscalar(t) or arr.ndim == 0:
        return float(out)
    return out


@dataclass
class TestFunction:
    """Vertex values in [0, 1] with recorded support, plateau and
    gradient budget (1/length units)."""

    values: np.ndarray
    support: VertexSet
    plateau: VertexSet
    lipschitz_budget: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["vertex", "value"])
            for i, v in enumerate(self.values):
                writer.writerow([i, f"{v:.17g}"])


def _pack(space: DiscreteSpace, values: np.ndarray,
          budget: float) -> TestFunction:
    support = VertexSet.from_indices(space, np.flatnonzero(values > 0.0))
    plateau = VertexSet.from_indices(space, np.flatnonzero(values == 1.0))
    return TestFunction(values=values, support=support, plateau=plateau,
                        lipschitz_budget=float(budget))


def ball_cutoff(space: DiscreteSpace, center: int, r: float) -> TestFunction:
    """1 on the closed r-ball, the basic profile of dist/(2r) out to 2r,
    zero beyond; gradient budget 1/r."""
    if r <= 0:
        raise ValueError("radius must be positive")
    d = space.dist_matrix[center]
    values = np.clip(2.0 - d / r, 0.0, 1.0)  # = profile_f(d / (2 r))
    return _pack(space, values, 1.0 / r)


def annulus_cutoff(space: DiscreteSpace, center: int, r: float,
                   R: float) -> TestFunction:
    """Ramp up across [r/2, r], plateau on [r, R], ramp down across
    [R, 2R]; gradient budget 2/r (the inner collar dominates)."""
    if not 0 < r < R:
        raise ValueError("annulus radii must satisfy 0 < r < R")
    d = space.dist_matrix[center]
    up = np.clip(2.0 * d / r - 1.0, 0.0, 1.0)    # = 1 - profile_f(d / r)
    down = np.clip(2.0 - d / R, 0.0, 1.0)        # = profile_f(d / (2 R))
    return _pack(space, np.minimum(up, down), 2.0 / r)


def _measured_budget(space: DiscreteSpace, values: np.ndarray,
                     support: np.ndarray) -> float:
    """Largest difference quotient seen on pairs meeting the support:
    mesh edges when adjacency is available, all pairs otherwise."""
    D = space.dist_matrix
    if space.adjacency is not None:
        adj = space.adjacency.tocoo()
        mask = (adj.row < adj.col)
        rows, cols = adj.row[mask], adj.col[mask]
        touch = np.zeros(space.n, dtype=bool)
        touch[support] = True
        keep = touch[rows] | touch[cols]
        rows, cols = rows[keep], cols[keep]
        if len(rows) == 0:
            return 0.0
        return float(np.max(np.abs(values[rows] - values[cols]) / D[rows, cols]))
    diffs = np.abs(values[support][:, None] - values[None, :])
    dists = D[np.ix_(support, np.arange(space.n))]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(dists > 0, diffs / dists, 0.0)
    return float(q.max()) if q.size else 0.0


def union_plateau(space: DiscreteSpace, centers, r0: float) -> TestFunction:
    """Pointwise max of per-ball profiles: 1 on every r0-ball, linear decay
    to zero at 5 r0.  Centers must be pairwise at least 4 r0 apart; the
    budget is the measured difference quotient (the constant in front of
    1/r0 is reported through it, not assumed)."""
    if r0 <= 0:
        raise ValueError("radius must be positive")
    centers = np.asarray(centers, dtype=np.int64)
    if len(centers) == 0:
        raise ValueError("at least one center required")
    D = space.dist_matrix
    if len(centers) > 1:
        cd = D[np.ix_(centers, centers)].copy()
        np.fill_diagonal(cd, np.inf)
        if cd.min() < 4.0 * r0:
            raise ValueError("separation violation: centers closer than 4 r0")
    dmin = D[centers].min(axis=0)
    values = np.clip((5.0 * r0 - dmin) / (4.0 * r0), 0.0, 1.0)
    support = np.flatnonzero(values > 0.0)
    budget = _measured_budget(space, values, support)
    if budget == 0.0:
        budget = 1.0 / (4.0 * r0)  # isolated support; continuum slope
    return _pack(space, values, budget)


def cutoff_for_capacitor(space: DiscreteSpace, cap: Capacitor) -> TestFunction:
    """Build the cutoff the capacitor prescribes and check it is admissible
    (supported in the outer set, equal to one on the inner set)."""
    if cap.kind == "annulus_pair":
        if cap.inner_radius > 0:
            tf = annulus_cutoff(space, cap.center, cap.inner_radius,
                                cap.outer_radius)
        else:
            tf = ball_cutoff(space, cap.center, cap.outer_radius)
    elif cap.kind == "ball_union":
        tf = union_plateau(space, cap.centers, cap.r0)
    else:
        raise ValueError(f"unknown capacitor kind {cap.kind!r}")
    if not tf.support.issubset(cap.outer):
        raise ValueError("cutoff support escapes the capacitor outer set")
    if not cap.inner.issubset(tf.plateau):
        raise ValueError("cutoff plateau misses part of the inner set")
    return tf


def trim_to_interior(space: DiscreteSpace, tf: TestFunction) -> TestFunction:
    """Zero the function on support vertices with a mesh neighbor outside
    the support.

    Trimmed supports sit one edge hop inside the original ones, so two
    cutoffs whose outer sets are merely vertex-disjoint can never share a
    triangle after trimming (triangle corners are pairwise adjacent).  The
    budget is re-measured from the trimmed values.  No-op without mesh
    adjacency.
    """
    if space.adjacency is None or tf.support.size == 0:
        return tf
    mask = tf.support.mask(space.n)
    sup = tf.support.members
    outside_deg = space.adjacency[sup] @ (~mask).astype(np.float64)
    keep = mask.copy()
    keep[sup[outside_deg > 0]] = False
    values = np.where(keep, tf.values, 0.0)
    support = np.flatnonzero(values > 0.0)
    budget = _measured_budget(space, values, support)
    return _pack(space, values, budget if budget > 0 else tf.lipschitz_budget)


def max_edge_quotient(mesh: Mesh, tf: TestFunction) -> float:
    """Largest |du|/length over mesh edges, as a multiple of the budget."""
    pairs, lengths = mesh.edges(metric="base")
    du = np.abs(tf.values[pairs[:, 0]] - tf.values[pairs[:, 1]])
    q = float((du / lengths).max())
    return q / tf.lipschitz_budget if tf.lipschitz_budget > 0 else 0.0
