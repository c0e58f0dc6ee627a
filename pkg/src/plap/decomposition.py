"""Decompositions of a metric-measure space by capacitors.

Three constructions, all emitting certificates whose postconditions
(disjointness, measure floors, separations) are recomputed from the output
sets before returning:

* a greedy growing-ball search packing k annuli whose doubled annuli are
  pairwise disjoint, with the measure floor maximized by bisection;
* a single capacitor (A, D) built by the maximal-ball sweep, A a union of
  r-balls with 4r-separated centers and D the union of the 5r-balls;
* k such ball-union sets with pairwise separation at least 4r, built by
  iterating the sweep on the remaining measure.

All greedy comparisons use a relative tolerance band and lowest-vertex-id
tie-breaks, which keeps the discrete choices deterministic and invariant
under coordinate scaling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import DiscreteSpace, VertexSet, annulus_set, ball, covering_number

RELTOL = 1e-9
BISECTION_STEPS = 14
PLATEAU_SLACK = 1.25  # plateau radius relative to the tight measure radius


class DecompositionError(Exception):
    """Construction failed or a certified postcondition does not hold."""


@dataclass
class Capacitor:
    """Nested pair (inner, outer) with certified separation metadata.

    ``kind='annulus_pair'`` carries a center and radii (inner_radius = 0
    means a ball-type annulus, punctured at its center; the outer set is
    then the full doubled ball including the center, which is what the
    associated cutoff is supported on).  ``kind='ball_union'`` carries the
    ball centers and the ball radius r0.
    """

    inner: VertexSet
    outer: VertexSet
    separation: float
    kind: str
    center: Optional[int] = None
    inner_radius: float = 0.0
    outer_radius: Optional[float] = None
    centers: Optional[tuple] = None
    r0: Optional[float] = None


@dataclass
class DecompositionCertificate:
    """A family of capacitors with recomputed floors and disjointness."""

    capacitors: list
    k: int
    measure_floor: float
    disjoint: bool
    form: str  # "annuli" (iii-a) or "ball_unions" (iii-b)
    r0: Optional[float]
    c: float  # certified floor constant: measure_floor * k / total
    total_measure: float

    def to_json(self) -> str:
        caps = []
        for cap in self.capacitors:
            caps.append({
                "kind": cap.kind,
                "inner": [int(v) for v in cap.inner.members],
                "outer": [int(v) for v in cap.outer.members],
                "inner_measure": cap.inner.measure,
                "outer_measure": cap.outer.measure,
                "separation": cap.separation,
                "center": cap.center,
                "inner_radius": cap.inner_radius,
                "outer_radius": cap.outer_radius,
                "centers": list(cap.centers) if cap.centers is not None else None,
                "r0": cap.r0,
            })
        return json.dumps({
            "k": self.k,
            "form": self.form,
            "r0": self.r0,
            "c": self.c,
            "measure_floor": self.measure_floor,
            "disjoint": self.disjoint,
            "total_measure": self.total_measure,
            "capacitors": caps,
        })


def _pairwise_outer_disjoint(capacitors) -> bool:
    for i in range(len(capacitors)):
        for j in range(i + 1, len(capacitors)):
            if not capacitors[i].outer.isdisjoint(capacitors[j].outer):
                return False
    return True


def _set_distance(space: DiscreteSpace, a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 or len(b) == 0:
        return math.inf
    return float(space.dist_matrix[np.ix_(a, b)].min())


def _separation(space: DiscreteSpace, inner: VertexSet, outer: VertexSet) -> float:
    comp = np.setdiff1d(space.points, outer.members, assume_unique=False)
    return _set_distance(space, inner.members, comp)


def _certify(space, capacitors, form, r0) -> DecompositionCertificate:
    k = len(capacitors)
    for cap in capacitors:
        if not cap.inner.issubset(cap.outer):
            raise DecompositionError("inner set escapes its outer set")
    disjoint = _pairwise_outer_disjoint(capacitors)
    if not disjoint:
        raise DecompositionError("outer sets are not pairwise disjoint")
    floor = min(cap.inner.measure for cap in capacitors)
    total = space.total_measure
    return DecompositionCertificate(
        capacitors=capacitors, k=k, measure_floor=floor, disjoint=True,
        form=form, r0=r0, c=floor * k / total, total_measure=total,
    )


# ----------------------------------------------------------------------
# greedy annuli (growing balls, doubled balls removed)
# ----------------------------------------------------------------------


def _target_radii(space: DiscreteSpace, target: float):
    """Per-center tight radius at which the punctured ball measure reaches
    the target (inf where unreachable)."""
    sd, order, cum = space.sorted_structure()
    w = space.measure
    n = space.n
    jstar = np.sum(cum < target * (1.0 - RELTOL) + w[:, None], axis=1)
    reachable = jstar < n
    dstar = np.where(reachable, sd[np.arange(n), np.minimum(jstar, n - 1)], np.inf)
    return dstar


def _greedy_balls(space: DiscreteSpace, k: int, target: float,
                  radius_cap: float = math.inf, radius_floor: float = 0.0,
                  dstar=None, best_effort: bool = False):
    """Pack k ball-type annuli of punctured measure >= target and plateau
    radius >= radius_floor.

    The doubled balls (radius 2R) of distinct annuli are pairwise disjoint.
    Returns [(center, R)]; None on failure, or the partial packing when
    ``best_effort`` is set.  ``dstar`` may carry precomputed tight radii
    for the same target.
    """
    if dstar is None:
        dstar = _target_radii(space, target)
    n = space.n
    lo = np.maximum(dstar * (1.0 + 2.0 * RELTOL), radius_floor)

    d_block = np.full(n, np.inf)
    chosen = []
    D = space.dist_matrix
    for _ in range(k):
        hi = np.minimum(d_block, radius_cap) / 2.0
        feas = (dstar > 0) & np.isfinite(dstar) & (hi >= lo * (1.0 + RELTOL))
        if not feas.any():
            return chosen if best_effort else None
        dmin = dstar[feas].min()
        group = feas & (dstar <= dmin * (1.0 + RELTOL))
        center = int(np.argmax(group))
        R = min(hi[center],
                max(radius_floor, PLATEAU_SLACK * dstar[center]))
        chosen.append((center, float(R)))
        blocked = np.flatnonzero(D[center] < 2.0 * R)
        d_block = np.minimum(d_block, D[blocked].min(axis=0))
    return chosen


def _annuli_certificate(space, chosen, r0=None) -> DecompositionCertificate:
    caps = []
    for center, R in chosen:
        inner = annulus_set(space, center, 0.0, R)
        outer = VertexSet.from_indices(
            space, np.flatnonzero(space.dist_matrix[center] < 2.0 * R))
        caps.append(Capacitor(
            inner=inner, outer=outer,
            separation=_separation(space, inner, outer),
            kind="annulus_pair", center=center,
            inner_radius=0.0, outer_radius=R,
        ))
    return _certify(space, caps, "annuli", r0)


def gny_annuli(space: DiscreteSpace, k: int,
               radius_cap: float = math.inf) -> DecompositionCertificate:
    """k annuli with doubled annuli pairwise disjoint, each carrying
    measure at least c * total / k; the constant c is measured from the
    output, never assumed.

    Two bisections: first the measure target is maximized over greedy
    packings, then, at half the achieved target, a uniform plateau-radius
    floor is maximized.  The second pass equalizes the annuli, which keeps
    the worst Rayleigh quotient of the subordinate cutoffs scaling cleanly
    with k instead of tracking the smallest leftover gap.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if int((space.measure > 0).sum()) < 2 * k:
        raise DecompositionError(
            "decomposition failed: space is degenerate "
            f"(needs at least {2 * k} vertices of positive measure)")
    total = space.total_measure
    lo, hi = 0.0, total / k
    best = None
    for _ in range(BISECTION_STEPS):
        t = 0.5 * (lo + hi)
        res = _greedy_balls(space, k, t, radius_cap)
        if res is not None:
            best = (t, res)
            lo = t
        else:
            hi = t
    if best is None:
        partial = _greedy_balls(space, k, total / k * 1e-6, radius_cap,
                                best_effort=True)
        raise DecompositionError(
            f"decomposition failed: could not pack {k} disjoint doubled "
            f"annuli (best k achieved: {len(partial)})")

    t_anchor = 0.5 * best[0]
    dstar = _target_radii(space, t_anchor)
    finite = space.dist_matrix[np.isfinite(space.dist_matrix)]
    flo, fhi = 0.0, min(radius_cap, float(finite.max())) / 2.0
    packing = best[1]
    best_floor = 0.0
    for _ in range(BISECTION_STEPS):
        f = 0.5 * (flo + fhi)
        res = _greedy_balls(space, k, t_anchor, radius_cap,
                            radius_floor=f, dstar=dstar)
        if res is not None:
            packing = res
            best_floor = f
            flo = f
        else:
            fhi = f
    if best_floor == 0.0:
        packing = best[1]
    return _annuli_certificate(space, packing)


# ----------------------------------------------------------------------
# ball-union capacitors (maximal-ball sweep)
# ----------------------------------------------------------------------


def _ball_members(space, center, r):
    return np.flatnonzero(space.dist_matrix[center] < r)


def _sweep(space: DiscreteSpace, r: float, w_rem: np.ndarray,
           allowed: np.ndarray):
    """Maximal-ball sweep: repeatedly pick the allowed center whose r-ball
    carries the most remaining measure, then delete its 5r-ball.  Explicit
    4r masking between picked centers enforces the separation exactly."""
    D = space.dist_matrix
    ball_mask = sparse_balls = None
    from scipy import sparse as _sp
    sparse_balls = _sp.csr_matrix(D < r)
    w_rem = w_rem.copy()
    allowed = allowed.copy()
    centers = []
    while True:
        rb = sparse_balls @ w_rem
        rb[~allowed] = 0.0
        top = rb.max()
        if top <= 0.0:
            break
        group = allowed & (rb >= top * (1.0 - RELTOL))
        x = int(np.argmax(group))
        centers.append(x)
        w_rem[_ball_members(space, x, 5.0 * r)] = 0.0
        allowed &= D[x] >= 4.0 * r
    return centers


def capacitor_pair(space: DiscreteSpace, beta: float, r: float) -> Capacitor:
    """One capacitor (A, D) per the maximal-ball construction: A is a
    prefix union of r-balls with 4r-separated centers, D the union of the
    5r-balls, with measure(A) >= beta/(2N(r)), measure(D) <= beta and
    dist(A, D^c) >= 4r, all recomputed before returning.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    if space.n == 1:
        whole = VertexSet.from_indices(space, [0])
        return Capacitor(inner=whole, outer=whole, separation=math.inf,
                         kind="ball_union", centers=(0,), r0=r)
    total = space.total_measure
    if beta > total / 2.0:
        raise DecompositionError("beta must not exceed half the total measure")
    N = covering_number(space, r)
    sd, order, cum = space.sorted_structure()
    cnt = np.sum(sd < r, axis=1)
    ball_meas = cum[np.arange(space.n), cnt - 1]
    if ball_meas.max() > beta / (2.0 * N):
        raise DecompositionError("ball measure too large for radius r")

    centers = _sweep(space, r, space.measure, np.ones(space.n, dtype=bool))
    own = ball_meas[centers]
    csum = np.cumsum(own)
    need = beta / (2.0 * N)
    hit = np.flatnonzero(csum >= need)
    if len(hit) == 0:
        raise DecompositionError(
            f"construction shortfall: reached measure {csum[-1] if len(csum) else 0.0}"
            f" < required {need}")
    l = int(hit[0]) + 1
    picked = centers[:l]
    A_members = np.unique(np.concatenate(
        [_ball_members(space, x, r) for x in picked]))
    D_members = np.unique(np.concatenate(
        [_ball_members(space, x, 5.0 * r) for x in picked]))
    A = VertexSet.from_indices(space, A_members)
    D = VertexSet.from_indices(space, D_members)
    sep = _separation(space, A, D)
    if A.measure < need * (1.0 - RELTOL):
        raise DecompositionError(
            f"construction shortfall: measure(A) = {A.measure} < {need}")
    if D.measure > beta * (1.0 + RELTOL):
        raise DecompositionError(
            f"construction shortfall: measure(D) = {D.measure} > beta = {beta}")
    if sep < 4.0 * r * (1.0 - RELTOL):
        raise DecompositionError(
            f"construction shortfall: dist(A, D^c) = {sep} < 4r")
    return Capacitor(inner=A, outer=D, separation=sep, kind="ball_union",
                     centers=tuple(int(x) for x in picked), r0=r)


def capacitor_family(space: DiscreteSpace, k: int,
                     r: float) -> DecompositionCertificate:
    """k ball-union sets, each of measure >= total/(2 N(r) k), pairwise at
    distance >= 4r, under the hypothesis that every r-ball has measure at
    most total/(4 N(r)^2 k).

    Families are built by iterating the maximal-ball sweep on the remaining
    measure; candidate centers for later families stay 5r away from the
    blocked hull (previous outer sets plus one mesh ring), which makes the
    recorded outer sets pairwise disjoint and the supports of subordinate
    cutoffs energy-disjoint.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if r <= 0:
        raise ValueError("radius must be positive")
    total = space.total_measure
    N = covering_number(space, r)
    sd, order, cum = space.sorted_structure()
    cnt = np.sum(sd < r, axis=1)
    ball_meas = cum[np.arange(space.n), cnt - 1]
    if ball_meas.max() > total / (4.0 * N * N * k):
        raise DecompositionError("ball measure too large for radius r")

    beta = total / k
    need = beta / (2.0 * N)
    D = space.dist_matrix
    w_rem = space.measure.copy()
    allowed = np.ones(space.n, dtype=bool)
    caps = []
    for i in range(k):
        centers = _sweep(space, r, w_rem, allowed)
        if not centers:
            raise DecompositionError(
                f"construction shortfall: family {i + 1} of {k} found no "
                f"admissible centers")
        own = np.array([float(w_rem[_ball_members(space, x, r)].sum())
                        for x in centers])
        csum = np.cumsum(own)
        hit = np.flatnonzero(csum >= need)
        if len(hit) == 0:
            raise DecompositionError(
                f"construction shortfall: family {i + 1} reached measure "
                f"{csum[-1]} < required {need}")
        picked = centers[:int(hit[0]) + 1]
        A_members = np.unique(np.concatenate(
            [_ball_members(space, x, r) for x in picked]))
        D_members = np.unique(np.concatenate(
            [_ball_members(space, x, 5.0 * r) for x in picked]))
        A = VertexSet.from_indices(space, A_members)
        Dset = VertexSet.from_indices(space, D_members)
        caps.append(Capacitor(
            inner=A, outer=Dset,
            separation=_separation(space, A, Dset),
            kind="ball_union", centers=tuple(int(x) for x in picked), r0=r))
        # consume the outer set and push later families off the hull
        w_rem[D_members] = 0.0
        hull = space.one_ring(D_members)
        d_hull = D[hull].min(axis=0)
        allowed &= d_hull >= 5.0 * r

    cert = _certify(space, caps, "ball_unions", r)
    floor_required = total / (2.0 * N * k)
    if cert.measure_floor < floor_required * (1.0 - RELTOL):
        raise DecompositionError(
            f"construction shortfall: floor {cert.measure_floor} < "
            f"{floor_required}")
    for i in range(k):
        for j in range(i + 1, k):
            gap = _set_distance(space, caps[i].inner.members,
                                caps[j].inner.members)
            if gap < 4.0 * r * (1.0 - RELTOL):
                raise DecompositionError(
                    f"construction shortfall: dist(A_{i}, A_{j}) = {gap} < 4r")
    return cert


# ----------------------------------------------------------------------
# merged decomposition (annuli when the radius cap permits, ball unions
# at r0 = 4a/1600 otherwise)
# ----------------------------------------------------------------------


def merged_decomposition(space: DiscreteSpace, k: int,
                         a: float) -> DecompositionCertificate:
    """Decomposition with a radius cap: annuli with doubled radii below
    ``a`` when they can be packed (form iii-a), otherwise ball unions at
    radius r0 = 4a/1600 (form iii-b).  ``a`` may be infinite, in which case
    only the annuli form is attempted."""
    if not a > 0:
        raise ValueError("radius cap must be positive")
    try:
        return gny_annuli(space, k, radius_cap=a)
    except DecompositionError as annuli_err:
        if math.isinf(a):
            raise
        r0 = 4.0 * a / 1600.0
        try:
            return capacitor_family(space, k, r0)
        except DecompositionError as family_err:
            raise DecompositionError(
                f"decomposition failed: annuli form: {annuli_err}; "
                f"ball-union form at r0={r0}: {family_err}") from family_err


# ----------------------------------------------------------------------
# inner radius floor
# ----------------------------------------------------------------------


def inner_radius_floor(space: DiscreteSpace, k: int, c: float) -> float:
    """Half of the smallest radius at which some ball reaches measure
    c * total / k (evaluated exactly on the finite distance set)."""
    if not 0 < c <= 1:
        raise ValueError("c must lie in (0, 1]")
    if k < 1:
        raise ValueError("k must be positive")
    total = space.total_measure
    vk = c * total / k
    if vk > total * (1.0 + RELTOL):
        return space.diameter / 2.0
    sd, order, cum = space.sorted_structure()
    idx = np.sum(cum < vk * (1.0 - RELTOL), axis=1)
    idx = np.minimum(idx, space.n - 1)
    radii = sd[np.arange(space.n), idx]
    return float(np.min(radii)) / 2.0


# ----------------------------------------------------------------------
# certificate verification (used by tests and by consumers)
# ----------------------------------------------------------------------


@dataclass
class CertificateCheck:
    disjoint: bool
    nested: bool
    floor: float
    floor_ok: bool
    separation_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.disjoint and self.nested and self.floor_ok and self.separation_ok


def verify_certificate(space: DiscreteSpace,
                       cert: DecompositionCertificate) -> CertificateCheck:
    """Recompute every certified postcondition of a decomposition."""
    nested = all(cap.inner.issubset(cap.outer) for cap in cert.capacitors)
    disjoint = _pairwise_outer_disjoint(cert.capacitors)
    floors = [float(space.measure[cap.inner.members].sum())
              for cap in cert.capacitors]
    floor = min(floors)
    floor_ok = floor >= cert.measure_floor * (1.0 - 1e-12)
    separation_ok = True
    details = {"floors": floors}
    if cert.form == "ball_unions" and cert.r0 is not None:
        gaps = []
        for i in range(cert.k):
            for j in range(i + 1, cert.k):
                gaps.append(_set_distance(space, cert.capacitors[i].inner.members,
                                          cert.capacitors[j].inner.members))
        details["pairwise_gaps"] = gaps
        separation_ok = all(g >= 4.0 * cert.r0 * (1.0 - RELTOL) for g in gaps)
    return CertificateCheck(disjoint=disjoint, nested=nested, floor=floor,
                            floor_ok=floor_ok, separation_ok=separation_ok,
                            details=details)
