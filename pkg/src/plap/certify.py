"""Certified upper bounds: decomposition + cutoffs + Rayleigh maximum.

A certificate for index k is the maximum Rayleigh quotient over k cutoff
functions with energy-disjoint supports; that maximum bounds the k-th
discrete variational eigenvalue unconditionally, because the span of the
family evaluates its quotient capacitor by capacitor.  Certified values are
computed quantities; the closed-form constants of the continuum estimates
are recovered empirically through slope fits, never assumed.

Two strategies: ``fixed_metric`` measures decomposition distances in the
current metric and admits every p > 1; ``conformal`` measures them in the
background (unrescaled) metric while energies use the rescaled one, and
requires 1 < p <= n.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import decomposition as dec
from .energy import INTRINSIC_DIM, p_mass, rayleigh
from .geometry import DiscreteSpace, Mesh, VertexSet, space_from_mesh
from .testfn import cutoff_for_capacitor, trim_to_interior

STRATEGIES = ("fixed_metric", "conformal")


class CertifyError(Exception):
    """Pipeline failure (propagated decomposition errors keep their type)."""


class Workspace:
    """Mesh-derived state shared across certificates: the metric-measure
    space with the strategy's distance metric, plus the background vertex
    measure used by the conformal capacitor selection."""

    def __init__(self, mesh: Mesh, strategy: str = "fixed_metric"):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        edge_metric = "base"
        if strategy == "fixed_metric" and mesh.conformal_factor is not None:
            edge_metric = "conformal"
        self.mesh = mesh
        self.strategy = strategy
        self.space = space_from_mesh(mesh, edge_metric=edge_metric)
        self.base_measure = mesh.lumped_vertex_measure(metric="base")


@dataclass
class BoundCertificate:
    """Upper bound for the k-th variational eigenvalue at exponent p."""

    p: float
    k: int
    value: float
    per_capacitor_rayleigh: list
    decomposition: dec.DecompositionCertificate
    strategy: str
    kappa: float = 0.0
    additive_constant: Optional[float] = None  # measured A with value <= A kappa^p

    def to_json(self) -> str:
        return json.dumps({
            "p": self.p,
            "k": self.k,
            "value": self.value,
            "per_capacitor_rayleigh": self.per_capacitor_rayleigh,
            "strategy": self.strategy,
            "kappa": self.kappa,
            "additive_constant": self.additive_constant,
            "decomposition": json.loads(self.decomposition.to_json()),
        })

    @staticmethod
    def from_json(text: str) -> "BoundCertificate":
        d = json.loads(text)
        caps = []
        for c in d["decomposition"]["capacitors"]:
            caps.append(dec.Capacitor(
                inner=VertexSet(np.array(c["inner"], dtype=np.int64),
                                c["inner_measure"]),
                outer=VertexSet(np.array(c["outer"], dtype=np.int64),
                                c["outer_measure"]),
                separation=c["separation"], kind=c["kind"],
                center=c["center"], inner_radius=c["inner_radius"],
                outer_radius=c["outer_radius"],
                centers=tuple(c["centers"]) if c["centers"] else None,
                r0=c["r0"],
            ))
        dd = d["decomposition"]
        cert = dec.DecompositionCertificate(
            capacitors=caps, k=dd["k"], measure_floor=dd["measure_floor"],
            disjoint=dd["disjoint"], form=dd["form"], r0=dd["r0"],
            c=dd["c"], total_measure=dd["total_measure"])
        return BoundCertificate(
            p=d["p"], k=d["k"], value=d["value"],
            per_capacitor_rayleigh=d["per_capacitor_rayleigh"],
            decomposition=cert, strategy=d["strategy"], kappa=d["kappa"],
            additive_constant=d.get("additive_constant"))


def _trivial_certificate(mesh, space, p, strategy, kappa) -> BoundCertificate:
    whole = VertexSet.from_indices(space, space.points)
    cap = dec.Capacitor(inner=whole, outer=whole, separation=math.inf,
                        kind="ball_union", centers=(0,), r0=None)
    cert = dec.DecompositionCertificate(
        capacitors=[cap], k=1, measure_floor=whole.measure, disjoint=True,
        form="annuli", r0=None, c=1.0, total_measure=space.total_measure)
    value = rayleigh(mesh, np.ones(mesh.n_vertices), p)
    return BoundCertificate(p=p, k=1, value=value,
                            per_capacitor_rayleigh=[value],
                            decomposition=cert, strategy=strategy, kappa=kappa)


def _assert_energy_disjoint(mesh: Mesh, supports) -> None:
    """Supports must be vertex-disjoint and never share a triangle, so the
    p-energy of a combination splits capacitor by capacitor."""
    label = np.full(mesh.n_vertices, -1, dtype=np.int64)
    for i, members in enumerate(supports):
        if np.any(label[members] >= 0):
            raise CertifyError("support sets are not pairwise disjoint")
        label[members] = i
    L = label[mesh.triangles]
    valid = L >= 0
    lmax = np.where(valid, L, -1).max(axis=1)
    lmin = np.where(valid, L, np.iinfo(np.int64).max).min(axis=1)
    conflict = (valid.sum(axis=1) >= 2) & (lmax != lmin)
    if np.any(conflict):
        raise CertifyError(
            "supports share a triangle; Rayleigh quotients would not split")


def _select_capacitors(cert: dec.DecompositionCertificate, k: int,
                       space: DiscreteSpace, base_measure: np.ndarray,
                       strategy: str, provision: int):
    """Keep k capacitors whose outer sets are small in the relevant
    measures (both metrics for the conformal strategy), smallest first."""
    caps = cert.capacitors
    if provision <= 1:
        return list(caps[:k])
    outer_g = np.array([c.outer.measure for c in caps])
    thr_g = space.total_measure / k
    ok = outer_g <= thr_g * (1.0 + 1e-12)
    if strategy == "conformal":
        outer_0 = np.array([float(base_measure[c.outer.members].sum())
                            for c in caps])
        thr_0 = float(base_measure.sum()) / k
        ok &= outer_0 <= thr_0 * (1.0 + 1e-12)
    idx = np.flatnonzero(ok)
    if len(idx) < k:
        raise CertifyError(
            f"capacitor selection infeasible: only {len(idx)} of "
            f"{len(caps)} meet the measure thresholds (need {k})")
    idx = idx[np.lexsort((idx, outer_g[idx]))]
    return [caps[i] for i in idx[:k]]


def certify_bound(mesh: Mesh, p: float, k: int, strategy: str = "fixed_metric",
                  kappa: float = 0.0, provision: int = 3,
                  workspace: Optional[Workspace] = None) -> BoundCertificate:
    """Certified upper bound for the k-th variational eigenvalue.

    Runs the merged decomposition with over-provisioning (``provision * k``
    capacitors, of which k with small outer measure are kept), builds the
    subordinate cutoffs, and returns the maximum of their Rayleigh
    quotients together with the decomposition provenance.
    """
    if p <= 1:
        raise ValueError("exponent p must be > 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "conformal" and p > INTRINSIC_DIM:
        raise ValueError(
            "conformal strategy requires 1 < p <= n; not possible for p > n")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if k < 1:
        raise ValueError("k must be positive")
    if provision < 1:
        raise ValueError("provision must be at least 1")
    ws = workspace if workspace is not None else Workspace(mesh, strategy)
    if ws.strategy != strategy:
        raise ValueError("workspace was built for a different strategy")
    if k == 1:
        return _trivial_certificate(mesh, ws.space, p, strategy, kappa)

    a = math.inf if kappa == 0.0 else 1.0 / kappa
    full = dec.merged_decomposition(ws.space, provision * k, a)
    chosen = _select_capacitors(full, k, ws.space, ws.base_measure,
                                strategy, provision)

    tfs = []
    for cap in chosen:
        tf = cutoff_for_capacitor(ws.space, cap)
        if cap.kind == "annulus_pair":
            # pull supports one ring inside the (disjoint) outer sets, so
            # no triangle can touch two supports; ball unions already keep
            # a construction margin
            tf = trim_to_interior(ws.space, tf)
            if not cap.inner.issubset(tf.plateau):
                raise CertifyError(
                    "trimming removed part of an annulus plateau")
        tfs.append(tf)
    _assert_energy_disjoint(mesh, [tf.support.members for tf in tfs])
    quotients = []
    for tf in tfs:
        if p_mass(mesh, tf.values, p) <= 0:
            raise CertifyError("cutoff has zero p-mass in the target metric")
        quotients.append(rayleigh(mesh, tf.values, p))
    value = max(quotients)

    pruned = dec.DecompositionCertificate(
        capacitors=chosen, k=k,
        measure_floor=min(c.inner.measure for c in chosen),
        disjoint=True, form=full.form, r0=full.r0,
        c=min(c.inner.measure for c in chosen) * k / ws.space.total_measure,
        total_measure=ws.space.total_measure)
    additive = None
    if full.form == "ball_unions" and kappa > 0:
        additive = value / kappa ** p
    return BoundCertificate(p=p, k=k, value=value,
                            per_capacitor_rayleigh=quotients,
                            decomposition=pruned, strategy=strategy,
                            kappa=kappa, additive_constant=additive)


# ----------------------------------------------------------------------
# bound curves and slope fits
# ----------------------------------------------------------------------


@dataclass
class BoundCurve:
    """Certified bounds over a k-range with a log-log tail fit."""

    p: float
    n: int
    entries: list  # (k, value), ascending in k
    slope_fit: Optional[float]
    intercept_fit: Optional[float]
    k_min_used: int
    slope_defined: bool = True

    def to_csv_rows(self, reference=None):
        rows = [("k", "bound", "reference")]
        for k, v in self.entries:
            ref = ""
            if reference is not None and k <= len(reference):
                ref = f"{reference[k - 1]:.12g}"
            rows.append((k, f"{v:.12g}", ref))
        return rows


def fit_log_slope(ks, values, k_min):
    """Least-squares slope/intercept of log(value) against log(k) over the
    entries with k >= k_min; None when fewer than two remain."""
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (ks >= k_min) & (values > 0)
    if keep.sum() < 2:
        return None, None
    x = np.log(ks[keep])
    y = np.log(values[keep])
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def bound_curve(mesh: Mesh, p: float, k_range, strategy: str = "fixed_metric",
                kappa: float = 0.0, provision: int = 3,
                k_min: Optional[int] = None,
                workspace: Optional[Workspace] = None) -> BoundCurve:
    """Certify every k in the range and fit the log-log tail (k >= k_min,
    defaulting to max(8, range midpoint), where small-k certificates no
    longer pollute the growth rate)."""
    k_range = list(k_range)
    if not k_range or any(b <= a for a, b in zip(k_range, k_range[1:])):
        raise ValueError("k_range must be nonempty and ascending")
    ws = workspace if workspace is not None else Workspace(mesh, strategy)
    entries = []
    for k in k_range:
        cert = certify_bound(mesh, p, k, strategy=strategy, kappa=kappa,
                             provision=provision, workspace=ws)
        entries.append((k, cert.value))
    if k_min is None:
        k_min = max(8, int(round((k_range[0] + k_range[-1]) / 2)))
    slope, intercept = fit_log_slope([e[0] for e in entries],
                                     [e[1] for e in entries], k_min)
    return BoundCurve(p=p, n=INTRINSIC_DIM, entries=entries, slope_fit=slope,
                      intercept_fit=intercept, k_min_used=k_min,
                      slope_defined=slope is not None)


# ----------------------------------------------------------------------
# explicit constants
# ----------------------------------------------------------------------


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def kroger_constant(n: int) -> float:
    """((2+n)/2)^(2/n) * 4 pi^2 * omega_n^(-2/n)."""
    if n < 2:
        raise ValueError("dimension must be at least 2")
    return ((2.0 + n) / 2.0) ** (2.0 / n) * 4.0 * math.pi ** 2 \
        * unit_ball_volume(n) ** (-2.0 / n)


def beta_constant(p: float, n: int, c_prime: Optional[float] = None):
    """2^((n-1)p/n) * omega_n^(p/n) * e^((n-1)p/n); with a certified c'
    also the fixed-metric variant 2^(2p) (omega_n e^(n-1) / c')^(p/n)."""
    if not 1 < p <= n:
        raise ValueError("requires 1 < p <= n")
    w = unit_ball_volume(n)
    beta = 2.0 ** ((n - 1) * p / n) * w ** (p / n) * math.e ** ((n - 1) * p / n)
    if c_prime is None:
        return beta
    if c_prime <= 0:
        raise ValueError("c' must be positive")
    beta_prime = 2.0 ** (2 * p) * (w * math.e ** (n - 1) / c_prime) ** (p / n)
    return beta, beta_prime


def weyl_reference(n: int, volume: float) -> float:
    """Limit constant of mu_k / k^(2/n) for the Neumann Laplacian:
    4 pi^2 omega_n^(-2/n) volume^(-2/n)."""
    if n < 2:
        raise ValueError("dimension must be at least 2")
    if volume <= 0:
        raise ValueError("volume must be positive")
    return 4.0 * math.pi ** 2 * unit_ball_volume(n) ** (-2.0 / n) \
        * volume ** (-2.0 / n)
