"""Discrete p-Dirichlet energies, p-masses and Rayleigh quotients.

P1 elements: gradients are piecewise constant per triangle and energies are
closed-form; the mass term is vertex-lumped, consistent with the lumped
measure of the metric-measure space.  The intrinsic dimension of all meshes
here is n = 2, so the 2-Dirichlet energy is a conformal invariant and the
energy of a function on a rescaled mesh uses the factor only through the
exact exponent ``1 - p/2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Mesh

INTRINSIC_DIM = 2


def _values(u) -> np.ndarray:
    return np.asarray(getattr(u, "values", u), dtype=float)


@dataclass
class EnergyReport:
    """Energy summary of one function: ``rayleigh = dirichlet / mass``."""

    p: float
    dirichlet: float
    mass: float
    rayleigh: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def p_dirichlet(mesh: Mesh, u, p: float) -> float:
    """Integral of |grad u|^p over the mesh in the current metric."""
    if p <= 1:
        raise ValueError("exponent p must be > 1")
    vals = _values(u)
    if len(vals) != mesh.n_vertices:
        raise ValueError("function must be defined on all vertices")
    grad2 = mesh.gradient_squared(vals, metric="base")
    integrand = grad2 ** (p / 2.0) * mesh.base_areas
    if mesh.conformal_factor is not None:
        # |grad u|^2 scales by 1/factor, the area element by factor
        integrand = integrand * mesh.conformal_factor ** (1.0 - p / 2.0)
    return float(integrand.sum())


def p_mass(mesh: Mesh, u, p: float) -> float:
    """Lumped quadrature of |u|^p against the metric vertex measure."""
    if p <= 1:
        raise ValueError("exponent p must be > 1")
    vals = _values(u)
    w = mesh.lumped_vertex_measure()
    return float((w * np.abs(vals) ** p).sum())


def rayleigh(mesh: Mesh, u, p: float) -> float:
    """p-Dirichlet energy over p-mass."""
    mass = p_mass(mesh, u, p)
    if mass <= 0.0:
        raise ValueError("null test function")
    return p_dirichlet(mesh, u, p) / mass


def energy_report(mesh: Mesh, u, p: float) -> EnergyReport:
    dir_ = p_dirichlet(mesh, u, p)
    mass = p_mass(mesh, u, p)
    if mass <= 0.0:
        raise ValueError("null test function")
    return EnergyReport(p=p, dirichlet=dir_, mass=mass, rayleigh=dir_ / mass)


def triangle_support_measure(mesh: Mesh, u) -> float:
    """Metric area of the triangles on which the interpolant is not
    identically zero.  Dominates the area where the gradient is nonzero."""
    vals = _values(u)
    touched = (np.abs(vals[mesh.triangles]) > 0).any(axis=1)
    return float(mesh.triangle_areas[touched].sum())


def holder_split_bound(mesh: Mesh, u, p: float, support_measure: float) -> float:
    """Hoelder majorant of the p-energy through the n-energy:
    ``(n-dirichlet)^(p/n) * support_measure^(1 - p/n)``.

    Requires 1 < p <= n (the conformal mechanism fails above the dimension);
    the majorant property against the direct p-energy is checked before
    returning, so ``support_measure`` must dominate the area where the
    gradient lives (see :func:`triangle_support_measure`).
    """
    n = INTRINSIC_DIM
    if not 1 < p <= n:
        raise ValueError("holder split requires 1 < p <= n")
    value = p_dirichlet(mesh, u, n) ** (p / n) * support_measure ** (1.0 - p / n)
    direct = p_dirichlet(mesh, u, p)
    if direct > value + 1e-10:
        raise ValueError(
            f"holder majorant violated: direct {direct} > bound {value}"
        )
    return float(value)
