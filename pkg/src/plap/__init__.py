"""Certified upper bounds for variational eigenvalues of the p-Laplacian
on discretized domains, with reference eigensolvers for cross-validation."""

from .geometry import (
    DiscreteSpace,
    Mesh,
    MeshError,
    VertexSet,
    annulus_set,
    ball,
    build_structured_mesh,
    conformal_rescale,
    covering_number,
    disjoint_union,
    read_off,
    space_from_mesh,
    write_off,
)

__all__ = [
    "DiscreteSpace",
    "Mesh",
    "MeshError",
    "VertexSet",
    "annulus_set",
    "ball",
    "build_structured_mesh",
    "conformal_rescale",
    "covering_number",
    "disjoint_union",
    "read_off",
    "space_from_mesh",
    "write_off",
]

__version__ = "0.1.0"
