"""Reference eigenvalues: dense Neumann spectrum for p = 2 and a descent
solver for the first positive eigenvalue at general p > 1.

The p = 2 solver is a deterministic dense generalized symmetric solve on the
P1 stiffness / lumped-mass pencil, capped at desk scale.  For p != 2 only
the first positive eigenvalue is approximated (higher variational
eigenvalues have no computable reference), by monotone descent on the
Rayleigh quotient over the zero p-mean constraint set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .energy import p_mass, rayleigh
from .geometry import Mesh

logger = logging.getLogger(__name__)

DENSE_VERTEX_CAP = 5000
RESIDUAL_TOL = 1e-8


class EigensolveError(Exception):
    """Solver failed or a verified postcondition does not hold."""


@dataclass
class Spectrum:
    """Ascending eigenvalue approximations with per-value defect norms."""

    p: float
    values: np.ndarray
    residuals: np.ndarray
    method: str

    def to_json(self) -> str:
        return json.dumps({
            "p": self.p,
            "values": list(map(float, self.values)),
            "residuals": list(map(float, self.residuals)),
            "method": self.method,
        })

    @staticmethod
    def from_json(text: str) -> "Spectrum":
        d = json.loads(text)
        return Spectrum(d["p"], np.array(d["values"]),
                        np.array(d["residuals"]), d["method"])


def stiffness_matrix(mesh: Mesh) -> sparse.csr_matrix:
    """P1 stiffness matrix (conformally invariant in dimension 2, so the
    base metric is always used)."""
    g11, g12, g22, det = mesh._gram
    a = mesh.base_areas
    # local quadratic form on (u1-u0, u2-u0): [[g22,-g12],[-g12,g11]]/det
    q11 = a * g22 / det
    q12 = -a * g12 / det
    q22 = a * g11 / det
    t = mesh.triangles
    rows, cols, vals = [], [], []
    # K = B^T Q B with B = [[-1,1,0],[-1,0,1]]
    k = np.empty((len(t), 3, 3))
    k[:, 1, 1] = q11
    k[:, 1, 2] = q12
    k[:, 2, 1] = q12
    k[:, 2, 2] = q22
    k[:, 0, 1] = -(q11 + q12)
    k[:, 1, 0] = k[:, 0, 1]
    k[:, 0, 2] = -(q12 + q22)
    k[:, 2, 0] = k[:, 0, 2]
    k[:, 0, 0] = q11 + 2 * q12 + q22
    for i in range(3):
        for j in range(3):
            rows.append(t[:, i])
            cols.append(t[:, j])
            vals.append(k[:, i, j])
    n = mesh.n_vertices
    K = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return K.tocsr()


def lumped_mass_vector(mesh: Mesh) -> np.ndarray:
    return mesh.lumped_vertex_measure()


def neumann_spectrum_p2(mesh: Mesh, kmax: int) -> Spectrum:
    """Smallest ``kmax`` eigenvalues of the Neumann P1 pencil K u = mu M u,
    dense symmetric solve with lumped (diagonal) mass."""
    n = mesh.n_vertices
    if n > DENSE_VERTEX_CAP:
        raise EigensolveError(
            f"dense solve capped at {DENSE_VERTEX_CAP} vertices (got {n})"
        )
    if not 1 <= kmax <= n:
        raise ValueError("kmax must be between 1 and the vertex count")
    K = stiffness_matrix(mesh)
    m = lumped_mass_vector(mesh)
    s = 1.0 / np.sqrt(m)
    B = (K.toarray() * s[None, :]) * s[:, None]
    B = 0.5 * (B + B.T)
    vals, vecs = sla.eigh(B, subset_by_index=[0, kmax - 1], driver="evr")
    # constants span the Neumann kernel exactly; report it as exact zero
    # rather than solver noise
    vals[np.abs(vals) <= 1e-9] = 0.0
    U = vecs * s[:, None]
    KU = K @ U
    MU = m[:, None] * U
    res = np.linalg.norm(KU - vals[None, :] * MU, axis=0)
    res /= np.linalg.norm(MU, axis=0)
    if np.any(res > RESIDUAL_TOL):
        raise EigensolveError(f"eigen residuals exceed {RESIDUAL_TOL}: {res}")
    return Spectrum(p=2.0, values=vals, residuals=res, method="dense_sym")


# ----------------------------------------------------------------------
# first positive eigenvalue for general p
# ----------------------------------------------------------------------


def _shift_to_zero_pmean(u: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    """Shift u by the scalar t solving sum w |u-t|^(p-2)(u-t) = 0.

    The constraint function is strictly decreasing in t, so bisection on
    [min u, max u] converges unconditionally."""
    lo, hi = float(u.min()), float(u.max())
    if lo == hi:
        return u - lo

    def g(t):
        s = u - t
        return float((w * np.abs(s) ** (p - 2) * s).sum())

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
            break
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return u - 0.5 * (lo + hi)


def _rayleigh_gradient(mesh: Mesh, u: np.ndarray, p: float, w: np.ndarray):
    """Value and Euclidean gradient of the p-Rayleigh quotient at u."""
    t = mesh.triangles
    du1 = u[t[:, 1]] - u[t[:, 0]]
    du2 = u[t[:, 2]] - u[t[:, 0]]
    g11, g12, g22, det = mesh._gram
    grad2 = (g22 * du1 * du1 - 2 * g12 * du1 * du2 + g11 * du2 * du2) / det
    a = mesh.base_areas.copy()
    if mesh.conformal_factor is not None:
        a = a * mesh.conformal_factor ** (1.0 - p / 2.0)
    energy = float((a * grad2 ** (p / 2.0)).sum())
    mass = float((w * np.abs(u) ** p).sum())
    R = energy / mass
    # dE/d(du) = p * a * grad2^{(p-2)/2} * Q du, scattered through B^T
    coeff = np.where(grad2 > 0, grad2 ** ((p - 2.0) / 2.0), 0.0) * a * p
    qx = coeff * (g22 * du1 - g12 * du2) / det
    qy = coeff * (g11 * du2 - g12 * du1) / det
    gE = np.zeros(len(u))
    np.add.at(gE, t[:, 1], qx)
    np.add.at(gE, t[:, 2], qy)
    np.add.at(gE, t[:, 0], -(qx + qy))
    gM = p * w * np.abs(u) ** (p - 1) * np.sign(u)
    return R, (gE - R * gM) / mass


def first_eig_p(mesh: Mesh, p: float, tol: float = 1e-6, max_iter: int = 2000,
                u0=None, details: bool = False):
    """First positive variational eigenvalue, by descent on the Rayleigh
    quotient with the zero p-mean constraint re-enforced at every
    evaluation through the scalar shift (bisection).

    The shift is the minimizer of the p-mass over constant translates, so
    the quotient-after-shift has the plain quotient gradient at the shifted
    point (envelope identity); that composite is minimized with L-BFGS.
    Accepted iterates are monotone non-increasing in the quotient (asserted).
    Returns the final quotient; with ``details=True`` also a dict with the
    iteration count and convergence flag.
    """
    from scipy.optimize import minimize

    if p <= 1:
        raise ValueError("exponent p must be > 1")
    w = lumped_mass_vector(mesh)
    if u0 is None:
        if mesh.n_vertices <= DENSE_VERTEX_CAP:
            K = stiffness_matrix(mesh)
            s = 1.0 / np.sqrt(w)
            B = (K.toarray() * s[None, :]) * s[:, None]
            B = 0.5 * (B + B.T)
            _, vecs = sla.eigh(B, subset_by_index=[1, 1], driver="evr")
            u = (vecs[:, 0] * s).copy()
        else:
            u = mesh.vertices[:, 0] - np.average(mesh.vertices[:, 0], weights=w)
    else:
        u = np.asarray(u0, dtype=float).copy()

    def fun(x):
        v = _shift_to_zero_pmean(x, w, p)
        return _rayleigh_gradient(mesh, v, p, w)

    accepted = [fun(u)[0]]

    def on_accept(xk):
        val = fun(xk)[0]
        assert val <= accepted[-1] * (1 + 1e-12) + 1e-300
        accepted.append(val)

    res = minimize(fun, u, jac=True, method="L-BFGS-B", callback=on_accept,
                   options={"maxiter": max_iter, "ftol": tol * 1e-2,
                            "gtol": 1e-12})
    converged = res.status == 0
    value = float(fun(res.x)[0])
    if not converged:
        logger.warning("first_eig_p: no convergence after %d iterations "
                       "(best value %.6g)", res.nit, value)
    if details:
        return value, {"iterations": len(accepted) - 1, "converged": converged,
                       "history": accepted}
    return value


# ----------------------------------------------------------------------
# bound consistency
# ----------------------------------------------------------------------


@dataclass
class ConsistencyReport:
    """Reference-eigenvalue vs certificate comparison."""

    ok: bool
    rows: list = field(default_factory=list)  # (k, eigenvalue, bound, slack)
    violations: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "ok": self.ok,
            "rows": self.rows,
            "violations": self.violations,
        })


def bound_consistency(spectrum: Spectrum, certificate) -> ConsistencyReport:
    """Check reference eigenvalues against a certified upper bound.

    For a certificate at index k the reference values mu_1..mu_k must all
    sit below the certified value; violations are reported, not raised."""
    if spectrum.p != certificate.p:
        raise ValueError("spectrum and certificate exponents differ")
    k = certificate.k
    if k > len(spectrum.values):
        raise ValueError("certificate index exceeds spectrum length")
    rows, violations = [], []
    for j in range(1, k + 1):
        mu = float(spectrum.values[j - 1])
        bound = float(certificate.value)
        slack = bound / mu if mu > 0 else float("inf")
        rows.append((j, mu, bound, slack))
        if mu > bound:
            violations.append((j, mu, bound))
    return ConsistencyReport(ok=not violations, rows=rows, violations=violations)
