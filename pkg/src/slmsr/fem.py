"""P1 finite-element kernel: quadrature, batched local matrices, assembly and
linear solves.

Element geometry is passed as vertex arrays ``P`` of shape ``(E, d+1, d)``
(unwrapped coordinates, so elements straddling the periodic seam are fine).
All local producers are vectorized over the leading element axis.
"""

from __future__ import annotations

import dataclasses
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_jacobi

from .errors import SingularGeometryError, SolverError

DIRECT_LIMIT = 10_000


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class QuadratureRule:
    """Points in reference coordinates and weights summing to the reference
    measure (1 for the unit interval, 1/2 for the unit triangle)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def barycentric(self) -> np.ndarray:
        """Values of the P1 shape functions at the points, shape ``(q, d+1)``."""
        return np.concatenate([1.0 - self.points.sum(axis=1, keepdims=True), self.points], axis=1)

    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()


@lru_cache(maxsize=None)
def gauss_1d(n_points: int = 5) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(n_points)
    return QuadratureRule(((x + 1) / 2)[:, None], w / 2, 2 * n_points - 1)


_D4_A, _D4_WA = 0.445948490915965, 0.223381589678011
_D4_B, _D4_WB = 0.091576213509771, 0.109951743655322


@lru_cache(maxsize=None)
def triangle_rule(degree: int = 4) -> QuadratureRule:
    """Triangle rules: the symmetric 6-point rule for degree <= 4, otherwise a
    collapsed (conical) Gauss product rule of the requested degree."""
    if degree <= 4:
        a, b = _D4_A, _D4_B
        pts = np.array(
            [[a, a], [1 - 2 * a, a], [a, 1 - 2 * a], [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]]
        )
        w = np.array([_D4_WA] * 3 + [_D4_WB] * 3) / 2
        return QuadratureRule(pts, w, 4)
    n = (degree + 2) // 2
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    u = (xj + 1) / 2
    wu = wj / 4
    xl, wl = np.polynomial.legendre.leggauss(n)
    v = (xl + 1) / 2
    wv = wl / 2
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.stack([U.ravel(), (V * (1 - U)).ravel()], axis=1)
    return QuadratureRule(pts, W.ravel(), 2 * n - 1)


def default_rule(dim: int, degree: int | None = None) -> QuadratureRule:
    if dim == 1:
        return gauss_1d(5 if degree is None else max(1, (degree + 2) // 2))
    return triangle_rule(4 if degree is None else degree)


# ---------------------------------------------------------------------------
# Geometry and local matrices
# ---------------------------------------------------------------------------


def element_geometry(P, check: bool = True):
    """Signed measure ``(E,)`` and barycentric gradients ``(E, d+1, d)``."""
    P = np.asarray(P, dtype=float)
    d = P.shape[-1]
    if d == 1:
        meas = P[:, 1, 0] - P[:, 0, 0]
        with np.errstate(divide="ignore"):
            inv = 1.0 / meas
        grads = np.stack([-inv, inv], axis=1)[..., None]
    else:
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)  # columns
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        meas = 0.5 * det
        with np.errstate(divide="ignore", invalid="ignore"):
            Jinv = np.stack(
                [
                    np.stack([J[:, 1, 1], -J[:, 0, 1]], axis=-1),
                    np.stack([-J[:, 1, 0], J[:, 0, 0]], axis=-1),
                ],
                axis=-2,
            ) / det[:, None, None]
        g12 = Jinv  # row k = gradient of lambda_{k+1}
        grads = np.concatenate([-g12.sum(axis=1, keepdims=True), g12], axis=1)
    if check:
        bad = np.flatnonzero(~(meas > 0))
        if len(bad):
            raise SingularGeometryError(
                f"{len(bad)} element(s) with non-positive measure, first index {bad[0]} "
                f"(measure {meas[bad[0]]:.3e})"
            )
    return meas, grads


def physical_points(P, rule: QuadratureRule):
    """Quadrature points mapped to each element, shape ``(E, q, d)``."""
    lam = rule.barycentric()
    return np.einsum("qk,ekd->eqd", lam, np.asarray(P, dtype=float))


def _ref_mass(d):
    return (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))


def local_mass(P, meas=None):
    P = np.asarray(P, dtype=float)
    if meas is None:
        meas, _ = element_geometry(P)
    return meas[:, None, None] * _ref_mass(P.shape[-1])


def lumped_mass(P, meas=None):
    P = np.asarray(P, dtype=float)
    if meas is None:
        meas, _ = element_geometry(P)
    return np.repeat((meas / P.shape[1])[:, None], P.shape[1], axis=1)


def _mean_over_q(values, rule):
    w = rule.normalized_weights()
    return np.einsum("q,eq...->e...", w, values)


def local_stiffness(P, A_q, rule: QuadratureRule, geometry=None):
    """``int A grad(phi_j) . grad(phi_i)``; ``A_q`` is ``(E, q)`` (scalar) or
    ``(E, q, d, d)`` sampled at the rule's points."""
    meas, G = element_geometry(P) if geometry is None else geometry
    A_bar = _mean_over_q(np.asarray(A_q, dtype=float), rule)
    if A_bar.ndim == 1:
        return (meas * A_bar)[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    return meas[:, None, None] * np.einsum("eia,eab,ejb->eij", G, A_bar, G)


def local_advection(P, c_q, rule: QuadratureRule, form: str = "gradient-on-trial", geometry=None):
    """Advection matrix with the gradient on the trial function,
    ``int phi_i (c . grad phi_j)``, or on the test function,
    ``int (c . grad phi_i) phi_j``."""
    meas, G = element_geometry(P) if geometry is None else geometry
    lam = rule.barycentric()
    w = rule.normalized_weights()
    c_q = np.asarray(c_q, dtype=float)
    # (E, q, d+1): c . grad lambda_j at each point
    cg = np.einsum("eqd,ejd->eqj", c_q, G)
    C = meas[:, None, None] * np.einsum("q,qi,eqj->eij", w, lam, cg)
    if form == "gradient-on-trial":
        return C
    if form == "gradient-on-test":
        return np.swapaxes(C, 1, 2)
    raise ValueError(f"unknown advection form {form!r}")


def local_weighted_mass(P, s_q, rule: QuadratureRule, meas=None):
    """``int s phi_i phi_j`` for a scalar weight sampled at the rule's points."""
    if meas is None:
        meas, _ = element_geometry(P)
    lam = rule.barycentric()
    w = rule.normalized_weights()
    return meas[:, None, None] * np.einsum("q,eq,qi,qj->eij", w, np.asarray(s_q, float), lam, lam)


# ---------------------------------------------------------------------------
# Assembly and solves
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class LinearSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray
    symmetric_hint: bool = False

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m or n != len(self.rhs):
            raise ValueError(f"incompatible system: matrix {self.matrix.shape}, rhs {len(self.rhs)}")


def assemble(elements, local, n: int) -> sp.csr_matrix:
    """Scatter-add local matrices ``(E, k, k)`` over ``elements`` ``(E, k)``.

    Duplicate entries are summed by scipy's canonicalization, which visits
    them in element order, so the result is bitwise reproducible.
    """
    elements = np.asarray(elements)
    local = np.asarray(local, dtype=float)
    if elements.size and (elements.min() < 0 or elements.max() >= n):
        raise IndexError("invalid connectivity: element references a node outside [0, n)")
    if local.shape[:2] != elements.shape or local.shape[1] != local.shape[2]:
        raise ValueError(f"local matrices {local.shape} do not match elements {elements.shape}")
    k = elements.shape[1]
    rows = np.repeat(elements, k, axis=1).ravel()
    cols = np.tile(elements, (1, k)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_vector(elements, local, n: int) -> np.ndarray:
    return np.bincount(np.asarray(elements).ravel(), weights=np.asarray(local).ravel(), minlength=n)


def _check_residual(A, x, b, tol=1e-10):
    r = np.linalg.norm(A @ x - b)
    scale = spla.norm(A, np.inf) * np.linalg.norm(x) + np.linalg.norm(b)
    if not np.all(np.isfinite(x)) or r > tol * max(scale, np.finfo(float).tiny):
        raise SolverError("linear solve failed the residual check", residual=float(r))
    return x


PIVOT_RATIO = 1e-13


def splu_checked(A):
    """Sparse LU of ``A`` that rejects numerically singular matrices.

    The residual test alone cannot catch an exactly singular matrix whose LU
    produces an enormous solution (its residual is small relative to
    ``|A| |x|``), so tiny pivots relative to the largest one are refused.
    """
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:  # exactly singular factor
        raise SolverError(f"sparse LU failed: {exc}") from exc
    piv = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(piv)) or piv.min() <= PIVOT_RATIO * piv.max():
        raise SolverError("matrix is numerically singular (pivot ratio below 1e-13)")
    return lu


def solve(system, rhs=None, direct_limit: int = DIRECT_LIMIT):
    """Solve ``A x = b`` with a residual check.

    Direct sparse LU up to ``direct_limit`` unknowns, ILU-preconditioned
    GMRES (relative tolerance 1e-12) above, falling back to LU if the
    iteration stalls.
    """
    if isinstance(system, LinearSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system, rhs
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if n <= direct_limit:
        return _check_residual(A, splu_checked(A).solve(b), b)
    try:
        ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres(A, b, M=M, rtol=1e-12, atol=0.0, restart=50, maxiter=200)
        if info == 0:
            return _check_residual(A, x, b)
    except RuntimeError:
        pass
    return _check_residual(A, splu_checked(A).solve(b), b)


def solve_tridiagonal(lower, diag, upper, rhs):
    """Batched Thomas algorithm for ``(B, n)`` tridiagonal systems.

    ``lower[:, i]`` couples unknown ``i`` to ``i-1`` (``lower[:, 0]`` unused),
    ``upper[:, i]`` couples ``i`` to ``i+1`` (``upper[:, -1]`` unused). Meant
    for diagonally dominant or SPD systems (no pivoting).
    """
    a = np.asarray(lower, dtype=float)
    b = np.array(diag, dtype=float)
    c = np.asarray(upper, dtype=float)
    d = np.array(rhs, dtype=float)
    n = b.shape[-1]
    cp = np.empty_like(b)
    cp[:, 0] = c[:, 0] / b[:, 0]
    d[:, 0] = d[:, 0] / b[:, 0]
    for i in range(1, n):
        m = b[:, i] - a[:, i] * cp[:, i - 1]
        cp[:, i] = c[:, i] / m
        d[:, i] = (d[:, i] - a[:, i] * d[:, i - 1]) / m
    for i in range(n - 2, -1, -1):
        d[:, i] -= cp[:, i] * d[:, i + 1]
    return d
