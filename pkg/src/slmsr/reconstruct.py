"""Local inverse problems fitting multiscale basis functions to a known
solution on traced cells and edges.

Every problem has the same structure: unknown fine nodal values of the
``m`` local basis functions at interior nodes, boundary values fixed, and a
quadratic objective

    || u - sum_j u_j phi_j ||_M^2 + sum_i alpha_i R(phi_i).

For the 1D deviation-from-linear regularizer the optimality conditions
decouple node by node. For the harmonic regularizer
``R(phi) = (K phi)_I^T D_I^{-1} (K phi)_I`` (``K`` the stiffness matrix,
``D`` the lumped mass; the discrete ``||Delta phi||^2``) the coupled system

    (w w^T (x) M_II + Id (x) R_II) psi = w (x) b - R_IB psi_B,
    psi_i = sqrt(alpha_i) phi_i,  w_i = u_i / sqrt(alpha_i),

is diagonalized across basis indices by a Householder reflection mapping
``e_1`` to ``w / |w|``: one system with ``|w|^2 M_II + R_II`` and ``m - 1``
systems with ``R_II``. All cells (or edges) are solved together as one
block-diagonal sparse system.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import ConformityError, SingularGeometryError


@dataclasses.dataclass
class RegularizerSpec:
    kind: str = "deviation"  # "deviation" (1D cells) or "harmonic" (edges, 2D cells)
    alpha: tuple = (0.1, 0.1)

    def __post_init__(self):
        if self.kind not in ("deviation", "harmonic"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if np.any(~(a > 0)):
            raise ValueError("regularization weights must be positive")
        self.alpha = tuple(float(v) for v in a)

    def weights(self, m: int) -> np.ndarray:
        a = np.asarray(self.alpha, dtype=float)
        if len(a) == 1:
            return np.full(m, a[0])
        if len(a) < m:
            raise ValueError(f"need {m} regularization weights, got {len(a)}")
        return a[:m]


@dataclasses.dataclass
class MsBasis:
    """Fine nodal values of the local basis functions of every coarse cell.

    ``phi[c, i, l]`` is the value of the basis function attached to local
    coarse vertex ``i`` of cell ``c`` at local fine node ``l``; ``X`` holds
    the unwrapped node positions the values live on. ``edge_traces[e, s]``
    (2D) are the values along edge ``e`` (stored direction ``a -> b``) of the
    function equal to 1 at endpoint ``s`` (0 = ``a``, 1 = ``b``).
    """

    phi: np.ndarray
    X: np.ndarray
    edge_traces: Optional[np.ndarray] = None
    time_index: int = 0

    @property
    def n_cells(self) -> int:
        return self.phi.shape[0]

    def combine(self, cells, weights) -> np.ndarray:
        """Per-cell fine values of ``sum_j u_j phi_j``, shape ``(nc, nl)``."""
        return np.einsum("ci,cil->cl", np.asarray(weights)[cells], self.phi)


# ---------------------------------------------------------------------------
# 1D cells: closed form
# ---------------------------------------------------------------------------


def linear_prior_1d(X):
    """Standard hats on each (traced) cell, linear in position:
    ``X`` is ``(nc, nl)`` or ``(nc, nl, 1)``; returns ``(nc, 2, nl)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        X = X[..., 0]
    L = X[:, -1:] - X[:, :1]
    if np.any(~(L > 0)):
        raise SingularGeometryError("traced cell with non-positive length")
    s = (X - X[:, :1]) / L
    s[:, 0], s[:, -1] = 0.0, 1.0
    return np.stack([1.0 - s, s], axis=1)


def reconstruct_1d(X, u_samples, reg: RegularizerSpec = None):
    """Fit the two basis functions of each 1D cell.

    ``X`` traced node positions ``(nc, nl[, 1])``; ``u_samples`` values of
    ``u^n`` there ``(nc, nl)``; the endpoint weights are the samples at the
    traced vertices. Interior values solve, per node,

        [[u_a^2 + a_1, u_a u_b], [u_a u_b, u_b^2 + a_2]] phi
            = [u_a u + a_1 phi_1^0, u_b u + a_2 phi_2^0],

    the stationarity conditions after multiplying out the (nonsingular)
    interior mass block; the residual and prior deviation vanish at the
    endpoints, so no boundary coupling remains.
    """
    reg = reg or RegularizerSpec("deviation", (0.1, 0.1))
    a1, a2 = reg.weights(2)
    u = np.asarray(u_samples, dtype=float)
    prior = linear_prior_1d(X)
    ua, ub = u[:, :1], u[:, -1:]
    g11 = ua**2 + a1
    g22 = ub**2 + a2
    g12 = ua * ub
    r1 = ua * u + a1 * prior[:, 0]
    r2 = ub * u + a2 * prior[:, 1]
    det = g11 * g22 - g12**2
    phi = np.stack([(g22 * r1 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det], axis=1)
    phi[:, :, 0] = [1.0, 0.0]
    phi[:, :, -1] = [0.0, 1.0]
    return phi


def objective_1d(X, u_samples, phi, reg: RegularizerSpec):
    """Objective value per cell (consistent traced mass matrix)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[..., None]
    nc, nl = X.shape[:2]
    el = np.stack([np.arange(nl - 1), np.arange(1, nl)], axis=1)
    Mloc = fem.local_mass(X[:, el].reshape(-1, 2, 1)).reshape(nc, nl - 1, 2, 2)
    u = np.asarray(u_samples, float)
    r = u - u[:, :1] * phi[:, 0] - u[:, -1:] * phi[:, 1]
    prior = linear_prior_1d(X)
    alpha = reg.weights(2)

    def q(v):
        ve = v[:, el]
        return np.einsum("cea,ceab,ceb->c", ve, Mloc, ve)

    return q(r) + alpha[0] * q(phi[:, 0] - prior[:, 0]) + alpha[1] * q(phi[:, 1] - prior[:, 1])


# ---------------------------------------------------------------------------
# Harmonic-regularized problems (2D edges and cells)
# ---------------------------------------------------------------------------


def _block_matrices(P, nl, elements):
    """Block-diagonal consistent mass, identity-tensor stiffness and lumped
    mass for patches with node positions ``P`` ``(nb, nl, d)``."""
    nb, _, d = P.shape
    Pe = P[:, elements].reshape(-1, d + 1, d)
    meas, G = fem.element_geometry(Pe)
    Ml = fem.local_mass(Pe, meas)
    Kl = meas[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    gl = (elements[None, :, :] + (np.arange(nb) * nl)[:, None, None]).reshape(-1, d + 1)
    n = nb * nl
    M = fem.assemble(gl, Ml, n)
    K = fem.assemble(gl, Kl, n)
    D = fem.assemble_vector(gl, fem.lumped_mass(Pe, meas), n)
    return M, K, D


def _householder(w):
    """Orthogonal ``Q`` (``(nb, m, m)``) with ``Q e_1 = w / |w|`` (identity
    where ``w = 0``)."""
    nb, m = w.shape
    nw = np.linalg.norm(w, axis=1)
    Q = np.broadcast_to(np.eye(m), (nb, m, m)).copy()
    ok = nw > 0
    v = np.zeros_like(w)
    v[ok] = w[ok] / nw[ok, None]
    v[:, 0] -= 1.0
    vv = np.einsum("bi,bi->b", v, v)
    refl = ok & (vv > 1e-30)
    Q[refl] -= 2.0 * np.einsum("bi,bj->bij", v[refl], v[refl]) / vv[refl, None, None]
    return Q, nw


def _harmonic_fit(P, elements, interior, boundary, u, u_vertex, phi_B, alpha):
    """Solve the harmonic-regularized fit for ``nb`` patches at once.

    ``P`` ``(nb, nl, d)`` node positions; ``u`` ``(nb, nl)`` samples;
    ``u_vertex`` ``(nb, m)`` basis weights; ``phi_B`` ``(nb, m, nB)`` fixed
    boundary values at ``boundary``. Returns interior values ``(nb, m, nI)``.
    """
    nb, nl, _ = P.shape
    m = u_vertex.shape[1]
    nI = len(interior)
    if nI == 0:
        return np.zeros((nb, m, 0))
    M, K, D = _block_matrices(P, nl, elements)
    off = (np.arange(nb) * nl)[:, None]
    I = (off + interior[None, :]).ravel()
    B = (off + boundary[None, :]).ravel()
    M_II, M_IB = M[I][:, I], M[I][:, B]
    K_II, K_IB = K[I][:, I], K[I][:, B]
    Dinv = sp.diags(1.0 / D[I])
    R_II = (K_II @ Dinv @ K_II).tocsc()
    R_IB = (K_II @ Dinv @ K_IB).tocsr()

    # residual of the boundary-only extension
    r_B = u[:, boundary] - np.einsum("bj,bjk->bk", u_vertex, phi_B)
    b = (M_II @ u[:, interior].ravel() + M_IB @ r_B.ravel()).reshape(nb, nI)

    sa = np.sqrt(alpha)
    w = u_vertex / sa
    Q, nw = _householder(w)
    psi_B = sa[None, :, None] * phi_B
    psiq_B = np.einsum("bji,bjk->bik", Q, psi_B)  # Q^T psi_B

    def rib(v):  # apply R_IB to per-patch boundary vectors (nb, nB)
        return (R_IB @ v.ravel()).reshape(nb, nI)

    rows_w2 = np.repeat(nw**2, nI)
    S1 = (sp.diags(rows_w2) @ M_II + R_II).tocsc()
    rhs1 = nw[:, None] * b - rib(psiq_B[:, 0])
    psiq = np.empty((nb, m, nI))
    psiq[:, 0] = spla.splu(S1).solve(rhs1.ravel()).reshape(nb, nI)
    if m > 1:
        rhs = np.stack([-rib(psiq_B[:, k]).ravel() for k in range(1, m)], axis=1)
        sol = spla.splu(R_II).solve(rhs)
        for k in range(1, m):
            psiq[:, k] = sol[:, k - 1].reshape(nb, nI)
    psi = np.einsum("bij,bjk->bik", Q, psiq)
    return psi / sa[None, :, None]


def harmonic_objective(P, elements, interior, boundary, u, u_vertex, phi, alpha):
    """Objective value per patch for full basis values ``phi`` ``(nb, m, nl)``."""
    nb, nl, _ = P.shape
    M, K, D = _block_matrices(P, nl, elements)
    off = (np.arange(nb) * nl)[:, None]
    I = (off + interior[None, :]).ravel()
    r = (u - np.einsum("bj,bjl->bl", u_vertex, phi)).ravel()
    val = (r * (M @ r)).reshape(nb, nl).sum(axis=1)
    for k in range(phi.shape[1]):
        Kp = (K @ phi[:, k].ravel())[I].reshape(nb, -1)
        val += alpha[k] * (Kp**2 / D[I].reshape(nb, -1)).sum(axis=1)
    return val


def _arclength(P):
    seg = np.linalg.norm(np.diff(P, axis=1), axis=-1)
    if np.any(~(seg > 0)):
        raise SingularGeometryError("traced edge with a zero-length segment")
    return np.concatenate([np.zeros((len(P), 1)), np.cumsum(seg, axis=1)], axis=1)


def reconstruct_edge_2d(P, u_samples, reg: RegularizerSpec = None):
    """Fit the two edge basis functions on traced polylines.

    ``P`` ``(ne, n+1, 2)`` ordered node positions; ``u_samples`` ``(ne, n+1)``.
    The problem lives on the arc-length parametrization, where the harmonic
    regularizer is the squared arc-length second difference. Returns
    ``(ne, 2, n+1)`` traces (first function is 1 at the first node).
    """
    reg = reg or RegularizerSpec("harmonic", (1e-3,))
    P = np.asarray(P, dtype=float)
    ne, nn, _ = P.shape
    if nn < 3:
        raise ValueError("edge needs at least 3 nodes")
    s = _arclength(P)[..., None]
    el = np.stack([np.arange(nn - 1), np.arange(1, nn)], axis=1)
    interior = np.arange(1, nn - 1)
    boundary = np.array([0, nn - 1])
    u = np.asarray(u_samples, dtype=float)
    uv = u[:, boundary]
    phi_B = np.broadcast_to(np.eye(2), (ne, 2, 2))
    out = np.empty((ne, 2, nn))
    out[:, :, boundary] = phi_B
    out[:, :, interior] = _harmonic_fit(s, el, interior, boundary, u, uv, phi_B, reg.weights(2))
    return out


def cell_boundary_values(cx, edge_traces):
    """Boundary nodal values ``(nc, 3, n_local)`` (zero off the boundary) of
    every cell's three basis functions, taken from shared edge traces."""
    co = cx.coarse
    nc = cx.n_cells
    vals = np.zeros((nc, 3, cx.n_local))
    for k in range(3):
        e = co.tri_edges[:, k]
        fwd = co.tri_edge_sign[:, k] > 0
        tr = edge_traces[e]  # (nc, 2, n+1) along a -> b
        first = np.where(fwd[:, None], tr[:, 0], tr[:, 1][:, ::-1])
        second = np.where(fwd[:, None], tr[:, 1], tr[:, 0][:, ::-1])
        loc = cx.edge_local[k]
        vals[:, k, loc] = first
        vals[:, (k + 1) % 3, loc] = second
    return vals


def check_edge_traces(edge_traces, tol=0.0):
    end = edge_traces[:, :, [0, -1]]
    if np.max(np.abs(end - np.eye(2))) > tol:
        raise ConformityError("edge traces violate the vertex delta constraints")


def reconstruct_cell_2d(P, u_samples, boundary_values, elements, interior, boundary, vertex_local, reg=None):
    """Fit the three basis functions on traced triangle patches.

    ``P`` ``(nc, nl, 2)`` node positions, ``u_samples`` ``(nc, nl)``,
    ``boundary_values`` ``(nc, 3, nl)`` (only the ``boundary`` entries are
    read). Corner weights are the samples at ``vertex_local``. Returns
    ``(nc, 3, nl)`` with boundary rows equal to ``boundary_values``.
    """
    reg = reg or RegularizerSpec("harmonic", (1e-3,))
    u = np.asarray(u_samples, dtype=float)
    bv = np.asarray(boundary_values, dtype=float)
    corner = bv[:, :, vertex_local]
    if np.max(np.abs(corner - np.eye(3))) > 0:
        raise ConformityError("boundary values violate the corner delta constraints")
    phi = np.zeros_like(bv)
    phi[:, :, boundary] = bv[:, :, boundary]
    phi[:, :, interior] = _harmonic_fit(
        np.asarray(P, dtype=float),
        elements,
        interior,
        boundary,
        u,
        u[:, vertex_local],
        bv[:, :, boundary],
        reg.weights(3),
    )
    return phi


def reconstruct_cells_2d(cx, P, u_samples, edge_traces, reg: RegularizerSpec = None):
    """Fit the three basis functions of every cell of a 2D fine complex.

    ``P`` traced positions ``(nc, nl, 2)``, ``u_samples`` ``(nc, nl)``,
    ``edge_traces`` ``(ne, 2, n+1)`` from :func:`reconstruct_edge_2d`.
    Returns ``phi`` ``(nc, 3, nl)`` whose boundary rows are copied from the
    edge traces.
    """
    check_edge_traces(edge_traces)
    bvals = cell_boundary_values(cx, edge_traces)
    return reconstruct_cell_2d(
        P, u_samples, bvals, cx.elements, cx.interior_local, cx.boundary_local, cx.vertex_local, reg
    )


def edge_polylines(cx, P):
    """Ordered node positions ``(ne, n+1, 2)`` of every coarse edge, taken
    from the (unwrapped) patch of its first adjacent cell."""
    co = cx.coarse
    c = co.edge_tris[:, 0]
    k = co.edge_tri_local[:, 0]
    loc = cx.edge_local[k]  # (ne, n+1)
    pts = np.take_along_axis(P[c], loc[..., None], axis=1)
    fwd = co.tri_edge_sign[c, k] > 0
    return np.where(fwd[:, None, None], pts, pts[:, ::-1])


# ---------------------------------------------------------------------------
# Point evaluation of composite fields
# ---------------------------------------------------------------------------


def sample_global(cx, U, p, with_gradient: bool = False):
    """Evaluate the conformal fine field with global nodal values ``U`` on
    the Eulerian complex ``cx`` at torus points ``p[..., d]``."""
    p = np.asarray(p, dtype=float)
    cell, el, bary = cx.locate(p)
    nodes = cx.elements[el]  # (..., d+1)
    gid = np.take_along_axis(cx.global_ids[cell], nodes, axis=-1)
    vals = np.einsum("...a,...a->...", bary, U[gid])
    if not with_gradient:
        return vals
    d = p.shape[-1]
    Pe = np.take_along_axis(cx.X[cell], nodes[..., None], axis=-2)
    _, G = fem.element_geometry(Pe.reshape(-1, d + 1, d))
    grad = np.einsum("na,nad->nd", U[gid].reshape(-1, d + 1), G).reshape(p.shape)
    return vals, grad
