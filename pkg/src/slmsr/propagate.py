"""Evolution of reconstructed basis functions from the traced cell at
``t^n`` to the Eulerian cell at ``t^{n+1}``.

The Lagrangian-frame problems are discretized on a moving fine mesh whose
nodes travel on straight lines from their traced positions to their
Eulerian positions. With the mesh following the flow the material
derivative is the nodal time derivative, so only diffusion (and, for the
conservative form, the reaction ``(div c) phi``) remains. Each substep is
implicit Euler with a lumped mass matrix on the geometry at the new time,

    m (phi^{k+1} - phi^k) + dtau K phi^{k+1} + dtau m s phi^{k+1} = 0,

with boundary nodes prescribed (rows scaled by ``m``). Lumping keeps the discrete maximum
principle whenever ``K`` is an M-matrix and makes the pure reaction update
exactly ``phi / (1 + s dtau)``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import PropagationError, SingularGeometryError
from .mesh import wrap_point

FORMS = ("nonconservative", "conservative")


def _check_form(form):
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")


def _geometry(Pe):
    try:
        return fem.element_geometry(Pe)
    except SingularGeometryError as exc:
        raise PropagationError(f"moving fine mesh inverted: {exc}") from exc


def _velocity_jacobian(velocity, x, t, step=1e-5):
    d = x.shape[-1]
    J = np.empty(x.shape[:-1] + (d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        J[..., :, k] = (velocity(x + e, t) - velocity(x - e, t)) / (2 * step)
    return J


# ---------------------------------------------------------------------------
# 1D (cells and reduced edge problems share the tridiagonal kernel)
# ---------------------------------------------------------------------------


def _tridiag_substep(h, abar, m, s, phi, dtau):
    """One implicit substep on ``nb`` polylines with fixed end values.

    ``h`` ``(nb, n)`` segment lengths, ``abar`` ``(nb, n)`` mean diffusion
    per segment, ``m`` ``(nb, n+1)`` lumped mass, ``s`` ``(nb, n+1)``
    reaction (or ``None``), ``phi`` ``(nb, q, n+1)`` values at the old
    substep; returns the new values.
    """
    nb, q, nn = phi.shape
    kap = dtau * abar / h  # (nb, n)
    mi = m[:, 1:-1]
    # rows divided by the lumped mass, so vanishing coefficients give the
    # identity map exactly
    kl, kr = kap[:, :-1] / mi, kap[:, 1:] / mi
    diag = 1.0 + kl + kr
    if s is not None:
        diag = diag + dtau * s[:, 1:-1]
    if np.any(~(diag > 0)):
        raise PropagationError("non-positive diagonal in propagation step (reaction too strong for dt)")
    out = phi.copy()
    rhs = phi[:, :, 1:-1].copy()
    rhs[:, :, 0] += kl[:, None, 0] * phi[:, :, 0]
    rhs[:, :, -1] += kr[:, None, -1] * phi[:, :, -1]
    rep = lambda a: np.repeat(a, q, axis=0)  # noqa: E731
    sol = fem.solve_tridiagonal(rep(-kl), rep(diag), rep(-kr), rhs.reshape(nb * q, -1))
    out[:, :, 1:-1] = sol.reshape(nb, q, -1)
    return out


def _segment_mean(values_q, rule):
    return np.einsum("q,...q->...", rule.normalized_weights(), values_q)


def propagate_1d(phi, X_from, X_to, field, t_n, t_n1, form="nonconservative", n_sub=1, rule=None):
    """Evolve 1D cell bases ``phi`` ``(nc, 2, nl)`` from positions ``X_from``
    at ``t_n`` to ``X_to`` at ``t_n1`` (both ``(nc, nl[, 1])``, unwrapped)."""
    _check_form(form)
    rule = rule or fem.gauss_1d(5)
    X0 = np.asarray(X_from, dtype=float).reshape(len(phi), -1)
    X1 = np.asarray(X_to, dtype=float).reshape(len(phi), -1)
    dt = t_n1 - t_n
    dtau = dt / n_sub
    xq = rule.points[:, 0]
    if np.any(~(np.diff(X0, axis=1) > 0)):
        raise PropagationError("traced fine mesh inverted in 1D propagation")
    out = np.array(phi, dtype=float)
    for k in range(1, n_sub + 1):
        th = k / n_sub
        tau = t_n + th * dt
        Xk = X0 + th * (X1 - X0)
        h = np.diff(Xk, axis=1)
        if np.any(~(h > 0)):
            raise PropagationError("moving fine mesh inverted in 1D propagation")
        pts = Xk[:, :-1, None] + h[..., None] * xq
        a = field.diffusion(wrap_point(pts)[..., None], tau)[..., 0, 0]
        abar = _segment_mean(a, rule)
        m = np.zeros_like(Xk)
        m[:, :-1] += h / 2
        m[:, 1:] += h / 2
        s = None
        if form == "conservative":
            s = field.div(wrap_point(Xk)[..., None], tau)
        out = _tridiag_substep(h, abar, m, s, out, dtau)
    return out


def propagate_edge_2d(traces, P_from, P_to, field, t_n, t_n1, n_sub=1, rule=None, form="conservative"):
    """Evolve edge traces ``(ne, 2, n+1)`` along moving polylines.

    Reduced coefficients: tangential diffusion ``tau . A tau`` per segment
    and, for the conservative form, the tangential divergence
    ``tau . (grad c) tau`` at the nodes. End values stay at their deltas.
    """
    _check_form(form)
    rule = rule or fem.gauss_1d(5)
    P0 = np.asarray(P_from, dtype=float)
    P1 = np.asarray(P_to, dtype=float)
    dt = t_n1 - t_n
    dtau = dt / n_sub
    xq = rule.points[:, 0]
    out = np.array(traces, dtype=float)
    for k in range(1, n_sub + 1):
        th = k / n_sub
        tau_t = t_n + th * dt
        Pk = P0 + th * (P1 - P0)
        seg = np.diff(Pk, axis=1)
        h = np.linalg.norm(seg, axis=-1)
        if np.any(~(h > 0)):
            raise SingularGeometryError("edge with a zero-length segment during propagation")
        tan = seg / h[..., None]
        pts = Pk[:, :-1, None, :] + xq[None, None, :, None] * seg[:, :, None, :]
        A = field.diffusion(wrap_point(pts), tau_t)  # (ne, n, q, 2, 2)
        ared = np.einsum("end,enqdf,enf->enq", tan, A, tan)
        abar = _segment_mean(ared, rule)
        m = np.zeros(Pk.shape[:2])
        m[:, :-1] += h / 2
        m[:, 1:] += h / 2
        s = None
        if form == "conservative":
            nt = np.zeros_like(Pk)
            nt[:, :-1] += tan
            nt[:, 1:] += tan
            nt /= np.linalg.norm(nt, axis=-1, keepdims=True)
            J = _velocity_jacobian(field.velocity, wrap_point(Pk), tau_t)
            s = np.einsum("end,endf,enf->en", nt, J, nt)
        out = _tridiag_substep(h, abar, m, s, out, dtau)
    return out


# ---------------------------------------------------------------------------
# 2D cells
# ---------------------------------------------------------------------------


def propagate_cell_2d(
    phi,
    X_from,
    X_to,
    field,
    t_n,
    t_n1,
    elements,
    interior,
    boundary,
    strategy="fixed-boundary",
    boundary_n1=None,
    form="nonconservative",
    n_sub=1,
    rule=None,
):
    """Evolve the bases ``phi`` ``(nc, 3, nl)`` of triangle patches.

    ``fixed-boundary`` keeps the boundary values of ``phi``;
    ``edge-evolution`` moves them linearly in time to ``boundary_n1``
    ``(nc, 3, nl)`` (only boundary entries read).
    """
    _check_form(form)
    if strategy not in ("fixed-boundary", "edge-evolution"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "edge-evolution" and boundary_n1 is None:
        raise ValueError("edge-evolution strategy needs the evolved edge traces")
    rule = rule or fem.triangle_rule(4)
    phi = np.array(phi, dtype=float)
    nc, q, nl = phi.shape
    X0 = np.asarray(X_from, dtype=float)
    X1 = np.asarray(X_to, dtype=float)
    dt = t_n1 - t_n
    dtau = dt / n_sub
    off = (np.arange(nc) * nl)[:, None]
    I = (off + interior[None, :]).ravel()
    B = (off + boundary[None, :]).ravel()
    gl = (elements[None] + off[:, :, None]).reshape(-1, 3)
    phi_B0 = phi[:, :, boundary]
    phi_B1 = phi_B0 if strategy == "fixed-boundary" else np.asarray(boundary_n1)[:, :, boundary]
    n = nc * nl
    _geometry(X0[:, elements].reshape(-1, 3, 2))
    out = phi
    for k in range(1, n_sub + 1):
        th = k / n_sub
        tau = t_n + th * dt
        Xk = X0 + th * (X1 - X0)
        Pe = Xk[:, elements].reshape(-1, 3, 2)
        meas, G = _geometry(Pe)
        A = field.diffusion(wrap_point(fem.physical_points(Pe, rule)), tau)
        K = fem.assemble(gl, fem.local_stiffness(Pe, A, rule, (meas, G)), n)
        m = fem.assemble_vector(gl, fem.lumped_mass(Pe, meas), n)
        # rows divided by the lumped mass (see the 1D kernel)
        diag = np.ones(n)
        if form == "conservative":
            diag = diag + dtau * field.div(wrap_point(Xk).reshape(-1, 2), tau)
        S = (sp.diags(diag) + dtau * (sp.diags(1.0 / m) @ K)).tocsr()
        S_II = S[I][:, I].tocsc()
        S_IB = S[I][:, B]
        bB = phi_B0 if phi_B1 is phi_B0 else (1 - th) * phi_B0 + th * phi_B1  # (nc, 3, nB)
        old_I = out[:, :, interior]  # (nc, 3, nI)
        rhs = old_I.transpose(1, 0, 2).reshape(q, -1)
        rhs = rhs - np.stack([S_IB @ bB[:, j].ravel() for j in range(q)])
        sol = spla.splu(S_II).solve(rhs.T)
        new = out.copy()
        new[:, :, interior] = sol.T.reshape(q, nc, -1).transpose(1, 0, 2)
        new[:, :, boundary] = bB
        out = new
    return out
