"""Global Eulerian time stepping over multiscale or hat bases.

Semi-discrete Galerkin system with time-dependent basis functions:

    M u' + N u = A u,   M_ij = (phi_j, phi_i),  N_ij = (d_t phi_j, phi_i),

``A = -K - C`` for the transport form (``C_ij = (c . grad phi_j, phi_i)``)
and ``A = -K + B`` for the conservation form (``B_ij = (phi_j, c . grad
phi_i)``), advanced by backward Euler. All integrals are assembled from
fine-element local matrices projected onto the per-cell basis values.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import fem
from .errors import PropagationError
from .fields import CoefField, default_initial_condition, make_test_field
from .mesh import (
    FineComplex1D,
    FineComplex2D,
    build_coarse_mesh_1d,
    build_periodic_delaunay,
    wrap_point,
)
from .propagate import propagate_1d, propagate_cell_2d, propagate_edge_2d
from .reconstruct import (
    MsBasis,
    RegularizerSpec,
    cell_boundary_values,
    edge_polylines,
    reconstruct_1d,
    reconstruct_cells_2d,
    reconstruct_edge_2d,
    sample_global,
)
from .semilag import trace_complex, traced_cell_measure

log = logging.getLogger(__name__)

METHODS = ("slmsr", "standard", "reference")


@dataclasses.dataclass
class SolverConfig:
    """One solver run. Fields left ``None`` take test-dependent defaults
    (see :meth:`resolved`)."""

    test_id: str = "1d.unresolved"
    n_cells: Optional[int] = None  # 1D coarse cells (H = 1/n_cells); 2D target cell count
    n_fine: Optional[int] = None  # 1D fine cells per coarse cell
    levels: Optional[int] = None  # 2D red-refinement levels per coarse cell
    dt: float = 1e-2
    T: float = 1.0
    form: Optional[str] = None
    method: str = "slmsr"
    edge_evolution: Optional[bool] = None  # None: on for the conservation form (2D)
    alpha: Optional[tuple] = None
    n_sub_trace: int = 1
    n_sub_prop: int = 1
    mass_matrix_time: str = "t_n"
    seed: int = 0
    # quadrature of the low-resolution standard FEM: subcells x Gauss points
    # per coarse cell in 1D, rule degree in 2D
    fem_subcells: int = 1
    fem_points: int = 10
    fem_degree: int = 8
    # reference resolution: 1D number of cells; 2D refinement levels of the coarse mesh
    ref_cells: int = 2048
    ref_levels: int = 5
    report_times: Optional[tuple] = None

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T/dt = {steps!r} is not an integer step count")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.mass_matrix_time not in ("t_n", "t_n1"):
            raise ValueError("mass_matrix_time must be 't_n' or 't_n1'")
        if self.n_sub_trace < 1 or self.n_sub_prop < 1:
            raise ValueError("substep counts must be >= 1")

    @property
    def dim(self) -> int:
        return 1 if self.test_id.startswith("1d") else 2

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def resolved(self) -> "SolverConfig":
        """Copy with all test-dependent defaults filled in."""
        c = dataclasses.replace(self)
        if c.n_cells is None:
            c.n_cells = 8 if c.dim == 1 else 62
        if c.dim == 1 and c.n_fine is None:
            c.n_fine = 64
        if c.dim == 2 and c.levels is None:
            c.levels = 5
        if c.alpha is None:
            c.alpha = (0.1,) if c.dim == 1 else (1e-3,)
        if c.form is None:
            c.form = make_test_field(c.test_id, c.seed).form
        if c.edge_evolution is None:
            c.edge_evolution = c.dim == 2 and c.form == "conservative"
        if c.report_times is None:
            c.report_times = tuple(float(Fraction(k, 10)) for k in range(1, 11))
        return c


# ---------------------------------------------------------------------------
# Fields living on a fine complex
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class FineField:
    """Continuous piecewise-linear field given by global fine nodal values
    on a fine complex (its Eulerian geometry)."""

    cx: object
    values: np.ndarray

    def __call__(self, p):
        return sample_global(self.cx, self.values, p)

    def evaluate(self, p):
        return sample_global(self.cx, self.values, p, with_gradient=True)


@dataclasses.dataclass
class CompositeField:
    """Coarse weights ``u^H`` with the basis they multiply."""

    weights: np.ndarray
    basis: MsBasis
    cx: object
    t: float = 0.0

    def cell_values(self) -> np.ndarray:
        return self.basis.combine(self.cx.cells, self.weights)

    def fine(self) -> FineField:
        return FineField(self.cx, to_global(self.cx, self.cell_values()))

    def interface_mismatch(self) -> float:
        """Largest disagreement between cells at shared fine nodes."""
        vals = self.cell_values().ravel()
        gid = self.cx.global_ids.ravel()
        hi = np.full(self.cx.n_global, -np.inf)
        lo = np.full(self.cx.n_global, np.inf)
        np.maximum.at(hi, gid, vals)
        np.minimum.at(lo, gid, vals)
        return float(np.max(hi - lo))


def to_global(cx, cell_values):
    U = np.empty(cx.n_global)
    U[cx.global_ids.ravel()] = np.asarray(cell_values).ravel()
    return U


def hat_basis(cx) -> MsBasis:
    phi = np.broadcast_to(cx.ref_lambda.T, (cx.n_cells,) + cx.ref_lambda.T.shape).copy()
    traces = None
    if cx.dim == 2:
        t = np.linspace(0.0, 1.0, cx.n + 1)
        tr = np.stack([1.0 - t, t])
        traces = np.broadcast_to(tr, (cx.coarse.n_edges, 2, cx.n + 1)).copy()
    return MsBasis(phi, cx.X, traces)


# ---------------------------------------------------------------------------
# Galerkin assembly
# ---------------------------------------------------------------------------


class Galerkin:
    """Fine-element local matrices of a fine complex and their projection
    onto per-cell basis values."""

    def __init__(self, cx, field: CoefField, form: str, rule: fem.QuadratureRule):
        if form not in ("nonconservative", "conservative"):
            raise ValueError(f"unknown form {form!r}")
        self.cx, self.field, self.form, self.rule = cx, field, form, rule
        d = cx.dim
        nc, E = cx.n_cells, len(cx.elements)
        self.shape = (nc, E, d + 1, d + 1)
        self.Pe = cx.X[:, cx.elements].reshape(-1, d + 1, d)
        self.geom = fem.element_geometry(self.Pe)
        self.qpts = wrap_point(fem.physical_points(self.Pe, rule))
        self.Mloc = fem.local_mass(self.Pe, self.geom[0]).reshape(self.shape)
        self._A_cache = None

    def local_operator(self, t):
        """Fine-element local matrices of ``-A`` at time ``t``."""
        if self.field.stationary and self._A_cache is not None:
            return self._A_cache
        Aq = self.field.diffusion(self.qpts, t)
        cq = self.field.velocity(self.qpts, t)
        K = fem.local_stiffness(self.Pe, Aq, self.rule, self.geom)
        if self.form == "nonconservative":
            L = K + fem.local_advection(self.Pe, cq, self.rule, "gradient-on-trial", self.geom)
        else:
            L = K - fem.local_advection(self.Pe, cq, self.rule, "gradient-on-test", self.geom)
        L = L.reshape(self.shape)
        if self.field.stationary:
            self._A_cache = L
        return L

    def project(self, phi_a, L, phi_b):
        """Coarse local matrices ``(nc, m, m)``: ``sum phi_a_i L phi_b_j``."""
        el = self.cx.elements
        return np.einsum("ciea,ceab,cjeb->cij", phi_a[:, :, el], L, phi_b[:, :, el])

    def coarse(self, local):
        return fem.assemble(self.cx.cells, local, self.cx.n_coarse_nodes)

    def mass(self, phi):
        return self.coarse(self.project(phi, self.Mloc, phi))

    def load(self, phi, U_cell):
        """``b_i = (u, phi_i)`` for a piecewise-linear ``u`` given per cell."""
        el = self.cx.elements
        loc = np.einsum("ciea,ceab,ceb->ci", phi[:, :, el], self.Mloc, U_cell[:, el])
        return fem.assemble_vector(self.cx.cells, loc, self.cx.n_coarse_nodes)


def assemble_global(gal: Galerkin, phi_n, phi_n1, t_n1, dt):
    """Return ``(M_n, M_n1, N, A)`` for one step: masses of both basis
    snapshots, the difference-quotient time-derivative matrix and the
    spatial operator at ``t_n1``."""
    if phi_n.shape != phi_n1.shape:
        raise ValueError("basis snapshots live on different meshes")
    M_n = gal.mass(phi_n)
    M_n1 = gal.mass(phi_n1)
    N = gal.coarse(gal.project(phi_n1, gal.Mloc, (phi_n1 - phi_n) / dt))
    A = -gal.coarse(gal.project(phi_n1, gal.local_operator(t_n1), phi_n1))
    return M_n, M_n1, N, A


def backward_euler_step(u_n, M_n, M_n1, N, A, dt, mass_matrix_time="t_n", f=None):
    """Solve ``(M - dt A + dt N) u^{n+1} = M u^n + dt f`` with ``M`` taken at
    ``t_n`` (as written in the scheme) or ``t_n1``."""
    M = M_n if mass_matrix_time == "t_n" else M_n1
    lhs = M - dt * A + dt * N
    rhs = M @ u_n
    if f is not None:
        rhs = rhs + dt * f
    return fem.solve(lhs, rhs)


# ---------------------------------------------------------------------------
# Discretizations
# ---------------------------------------------------------------------------


def coarse_mesh(cfg: SolverConfig):
    if cfg.dim == 1:
        return build_coarse_mesh_1d(cfg.n_cells)
    return build_periodic_delaunay(cfg.n_cells, cfg.seed)


def build_complex(cfg: SolverConfig, method: str, mesh=None):
    """Fine complex and quadrature rule for one method."""
    mesh = coarse_mesh(cfg) if mesh is None else mesh
    if cfg.dim == 1:
        if method == "slmsr":
            return FineComplex1D(mesh, cfg.n_fine), fem.gauss_1d(5)
        if method == "standard":
            return FineComplex1D(mesh, cfg.fem_subcells), fem.gauss_1d(cfg.fem_points)
        return FineComplex1D(build_coarse_mesh_1d(cfg.ref_cells), 1), fem.gauss_1d(5)
    if method == "slmsr":
        return FineComplex2D(mesh, cfg.levels), fem.triangle_rule(4)
    if method == "standard":
        return FineComplex2D(mesh, 0), fem.triangle_rule(cfg.fem_degree)
    fine = FineComplex2D(mesh, cfg.ref_levels).as_trimesh()
    return FineComplex2D(fine, 0), fem.triangle_rule(4)


@dataclasses.dataclass
class Trajectory:
    config: SolverConfig
    method: str
    times: list
    snapshots: list  # FineField per reported time
    timings: dict
    final: Optional[CompositeField] = None
    diagnostics: dict = dataclasses.field(default_factory=dict)


def _report_steps(cfg):
    return {int(round(t / cfg.dt)): t for t in cfg.report_times if 0 < t <= cfg.T + 1e-12}


class _Timer:
    def __init__(self):
        self.totals = {}

    def __call__(self, key):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.totals[key] = timer.totals.get(key, 0.0) + time.perf_counter() - self.t0

        return _Ctx()


def initial_basis(cx, u0, cfg: SolverConfig) -> MsBasis:
    """Reconstruction of ``u0`` on the untraced cells."""
    reg = _regularizer(cfg)
    U0 = u0(cx.global_coords)
    if cx.dim == 1:
        return MsBasis(reconstruct_1d(cx.X, U0[cx.global_ids], reg), cx.X)
    traces = reconstruct_edge_2d(edge_polylines(cx, cx.X), U0[cx.edge_gids], reg)
    phi = reconstruct_cells_2d(cx, cx.X, U0[cx.global_ids], traces, reg)
    return MsBasis(phi, cx.X, traces)


def _regularizer(cfg):
    return RegularizerSpec("deviation" if cfg.dim == 1 else "harmonic", cfg.alpha)


def project_initial(gal: Galerkin, phi, u0):
    """L2 projection of ``u0`` (interpolated on the fine nodes) onto the
    span of the basis."""
    cx = gal.cx
    U0 = u0(cx.global_coords)[cx.global_ids]
    return fem.solve(gal.mass(phi), gal.load(phi, U0))


def slmsr_step(cx, basis: MsBasis, weights, field, cfg: SolverConfig, t_n, t_n1, timer=None):
    """Trace, reconstruct and propagate: the basis at ``t_n1``."""
    timer = timer or _Timer()
    reg = _regularizer(cfg)
    with timer("trace"):
        traced = trace_complex(cx, field.velocity, t_n1, t_n, cfg.n_sub_trace)
        _, inverted = traced_cell_measure(traced)
        if np.any(inverted):
            bad = np.flatnonzero(inverted)
            raise PropagationError(
                f"traced fine elements inverted in {len(bad)} cell(s), first cell {bad[0]}; "
                "the time step is too large for the flow"
            )
        Xt = traced.traced
        dep = np.empty_like(cx.global_coords)
        dep[cx.global_ids.ravel()] = wrap_point(Xt).reshape(-1, cx.dim)
    with timer("reconstruct"):
        U = to_global(cx, basis.combine(cx.cells, weights))
        samples = sample_global(cx, U, wrap_point(dep))
        u_cell = samples[cx.global_ids]
        if cx.dim == 1:
            phi_t = reconstruct_1d(Xt, u_cell, reg)
        else:
            P_edges = edge_polylines(cx, Xt)
            traces = reconstruct_edge_2d(P_edges, samples[cx.edge_gids], reg)
            phi_t = reconstruct_cells_2d(cx, Xt, u_cell, traces, reg)
    with timer("propagate"):
        if cx.dim == 1:
            phi = propagate_1d(phi_t, Xt, cx.X, field, t_n, t_n1, cfg.form, cfg.n_sub_prop)
            return MsBasis(phi, cx.X)
        if cfg.edge_evolution:
            traces_n1 = propagate_edge_2d(
                traces, P_edges, edge_polylines(cx, cx.X), field, t_n, t_n1, cfg.n_sub_prop,
                form=cfg.form,
            )
            bnd = cell_boundary_values(cx, traces_n1)
            strategy = "edge-evolution"
        else:
            traces_n1, bnd, strategy = traces, None, "fixed-boundary"
        phi = propagate_cell_2d(
            phi_t, Xt, cx.X, field, t_n, t_n1, cx.elements, cx.interior_local,
            cx.boundary_local, strategy, bnd, cfg.form, cfg.n_sub_prop,
        )
        return MsBasis(phi, cx.X, traces_n1)


def run(cfg: SolverConfig, field: CoefField = None, u0: Callable = None, mesh=None,
        method: Optional[str] = None, callback=None) -> Trajectory:
    """Run one method (``slmsr``, ``standard`` or ``reference``) and return
    fine snapshots at the configured report times."""
    cfg = cfg.resolved()
    method = method or cfg.method
    field = field or make_test_field(cfg.test_id, cfg.seed)
    u0 = u0 or default_initial_condition(cfg.dim)
    timer = _Timer()
    with timer("setup"):
        cx, rule = build_complex(cfg, method, mesh)
        gal = Galerkin(cx, field, cfg.form, rule)
        basis = initial_basis(cx, u0, cfg) if method == "slmsr" else hat_basis(cx)
        u = project_initial(gal, basis.phi, u0)
    report = _report_steps(cfg)
    times, snaps = [], []
    diag = {"max_interface_mismatch": 0.0, "max_delta_error": 0.0}
    M_n = gal.mass(basis.phi)
    lhs_factor = None
    for n in range(cfg.n_steps):
        t_n, t_n1 = n * cfg.dt, (n + 1) * cfg.dt
        try:
            if method == "slmsr":
                new_basis = slmsr_step(cx, basis, u, field, cfg, t_n, t_n1, timer)
                with timer("assemble"):
                    _, M_n1, N, A = assemble_global(gal, basis.phi, new_basis.phi, t_n1, cfg.dt)
                with timer("solve"):
                    u = backward_euler_step(u, M_n, M_n1, N, A, cfg.dt, cfg.mass_matrix_time)
                basis, M_n = new_basis, M_n1
                delta = basis.phi[:, :, cx.vertex_local] - np.eye(cx.dim + 1)
                diag["max_delta_error"] = max(diag["max_delta_error"], float(np.abs(delta).max()))
            else:
                with timer("assemble"):
                    if lhs_factor is None or not field.stationary:
                        A = -gal.coarse(gal.project(basis.phi, gal.local_operator(t_n1), basis.phi))
                        lhs = (M_n - cfg.dt * A).tocsc()
                        lhs_factor = _factor(lhs)
                with timer("solve"):
                    u = lhs_factor(M_n @ u)
        except Exception as exc:
            raise _with_step(exc, n, t_n1) from exc
        comp = CompositeField(u, basis, cx, t_n1)
        if method == "slmsr":
            diag["max_interface_mismatch"] = max(diag["max_interface_mismatch"], comp.interface_mismatch())
        if callback is not None:
            callback(n + 1, comp)
        if (n + 1) in report:
            times.append(report[n + 1])
            snaps.append(comp.fine())
    return Trajectory(cfg, method, times, snaps, timer.totals, comp if cfg.n_steps else None, diag)


def _with_step(exc, n, t):
    msg = f"step {n} (t={t:.6g}): {exc}"
    try:
        return type(exc)(msg)
    except Exception:  # exception types with incompatible constructors
        return RuntimeError(msg)


def _factor(A):
    """Solver closure for a fixed matrix with the residual contract of
    :func:`fem.solve` (factorization reused across steps)."""
    if A.shape[0] <= fem.DIRECT_LIMIT:
        lu = fem.splu_checked(A)
        return lambda b: fem._check_residual(A, lu.solve(b), b)
    return lambda b: fem.solve(A, b)


def run_slmsr(cfg: SolverConfig, field=None, ic=None, mesh=None, callback=None) -> Trajectory:
    return run(cfg, field, ic, mesh, "slmsr", callback)


def run_standard(cfg: SolverConfig, field=None, ic=None, mesh=None, resolution="coarse", callback=None) -> Trajectory:
    if resolution not in ("coarse", "reference"):
        raise ValueError("resolution must be 'coarse' or 'reference'")
    return run(cfg, field, ic, mesh, "standard" if resolution == "coarse" else "reference", callback)
