import dataclasses

import numpy as np
import pytest
import scipy.integrate as si
import scipy.linalg as sla

from slmsr import fem
from slmsr.analysis import relative_errors
from slmsr.fields import constant_field, make_test_field
from slmsr.mesh import FineComplex1D, build_coarse_mesh_1d
from slmsr.solver import (
    Galerkin,
    SolverConfig,
    assemble_global,
    backward_euler_step,
    build_complex,
    hat_basis,
    run,
    run_slmsr,
    run_standard,
)


def hats_1d(n, field, form="nonconservative", points=5):
    cx = FineComplex1D(build_coarse_mesh_1d(n), 1)
    return cx, Galerkin(cx, field, form, fem.gauss_1d(points)), hat_basis(cx).phi


def mass_integral(comp):
    """Integral of the composite field over the torus (exact for P1 data)."""
    cx = comp.cx
    vals = comp.cell_values()[:, cx.elements]  # (nc, E, d+1)
    d = cx.dim
    meas, _ = fem.element_geometry(cx.X[:, cx.elements].reshape(-1, d + 1, d))
    return float(np.sum(meas.reshape(vals.shape[:2]) * vals.mean(axis=-1)))


# --- global matrices ------------------------------------------------------------------


def test_hats_matrices():
    n = 16
    field = constant_field(1, 0.7, 1e-2)
    cx, gal, phi = hats_1d(n, field)
    M_n, M_n1, N, A = assemble_global(gal, phi, phi, 0.1, 0.01)
    assert N.count_nonzero() == 0
    col = np.zeros(n)
    col[[0, 1, -1]] = [4, 1, 1]
    np.testing.assert_allclose(M_n.toarray(), sla.circulant(col) / (6 * n), atol=1e-16)
    # -A = K + C with constant c: zero row sums (hats sum to one)
    assert np.abs(A.sum(axis=1)).max() <= 1e-13


def test_galerkin_matches_quad_oracle():
    """Coarse FEM matrices for the unresolved coefficients against adaptive
    quadrature of the exact integrals."""
    field = make_test_field("1d.unresolved")
    n = 8
    cx, gal, phi = hats_1d(n, field, points=64)
    L = -assemble_global(gal, phi, phi, 0.0, 0.01)[3].toarray()
    H = 1.0 / n
    c = lambda x: field.velocity(np.array([[x]]), 0.0)[0, 0]  # noqa: E731
    a = lambda x: field.diffusion(np.array([[x]]), 0.0)[0, 0, 0]  # noqa: E731
    ref = np.zeros((n, n))
    for e in range(n):
        x0 = e * H
        hats = [lambda x: (x0 + H - x) / H, lambda x: (x - x0) / H]
        grads = [-1.0 / H, 1.0 / H]
        nodes = [e, (e + 1) % n]
        for i in range(2):
            for j in range(2):
                k = si.quad(a, x0, x0 + H, limit=400, epsabs=1e-14)[0] * grads[i] * grads[j]
                adv = si.quad(lambda x: hats[i](x) * c(x), x0, x0 + H, limit=400, epsabs=1e-14)[0] * grads[j]
                ref[nodes[i], nodes[j]] += k + adv
    np.testing.assert_allclose(L, ref, atol=1e-10 * np.abs(ref).max())


# --- time step --------------------------------------------------------------------------


def test_backward_euler_no_operator_keeps_weights():
    n = 8
    cx, gal, phi = hats_1d(n, constant_field(1, 0.0, 0.0))
    M = gal.mass(phi)
    Z = 0 * M
    u = np.random.default_rng(0).random(n)
    np.testing.assert_allclose(backward_euler_step(u, M, M, Z, Z, 0.1), u, rtol=1e-13)
    with pytest.raises(ValueError):
        SolverConfig(mass_matrix_time="midpoint")


def test_backward_euler_fourier_decay():
    n, a, dt = 32, 5e-3, 0.02
    cx, gal, phi = hats_1d(n, constant_field(1, 0.0, a))
    M_n, M_n1, N, A = assemble_global(gal, phi, phi, dt, dt)
    x = np.arange(n) / n
    for k in (1, 3, 7):
        u = np.cos(2 * np.pi * k * x)
        got = backward_euler_step(u, M_n, M_n1, N, A, dt)
        # dense eigen-oracle of the generalized problem K v = lambda M v
        lam, V = sla.eigh(-A.toarray(), M_n.toarray())
        coef = np.linalg.solve(V, u)
        expected = V @ (coef / (1 + dt * lam))
        np.testing.assert_allclose(got, expected, atol=1e-10)
        # for a pure mode the eigenvalue is known in closed form
        lam_k = a * (2 - 2 * np.cos(2 * np.pi * k / n)) * n**2 / ((4 + 2 * np.cos(2 * np.pi * k / n)) / 6)
        np.testing.assert_allclose(got, u / (1 + dt * lam_k), atol=1e-10)


def test_constant_weights_stay_constant_divergence_free(mesh62):
    field = make_test_field("2d.solenoidal")
    cfg = SolverConfig("2d.solenoidal", dt=0.01, T=0.01).resolved()
    cx, rule = build_complex(cfg, "standard", mesh62)
    gal = Galerkin(cx, field, "nonconservative", fem.triangle_rule(8))
    phi = hat_basis(cx).phi
    M_n, M_n1, N, A = assemble_global(gal, phi, phi, 0.3, 0.01)
    u = np.full(cx.n_coarse_nodes, 1.7)
    np.testing.assert_allclose(backward_euler_step(u, M_n, M_n1, N, A, 0.01), u, atol=1e-12)


# --- runs -----------------------------------------------------------------------------


def smooth_ic(x):
    return 2.0 + np.sin(2 * np.pi * x[..., 0])


def test_slmsr_matches_reference_without_advection():
    field = constant_field(1, 0.0, 1e-3)
    cfg = SolverConfig("1d.unresolved", n_cells=8, n_fine=64, dt=0.01, T=0.1, report_times=(0.1,),
                       ref_cells=512, alpha=(1e-4,))
    ref = run(cfg, field, smooth_ic, method="reference")
    got = run_slmsr(cfg, field, smooth_ic)
    assert relative_errors(got.snapshots[-1], ref.snapshots[-1])[0] <= 1e-3


@pytest.mark.parametrize("tid", ["1d.series.c", "1d.series.d"])
def test_conservative_hats_mass_conservation(tid):
    cfg = SolverConfig(tid, n_cells=16, dt=1 / 300, T=0.1)
    masses = []
    run_standard(cfg, callback=lambda n, comp: masses.append(mass_integral(comp)))
    assert len(masses) == cfg.n_steps
    steps = np.diff(masses)
    assert np.abs(steps).max() <= 1e-10


def test_slmsr_invariants_every_step_1d():
    cfg = SolverConfig("1d.unresolved", n_cells=8, n_fine=32, dt=0.01, T=0.1, alpha=(1e-4,), n_sub_prop=2)
    eye = np.eye(2)

    def check(n, comp):
        cx = comp.cx
        np.testing.assert_array_equal(comp.basis.phi[:, :, cx.vertex_local], np.broadcast_to(eye, (cx.n_cells, 2, 2)))
        assert comp.interface_mismatch() <= 1e-12

    traj = run_slmsr(cfg, callback=check)
    assert traj.diagnostics["max_delta_error"] == 0.0
    assert traj.diagnostics["max_interface_mismatch"] <= 1e-12


def test_slmsr_invariants_every_step_2d(mesh62):
    for tid, ee in [("2d.solenoidal", False), ("2d.div.conservative", True)]:
        cfg = SolverConfig(tid, levels=2, dt=1 / 300, T=5 / 300, edge_evolution=ee)

        def check(n, comp):
            cx = comp.cx
            np.testing.assert_array_equal(
                comp.basis.phi[:, :, cx.vertex_local], np.broadcast_to(np.eye(3), (cx.n_cells, 3, 3))
            )
            assert comp.interface_mismatch() <= 1e-12

        run_slmsr(cfg, mesh=mesh62, callback=check)


def test_report_times_and_timings():
    cfg = SolverConfig("1d.resolved", n_cells=16, n_fine=8, dt=0.05, T=0.5, report_times=(0.25, 0.5, 0.75))
    traj = run_slmsr(cfg)
    assert traj.times == [0.25, 0.5]
    assert len(traj.snapshots) == 2
    assert {"setup", "trace", "reconstruct", "propagate", "assemble", "solve"} <= set(traj.timings)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.3, T=1.0)
    with pytest.raises(ValueError):
        SolverConfig(method="spectral")
    with pytest.raises(ValueError):
        SolverConfig(n_sub_prop=0)
    c = SolverConfig("2d.div.conservative").resolved()
    assert c.form == "conservative" and c.edge_evolution and c.n_cells == 62 and c.levels == 5
    c = SolverConfig("1d.unresolved").resolved()
    assert c.n_cells == 8 and c.n_fine == 64 and c.report_times[-1] == 1.0


def test_reference_self_convergence():
    """h_ref = 2^-11 against 2^-12 on the resolved test at T = 1."""
    cfg = SolverConfig("1d.resolved", dt=1e-2, T=1.0, report_times=(1.0,))
    a = run(dataclasses.replace(cfg, ref_cells=2048), method="reference").snapshots[-1]
    b = run(dataclasses.replace(cfg, ref_cells=4096), method="reference").snapshots[-1]
    assert relative_errors(a, b)[0] < 0.02
