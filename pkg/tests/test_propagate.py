import numpy as np
import pytest

from slmsr.errors import PropagationError
from slmsr.fields import CoefField, constant_field, make_test_field
from slmsr.mesh import FineComplex1D, FineComplex2D, build_coarse_mesh_1d
from slmsr.propagate import propagate_1d, propagate_cell_2d, propagate_edge_2d
from slmsr.reconstruct import cell_boundary_values, edge_polylines
from slmsr.semilag import trace_complex
from slmsr.solver import hat_basis


def zero_field(dim):
    return constant_field(dim, 0.0, 0.0)


def heat_oracle_1d(phi, x, a, dt, n_sub):
    """Dense lumped-mass implicit Euler on a static fine mesh, fixed ends."""
    n = len(x)
    h = np.diff(x)
    m = np.zeros(n)
    m[:-1] += h / 2
    m[1:] += h / 2
    K = np.zeros((n, n))
    for i in range(n - 1):
        K[i : i + 2, i : i + 2] += a / h[i] * np.array([[1, -1], [-1, 1]])
    L = np.diag(m) + dt / n_sub * K
    L[0], L[-1] = 0, 0
    L[0, 0] = L[-1, -1] = 1
    out = phi.copy()
    for _ in range(n_sub):
        rhs = m * out
        rhs[0], rhs[-1] = out[0], out[-1]
        out = np.linalg.solve(L, rhs)
    return out


@pytest.fixture(scope="module")
def cx1():
    return FineComplex1D(build_coarse_mesh_1d(8), 32)


@pytest.fixture(scope="module")
def cx2(mesh62):
    return FineComplex2D(mesh62, 3)


def moved(cx, field, dt=1 / 300):
    return trace_complex(cx, field.velocity, dt, 0.0).traced


def test_1d_zero_field_identity(cx1):
    phi = np.random.default_rng(0).random((cx1.n_cells, 2, cx1.n_local))
    Xt = moved(cx1, make_test_field("1d.unresolved"))
    out = propagate_1d(phi, Xt, cx1.X, zero_field(1), 0.0, 1 / 300, n_sub=3)
    np.testing.assert_array_equal(out, phi)


@pytest.mark.parametrize("n_sub", [1, 4])
def test_1d_heat_oracle(cx1, n_sub):
    a = 3e-3
    phi = hat_basis(cx1).phi
    out = propagate_1d(phi, cx1.X, cx1.X, constant_field(1, 0.0, a), 0.0, 0.05, n_sub=n_sub)
    x = cx1.X[0, :, 0]
    for k in range(2):
        assert np.abs(out[0, k] - heat_oracle_1d(phi[0, k], x, a, 0.05, n_sub)).max() <= 1e-12


def test_1d_conservative_constant_divergence(cx1):
    s, dt = 2.5, 0.01
    field = CoefField(
        1,
        lambda x, t: s * x,
        lambda x, t: np.zeros(np.shape(x) + (1,)),
        lambda x, t: np.full(np.shape(x)[:-1], s),
        form="conservative",
    )
    phi = np.random.default_rng(1).random((cx1.n_cells, 2, cx1.n_local))
    out = propagate_1d(phi, cx1.X, cx1.X, field, 0.0, dt, form="conservative")
    np.testing.assert_allclose(out[:, :, 1:-1], phi[:, :, 1:-1] / (1 + s * dt), rtol=1e-14)
    np.testing.assert_array_equal(out[:, :, [0, -1]], phi[:, :, [0, -1]])


def test_1d_delta_preserved(cx1):
    f = make_test_field("1d.series.c")
    phi = hat_basis(cx1).phi
    out = propagate_1d(phi, moved(cx1, f), cx1.X, f, 0.0, 1 / 300, "conservative", n_sub=5)
    np.testing.assert_array_equal(out[:, :, [0, -1]], phi[:, :, [0, -1]])


def test_1d_inverted_mesh_raises(cx1):
    Xt = cx1.X.copy()
    Xt[0, 3, 0], Xt[0, 4, 0] = Xt[0, 4, 0], Xt[0, 3, 0]
    with pytest.raises(PropagationError):
        propagate_1d(hat_basis(cx1).phi, Xt, cx1.X, zero_field(1), 0.0, 0.01)


def test_1d_form_validation(cx1):
    with pytest.raises(ValueError):
        propagate_1d(hat_basis(cx1).phi, cx1.X, cx1.X, zero_field(1), 0.0, 0.01, form="weak")


# --- edges ------------------------------------------------------------------------


def test_edge_zero_field_unchanged(cx2):
    P = edge_polylines(cx2, cx2.X)
    tr = np.random.default_rng(2).random((len(P), 2, cx2.n + 1))
    out = propagate_edge_2d(tr, P, P, zero_field(2), 0.0, 0.01, n_sub=2)
    np.testing.assert_array_equal(out, tr)


def test_edge_static_isotropic_equals_1d_heat(cx2):
    a = 4e-3
    P = edge_polylines(cx2, cx2.X)
    t = np.linspace(0, 1, cx2.n + 1)
    tr = np.broadcast_to(np.stack([1 - t, t]), (len(P), 2, cx2.n + 1)).copy()
    out = propagate_edge_2d(tr, P, P, constant_field(2, 0.0, a), 0.0, 0.02, n_sub=2,
                            form="nonconservative")
    for e in range(0, len(P), 11):
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P[e], axis=0), axis=1))])
        for k in range(2):
            assert np.abs(out[e, k] - heat_oracle_1d(tr[e, k], s, a, 0.02, 2)).max() <= 1e-12


def test_edge_endpoints_exact(cx2):
    f = make_test_field("2d.div.conservative")
    P1 = edge_polylines(cx2, cx2.X)
    P0 = edge_polylines(cx2, moved(cx2, f))
    t = np.linspace(0, 1, cx2.n + 1)
    tr = np.broadcast_to(np.stack([1 - t, t]), (len(P1), 2, cx2.n + 1)).copy()
    out = propagate_edge_2d(tr, P0, P1, f, 0.0, 1 / 300, n_sub=7)
    np.testing.assert_array_equal(out[:, :, [0, -1]], tr[:, :, [0, -1]])


# --- cells ------------------------------------------------------------------------


def cell_args(cx):
    return dict(elements=cx.elements, interior=cx.interior_local, boundary=cx.boundary_local)


def test_cell_zero_field_identity(cx2):
    f = make_test_field("2d.solenoidal")
    phi = np.random.default_rng(3).random((cx2.n_cells, 3, cx2.n_local))
    out = propagate_cell_2d(phi, moved(cx2, f), cx2.X, zero_field(2), 0.0, 1 / 300, **cell_args(cx2))
    np.testing.assert_array_equal(out, phi)


def test_cell_strategies_coincide_without_diffusion(cx2):
    f = make_test_field("2d.solenoidal")
    adv_only = CoefField(2, f.velocity, lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2)), f.divergence)
    Xt = moved(cx2, f)
    basis = hat_basis(cx2)
    P0, P1 = edge_polylines(cx2, Xt), edge_polylines(cx2, cx2.X)
    # A = 0 and the transport form: no reaction, so edges keep their values
    tr1 = propagate_edge_2d(basis.edge_traces, P0, P1, adv_only, 0.0, 1 / 300, form="nonconservative")
    np.testing.assert_array_equal(tr1, basis.edge_traces)
    a = propagate_cell_2d(basis.phi, Xt, cx2.X, adv_only, 0.0, 1 / 300, **cell_args(cx2))
    b = propagate_cell_2d(basis.phi, Xt, cx2.X, adv_only, 0.0, 1 / 300, **cell_args(cx2),
                          strategy="edge-evolution", boundary_n1=cell_boundary_values(cx2, tr1))
    np.testing.assert_array_equal(a, b)
    # advection alone relabels geometry: identity on values
    np.testing.assert_array_equal(a, basis.phi)


def test_cell_divergence_free_forms_agree(cx2):
    f = make_test_field("2d.solenoidal")
    Xt = moved(cx2, f)
    phi = hat_basis(cx2).phi
    a = propagate_cell_2d(phi, Xt, cx2.X, f, 0.0, 1 / 300, **cell_args(cx2), form="nonconservative")
    b = propagate_cell_2d(phi, Xt, cx2.X, f, 0.0, 1 / 300, **cell_args(cx2), form="conservative")
    assert np.abs(a - b).max() <= 1e-8


def test_cell_delta_and_maximum_principle(cx2):
    field = constant_field(2, 0.0, 5e-3)
    rng = np.random.default_rng(4)
    phi = rng.random((cx2.n_cells, 3, cx2.n_local))
    phi[:, :, cx2.vertex_local] = np.eye(3)
    out = propagate_cell_2d(phi, cx2.X, cx2.X, field, 0.0, 0.01, **cell_args(cx2), n_sub=3)
    np.testing.assert_array_equal(out[:, :, cx2.boundary_local], phi[:, :, cx2.boundary_local])
    lo = phi.min(axis=2, keepdims=True)
    hi = phi.max(axis=2, keepdims=True)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_cell_argument_validation(cx2):
    phi = hat_basis(cx2).phi
    with pytest.raises(ValueError):
        propagate_cell_2d(phi, cx2.X, cx2.X, zero_field(2), 0.0, 0.01, **cell_args(cx2), strategy="edge-evolution")
    with pytest.raises(ValueError):
        propagate_cell_2d(phi, cx2.X, cx2.X, zero_field(2), 0.0, 0.01, **cell_args(cx2), strategy="free")
