import numpy as np
import pytest

from slmsr.errors import TraceError
from slmsr.fields import make_test_field
from slmsr.mesh import FineComplex1D, FineComplex2D, build_coarse_mesh_1d
from slmsr.semilag import rk4_flow, trace_back, trace_complex, traced_cell_measure


def zero(x, t):
    return np.zeros_like(x)


def sine(x, t):
    return np.sin(2 * np.pi * x)


def sine_exact(x0, t):
    """Flow of dx/dt = sin(2 pi x): tan(pi x) = tan(pi x0) exp(2 pi t)."""
    return np.arctan(np.tan(np.pi * x0) * np.exp(2 * np.pi * t)) / np.pi


def test_zero_velocity_identity():
    x = np.random.default_rng(0).random((50, 2))
    np.testing.assert_array_equal(trace_back(x, zero, 0.3, 0.2), x)


def test_constant_velocity_exact():
    x = np.random.default_rng(0).random((50, 2))
    c = lambda x, t: np.broadcast_to([1.0, 0.0], x.shape)  # noqa: E731
    np.testing.assert_allclose(trace_back(x, c, 0.01, 0.0), x - [0.01, 0.0], atol=1e-15)


def test_rk4_order_sine_1d():
    x = np.linspace(0.05, 0.45, 41)[:, None]  # away from the fixed points
    dt = 1 / 300
    exact = sine_exact(x, -dt)
    e1 = np.abs(trace_back(x, sine, dt, 0.0, 1) - exact).max()
    e2 = np.abs(trace_back(x, sine, dt, 0.0, 2) - exact).max()
    assert 12 <= e1 / e2 <= 20


def test_rk4_order_solenoidal_2d():
    f = make_test_field("2d.solenoidal")
    x = np.random.default_rng(2).random((200, 2))
    oracle = trace_back(x, f.velocity, 0.25, 0.15, 512)
    errs = [np.abs(trace_back(x, f.velocity, 0.25, 0.15, n) - oracle).max() for n in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(orders - 4) < 0.5)


def test_rk4_order_unresolved_1d():
    f = make_test_field("1d.unresolved")
    x = np.random.default_rng(3).random((200, 1))
    oracle = trace_back(x, f.velocity, 0.5, 0.49, 2048)
    errs = [np.abs(trace_back(x, f.velocity, 0.5, 0.49, n) - oracle).max() for n in (4, 8, 16)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(orders - 4) < 0.5)


@pytest.mark.parametrize("tid", ["1d.unresolved", "1d.series.b", "2d.solenoidal", "2d.div.conservative"])
def test_trace_reversibility(tid):
    # RK4 is not time-symmetric: the round trip error is O(h^5), so the
    # sub-step count must resolve the fastest velocity gradients
    f = make_test_field(tid)
    x = np.random.default_rng(4).random((300, f.dim))
    back = trace_back(x, f.velocity, 0.5, 0.5 - 1 / 300, 8)
    fwd = rk4_flow(back, f.velocity, 0.5 - 1 / 300, 0.5, 8)
    assert np.abs(fwd - x).max() <= 1e-10


def test_trace_back_argument_checks():
    with pytest.raises(ValueError):
        trace_back(np.zeros((1, 1)), sine, 0.1, 0.2)
    with pytest.raises(ValueError):
        rk4_flow(np.zeros((1, 1)), sine, 0.0, 0.1, 0)
    with pytest.raises(TraceError):
        trace_back(np.zeros((2, 1)), lambda x, t: np.full_like(x, np.nan), 0.1, 0.0)


def test_traced_measure_zero_velocity(mesh62):
    cx = FineComplex2D(mesh62, 2)
    meas, inv = traced_cell_measure(trace_complex(cx, zero, 0.1, 0.0))
    np.testing.assert_allclose(meas, mesh62.areas, rtol=1e-12)
    assert not inv.any()


def test_traced_measure_liouville(mesh62):
    f = make_test_field("2d.solenoidal")
    cx = FineComplex2D(mesh62, 5)
    meas, inv = traced_cell_measure(trace_complex(cx, f.velocity, 1 / 300, 0.0))
    assert np.abs(meas - mesh62.areas).max() <= 1e-4
    assert not inv.any()


def test_traced_measure_inversion_flag():
    cx = FineComplex1D(build_coarse_mesh_1d(4), 16)
    compress = lambda x, t: 40.0 * np.sin(2 * np.pi * x)  # noqa: E731
    _, inv = traced_cell_measure(trace_complex(cx, compress, 0.2, 0.0))
    assert inv.any()


def test_trace_complex_shared_nodes_move_together(mesh62):
    f = make_test_field("2d.solenoidal")
    cx = FineComplex2D(mesh62, 2)
    g = trace_complex(cx, f.velocity, 0.2, 0.1)
    # shared nodes land on the same torus point in every adjacent cell
    wrapped = g.wrapped.reshape(-1, 2)
    gid = cx.global_ids.ravel()
    ref = np.zeros((cx.n_global, 2))
    ref[gid] = wrapped
    d = np.abs(wrapped - ref[gid])
    assert np.minimum(d, 1 - d).max() <= 1e-15
