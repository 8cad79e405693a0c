"""Coefficient fields, initial conditions and the experiment catalog.

All evaluators take points ``x`` with a trailing dimension axis
(``x[..., d]``) and a scalar time ``t``. Velocities return ``(..., d)``,
diffusion tensors ``(..., d, d)``.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

from .mesh import TriMesh2D, build_periodic_delaunay, locate_cell, wrap_point

TWO_PI = 2.0 * np.pi

CATALOG = (
    "1d.series.a",
    "1d.series.b",
    "1d.series.c",
    "1d.series.d",
    "1d.unresolved",
    "1d.resolved",
    "1d.random",
    "2d.solenoidal",
    "2d.div.nonconservative",
    "2d.div.conservative",
    "2d.random",
)


# Short names used in some experiment notes.
ALIASES = {
    "1d.t2a": "1d.unresolved",
    "1d.t2b": "1d.resolved",
    "1d.t3": "1d.random",
    "2d.t1": "2d.solenoidal",
    "2d.t2a": "2d.div.nonconservative",
    "2d.t2b": "2d.div.conservative",
    "2d.t3": "2d.random",
}


@dataclasses.dataclass
class CoefField:
    """Velocity and diffusion of one experiment.

    ``divergence`` is the analytic ``div c`` when known; otherwise it is
    approximated by central differences (step ``1e-5``).
    """

    dim: int
    velocity: Callable
    diffusion: Callable
    divergence: Optional[Callable] = None
    test_id: str = "custom"
    form: str = "nonconservative"
    stationary: bool = False
    random: bool = False
    seed: Optional[int] = None

    def div(self, x, t):
        if self.divergence is not None:
            return self.divergence(x, t)
        return fd_divergence(self.velocity, x, t)


def fd_divergence(velocity, x, t, step=1e-5):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    out = np.zeros(x.shape[:-1])
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        out += (velocity(x + e, t)[..., k] - velocity(x - e, t)[..., k]) / (2 * step)
    return out


def _scalar_tensor(a):
    return np.asarray(a)[..., None, None]


def _fourier_1d(const, terms, diff_const, diff_amp, diff_k, diff_t=None):
    """Velocity ``const + sum a cos(k pi x)`` with optional time factors and
    diffusion ``diff_const + diff_amp [cos(diff_t pi t)] cos(diff_k pi x)``.

    ``terms`` holds ``(amp, k_x, time_factor)`` with ``time_factor`` a callable
    of ``t`` or ``None``.
    """

    def vel(x, t):
        x = np.asarray(x, dtype=float)[..., 0]
        c0 = const(t) if callable(const) else const
        v = np.full(x.shape, float(c0)) if np.ndim(c0) == 0 else c0
        for amp, k, tf in terms:
            f = 1.0 if tf is None else tf(t)
            v = v + amp * f * np.cos(k * np.pi * x)
        return v[..., None]

    def div(x, t):
        x = np.asarray(x, dtype=float)[..., 0]
        v = np.zeros(x.shape)
        for amp, k, tf in terms:
            f = 1.0 if tf is None else tf(t)
            v = v - amp * f * k * np.pi * np.sin(k * np.pi * x)
        return v

    def dif(x, t):
        x = np.asarray(x, dtype=float)[..., 0]
        f = 1.0 if diff_t is None else np.cos(diff_t * np.pi * t)
        return _scalar_tensor(diff_const + diff_amp * f * np.cos(diff_k * np.pi * x))

    return vel, div, dif


def _series_a():
    vel, div, dif = _fourier_1d(
        0.25, [(0.5, 10, None), (0.25, 74, None), (0.15, 196, None)], 1e-3, 9e-4, 86, diff_t=10
    )
    return CoefField(1, vel, dif, div, "1d.series.a", "nonconservative", stationary=False)


def _series_b():
    vel, div, dif = _fourier_1d(
        lambda t: 0.5 * np.cos(TWO_PI * t),
        [
            (0.25, 8, lambda t: np.cos(6 * np.pi * t)),
            (0.125, 62, lambda t: np.cos(4 * np.pi * t)),
            (0.125, 150, None),
        ],
        1e-3,
        9e-4,
        86,
        diff_t=10,
    )
    return CoefField(1, vel, dif, div, "1d.series.b", "nonconservative", stationary=False)


def _series_c():
    vel, div, dif = _fourier_1d(
        0.5, [(0.125, 8, None), (0.125, 62, None), (0.125, 150, None)], 1e-2, 9e-3, 86, diff_t=10
    )
    return CoefField(1, vel, dif, div, "1d.series.c", "conservative", stationary=False)


def _series_d():
    vel, div, dif = _fourier_1d(
        0.75, [(0.5, 8, None), (0.25, 62, None), (0.1, 150, None)], 1e-2, 9e-3, 86, diff_t=10
    )
    return CoefField(1, vel, dif, div, "1d.series.d", "conservative", stationary=False)


def _unresolved():
    vel, div, dif = _fourier_1d(
        0.5, [(0.25, 8, None), (0.125, 196, None), (0.0625, 210, None)], 1e-3, 9e-4, 174
    )
    return CoefField(1, vel, dif, div, "1d.unresolved", "nonconservative", stationary=True)


def _resolved():
    vel, div, dif = _fourier_1d(
        0.5, [(0.25, 6, None), (0.125, 10, None), (0.0625, 14, None)], 1e-3, 9e-4, 16
    )
    return CoefField(1, vel, dif, div, "1d.resolved", "nonconservative", stationary=True)


# ---------------------------------------------------------------------------
# 2D analytic fields
# ---------------------------------------------------------------------------


def stream_function(x, t):
    x = np.asarray(x, dtype=float)
    return np.sin(TWO_PI * (x[..., 0] - t)) * np.sin(TWO_PI * x[..., 1])


def stream_velocity(x, t):
    """Perpendicular gradient ``(d_2 psi, -d_1 psi)`` of the moving-vortex
    stream function; divergence free."""
    x = np.asarray(x, dtype=float)
    a = TWO_PI * (x[..., 0] - t)
    b = TWO_PI * x[..., 1]
    return TWO_PI * np.stack([np.sin(a) * np.cos(b), -np.cos(a) * np.sin(b)], axis=-1)


def oscillating_diffusion_2d(x, t):
    """``(Id - 0.9999 diag(sin 60 pi x_1, sin 60 pi x_2)) / 100``.

    Eigenvalues range over ``[1e-6, 1.9999e-2]``.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = 0.01 * (1.0 - 0.9999 * np.sin(60 * np.pi * x[..., 0]))
    out[..., 1, 1] = 0.01 * (1.0 - 0.9999 * np.sin(60 * np.pi * x[..., 1]))
    return out


def rotated_velocity(x, t):
    x = np.asarray(x, dtype=float)
    a = TWO_PI * (x[..., 0] - t)
    b = TWO_PI * x[..., 1]
    g = TWO_PI * x[..., 0]
    v1 = TWO_PI * np.sin(a) * np.cos(b)
    v2 = -np.cos(a) * np.sin(b) * np.sin(g)
    ct, st = np.cos(TWO_PI * t), np.sin(TWO_PI * t)
    return np.stack([ct * v1 + st * v2, -st * v1 + ct * v2], axis=-1)


def rotated_divergence(x, t):
    x = np.asarray(x, dtype=float)
    a = TWO_PI * (x[..., 0] - t)
    b = TWO_PI * x[..., 1]
    g = TWO_PI * x[..., 0]
    d1v1 = TWO_PI**2 * np.cos(a) * np.cos(b)
    d2v1 = -(TWO_PI**2) * np.sin(a) * np.sin(b)
    d1v2 = TWO_PI * np.sin(b) * (np.sin(a) * np.sin(g) - np.cos(a) * np.cos(g))
    d2v2 = -TWO_PI * np.cos(a) * np.cos(b) * np.sin(g)
    ct, st = np.cos(TWO_PI * t), np.sin(TWO_PI * t)
    return ct * d1v1 + st * d1v2 - st * d2v1 + ct * d2v2


def separatrix_velocity(x, t):
    x = np.asarray(x, dtype=float)
    s = np.sin(TWO_PI * (x[..., 0] - t))
    c = np.cos(TWO_PI * (x[..., 0] - t))
    C2 = np.cos(np.pi * (x[..., 1] - 0.5)) ** 2
    return (TWO_PI / 5) * np.stack([s**2 * C2, 2 * s * c * C2], axis=-1)


def separatrix_divergence(x, t):
    x = np.asarray(x, dtype=float)
    s = np.sin(TWO_PI * (x[..., 0] - t))
    c = np.cos(TWO_PI * (x[..., 0] - t))
    C2 = np.cos(np.pi * (x[..., 1] - 0.5)) ** 2
    S2 = np.sin(TWO_PI * (x[..., 1] - 0.5))
    return (TWO_PI / 5) * (2 * np.pi * 2 * s * c * C2 - TWO_PI * s * c * S2)


def _zero_div(x, t):
    return np.zeros(np.shape(x)[:-1])


# ---------------------------------------------------------------------------
# Random fields
# ---------------------------------------------------------------------------


def _periodic_linear(knots_values):
    """Periodic piecewise-linear interpolant on equispaced knots ``k / n``."""
    vals = np.asarray(knots_values, dtype=float)
    n = len(vals)

    def f(x):
        s = wrap_point(np.asarray(x, dtype=float)) * n
        i = np.minimum(np.floor(s).astype(np.int64), n - 1)
        th = s - i
        return (1 - th) * vals[i] + th * vals[(i + 1) % n]

    def df(x):
        s = wrap_point(np.asarray(x, dtype=float)) * n
        i = np.minimum(np.floor(s).astype(np.int64), n - 1)
        return (vals[(i + 1) % n] - vals[i]) * n

    return f, df


def smooth_velocity_base(x):
    return 0.5 + 0.25 * np.cos(TWO_PI * x)


def random_field_1d(seed, n_knots, lo=None, hi=None, smooth=False, variance=0.1, base=None):
    """Seeded periodic piecewise-linear random field on ``n_knots`` knots.

    ``smooth=False``: uniform draws rescaled so the knot minimum is ``lo`` and
    the maximum ``hi`` (diffusion variant). ``smooth=True``: ``base`` at the
    knots plus Gaussian noise of the given variance (velocity variant; ``lo``
    and ``hi`` unused). Draws come from a PCG64 stream seeded by ``seed``,
    one value per knot in knot order.

    Returns ``(evaluate, derivative, knot_values)``.
    """
    if n_knots < 2:
        raise ValueError("n_knots must be >= 2")
    rng = np.random.Generator(np.random.PCG64(seed))
    xk = np.arange(n_knots) / n_knots
    if smooth:
        base = smooth_velocity_base if base is None else base
        vals = base(xk) + rng.normal(0.0, np.sqrt(variance), n_knots)
    else:
        if lo is None or hi is None or not lo < hi:
            raise ValueError(f"need lo < hi, got lo={lo!r}, hi={hi!r}")
        raw = rng.random(n_knots)
        vals = lo + (raw - raw.min()) * (hi - lo) / (raw.max() - raw.min())
        vals[np.argmin(raw)] = lo
        vals[np.argmax(raw)] = hi
    f, df = _periodic_linear(vals)
    return f, df, vals


def random_cellwise_diffusion_2d(seed, mesh: TriMesh2D, lo, hi):
    """Diagonal diffusion tensor, constant on each cell of ``mesh``; both
    diagonal entries of every cell drawn uniformly and jointly rescaled to
    ``[lo, hi]``. Returns ``(evaluate, per_cell_diagonals)``."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo!r}, hi={hi!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    raw = rng.random((mesh.n_cells, 2))
    vals = lo + (raw - raw.min()) * (hi - lo) / (raw.max() - raw.min())
    vals.flat[np.argmin(raw)] = lo
    vals.flat[np.argmax(raw)] = hi

    def dif(x, t):
        x = np.asarray(x, dtype=float)
        cell, _ = locate_cell(mesh, x.reshape(-1, 2))
        out = np.zeros((len(cell), 2, 2))
        out[:, 0, 0] = vals[cell, 0]
        out[:, 1, 1] = vals[cell, 1]
        return out.reshape(x.shape[:-1] + (2, 2))

    return dif, vals


def _random_1d(seed=0, n_knots=1000):
    fa, _, _ = random_field_1d(seed, n_knots, 1e-5, 1e-2)
    fc, dfc, _ = random_field_1d(seed + 1, n_knots, smooth=True)

    def vel(x, t):
        return fc(np.asarray(x)[..., 0])[..., None]

    def div(x, t):
        return dfc(np.asarray(x)[..., 0])

    def dif(x, t):
        return _scalar_tensor(fa(np.asarray(x)[..., 0]))

    return CoefField(1, vel, dif, div, "1d.random", "nonconservative", True, True, seed)


def _random_2d(seed=0, n_diffusion_cells=400):
    dmesh = build_periodic_delaunay(n_diffusion_cells, seed)
    dif, _ = random_cellwise_diffusion_2d(seed, dmesh, 1e-5, 1e-1)
    return CoefField(2, stream_velocity, dif, _zero_div, "2d.random", "nonconservative", False, True, seed)


def resolve_test_id(test_id: str) -> str:
    """Canonical catalog id for ``test_id`` (aliases accepted)."""
    tid = ALIASES.get(test_id, test_id)
    if tid not in CATALOG:
        raise ValueError(f"unknown test id {test_id!r}; known: {', '.join(CATALOG)}")
    return tid


def make_test_field(test_id: str, seed: int = 0) -> CoefField:
    builders = {
        "1d.series.a": _series_a,
        "1d.series.b": _series_b,
        "1d.series.c": _series_c,
        "1d.series.d": _series_d,
        "1d.unresolved": _unresolved,
        "1d.resolved": _resolved,
        "1d.random": lambda: _random_1d(seed),
        "2d.solenoidal": lambda: CoefField(
            2, stream_velocity, oscillating_diffusion_2d, _zero_div, "2d.solenoidal"
        ),
        "2d.div.nonconservative": lambda: CoefField(
            2, rotated_velocity, oscillating_diffusion_2d, rotated_divergence,
            "2d.div.nonconservative",
        ),
        "2d.div.conservative": lambda: CoefField(
            2, separatrix_velocity, oscillating_diffusion_2d, separatrix_divergence,
            "2d.div.conservative", "conservative",
        ),
        "2d.random": lambda: _random_2d(seed),
    }
    test_id = ALIASES.get(test_id, test_id)
    if test_id not in builders:
        raise ValueError(f"unknown test id {test_id!r}; known: {', '.join(CATALOG)}")
    return builders[test_id]()


def constant_field(dim: int, velocity, diffusion, form="nonconservative") -> CoefField:
    """Spatially constant field (used by sanity checks and the CLI)."""
    vel = np.broadcast_to(np.asarray(velocity, dtype=float), (dim,)).copy()
    dif = np.asarray(diffusion, dtype=float)
    dif = dif * np.eye(dim) if dif.ndim == 0 else dif

    def v(x, t):
        return np.broadcast_to(vel, np.shape(x)[:-1] + (dim,)).copy()

    def a(x, t):
        return np.broadcast_to(dif, np.shape(x)[:-1] + (dim, dim)).copy()

    return CoefField(dim, v, a, _zero_div, "constant", form, stationary=True)


# ---------------------------------------------------------------------------
# Initial conditions
# ---------------------------------------------------------------------------


def gaussian_ic_1d(sigma=0.1, mu=0.5):
    if sigma <= 0:
        raise ValueError("sigma must be positive")

    def u0(x):
        x = np.asarray(x, dtype=float)[..., 0]
        return np.exp(-((x - mu) ** 2) / (2 * sigma**2)) / (sigma * np.sqrt(TWO_PI))

    return u0


DEFAULT_COVARIANCE = np.diag([3 / 100, 3 / 100])
DEFAULT_CENTERS = ((1 / 3, 1 / 2), (2 / 3, 1 / 2))


def gaussian_ic_2d(M=DEFAULT_COVARIANCE, centers=DEFAULT_CENTERS):
    """Normalized superposition of two Gaussians with covariance ``M``."""
    M = np.asarray(M, dtype=float)
    if np.any(np.linalg.eigvalsh(M) <= 0):
        raise ValueError("covariance must be positive definite")
    Minv = np.linalg.inv(M)
    norm = 1.0 / (2.0 * np.sqrt(TWO_PI**2 * np.linalg.det(M)))
    mus = np.asarray(centers, dtype=float)

    def u0(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for mu in mus:
            d = x - mu
            out += np.exp(-0.5 * np.einsum("...i,ij,...j->...", d, Minv, d))
        return norm * out

    return u0


def default_initial_condition(dim: int):
    return gaussian_ic_1d() if dim == 1 else gaussian_ic_2d()


# ---------------------------------------------------------------------------
# Peclet numbers
# ---------------------------------------------------------------------------


def _sample_grid(dim, n):
    g = (np.arange(n) + 0.5) / n
    if dim == 1:
        return g[:, None]
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=-1)


def peclet(field: CoefField, L: float = 1.0, t: float = 0.0, n: Optional[int] = None) -> float:
    """Global Peclet number ``|c|_{L2} L / |A|_{L2}`` from midpoint sampling
    (Frobenius norm for tensors)."""
    n = n or (2**12 if field.dim == 1 else 2**7)
    x = _sample_grid(field.dim, n)
    c = field.velocity(x, t)
    A = field.diffusion(x, t)
    c_norm = np.sqrt(np.mean(np.sum(c**2, axis=-1)))
    a_norm = np.sqrt(np.mean(np.sum(A**2, axis=(-2, -1))))
    if a_norm == 0:
        raise ZeroDivisionError("diffusion norm vanishes; Peclet number undefined")
    return float(c_norm * L / a_norm)


def local_peclet_range(field: CoefField, L: float = 1.0, n: int = 256, times=(0.0, 0.25, 0.5, 0.75), refine: int = 8):
    """Range of the pointwise ``|c| L / |A|_2`` over space and sampled times.

    The maximum is polished with a local optimizer started from the ``refine``
    largest grid samples, since diffusion minima can be very narrow.
    """
    from scipy.optimize import minimize

    x = _sample_grid(field.dim, n)

    def local(xs, t):
        c = np.linalg.norm(field.velocity(xs, t), axis=-1)
        a = np.linalg.norm(field.diffusion(xs, t), ord=2, axis=(-2, -1))
        return c * L / a

    lo, hi, best = np.inf, 0.0, []
    for t in times:
        pe = local(x, t)
        lo = min(lo, float(pe.min()))
        hi = max(hi, float(pe.max()))
        for k in np.argsort(pe)[-refine:]:
            best.append((x[k], t))

    for x0, t in best:
        res = minimize(
            lambda z: -np.log(local(np.asarray(z)[None, :], t)[0] + 1e-300),
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
        )
        hi = max(hi, float(local(res.x[None, :], t)[0]))
    return lo, hi
