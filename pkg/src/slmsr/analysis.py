"""Relative errors against a reference solution, convergence orders and CSV
output."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fem
from .mesh import wrap_point
from .reconstruct import sample_global


@dataclasses.dataclass
class ErrorSeries:
    times: list
    l2_rel: list
    h1_rel: list
    method: str = ""
    fingerprint: str = ""

    def __post_init__(self):
        if not len(self.times) == len(self.l2_rel) == len(self.h1_rel):
            raise ValueError("times and error lists must have equal length")
        for v in list(self.l2_rel) + list(self.h1_rel):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"invalid error value {v!r}")

    def at(self, t: float):
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.l2_rel[k], self.h1_rel[k]


def _reference_quadrature(ref, rule):
    """Points, weights and per-element data of the reference complex."""
    cx = ref.cx
    d = cx.dim
    Pe = cx.X[:, cx.elements].reshape(-1, d + 1, d)
    meas, G = fem.element_geometry(Pe)
    pts = fem.physical_points(Pe, rule)
    w = meas[:, None] * rule.weights[None, :] / rule.weights.sum()
    gid = cx.global_ids[:, cx.elements].reshape(-1, d + 1)
    return Pe, G, pts, w, gid


def norms_difference(u, ref, rule=None):
    """``(||u - ref||_L2, ||u - ref||_H1, ||ref||_L2, ||ref||_H1)`` with
    quadrature on the elements of ``ref``'s complex; ``u`` and ``ref`` are
    fine fields (``cx`` + global ``values``)."""
    cx = ref.cx
    rule = rule or fem.default_rule(cx.dim)
    _, G, pts, w, gid = _reference_quadrature(ref, rule)
    Ue = ref.values[gid]  # (E, d+1)
    lam = rule.barycentric()
    rv = Ue @ lam.T  # (E, q)
    rg = np.einsum("ea,ead->ed", Ue, G)  # (E, d)
    if u.cx is cx:
        uv, ug = u.values[gid] @ lam.T, np.einsum("ea,ead->ed", u.values[gid], G)[:, None, :]
    else:
        flat = wrap_point(pts.reshape(-1, cx.dim))
        uv, ug = sample_global(u.cx, u.values, flat, with_gradient=True)
        uv = uv.reshape(rv.shape)
        ug = ug.reshape(rv.shape + (cx.dim,))
    dv = uv - rv
    dg = ug - rg[:, None, :]
    l2_diff = np.sum(w * dv**2)
    semi_diff = np.sum(w * np.sum(dg**2, axis=-1))
    l2_ref = np.sum(w * rv**2)
    semi_ref = np.sum(w.sum(axis=1) * np.sum(rg**2, axis=-1))
    return (
        math.sqrt(l2_diff),
        math.sqrt(l2_diff + semi_diff),
        math.sqrt(l2_ref),
        math.sqrt(l2_ref + semi_ref),
    )


def relative_error(u, u_ref, norm: str = "L2", rule=None) -> float:
    """Relative error ``||u - u_ref|| / ||u_ref||`` in ``L2`` or the full
    ``H1`` norm."""
    if norm not in ("L2", "H1"):
        raise ValueError("norm must be 'L2' or 'H1'")
    el2, eh1, rl2, rh1 = norms_difference(u, u_ref, rule)
    num, den = (el2, rl2) if norm == "L2" else (eh1, rh1)
    if den == 0:
        raise ZeroDivisionError("reference norm vanishes")
    return num / den


def relative_errors(u, u_ref, rule=None):
    el2, eh1, rl2, rh1 = norms_difference(u, u_ref, rule)
    if rl2 == 0:
        raise ZeroDivisionError("reference norm vanishes")
    return el2 / rl2, eh1 / rh1


def error_series(traj, ref_traj, method=None, fingerprint="") -> ErrorSeries:
    """Errors of a trajectory against a reference trajectory at their
    common report times."""
    ref = dict(zip(traj_times(ref_traj), ref_traj.snapshots))
    times, l2, h1 = [], [], []
    for t, snap in zip(traj_times(traj), traj.snapshots):
        key = min(ref, key=lambda s: abs(s - t))
        if abs(key - t) > 1e-9:
            continue
        a, b = relative_errors(snap, ref[key])
        times.append(t)
        l2.append(a)
        h1.append(b)
    return ErrorSeries(times, l2, h1, method or traj.method, fingerprint)


def traj_times(traj):
    return list(traj.times)


def eoc(errors: Sequence[float], q: float = 2.0):
    """Orders ``log(e_H / e_{H/q}) / log(q)`` for consecutive entries
    (positive when errors decrease)."""
    e = np.asarray(errors, dtype=float)
    if len(e) < 2:
        raise ValueError("need at least two errors")
    if np.any(~(e > 0)):
        raise ValueError("errors must be positive")
    if not q > 1:
        raise ValueError("refinement factor must exceed 1")
    return list(np.log(e[:-1] / e[1:]) / math.log(q))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) and not math.isfinite(v) else f"{float(v):.17g}"


def write_csv(series: ErrorSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "l2_rel", "h1_rel"])
        for t, a, b in zip(series.times, series.l2_rel, series.h1_rel):
            w.writerow([_fmt(t), _fmt(a), _fmt(b)])


def write_table(rows, path) -> None:
    """Rows ``(H, t, method, l2, h1)`` sorted by ``H`` descending, then ``t``
    ascending (ties keep method order)."""
    rows = sorted(rows, key=lambda r: (-float(r[0]), float(r[1])))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["H", "t", "method", "l2_rel", "h1_rel"])
        for H, t, m, a, b in rows:
            w.writerow([_fmt(H), _fmt(t), m, _fmt(a), _fmt(b)])


def write_eoc_table(rows, path) -> None:
    """Rows ``(H_from, H_to, t, method, eoc_l2, eoc_h1)``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["H_from", "H_to", "t", "method", "eoc_l2", "eoc_h1"])
        for r in rows:
            w.writerow([_fmt(r[0]), _fmt(r[1]), _fmt(r[2]), r[3], _fmt(r[4]), _fmt(r[5])])


def write_snapshot(field, path) -> None:
    """Field snapshot: ``x[,y],value`` over the global fine nodes."""
    cx = field.cx
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "value"] if cx.dim == 1 else ["x", "y", "value"])
        for p, v in zip(cx.global_coords, field.values):
            w.writerow([_fmt(c) for c in p] + [_fmt(v)])
