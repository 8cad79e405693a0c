"""Configured reproduction studies shared by ``scripts/`` and the acceptance suite.

Each study returns plain dicts of relative errors keyed by method, H and time so
callers can tabulate or check them. The 1D SLMsR settings (``SLMSR_1D``) are a
calibrated profile, and so is ``SLMSR_2D``; neither is a library default (see
the README).
"""

from __future__ import annotations

import dataclasses
import time
from fractions import Fraction

from . import analysis
from .solver import SolverConfig, run

# SLMsR settings used by every 1D study
SLMSR_1D = {"alpha": (1e-4,), "n_sub_prop": 2}
# 2D: the discrete-harmonic regularizer grows like h^-4 relative to the data term
# (fine edges ~ 6e-3 after 5 refinement levels of the 62-cell mesh), so alpha ~ h^4
SLMSR_2D = {"alpha": (1e-9,)}

UNRESOLVED_H = (Fraction(1, 8), Fraction(1, 32), Fraction(1, 128), Fraction(1, 512))
RESOLVED_H = (Fraction(1, 16), Fraction(1, 32), Fraction(1, 64), Fraction(1, 128), Fraction(1, 256))


@dataclasses.dataclass
class StudyResult:
    """Errors ``errors[method][H] -> ErrorSeries`` plus wall-clock seconds."""

    name: str
    errors: dict
    seconds: float

    def at(self, method, H, t=1.0, norm="l2"):
        s = self.errors[method][Fraction(H)]
        i = min(range(len(s.times)), key=lambda k: abs(s.times[k] - t))
        return (s.l2_rel if norm == "l2" else s.h1_rel)[i]

    def table_rows(self):
        return [
            (float(H), t, m, a, b)
            for m, per_h in self.errors.items()
            for H, s in per_h.items()
            for t, a, b in zip(s.times, s.l2_rel, s.h1_rel)
        ]


def _study(name, base: SolverConfig, Hs, methods_for_h, mesh=None):
    t0 = time.perf_counter()
    errors = {}
    for H in Hs:
        cfg = dataclasses.replace(base, n_cells=H.denominator) if base.dim == 1 else base
        ref = run(cfg, mesh=mesh, method="reference")
        for m in methods_for_h(H):
            kw = (SLMSR_1D if cfg.dim == 1 else SLMSR_2D) if m == "slmsr" else {}
            traj = run(dataclasses.replace(cfg, **kw), mesh=mesh, method=m)
            errors.setdefault(m, {})[H] = analysis.error_series(traj, ref, method=m)
    return StudyResult(name, errors, time.perf_counter() - t0)


def unresolved_study(Hs=UNRESOLVED_H, slmsr_H=UNRESOLVED_H[:3]) -> StudyResult:
    """Unresolved regime: dt = 1e-2, 64 fine cells per coarse cell, 2^11-cell reference."""
    base = SolverConfig("1d.unresolved", n_fine=64, dt=1e-2, T=1.0, ref_cells=2048,
                        report_times=(0.5, 1.0))
    return _study("unresolved", base, [Fraction(h) for h in Hs],
                  lambda H: ("standard", "slmsr") if H in slmsr_H else ("standard",))


def resolved_study(Hs=RESOLVED_H, slmsr_H=RESOLVED_H[:1], dt=1e-2) -> StudyResult:
    """Resolved regime: 32 fine cells per coarse cell, 2^11-cell reference."""
    base = SolverConfig("1d.resolved", n_fine=32, dt=dt, T=1.0, ref_cells=2048,
                        report_times=(0.5, 1.0))
    return _study("resolved", base, [Fraction(h) for h in Hs],
                  lambda H: ("standard", "slmsr") if H in slmsr_H else ("standard",))


def series_study(letter: str, H=Fraction(1, 8)) -> StudyResult:
    """Series test ``letter`` in a..d: dt = 1/300, 64 fine cells, 1000-cell reference."""
    base = SolverConfig(f"1d.series.{letter}", n_fine=64, dt=1 / 300, T=1.0, ref_cells=1000,
                        report_times=(1 / 3, 2 / 3, 1.0))
    return _study(f"series.{letter}", base, [Fraction(H)], lambda H: ("standard", "slmsr"))


def study_2d(test_id: str, mesh=None, report_times=None, **overrides) -> StudyResult:
    """A 2D test on the 62-cell mesh: dt = 1/300, levels 5, reference at levels 5 of ``mesh``."""
    times = report_times or tuple(k / 10 for k in range(1, 11))
    base = SolverConfig(test_id, dt=1 / 300, T=1.0, report_times=times, **overrides).resolved()
    return _study(test_id, base, [Fraction(1, base.n_cells)], lambda H: ("standard", "slmsr"), mesh)


def edge_evolution_study(test_id="2d.div.conservative", mesh=None, report_times=(0.5, 1.0)) -> StudyResult:
    """SLMsR with fixed-boundary (``edge_evolution=False``) and edge-evolution propagation."""
    t0 = time.perf_counter()
    base = SolverConfig(test_id, dt=1 / 300, T=1.0, report_times=report_times,
                        form="conservative").resolved()
    ref = run(base, mesh=mesh, method="reference")
    errors = {}
    H = Fraction(1, base.n_cells)
    for ee in (False, True):
        traj = run(dataclasses.replace(base, edge_evolution=ee, **SLMSR_2D), mesh=mesh, method="slmsr")
        label = "slmsr.edge" if ee else "slmsr.fixed"
        errors[label] = {H: analysis.error_series(traj, ref, method=label)}
    return StudyResult(test_id, errors, time.perf_counter() - t0)
