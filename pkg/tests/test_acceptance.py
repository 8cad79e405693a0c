"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line (printed with ``-s`` and repeated in the
terminal summary). Known failures are real: see the README's limitations and
the decisions ledger. The 2D studies take roughly half an hour on one core and
carry the ``slow`` marker (deselect with ``-m "not slow"``).
"""

from fractions import Fraction
from math import floor, log10
from pathlib import Path

import numpy as np
import pytest

from slmsr.analysis import eoc
from slmsr.mesh import load_mesh
from slmsr.solver import SolverConfig, run_slmsr, run_standard
from slmsr.studies import (
    RESOLVED_H,
    UNRESOLVED_H,
    edge_evolution_study,
    resolved_study,
    series_study,
    study_2d,
    unresolved_study,
)

MESH_FILE = Path(__file__).resolve().parents[1] / "data" / "mesh62.txt"

# published values (relative errors at t = 1)
UNRESOLVED_FEM = {Fraction(1, 8): 0.4805, Fraction(1, 32): 0.3496, Fraction(1, 128): 0.1525, Fraction(1, 512): 0.02853}
SERIES_SLMSR = {"b": 0.01836, "c": 0.07436}


def _fmt(d):
    return ", ".join(f"H=1/{H.denominator}: {v:.4g}" for H, v in d.items())


@pytest.fixture(scope="module")
def unresolved():
    return unresolved_study()


@pytest.fixture(scope="module")
def resolved():
    return resolved_study()


# --- 1: unresolved regime ------------------------------------------------------------


def test_c1_unresolved_fem_within_15_percent(unresolved, verdict):
    ours = {H: unresolved.at("standard", H) for H in UNRESOLVED_H}
    ok = all(abs(ours[H] / UNRESOLVED_FEM[H] - 1) <= 0.15 for H in UNRESOLVED_H)
    verdict("1a unresolved FEM L2 within 15% of 0.4805/0.3496/0.1525/0.02853", ok, _fmt(ours))


def test_c1_unresolved_slmsr_bounds(unresolved, verdict):
    e8, e128 = unresolved.at("slmsr", Fraction(1, 8)), unresolved.at("slmsr", Fraction(1, 128))
    verdict("1b unresolved SLMsR L2 H=1/8 <= 0.04, H=1/128 <= 0.05", e8 <= 0.04 and e128 <= 0.05,
            f"{e8:.4g}, {e128:.4g}")


def test_c1_unresolved_ratio(unresolved, verdict):
    ratios = {H: unresolved.at("slmsr", H) / unresolved.at("standard", H) for H in UNRESOLVED_H[:3]}
    verdict("1c unresolved SLMsR/FEM ratio <= 0.15", all(r <= 0.15 for r in ratios.values()), _fmt(ratios))


def test_c1_unresolved_runtime(unresolved, verdict):
    verdict("1d unresolved study runtime <= 10 min", unresolved.seconds <= 600, f"{unresolved.seconds:.1f} s")


# --- 2: resolved regime --------------------------------------------------------------


def test_c2_resolved_fem_l2_eoc(resolved, verdict):
    orders = eoc([resolved.at("standard", H) for H in RESOLVED_H], q=2)
    ok = all(1.85 <= p <= 2.25 for p in orders)
    verdict("2a resolved FEM L2 EOC in [1.85, 2.25]", ok, " ".join(f"{p:.3f}" for p in orders))


def test_c2_resolved_fem_h1_eoc(resolved, verdict):
    orders = eoc([resolved.at("standard", H, norm="h1") for H in RESOLVED_H], q=2)
    ok = all(0.9 <= p <= 1.15 for p in orders)
    verdict("2b resolved FEM H1 EOC in [0.9, 1.15]", ok, " ".join(f"{p:.3f}" for p in orders))


def test_c2_resolved_slmsr_factor(resolved, verdict):
    H = Fraction(1, 16)
    fem_e, ms_e = resolved.at("standard", H), resolved.at("slmsr", H)
    verdict("2c resolved H=1/16 FEM/SLMsR >= 5", fem_e >= 5 * ms_e, f"{fem_e:.4g}/{ms_e:.4g} = {fem_e / ms_e:.2f}")


# --- 3: series tests -----------------------------------------------------------------


@pytest.mark.parametrize("letter", ["b", "c"])
def test_c3_series(letter, verdict):
    r = series_study(letter)
    H = Fraction(1, 8)
    ms_e, fem_e = r.at("slmsr", H), r.at("standard", H)
    bound = 2.5 * SERIES_SLMSR[letter]
    verdict(f"3{letter} series {letter}: SLMsR L2 <= {bound:.5g} and < FEM", ms_e <= bound and ms_e < fem_e,
            f"SLMsR {ms_e:.4g}, FEM {fem_e:.4g}")


# --- 4, 5: 2D ------------------------------------------------------------------------


@pytest.mark.slow
def test_c4_2d_solenoidal(verdict):
    r = study_2d("2d.solenoidal", mesh=load_mesh(MESH_FILE))
    H = next(iter(r.errors["slmsr"]))
    ms, fe = r.errors["slmsr"][H], r.errors["standard"][H]
    below = all(a < b for a, b in zip(ms.l2_rel, fe.l2_rel)) and all(a < b for a, b in zip(ms.h1_rel, fe.h1_rel))
    detail = "L2 " + " ".join(f"{a:.3f}/{b:.3f}" for a, b in zip(ms.l2_rel, fe.l2_rel))
    detail += "; H1 " + " ".join(f"{a:.3f}/{b:.3f}" for a, b in zip(ms.h1_rel, fe.h1_rel))
    verdict("4a 2D solenoidal SLMsR < FEM in L2 and H1 at t = 0.1..1", below, detail)
    verdict("4b 2D solenoidal runtime <= 45 min", r.seconds <= 45 * 60, f"{r.seconds:.0f} s")


@pytest.mark.slow
def test_c5_2d_edge_evolution(verdict):
    r = edge_evolution_study(mesh=load_mesh(MESH_FILE))
    H = next(iter(r.errors["slmsr.edge"]))
    edge, fixed = r.errors["slmsr.edge"][H].l2_rel[-1], r.errors["slmsr.fixed"][H].l2_rel[-1]
    verdict("5 2D conservative: edge-evolution L2(T=1) <= fixed-boundary", edge <= fixed,
            f"edge {edge:.4g}, fixed {fixed:.4g}")


# --- 6: invariants -------------------------------------------------------------------


def test_c6_delta_and_conformity_every_step(verdict):
    worst = []

    def check(n, comp):
        cx = comp.cx
        d = cx.dim + 1
        delta = np.abs(comp.basis.phi[:, :, cx.vertex_local] - np.eye(d)).max()
        worst.append(max(delta, comp.interface_mismatch()))

    run_slmsr(SolverConfig("1d.unresolved", n_cells=8, n_fine=32, dt=0.01, T=0.1, alpha=(1e-4,)), callback=check)
    mesh = load_mesh(MESH_FILE)
    for tid, ee in [("2d.solenoidal", False), ("2d.div.conservative", True)]:
        run_slmsr(SolverConfig(tid, levels=2, dt=1 / 300, T=5 / 300, edge_evolution=ee), mesh=mesh, callback=check)
    verdict("6a delta property and conformity at every step", max(worst) <= 1e-12,
            f"{len(worst)} steps, max deviation {max(worst):.2e}")


def test_c6_kkt_agreement(verdict):
    from test_reconstruct import distorted_1d, kkt_1d

    from slmsr.reconstruct import RegularizerSpec, reconstruct_1d

    rng = np.random.default_rng(21)
    X = distorted_1d(rng, nl=65, nc=4)
    u = 2.0 + np.sin(40 * X) + 0.3 * rng.standard_normal(X.shape)
    worst = 0.0
    for alpha in (1e-4, 0.1, 10.0):
        phi = reconstruct_1d(X, u, RegularizerSpec("deviation", (alpha,)))
        worst = max(worst, max(np.abs(phi[c] - kkt_1d(X[c], u[c], alpha, alpha)).max() for c in range(len(X))))
    verdict("6b reconstruction vs dense KKT <= 1e-8", worst <= 1e-8, f"max {worst:.2e}")


def test_c6_rk4_order(verdict):
    from test_semilag import sine, sine_exact

    from slmsr.semilag import trace_back

    x = np.linspace(0.05, 0.45, 41)[:, None]
    dt = 0.05
    errs = [np.abs(trace_back(x, sine, dt, 0.0, n) - sine_exact(x, -dt)).max() for n in (2, 4, 8)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    verdict("6c RK4 trace-back order 4", bool(np.all(np.abs(orders - 4) < 0.3)), " ".join(f"{p:.3f}" for p in orders))


def test_c6_conservative_mass(verdict):
    from test_solver import mass_integral

    masses = []
    run_standard(SolverConfig("1d.series.c", n_cells=16, dt=1 / 300, T=0.1),
                 callback=lambda n, comp: masses.append(mass_integral(comp)))
    drift = np.abs(np.diff(masses)).max()
    verdict("6d conservative hats mass change per step <= 1e-10", drift <= 1e-10, f"max {drift:.2e}")


def test_c6_alpha_limit(verdict):
    from slmsr.reconstruct import RegularizerSpec, linear_prior_1d, reconstruct_1d

    rng = np.random.default_rng(22)
    X = np.sort(rng.random((5, 33)), axis=1)
    u = 1.0 + rng.random(X.shape)
    phi = reconstruct_1d(X, u, RegularizerSpec("deviation", (1e8,)))
    dev = np.abs(phi - linear_prior_1d(X)).max()
    verdict("6e alpha -> infinity recovers the prior (alpha = 1e8)", dev <= 1e-6, f"max {dev:.2e}")


def test_c6_thread_determinism(tmp_path, verdict):
    import os
    import subprocess
    import sys

    cfg = tmp_path / "cfg.txt"
    cfg.write_text("test = 2d.solenoidal\nlevels = 2\ndt = 1/300\nT = 1/100\nmethods = slmsr, standard, reference\n"
                   "report_times = 1/300, 1/100\n"
                   f"mesh = {MESH_FILE}\nsnapshots = true\n")
    outs = []
    for n in ("1", "4"):
        env = dict(os.environ, OMP_NUM_THREADS=n, OPENBLAS_NUM_THREADS=n, MKL_NUM_THREADS=n)
        out = tmp_path / f"t{n}"
        subprocess.run([sys.executable, "-m", "slmsr.cli", "run", "--config", str(cfg), "--out", str(out)],
                       check=True, env=env, capture_output=True)
        outs.append({p.name: p.read_bytes() for p in out.glob("*.csv")})
    same = outs[0] == outs[1] and len(outs[0]) > 2
    verdict("6f byte-identical outputs with 1 and 4 threads", same, f"{len(outs[0])} CSV files compared")


# --- 7: EOC arithmetic ---------------------------------------------------------------

# (errors at t=1 per H, refinement factor q, printed EOCs) from the published tables
PRINTED_EOC = {
    "unresolved FEM L2": ([4.80502e-1, 3.4961e-1, 1.52502e-1, 2.85318e-2], 4, ["0.22939", "0.59845", "1.20909"]),
    "unresolved SLMsR L2": ([1.9577e-2, 2.03215e-2, 2.39788e-2, 1.65701e-3], 4, ["-0.02692", "-0.11937", "1.92755"]),
    "unresolved FEM H1": ([1.07721, 1.038, 6.54747e-1, 3.33875e-1], 4, ["0.02674", "0.33239", "0.48581"]),
    "unresolved SLMsR H1": ([3.62467e-1, 2.62539e-1, 2.84093e-1, 2.54352e-1], 4, ["0.23265", "-0.05691", "0.07977"]),
    "resolved FEM L2": ([2.71271e-2, 6.31955e-3, 1.56285e-3, 3.88823e-4, 9.60583e-5], 2,
                        ["2.10184", "2.01564", "2.00699", "2.01713"]),
    "resolved SLMsR L2": ([2.16896e-3, 5.84086e-4, 2.41687e-4, 1.07755e-4, 3.19474e-5], 2,
                          ["1.89275", "1.27304", "1.16538", "1.75399"]),
    "resolved FEM H1": ([1.62237e-1, 7.45369e-2, 3.68329e-2, 1.83422e-2, 9.11126e-3], 2,
                        ["1.12208", "1.01696", "1.00583", "1.00944"]),
    "resolved SLMsR H1": ([1.58667e-2, 1.58233e-2, 1.72855e-2, 1.55475e-2, 9.05413e-3], 2,
                          ["0.003951", "-0.12751", "0.152887", "0.780031"]),
}


def _unit_5_significant(text):
    """One unit in the fifth significant digit of ``text`` (or in its last printed
    digit when fewer than five significant digits are printed)."""
    fifth = 10.0 ** (floor(log10(abs(float(text)))) - 4)
    last = 10.0 ** -len(text.lstrip("-").split(".")[1])
    return max(fifth, last)


def test_c7_eoc_reproduces_printed_values(verdict):
    bad, n = [], 0
    for name, (errors, q, printed) in PRINTED_EOC.items():
        for got, text in zip(eoc(errors, q=q), printed):
            n += 1
            if abs(got - float(text)) > _unit_5_significant(text) * (1 + 1e-9):
                bad.append(f"{name}: {got:.6f} vs {text}")
    # the resolved tables print a fifth order (2^-8 -> 2^-9) whose H = 1/512 errors are
    # not published, so it cannot be recomputed
    verdict("7 EOC from printed errors to 5 significant digits", not bad,
            f"{n - len(bad)}/{n} match (resolved 2^-8->2^-9 row not checkable)" + ("; " + "; ".join(bad) if bad else ""))

