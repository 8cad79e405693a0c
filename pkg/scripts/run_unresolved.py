"""Unresolved-regime 1D convergence study (FEM at four H, SLMsR at the first three)."""

from _common import RESULTS, report
from slmsr.analysis import eoc
from slmsr.studies import UNRESOLVED_H, unresolved_study

if __name__ == "__main__":
    r = unresolved_study()
    report(r, RESULTS / "unresolved")
    fem = [r.at("standard", H) for H in UNRESOLVED_H]
    print("FEM L2 EOC (q=4):", " ".join(f"{v:.5f}" for v in eoc(fem, q=4)))
