"""Resolved-regime 1D convergence study (FEM at H = 1/16..1/256, SLMsR at 1/16)."""

import argparse

from _common import RESULTS, report
from slmsr.analysis import eoc
from slmsr.studies import RESOLVED_H, resolved_study

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--all-slmsr", action="store_true", help="run SLMsR at every H")
    args = ap.parse_args()
    r = resolved_study(slmsr_H=RESOLVED_H if args.all_slmsr else RESOLVED_H[:1])
    report(r, RESULTS / "resolved")
    for norm in ("l2", "h1"):
        fem = [r.at("standard", H, norm=norm) for H in RESOLVED_H]
        print(f"FEM {norm.upper()} EOC (q=2):", " ".join(f"{v:.5f}" for v in eoc(fem, q=2)))
