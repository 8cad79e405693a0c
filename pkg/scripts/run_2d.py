"""2D studies on the stored 62-cell mesh: solenoidal Test 1 and the conservative edge-evolution comparison."""

import argparse

from _common import ROOT, RESULTS, report
from slmsr.mesh import load_mesh
from slmsr.studies import edge_evolution_study, study_2d

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("which", nargs="*", default=["solenoidal", "edges"])
    args = ap.parse_args()
    mesh = load_mesh(ROOT / "data" / "mesh62.txt")
    if "solenoidal" in args.which:
        report(study_2d("2d.solenoidal", mesh=mesh), RESULTS / "2d_solenoidal")
    if "edges" in args.which:
        report(edge_evolution_study(mesh=mesh), RESULTS / "2d_edges")
