"""Shared output helpers for the study scripts."""

import json
from pathlib import Path

from slmsr import analysis

ROOT = Path(__file__).resolve().parents[1]
RESULTS = ROOT / "results"


def report(result, out: Path):
    """Write ``table.csv`` and a small manifest, and print the t=1 rows."""
    out.mkdir(parents=True, exist_ok=True)
    rows = result.table_rows()
    analysis.write_table(rows, out / "table.csv")
    (out / "manifest.json").write_text(
        json.dumps({"study": result.name, "wall_clock_s": result.seconds}, indent=2) + "\n"
    )
    print(f"{result.name}: {result.seconds:.1f} s -> {out}")
    print(f"{'H':>10} {'t':>6} {'method':>12} {'L2_rel':>12} {'H1_rel':>12}")
    for H, t, m, a, b in sorted(rows, key=lambda r: (-r[0], r[1], r[2])):
        print(f"{H:10.6g} {t:6.3f} {m:>12} {a:12.5e} {b:12.5e}")
