"""Series tests a-d at H = 1/8 (dt = 1/300)."""

import argparse

from _common import RESULTS, report
from slmsr.studies import series_study

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("letters", nargs="*", default=list("abcd"))
    args = ap.parse_args()
    for letter in args.letters:
        report(series_study(letter), RESULTS / f"series_{letter}")
