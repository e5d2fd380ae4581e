"""Regenerate the shipped example impedance scan (pure RL radial two-port)."""

from pathlib import Path

import numpy as np

from tlroa.netfit import RadialBranches, synthesize_scan, write_scan_csv

BRANCHES = RadialBranches(r1=1.2e-5, l1=2.0e-7, r2=2.0e-5, l2=4.0e-7, rg=2.0e-5, lg=3.2e-7)

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "tlroa" / "data" / "scan_radial.csv"
    write_scan_csv(synthesize_scan(BRANCHES, np.arange(1.0, 201.0, 1.0)), out)
    print(out)
