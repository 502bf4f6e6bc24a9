"""Flat-plate remainder of the leading local term versus delta."""

import argparse
import sys
from pathlib import Path

import numpy as np

from helmsplit.kernel import KernelSplit, local_coefficients, make_filter

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import plate_local_reference  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kappa", type=float, default=5.0)
    ap.add_argument("--filter", choices=("power", "product"), default="power")
    ap.add_argument("--deltas", type=float, nargs="+", default=[1e-3, 2.5e-4, 6.25e-5, 1.5625e-5])
    args = ap.parse_args()
    errs = []
    for d in args.deltas:
        split = KernelSplit(args.kappa, d, make_filter(args.filter, 5))
        phi0, _ = local_coefficients(split)
        errs.append(abs(plate_local_reference(split) - split.sqrt_delta * phi0))
        print(f"delta {d:.3e}: remainder {errs[-1]:.3e}")
    slope = np.polyfit(np.log(args.deltas), np.log(errs), 1)[0]
    print(f"log-log slope {slope:.3f}")


if __name__ == "__main__":
    main()
