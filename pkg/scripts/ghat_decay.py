"""Shell-averaged |Ghat_k| and the fitted decay slope over the outer half of the modes."""

import argparse

import numpy as np

from helmsplit.kernel import CutoffFunction, KernelSplit, compute_Ghat, make_filter
from helmsplit.nufft import kernel_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kappa", type=float, default=43.63)
    ap.add_argument("--delta", type=float, default=1e-4)
    ap.add_argument("--N", type=int, default=32)
    ap.add_argument("--filter", choices=("power", "product"), default="power")
    ap.add_argument("--q", type=int, default=5)
    args = ap.parse_args()
    split = KernelSplit(args.kappa, args.delta, make_filter(args.filter, args.q))
    ghat = compute_Ghat(split, CutoffFunction(0.1), kernel_grid(args.N), 4, 5)
    k = np.arange(-args.N, args.N + 1)
    K = np.sqrt(sum(a**2 for a in np.meshgrid(k, k, k, indexing="ij")))
    mag = np.abs(ghat.values)
    for shell in range(0, args.N + 1, max(1, args.N // 16)):
        sel = np.abs(K - shell) < 0.5
        print(f"|k| ~ {shell:>3}: mean |Ghat| {mag[sel].mean():.3e}")
    outer = (K >= args.N / 2) & (K <= args.N)
    slope = np.polyfit(np.log(K[outer]), np.log(mag[outer]), 1)[0]
    print(f"fitted slope over {args.N // 2} <= |k| <= {args.N}: {slope:.2f}")


if __name__ == "__main__":
    main()
