"""Sphere scattering runs: farfield error vs Mie, iterations, time per iteration and memory.

Examples
--------
python scripts/sphere_runs.py --family lower --rows 1 2
python scripts/sphere_runs.py --family higher --rows 1
"""

import argparse
import json
import logging
import tempfile

from helmsplit.cli import RunConfig, run_validate_sphere

# (subdivisions, size in wavelengths, delta, N); "lower" and "higher" refer to
# the resolution per wavelength at fixed delta
ROWS = {
    "lower": {1: (4, 6.25, 1.0e-4, 16), 2: (5, 12.5, 2.5e-5, 32), 3: (6, 25.0, 6.25e-6, 64)},
    "higher": {1: (4, 3.13, 1.0e-4, 16), 2: (5, 6.25, 2.5e-5, 32), 3: (6, 12.5, 6.25e-6, 64)},
}


def run_row(subdiv, size, delta, N, tol, cache):
    with tempfile.TemporaryDirectory() as out:
        cfg = RunConfig(command="validate-sphere", sphere_subdiv=subdiv, size_lambda=size, delta=str(delta), N=N,
                        tol=tol, out=out, cache=cache, threshold=1.0, log_level="WARNING")
        run_validate_sphere(cfg)
        with open(f"{out}/summary.json") as fh:
            summ = json.load(fh)
        with open(f"{out}/validation.json") as fh:
            rep = json.load(fh)
    return dict(n=summ["n"], size=size, N=N, delta=delta, error=rep["farfield_error"], its=summ["iterations"],
                setup_s=summ["setup_time_s"], time_per_it_s=summ["time_per_iteration_s"],
                mem_mb=summ["mem_bytes"] / 2**20)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--family", choices=tuple(ROWS), default="lower")
    ap.add_argument("--rows", type=int, nargs="+", default=[1])
    ap.add_argument("--tol", type=float, default=1e-4)
    ap.add_argument("--cache")
    ap.add_argument("--json", help="write the rows to this file")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    rows = []
    print(f"{'n':>7} {'size':>6} {'N':>4} {'delta':>9} {'error':>7} {'its':>4} {'setup s':>8} "
          f"{'s/it':>7} {'mem MB':>8}")
    for r in args.rows:
        row = run_row(*ROWS[args.family][r], args.tol, args.cache)
        rows.append(row)
        print(f"{row['n']:>7} {row['size']:>6} {row['N']:>4} {row['delta']:>9.2e} {row['error']:>7.4f} "
              f"{row['its']:>4} {row['setup_s']:>8.2f} {row['time_per_it_s']:>7.3f} {row['mem_mb']:>8.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
