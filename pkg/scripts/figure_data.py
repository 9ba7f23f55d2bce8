"""Write (t, z1) slices, phase trajectories and diagnostics for both wetland cases.

Equivalent to running ``pdae-lab wetland-demo`` twice; CSVs are plot-ready.
"""

import argparse
from pathlib import Path

from pdae_lab.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("figure-data"))
    ap.add_argument("--t-end", type=float, default=None)
    args = ap.parse_args()
    codes = {}
    for case in ("stable", "unstable"):
        argv = ["wetland-demo", "--case", case, "--out", str(args.out / case)]
        if args.t_end is not None:
            argv += ["--t-end", str(args.t_end)]
        codes[case] = cli_main(argv)
    print({k: v for k, v in codes.items()})


if __name__ == "__main__":
    main()
