"""Print the wetland Table-1 comparison for the stable and unstable parameter sets."""

import argparse

from pdae_lab.wetland import WetlandParams, classify_stability


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h1", type=float, nargs="*", default=[0.1, 24.0])
    ap.add_argument("--h2", type=float, default=0.1)
    args = ap.parse_args()
    print(f"{'h1':>6} {'h2':>5} {'|A_J|':>9} {'tab':>7} {'3-|A_J|':>9} {'tab':>8} {'d1*mu1-|A_J|':>13} {'delta':>8}")
    for h1 in args.h1:
        row = classify_stability(WetlandParams(h1=h1, h2=args.h2))
        tab_n = "-" if row.tabulated_norm is None else f"{row.tabulated_norm:.4f}"
        tab_m = "-" if row.tabulated_margin is None else f"{row.tabulated_margin:.4f}"
        print(
            f"{h1:6g} {args.h2:5g} {row.norm_AJ:9.4f} {tab_n:>7} {row.margin_table:9.4f} {tab_m:>8}"
            f" {row.margin_min_d:13.4f} {row.certificate.delta:8.4f}"
        )


if __name__ == "__main__":
    main()
