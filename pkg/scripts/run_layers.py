"""Depth sweep for REST at one (r, r') cell of the desk setup."""
import argparse

from restnet import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k-list", default="1,2,4,6,8")
    ap.add_argument("--r", type=float, default=None, help="train and test radius (default: the desk mismatched cell)")
    ap.add_argument("--out", default="results/layers.csv")
    args = ap.parse_args()

    spec = harness.desk_spec()
    r = spec.r_train[-1] if args.r is None else args.r
    spec.r_train, spec.r_test = [r], [r]
    rows = harness.run_layer_sweep(spec, [int(k) for k in args.k_list.split(",")])
    harness.report(rows, args.out)
    print(harness.format_table(rows), end="")


if __name__ == "__main__":
    main()
