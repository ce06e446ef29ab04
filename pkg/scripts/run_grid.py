"""Desk-scale mismatch grid: trains every network of the chosen preset and writes CSV/TXT reports.

    python scripts/run_grid.py --out results/grid_desk.csv
    python scripts/run_grid.py --preset paper --out results/grid_full.csv   # hours of CPU
"""
import argparse
import logging

from restnet import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=["desk", "paper"], default="desk")
    ap.add_argument("--ablations", action="store_true", help="add REST2-6, REST4-6, NI6 and NII6")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/grid.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    spec = harness.paper_spec(seed=args.seed) if args.preset == "paper" else harness.desk_spec(seed=args.seed)
    if args.ablations:
        spec.archs += [harness.ArchEntry(a, 6) for a in ("RestOpt2", "RestOpt4", "AblationNI", "AblationNII")]
    nets = {}
    rows = harness.run_grid(spec, nets_out=nets)
    curves = {f"{label}@{r:.3g}": rep.train_loss_per_epoch for (label, r), (_, rep) in nets.items()}
    harness.report(rows, args.out, curves=curves)
    print(harness.format_table(rows), end="")


if __name__ == "__main__":
    main()
