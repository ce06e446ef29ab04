"""Desk-scale SAR demo: mismatched training data, REST4 vs LISTA4/LISTA7, PGM reconstructions.

    python scripts/sar_demo.py --epochs 40 --out results/sar
"""
import argparse
from pathlib import Path

import numpy as np

from restnet import sar
from restnet.nets import Sharing, init_nominal, predict
from restnet.solvers import SolverConfig, robust_ista, spectral_norm
from restnet.train import TrainConfig, mse_loss, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target-frob", type=float, default=2.0, help="mean ||E||_F of the training mismatch")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2])
    ap.add_argument("--out", default="results/sar")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    geom, grid, samp = sar.desk_geometry(), sar.desk_grid(16, 16), (32, 32)
    d = sar.calibrate_d(geom, grid, samp, args.target_frob, d_hi=1e-4, tol=1e-2)
    tr = sar.gen_sar_dataset(geom, grid, sar.phantom_bank(400, 16, 16, 8, 1), samp, d, 0.01, 400, 11)
    te = sar.gen_sar_dataset(geom, grid, sar.phantom_bank(100, 16, 16, 8, 2), samp, d, 0.01, 100, 12,
                             split_tag="Test")
    print(f"d = {d:.3e} m, max ||E||_F = {tr.mismatch.radius_r:.3f}, operator {tr.model.A.shape}")
    mu0 = 1 / (2 * spectral_norm(tr.model.A) ** 2)

    results = {}
    rista = robust_ista(te.Y, te.model, SolverConfig(reg_lambda=3.0, max_iters=2000, rel_tol=1e-8, store_trace=False))
    results["RobustISTA"] = rista.x_hat
    for arch, K, label in (("RestOpt3", 4, "REST4"), ("Lista", 4, "LISTA4"), ("Lista", 7, "LISTA7")):
        best = None
        for lr in args.lr:
            net = init_nominal(arch, K, Sharing.Shared, tr.model, mu0, 3.0)
            rep = train(net, tr, None, TrainConfig(lr=lr, epochs=args.epochs))
            print(f"  {label} lr={lr:g}: train mse {rep.initial_train_loss:.3e} -> {rep.train_loss_per_epoch[-1]:.3e}")
            if best is None or rep.train_loss_per_epoch[-1] < best[1]:
                best = (net, rep.train_loss_per_epoch[-1])
        results[label] = predict(best[0], te.Y)

    for label, X_hat in results.items():
        rel = np.mean(np.sum((X_hat - te.X) ** 2, 1) / np.sum(te.X ** 2, 1))
        print(f"{label:<11} test mse {mse_loss(X_hat, te.X):.3e}  relative {rel:.3e}")
        sar.write_pgm(out / f"{label}_0.pgm", sar.unvec(sar.real_to_complex(X_hat[0]), 16, 16))
    sar.write_pgm(out / "truth_0.pgm", sar.unvec(sar.real_to_complex(te.X[0]), 16, 16))


if __name__ == "__main__":
    main()
