"""Command-line entry point: ``restnet <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import harness, sar
from .errors import FormatError, InvalidArgument
from .nets import ArchVariant, Sharing, init_nominal, learnable_count, load_network, predict, save_network
from .problem import (
    MismatchSpec,
    NormLaw,
    SignalPrior,
    SplitTag,
    derive_seed,
    gen_dataset,
    gen_operator,
    load_dataset,
    save_dataset,
)
from .solvers import SOLVERS, SolverConfig, spectral_norm
from .train import TrainConfig, grad_check, train

log = logging.getLogger("restnet")


def _dims(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MxN, got {text!r}") from None


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _out(args, path) -> Path:
    p = Path(path)
    if args.out_dir and not p.is_absolute():
        p = Path(args.out_dir) / p
    return p


def _spec(args) -> harness.ExperimentSpec:
    if args.spec:
        spec = harness.ExperimentSpec.load(args.spec)
    else:
        spec = harness.paper_spec() if args.preset == "paper" else harness.desk_spec()
    if args.seed is not None:
        spec.seed = args.seed
    return spec


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args):
    seed = args.seed or 0
    if args.operator:
        model = load_dataset(args.operator).model
    else:
        model = gen_operator(args.M, args.N, args.frob, derive_seed(seed, 0))
    ds = gen_dataset(model, SignalPrior(args.k), MismatchSpec(args.r, NormLaw(args.norm_law)), args.sigma2,
                     args.count, derive_seed(seed, 1 if args.split == "train" else 2), SplitTag(args.split.capitalize()),
                     store_E=args.store_E)
    out = _out(args, args.out)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} samples ({model.M}x{model.N}, r={args.r}) to {out}")


def cmd_solve(args):
    ds = load_dataset(args.dataset)
    cfg = SolverConfig(args.mu, args.reg_lambda, args.iters, args.tol, store_trace=False)
    res = SOLVERS[args.algo](ds.Y, ds.model, cfg)
    err = np.mean((res.x_hat - ds.X) ** 2, axis=1)
    out = _out(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "mse", "iters", "converged"])
        for i, e in enumerate(err):
            w.writerow([i, repr(float(e)), int(res.iters_run[i]), int(bool(res.converged[i]))])
    print(f"{args.algo}: mean mse {float(err.mean()):.6g} over {len(ds)} samples -> {out}")


def cmd_train(args):
    train_ds = load_dataset(args.train)
    test_ds = load_dataset(args.test) if args.test else None
    model = train_ds.model
    mu0 = args.mu0 if args.mu0 is not None else 1.0 / (2.0 * spectral_norm(model.A) ** 2)
    net = init_nominal(args.arch, args.layers, Sharing(args.sharing.capitalize()), model, mu0, args.lambda0)
    cfg = TrainConfig(args.lr, args.batch, args.epochs, args.seed or 0, eval_every=args.eval_every)
    rep = train(net, train_ds, test_ds, cfg)
    out = _out(args, args.out)
    save_network(net, out)
    if args.curves:
        harness.write_curves_csv(rep, _out(args, args.curves))
    last_test = next((t for t in reversed(rep.test_loss_per_epoch) if t is not None), None)
    print(f"{harness.default_label(net.arch, net.depth_K)}: {learnable_count(net)} parameters, train mse {rep.initial_train_loss:.5g} -> "
          f"{rep.train_loss_per_epoch[-1]:.5g}, test mse {last_test}, {rep.wall_time_s:.1f}s -> {out}")


def cmd_eval(args):
    net = load_network(args.net)
    ds = load_dataset(args.dataset)
    X_hat = predict(net, ds.Y)
    mse = float(np.mean((X_hat - ds.X) ** 2))
    print(f"{harness.default_label(net.arch, net.depth_K)}: mse {mse:.6g} ({10 * math.log10(mse) if mse > 0 else -math.inf:.2f} dB)")
    if args.pgm_dir:
        meta = ds.meta
        if meta.get("source") != "sar":
            raise InvalidArgument("--pgm-dir needs a SAR dataset")
        pdir = _out(args, args.pgm_dir)
        pdir.mkdir(parents=True, exist_ok=True)
        Mr, Na = meta["M_range"], meta["N_azimuth"]
        for i in range(min(args.pgm_count, len(ds))):
            sar.write_pgm(pdir / f"recon_{i:03d}.pgm", sar.unvec(sar.real_to_complex(X_hat[i]), Mr, Na))
            sar.write_pgm(pdir / f"truth_{i:03d}.pgm", sar.unvec(sar.real_to_complex(ds.X[i]), Mr, Na))


def _grid_rows(args, rows):
    for path in args.import_csv or []:
        rows = rows + harness.read_csv(path)
    return harness._sort(rows)


def cmd_grid(args):
    spec = _spec(args)
    r_train = _floats(args.r_train) if args.r_train else None
    r_test = _floats(args.r_test) if args.r_test else None
    rows = harness.run_grid(spec, r_train, r_test)
    rows = _grid_rows(args, rows)
    out = _out(args, args.out)
    harness.report(rows, out, timing=not args.no_timing)
    print(harness.format_table(rows), end="")


def cmd_layers(args):
    spec = _spec(args)
    rows = harness.run_layer_sweep(spec, _ints(args.k_list), ArchVariant(args.arch))
    out = _out(args, args.out)
    harness.report(rows, out, timing=not args.no_timing)
    print(harness.format_table(rows), end="")


def cmd_report(args):
    rows = []
    for path in args.inputs:
        rows += harness.read_csv(path)
    rows = _grid_rows(args, rows)
    out = _out(args, args.out)
    harness.report(rows, out)
    print(harness.format_table(rows), end="")


def cmd_sar_gen(args):
    geom = sar.SarGeometry.from_json(json.loads(Path(args.geom).read_text())) if args.geom else sar.desk_geometry()
    M, N = args.grid
    grid = sar.desk_grid(M, N)
    seed = args.seed or 0
    phantoms = sar.phantom_bank(args.phantoms, M, N, args.phantom_k, derive_seed(seed, 3))
    ds = sar.gen_sar_dataset(geom, grid, phantoms, args.sampling, args.d, args.sigma2, args.count,
                             derive_seed(seed, 1 if args.split == "train" else 2), gain=args.gain,
                             split_tag=SplitTag(args.split.capitalize()))
    out = _out(args, args.out)
    save_dataset(ds, out)
    (out / "geom.json").write_text(json.dumps(geom.to_json(), indent=2), encoding="utf-8")
    print(f"wrote {len(ds)} SAR samples, operator {ds.model.A.shape}, max ||E||_F {ds.mismatch.radius_r:.4g} -> {out}")


def cmd_gradcheck(args):
    archs = list(ArchVariant) if args.arch == "all" else [ArchVariant(args.arch)]
    worst = 0.0
    for a in archs:
        for sh in (Sharing.Shared, Sharing.Unshared):
            rep = grad_check(a, tuple(args.dims), args.trials, args.h, args.seed or 0, args.K, sh)
            worst = max(worst, rep.max_rel_err)
            print(f"{a.value:<12} {sh.value:<9} max rel err {rep.max_rel_err:.2e} "
                  f"({rep.checked} checked, {rep.skipped} near kinks)")
    if worst > args.tol:
        print(f"FAIL: worst relative error {worst:.2e} > {args.tol:g}")
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="restnet", description="Sparse recovery under operator mismatch.")
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    p.add_argument("--out-dir", default=None, help="directory for relative output paths")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic compressive sensing dataset")
    g.add_argument("--M", type=int, default=130)
    g.add_argument("--N", type=int, default=250)
    g.add_argument("--frob", type=float, default=10.0, help="Frobenius norm of A")
    g.add_argument("--operator", default=None, help="reuse A from this dataset directory")
    g.add_argument("--k", type=int, default=4)
    g.add_argument("--sigma2", type=float, default=0.03)
    g.add_argument("--r", type=float, default=0.0)
    g.add_argument("--norm-law", choices=[n.value for n in NormLaw], default=NormLaw.UniformInBall.value)
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--split", choices=["train", "test"], default="train")
    g.add_argument("--store-E", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run ISTA or robust ISTA on a dataset")
    s.add_argument("--algo", choices=sorted(SOLVERS), default="rista")
    s.add_argument("--lambda", dest="reg_lambda", type=float, default=0.3)
    s.add_argument("--mu", type=float, default=None)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="train an unrolled network")
    t.add_argument("--arch", choices=[a.value for a in ArchVariant], default="RestOpt3")
    t.add_argument("--layers", type=int, default=6)
    t.add_argument("--sharing", choices=["shared", "unshared"], default="shared")
    t.add_argument("--train", required=True)
    t.add_argument("--test", default=None)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--eval-every", type=int, default=1)
    t.add_argument("--mu0", type=float, default=None, help="initial step (default 1/(2 sigma_max^2))")
    t.add_argument("--lambda0", type=float, default=0.3)
    t.add_argument("--out", required=True)
    t.add_argument("--curves", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained network on a dataset")
    e.add_argument("--net", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--pgm-dir", default=None, help="write SAR reconstructions as PGM images")
    e.add_argument("--pgm-count", type=int, default=4)
    e.set_defaults(func=cmd_eval)

    for name, fn, help_ in (("grid", cmd_grid, "train/test over a mismatch grid"),
                            ("layers", cmd_layers, "depth sweep")):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--spec", default=None, help="ExperimentSpec JSON")
        q.add_argument("--preset", choices=["desk", "paper"], default="desk")
        q.add_argument("--out", default=f"{name}.csv")
        q.add_argument("--no-timing", action="store_true", help="write zero wall times for byte-stable CSVs")
        if name == "grid":
            q.add_argument("--r-train", default=None, help="comma-separated radii")
            q.add_argument("--r-test", default=None)
            q.add_argument("--import", dest="import_csv", action="append", help="merge rows from an external CSV")
        else:
            q.add_argument("--k-list", default="1,2,4,6,8")
            q.add_argument("--arch", choices=[a.value for a in ArchVariant], default="RestOpt3")
        q.set_defaults(func=fn)

    r = sub.add_parser("report", help="merge result CSVs and render a table")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--import", dest="import_csv", action="append")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    sar_p = sub.add_parser("sar", help="SAR tools")
    sar_sub = sar_p.add_subparsers(dest="sar_command", required=True)
    sg = sar_sub.add_parser("gen", help="generate a real-embedded SAR dataset")
    sg.add_argument("--geom", default=None, help="SarGeometry JSON (default: desk geometry)")
    sg.add_argument("--grid", type=_dims, default=(16, 16), help="scene size MxN")
    sg.add_argument("--sampling", type=_dims, default=(32, 32), help="fast x slow time samples IxQ")
    sg.add_argument("--d", type=float, default=0.0, help="motion error bound in metres")
    sg.add_argument("--sigma2", type=float, default=0.01)
    sg.add_argument("--gain", type=float, default=1.0)
    sg.add_argument("--count", type=int, default=100)
    sg.add_argument("--phantoms", type=int, default=100, help="size of the phantom bank")
    sg.add_argument("--phantom-k", type=int, default=8)
    sg.add_argument("--split", choices=["train", "test"], default="train")
    sg.add_argument("--out", required=True)
    sg.set_defaults(func=cmd_sar_gen)

    gc = sub.add_parser("gradcheck", help="finite-difference check of network gradients")
    gc.add_argument("--arch", choices=["all"] + [a.value for a in ArchVariant], default="all")
    gc.add_argument("--dims", type=int, nargs=2, default=(8, 20))
    gc.add_argument("--K", type=int, default=3)
    gc.add_argument("--trials", type=int, default=20)
    gc.add_argument("--h", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return int(args.func(args) or 0)
    except (InvalidArgument, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
