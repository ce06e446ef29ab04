"""Loss, reverse-mode gradients through whole networks, SGD and the training loop."""
from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergedError, InvalidArgument
from .nets import (
    FROZEN,
    NONNEGATIVE,
    ArchVariant,
    Network,
    Sharing,
    flatten,
    forward,
    init_nominal,
    layer_backward,
    predict,
    save_network,
    unflatten,
)
from .problem import Dataset, make_rng
from .solvers import spectral_norm

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 2000
    seed: int = 0
    shuffle: bool = True
    eval_every: int = 1

    def __post_init__(self):
        if not self.lr >= 0:
            raise InvalidArgument("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise InvalidArgument("batch_size, epochs and eval_every must be >= 1")


@dataclass
class GradBundle:
    blocks: list[dict]
    accumulation_count: int = 1


@dataclass
class TrainReport:
    train_loss_per_epoch: list[float]
    test_loss_per_epoch: list[float | None]
    wall_time_s: float
    final_params_checksum: int
    initial_train_loss: float = float("nan")
    initial_test_loss: float | None = None
    best_test_epoch: int | None = None


def mse_loss(x_hat, x) -> float:
    """Mean squared error per entry: sum ||x_hat - x||^2 / (L * N)."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x_hat.shape != x.shape:
        raise InvalidArgument(f"shape mismatch {x_hat.shape} vs {x.shape}")
    if x.size == 0:
        raise InvalidArgument("empty batch")
    d = x_hat - x
    return float(np.sum(d * d) / d.size)


def backprop(net: Network, tapes, grad_out):
    """Chain layer_backward from the last layer to the first.

    Returns (grad wrt x0, GradBundle). Shared networks sum the per-layer
    parameter gradients into their single block.
    """
    if len(tapes) != net.depth_K:
        raise InvalidArgument(f"expected {net.depth_K} tapes, got {len(tapes)}")
    G = np.atleast_2d(np.asarray(grad_out, dtype=float))
    per_layer = [None] * net.depth_K
    for k in reversed(range(net.depth_K)):
        G, per_layer[k] = layer_backward(net.arch, net.layer_params(k), tapes[k], G)
    if net.sharing is Sharing.Shared:
        total = None
        for g in reversed(per_layer):
            total = dict(g) if total is None else {n: total[n] + g[n] for n in total}
        if total is None:
            total = {n: np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0 for n, v in net.blocks[0].items()}
        blocks = [total]
    else:
        blocks = per_layer
    return G, GradBundle(blocks, G.shape[0])


def network_backward(net: Network, tapes, x_hat, x_true) -> GradBundle:
    """Gradient of mse_loss(x_hat, x_true) with respect to every parameter block."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
    x_true = np.atleast_2d(np.asarray(x_true, dtype=float))
    seed = 2.0 * (x_hat - x_true) / x_hat.size
    return backprop(net, tapes, seed)[1]


def sgd_step(net: Network, grads: GradBundle, lr: float) -> None:
    """In-place params -= lr * grads, then clamp thresholds and step sizes at zero."""
    if len(grads.blocks) != len(net.blocks):
        raise InvalidArgument("gradient bundle does not match the network layout")
    frozen = FROZEN.get(net.arch, ())
    for block, g in zip(net.blocks, grads.blocks):
        for name, value in block.items():
            if name in frozen:
                continue
            block[name] = value - lr * g[name]
        for name in NONNEGATIVE:
            if name in block and block[name] < 0:
                block[name] = 0.0


def params_checksum(net: Network) -> int:
    return int.from_bytes(hashlib.blake2b(flatten(net).astype("<f8").tobytes(), digest_size=8).digest(), "little")


def evaluate(net: Network, ds: Dataset, batch: int = 1024) -> float:
    total = 0.0
    for s in range(0, len(ds), batch):
        d = predict(net, ds.Y[s:s + batch]) - ds.X[s:s + batch]
        total += float(np.sum(d * d))
    return total / ds.X.size


def train(net: Network, train_ds: Dataset, test_ds: Dataset | None, cfg: TrainConfig,
          checkpoint_dir=None) -> TrainReport:
    """Mini-batch SGD on the MSE loss; mutates ``net`` and returns the loss curves.

    Batches follow a seeded permutation per epoch; the last partial batch is
    kept. Training loss is evaluated on the full training set after each
    epoch, test loss every ``eval_every`` epochs.
    """
    M, N = net.dims
    if train_ds.X.shape[1] != N or train_ds.Y.shape[1] != M:
        raise InvalidArgument("training data dimensions do not match the network")
    if test_ds is not None and (test_ds.X.shape[1] != N or test_ds.Y.shape[1] != M):
        raise InvalidArgument("test data dimensions do not match the network")
    rng = make_rng(cfg.seed)
    L = len(train_ds)
    t0 = time.perf_counter()
    report = TrainReport([], [], 0.0, 0)
    report.initial_train_loss = evaluate(net, train_ds)
    if test_ds is not None:
        report.initial_test_loss = evaluate(net, test_ds)
    best = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(L) if cfg.shuffle else np.arange(L)
        for b, s in enumerate(range(0, L, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            try:
                x_hat, tapes = forward(net, train_ds.Y[idx])
            except DivergedError as exc:
                raise DivergedError(f"epoch {epoch} batch {b}: {exc}", epoch=epoch, batch=b) from exc
            loss = mse_loss(x_hat, train_ds.X[idx])
            if not np.isfinite(loss):
                raise DivergedError(f"non-finite loss at epoch {epoch} batch {b}", epoch=epoch, batch=b)
            sgd_step(net, network_backward(net, tapes, x_hat, train_ds.X[idx]), cfg.lr)
        train_loss = evaluate(net, train_ds)
        if not np.isfinite(train_loss):
            raise DivergedError(f"non-finite training loss after epoch {epoch}", epoch=epoch)
        report.train_loss_per_epoch.append(train_loss)
        test_loss = None
        if test_ds is not None and epoch % cfg.eval_every == 0:
            test_loss = evaluate(net, test_ds)
            if best is None or test_loss < best[1]:
                best = (epoch, test_loss)
            if checkpoint_dir is not None:
                save_network(net, Path(checkpoint_dir))
        report.test_loss_per_epoch.append(test_loss)
        if epoch % max(1, cfg.epochs // 10) == 0:
            log.debug("epoch %d train %.4g test %s", epoch, train_loss, test_loss)
    report.wall_time_s = time.perf_counter() - t0
    report.final_params_checksum = params_checksum(net)
    report.best_test_epoch = best[0] if best else None
    return report


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    arch: ArchVariant
    max_rel_err: float
    checked: int
    skipped: int
    worst: tuple = field(default=())


def _kink_margin(tapes) -> float:
    return min((float(np.min(np.abs(np.abs(t.pre) - t.theta))) for t in tapes), default=np.inf)


def random_network(arch, dims, K: int, sharing, rng) -> tuple[Network, np.ndarray, np.ndarray]:
    """Nominal network on a random operator with every parameter jittered, plus (x0, y)."""
    M, N = dims
    Amat = rng.standard_normal((M, N)) / np.sqrt(M)
    mu0 = 0.3 / spectral_norm(Amat) ** 2
    net = init_nominal(arch, K, sharing, Amat, mu0, 0.5)
    vec = flatten(net)
    vec = vec + 0.05 * rng.standard_normal(vec.size) * np.maximum(np.abs(vec), 0.1)
    net = unflatten(net, vec)
    for b in net.blocks:
        for name in NONNEGATIVE:
            if name in b:
                b[name] = abs(b[name])
        if "mu1" in b:
            b["mu1"] = 0.05 + abs(b["mu1"])
    x0 = 0.3 * rng.standard_normal((2, N))
    y = rng.standard_normal((2, M))
    return net, x0, y


def grad_check(arch, dims=(8, 20), trials: int = 20, h: float = 1e-5, seed: int = 0,
               K: int = 3, sharing=Sharing.Shared, coords: int = 50, theta_scale: float = 1.0) -> GradCheckReport:
    """Compare analytic gradients with central differences of a random linear probe loss.

    Each trial draws a jittered network, inputs and probe weights, then checks
    ``coords`` parameter coordinates plus every coordinate of x0. Coordinates
    whose perturbed runs come within 10 h of a shrinkage kink are skipped.
    """
    if not h > 0:
        raise InvalidArgument("h must be > 0")
    arch = ArchVariant(arch)
    rng = make_rng(seed)
    worst_err, worst = 0.0, ()
    checked = skipped = 0
    for trial in range(trials):
        net, x0, y = random_network(arch, dims, K, sharing, rng)
        if theta_scale != 1.0:
            for b in net.blocks:
                b["theta" if "theta" in b else "lambda"] *= theta_scale
        C = rng.standard_normal(x0.shape)

        def probe(n, x):
            out, tapes = forward(n, y, x)
            return float(np.sum(C * out)), tapes

        _, tapes = probe(net, x0)
        gx, bundle = backprop(net, tapes, C)
        analytic = flatten(Network(net.arch, net.depth_K, net.sharing, net.dims, bundle.blocks))
        base = flatten(net)
        n_par = base.size
        picks = rng.choice(n_par, size=min(coords, n_par), replace=False)
        cases = [("param", int(i)) for i in picks] + [("x0", int(i)) for i in range(x0.size)]
        for kind, i in cases:
            if kind == "param":
                vp, vm = base.copy(), base.copy()
                vp[i] += h
                vm[i] -= h
                fp, tp = probe(unflatten(net, vp), x0)
                fm, tm = probe(unflatten(net, vm), x0)
                a = analytic[i]
            else:
                xp, xm = x0.copy(), x0.copy()
                xp.flat[i] += h
                xm.flat[i] -= h
                fp, tp = probe(net, xp)
                fm, tm = probe(net, xm)
                a = gx.flat[i]
            if min(_kink_margin(tapes), _kink_margin(tp), _kink_margin(tm)) < 10 * h:
                skipped += 1
                continue
            fd = (fp - fm) / (2 * h)
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            checked += 1
            if err > worst_err:
                worst_err, worst = err, (trial, kind, i, a, fd)
    return GradCheckReport(arch, worst_err, checked, skipped, worst)
