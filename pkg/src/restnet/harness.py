"""Experiment orchestration: mismatch grids, layer sweeps, metrics and reports.

Seeding: one nominal operator per spec, drawn from child stream 0 of
``spec.seed``. Training sets come from child stream 1 and test sets from
child stream 2 regardless of the radius, so datasets at different radii share
their signals, noise and perturbation directions and differ only in ||E||_F.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .nets import ArchVariant, Network, Sharing, init_nominal, predict
from .problem import (
    Dataset,
    LinearModel,
    MismatchSpec,
    NormLaw,
    SignalPrior,
    SplitTag,
    derive_seed,
    gen_dataset,
    gen_operator,
)
from .solvers import SOLVERS, SolverConfig, spectral_norm
from .train import TrainConfig, TrainReport, mse_loss, train

ARCH_PREFIX = {
    ArchVariant.Lista: "LISTA",
    ArchVariant.RestOpt1: "REST1-",
    ArchVariant.RestOpt2: "REST2-",
    ArchVariant.RestOpt3: "REST",
    ArchVariant.RestOpt4: "REST4-",
    ArchVariant.AblationNI: "NI",
    ArchVariant.AblationNII: "NII",
}


def default_label(arch, K: int) -> str:
    return f"{ARCH_PREFIX[ArchVariant(arch)]}{K}"


@dataclass
class ArchEntry:
    arch: ArchVariant
    K: int
    sharing: Sharing = Sharing.Shared
    label: str = ""

    def __post_init__(self):
        self.arch = ArchVariant(self.arch)
        self.sharing = Sharing(self.sharing)
        if not self.label:
            self.label = default_label(self.arch, self.K)


@dataclass
class SolverEntry:
    algo: str
    reg_lambda: float
    step_mu: float | None = None
    max_iters: int = 2000
    rel_tol: float = 1e-7
    label: str = ""

    def __post_init__(self):
        if self.algo not in SOLVERS:
            raise InvalidArgument(f"unknown solver {self.algo!r}; choose from {sorted(SOLVERS)}")
        if not self.label:
            self.label = {"ista": "ISTA", "rista": "RobustISTA"}[self.algo]

    def config(self) -> SolverConfig:
        return SolverConfig(self.step_mu, self.reg_lambda, self.max_iters, self.rel_tol, store_trace=False)


@dataclass
class ExperimentSpec:
    M: int = 130
    N: int = 250
    k: int = 4
    frob_target: float = 10.0
    train_count: int = 1000
    test_count: int = 100
    r_train: list = field(default_factory=lambda: [0.0])
    r_test: list = field(default_factory=lambda: [0.0])
    sigma2: float = 0.03
    norm_law: NormLaw = NormLaw.UniformInBall
    archs: list = field(default_factory=list)
    train: TrainConfig = field(default_factory=TrainConfig)
    lr_grid: list = field(default_factory=list)
    solvers: list = field(default_factory=list)
    seed: int = 0
    mu0: float | None = None
    lambda0: float = 0.3

    def __post_init__(self):
        self.norm_law = NormLaw(self.norm_law)
        self.archs = [a if isinstance(a, ArchEntry) else ArchEntry(**a) for a in self.archs]
        self.solvers = [s if isinstance(s, SolverEntry) else SolverEntry(**s) for s in self.solvers]
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if min(self.train_count, self.test_count) < 1:
            raise InvalidArgument("sample counts must be >= 1")
        if any(r < 0 for r in list(self.r_train) + list(self.r_test)):
            raise InvalidArgument("mismatch radii must be >= 0")
        labels = [a.label for a in self.archs] + [s.label for s in self.solvers]
        if len(set(labels)) != len(labels):
            raise InvalidArgument(f"duplicate method labels in {labels}")

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown spec fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self) -> dict:
        d = asdict(self)
        d["norm_law"] = self.norm_law.value
        for a in d["archs"]:
            a["arch"] = ArchVariant(a["arch"]).value
            a["sharing"] = Sharing(a["sharing"]).value
        return d

    def labels(self) -> set[str]:
        return {a.label for a in self.archs} | {s.label for s in self.solvers}


def paper_spec(**overrides) -> ExperimentSpec:
    """Full-scale compressive sensing setup (130 x 250, 1000/100 samples, 2000 epochs)."""
    base = dict(
        archs=[ArchEntry("RestOpt3", 6), ArchEntry("Lista", 6), ArchEntry("Lista", 8)],
        solvers=[SolverEntry("ista", 0.3), SolverEntry("rista", 0.3)],
        train=TrainConfig(lr=1e-4, batch_size=32, epochs=2000, seed=0, eval_every=50),
        r_train=[0.0, 4.0, 8.0],
        r_test=[0.0, 4.0, 8.0, 12.0],
    )
    base.update(overrides)
    return ExperimentSpec(**base)


def desk_spec(**overrides) -> ExperimentSpec:
    """40 x 100 reduction: radii scaled by sqrt(MN / (130 * 250)), 500/100 samples, 300 epochs."""
    M, N = 40, 100
    s = math.sqrt(M * N / (130 * 250))
    base = dict(
        M=M,
        N=N,
        train_count=500,
        test_count=100,
        archs=[ArchEntry("RestOpt3", 6), ArchEntry("Lista", 8)],
        solvers=[SolverEntry("ista", 0.3), SolverEntry("rista", 0.3)],
        train=TrainConfig(lr=1e-3, batch_size=32, epochs=300, seed=0, eval_every=50),
        lr_grid=[1e-3, 1e-4],
        r_train=[0.0, 8 * s],
        r_test=[0.0, 4 * s, 8 * s, 12 * s],
    )
    base.update(overrides)
    return ExperimentSpec(**base)


# ---------------------------------------------------------------------------
# building blocks

def build_model(spec: ExperimentSpec) -> LinearModel:
    return gen_operator(spec.M, spec.N, spec.frob_target, derive_seed(spec.seed, 0))


def make_dataset(spec: ExperimentSpec, model: LinearModel, r: float, split=SplitTag.Train) -> Dataset:
    split = SplitTag(split)
    count = spec.train_count if split is SplitTag.Train else spec.test_count
    stream = 1 if split is SplitTag.Train else 2
    return gen_dataset(model, SignalPrior(spec.k), MismatchSpec(float(r), spec.norm_law), spec.sigma2, count,
                       derive_seed(spec.seed, stream), split)


def init_mu(spec: ExperimentSpec, model: LinearModel) -> float:
    return spec.mu0 if spec.mu0 is not None else 1.0 / (2.0 * spectral_norm(model.A) ** 2)


def train_entry(spec: ExperimentSpec, entry: ArchEntry, model: LinearModel, train_ds: Dataset,
                test_ds: Dataset | None = None) -> tuple[Network, TrainReport]:
    """Train one architecture from nominal initialization.

    With a non-empty ``spec.lr_grid`` every rate is tried and the network
    with the lowest final training loss is kept.
    """
    mu0 = init_mu(spec, model)
    lrs = spec.lr_grid or [spec.train.lr]
    best = None
    for lr in lrs:
        net = init_nominal(entry.arch, entry.K, entry.sharing, model, mu0, spec.lambda0)
        cfg = TrainConfig(**{**asdict(spec.train), "lr": lr})
        rep = train(net, train_ds, test_ds, cfg)
        if best is None or rep.train_loss_per_epoch[-1] < best[1].train_loss_per_epoch[-1]:
            best = (net, rep)
    return best


def evaluate_net(net: Network, ds: Dataset) -> float:
    return mse_loss(predict(net, ds.Y), ds.X)


def evaluate_solver(entry: SolverEntry, ds: Dataset) -> float:
    res = SOLVERS[entry.algo](ds.Y, ds.model, entry.config())
    return mse_loss(res.x_hat, ds.X)


@dataclass
class MetricRow:
    method: str
    r: float
    r_prime: float
    mse: float
    wall_time_s: float = 0.0

    @property
    def mse_db(self) -> float:
        return 10.0 * math.log10(self.mse) if self.mse > 0 else -math.inf


def _sort(rows):
    return sorted(rows, key=lambda m: (m.method, -1.0 if math.isnan(m.r) else m.r, m.r_prime))


def run_grid(spec: ExperimentSpec, r_train_list=None, r_test_list=None, nets_out: dict | None = None) -> list[MetricRow]:
    """Train every listed network at each training radius and test it at every test radius.

    Model-based solvers only see test data; their rows carry r = nan.
    ``nets_out``, when given, receives ``(label, r) -> (network, report)``.
    """
    r_train_list = list(spec.r_train if r_train_list is None else r_train_list)
    r_test_list = list(spec.r_test if r_test_list is None else r_test_list)
    if not r_train_list or not r_test_list:
        raise InvalidArgument("radius lists must be non-empty")
    model = build_model(spec)
    tests = {rp: make_dataset(spec, model, rp, SplitTag.Test) for rp in r_test_list}
    rows = []
    for r in r_train_list:
        train_ds = make_dataset(spec, model, r, SplitTag.Train)
        monitor = tests.get(r)
        for entry in spec.archs:
            net, rep = train_entry(spec, entry, model, train_ds, monitor)
            if nets_out is not None:
                nets_out[(entry.label, r)] = (net, rep)
            for rp, ds in tests.items():
                rows.append(MetricRow(entry.label, float(r), float(rp), evaluate_net(net, ds), rep.wall_time_s))
    for entry in spec.solvers:
        for rp, ds in tests.items():
            t0 = time.perf_counter()
            mse = evaluate_solver(entry, ds)
            rows.append(MetricRow(entry.label, math.nan, float(rp), mse, time.perf_counter() - t0))
    return _sort(rows)


def run_layer_sweep(spec: ExperimentSpec, k_list, arch=ArchVariant.RestOpt3, sharing=Sharing.Shared) -> list[MetricRow]:
    """Train ``arch`` at each depth; emits a test row ``<label>`` and a ``<label>-train`` row per depth.

    Uses the first entries of ``spec.r_train`` and ``spec.r_test``.
    """
    if not k_list:
        raise InvalidArgument("k_list must be non-empty")
    model = build_model(spec)
    r, rp = spec.r_train[0], spec.r_test[0]
    train_ds = make_dataset(spec, model, r, SplitTag.Train)
    test_ds = make_dataset(spec, model, rp, SplitTag.Test)
    rows = []
    for K in k_list:
        entry = ArchEntry(arch, int(K), sharing)
        net, rep = train_entry(spec, entry, model, train_ds, None)
        rows.append(MetricRow(entry.label, float(r), float(rp), evaluate_net(net, test_ds), rep.wall_time_s))
        rows.append(MetricRow(entry.label + "-train", float(r), float(r), evaluate_net(net, train_ds), rep.wall_time_s))
    return rows


# ---------------------------------------------------------------------------
# reporting

CSV_HEADER = ["method", "r", "r_prime", "mse", "mse_db", "wall_time_s"]


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return repr(float(v))


def write_csv(rows, path, timing: bool = True) -> None:
    """``timing=False`` writes zero wall times so identical runs give identical bytes."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for m in rows:
            w.writerow([m.method, _fmt(m.r), _fmt(m.r_prime), _fmt(m.mse), _fmt(m.mse_db), _fmt(m.wall_time_s if timing else 0.0)])


def read_csv(path, known_labels=None) -> list[MetricRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            if known_labels is not None and rec["method"] not in known_labels:
                raise InvalidArgument(f"unknown method label {rec['method']!r}")
            rows.append(MetricRow(rec["method"], float(rec["r"]), float(rec["r_prime"]), float(rec["mse"]),
                                  float(rec.get("wall_time_s") or 0.0)))
    return rows


def format_table(rows) -> str:
    head = f"{'method':<14}{'r':>8}{'r_prime':>9}{'mse':>13}{'mse_db':>9}{'time_s':>9}"
    lines = [head, "-" * len(head)]
    for m in rows:
        r = "-" if math.isnan(m.r) else f"{m.r:.3g}"
        lines.append(f"{m.method:<14}{r:>8}{m.r_prime:>9.3g}{m.mse:>13.5g}{m.mse_db:>9.2f}{m.wall_time_s:>9.2f}")
    return "\n".join(lines) + "\n"


def report(rows, out_path, curves: dict | None = None, timing: bool = True) -> None:
    """CSV at ``out_path`` plus an aligned ``.txt`` table; ``curves`` adds a ``.pgm`` loss plot."""
    rows = list(rows)
    if not rows:
        raise InvalidArgument("no rows to report")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_path, timing)
    out_path.with_suffix(".txt").write_text(format_table(rows), encoding="utf-8")
    if curves:
        write_curves_pgm(out_path.with_suffix(".pgm"), curves)


def write_curves_csv(rep: TrainReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "test_mse"])
        for e, (tr, te) in enumerate(zip(rep.train_loss_per_epoch, rep.test_loss_per_epoch), start=1):
            w.writerow([e, repr(tr), "" if te is None else repr(te)])


def write_curves_pgm(path, curves: dict, height: int = 200, width: int = 400) -> None:
    """Rasterize dB loss curves (label -> sequence, None entries skipped) into a grayscale PGM."""
    series = [np.array([np.nan if v is None else v for v in c], dtype=float) for c in curves.values()]
    db = [10 * np.log10(np.where(s > 0, s, np.nan)) for s in series]
    finite = np.concatenate([d[np.isfinite(d)] for d in db]) if db else np.zeros(0)
    img = np.full((height, width), 255, dtype=np.uint8)
    if finite.size:
        lo, hi = finite.min(), finite.max()
        span = hi - lo or 1.0
        for j, d in enumerate(db):
            shade = 40 * j % 200
            n = d.size
            for i, v in enumerate(d):
                if np.isfinite(v):
                    col = int(round(i * (width - 1) / max(n - 1, 1)))
                    row = int(round((hi - v) / span * (height - 1)))
                    img[max(row - 1, 0):row + 2, col] = shade
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + img.tobytes())
