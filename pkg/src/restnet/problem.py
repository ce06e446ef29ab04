"""Measurement model y = (A + E) x + e, synthetic data generation and dataset I/O.

Random streams
--------------
Every generator draws from numpy's PCG64 bit generator seeded through a
``SeedSequence``. Datasets use one child stream per sample index,
``SeedSequence(seed, spawn_key=(index,))``, so sample ``i`` is identical
whether the dataset is generated serially, in parallel, or truncated.
Within a sample the draw order is fixed: signal support, signal values,
mismatch direction, mismatch radius, noise.
"""
from __future__ import annotations

import enum
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumError,
    DimensionMismatch,
    InvalidArgument,
    MissingManifest,
    UnsupportedVersion,
)

FORMAT_VERSION = 1


class NormLaw(str, enum.Enum):
    UniformInBall = "UniformInBall"
    OnSphere = "OnSphere"


class SplitTag(str, enum.Enum):
    Train = "Train"
    Test = "Test"


def make_rng(seed, *key):
    """PCG64 generator for ``seed``; extra integers select an independent child stream.

    A ``np.random.Generator`` passed as ``seed`` is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if key:
        return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
    return np.random.default_rng(int(seed))


def derive_seed(seed: int, *key: int) -> int:
    """64-bit integer seed for the child stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class LinearModel:
    A: np.ndarray
    frob_target: float
    provenance: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class MismatchSpec:
    radius_r: float = 0.0
    norm_law: NormLaw = NormLaw.UniformInBall

    def __post_init__(self):
        if self.radius_r < 0:
            raise InvalidArgument(f"mismatch radius must be >= 0, got {self.radius_r}")
        object.__setattr__(self, "norm_law", NormLaw(self.norm_law))


@dataclass(frozen=True)
class SignalPrior:
    sparsity_k: int = 4
    value_low: float = 0.0
    value_high: float = 1.0


@dataclass
class Sample:
    x: np.ndarray
    y: np.ndarray
    E: np.ndarray | None = None


@dataclass
class Dataset:
    """Samples stored as stacked arrays: ``X`` is (count, N), ``Y`` is (count, M)."""

    model: LinearModel
    X: np.ndarray
    Y: np.ndarray
    noise_sigma2: float
    mismatch: MismatchSpec
    seed: int
    split_tag: SplitTag = SplitTag.Train
    sparsity_k: int = 0
    E: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> Sample:
        return Sample(self.X[i], self.Y[i], None if self.E is None else self.E[i])

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]


def gen_operator(m: int, n: int, frob_target: float, seed) -> LinearModel:
    """i.i.d. standard normal M x N matrix rescaled to Frobenius norm ``frob_target``."""
    if m < 1 or n < 1:
        raise InvalidArgument(f"operator dimensions must be positive, got {m}x{n}")
    if not frob_target > 0:
        raise InvalidArgument(f"frob_target must be > 0, got {frob_target}")
    if m >= n:
        warnings.warn(f"operator is not underdetermined ({m}x{n})", stacklevel=2)
    rng = make_rng(seed)
    A = rng.standard_normal((m, n))
    A *= frob_target / np.linalg.norm(A)
    return LinearModel(A, float(frob_target), {"kind": "gaussian", "seed": seed if isinstance(seed, int) else None})


def _draw_mismatch(rng, shape, spec: MismatchSpec) -> np.ndarray:
    # draws are consumed even for r = 0 so downstream draws stay aligned across radii
    G = rng.standard_normal(shape)
    u = rng.random()
    if spec.radius_r == 0:
        return np.zeros(shape)
    radius = spec.radius_r * u if spec.norm_law is NormLaw.UniformInBall else spec.radius_r
    return G * (radius / np.linalg.norm(G))


def gen_mismatch(model: LinearModel, spec: MismatchSpec, seed) -> np.ndarray:
    """Gaussian perturbation with Frobenius norm drawn per ``spec.norm_law``.

    UniformInBall draws the norm uniformly on [0, r]; OnSphere fixes it to r.
    """
    return _draw_mismatch(make_rng(seed), model.A.shape, spec)


def _draw_signal(rng, n: int, prior: SignalPrior) -> np.ndarray:
    k = prior.sparsity_k
    if k < 0 or k > n:
        raise InvalidArgument(f"sparsity {k} must lie in [0, {n}]")
    x = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    # high - (high-low)*U with U in [0, 1) lands in (low, high]
    x[support] = prior.value_high - (prior.value_high - prior.value_low) * rng.random(k)
    return x


def gen_signal(n: int, prior: SignalPrior, seed) -> np.ndarray:
    return _draw_signal(make_rng(seed), n, prior)


def gen_dataset(
    model: LinearModel,
    prior: SignalPrior,
    spec: MismatchSpec,
    noise_sigma2: float,
    count: int,
    seed: int,
    split_tag: SplitTag = SplitTag.Train,
    store_E: bool = False,
) -> Dataset:
    """Draw ``count`` independent (x, E, e) triples and form y = (A + E) x + e.

    ``noise_sigma2`` is the per-entry noise variance.
    """
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    if noise_sigma2 < 0:
        raise InvalidArgument("noise variance must be >= 0")
    if prior.sparsity_k > model.N:
        raise InvalidArgument(f"sparsity {prior.sparsity_k} exceeds N={model.N}")
    M, N = model.A.shape
    sigma = np.sqrt(noise_sigma2)
    X = np.empty((count, N))
    Y = np.empty((count, M))
    Es = np.empty((count, M, N)) if store_E else None
    for i in range(count):
        rng = make_rng(seed, i)
        x = _draw_signal(rng, N, prior)
        E = _draw_mismatch(rng, (M, N), spec)
        e = sigma * rng.standard_normal(M)
        X[i] = x
        Y[i] = (model.A + E) @ x + e
        if store_E:
            Es[i] = E
    return Dataset(
        model=model,
        X=X,
        Y=Y,
        noise_sigma2=float(noise_sigma2),
        mismatch=spec,
        seed=int(seed),
        split_tag=SplitTag(split_tag),
        sparsity_k=prior.sparsity_k,
        E=Es,
    )


# ---------------------------------------------------------------------------
# on-disk format

def _write_f64(path: Path, arr: np.ndarray) -> str:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    M, N = ds.model.A.shape
    checksums = {
        "A": _write_f64(path / "A.f64", ds.model.A),
        "X": _write_f64(path / "X.f64", ds.X),
        "Y": _write_f64(path / "Y.f64", ds.Y),
    }
    if ds.E is not None:
        checksums["E"] = _write_f64(path / "E.f64", ds.E)
    manifest = {
        "format_version": FORMAT_VERSION,
        "M": M,
        "N": N,
        "count": len(ds),
        "k": ds.sparsity_k,
        "sigma2": ds.noise_sigma2,
        "r": ds.mismatch.radius_r,
        "norm_law": ds.mismatch.norm_law.value,
        "frob_target": ds.model.frob_target,
        "seed": ds.seed,
        "split_tag": ds.split_tag.value,
        "store_E": ds.E is not None,
        "checksums": checksums,
        "meta": ds.meta,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _read_f64(path: Path, expected: int, digest: str | None) -> np.ndarray:
    if not path.exists():
        raise DimensionMismatch(f"payload {path.name} missing")
    data = path.read_bytes()
    if len(data) != 8 * expected:
        raise DimensionMismatch(f"{path.name}: expected {expected} float64 values, found {len(data) / 8:g}")
    if digest is not None and hashlib.sha256(data).hexdigest() != digest:
        raise ChecksumError(f"{path.name}: checksum mismatch")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def load_dataset(path) -> Dataset:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise MissingManifest(f"no manifest.json in {path}")
    man = json.loads(mpath.read_text(encoding="utf-8"))
    if man.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersion(f"dataset format_version {man.get('format_version')!r} is not supported")
    M, N, count = int(man["M"]), int(man["N"]), int(man["count"])
    sums = man.get("checksums", {})
    A = _read_f64(path / "A.f64", M * N, sums.get("A")).reshape(M, N)
    X = _read_f64(path / "X.f64", count * N, sums.get("X")).reshape(count, N)
    Y = _read_f64(path / "Y.f64", count * M, sums.get("Y")).reshape(count, M)
    E = None
    if man.get("store_E"):
        E = _read_f64(path / "E.f64", count * M * N, sums.get("E")).reshape(count, M, N)
    # SAR operators are tall by construction (more echo samples than scene cells)
    if M >= N and man.get("meta", {}).get("source") != "sar":
        warnings.warn(f"loaded operator is not underdetermined ({M}x{N})", stacklevel=2)
    return Dataset(
        model=LinearModel(A, float(man["frob_target"]), {"kind": "loaded", "path": str(path)}),
        X=X,
        Y=Y,
        noise_sigma2=float(man["sigma2"]),
        mismatch=MismatchSpec(float(man["r"]), NormLaw(man["norm_law"])),
        seed=int(man["seed"]),
        split_tag=SplitTag(man["split_tag"]),
        sparsity_k=int(man["k"]),
        E=E,
        meta=man.get("meta", {}),
    )
