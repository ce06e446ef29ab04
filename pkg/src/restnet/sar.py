"""Stripmap SAR forward model with platform motion error.

Index conventions
-----------------
The scene Z has shape (M_range, N_azimuth) and is vectorized column-wise,
range index fastest: x[m + M_range * n] = Z[m, n]. The received signal S has
one row per (fast time i, pulse q) pair and is vectorized fast time first:
y[i + I * q] = S[i, q]. Operator rows and columns follow the same orders.

Timing
------
The chirp phase uses the one-way delay R / c while the range window uses the
two-way delay 2 R / c; both are kept exactly as in the model they come from.
The fast-time grid is centred on the two-way delays spanned by the scene at
spacing 1 / fs, the slow-time grid is centred on t = 0 at spacing 1 / prf.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .problem import Dataset, LinearModel, MismatchSpec, NormLaw, SplitTag, make_rng

C_LIGHT = 299_792_458.0


@dataclass
class SarGeometry:
    fc: float = 10e9
    Br: float = 400e6
    Tr: float = 1.5e-6
    fs: float = 500e6
    Ts: float = 2.0
    prf: float = 800.0
    v: float = 200.0
    platform0: tuple[float, float, float] = (3000.0, 0.0, 5000.0)
    c: float = C_LIGHT
    kr: float | None = None

    def __post_init__(self):
        for name in ("fc", "Br", "Tr", "fs", "Ts", "prf", "v", "c"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be > 0")
        if self.kr is None:
            self.kr = self.Br / self.Tr
        self.platform0 = tuple(float(p) for p in self.platform0)

    def to_json(self) -> dict:
        return {
            "fc": self.fc, "Br": self.Br, "Tr": self.Tr, "fs": self.fs, "Ts": self.Ts,
            "prf": self.prf, "v": self.v, "platform0": list(self.platform0), "c": self.c, "kr": self.kr,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SarGeometry":
        d = dict(d)
        if "platform0" in d:
            d["platform0"] = tuple(d["platform0"])
        return cls(**d)


def desk_geometry() -> SarGeometry:
    """Full-scale radar with fast- and slow-time rates lowered for a 16 x 16 scene.

    Carrier, chirp, pulse width, velocity and platform position are unchanged.
    With 32 x 32 samples and the 20 m x 15 m cells of ``desk_grid`` the
    1024 x 256 operator has condition number about 4.
    """
    return SarGeometry(fs=40e6, prf=40.0)


@dataclass
class SceneGrid:
    x_coords: np.ndarray
    y_coords: np.ndarray
    Z: np.ndarray | None = None

    def __post_init__(self):
        self.x_coords = np.asarray(self.x_coords, dtype=float)
        self.y_coords = np.asarray(self.y_coords, dtype=float)
        for c in (self.x_coords, self.y_coords):
            if c.ndim != 1 or c.size == 0 or np.any(np.diff(c) <= 0):
                raise InvalidArgument("scene coordinates must be non-empty and strictly increasing")
        if self.Z is not None and self.Z.shape != (self.M_range, self.N_azimuth):
            raise InvalidArgument(f"reflectivity shape {self.Z.shape} != {(self.M_range, self.N_azimuth)}")

    @property
    def M_range(self) -> int:
        return self.x_coords.size

    @property
    def N_azimuth(self) -> int:
        return self.y_coords.size

    @classmethod
    def regular(cls, M: int, N: int, dx: float, dy: float, center=(0.0, 0.0)) -> "SceneGrid":
        x = center[0] + dx * (np.arange(M) - (M - 1) / 2)
        y = center[1] + dy * (np.arange(N) - (N - 1) / 2)
        return cls(x, y)


def desk_grid(M: int = 16, N: int = 16) -> SceneGrid:
    return SceneGrid.regular(M, N, dx=20.0, dy=15.0)


@dataclass
class MotionError:
    d: float
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray

    def __post_init__(self):
        for comp in (self.dx, self.dy, self.dz):
            if np.any(np.abs(comp) > self.d):
                raise InvalidArgument("motion deviation exceeds its bound d")

    @classmethod
    def zeros(cls, Q: int) -> "MotionError":
        return cls(0.0, np.zeros(Q), np.zeros(Q), np.zeros(Q))


@dataclass
class ComplexOperator:
    H: np.ndarray
    tau: np.ndarray
    t: np.ndarray
    _real: np.ndarray | None = field(default=None, repr=False)

    @property
    def I(self) -> int:
        return self.tau.size

    @property
    def Q(self) -> int:
        return self.t.size

    def real_embedding(self) -> np.ndarray:
        if self._real is None:
            self._real = complex_to_real(self.H)[0]
        return self._real


def gen_motion_error(Q: int, d: float, seed) -> MotionError:
    """Per-pulse deviations, each component i.i.d. uniform on [-d, d]."""
    if d < 0:
        raise InvalidArgument("d must be >= 0")
    rng = make_rng(seed)
    dx, dy, dz = (rng.uniform(-d, d, Q) for _ in range(3))
    return MotionError(float(d), dx, dy, dz)


def slant_range(geom: SarGeometry, t_q, x_m, y_n, err: MotionError | None = None, q=None):
    """Platform-to-target distance; broadcasts over array arguments.

    With ``err`` the per-pulse deviations of pulse(s) ``q`` are subtracted from
    the platform offsets.
    """
    xp, yp, zp = geom.platform0
    t_q, x_m, y_n = (np.asarray(a, dtype=float) for a in (t_q, x_m, y_n))
    if err is None:
        ddx = ddy = ddz = 0.0
    else:
        if q is None:
            raise InvalidArgument("pulse index q is required with a motion error")
        ddx, ddy, ddz = err.dx[q], err.dy[q], err.dz[q]
    return np.sqrt((yp + geom.v * t_q - y_n - ddy) ** 2 + (xp - x_m - ddx) ** 2 + (zp - ddz) ** 2)


def _kernel_from_range(geom: SarGeometry, tau, t, y_n, R):
    wr = np.abs(tau - 2.0 * R / geom.c) < geom.Tr / 2
    wa = np.abs(t - y_n / geom.v) < geom.Ts / 2
    # phases are formed in real arithmetic: the carrier phase is ~1e6 rad, and numpy's
    # complex-by-real division rounds differently from a plain real division
    chirp = np.exp(-1j * (np.pi * geom.kr * (tau - R / geom.c) ** 2))
    carrier = np.exp(-1j * (4 * np.pi * geom.fc * R / geom.c))
    return np.where(wr & wa, chirp * carrier, 0.0)


def phase_kernel(geom: SarGeometry, tau_i, t_q, x_m, y_n, err: MotionError | None = None, q=None):
    """Windowed LFM echo phasor for fast time ``tau_i``, pulse time ``t_q`` and a scene cell."""
    R = slant_range(geom, t_q, x_m, y_n, err, q)
    return _kernel_from_range(geom, np.asarray(tau_i, float), np.asarray(t_q, float), np.asarray(y_n, float), R)


def time_grids(geom: SarGeometry, grid: SceneGrid, sampling=None):
    """Fast-time and slow-time sample instants for ``sampling = (I, Q)``.

    ``None`` for either count covers the full pulse span (2 R_min / c - Tr/2
    to 2 R_max / c + Tr/2) or the full aperture time respectively.
    """
    I, Q = sampling if sampling is not None else (None, None)
    if Q is None:
        Q = int(np.floor(geom.Ts * geom.prf)) + 1
    if Q < 1 or (I is not None and I < 1):
        raise InvalidArgument("sampling counts must be >= 1")
    t = (np.arange(Q) - (Q - 1) / 2) / geom.prf
    R = slant_range(geom, t[:, None, None], grid.x_coords[None, :, None], grid.y_coords[None, None, :])
    lo, hi = 2.0 * R.min() / geom.c, 2.0 * R.max() / geom.c
    if I is None:
        span_lo, span_hi = lo - geom.Tr / 2, hi + geom.Tr / 2
        I = int(np.floor((span_hi - span_lo) * geom.fs)) + 1
        tau = span_lo + np.arange(I) / geom.fs
    else:
        tau = 0.5 * (lo + hi) + (np.arange(I) - (I - 1) / 2) / geom.fs
    return tau, t


def build_operator(geom: SarGeometry, grid: SceneGrid, sampling=None, err: MotionError | None = None,
                   grids=None) -> ComplexOperator:
    """Dense (I*Q) x (M_range*N_azimuth) phase operator, perturbed when ``err`` is given."""
    tau, t = grids if grids is not None else time_grids(geom, grid, sampling)
    Q = t.size
    q = np.arange(Q)
    if err is not None and err.dx.size != Q:
        raise InvalidArgument(f"motion error has {err.dx.size} pulses, operator has {Q}")
    # axes: (pulse q, fast time i, azimuth n, range m)
    qi = q[:, None, None, None]
    R = slant_range(
        geom, t[qi], grid.x_coords[None, None, None, :], grid.y_coords[None, None, :, None],
        err, qi if err is not None else None,
    )
    Phi = _kernel_from_range(geom, tau[None, :, None, None], t[qi], grid.y_coords[None, None, :, None], R)
    H = Phi.reshape(Q * tau.size, grid.N_azimuth * grid.M_range)
    if not np.all(np.any(H != 0, axis=0)):
        warnings.warn("some scene cells fall outside every range/azimuth window (all-zero columns)", stacklevel=2)
    return ComplexOperator(H, tau, t)


def complex_to_real(H=None, y=None, x=None):
    """Real embedding [[Re H, -Im H], [Im H, Re H]] with stacked [Re; Im] vectors.

    Any argument may be None; the returned tuple mirrors the inputs. Vector
    arguments may be 2-D with one vector per row.
    """
    Hr = None
    if H is not None:
        H = np.asarray(H)
        Hr = np.block([[H.real, -H.imag], [H.imag, H.real]])
    return Hr, _embed_vec(y), _embed_vec(x)


def _embed_vec(v):
    if v is None:
        return None
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1).astype(float)


def real_to_complex(v: np.ndarray) -> np.ndarray:
    n = v.shape[-1] // 2
    return v[..., :n] + 1j * v[..., n:]


def vec(Z: np.ndarray) -> np.ndarray:
    return np.asarray(Z).reshape(-1, order="F")


def unvec(x: np.ndarray, M_range: int, N_azimuth: int) -> np.ndarray:
    return np.asarray(x).reshape((M_range, N_azimuth), order="F")


def gen_phantom(M_range: int, N_azimuth: int, k: int, seed) -> np.ndarray:
    """Sparse point-scatter scene: ``k`` distinct cells with amplitudes uniform on the unit disk."""
    rng = make_rng(seed)
    z = np.zeros(M_range * N_azimuth, dtype=complex)
    cells = rng.choice(z.size, size=k, replace=False)
    mag = np.sqrt(rng.random(k))
    ph = rng.uniform(0, 2 * np.pi, k)
    z[cells] = mag * np.exp(1j * ph)
    return unvec(z, M_range, N_azimuth)


def phantom_bank(count: int, M_range: int, N_azimuth: int, k: int, seed) -> list[np.ndarray]:
    return [gen_phantom(M_range, N_azimuth, k, make_rng(seed, i)) for i in range(count)]


def gen_sar_dataset(geom: SarGeometry, grid: SceneGrid, phantoms, sampling, d_train: float, noise_sigma2: float,
                    count: int, seed, gain: float = 1.0, split_tag=SplitTag.Train, store_E: bool = False) -> Dataset:
    """Real-embedded SAR samples under fresh per-sample motion errors.

    Sample ``i`` images ``phantoms[i % len(phantoms)]`` through the operator
    perturbed by its own motion error and adds complex Gaussian noise whose
    real and imaginary parts each have variance ``noise_sigma2``. ``gain``
    scales the unit-modulus kernel for both the nominal and perturbed
    operators. The dataset radius is the largest observed ||E||_F.
    """
    if not phantoms:
        raise InvalidArgument("phantom bank is empty")
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    grids = time_grids(geom, grid, sampling)
    H0 = gain * build_operator(geom, grid, grids=grids).H
    A_real = complex_to_real(H0)[0]
    Q = grids[1].size
    sigma = np.sqrt(noise_sigma2)
    n_real = 2 * H0.shape[1]
    X = np.empty((count, n_real))
    Y = np.empty((count, 2 * H0.shape[0]))
    Es = np.empty((count,) + A_real.shape) if store_E else None
    e_norms = []
    for i in range(count):
        rng = make_rng(seed, i)
        err = gen_motion_error(Q, d_train, rng)
        noise = sigma * (rng.standard_normal(H0.shape[0]) + 1j * rng.standard_normal(H0.shape[0]))
        Hp = H0 if d_train == 0 else gain * build_operator(geom, grid, err=err, grids=grids).H
        x = vec(phantoms[i % len(phantoms)])
        X[i] = _embed_vec(x)
        # the real form keeps y == A x bit-exact when there is no mismatch or noise
        Hr = A_real if Hp is H0 else complex_to_real(Hp)[0]
        Y[i] = Hr @ X[i] + _embed_vec(noise)
        dE = Hp - H0
        e_norms.append(float(np.sqrt(2.0) * np.linalg.norm(dE)))
        if store_E:
            Es[i] = complex_to_real(dE)[0]
    ks = {int(np.count_nonzero(p)) for p in phantoms}
    meta = {
        "source": "sar",
        "d": float(d_train),
        "gain": float(gain),
        "I": int(grids[0].size),
        "Q": int(Q),
        "M_range": grid.M_range,
        "N_azimuth": grid.N_azimuth,
        "vec_order": "x[m + M_range*n] = Z[m, n]; real part block first",
        "row_order": "y[i + I*q] = S[i, q]; real part block first",
        "E_frob": e_norms,
    }
    return Dataset(
        model=LinearModel(A_real, float(np.linalg.norm(A_real)), {"kind": "sar"}),
        X=X,
        Y=Y,
        noise_sigma2=float(noise_sigma2),
        mismatch=MismatchSpec(max(e_norms), NormLaw.UniformInBall),
        seed=int(seed) if not isinstance(seed, np.random.Generator) else 0,
        split_tag=SplitTag(split_tag),
        sparsity_k=max(ks) if len(ks) == 1 else 0,
        E=Es,
        meta=meta,
    )


def mean_mismatch_norm(geom, grid, sampling, d: float, gain: float = 1.0, draws: int = 8, seed: int = 0) -> float:
    """Average ||E||_F of the real-embedded perturbation for motion bound ``d``."""
    grids = time_grids(geom, grid, sampling)
    H0 = build_operator(geom, grid, grids=grids).H
    norms = []
    for i in range(draws):
        err = gen_motion_error(grids[1].size, d, make_rng(seed, i))
        Hp = build_operator(geom, grid, err=err, grids=grids).H
        norms.append(np.sqrt(2.0) * gain * np.linalg.norm(Hp - H0))
    return float(np.mean(norms))


def calibrate_d(geom, grid, sampling, target_frob: float, gain: float = 1.0, draws: int = 8, seed: int = 0,
                d_hi: float = 1.0, tol: float = 1e-3) -> float:
    """Motion bound d whose mean ||E||_F matches ``target_frob`` (bisection)."""
    lo, hi = 0.0, d_hi
    while mean_mismatch_norm(geom, grid, sampling, hi, gain, draws, seed) < target_frob:
        hi *= 2
        if hi > 1e3:
            raise InvalidArgument("target mismatch norm is not reachable")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mean_mismatch_norm(geom, grid, sampling, mid, gain, draws, seed) < target_frob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit PGM of |image|, max-normalized, rows written top to bottom."""
    mag = np.abs(np.asarray(image))
    peak = mag.max()
    scaled = np.zeros(mag.shape, dtype=np.uint8) if peak == 0 else np.round(255 * mag / peak).astype(np.uint8)
    h, w = scaled.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
