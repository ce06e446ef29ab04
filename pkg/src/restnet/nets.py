"""Unrolled networks: LISTA, the four REST unfoldings and the two ablations.

Every layer maps (x, y) to S_theta(pre(x, y)). The REST-family layers share
one template

    pre = x + c(x) x - (2 mu / D) G x + (2 mu / D) H y,     D = 1 + ||x||^2

and differ in how the residual coefficient ``c`` is formed and whether the
normalization ``D`` is applied:

=============  ===============================  =========
variant        c(x)                             normalize
=============  ===============================  =========
RestOpt2       2 mu1 / D^2                      yes
RestOpt3       2 mu ||y - A1 x||^2 / D^2        yes
RestOpt4       2 mu (y'y - 2 y'A1 x + x'A2 x)/D^2  yes
AblationNI     0                                yes
AblationNII    2 mu ||y - A1 x||^2              no (D = 1)
=============  ===============================  =========

LISTA and RestOpt1 are plain affine layers, pre = W1 x + W2 y.

Batches are row-major: ``X`` is (B, N), ``Y`` is (B, M). The backward pass
for each layer lives next to its forward so the cached intermediates stay in
one place.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, DivergedError, InvalidArgument, UnsupportedVersion
from .problem import LinearModel


class ArchVariant(str, enum.Enum):
    Lista = "Lista"
    RestOpt1 = "RestOpt1"
    RestOpt2 = "RestOpt2"
    RestOpt3 = "RestOpt3"
    RestOpt4 = "RestOpt4"
    AblationNI = "AblationNI"
    AblationNII = "AblationNII"


class Sharing(str, enum.Enum):
    Shared = "Shared"
    Unshared = "Unshared"


A = ArchVariant

# (scalar fields, matrix fields with shape codes); this is also the checkpoint order
FIELDS = {
    A.Lista: (("theta",), (("W1", "NN"), ("W2", "NM"))),
    A.RestOpt1: (("theta",), (("A1", "NN"), ("A2", "NM"))),
    A.RestOpt2: (("mu1", "mu", "theta"), (("A1", "NN"), ("A2", "NM"))),
    A.RestOpt3: (("lambda", "mu"), (("A1", "MN"), ("A2", "NN"), ("A3", "NM"))),
    A.RestOpt4: (("lambda", "mu"), (("A1", "MN"), ("A2", "NN"), ("A3", "NM"))),
    A.AblationNI: (("lambda", "mu"), (("A2", "NN"), ("A3", "NM"))),
    A.AblationNII: (("lambda", "mu"), (("A1", "MN"), ("A2", "NN"), ("A3", "NM"))),
}

# fields carried by a block but excluded from training and from learnable_count
FROZEN = {A.RestOpt2: ("mu",)}

# scalars projected onto [0, inf) after every optimizer step
NONNEGATIVE = ("theta", "lambda", "mu", "mu1")

_LINEAR = {A.Lista: ("W1", "W2"), A.RestOpt1: ("A1", "A2")}

# residual mode, normalize, gram matrix field, adjoint matrix field
_REST = {
    A.RestOpt2: ("const", True, "A1", "A2"),
    A.RestOpt3: ("residual", True, "A2", "A3"),
    A.RestOpt4: ("expanded", True, "A2", "A3"),
    A.AblationNI: ("none", True, "A2", "A3"),
    A.AblationNII: ("residual", False, "A2", "A3"),
}


def field_shape(code: str, M: int, N: int) -> tuple[int, int]:
    return {"NN": (N, N), "NM": (N, M), "MN": (M, N)}[code]


def block_count(arch: ArchVariant, M: int, N: int) -> int:
    """Learnable scalars in one parameter block."""
    scalars, mats = FIELDS[arch]
    frozen = FROZEN.get(arch, ())
    n = sum(1 for s in scalars if s not in frozen)
    for name, code in mats:
        if name not in frozen:
            r, c = field_shape(code, M, N)
            n += r * c
    return n


@dataclass
class Network:
    arch: ArchVariant
    depth_K: int
    sharing: Sharing
    dims: tuple[int, int]
    blocks: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.arch = ArchVariant(self.arch)
        self.sharing = Sharing(self.sharing)
        if self.depth_K < 0:
            raise InvalidArgument("depth must be >= 0")

    @property
    def params(self):
        return self.blocks[0] if self.sharing is Sharing.Shared else self.blocks

    def layer_params(self, k: int) -> dict:
        return self.blocks[0] if self.sharing is Sharing.Shared else self.blocks[k]

    def copy(self) -> "Network":
        blocks = [{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in b.items()} for b in self.blocks]
        return Network(self.arch, self.depth_K, self.sharing, self.dims, blocks)

    @property
    def label(self) -> str:
        return f"{self.arch.value}{self.depth_K}"


def init_nominal(arch, K: int, sharing, model, mu0: float, lambda0: float) -> Network:
    """Parameters read off the nominal operator so layer k reproduces solver iteration k.

    M x N slots get A, N x N slots A^T A, N x M slots A^T; LISTA-style affine
    layers get W1 = I - 2 mu0 A^T A, W2 = 2 mu0 A^T. RestOpt2's constant
    residual weight mu1 starts at zero.
    """
    arch, sharing = ArchVariant(arch), Sharing(sharing)
    if not mu0 > 0:
        raise InvalidArgument("mu0 must be > 0")
    if lambda0 < 0:
        raise InvalidArgument("lambda0 must be >= 0")
    Amat = model.A if isinstance(model, LinearModel) else np.asarray(model, dtype=float)
    M, N = Amat.shape
    gram = Amat.T @ Amat
    if arch in _LINEAR:
        w1, w2 = _LINEAR[arch]
        block = {"theta": mu0 * lambda0, w1: np.eye(N) - 2 * mu0 * gram, w2: 2 * mu0 * Amat.T.copy()}
    elif arch is A.RestOpt2:
        block = {"mu1": 0.0, "mu": mu0, "theta": mu0 * lambda0, "A1": gram, "A2": Amat.T.copy()}
    else:
        block = {"lambda": lambda0, "mu": mu0, "A2": gram, "A3": Amat.T.copy()}
        if arch is not A.AblationNI:
            block["A1"] = Amat.copy()
    n_blocks = 1 if sharing is Sharing.Shared else K
    blocks = [_copy_block(block) for _ in range(n_blocks)]
    return Network(arch, K, sharing, (M, N), blocks)


def _copy_block(b: dict) -> dict:
    return {k: (v.copy() if isinstance(v, np.ndarray) else float(v)) for k, v in b.items()}


def learnable_count(net: Network) -> int:
    per_block = block_count(net.arch, *net.dims)
    return per_block if net.sharing is Sharing.Shared else per_block * net.depth_K


def threshold_of(arch: ArchVariant, p: dict) -> float:
    return p["theta"] if "theta" in p else p["mu"] * p["lambda"]


def _shrink(pre, theta):
    return np.sign(pre) * np.maximum(np.abs(pre) - theta, 0.0)


def _rowdot(a, b):
    return np.einsum("ij,ij->i", a, b)


@dataclass
class LayerTape:
    x_in: np.ndarray
    y: np.ndarray
    pre: np.ndarray
    theta: float
    cache: dict = field(default_factory=dict)


def layer_forward(arch, params: dict, x_in, y):
    """One unrolled iteration. Returns (x_out, tape); accepts vectors or row batches."""
    arch = ArchVariant(arch)
    single = np.ndim(x_in) == 1
    X = np.atleast_2d(np.asarray(x_in, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    if X.shape[0] != Y.shape[0]:
        raise InvalidArgument("x and y batch sizes differ")
    theta = threshold_of(arch, params)
    cache = {}
    if arch in _LINEAR:
        w1, w2 = _LINEAR[arch]
        pre = X @ params[w1].T + Y @ params[w2].T
    else:
        mode, normalize, gname, aname = _REST[arch]
        mu = params["mu"]
        D = 1.0 + _rowdot(X, X) if normalize else np.ones(X.shape[0])
        P = X @ params[gname].T
        Q = Y @ params[aname].T
        if mode == "residual":
            R = Y - X @ params["A1"].T
            rho = _rowdot(R, R)
            cache["R"] = R
        elif mode == "expanded":
            YA1 = Y @ params["A1"]
            rho = _rowdot(Y, Y) - 2.0 * _rowdot(YA1, X) + _rowdot(X, P)
            cache["YA1"] = YA1
        else:
            rho = np.zeros(X.shape[0])
        if mode == "const":
            c1 = 2.0 * params["mu1"] / D**2
        else:
            c1 = 2.0 * mu * rho / D**2
        coef = 2.0 * mu / D
        pre = X * (1.0 + c1)[:, None] + coef[:, None] * (Q - P)
        cache.update(D=D, P=P, Q=Q, rho=rho, c1=c1, coef=coef)
    out = _shrink(pre, theta)
    if not np.all(np.isfinite(out)):
        raise DivergedError(f"non-finite output in {arch.value} layer")
    tape = LayerTape(X, Y, pre, theta, cache)
    return (out[0] if single else out), tape


def layer_backward(arch, params: dict, tape: LayerTape, grad_x_out):
    """Reverse-mode step through one layer.

    Returns (grad_x_in, grad_params). The shrinkage derivative is 1 where
    |pre| > theta and 0 elsewhere, including the kink itself.
    """
    arch = ArchVariant(arch)
    single = np.ndim(grad_x_out) == 1
    G = np.atleast_2d(np.asarray(grad_x_out, dtype=float))
    X, Y, pre = tape.x_in, tape.y, tape.pre
    if G.shape != pre.shape:
        raise InvalidArgument(f"gradient shape {G.shape} does not match tape {pre.shape}")
    scalars, mats = FIELDS[arch]
    for name, _ in mats:
        if name not in params:
            raise InvalidArgument(f"parameter block lacks {name} for {arch.value}")
    Gp = G * (np.abs(pre) > tape.theta)
    d_theta = -float(np.sum(np.sign(pre) * Gp))
    grads = {}

    if arch in _LINEAR:
        w1, w2 = _LINEAR[arch]
        grads[w1] = Gp.T @ X
        grads[w2] = Gp.T @ Y
        grads["theta"] = d_theta
        dX = Gp @ params[w1]
        return (dX[0] if single else dX), grads

    mode, normalize, gname, aname = _REST[arch]
    c = tape.cache
    D, P, Q, rho, c1, coef = c["D"], c["P"], c["Q"], c["rho"], c["c1"], c["coef"]
    mu = params["mu"]
    Ag, Aa = params[gname], params[aname]

    dX = Gp * (1.0 + c1)[:, None]
    s1 = _rowdot(Gp, X)  # d loss / d c1
    dP = -coef[:, None] * Gp
    dQ = coef[:, None] * Gp
    grads[gname] = dP.T @ X
    grads[aname] = dQ.T @ Y
    dX += dP @ Ag
    dcoef = _rowdot(Gp, Q - P)
    d_mu = float(np.sum(dcoef * 2.0 / D))
    dD = -dcoef * 2.0 * mu / D**2

    if mode == "const":
        grads["mu1"] = float(np.sum(s1 * 2.0 / D**2))
        dD += -s1 * 4.0 * params["mu1"] / D**3
    elif mode in ("residual", "expanded"):
        d_mu += float(np.sum(s1 * 2.0 * rho / D**2))
        drho = s1 * 2.0 * mu / D**2
        dD += -s1 * 4.0 * mu * rho / D**3
        if mode == "residual":
            dR = 2.0 * drho[:, None] * c["R"]
            grads["A1"] = -dR.T @ X
            dX -= dR @ params["A1"]
        else:
            du = -2.0 * drho
            grads["A1"] = (du[:, None] * Y).T @ X
            dX += du[:, None] * c["YA1"]
            grads[gname] = grads[gname] + (drho[:, None] * X).T @ X
            dX += drho[:, None] * (P + X @ Ag)
    if normalize:
        dX += 2.0 * dD[:, None] * X

    if "theta" in params:
        grads["theta"] = d_theta
    else:
        d_mu += params["lambda"] * d_theta
        grads["lambda"] = params["mu"] * d_theta
    grads["mu"] = d_mu
    return (dX[0] if single else dX), grads


def forward(net: Network, y, x0=None, keep_tapes: bool = True):
    """Chain the K layers from ``x0`` (zeros by default). Returns (x_hat, tapes)."""
    single = np.ndim(y) == 1
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    M, N = net.dims
    if Y.shape[1] != M:
        raise InvalidArgument(f"observation length {Y.shape[1]} != M={M}")
    if x0 is None:
        X = np.zeros((Y.shape[0], N))
    else:
        X = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (Y.shape[0], N)))
    tapes = []
    for k in range(net.depth_K):
        try:
            X, tape = layer_forward(net.arch, net.layer_params(k), X, Y)
        except DivergedError as exc:
            raise DivergedError(f"layer {k}: {exc}", layer=k) from exc
        if keep_tapes:
            tapes.append(tape)
    return (X[0] if single else X), tapes


def predict(net: Network, Y) -> np.ndarray:
    return forward(net, Y, keep_tapes=False)[0]


# ---------------------------------------------------------------------------
# flat parameter views and checkpoints

def block_fields(arch: ArchVariant) -> list[str]:
    scalars, mats = FIELDS[ArchVariant(arch)]
    return list(scalars) + [m for m, _ in mats]


def flatten(net: Network) -> np.ndarray:
    """Canonical parameter vector: per block scalars first, then matrices row-major."""
    parts = []
    scalars, mats = FIELDS[net.arch]
    for b in net.blocks:
        parts.append(np.array([b[s] for s in scalars], dtype=float))
        parts.extend(np.asarray(b[m], dtype=float).ravel() for m, _ in mats)
    return np.concatenate(parts) if parts else np.zeros(0)


def unflatten(net: Network, vec: np.ndarray) -> Network:
    out = net.copy()
    M, N = net.dims
    scalars, mats = FIELDS[net.arch]
    per_block = len(scalars) + sum(np.prod(field_shape(code, M, N)) for _, code in mats)
    if vec.size != per_block * len(out.blocks):
        raise DimensionMismatch(f"parameter vector has {vec.size} entries, network needs {per_block * len(out.blocks)}")
    pos = 0
    for b in out.blocks:
        for s in scalars:
            b[s] = float(vec[pos])
            pos += 1
        for m, code in mats:
            shape = field_shape(code, M, N)
            size = shape[0] * shape[1]
            b[m] = np.array(vec[pos:pos + size]).reshape(shape)
            pos += size
    return out


CHECKPOINT_VERSION = 1


def save_network(net: Network, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    M, N = net.dims
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "arch": net.arch.value,
        "M": M,
        "N": N,
        "K": net.depth_K,
        "sharing": net.sharing.value,
        "blocks": len(net.blocks),
        "field_order": block_fields(net.arch),
    }
    (path / "net.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    (path / "params.f64").write_bytes(flatten(net).astype("<f8").tobytes())


def load_network(path) -> Network:
    path = Path(path)
    man = json.loads((path / "net.json").read_text(encoding="utf-8"))
    if man.get("format_version") != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint format_version {man.get('format_version')!r} is not supported")
    arch = ArchVariant(man["arch"])
    M, N = int(man["M"]), int(man["N"])
    skeleton = Network(arch, int(man["K"]), man["sharing"], (M, N), [{} for _ in range(int(man["blocks"]))])
    vec = np.frombuffer((path / "params.f64").read_bytes(), dtype="<f8").astype(float)
    return unflatten(skeleton, vec)
