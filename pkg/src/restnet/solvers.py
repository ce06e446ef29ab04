"""Model-based solvers: soft thresholding, ISTA for the Lasso, robust ISTA.

Robust ISTA is proximal gradient descent on the l1-regularized total least
squares objective

    f(x) = ||y - A x||^2 / (1 + ||x||^2) + lam * ||x||_1

with iterates x <- S_{mu*lam}(x - mu * grad), starting from zero unless told
otherwise. Both solvers accept a single observation (1-D ``y``) or a batch
(2-D, one observation per row); batch rows stop independently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedError, InvalidArgument
from .problem import LinearModel


def soft_threshold(v, theta):
    """sign(v) * max(|v| - theta, 0), elementwise; sign(0) = 0."""
    if np.any(np.asarray(theta) < 0):
        raise InvalidArgument(f"threshold must be >= 0, got {theta}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def spectral_norm(A: np.ndarray, tol: float = 1e-10, max_iters: int = 1000) -> float:
    """Largest singular value of ``A`` by power iteration on A^T A."""
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    est = 0.0
    for _ in range(max_iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(nw - est) <= tol * nw:
            est = nw
            break
        est = nw
    return float(np.sqrt(est))


def _operator(model) -> np.ndarray:
    return model.A if isinstance(model, LinearModel) else np.asarray(model)


def tls_objective(x, y, model, lam: float) -> float:
    A = _operator(model)
    r = y - A @ x
    return float(r @ r / (1.0 + x @ x) + lam * np.abs(x).sum())


def tls_gradient(x, y, model) -> np.ndarray:
    """Gradient of ||y - A x||^2 / (1 + ||x||^2)."""
    A = _operator(model)
    r = A @ x - y
    d = 1.0 + x @ x
    return 2.0 * (d * (A.T @ r) - (r @ r) * x) / d**2


def lasso_objective(x, y, model, lam: float) -> float:
    A = _operator(model)
    r = y - A @ x
    return float(0.5 * r @ r + lam * np.abs(x).sum())


@dataclass
class SolverConfig:
    step_mu: float | None = None  # None -> solver default from the spectral norm
    reg_lambda: float = 1e-3
    max_iters: int = 1000
    rel_tol: float = 1e-6
    store_trace: bool = True

    def __post_init__(self):
        if self.step_mu is not None and not self.step_mu > 0:
            raise InvalidArgument("step_mu must be > 0")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if self.reg_lambda < 0 or self.rel_tol < 0:
            raise InvalidArgument("reg_lambda and rel_tol must be >= 0")


@dataclass
class SolveResult:
    x_hat: np.ndarray
    iters_run: int | np.ndarray
    objective_trace: list = field(default_factory=list)
    converged: bool | np.ndarray = False


def _tls_grad_batch(X, Y, A):
    R = X @ A.T - Y
    rho = np.einsum("ij,ij->i", R, R)
    d = 1.0 + np.einsum("ij,ij->i", X, X)
    return 2.0 * (d[:, None] * (R @ A) - rho[:, None] * X) / (d**2)[:, None]


def _lasso_grad_batch(X, Y, A):
    return (X @ A.T - Y) @ A


def _tls_obj_batch(X, Y, A, lam):
    R = Y - X @ A.T
    return np.einsum("ij,ij->i", R, R) / (1.0 + np.einsum("ij,ij->i", X, X)) + lam * np.abs(X).sum(axis=1)


def _lasso_obj_batch(X, Y, A, lam):
    R = Y - X @ A.T
    return 0.5 * np.einsum("ij,ij->i", R, R) + lam * np.abs(X).sum(axis=1)


def _prox_grad(y, A, cfg: SolverConfig, x0, mu, grad, objective):
    single = np.ndim(y) == 1
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    B, N = Y.shape[0], A.shape[1]
    X = np.zeros((B, N)) if x0 is None else np.array(np.broadcast_to(x0, (B, N)), dtype=float)
    theta = mu * cfg.reg_lambda
    active = np.ones(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    trace = [objective(X, Y, A, cfg.reg_lambda)] if cfg.store_trace else []
    for it in range(1, cfg.max_iters + 1):
        Xa = X[active]
        Xn = soft_threshold(Xa - mu * grad(Xa, Y[active], A), theta)
        if not np.all(np.isfinite(Xn)):
            raise DivergedError(f"non-finite iterate at iteration {it}", iteration=it)
        change = np.linalg.norm(Xn - Xa, axis=1) / np.maximum(1.0, np.linalg.norm(Xa, axis=1))
        X[active] = Xn
        iters[active] = it
        if cfg.store_trace:
            trace.append(objective(X, Y, A, cfg.reg_lambda))
        idx = np.flatnonzero(active)
        active[idx[change < cfg.rel_tol]] = False
        if not active.any():
            break
    converged = ~active
    if single:
        return SolveResult(X[0], int(iters[0]), [float(t[0]) for t in trace], bool(converged[0]))
    return SolveResult(X, iters, [t.copy() for t in trace], converged)


def robust_ista(y, model, cfg: SolverConfig | None = None, x0=None) -> SolveResult:
    """Proximal gradient on the l1-regularized total least squares objective.

    Default step is 1 / (2 sigma_max(A)^2). The trace holds the objective at
    every iterate including ``x0``.
    """
    cfg = cfg or SolverConfig()
    A = _operator(model)
    mu = cfg.step_mu if cfg.step_mu is not None else 1.0 / (2.0 * spectral_norm(A) ** 2)
    return _prox_grad(y, A, cfg, x0, mu, _tls_grad_batch, _tls_obj_batch)


def ista(y, model, cfg: SolverConfig | None = None, x0=None) -> SolveResult:
    """Classical ISTA on 0.5 * ||y - A x||^2 + lam * ||x||_1 (default step 1 / sigma_max(A)^2)."""
    cfg = cfg or SolverConfig()
    A = _operator(model)
    mu = cfg.step_mu if cfg.step_mu is not None else 1.0 / spectral_norm(A) ** 2
    return _prox_grad(y, A, cfg, x0, mu, _lasso_grad_batch, _lasso_obj_batch)


SOLVERS = {"ista": ista, "rista": robust_ista}
