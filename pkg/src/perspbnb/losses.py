"""GLM loss functions: values, gradients, Fenchel conjugates, curvature.

All functions act on the prediction vector z = X beta.  The loss interface
(value / gradient / conjugate / curvature bound) admits further GLM losses,
but only squared error and logistic are implemented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import LossKind


@dataclass(frozen=True)
class LossEval:
    """Loss value and gradient at one prediction vector."""

    value: float
    gradient: np.ndarray


class DimensionMismatch(ValueError):
    """Prediction and label vectors have different lengths."""


class ConvergenceFailure(RuntimeError):
    """Power iteration failed to reach its tolerance."""


def _check_dims(z: np.ndarray, y: np.ndarray) -> None:
    if z.shape != y.shape:
        raise DimensionMismatch(f"z has shape {z.shape}, y has shape {y.shape}")


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), computed as x + log1p(e^-x) for x > 30 to avoid overflow
    out = np.empty_like(x)
    big = x > 30.0
    out[big] = x[big] + np.log1p(np.exp(-x[big]))
    out[~big] = np.log1p(np.exp(x[~big]))
    return out


def loss_value(loss: LossKind, z: np.ndarray, y: np.ndarray) -> float:
    """F(z) = f(z, y): 0.5*||z-y||^2 or sum_i log(1+exp(-y_i z_i))."""
    _check_dims(z, y)
    if loss is LossKind.SQUARED_ERROR:
        r = z - y
        return 0.5 * float(r @ r)
    return float(np.sum(_softplus(-y * z)))


def loss_gradient(loss: LossKind, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of loss_value with respect to z."""
    _check_dims(z, y)
    if loss is LossKind.SQUARED_ERROR:
        return z - y
    # -y_i / (1 + exp(y_i z_i)), via the overflow-safe sigmoid of -y_i z_i
    t = -y * z
    s = np.empty_like(t)
    pos = t >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    s[~pos] = et / (1.0 + et)
    return -y * s


def loss_eval(loss: LossKind, z: np.ndarray, y: np.ndarray) -> LossEval:
    """Value and gradient in one call (both finite for finite z)."""
    return LossEval(value=loss_value(loss, z, y), gradient=loss_gradient(loss, z, y))


def loss_conjugate(loss: LossKind, u: np.ndarray, y: np.ndarray) -> float:
    """Fenchel conjugate F*(u); +inf outside the conjugate domain.

    Squared error: F*(u) = 0.5*||u||^2 + u'y (finite everywhere).
    Logistic: F*(u) = sum_i l*(y_i u_i) with
    l*(s) = (-s)log(-s) + (1+s)log(1+s) on s in [-1, 0] (0 log 0 := 0),
    and +inf as soon as any y_i u_i leaves [-1, 0].
    """
    _check_dims(u, y)
    if loss is LossKind.SQUARED_ERROR:
        return 0.5 * float(u @ u) + float(u @ y)
    s = y * u
    if np.any(s > 0.0) or np.any(s < -1.0):
        return float("inf")
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(s < 0.0, (-s) * np.log(-s), 0.0)
        t2 = np.where(s > -1.0, (1.0 + s) * np.log1p(s), 0.0)
    return float(np.sum(t1 + t2))


def curvature_upper(loss: LossKind) -> float:
    """Per-sample upper bound on the loss Hessian's largest eigenvalue."""
    return 1.0 if loss is LossKind.SQUARED_ERROR else 0.25


def spectral_norm_sq(X: np.ndarray, *, rel_tol: float = 1e-6,
                     max_iters: int = 10_000) -> float:
    """||X||_2^2 by power iteration on X'X with an all-ones start vector.

    Deterministic; raises ConvergenceFailure if the Rayleigh quotient has
    not stabilized to rel_tol within max_iters iterations.
    """
    X = np.asarray(X, dtype=float)
    if not np.any(X != 0.0):
        raise ValueError("X must be nonzero")
    p = X.shape[1]
    v = np.full(p, 1.0 / np.sqrt(p))
    lam_prev = 0.0
    for _ in range(max_iters):
        w = X.T @ (X @ v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart from a basis vector
            v = np.zeros(p)
            v[0] = 1.0
            lam_prev = 0.0
            continue
        v = w / nw
        if lam > 0.0 and abs(lam - lam_prev) <= rel_tol * lam:
            return lam
        lam_prev = lam
    raise ConvergenceFailure(f"power iteration did not converge in {max_iters} iterations")


def lipschitz_constant(loss: LossKind, X: np.ndarray) -> float:
    """Global smoothness constant of beta -> F(X beta)."""
    return curvature_upper(loss) * spectral_norm_sq(X)
