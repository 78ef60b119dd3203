"""L2-regularised logistic regression fitted by full-batch gradient descent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import DivergenceError

ARMIJO = 1e-4


@dataclass
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    l2_strength: float
    n_iter: int = 0
    converged: bool = True

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coefficients + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(np.atleast_2d(X)))

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "intercept": self.intercept,
                "l2_strength": self.l2_strength, "n_iter": self.n_iter, "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(np.asarray(d["coefficients"], dtype=float), float(d["intercept"]),
                   float(d["l2_strength"]), int(d.get("n_iter", 0)), bool(d.get("converged", True)))


def loss_and_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean negative log-likelihood plus ``l2/2 * |w|^2``; ``params = [w..., b]``.

    The intercept (last entry) is not penalised.
    """
    w, b = params[:-1], params[-1]
    z = X @ w + b
    # log(1 + e^z) - y z, computed without overflow
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w)
    r = (expit(z) - y) / len(y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def train_logistic(X, y, l2_strength: float = 1e-4, *, tol: float = 1e-6, max_iter: int = 10_000) -> LogisticModel:
    """Gradient descent with Armijo backtracking.

    Each iteration tries a Barzilai-Borwein step length first and halves it
    until the sufficient-decrease condition holds. Stops once the gradient's
    max-norm drops below ``tol`` or after ``max_iter`` iterations.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if l2_strength < 0:
        raise ValueError("l2_strength must be nonnegative")
    if not np.isfinite(X).all():
        raise DivergenceError("training rows contain non-finite values (impute before fitting)")
    params = np.zeros(X.shape[1] + 1)
    loss, grad = loss_and_grad(params, X, y, l2_strength)
    step = 1.0
    prev_params = prev_grad = None
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at iteration {it}")
        if np.max(np.abs(grad)) < tol:
            converged = True
            it -= 1
            break
        if prev_params is not None:
            s = params - prev_params
            d = grad - prev_grad
            sd = s @ d
            if sd > 0 and np.isfinite(sd):
                step = (s @ s) / sd
            else:
                step = min(step * 2.0, 1e6)
        gg = grad @ grad
        while True:
            trial = params - step * grad
            t_loss, t_grad = loss_and_grad(trial, X, y, l2_strength)
            if np.isfinite(t_loss) and t_loss <= loss - ARMIJO * step * gg:
                break
            step *= 0.5
            if step < 1e-20:
                if not np.isfinite(t_loss):
                    raise DivergenceError("line search failed to find a finite loss")
                # no representable decrease left: treat as converged to precision
                converged = True
                break
        if step < 1e-20:
            break
        prev_params, prev_grad = params, grad
        params, loss, grad = trial, t_loss, t_grad
    if not np.all(np.isfinite(params)):
        raise DivergenceError("non-finite parameters")
    return LogisticModel(params[:-1].copy(), float(params[-1]), float(l2_strength), it, converged)
