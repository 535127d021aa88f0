"""
L2-regularized logistic regression fitted by gradient descent with
backtracking line search on standardized features.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pydantic
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from ..core.errors import ConstantFeature, DidNotConverge, IoError, NonBinaryLabels
from ..utils.config import CombinerConfig

logger = structlog.get_logger(__name__)

ARMIJO_C = 1e-4
MAX_STEP = 1e6
MIN_STEP = 1e-20


class LinearModel(BaseModel):
    """Logistic model over standardized features; scores are log-odds."""

    model_config = ConfigDict(extra="forbid")

    feature_names: List[str]
    weights: List[float]
    bias: float
    mean: List[float]
    scale: List[float]
    lam: float
    tol: float
    max_iter: int
    seed: Optional[int] = None
    iterations: int = 0
    converged: bool = True
    grad_norm: float = 0.0
    loss_history: List[float] = Field(default_factory=list, exclude=True)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - np.asarray(self.mean)) / np.asarray(self.scale)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.standardize(X) @ np.asarray(self.weights) + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(X))

    def raw_coefficients(self):
        """Weights and bias expressed on the unstandardized features."""
        weights = np.asarray(self.weights) / np.asarray(self.scale)
        bias = self.bias - float(np.dot(weights, self.mean))
        return weights, bias


def _loss(Z: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float) -> float:
    z = Z @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * np.dot(w, w))


def _gradient(Z: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, lam: float):
    residual = expit(Z @ w + b) - y
    return Z.T @ residual / len(y) + lam * w, float(residual.mean())


def fit_logreg(
    X: np.ndarray,
    y: Sequence[float],
    lam: float = 1.0,
    tol: float = 1e-8,
    max_iter: int = 1000,
    feature_names: Optional[Sequence[str]] = None,
    strict: bool = False,
    seed: Optional[int] = None,
) -> LinearModel:
    """Minimize mean logistic loss + lam/2 * |w|^2 (bias unpenalized) on X standardized by its own stats."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(y) == 0 or not np.isin(y, (0.0, 1.0)).all():
        raise NonBinaryLabels(f"labels must be 0/1, got {sorted(set(y.tolist()))[:5]}")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    for j, sd in enumerate(scale):
        if sd == 0:
            raise ConstantFeature(names[j])
    Z = (X - mean) / scale

    w = np.zeros(X.shape[1])
    b = 0.0
    loss = _loss(Z, y, w, b, lam)
    history = [loss]
    step = 1.0
    converged = False
    grad_norm = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gw, gb = _gradient(Z, y, w, b, lam)
        grad_norm = max(float(np.abs(gw).max(initial=0.0)), abs(gb))
        if grad_norm <= tol:
            converged = True
            iterations -= 1
            break
        sq = float(np.dot(gw, gw) + gb * gb)
        while step >= MIN_STEP:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss = _loss(Z, y, w_new, b_new, lam)
            if new_loss <= loss - ARMIJO_C * step * sq:
                break
            step *= 0.5
        else:
            break
        w, b, loss = w_new, b_new, new_loss
        history.append(loss)
        step = min(step * 2.0, MAX_STEP)

    if not converged:
        gw, gb = _gradient(Z, y, w, b, lam)
        grad_norm = max(float(np.abs(gw).max(initial=0.0)), abs(gb))
        converged = grad_norm <= tol
    if not converged:
        if strict:
            raise DidNotConverge(grad_norm, iterations)
        logger.warning("logreg_not_converged", grad_norm=grad_norm, iterations=iterations)
    return LinearModel(
        feature_names=names,
        weights=w.tolist(),
        bias=float(b),
        mean=mean.tolist(),
        scale=scale.tolist(),
        lam=lam,
        tol=tol,
        max_iter=max_iter,
        seed=seed,
        iterations=iterations,
        converged=converged,
        grad_norm=float(grad_norm),
        loss_history=history,
    )


def fit_with_config(
    X: np.ndarray,
    y: Sequence[float],
    config: CombinerConfig,
    feature_names: Optional[Sequence[str]] = None,
    seed: Optional[int] = None,
) -> LinearModel:
    return fit_logreg(X, y, config.lam, config.tol, config.max_iter, feature_names, seed=seed)


def save_model(model: LinearModel, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")


def load_model_file(path: Union[str, Path]) -> LinearModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(str(path), exc.strerror or str(exc)) from exc
    try:
        return LinearModel.model_validate_json(text)
    except pydantic.ValidationError as exc:
        raise IoError(str(path), f"invalid model document: {exc.errors()[0]['msg']}") from exc
