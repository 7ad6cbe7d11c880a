"""Semi-supervised page classification.

A Gaussian similarity graph links labeled and unlabeled pages. Labels can
be spread transductively (label_propagate) or, preferably, used to train a
logistic classifier whose loss adds a similarity-weighted smoothness
penalty over all page pairs. The logistic route keeps a parametric model:
prediction needs only the learned weights, never the training pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateTrainingError,
    InsufficientLabelsError,
    ParameterError,
)
from .ingest import CLASSES

DEFAULT_SIGMA = 300.0
DEFAULT_LAMBDA = 0.1
LLP_MAX_ITER = 2000
LLP_GRAD_TOL = 1e-5
LP_ALPHA = 0.99
LP_TOL = 1e-6
LP_MAX_ITER = 1000
MODEL_FORMAT_VERSION = 1


def similarity(xi: np.ndarray, xj: np.ndarray, sigma: float) -> float:
    """Gaussian similarity exp(-||xi - xj||^2 / sigma^2)."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    a = np.asarray(xi, dtype=np.float64)
    b = np.asarray(xj, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"vector shapes differ: {a.shape} vs {b.shape}")
    d2 = float(np.sum((a - b) ** 2))
    return float(np.exp(-d2 / (sigma * sigma)))


def similarity_matrix(x: np.ndarray, sigma: float, block: int = 256) -> np.ndarray:
    """Pairwise Gaussian similarities; exactly symmetric with unit diagonal."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = arr.shape[0]
    out = np.empty((n, n))
    # Blockwise elementwise differences keep d2[i,j] bit-identical to d2[j,i].
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = arr[start:stop, None, :] - arr[None, :, :]
        d2 = np.sum(diff * diff, axis=-1)
        out[start:stop] = np.exp(-d2 / (sigma * sigma))
    np.fill_diagonal(out, 1.0)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def label_propagate(
    s: np.ndarray,
    labels: np.ndarray,
    alpha: float = LP_ALPHA,
    n_classes: int = len(CLASSES),
    tol: float = LP_TOL,
    max_iter: int = LP_MAX_ITER,
) -> np.ndarray:
    """Spread labels over the similarity graph; labels use -1 for unlabeled.

    Iterates F <- alpha * S_rownorm @ F + (1 - alpha) * Y with labeled rows
    clamped to their one-hot labels, until the largest per-entry change
    falls below tol. Returns the row-normalized posterior for every node
    (labeled rows come back exactly one-hot).
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
    labels = np.asarray(labels, dtype=int)
    labeled = labels >= 0
    if not labeled.any():
        raise InsufficientLabelsError("label propagation needs at least one labeled node")
    s = np.asarray(s, dtype=np.float64)
    s_norm = s / s.sum(axis=1, keepdims=True)
    n = s.shape[0]
    y = np.zeros((n, n_classes))
    y[labeled, labels[labeled]] = 1.0
    f = y.copy()
    for _ in range(max_iter):
        f_new = alpha * (s_norm @ f) + (1.0 - alpha) * y
        f_new[labeled] = y[labeled]
        delta = float(np.max(np.abs(f_new - f)))
        f = f_new
        if delta < tol:
            break
    row_sum = f.sum(axis=1, keepdims=True)
    row_sum[row_sum == 0.0] = 1.0
    out = f / row_sum
    out[labeled] = y[labeled]
    return out


@dataclass
class LlpModel:
    """Trained weights plus the hyperparameters used to fit them."""

    weights: np.ndarray  # (n_classes, n_features + 1); last column is the bias
    sigma: float
    lambda_weight: float
    classes: tuple[str, ...] = CLASSES
    n_iter: int = 0
    final_loss: float = 0.0
    converged: bool = False
    codebook_hash: str | None = None
    metadata: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "weights": self.weights.tolist(),
            "sigma": self.sigma,
            "lambda": self.lambda_weight,
            "classes": list(self.classes),
            "codebook_hash": self.codebook_hash,
            "training": {
                "n_iter": self.n_iter,
                "final_loss": self.final_loss,
                "converged": self.converged,
                **self.metadata,
            },
        }
        Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LlpModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        training = doc.get("training", {})
        return cls(
            weights=np.array(doc["weights"], dtype=np.float64),
            sigma=float(doc["sigma"]),
            lambda_weight=float(doc["lambda"]),
            classes=tuple(doc["classes"]),
            n_iter=int(training.get("n_iter", 0)),
            final_loss=float(training.get("final_loss", 0.0)),
            converged=bool(training.get("converged", False)),
            codebook_hash=doc.get("codebook_hash"),
        )


def _with_bias(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.hstack([x, np.ones((x.shape[0], 1))])


class _LlpProblem:
    """Precomputed pieces of the semi-supervised logistic objective.

    J(W) = sum of labeled cross-entropies
         + lam_eff * sum over pairs i<j of S_ij * ||p_i - p_j||^2
    """

    def __init__(self, xb, y_onehot, n_labeled, s, lam_eff):
        self.xb = xb
        self.y = y_onehot
        self.nl = n_labeled
        self.s = s
        self.lam = lam_eff
        self.d = s.sum(axis=1) if lam_eff > 0.0 else None

    def loss(self, w: np.ndarray) -> tuple[float, np.ndarray, np.ndarray | None]:
        """Returns (J, posteriors, smoothness residual) for gradient reuse."""
        p = _softmax(self.xb @ w.T)
        eps = 1e-300  # guards log(0) for confident wrong predictions
        value = -float(np.sum(np.log(np.sum(p[: self.nl] * self.y, axis=1) + eps)))
        r = None
        if self.lam > 0.0:
            r = self.d[:, None] * p - self.s @ p
            value += self.lam * float(np.sum(p * r))  # = sum_{i<j} S_ij ||p_i - p_j||^2
        return value, p, r

    def gradient(self, p: np.ndarray, r: np.ndarray | None) -> np.ndarray:
        g_z = np.zeros_like(p)
        g_z[: self.nl] = p[: self.nl] - self.y
        if self.lam > 0.0:
            g_p = 2.0 * self.lam * r
            g_z += p * g_p - p * np.sum(p * g_p, axis=1, keepdims=True)
        return g_z.T @ self.xb


def llp_objective_and_gradient(
    w: np.ndarray,
    xb: np.ndarray,
    y_onehot: np.ndarray,
    n_labeled: int,
    s: np.ndarray,
    lam_eff: float,
) -> tuple[float, np.ndarray]:
    """Loss and analytic gradient for the semi-supervised logistic objective."""
    problem = _LlpProblem(xb, y_onehot, n_labeled, s, lam_eff)
    value, p, r = problem.loss(w)
    return value, problem.gradient(p, r)


def train_llp(
    labeled_x: np.ndarray,
    labeled_y: np.ndarray,
    unlabeled_x: np.ndarray | None = None,
    sigma: float = DEFAULT_SIGMA,
    lambda_weight: float = DEFAULT_LAMBDA,
    *,
    classes: tuple[str, ...] = CLASSES,
    normalize_pairs: bool = True,
    max_iter: int = LLP_MAX_ITER,
    grad_tol: float = LLP_GRAD_TOL,
    similarity_precomputed: np.ndarray | None = None,
    init_weights: np.ndarray | None = None,
) -> LlpModel:
    """Fit the semi-supervised logistic classifier by full-batch descent.

    Weights start at zero (unless warm-started via init_weights) and follow
    the negative gradient with Armijo backtracking, so the objective never
    increases. The pairwise smoothness term spans labeled and unlabeled
    rows; with lambda_weight = 0 this is plain softmax logistic regression.
    With normalize_pairs the pair sum is divided by the number of pairs, so
    lambda_weight stays comparable across pool sizes.
    """
    if lambda_weight < 0:
        raise ParameterError(f"lambda_weight must be >= 0, got {lambda_weight}")
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    lx = np.atleast_2d(np.asarray(labeled_x, dtype=np.float64))
    ly = np.asarray(labeled_y, dtype=int)
    n_classes = len(classes)
    present = set(ly.tolist())
    missing = [classes[c] for c in range(n_classes) if c not in present]
    if missing:
        raise DegenerateTrainingError(f"no labeled examples for class(es): {', '.join(missing)}")
    ux = (
        np.atleast_2d(np.asarray(unlabeled_x, dtype=np.float64))
        if unlabeled_x is not None and np.size(unlabeled_x) > 0
        else np.empty((0, lx.shape[1]))
    )
    x = np.vstack([lx, ux])
    n, nl = x.shape[0], lx.shape[0]
    y_onehot = np.zeros((nl, n_classes))
    y_onehot[np.arange(nl), ly] = 1.0

    lam_eff = 0.0
    s = np.empty((0, 0))
    if lambda_weight > 0.0 and n > 1:
        s = (
            similarity_precomputed
            if similarity_precomputed is not None
            else similarity_matrix(x, sigma)
        )
        n_pairs = n * (n - 1) // 2
        lam_eff = lambda_weight / n_pairs if normalize_pairs else lambda_weight

    # Descend in internally standardized coordinates: J(W) is unchanged (the
    # reparametrization is exactly invertible), but the conditioning is far
    # better on near-constant histogram features, so backtracking GD reaches
    # the gradient tolerance in far fewer iterations. Weights are mapped back
    # to raw-feature coordinates before returning.
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0.0] = 1.0
    xb = np.hstack([(x - mu) / sd, np.ones((n, 1))])
    if init_weights is None:
        w = np.zeros((n_classes, xb.shape[1]))
    else:
        raw = np.asarray(init_weights, dtype=np.float64)
        w = np.empty_like(raw)
        w[:, :-1] = raw[:, :-1] * sd
        w[:, -1] = raw[:, -1] + raw[:, :-1] @ mu
    problem = _LlpProblem(xb, y_onehot, nl, s, lam_eff)
    loss, p, r = problem.loss(w)
    grad = problem.gradient(p, r)
    step = 1.0
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        gnorm2 = float(np.sum(grad * grad))
        if np.sqrt(gnorm2) <= grad_tol:
            converged = True
            n_iter -= 1
            break
        step = min(1.0, step * 2.0)
        accepted = False
        for _ in range(60):
            w_try = w - step * grad
            loss_try, p_try, r_try = problem.loss(w_try)
            if loss_try <= loss - 1e-4 * step * gnorm2:
                w, loss = w_try, loss_try
                grad = problem.gradient(p_try, r_try)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # no descent step representable; treat as a stall

    weights = np.empty_like(w)
    weights[:, :-1] = w[:, :-1] / sd
    weights[:, -1] = w[:, -1] - w[:, :-1] @ (mu / sd)
    return LlpModel(
        weights=weights,
        sigma=sigma,
        lambda_weight=lambda_weight,
        classes=classes,
        n_iter=n_iter,
        final_loss=loss,
        converged=converged,
    )


def predict(model: LlpModel, x: np.ndarray) -> np.ndarray:
    """Class posterior for one feature vector, from the weights alone."""
    return predict_many(model, np.atleast_2d(x))[0]


def predict_many(model: LlpModel, x: np.ndarray) -> np.ndarray:
    xb = _with_bias(x)
    if xb.shape[1] != model.weights.shape[1]:
        raise ParameterError(
            f"feature dimension {xb.shape[1] - 1} does not match model "
            f"({model.weights.shape[1] - 1})"
        )
    return _softmax(xb @ model.weights.T)
