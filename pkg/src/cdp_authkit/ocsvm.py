"""One-class support vector machine with an RBF kernel, trained in the dual.

Formulation: minimize (1/2) a' K a subject to sum(a) = 1 and
0 <= a_i <= 1/(nu*n), with k(x, y) = exp(-rbf_gamma * ||x - y||^2) over
feature vectors standardized per dimension. The decision function is
f(x) = sum_j a_j k(s_j, x) - rho, nonnegative inside the learned support
region. rho is the average kernel expansion over unbounded support vectors
(falling back to all support vectors when every one sits at the box bound,
which is the nu = 1 regime).

The solver is a maximal-violating-pair coordinate method: each step moves
mass between the worst KKT-violating pair of coordinates with an exact
line search, so box constraints are hit exactly and the equality constraint
is preserved by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ParameterError, TrainingError
from .imageio import read_json, write_json

ALPHA_EPS = 1e-8  # below this an alpha counts as zero (not a support vector)


@dataclass(frozen=True)
class OcSvmModel:
    """Trained model: standardized support points, dual weights, offset."""

    support_points: np.ndarray  # (m, d), standardized coordinates
    alphas: np.ndarray  # (m,), each in (ALPHA_EPS, 1/(nu*n)]
    rho: float
    nu: float
    rbf_gamma: float
    n_train: int
    scaler_mean: np.ndarray  # (d,)
    scaler_std: np.ndarray  # (d,), zero-variance dims mapped to 1
    tol: float = 1e-6
    iterations: int = 0

    def __post_init__(self):
        self.support_points.setflags(write=False)
        self.alphas.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.support_points.shape[1])

    def standardize(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] != self.dim:
            raise DataError(f"expected {self.dim}-dimensional points")
        return (pts - self.scaler_mean) / self.scaler_std


def _rbf_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def train_ocsvm(
    points: np.ndarray,
    nu: float,
    rbf_gamma: float = 0.1,
    tol: float = 1e-6,
    max_iter: int = 200_000,
) -> OcSvmModel:
    """Fit the one-class SVM on raw (unstandardized) feature vectors.

    Args:
        points: (n, d) training features, finite.
        nu: in (0, 1]; nu * n >= 1 is required for dual feasibility.
        rbf_gamma: RBF kernel width in standardized space.
        tol: KKT violation threshold for convergence.
        max_iter: pair-update budget.

    Raises:
        ParameterError: invalid nu/gamma or infeasible nu * n < 1.
        DataError: non-finite or badly shaped input.
        TrainingError: budget exhausted before the tolerance was met.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DataError("points must be a nonempty (n, d) array")
    if not np.all(np.isfinite(pts)):
        raise DataError("points must be finite")
    if not 0.0 < nu <= 1.0:
        raise ParameterError("nu must lie in (0, 1]")
    if rbf_gamma <= 0:
        raise ParameterError("rbf_gamma must be positive")
    n = pts.shape[0]
    if nu * n < 1.0:
        raise ParameterError(f"infeasible: nu*n = {nu * n:.4g} < 1")

    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)  # constant dims carry no information
    z = (pts - mean) / std

    upper = 1.0 / (nu * n)
    kernel = _rbf_matrix(z, z, rbf_gamma)
    alphas = np.full(n, 1.0 / n)
    grad = kernel @ alphas  # gradient of the dual objective
    iterations = 0
    hit_tol = False
    for iterations in range(1, max_iter + 1):
        up_mask = alphas > ALPHA_EPS  # mass can leave these
        down_mask = alphas < upper - ALPHA_EPS  # mass can enter these
        if not down_mask.any():
            hit_tol = True  # nu = 1: every coordinate pinned at the bound
            break
        i = int(np.argmax(np.where(up_mask, grad, -np.inf)))
        j = int(np.argmin(np.where(down_mask, grad, np.inf)))
        violation = grad[i] - grad[j]
        if violation < tol:
            hit_tol = True
            break
        eta = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        step = violation / eta if eta > 1e-15 else np.inf
        room_i = alphas[i]
        room_j = upper - alphas[j]
        delta = min(step, room_i, room_j)
        # Hit bounds exactly so support-vector sets stay crisp.
        alphas[i] = 0.0 if delta == room_i else alphas[i] - delta
        alphas[j] = upper if delta == room_j else alphas[j] + delta
        grad += delta * (kernel[:, j] - kernel[:, i])
    if not hit_tol:
        raise TrainingError(
            f"pair solver did not reach tol={tol} within {max_iter} updates"
        )

    sv = alphas > ALPHA_EPS
    unbounded = sv & (alphas < upper - ALPHA_EPS)
    rho_set = unbounded if unbounded.any() else sv
    rho = float(grad[rho_set].mean())
    return OcSvmModel(
        support_points=z[sv].copy(),
        alphas=alphas[sv].copy(),
        rho=rho,
        nu=float(nu),
        rbf_gamma=float(rbf_gamma),
        n_train=n,
        scaler_mean=mean,
        scaler_std=std,
        tol=float(tol),
        iterations=iterations,
    )


def decision_function(model: OcSvmModel, points: np.ndarray) -> np.ndarray:
    """f(x) for each row of points; >= 0 means inside the support region."""
    z = model.standardize(points)
    k = _rbf_matrix(z, model.support_points, model.rbf_gamma)
    return k @ model.alphas - model.rho


def dual_objective(model: OcSvmModel) -> float:
    """(1/2) a' K a restricted to the stored support vectors."""
    k = _rbf_matrix(model.support_points, model.support_points, model.rbf_gamma)
    return float(0.5 * model.alphas @ k @ model.alphas)


def boundary_grid(
    model: OcSvmModel,
    x_range: tuple[float, float],
    y_range: tuple[float, float],
    resolution: int = 200,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decision values over a raw-feature lattice (2-D models only).

    Returns (values, xs, ys) with values[i, j] = f((xs[j], ys[i])), the
    matplotlib contour orientation.
    """
    if model.dim != 2:
        raise ParameterError("boundary_grid requires a 2-D feature space")
    if resolution < 2:
        raise ParameterError("resolution must be >= 2")
    xs = np.linspace(float(x_range[0]), float(x_range[1]), resolution)
    ys = np.linspace(float(y_range[0]), float(y_range[1]), resolution)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    values = decision_function(model, pts).reshape(resolution, resolution)
    return values, xs, ys


def select_nu(
    train_points: np.ndarray,
    val_points: np.ndarray,
    grid: Sequence[float] = (0.0005, 0.01, 0.03, 0.1),
    rbf_gamma: float = 0.1,
    tol: float = 1e-6,
) -> tuple[OcSvmModel, float, dict]:
    """Grid-search nu by validation miss rate on genuine points.

    Infeasible grid entries (nu * n < 1) are skipped; ties go to the
    smallest nu. Returns (model, nu, {nu: p_miss}).
    """
    n = np.atleast_2d(train_points).shape[0]
    table: dict[float, float] = {}
    best: Optional[tuple[float, float]] = None
    models: dict[float, OcSvmModel] = {}
    for nu in grid:
        if nu * n < 1.0:
            continue
        model = train_ocsvm(train_points, nu=nu, rbf_gamma=rbf_gamma, tol=tol)
        p_miss = float(np.mean(decision_function(model, val_points) < 0.0))
        table[nu] = p_miss
        models[nu] = model
        if best is None or p_miss < best[0]:
            best = (p_miss, nu)
    if best is None:
        raise ParameterError("every nu in the grid is infeasible for this n")
    nu = best[1]
    return models[nu], nu, table


def save_model(model: OcSvmModel, path: str | Path) -> None:
    write_json(
        path,
        {
            "kind": "ocsvm",
            "support_points": model.support_points.tolist(),
            "alphas": model.alphas.tolist(),
            "rho": model.rho,
            "nu": model.nu,
            "rbf_gamma": model.rbf_gamma,
            "n_train": model.n_train,
            "scaler_mean": model.scaler_mean.tolist(),
            "scaler_std": model.scaler_std.tolist(),
            "tol": model.tol,
            "iterations": model.iterations,
        },
    )


def load_model(path: str | Path) -> OcSvmModel:
    obj = read_json(path)
    if obj.get("kind") != "ocsvm":
        raise DataError("not a one-class SVM model file")
    return OcSvmModel(
        support_points=np.asarray(obj["support_points"], dtype=np.float64),
        alphas=np.asarray(obj["alphas"], dtype=np.float64),
        rho=float(obj["rho"]),
        nu=float(obj["nu"]),
        rbf_gamma=float(obj["rbf_gamma"]),
        n_train=int(obj["n_train"]),
        scaler_mean=np.asarray(obj["scaler_mean"], dtype=np.float64),
        scaler_std=np.asarray(obj["scaler_std"], dtype=np.float64),
        tol=float(obj["tol"]),
        iterations=int(obj["iterations"]),
    )
