"""Linear-path and forest regression: LARS, penalized LASSO, random forest.

All fitters consume a normalized Dataset and return a RegressionModel whose
predict() maps normalized feature rows to normalized targets. Grid-search
tuning (5-fold) selects the hyper-parameters by mean validation MAE, with
ties broken toward stronger regularization.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .cohort import Dataset, TaskId, ZScoreParams
from .errors import InvalidConfig, ShapeError

LAMBDA_GRID = tuple(10.0**k for k in range(-10, 11))
MIN_NODE_SIZE_GRID = (5, 10, 15, 20, 25)
CD_TOL = 1e-9
KKT_TOL = 1e-8


class ModelKind(str, Enum):
    LARS = "LARS"
    LASSO = "LASSO"
    RF = "RF"
    GP_TRAD = "GPTrad"
    GP_GOMEA = "GPGOMEA"


def mae(y, yhat) -> float:
    """Mean absolute error (mean form, size-invariant)."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ShapeError(f"mae: shapes {y.shape} vs {yhat.shape}")
    return float(np.mean(np.abs(y - yhat)))


@dataclass
class RegressionModel:
    """A fitted predictor plus the normalization it was trained under."""

    kind: ModelKind
    task: TaskId
    zscore: ZScoreParams
    hyper_params: dict
    predictor: object  # LinearPredictor | ForestPredictor | gp ExprPredictor

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.predictor.predict(X)

    def predict_raw(self, X) -> np.ndarray:
        return self.zscore.invert_target(self.predict(X))

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "task": self.task.value,
            "hyper_params": self.hyper_params,
            "zscore": self.zscore.to_json(),
            "predictor": self.predictor.to_json(),
        }

    @staticmethod
    def from_json(d: dict) -> "RegressionModel":
        from .gp.expr import ExprPredictor  # deferred: gp depends on nothing here

        kind = ModelKind(d["kind"])
        payload = d["predictor"]
        if payload["type"] == "linear":
            predictor = LinearPredictor.from_json(payload)
        elif payload["type"] == "forest":
            predictor = ForestPredictor.from_json(payload)
        elif payload["type"] == "expr":
            predictor = ExprPredictor.from_json(payload)
        else:
            raise InvalidConfig(f"unknown predictor type {payload['type']!r}")
        return RegressionModel(
            kind=kind,
            task=TaskId(d["task"]),
            zscore=ZScoreParams.from_json(d["zscore"]),
            hyper_params=d["hyper_params"],
            predictor=predictor,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @staticmethod
    def load(path) -> "RegressionModel":
        with open(path) as fh:
            return RegressionModel.from_json(json.load(fh))


@dataclass
class LinearPredictor:
    coef: np.ndarray
    intercept: float

    def predict(self, X):
        return X @ self.coef + self.intercept

    def to_json(self):
        return {"type": "linear", "coef": self.coef.tolist(), "intercept": self.intercept}

    @staticmethod
    def from_json(d):
        return LinearPredictor(np.array(d["coef"], dtype=float), float(d["intercept"]))


def _center(X, y):
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    return X - x_mean, y - y_mean, x_mean, y_mean


def _is_constant(y) -> bool:
    return bool(np.all(y == y[0]))


def _constant_model(kind, ds, lam=None) -> RegressionModel:
    warnings.warn(f"{kind.value}: constant training target; predicting the mean", stacklevel=3)
    hp = {} if lam is None else {"lambda": lam}
    return RegressionModel(
        kind=kind,
        task=ds.task,
        zscore=ds.zscore,
        hyper_params=hp,
        predictor=LinearPredictor(np.zeros(ds.n_features), float(ds.y.mean())),
    )


def lars_path(X, y):
    """Least-angle regression path on centered data.

    Returns (knot_betas, knot_corrs): coefficient vectors at each knot and the
    max absolute correlation (X^T residual, infinity norm) at each knot. The
    path is ridge-free: variables enter by equi-correlation and never leave.
    """
    n, p = X.shape
    beta = np.zeros(p)
    mu = np.zeros(n)
    active: list = []
    signs: list = []
    knots = [beta.copy()]
    corrs = [float(np.max(np.abs(X.T @ y)))]
    eps = 1e-12
    for _ in range(p):
        c = X.T @ (y - mu)
        C = float(np.max(np.abs(c)))
        if C < eps:
            break
        inactive = [j for j in range(p) if j not in active]
        for j in inactive:
            if abs(abs(c[j]) - C) < eps * max(1.0, C):
                active.append(j)
                signs.append(np.sign(c[j]) if c[j] != 0 else 1.0)
        Xa = X[:, active] * np.asarray(signs)
        G = Xa.T @ Xa
        try:
            Ginv_1 = np.linalg.solve(G, np.ones(len(active)))
        except np.linalg.LinAlgError:
            break
        A = float(1.0 / np.sqrt(np.sum(Ginv_1)))
        w = A * Ginv_1
        u = Xa @ w
        a = X.T @ u
        if len(active) == p:
            gamma = C / A
        else:
            candidates = []
            for j in range(p):
                if j in active:
                    continue
                for num, den in ((C - c[j], A - a[j]), (C + c[j], A + a[j])):
                    if den > eps and num / den > eps:
                        candidates.append(num / den)
            gamma = min(candidates) if candidates else C / A
        for idx, j in enumerate(active):
            beta[j] += gamma * signs[idx] * w[idx]
        mu = X @ beta
        knots.append(beta.copy())
        corrs.append(float(np.max(np.abs(X.T @ (y - mu)))))
        if len(active) == p:
            break
    return knots, corrs


def lars_fit(ds: Dataset, lam: float = 0.0) -> RegressionModel:
    """LARS path truncated at the penalty level lam (glmnet scale: |X^T r| / n)."""
    if ds.n_rows < 2:
        raise ShapeError("lars_fit needs at least 2 rows")
    if _is_constant(ds.y):
        return _constant_model(ModelKind.LARS, ds, lam)
    Xc, yc, x_mean, y_mean = _center(ds.X.copy(), ds.y.copy())
    knots, corrs = lars_path(Xc, yc)
    n = ds.n_rows
    target_c = lam * n
    beta = knots[-1]
    for k in range(len(knots) - 1):
        c_hi, c_lo = corrs[k], corrs[k + 1]
        if target_c >= c_hi:
            beta = knots[k]
            break
        if target_c > c_lo:
            frac = (c_hi - target_c) / (c_hi - c_lo)
            beta = knots[k] + frac * (knots[k + 1] - knots[k])
            break
    intercept = y_mean - float(x_mean @ beta)
    return RegressionModel(
        kind=ModelKind.LARS,
        task=ds.task,
        zscore=ds.zscore,
        hyper_params={"lambda": lam},
        predictor=LinearPredictor(beta.copy(), intercept),
    )


def _soft_threshold(rho, lam):
    if rho > lam:
        return rho - lam
    if rho < -lam:
        return rho + lam
    return 0.0


def lasso_objective(X, y, beta, intercept, lam) -> float:
    r = y - X @ beta - intercept
    return float(0.5 * np.mean(r * r) + lam * np.sum(np.abs(beta)))


def lasso_fit(ds: Dataset, lam: float, max_sweeps: int = 10_000, history: list | None = None) -> RegressionModel:
    """Cyclic coordinate descent with covariance updates for the (1/2n) LASSO.

    Minimizes (1/2n) sum (y - X beta - b0)^2 + lam * ||beta||_1; converged when
    the largest coordinate change in a sweep is below 1e-9. `history`, when
    given, collects the objective after every sweep.
    """
    if ds.n_rows < 2:
        raise ShapeError("lasso_fit needs at least 2 rows")
    if lam < 0:
        raise InvalidConfig(f"lambda must be >= 0, got {lam}")
    if _is_constant(ds.y):
        return _constant_model(ModelKind.LASSO, ds, lam)
    X, y = ds.X.copy(), ds.y.copy()
    n, p = X.shape
    Xc, yc, x_mean, y_mean = _center(X, y)
    gram = (Xc.T @ Xc) / n
    xty = (Xc.T @ yc) / n
    col_sq = np.diag(gram).copy()
    beta = np.zeros(p)
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] <= 0:
                continue
            rho = xty[j] - gram[j] @ beta + col_sq[j] * beta[j]
            new = _soft_threshold(rho, lam) / col_sq[j]
            max_delta = max(max_delta, abs(new - beta[j]))
            beta[j] = new
        if history is not None:
            history.append(lasso_objective(Xc, yc, beta, 0.0, lam))
        if max_delta < CD_TOL:
            break
    intercept = y_mean - float(x_mean @ beta)
    model = RegressionModel(
        kind=ModelKind.LASSO,
        task=ds.task,
        zscore=ds.zscore,
        hyper_params={"lambda": lam},
        predictor=LinearPredictor(beta.copy(), intercept),
    )
    resid = yc - Xc @ beta
    grad = (Xc.T @ resid) / n
    kkt = np.where(beta != 0, np.abs(grad - lam * np.sign(beta)), np.maximum(np.abs(grad) - lam, 0.0))
    model.hyper_params["kkt_residual"] = float(np.max(kkt))
    return model


# ---------------------------------------------------------------------------
# Random forest of CART regression trees.


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int = 4
    min_node_size: int = 5
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidConfig("n_trees must be >= 1")
        if self.mtry < 1:
            raise InvalidConfig("mtry must be >= 1")
        if self.min_node_size < 1:
            raise InvalidConfig("min_node_size must be >= 1")


@dataclass
class TreeNode:
    feature: int = -1  # -1: leaf
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = 0.0

    def predict_one(self, row):
        node = self
        while node.feature >= 0:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return node.value

    def to_json(self):
        if self.feature < 0:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_json(),
            "right": self.right.to_json(),
        }

    @staticmethod
    def from_json(d):
        if "value" in d:
            return TreeNode(value=float(d["value"]))
        return TreeNode(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=TreeNode.from_json(d["left"]),
            right=TreeNode.from_json(d["right"]),
        )


def _best_split(X, y, feat_indices, min_node_size):
    """Best (feature, threshold) by weighted child variance; None if no valid split."""
    n = len(y)
    best = None  # (score, feature, threshold)
    for j in feat_indices:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ys = y[order]
        # candidate split after position i (1-based sizes), thresholds at midpoints
        csum = np.cumsum(ys)
        csum_sq = np.cumsum(ys * ys)
        total, total_sq = csum[-1], csum_sq[-1]
        sizes_l = np.arange(1, n)
        distinct = xs[1:] != xs[:-1]
        valid = distinct & (sizes_l >= min_node_size) & ((n - sizes_l) >= min_node_size)
        if not valid.any():
            continue
        sum_l = csum[:-1]
        sq_l = csum_sq[:-1]
        var_l = sq_l - sum_l * sum_l / sizes_l
        sizes_r = n - sizes_l
        sum_r = total - sum_l
        var_r = (total_sq - sq_l) - sum_r * sum_r / sizes_r
        score = np.where(valid, var_l + var_r, np.inf)
        k = int(np.argmin(score))
        if score[k] < np.inf and (best is None or score[k] < best[0]):
            best = (float(score[k]), j, float(0.5 * (xs[k] + xs[k + 1])))
    return best


def _build_tree(X, y, rng, mtry, min_node_size):
    node = TreeNode()
    if len(y) < 2 * min_node_size or np.all(y == y[0]):
        node.value = float(y.mean())
        return node
    feat_indices = rng.choice(X.shape[1], size=mtry, replace=False)
    best = _best_split(X, y, feat_indices, min_node_size)
    if best is None:
        node.value = float(y.mean())
        return node
    _, j, threshold = best
    mask = X[:, j] <= threshold
    node.feature = j
    node.threshold = threshold
    node.left = _build_tree(X[mask], y[mask], rng, mtry, min_node_size)
    node.right = _build_tree(X[~mask], y[~mask], rng, mtry, min_node_size)
    return node


@dataclass
class ForestPredictor:
    trees: list

    def predict(self, X):
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += [tree.predict_one(row) for row in X]
        return out / len(self.trees)

    def to_json(self):
        return {"type": "forest", "trees": [t.to_json() for t in self.trees]}

    @staticmethod
    def from_json(d):
        return ForestPredictor([TreeNode.from_json(t) for t in d["trees"]])


def rf_fit(ds: Dataset, cfg: ForestConfig) -> RegressionModel:
    """Random forest of CART trees on bootstrap resamples; prediction = tree mean."""
    if cfg.mtry > ds.n_features:
        raise InvalidConfig(f"mtry {cfg.mtry} > {ds.n_features} features")
    if ds.n_rows < cfg.min_node_size:
        raise ShapeError("rf_fit needs at least min_node_size rows")
    # Per-tree seeds are pre-drawn so trees can build in any order.
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    n = ds.n_rows
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        if cfg.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        trees.append(_build_tree(ds.X[rows], ds.y[rows], rng, cfg.mtry, cfg.min_node_size))
    return RegressionModel(
        kind=ModelKind.RF,
        task=ds.task,
        zscore=ds.zscore,
        hyper_params={
            "n_trees": cfg.n_trees,
            "mtry": cfg.mtry,
            "min_node_size": cfg.min_node_size,
            "seed": cfg.seed,
        },
        predictor=ForestPredictor(trees),
    )


# ---------------------------------------------------------------------------
# 5-fold grid search.


@dataclass(frozen=True)
class GridSearchSpec:
    lambda_grid: tuple = LAMBDA_GRID
    min_node_size_grid: tuple = MIN_NODE_SIZE_GRID
    folds: int = 5
    n_trees: int = 500

    def __post_init__(self):
        if not self.lambda_grid or not self.min_node_size_grid:
            raise InvalidConfig("grids must be non-empty")
        if self.folds < 2:
            raise InvalidConfig("folds must be >= 2")

    def mtry_grid(self, n_features: int) -> tuple:
        return tuple(range(1, max(n_features // 2, 1) + 1))


def _cv_folds(n, folds, rng):
    perm = rng.permutation(n)
    return np.array_split(perm, folds)


def _subset(ds: Dataset, rows) -> Dataset:
    return Dataset(
        task=ds.task,
        X=ds.X[rows],
        y=ds.y[rows],
        provenance=tuple(ds.provenance[i] for i in rows),
        zscore=ds.zscore,
    )


def tune_and_fit(ds: Dataset, kind: ModelKind, spec: GridSearchSpec, seed: int) -> RegressionModel:
    """Grid-search 5-fold CV, then refit on all rows with the winning setting.

    The grid is ordered strongest-regularization-first so argmin tie-breaking
    lands on the stronger setting (larger lambda / larger min_node_size /
    smaller mtry).
    """
    if ds.n_rows < spec.folds:
        raise ShapeError(f"need >= {spec.folds} rows, got {ds.n_rows}")
    root = np.random.SeedSequence(seed)
    fold_rng = np.random.default_rng(root.spawn(1)[0])
    folds = _cv_folds(ds.n_rows, spec.folds, fold_rng)

    if kind in (ModelKind.LARS, ModelKind.LASSO):
        grid = [{"lambda": lam} for lam in sorted(spec.lambda_grid, reverse=True)]
    elif kind == ModelKind.RF:
        grid = [
            {"min_node_size": mns, "mtry": mt}
            for mns in sorted(spec.min_node_size_grid, reverse=True)
            for mt in spec.mtry_grid(ds.n_features)
        ]
    else:
        raise InvalidConfig(f"tune_and_fit does not handle {kind}")

    fit_seeds = iter(root.spawn(len(grid) * spec.folds + 1))
    refit_seed = next(fit_seeds)
    scores = []
    for params in grid:
        fold_maes = []
        for fold_rows in folds:
            train_rows = np.setdiff1d(np.arange(ds.n_rows), fold_rows)
            ss = next(fit_seeds)
            if len(fold_rows) == 0:
                continue
            model = _fit_with(kind, _subset(ds, train_rows), params, spec, ss)
            fold_maes.append(mae(ds.y[fold_rows], model.predict(ds.X[fold_rows])))
        scores.append(float(np.mean(fold_maes)))
    best = int(np.argmin(scores))
    model = _fit_with(kind, ds, grid[best], spec, refit_seed)
    model.hyper_params["cv_mae"] = scores[best]
    return model


def _fit_with(kind, ds, params, spec, seed_seq) -> RegressionModel:
    if kind == ModelKind.LARS:
        return lars_fit(ds, params["lambda"])
    if kind == ModelKind.LASSO:
        return lasso_fit(ds, params["lambda"])
    cfg = ForestConfig(
        n_trees=spec.n_trees,
        mtry=params["mtry"],
        min_node_size=params["min_node_size"],
        seed=int(np.random.default_rng(seed_seq).integers(0, 2**31 - 1)),
    )
    return rf_fit(ds, cfg)
