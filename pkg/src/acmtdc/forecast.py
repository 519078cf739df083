"""Multi-output random-forest wind-speed forecaster.

Samples are sliding windows over an aligned (power, speed, hour) series: the
feature vector at origin t is

    [y_{t-H}, ..., y_{t-1}, s_{t-H}, ..., s_{t-1}, sin(2 pi h_t / 24), cos(2 pi h_t / 24)]

and the target is the next P wind speeds [s_t, ..., s_{t+P-1}].  Trees are
grown greedily (CART) with the split score summed over all P outputs, each on
a bootstrap resample, considering a random feature subset at every split.
The forest predicts the mean of its trees.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InsufficientData, ParseError
from .netmodel import WindFarm

HISTORY = 48
HORIZON = 24
N_TREES = 15
FORMAT_TAG = "acmtdc-forest/1"


@dataclass(frozen=True)
class WindowConfig:
    history: int = HISTORY
    horizon: int = HORIZON

    @property
    def n_features(self) -> int:
        return 2 * self.history + 2


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 2
    feature_subset_size: int | None = None  # None -> ceil(d / 3)

    def subset_size(self, d: int) -> int:
        m = self.feature_subset_size or math.ceil(d / 3)
        return max(1, min(d, m))


@dataclass
class Dataset:
    X: np.ndarray  # (N, d)
    Y: np.ndarray  # (N, P)
    origins: np.ndarray  # index t of each sample's first target
    window: WindowConfig = field(default_factory=WindowConfig)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self):
        return iter(zip(self.X, self.Y))


def hour_features(hour) -> tuple[np.ndarray, np.ndarray]:
    angle = 2.0 * np.pi * np.asarray(hour, dtype=float) / 24.0
    return np.sin(angle), np.cos(angle)


def feature_vector(power_hist, speed_hist, hour: float) -> np.ndarray:
    s, c = hour_features(hour)
    return np.r_[np.asarray(power_hist, float), np.asarray(speed_hist, float), s, c]


def make_dataset(power, speed, hour, history: int = HISTORY, horizon: int = HORIZON) -> Dataset:
    power = np.asarray(power, dtype=float)
    speed = np.asarray(speed, dtype=float)
    hour = np.asarray(hour, dtype=float)
    if not (power.shape == speed.shape == hour.shape) or power.ndim != 1:
        raise DimensionMismatch("power, speed and hour series must be aligned 1-D arrays")
    n = power.size
    if n < history + horizon:
        raise InsufficientData(f"series of length {n} is shorter than history + horizon "
                               f"= {history + horizon}")
    origins = np.arange(history, n - horizon + 1)
    lag = np.arange(-history, 0)
    X = np.empty((origins.size, 2 * history + 2))
    X[:, :history] = power[origins[:, None] + lag]
    X[:, history:2 * history] = speed[origins[:, None] + lag]
    X[:, -2], X[:, -1] = hour_features(hour[origins])
    Y = speed[origins[:, None] + np.arange(horizon)]
    return Dataset(X, Y, origins, WindowConfig(history, horizon))


# ---------------------------------------------------------------------------
# regression tree
# ---------------------------------------------------------------------------

@dataclass
class RegressionTree:
    """Flat array tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, P) mean target of the samples at each node
    n_features: int

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d: dict, n_features: int) -> "RegressionTree":
        return cls(np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1), n_features)


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    position: int  # number of samples sent left
    gain: float  # reduction of the summed squared error


def split_candidates(X, Y, features, min_leaf: int):
    """Score every admissible split on ``features``.

    Returns (gain, threshold, position) arrays of shape (len(features), n-1);
    inadmissible positions carry gain -inf.  The gain is the reduction of the
    total (over outputs) sum of squared deviations from the node mean.
    """
    n = X.shape[0]
    xs = X[:, features]
    order = np.argsort(xs, axis=0, kind="stable")
    xs = np.take_along_axis(xs, order, axis=0)
    Ys = Y[order]  # (n, m, P)
    csum = np.cumsum(Ys, axis=0)[:-1]  # left sums for sizes 1..n-1
    total = Y.sum(axis=0)
    nl = np.arange(1, n)[:, None]
    nr = n - nl
    left = np.sum(csum * csum, axis=2) / nl
    right_sum = total[None, None, :] - csum
    right = np.sum(right_sum * right_sum, axis=2) / nr
    gain = left + right - float(total @ total) / n
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    thr = 0.5 * (xs[1:] + xs[:-1])
    return gain.T, thr.T, np.broadcast_to(nl, gain.shape).T


def best_split(X, Y, features, min_leaf: int) -> Split | None:
    features = np.sort(np.asarray(features))
    if X.shape[0] < 2 * min_leaf:
        return None
    gain, thr, pos = split_candidates(X, Y, features, min_leaf)
    # argmax over a feature-major layout: ties go to the lowest feature index,
    # then the lowest threshold
    k = int(np.argmax(gain))
    best = gain.flat[k]
    scale = float(np.sum((Y - Y.mean(axis=0)) ** 2))
    if not np.isfinite(best) or best <= 1e-12 * max(scale, 1e-300):
        return None
    fi, p = divmod(k, gain.shape[1])
    t = thr[fi, p]
    # the midpoint can round onto the upper value when neighbours are adjacent floats
    if not t < X[:, features[fi]].max():
        return None
    return Split(int(features[fi]), float(t), int(pos[fi, p]), float(best))


def fit_tree(X, Y, rng: np.random.Generator, params: TreeParams = TreeParams()) -> RegressionTree:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    m = params.subset_size(d)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(Y[idx].mean(axis=0))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if params.max_depth is not None and depth >= params.max_depth:
            continue
        if idx.size < 2 * params.min_samples_leaf:
            continue
        Yn = Y[idx]
        if np.all(Yn == Yn[0]):
            continue
        feats = rng.choice(d, size=m, replace=False) if m < d else np.arange(d)
        split = best_split(X[idx], Yn, feats, params.min_samples_leaf)
        if split is None:
            continue
        go_left = X[idx, split.feature] <= split.threshold
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = split.feature
        threshold[node] = split.threshold
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return RegressionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.array(value).reshape(len(feature), Y.shape[1]), d)


# ---------------------------------------------------------------------------
# forest
# ---------------------------------------------------------------------------

@dataclass
class ForestModel:
    trees: list[RegressionTree]
    rng_seed: int
    feature_subset_size: int
    window: WindowConfig = field(default_factory=WindowConfig)
    params: TreeParams = field(default_factory=TreeParams)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tree_index)]))


def bootstrap_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _fit_one(args):
    X, Y, seed, t, params = args
    rng = tree_rng(seed, t)
    idx = bootstrap_indices(rng, X.shape[0])
    return fit_tree(X[idx], Y[idx], rng, params)


def fit_forest(X, Y, n_trees: int = N_TREES, seed: int = 0, params: TreeParams = TreeParams(),
               window: WindowConfig | None = None, jobs: int = 1) -> ForestModel:
    """Bagged trees; tree t draws from an rng seeded by (seed, t), so the
    result does not depend on ``jobs``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0:
        raise InsufficientData("cannot fit a forest on zero samples")
    if X.shape[0] != Y.shape[0]:
        raise DimensionMismatch("X and Y have different numbers of samples")
    work = [(X, Y, seed, t, params) for t in range(n_trees)]
    if jobs > 1 and n_trees > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            trees = list(ex.map(_fit_one, work))
    else:
        trees = [_fit_one(w) for w in work]
    if window is None:
        window = WindowConfig((X.shape[1] - 2) // 2, Y.shape[1])
    return ForestModel(trees, int(seed), params.subset_size(X.shape[1]), window, params)


def train(dataset: Dataset, n_trees: int = N_TREES, seed: int = 0,
          params: TreeParams = TreeParams(), jobs: int = 1) -> ForestModel:
    return fit_forest(dataset.X, dataset.Y, n_trees, seed, params, dataset.window, jobs)


def predict(model: ForestModel, X) -> np.ndarray:
    """Mean of the tree predictions; a single feature vector gives a (P,) result."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {X2.shape[1]}")
    out = np.zeros((X2.shape[0], model.trees[0].value.shape[1]))
    for tree in model.trees:
        out += tree.predict(X2)
    out /= len(model.trees)
    return out[0] if single else out


def forecast_from(model: ForestModel, power, speed, hour, origin: int) -> np.ndarray:
    """Speed forecast for steps ``origin .. origin + horizon - 1`` from the
    history window that ends just before ``origin``."""
    h = model.window.history
    if origin < h:
        raise InsufficientData(f"origin {origin} has fewer than {h} steps of history")
    x = feature_vector(power[origin - h:origin], speed[origin - h:origin], hour[origin])
    return predict(model, x)


def model_to_dict(model: ForestModel) -> dict:
    return {
        "format": FORMAT_TAG,
        "rng_seed": model.rng_seed,
        "feature_subset_size": model.feature_subset_size,
        "window": asdict(model.window),
        "params": asdict(model.params),
        "n_features": model.n_features,
        "trees": [t.to_dict() for t in model.trees],
    }


def model_from_dict(d: dict) -> ForestModel:
    if d.get("format") != FORMAT_TAG:
        raise ParseError(f"not a forest model file (format {d.get('format')!r})")
    n_features = int(d["n_features"])
    trees = [RegressionTree.from_dict(t, n_features) for t in d["trees"]]
    return ForestModel(trees, int(d["rng_seed"]), int(d["feature_subset_size"]),
                       WindowConfig(**d["window"]), TreeParams(**d["params"]))


def save_model(model: ForestModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), separators=(",", ":")))


def load_model(path) -> ForestModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# power curve and evaluation
# ---------------------------------------------------------------------------

def speed_to_power(speed_mps, rated_mw: float, cut_in_mps: float = 3.0, rated_mps: float = 12.0,
                   cut_out_mps: float = 25.0):
    """Cubic power curve between cut-in and rated speed, flat to cut-out, zero outside."""
    v = np.asarray(speed_mps, dtype=float)
    if np.any(v < 0):
        raise ValueError("wind speed must be non-negative")
    ramp = rated_mw * (v ** 3 - cut_in_mps ** 3) / (rated_mps ** 3 - cut_in_mps ** 3)
    p = np.where(v < cut_in_mps, 0.0,
                 np.where(v < rated_mps, ramp, np.where(v <= cut_out_mps, rated_mw, 0.0)))
    return float(p) if p.ndim == 0 else p


def farm_power(farm: WindFarm, speed_mps):
    """Farm output for a site speed, scaled by the farm's speed factor."""
    return speed_to_power(np.asarray(speed_mps, dtype=float) * farm.speed_scale, farm.rated_mw,
                          farm.cut_in_mps, farm.rated_mps, farm.cut_out_mps)


@dataclass
class BacktestReport:
    mae: np.ndarray  # per horizon step
    rmse: np.ndarray
    persistence_mae: np.ndarray
    persistence_rmse: np.ndarray
    observed: np.ndarray  # (N, P)
    predicted: np.ndarray
    origins: np.ndarray

    @property
    def mae_total(self) -> float:
        return float(np.mean(np.abs(self.predicted - self.observed)))

    @property
    def rmse_total(self) -> float:
        return float(np.sqrt(np.mean((self.predicted - self.observed) ** 2)))

    @property
    def persistence_rmse_total(self) -> float:
        return float(np.sqrt(np.mean(self.persistence_rmse ** 2)))

    def summary(self) -> dict:
        return {"mae": self.mae_total, "rmse": self.rmse_total,
                "persistence_rmse": self.persistence_rmse_total,
                "persistence_mae": float(np.mean(self.persistence_mae)), "samples": int(self.origins.size)}


def error_report(observed, predicted, baseline) -> tuple:
    err = predicted - observed
    base = baseline - observed
    return (np.mean(np.abs(err), axis=0), np.sqrt(np.mean(err ** 2, axis=0)),
            np.mean(np.abs(base), axis=0), np.sqrt(np.mean(base ** 2, axis=0)))


def backtest(model: ForestModel, power, speed, hour) -> BacktestReport:
    """Forecast every window of a held-out series and compare with persistence."""
    w = model.window
    data = make_dataset(power, speed, hour, w.history, w.horizon)
    pred = predict(model, data.X)
    last = data.X[:, 2 * w.history - 1]  # s_{t-1}
    persistence = np.repeat(last[:, None], w.horizon, axis=1)
    mae, rmse, pmae, prmse = error_report(data.Y, pred, persistence)
    return BacktestReport(mae, rmse, pmae, prmse, data.Y, pred, data.origins)


def write_backtest_csv(report: BacktestReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mae", "rmse", "persistence_mae", "persistence_rmse"])
        for k in range(report.mae.size):
            w.writerow([k + 1, repr(float(report.mae[k])), repr(float(report.rmse[k])),
                        repr(float(report.persistence_mae[k])), repr(float(report.persistence_rmse[k]))])


def write_observed_predicted_csv(report: BacktestReport, path, timestamps=None) -> None:
    """One row per (origin, step): observed and forecast speed, plot-ready."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin", "step", "target_index", "timestamp", "observed_mps", "predicted_mps"])
        for i, t in enumerate(report.origins):
            for k in range(report.observed.shape[1]):
                ts = "" if timestamps is None else str(timestamps[t + k])
                w.writerow([int(t), k + 1, int(t + k), ts, repr(float(report.observed[i, k])),
                            repr(float(report.predicted[i, k]))])
