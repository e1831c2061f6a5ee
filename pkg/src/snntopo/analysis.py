"""Accuracy-drop regression on topometrics and Pearson feature importance."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .topometrics import FEATURES


class AnalysisError(ValueError):
    pass


def accuracy_drop(acc_s: float, acc_d: float) -> float:
    """``1 - acc_s / acc_d``; negative when the sparse network is better."""
    if acc_d == 0:
        raise AnalysisError("dense accuracy is zero, drop undefined")
    return 1.0 - acc_s / acc_d


# --- records ---------------------------------------------------------------------

@dataclass
class AnalysisRecord:
    architecture: str
    dataset: str
    sparsity: float
    algorithm: str
    run: int
    acc_sparse: float
    acc_dense: float
    features: np.ndarray

    @property
    def drop(self) -> float:
        return accuracy_drop(self.acc_sparse, self.acc_dense)


def _norm(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def _sparsity_key(s) -> float:
    return round(float(s), 6)


def load_accuracy_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    required = {"architecture", "dataset", "algorithm", "sparsity", "run", "acc", "acc_dense"}
    if rows and not required <= set(rows[0]):
        raise AnalysisError(f"{path}: missing columns {sorted(required - set(rows[0]))}")
    return rows


def join_records(accuracy_rows: Sequence[dict], metric_rows: Sequence[dict],
                 features: Sequence[str] = FEATURES) -> tuple[list[AnalysisRecord], list[str]]:
    """Attach topometrics to accuracy rows.

    Metric rows are keyed by architecture, algorithm and sparsity, plus the
    dataset when the row has one (an empty dataset matches every dataset).
    Rows without an accuracy value or without metrics are skipped and noted.
    """
    index: dict[tuple, np.ndarray] = {}
    for row in metric_rows:
        key = (_norm(row["architecture"]), _norm(row["algorithm"]), _sparsity_key(row["sparsity"]),
               _norm(row.get("dataset", "") or ""))
        index[key] = np.array([float(row[f]) for f in features])
    records, notes = [], []
    for row in accuracy_rows:
        if row["algorithm"].lower() == "dense":
            continue
        if row["acc"] in ("", None):
            notes.append(f"no accuracy for {row['architecture']}/{row['dataset']}/{row['algorithm']}/"
                         f"{row['sparsity']}; skipped")
            continue
        base = (_norm(row["architecture"]), _norm(row["algorithm"]), _sparsity_key(row["sparsity"]))
        feats = index.get(base + (_norm(row["dataset"]),))
        if feats is None:
            feats = index.get(base + ("",))
        if feats is None:
            notes.append(f"no topometrics for {'/'.join(map(str, base))}/{row['dataset']}; skipped")
            continue
        records.append(AnalysisRecord(row["architecture"], row["dataset"], float(row["sparsity"]),
                                      row["algorithm"], int(row["run"]), float(row["acc"]),
                                      float(row["acc_dense"]), feats))
    return records, notes


@dataclass(frozen=True)
class Scenario:
    kind: str  # "sparsity" | "arch"
    value: str

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        kind, _, value = text.partition(":")
        if kind not in ("sparsity", "arch") or not value:
            raise AnalysisError(f"scenario must be 'sparsity:S' or 'arch:NAME', got {text!r}")
        if kind == "sparsity":
            float(value)
        return cls(kind, value)

    def __str__(self) -> str:
        return f"{self.kind}:{self.value}"

    def select(self, records: Sequence[AnalysisRecord]) -> list[AnalysisRecord]:
        if self.kind == "sparsity":
            s = _sparsity_key(self.value)
            return [r for r in records if _sparsity_key(r.sparsity) == s]
        return [r for r in records if _norm(r.architecture) == _norm(self.value)]


# --- regressors ------------------------------------------------------------------

class Regressor:
    name = "base"

    def __init__(self):
        self.coef_ = np.zeros(0)
        self.intercept_ = 0.0
        self.flags: list[str] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "Regressor":
        raise NotImplementedError

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef_ + self.intercept_


def _center(X, y):
    xm, ym = X.mean(axis=0), y.mean()
    return X - xm, y - ym, xm, ym


class OLS(Regressor):
    name = "ols"

    def __init__(self, fallback_alpha: float = 1e-8):
        super().__init__()
        self.fallback_alpha = fallback_alpha

    def fit(self, X, y):
        Xc, yc, xm, ym = _center(X, y)
        if X.shape[1] and np.linalg.matrix_rank(Xc) < X.shape[1]:
            self.flags.append("singular design: ridge fallback")
            self.coef_ = np.linalg.solve(Xc.T @ Xc + self.fallback_alpha * np.eye(X.shape[1]), Xc.T @ yc)
        else:
            self.coef_ = np.linalg.lstsq(Xc, yc, rcond=None)[0]
        self.intercept_ = ym - xm @ self.coef_
        return self


class Ridge(Regressor):
    """Minimises ``||y - Xb - c||^2 + alpha ||b||^2``."""

    name = "ridge"

    def __init__(self, alpha: float = 1.0):
        super().__init__()
        self.alpha = alpha

    def fit(self, X, y):
        Xc, yc, xm, ym = _center(X, y)
        self.coef_ = np.linalg.solve(Xc.T @ Xc + self.alpha * np.eye(X.shape[1]), Xc.T @ yc)
        self.intercept_ = ym - xm @ self.coef_
        return self


def _soft(x: float, t: float) -> float:
    return math.copysign(max(abs(x) - t, 0.0), x)


class ElasticNet(Regressor):
    """Coordinate descent on ``(1/2n)||y - Xb - c||^2 + a r ||b||_1 + a (1 - r)/2 ||b||^2``."""

    name = "elasticnet"

    def __init__(self, alpha: float = 1e-3, l1_ratio: float = 0.5, tol: float = 1e-10,
                 max_iter: int = 20000):
        super().__init__()
        self.alpha, self.l1_ratio, self.tol, self.max_iter = alpha, l1_ratio, tol, max_iter

    def fit(self, X, y):
        Xc, yc, xm, ym = _center(X, y)
        n, p = Xc.shape
        b = np.zeros(p)
        r = yc.copy()
        sq = (Xc ** 2).sum(axis=0)
        l1 = n * self.alpha * self.l1_ratio
        l2 = n * self.alpha * (1.0 - self.l1_ratio)
        for it in range(self.max_iter):
            max_step = 0.0
            for j in range(p):
                if sq[j] == 0:
                    continue
                old = b[j]
                rho = Xc[:, j] @ r + sq[j] * old
                b[j] = _soft(rho, l1) / (sq[j] + l2)
                if b[j] != old:
                    r -= Xc[:, j] * (b[j] - old)
                    max_step = max(max_step, abs(b[j] - old))
            if max_step <= self.tol * max(1.0, float(np.abs(b).max(initial=0.0))):
                break
        else:
            self.flags.append("coordinate descent hit max_iter")
        self.coef_ = b
        self.intercept_ = ym - xm @ b
        return self


class Lasso(ElasticNet):
    name = "lasso"

    def __init__(self, alpha: float = 1e-3, **kw):
        super().__init__(alpha=alpha, l1_ratio=1.0, **kw)


class Huber(Regressor):
    """Huber loss by iteratively reweighted least squares, residual scale from the MAD."""

    name = "huber"

    def __init__(self, delta: float = 1.35, max_iter: int = 200, tol: float = 1e-10):
        super().__init__()
        self.delta, self.max_iter, self.tol = delta, max_iter, tol

    def fit(self, X, y):
        n = X.shape[0]
        Xa = np.column_stack([X, np.ones(n)])
        beta = np.linalg.lstsq(Xa, y, rcond=None)[0]
        for _ in range(self.max_iter):
            res = y - Xa @ beta
            scale = np.median(np.abs(res - np.median(res))) / 0.6745
            if scale <= 1e-12 * max(1.0, float(np.abs(y).max(initial=0.0))):
                break
            u = np.abs(res) / scale
            w = np.where(u <= self.delta, 1.0, self.delta / np.maximum(u, 1e-300))
            sw = np.sqrt(w)
            new = np.linalg.lstsq(Xa * sw[:, None], y * sw, rcond=None)[0]
            done = np.max(np.abs(new - beta)) <= self.tol * max(1.0, float(np.abs(beta).max()))
            beta = new
            if done:
                break
        self.coef_, self.intercept_ = beta[:-1], float(beta[-1])
        return self


class PCR(Regressor):
    """Least squares on the leading principal components of the centred design."""

    name = "pcr"

    def __init__(self, n_components: Optional[int] = None, max_components: int = 8):
        super().__init__()
        self.n_components, self.max_components = n_components, max_components

    def fit(self, X, y):
        Xc, yc, xm, ym = _center(X, y)
        p = X.shape[1]
        k = self.n_components or min(p, self.max_components)
        _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
        rank = int((s > s[0] * 1e-12).sum()) if s.size else 0
        if rank < k:
            self.flags.append(f"only {rank} nonzero components")
            k = rank
        V = Vt[:k].T
        Z = Xc @ V
        g = np.linalg.lstsq(Z, yc, rcond=None)[0] if k else np.zeros(0)
        self.coef_ = V @ g if k else np.zeros(p)
        self.intercept_ = ym - xm @ self.coef_
        return self


@dataclass
class RegressionConfig:
    k_folds: int = 5
    runs: int = 100
    seed: int = 0
    ridge_alpha: float = 1.0
    lasso_alpha: float = 1e-3
    enet_alpha: float = 1e-3
    enet_l1_ratio: float = 0.5
    huber_delta: float = 1.35
    pcr_max_components: int = 8
    regressors: tuple[str, ...] = ("ols", "ridge", "lasso", "elasticnet", "huber", "pcr")
    regressor_weights: Optional[dict[str, float]] = None
    workers: int = 1

    def make(self, name: str) -> Regressor:
        factories = {
            "ols": lambda: OLS(),
            "ridge": lambda: Ridge(self.ridge_alpha),
            "lasso": lambda: Lasso(self.lasso_alpha),
            "elasticnet": lambda: ElasticNet(self.enet_alpha, self.enet_l1_ratio),
            "huber": lambda: Huber(self.huber_delta),
            "pcr": lambda: PCR(max_components=self.pcr_max_components),
        }
        if name not in factories:
            raise AnalysisError(f"unknown regressor {name!r}; choose from {sorted(factories)}")
        return factories[name]()

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(self).items()}


# --- scaling, folds, scores ------------------------------------------------------

@dataclass
class MinMaxScaler:
    lo: np.ndarray
    span: np.ndarray
    keep: np.ndarray  # columns that vary on the fitting data

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        lo, hi = X.min(axis=0), X.max(axis=0)
        keep = hi > lo
        return cls(lo, np.where(keep, hi - lo, 1.0), keep)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.lo) / self.span)[:, self.keep]


def stratified_folds(groups: Sequence[str], k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; rows of each group are shuffled and dealt round-robin."""
    groups = np.asarray(groups)
    folds = np.empty(groups.size, dtype=np.int64)
    counter = 0
    for g in sorted(set(groups.tolist())):
        idx = np.flatnonzero(groups == g)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (counter + np.arange(idx.size)) % k
        counter += idx.size
    return folds


def r2_score(y: np.ndarray, pred: np.ndarray) -> float:
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - pred) ** 2).sum())
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -math.inf
    return 1.0 - ss_res / ss_tot


def adjusted_r2(r2: float, n: int, p: int) -> float:
    """``1 - (1 - R^2)(n - 1)/(n - p - 1)``; NaN when ``n <= p + 1``."""
    if n <= p + 1:
        return math.nan
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


# --- cross-validated regression ----------------------------------------------------

@dataclass
class RegressorSummary:
    adj_r2_mean: float
    adj_r2_std: float
    mae_mean: float
    pooled_adj_r2_mean: float
    undefined_folds: int
    flags: list[str]


@dataclass
class RegressionReport:
    scenario: str
    n_records: int
    features: list[str]
    dropped_features: list[str]
    regressors: dict[str, RegressorSummary]
    importance: dict[str, float] = field(default_factory=dict)
    importance_flags: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["regressors"] = {k: vars(v) for k, v in self.regressors.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _design(records: Sequence[AnalysisRecord]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    X = np.vstack([r.features for r in records]).astype(np.float64)
    y = np.array([r.drop for r in records])
    if not np.all(np.isfinite(X)):
        raise AnalysisError("non-finite feature values")
    return X, y, [r.dataset for r in records]


def _one_run(X, y, groups, name: str, cfg: RegressionConfig, run: int) -> dict:
    rng = np.random.default_rng([cfg.seed, run])
    folds = stratified_folds(groups, cfg.k_folds, rng)
    adj, mae, flags = [], [], set()
    pooled = np.empty_like(y)
    p_used = 0
    for f in range(cfg.k_folds):
        test = folds == f
        train = ~test
        if not test.any():
            continue
        scaler = MinMaxScaler.fit(X[train])
        if not scaler.keep.all():
            flags.add(f"{int((~scaler.keep).sum())} constant training column(s) dropped")
        Xtr, Xte = scaler.transform(X[train]), scaler.transform(X[test])
        model = cfg.make(name).fit(Xtr, y[train])
        flags.update(model.flags)
        pred = model.predict(Xte)
        pooled[test] = pred
        p_used = Xtr.shape[1]
        adj.append(adjusted_r2(r2_score(y[test], pred), int(test.sum()), p_used))
        mae.append(float(np.abs(y[test] - pred).mean()))
    return {"adj": adj, "mae": mae, "flags": flags,
            "pooled": adjusted_r2(r2_score(y, pooled), y.size, p_used)}


def cross_validate(X: np.ndarray, y: np.ndarray, groups: Sequence[str],
                   config: Optional[RegressionConfig] = None) -> dict[str, RegressorSummary]:
    """Repeated stratified k-fold evaluation of every configured regressor."""
    cfg = config or RegressionConfig()
    tasks = [(name, run) for name in cfg.regressors for run in range(cfg.runs)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda t: _one_run(X, y, groups, t[0], cfg, t[1]), tasks))
    else:
        results = [_one_run(X, y, groups, name, cfg, run) for name, run in tasks]

    summaries = {}
    for name in cfg.regressors:
        res = [r for (n, _), r in zip(tasks, results) if n == name]
        adj = np.array([a for r in res for a in r["adj"]])
        defined = adj[np.isfinite(adj)]
        flags = sorted(set().union(*(r["flags"] for r in res)))
        undefined = int(adj.size - defined.size)
        if undefined:
            flags.append(f"adjusted R2 undefined on {undefined} folds (n <= p + 1)")
        pooled = np.array([r["pooled"] for r in res])
        summaries[name] = RegressorSummary(
            float(defined.mean()) if defined.size else math.nan,
            float(defined.std()) if defined.size else math.nan,
            float(np.mean([m for r in res for m in r["mae"]])),
            float(np.nanmean(pooled)) if np.isfinite(pooled).any() else math.nan,
            undefined, flags)

    return summaries


def run_regression(records: Sequence[AnalysisRecord], scenario: Scenario | str | None = None,
                   config: Optional[RegressionConfig] = None,
                   feature_names: Sequence[str] = FEATURES) -> RegressionReport:
    cfg = config or RegressionConfig()
    if isinstance(scenario, str):
        scenario = Scenario.parse(scenario)
    sel = scenario.select(records) if scenario else list(records)
    if len(sel) < 2 * cfg.k_folds:
        raise AnalysisError(f"scenario {scenario}: {len(sel)} records, need at least {2 * cfg.k_folds}")
    X, y, groups = _design(sel)
    constant = [feature_names[j] for j in np.flatnonzero(X.max(axis=0) == X.min(axis=0))]

    summaries = cross_validate(X, y, groups, cfg)
    imp, imp_flags = feature_importance(sel, None, cfg, feature_names)
    return RegressionReport(str(scenario) if scenario else "all", len(sel), list(feature_names),
                            constant, summaries, imp, imp_flags, cfg.to_dict())


# --- feature importance ------------------------------------------------------------

def pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(xc @ yc) / den if den > 0 else math.nan


def feature_importance(records: Sequence[AnalysisRecord], scenario: Scenario | str | None = None,
                       config: Optional[RegressionConfig] = None,
                       feature_names: Sequence[str] = FEATURES) -> tuple[dict[str, float], list[str]]:
    """Per feature, weighted mean over regressors of Pearson r(feature, fitted drop).

    Each regressor is fitted on the whole scenario slice (min-max scaled).
    Undefined correlations (constant feature or constant prediction) count as 0.
    """
    cfg = config or RegressionConfig()
    if isinstance(scenario, str):
        scenario = Scenario.parse(scenario)
    sel = scenario.select(records) if scenario else list(records)
    if len(sel) < 2:
        raise AnalysisError("need at least two records for feature importance")
    X, y, _ = _design(sel)
    scaler = MinMaxScaler.fit(X)
    Xs = scaler.transform(X)
    weights = cfg.regressor_weights or {name: 1.0 for name in cfg.regressors}
    total = sum(weights.get(n, 0.0) for n in cfg.regressors)
    if total <= 0:
        raise AnalysisError("regressor weights must sum to a positive value")
    flags = [f"{feature_names[j]}: zero variance, importance 0"
             for j in np.flatnonzero(~scaler.keep)]
    acc = np.zeros(X.shape[1])
    for name in cfg.regressors:
        w = weights.get(name, 0.0)
        if w == 0:
            continue
        model = cfg.make(name).fit(Xs, y)
        pred = model.predict(Xs)
        for j in range(X.shape[1]):
            if not scaler.keep[j]:
                continue
            r = pearson(X[:, j], pred)
            if math.isnan(r):
                flags.append(f"{feature_names[j]}/{name}: constant prediction, r taken as 0")
                r = 0.0
            acc[j] += w * r
    return {f: float(v) for f, v in zip(feature_names, acc / total)}, flags


def load_importance(path: str | Path) -> np.ndarray:
    """Importance vector from a regression report JSON (or a bare feature->value mapping)."""
    data = json.loads(Path(path).read_text())
    imp = data.get("importance", data)
    missing = [f for f in FEATURES if f not in imp]
    if missing:
        raise AnalysisError(f"{path}: importance missing {missing}")
    return np.array([float(imp[f]) for f in FEATURES])
