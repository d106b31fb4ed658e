"""Data-driven rediscovery of the spring-constant expressions.

Pipeline: a monomial feature library over the three dome groups (pi1, pi2,
pi3), ridge regression on standardized features, and recursive feature
elimination scored by k-fold cross-validated r^2.  The parsimony rule keeps
the smallest feature set whose CV r^2 is within a small band of the best.

Targets are normalized per kind before fitting so each is a smooth function
of the dimensionless groups alone: k_b -> k_b * R^2 / E, d -> d / H, alpha
unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingularSystem

PARSIMONY_BAND = 0.005
TARGET_KINDS = ("k_b", "alpha", "d")


@dataclass(frozen=True)
class FeatureLibrary:
    """Monomials pi1^a pi2^b pi3^c over the dome groups.

    Pure powers run up to degree ``max_degree``; pairwise interactions allow
    the larger exponent up to ``max_degree`` and the smaller up to
    ``interaction_degree``.  No constant feature, no duplicates.
    """

    max_degree: int = 3
    interaction_degree: int = 2
    exponents: tuple[tuple[int, int, int], ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.max_degree < 1 or self.interaction_degree < 0:
            raise ConfigError("degrees must be positive (interaction may be 0)")
        if self.exponents is None:
            object.__setattr__(self, "exponents", tuple(self._generate()))
        seen = set(self.exponents)
        if len(seen) != len(self.exponents):
            raise ConfigError("duplicate exponent tuples in feature library")
        if (0, 0, 0) in seen:
            raise ConfigError("constant feature not allowed")

    def _generate(self):
        n, m = self.max_degree, self.interaction_degree
        feats = []
        for i in range(3):
            for a in range(1, n + 1):
                e = [0, 0, 0]
                e[i] = a
                feats.append(tuple(e))
        for i in range(3):
            for j in range(i + 1, 3):
                for a in range(1, n + 1):
                    for b in range(1, n + 1):
                        if max(a, b) <= n and min(a, b) <= m and m > 0:
                            e = [0, 0, 0]
                            e[i], e[j] = a, b
                            t = tuple(e)
                            if t not in feats:
                                feats.append(t)
        return feats

    @property
    def n_features(self) -> int:
        return len(self.exponents)

    def names(self) -> list[str]:
        out = []
        for a, b, c in self.exponents:
            parts = []
            for sym, p in (("pi1", a), ("pi2", b), ("pi3", c)):
                if p == 1:
                    parts.append(sym)
                elif p > 1:
                    parts.append(f"{sym}^{p}")
            out.append("*".join(parts))
        return out

    @staticmethod
    def expected_count(n: int, m: int) -> int:
        """Closed-form feature count: 3n pure powers plus, per variable pair,
        the (a, b) grid with max <= n and min <= min(m, n)."""
        mm = min(m, n)
        per_pair = 2 * n * mm - mm * mm
        return 3 * n + 3 * per_pair


@dataclass
class Dataset:
    """Rows of (H, t, R, E, y) with the target kind; >= 10 finite rows."""

    H: np.ndarray
    t: np.ndarray
    R: np.ndarray
    E: np.ndarray
    y: np.ndarray
    target: str

    def __post_init__(self):
        if self.target not in TARGET_KINDS:
            raise ConfigError(f"target must be one of {TARGET_KINDS}")
        arrs = [np.asarray(a, dtype=float) for a in (self.H, self.t, self.R, self.E, self.y)]
        self.H, self.t, self.R, self.E, self.y = arrs
        n = len(self.y)
        if n < 10:
            raise ConfigError(f"dataset needs >= 10 rows, got {n}")
        for a in arrs:
            if len(a) != n or not np.all(np.isfinite(a)):
                raise ConfigError("dataset columns must be equal-length and finite")

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def groups(self) -> np.ndarray:
        """(n, 3) array of (pi1, pi2, pi3) per row."""
        return np.column_stack([self.t / self.H, self.t / self.R, self.H / self.R])

    def normalized_target(self) -> np.ndarray:
        """Target scaled to a function of the dimensionless groups."""
        if self.target == "k_b":
            return self.y * self.R**2 / self.E
        if self.target == "d":
            return self.y / self.H
        return self.y.copy()

    def subset(self, idx) -> "Dataset":
        return Dataset(self.H[idx], self.t[idx], self.R[idx], self.E[idx],
                       self.y[idx], self.target)


@dataclass
class FitResult:
    selected: list[int]            # column indices into the library
    weights: np.ndarray            # unstandardized weights for selected features
    intercept: float
    r2_train: float
    r2_test: float
    regularization: float
    cv_curve: list[tuple[int, float]]   # (feature count, CV r^2)
    feature_names: list[str]
    warning: str | None = None


def build_feature_matrix(lib: FeatureLibrary, groups: np.ndarray) -> np.ndarray:
    """Row per sample, column per library monomial."""
    g = np.asarray(groups, dtype=float)
    if g.ndim == 1:
        g = g.reshape(1, -1)
    cols = [np.prod(g ** np.asarray(e, dtype=float), axis=1) for e in lib.exponents]
    return np.column_stack(cols)


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Minimize ||X w - y||^2 + lam ||w||^2.  lam = 0 falls back to least
    squares and raises SingularSystem on rank deficiency."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 2:
        raise ConfigError("ridge_fit needs at least 2 rows")
    if lam < 0:
        raise ConfigError("regularization must be non-negative")
    if lam == 0.0:
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise SingularSystem("rank-deficient system with zero regularization")
        w, *_ = np.linalg.lstsq(X, y, rcond=None)
        return w
    n = X.shape[1]
    return np.linalg.solve(X.T @ X + lam * np.eye(n), X.T @ y)


def r_squared(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def train_test_split(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; train size rounds half-up."""
    if not (0.0 < fraction < 1.0):
        raise ConfigError("train fraction must be in (0, 1)")
    n = data.n_rows
    n_train = int(math.floor(fraction * n + 0.5))
    if n_train >= n or n_train < 1:
        raise ConfigError(f"split leaves an empty side (train {n_train} of {n})")
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(order[:n_train]), data.subset(order[n_train:])


class _Standardizer:
    """Zero-mean unit-variance feature scaling with exact round-trip."""

    def __init__(self, X):
        self.mu = X.mean(axis=0)
        self.sigma = X.std(axis=0)
        self.sigma = np.where(self.sigma < 1e-300, 1.0, self.sigma)

    def transform(self, X):
        return (X - self.mu) / self.sigma

    def unstandardize(self, w_std, y_mu):
        """Weights and intercept in the original feature scale."""
        w = w_std / self.sigma
        b = y_mu - float(self.mu @ w)
        return w, b


def _cv_r2(X, y, cols, lam, k, rng_seed) -> float:
    """k-fold CV r^2 of the standardized ridge model on the given columns."""
    n = len(y)
    order = np.random.default_rng(rng_seed).permutation(n)
    folds = np.array_split(order, k)
    preds = np.empty(n)
    for f in range(k):
        test = folds[f]
        train = np.concatenate([folds[j] for j in range(k) if j != f])
        Xtr, Xte = X[np.ix_(train, cols)], X[np.ix_(test, cols)]
        std = _Standardizer(Xtr)
        ymu = float(np.mean(y[train]))
        w = ridge_fit(std.transform(Xtr), y[train] - ymu, lam)
        preds[test] = std.transform(Xte) @ w + ymu
    return r_squared(y, preds)


def rfe(
    X: np.ndarray,
    y: np.ndarray,
    lib: FeatureLibrary,
    *,
    lam: float = 1e-6,
    cv_folds: int = 5,
    seed: int = 0,
    X_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
) -> FitResult:
    """Recursive feature elimination with cross-validated scoring.

    Drops the feature with the smallest |standardized weight| (ties: lowest
    column index), records the k-fold CV r^2 at every size, and returns the
    smallest set within PARSIMONY_BAND of the best CV score, refit on all
    training rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if cv_folds < 2:
        raise ConfigError("cv_folds must be >= 2")
    if X.shape[0] < 2 * cv_folds:
        raise ConfigError("need at least 2 rows per fold")

    cols = list(range(X.shape[1]))
    path: list[tuple[list[int], float]] = []
    while cols:
        score = _cv_r2(X, y, cols, lam, cv_folds, seed)
        path.append((list(cols), score))
        if len(cols) == 1:
            break
        std = _Standardizer(X[:, cols])
        ymu = float(np.mean(y))
        w = ridge_fit(std.transform(X[:, cols]), y - ymu, lam)
        drop = int(np.argmin(np.abs(w)))  # argmin takes the lowest index on ties
        cols.pop(drop)

    best = max(s for _, s in path)
    warning = None
    if best <= 0.05:
        warning = "no feature subset explains the target (CV r^2 ~ 0)"
    chosen = min(
        (c for c, s in path if s >= best - PARSIMONY_BAND),
        key=len,
    )
    score = next(s for c, s in path if c == chosen)

    std = _Standardizer(X[:, chosen])
    ymu = float(np.mean(y))
    w_std = ridge_fit(std.transform(X[:, chosen]), y - ymu, lam)
    w, b = std.unstandardize(w_std, ymu)
    pred_train = X[:, chosen] @ w + b
    r2_tr = r_squared(y, pred_train)
    r2_te = float("nan")
    if X_test is not None and y_test is not None:
        r2_te = r_squared(y_test, X_test[:, chosen] @ w + b)
    names = lib.names()
    return FitResult(
        selected=chosen, weights=w, intercept=b, r2_train=r2_tr, r2_test=r2_te,
        regularization=lam,
        cv_curve=[(len(c), s) for c, s in path],
        feature_names=[names[i] for i in chosen],
        warning=warning,
    )


def synthetic_dataset(
    target: str, n_rows: int = 200, seed: int = 0, noise: float = 0.0,
    e_range=(5.0, 40.0), h_range=(2.5, 5.0), t_range=(0.5, 1.2), rb_range=(5.0, 8.0),
) -> Dataset:
    """Sample geometries and evaluate the closed-form target (self-test aid)."""
    from .geometry import MaterialProps, UnitCellGeometry
    from .springs import curvature_radius, nonlinear_spring_params

    rng = np.random.default_rng(seed)
    rows = {k: [] for k in "HtREy"}
    while len(rows["y"]) < n_rows:
        H = rng.uniform(*h_range)
        t = rng.uniform(*t_range)
        if t >= 0.9 * H:
            continue
        rb = rng.uniform(*rb_range)
        E = rng.uniform(*e_range)
        g = UnitCellGeometry(dome_height=H, dome_thickness=t, dome_base_radius=rb,
                             unit_separation=1.0, chamber_thickness=1.0)
        import warnings as _w
        with _w.catch_warnings():
            _w.simplefilter("ignore")
            m = MaterialProps(youngs_modulus=E)
        try:
            k_b, alpha, d = nonlinear_spring_params(g, m)
        except Exception:
            continue
        val = {"k_b": k_b, "alpha": alpha, "d": d}[target]
        rows["H"].append(H); rows["t"].append(t)
        rows["R"].append(curvature_radius(g)); rows["E"].append(E)
        rows["y"].append(val)
    ds = Dataset(np.array(rows["H"]), np.array(rows["t"]), np.array(rows["R"]),
                 np.array(rows["E"]), np.array(rows["y"]), target)
    if noise > 0:
        ds.y = ds.y * (1.0 + noise * np.random.default_rng(seed + 1).normal(size=ds.n_rows))
    return ds


# Exponent tuples of the printed closed form for alpha (all 13 monomials lie
# in the default library's span); used by self-tests for support recovery.
ALPHA_TRUE_SUPPORT = {
    (0, 0, 3), (3, 0, 0), (0, 1, 2), (0, 0, 2), (2, 1, 0), (2, 0, 0),
    (1, 2, 0), (0, 1, 1), (1, 1, 0), (0, 0, 1), (0, 3, 0), (0, 2, 0),
    (0, 1, 0),
}
