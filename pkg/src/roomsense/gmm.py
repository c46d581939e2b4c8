"""Diagonal-covariance Gaussian mixtures fitted by EM.

Used twice: 64-component frame models of MFCC vectors (one for a room label,
one for everything else) and small 1-D models of fused detector scores.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, InvariantError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmConfig:
    n_components: int = 64
    max_iters: int = 100
    rel_tol: float = 1e-4
    var_floor: float = 1e-4  # fraction of the global per-dimension variance
    weight_floor: float = 1e-6
    max_frames: int = 200_000
    kmeans_subsample: int = 10_000
    kmeans_iters: int = 10


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray  # (N,)
    means: np.ndarray  # (N, D)
    variances: np.ndarray  # (N, D)
    var_floor: np.ndarray  # (D,)
    trace: tuple = field(default=(), repr=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def check(self) -> None:
        """Raise InvariantError unless the parameters form a valid mixture."""
        w, mu, var = self.weights, self.means, self.variances
        if w.ndim != 1 or mu.shape != (len(w), mu.shape[1]) or var.shape != mu.shape:
            raise InvariantError("mixture parameter shapes disagree")
        if self.var_floor.shape != (mu.shape[1],):
            raise InvariantError("variance floor has the wrong length")
        for name, a in (("weights", w), ("means", mu), ("variances", var), ("var_floor", self.var_floor)):
            if not np.all(np.isfinite(a)):
                raise InvariantError(f"mixture {name} are not finite")
        if len(w) < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvariantError("mixture weights are not on the simplex")
        if np.any(var <= 0) or np.any(var < self.var_floor):
            raise InvariantError("mixture variances fall below the floor")

    def component_log_pdf(self, X, X2=None) -> np.ndarray:
        """log N(x; mu_i, var_i) for every row of X and component i, shape (n, N).

        ``X2`` may carry a precomputed ``X**2``.
        """
        X = _as_points(X, self.dim)
        X2 = X**2 if X2 is None else X2
        prec = 1.0 / self.variances
        out = X2 @ prec.T
        out -= X @ (2.0 * self.means * prec).T
        out += np.sum(self.means**2 * prec, axis=1)
        np.maximum(out, 0.0, out=out)
        out += self.dim * LOG_2PI + np.sum(np.log(self.variances), axis=1)
        out *= -0.5
        return out

    def log_pdf(self, x):
        """Log mixture density; scalar for a single point, (n,) array for n points."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 0 or (x.ndim == 1 and self.dim > 1)
        out = logsumexp(self.component_log_pdf(x) + np.log(self.weights), axis=1)
        return float(out[0]) if single else out


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1) if dim == 1 else X.reshape(1, -1)
    if X.shape[1] != dim:
        raise DataError(f"expected {dim}-dimensional points, got {X.shape[1]}")
    return X


def floor_weights(counts: np.ndarray, floor: float) -> np.ndarray:
    """Maximize sum(counts * log w) on the simplex subject to w >= floor."""
    counts = np.asarray(counts, dtype=np.float64)
    low = np.zeros(len(counts), dtype=bool)
    while True:
        free_mass = counts[~low].sum()
        w = np.where(low, floor, counts * (1.0 - floor * low.sum()) / free_mass)
        newly = (w < floor) & ~low
        if not newly.any():
            return w
        low |= newly


def em_step(model: GaussianMixture, X: np.ndarray, weight_floor: float = 1e-6, X2=None):
    """One EM iteration; returns (updated model, log likelihood under ``model``)."""
    X2 = X**2 if X2 is None else X2
    resp = model.component_log_pdf(X, X2)
    resp += np.log(model.weights)
    peak = resp.max(axis=1, keepdims=True)
    resp -= peak
    np.exp(resp, out=resp)
    total = resp.sum(axis=1, keepdims=True)
    resp /= total
    ll = float(np.sum(np.log(total)) + np.sum(peak))

    counts = resp.sum(axis=0)
    alive = counts > 1e-10 * len(X)
    safe = np.where(alive, counts, 1.0)[:, None]
    means = resp.T @ X / safe
    variances = resp.T @ X2 / safe - means**2
    means = np.where(alive[:, None], means, model.means)
    variances = np.where(alive[:, None], np.maximum(variances, model.var_floor), model.variances)
    weights = floor_weights(counts, weight_floor)
    return GaussianMixture(weights, means, variances, model.var_floor), ll


def kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator, n_iter: int = 10):
    """k-means++ seeding followed by a few Lloyd iterations; returns (centers, labels)."""
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[i] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    sq = np.sum(X**2, axis=1)[:, None]
    for _ in range(n_iter + 1):
        dist = sq - 2.0 * X @ centers.T + np.sum(centers**2, axis=1)
        labels = np.argmin(dist, axis=1)
        if _ == n_iter:
            break
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
    return centers, labels


def fit(X, n_components: int = 64, seed: int = 0, max_iters: int = 100, rel_tol: float = 1e-4, cfg: GmmConfig | None = None) -> GaussianMixture:
    """EM from a k-means++ start. The returned model's ``trace`` holds the log
    likelihood evaluated at the start of every iteration and after the last one."""
    cfg = cfg or GmmConfig(n_components=n_components, max_iters=max_iters, rel_tol=rel_tol)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise DataError("GMM training data contains non-finite values")
    N = cfg.n_components
    if len(np.unique(X, axis=0)) < N:
        raise DataError(f"need at least {N} distinct points to fit {N} components, got {len(X)} points")
    rng = np.random.default_rng(seed)
    if len(X) > cfg.max_frames:
        X = X[np.sort(rng.choice(len(X), cfg.max_frames, replace=False))]

    global_var = X.var(axis=0)
    var_floor = np.maximum(cfg.var_floor * global_var, 1e-10)
    sub = X if len(X) <= cfg.kmeans_subsample else X[rng.choice(len(X), cfg.kmeans_subsample, replace=False)]
    centers, labels = kmeans_pp(sub, N, rng, cfg.kmeans_iters)
    counts = np.bincount(labels, minlength=N).astype(np.float64)
    variances = np.empty_like(centers)
    for j in range(N):
        members = sub[labels == j]
        variances[j] = members.var(axis=0) if len(members) > 1 else global_var
    model = GaussianMixture(
        floor_weights(counts, cfg.weight_floor), centers, np.maximum(variances, var_floor), var_floor
    )

    X2 = X**2
    trace = []
    for _ in range(cfg.max_iters):
        new_model, ll = em_step(model, X, cfg.weight_floor, X2)
        if not np.isfinite(ll):
            raise InvariantError("EM produced a non-finite log likelihood")
        trace.append(ll)
        model = new_model
        if len(trace) > 1 and trace[-1] - trace[-2] <= cfg.rel_tol * abs(trace[-2]):
            break
    final = float(model.log_pdf(X).sum()) if model.dim > 1 else float(np.sum(model.log_pdf(X[:, 0])))
    trace.append(final)
    model = GaussianMixture(model.weights, model.means, model.variances, model.var_floor, tuple(trace))
    model.check()
    return model


@dataclass(frozen=True, eq=False)
class ScenePair:
    """Frame models for a label (``in_model``) and for all other labels (``out_model``)."""

    in_model: GaussianMixture
    out_model: GaussianMixture

    def __post_init__(self):
        if self.in_model.dim != self.out_model.dim:
            raise DataError("in- and out-of-class mixtures disagree on dimensionality")


def sequence_score(pair: ScenePair, features) -> tuple[float, float]:
    """Summed frame log likelihoods (in-class, out-of-class) for one recording."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) == 0:
        raise DataError("sequence_score needs a non-empty (T, D) feature matrix")
    return float(pair.in_model.log_pdf(features).sum()), float(pair.out_model.log_pdf(features).sum())
