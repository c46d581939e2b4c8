"""Binary RBF support vector machine with Platt-calibrated log probabilities.

The dual is solved by sequential minimal optimization using the maximal
violating pair as the two-element working set. Inputs are standardized per
dimension with training-set statistics stored in the model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DataError, InvariantError

TAU = 1e-12


@dataclass(frozen=True)
class GridSpec:
    cbox: tuple = tuple(2.0**k for k in range(-3, 8))
    gamma: tuple = tuple(2.0**k for k in range(-9, 2))
    folds: int = 5

    def __post_init__(self):
        if not self.cbox or not self.gamma:
            raise ValueError("grid axes must be non-empty")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if min(self.cbox) <= 0 or min(self.gamma) <= 0:
            raise ValueError("grid values must be positive")


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray  # (m, d), standardized
    dual_coef: np.ndarray  # (m,) alpha_i * y_i
    bias: float
    gamma: float
    cbox: float
    mean: np.ndarray  # (d,)
    scale: np.ndarray  # (d,)
    platt_a: float = -1.0
    platt_b: float = 0.0
    # diagnostics of the SMO run; not part of the serialized model
    kkt_gap: float = field(default=0.0, compare=False, repr=False)
    dual_trace: np.ndarray = field(default_factory=lambda: np.zeros(0), compare=False, repr=False)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def check(self) -> None:
        m, d = self.support_vectors.shape if self.support_vectors.ndim == 2 else (-1, -1)
        if m < 0 or self.dual_coef.shape != (m,) or self.mean.shape != (d,) or self.scale.shape != (d,):
            raise InvariantError("SVM parameter shapes disagree")
        arrays = (self.support_vectors, self.dual_coef, self.mean, self.scale)
        scalars = np.array([self.bias, self.gamma, self.cbox, self.platt_a, self.platt_b])
        if not all(np.all(np.isfinite(a)) for a in arrays) or not np.all(np.isfinite(scalars)):
            raise InvariantError("SVM parameters are not finite")
        if np.any(self.scale <= 0) or self.gamma <= 0 or self.cbox <= 0:
            raise InvariantError("SVM scales, gamma and box constraint must be positive")
        if np.any(np.abs(self.dual_coef) > self.cbox * (1 + 1e-12)):
            raise InvariantError("SVM dual coefficients exceed the box constraint")

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise DataError(f"expected {self.dim}-dimensional features, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        Z = self.standardize(X)
        return rbf_kernel(Z, self.support_vectors, self.gamma) @ self.dual_coef + self.bias


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = np.sum(A**2, axis=1)[:, None] - 2.0 * A @ B.T + np.sum(B**2, axis=1)[None, :]
    return np.maximum(d2, 0.0)


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    return np.exp(-gamma * sq_distances(A, B))


@numba.njit(cache=True)
def _smo(Kmat, y, cbox, tol, max_iter):
    """Solve min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0 with Q_ij = y_i y_j K_ij."""
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    trace = np.zeros(min(max_iter + 1, 1024))
    gap = np.inf
    it = 0
    while True:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * grad[t]
            up = (y[t] > 0 and alpha[t] < cbox) or (y[t] < 0 and alpha[t] > 0)
            low = (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < cbox)
            if up and v > gmax:
                gmax = v
                i = t
            if low and v < gmin:
                gmin = v
                j = t
        gap = gmax - gmin
        dual = 0.0
        for t in range(n):
            dual += alpha[t] - 0.5 * alpha[t] * (grad[t] + 1.0)
        if it >= len(trace):
            grown = np.zeros(min(2 * len(trace), max_iter + 1))
            grown[: len(trace)] = trace
            trace = grown
        trace[it] = dual
        if gap <= tol or it >= max_iter:
            break
        it += 1

        Kii = Kmat[i, i]
        Kjj = Kmat[j, j]
        Kij = Kmat[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            quad = Kii + Kjj + 2.0 * Kij
            if quad <= 0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > cbox:
                    alpha[i] = cbox
                    alpha[j] = cbox - diff
            else:
                if alpha[j] > cbox:
                    alpha[j] = cbox
                    alpha[i] = cbox + diff
        else:
            quad = Kii + Kjj - 2.0 * Kij
            if quad <= 0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > cbox:
                if alpha[i] > cbox:
                    alpha[i] = cbox
                    alpha[j] = total - cbox
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > cbox:
                if alpha[j] > cbox:
                    alpha[j] = cbox
                    alpha[i] = total - cbox
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            grad[t] += y[t] * (y[i] * Kmat[t, i] * dai + y[j] * Kmat[t, j] * daj)

    # bias: average over free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    acc = 0.0
    n_free = 0
    for t in range(n):
        yg = y[t] * grad[t]
        if 0 < alpha[t] < cbox:
            acc += yg
            n_free += 1
        elif (alpha[t] >= cbox and y[t] < 0) or (alpha[t] <= 0 and y[t] > 0):
            ub = min(ub, yg)
        else:
            lb = max(lb, yg)
    rho = acc / n_free if n_free > 0 else 0.5 * (ub + lb)
    return alpha, -rho, gap, trace[: it + 1]


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("features must be an (n, d) matrix aligned with the labels")
    if not np.all(np.isfinite(X)):
        raise DataError("SVM features contain non-finite values")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("SVM labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DataError("SVM training needs both classes")
    return X, y


def standardization(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def _solve(Z, y, Kmat, cbox, gamma, tol, max_iter, mean, scale) -> SvmModel:
    alpha, bias, gap, trace = _smo(np.ascontiguousarray(Kmat), y, float(cbox), float(tol), int(max_iter))
    if not np.isfinite(bias) or not np.all(np.isfinite(alpha)):
        raise InvariantError("SMO produced non-finite coefficients")
    sv = alpha > 0
    return SvmModel(Z[sv].copy(), alpha[sv] * y[sv], float(bias), float(gamma), float(cbox), mean, scale,
                    kkt_gap=float(gap), dual_trace=trace)


def train(X, y, cbox: float = 1.0, gamma: float = 0.01, tol: float = 1e-3, seed: int = 0, max_iter: int = 1_000_000) -> SvmModel:
    """Uncalibrated SVM; ``seed`` is accepted for interface symmetry (SMO is deterministic)."""
    X, y = _check_xy(X, y)
    mean, scale = standardization(X)
    Z = (X - mean) / scale
    return _solve(Z, y, rbf_kernel(Z, Z, gamma), cbox, gamma, tol, max_iter, mean, scale)


def stratified_folds(y, n_folds: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is shuffled and dealt round-robin."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (offset + np.arange(len(idx))) % n_folds
        offset += len(idx)
    return folds


def grid_search(X, y, grid: GridSpec = GridSpec(), seed: int = 0, tol: float = 1e-3) -> tuple[float, float]:
    """Highest mean CV accuracy; ties go to the smaller C, then the smaller gamma."""
    X, y = _check_xy(X, y)
    if min(np.sum(y > 0), np.sum(y < 0)) < grid.folds:
        raise DataError(f"each class needs at least {grid.folds} samples for {grid.folds}-fold search")
    folds = stratified_folds(y, grid.folds, seed)
    cs, gs = sorted(grid.cbox), sorted(grid.gamma)
    acc = np.zeros((len(cs), len(gs)))
    for f in range(grid.folds):
        tr, te = folds != f, folds == f
        mean, scale = standardization(X[tr])
        Ztr, Zte = (X[tr] - mean) / scale, (X[te] - mean) / scale
        D_tr, D_te = sq_distances(Ztr, Ztr), sq_distances(Zte, Ztr)
        for b, g in enumerate(gs):
            K_tr, K_te = np.exp(-g * D_tr), np.exp(-g * D_te)
            for a, c in enumerate(cs):
                alpha, bias, _, _ = _smo(K_tr, y[tr], float(c), float(tol), 1_000_000)
                pred = np.where(K_te @ (alpha * y[tr]) + bias >= 0, 1.0, -1.0)
                acc[a, b] += np.mean(pred == y[te]) / grid.folds
    best = np.flatnonzero(acc.ravel() == acc.max())[0]  # row-major: smallest C, then gamma
    a, b = divmod(best, len(gs))
    return cs[a], gs[b]


def fit_platt(f, y, max_iter: int = 100) -> tuple[float, float]:
    """Newton fit of P(y=+1|f) = 1 / (1 + exp(A f + B)) with prior-count smoothed targets."""
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_pos, n_neg = int(np.sum(y > 0)), int(np.sum(y <= 0))
    if n_pos < 2 or n_neg < 2:
        raise DataError("Platt calibration needs at least 2 samples per class")
    if not np.all(np.isfinite(f)):
        raise DataError("decision values must be finite")
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))

    def nll(A, B):
        # -sum[t log p + (1 - t) log(1 - p)], p = 1 / (1 + exp(z)), in a stable form
        z = A * f + B
        return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))

    value = nll(A, B)
    for _ in range(max_iter):
        z = A * f + B
        p = np.clip(np.exp(-np.logaddexp(0.0, z)), 1e-12, 1.0 - 1e-12)
        d1 = t - p  # d nll / dz
        w = p * (1.0 - p)
        g = np.array([np.sum(f * d1), np.sum(d1)])
        if np.max(np.abs(g)) < 1e-10:
            break
        H = np.array([[np.sum(f * f * w) + 1e-12, np.sum(f * w)], [np.sum(f * w), np.sum(w) + 1e-12]])
        step = np.linalg.solve(H, g)
        decrease = float(g @ step)
        s = 1.0
        while s >= 1e-10:
            A_new, B_new = A - s * step[0], B - s * step[1]
            new_value = nll(A_new, B_new)
            if new_value <= value - 1e-4 * s * decrease:
                break
            s *= 0.5
        else:
            break
        A, B, value = A_new, B_new, new_value
    return float(A), float(B)


def calibrate(model: SvmModel, decision_values, labels) -> SvmModel:
    A, B = fit_platt(decision_values, labels)
    return SvmModel(model.support_vectors, model.dual_coef, model.bias, model.gamma, model.cbox,
                    model.mean, model.scale, A, B, model.kkt_gap, model.dual_trace)


def log_probs_from_decision(model: SvmModel, f) -> tuple[np.ndarray, np.ndarray]:
    z = model.platt_a * np.asarray(f, dtype=np.float64) + model.platt_b
    log_out = -np.logaddexp(0.0, -z)  # log(1 - sigma) = log(e^z / (1 + e^z))
    log_in = -np.logaddexp(0.0, z)
    return log_in, log_out


def predict_log_probs(model: SvmModel, x) -> tuple[float, float]:
    """(log P(C | x), log P(not C | x)) under the Platt sigmoid."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("predict_log_probs takes a single feature vector")
    log_in, log_out = log_probs_from_decision(model, model.decision_function(x)[0])
    return float(log_in), float(log_out)
