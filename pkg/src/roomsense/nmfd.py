"""Blind room-response estimation by sparse non-negative matrix deconvolution.

A reverberant magnitude spectrogram X (F x T) is modelled row by row as the
convolution of a sparse source spectrogram S (F x T) with a short response
R (F x K)::

    Y[f, t] = sum_k R[f, k] * S[f, t - k]

S and R are refined by alternating multiplicative updates. Three rule sets are
available through ``NmfdConfig.divergence``:

``"kl"`` (default)
    Generalized KL divergence. R uses the KL rule
    ``R_k *= ((X / Y) . S_k->^T) / (1 . S_k->^T)``; S uses its KL counterpart with
    the sparsity term ``lam * S**(p - 1)`` added to the denominator.
``"euclidean"``
    Squared error. S uses ``S *= sum_k R_k X<-k / (lam S**(p-1) + sum_k R_k Y<-k)``;
    R uses its squared-error counterpart.
``"mixed"``
    The S rule of ``"euclidean"`` paired with the R rule of ``"kl"``. The pair does
    not descend a common objective, so its trace (reported under KL) can rise.

For the first two the sparsity penalty is ``(lam / p) * sum(S**p)``, which makes
``lam * S**(p-1)`` its exact gradient, and each update is a majorize-minimize
step for ``1 <= p <= 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .dsp import LOG_FLOOR, dct_rows
from .errors import DataError, InvariantError

EPS = 1e-12
DIVERGENCES = ("kl", "euclidean", "mixed")


@dataclass(frozen=True)
class NmfdConfig:
    K: int = 20
    lam: float = 0.1
    p: float = 1.2
    max_iters: int = 60
    rel_tol: float = 1e-4
    seed: int = 0
    divergence: str = "kl"
    # R starts as uniform(0.1, 1] * exp(-k / init_decay). A decay of a few frames
    # matches reverberant rooms; a very short one starts R near an impulse, where
    # the source absorbs the reverberation and the slopes carry little room signal.
    init_decay: float = 3.0
    n_ceps: int = 20
    dct_axis: str = "frequency"

    def __post_init__(self):
        if self.K < 1 or self.max_iters < 1:
            raise ValueError("K and max_iters must be >= 1")
        if self.lam < 0 or not 0 < self.p <= 2:
            raise ValueError("need lam >= 0 and 0 < p <= 2")
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"divergence must be one of {DIVERGENCES}")
        if self.dct_axis not in ("frequency", "time"):
            raise ValueError("dct_axis must be 'frequency' or 'time'")
        if self.init_decay <= 0:
            raise ValueError("init_decay must be positive")


class NmfdResult(NamedTuple):
    source: np.ndarray
    rir: np.ndarray
    trace: np.ndarray


def shift_right(A: np.ndarray, k: int) -> np.ndarray:
    """Columns move k steps later; vacated columns are zero, overrun is dropped."""
    out = np.zeros_like(A)
    T = A.shape[1]
    if k < T:
        out[:, k:] = A[:, : T - k]
    return out


def shift_left(A: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(A)
    T = A.shape[1]
    if k < T:
        out[:, : T - k] = A[:, k:]
    return out


@numba.njit(cache=True)
def _convolve_rows(S, R):
    F, T = S.shape
    Y = np.zeros((F, T))
    for f in range(F):
        for k in range(min(R.shape[1], T)):
            r = R[f, k]
            for t in range(T - k):
                Y[f, t + k] += r * S[f, t]
    return Y


@numba.njit(cache=True)
def _correlate_rows(A, R):
    F, T = A.shape
    out = np.zeros((F, T))
    for f in range(F):
        for k in range(min(R.shape[1], T)):
            r = R[f, k]
            for t in range(T - k):
                out[f, t] += r * A[f, t + k]
    return out


@numba.njit(cache=True)
def _lagged_rows(A, S, K):
    F, T = A.shape
    out = np.zeros((F, K))
    for f in range(F):
        for k in range(min(K, T)):
            acc = 0.0
            for t in range(k, T):
                acc += A[f, t] * S[f, t - k]
            out[f, k] = acc
    return out


def convolve(S: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Y = sum_k diag(R[:, k]) . shift_right(S, k)."""
    return _convolve_rows(np.ascontiguousarray(S, dtype=np.float64), np.ascontiguousarray(R, dtype=np.float64))


def _correlate(A, R):
    # sum_k diag(R[:, k]) . shift_left(A, k)
    return _correlate_rows(np.ascontiguousarray(A), np.ascontiguousarray(R))


def _lagged_inner(A, S, K):
    # out[f, k] = sum_t A[f, t] * shift_right(S, k)[f, t]
    return _lagged_rows(np.ascontiguousarray(A), np.ascontiguousarray(S), K)


def _correlate_ones(R, T):
    # _correlate(ones, R): at column t only lags k < T - t contribute
    csum = np.cumsum(R, axis=1)
    K = R.shape[1]
    idx = np.minimum(K, T - np.arange(T)) - 1
    return csum[:, idx]


def _lagged_sums(S, K):
    # _lagged_inner(ones, S, K): sum of the first T - k columns of S
    T = S.shape[1]
    csum = np.cumsum(S, axis=1)
    out = np.zeros((S.shape[0], K))
    n = min(K, T)
    out[:, :n] = csum[:, T - 1 - np.arange(n)]
    return out


def kl_divergence(X, Y) -> float:
    Yf = np.maximum(Y, EPS)
    pos = X > 0
    return float(np.sum(X[pos] * np.log(X[pos] / Yf[pos])) - X.sum() + Yf.sum())


def _penalty(S, cfg: NmfdConfig, S_pm1=None) -> float:
    if cfg.lam == 0:
        return 0.0
    Sp = S**cfg.p if S_pm1 is None else S * S_pm1
    return cfg.lam / cfg.p * float(np.sum(Sp))


def objective(X, Y, S, cfg: NmfdConfig) -> float:
    """Data term (per ``cfg.divergence``) plus the sparsity penalty (lam/p) sum S^p."""
    if X.shape != Y.shape or S.shape != X.shape:
        raise ValueError(f"shape mismatch: X {X.shape}, Y {Y.shape}, S {S.shape}")
    if cfg.divergence == "euclidean":
        data = 0.5 * float(np.sum((X - Y) ** 2))
    else:
        data = kl_divergence(X, Y)
    return data + _penalty(S, cfg)


def init_factors(F: int, T: int, cfg: NmfdConfig):
    rng = np.random.default_rng(cfg.seed)
    S = 1.0 - 0.9 * rng.random((F, T))  # uniform in (0.1, 1]
    R = (1.0 - 0.9 * rng.random((F, cfg.K))) * np.exp(-np.arange(cfg.K) / cfg.init_decay)
    return S, R


def _sparsity_grad(S, cfg):
    if cfg.lam == 0:
        return None
    with np.errstate(divide="ignore"):
        return S ** (cfg.p - 1)


def update_source(X, S, R, cfg: NmfdConfig, Y=None, S_pm1=None) -> np.ndarray:
    """One multiplicative S step. ``Y`` and ``S**(p-1)`` may be passed in if known."""
    Y = convolve(S, R) if Y is None else Y
    S_pm1 = _sparsity_grad(S, cfg) if S_pm1 is None else S_pm1
    if cfg.divergence == "kl":
        num = _correlate(X / np.maximum(Y, EPS), R)
        den = _correlate_ones(R, X.shape[1])
    else:
        num = _correlate(X, R)
        den = _correlate(Y, R)
    if S_pm1 is not None:
        den = den + cfg.lam * S_pm1
    return S * num / np.maximum(den, EPS)


def update_response(X, S, R, cfg: NmfdConfig, Y=None) -> np.ndarray:
    Y = convolve(S, R) if Y is None else Y
    K = R.shape[1]
    if cfg.divergence == "euclidean":
        num = _lagged_inner(X, S, K)
        den = _lagged_inner(Y, S, K)
    else:
        num = _lagged_inner(X / np.maximum(Y, EPS), S, K)
        den = _lagged_sums(S, K)
    return R * num / np.maximum(den, EPS)


def _data_term(X, Y, cfg):
    if cfg.divergence == "euclidean":
        return 0.5 * float(np.sum((X - Y) ** 2))
    return kl_divergence(X, Y)


def estimate_rir(X, cfg: NmfdConfig = NmfdConfig(), init=None) -> NmfdResult:
    """Factor X into source S and response R; returns (S, R, objective trace).

    ``trace[0]`` is the objective at initialization, ``trace[i]`` after the i-th
    S/R sweep. After the loop R is rescaled so that its column 0 peaks at 1,
    with the inverse gain moved into S.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)) or np.any(X < 0):
        raise DataError("NMFD input must be a finite non-negative F x T matrix")
    F, T = X.shape
    if T < cfg.K:
        raise DataError(f"need T >= K, got T={T}, K={cfg.K}")
    if not np.any(X > 0):
        raise DataError("degenerate input: spectrogram is all zeros")

    if init is None:
        S, R = init_factors(F, T, cfg)
    else:
        S, R = (np.array(a, dtype=np.float64) for a in init)
    Y = convolve(S, R)
    S_pm1 = _sparsity_grad(S, cfg)
    trace = [_data_term(X, Y, cfg) + _penalty(S, cfg, S_pm1)]
    for it in range(cfg.max_iters):
        S = update_source(X, S, R, cfg, Y, S_pm1)
        R = update_response(X, S, R, cfg)
        Y = convolve(S, R)
        S_pm1 = _sparsity_grad(S, cfg)
        value = _data_term(X, Y, cfg) + _penalty(S, cfg, S_pm1)
        if not (np.isfinite(value) and np.all(np.isfinite(S)) and np.all(np.isfinite(R))):
            raise InvariantError(f"NMFD produced a non-finite iterate at iteration {it}")
        prev = trace[-1]
        trace.append(value)
        if abs(prev - value) <= cfg.rel_tol * max(abs(prev), EPS):
            break

    scale = R[:, 0].max()
    if scale <= 0:
        scale = R.max()
    if scale > 0:
        R = R / scale
        S = S * scale
    return NmfdResult(S, R, np.asarray(trace))


def parametrize_rir(R, n_ceps: int = 20, axis: str = "frequency") -> np.ndarray:
    """Log-compress and DCT the response, then flatten row-major.

    With ``axis="frequency"`` each of the K columns is DCT'd over frequency and
    the first ``n_ceps`` coefficients kept, giving an n_ceps x K matrix and a
    vector of length n_ceps * K. With ``axis="time"`` each frequency row is DCT'd
    over its K frames, keeping min(n_ceps, K) coefficients per row.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape[0] < n_ceps:
        raise DataError(f"need at least {n_ceps} frequency rows, got {R.shape[0]}")
    logR = np.log(np.maximum(R, LOG_FLOOR))
    if axis == "frequency":
        ceps = dct_rows(logR.T, n_ceps).T
    elif axis == "time":
        ceps = dct_rows(logR, min(n_ceps, R.shape[1]))
    else:
        raise ValueError(f"unknown DCT axis {axis!r}")
    return ceps.reshape(-1)
