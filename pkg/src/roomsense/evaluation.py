"""Detector evaluation: ROC/EER, alpha sweeps, confusion matrices, room-grouped folds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class RocCurve:
    """Error rates at each candidate threshold, thresholds ascending.

    A score counts as a detection when it lies strictly above the threshold.
    ``fp``/``fn`` are the integer error counts behind ``fpr``/``fnr``.
    """

    thresholds: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    n_pos: int
    n_neg: int

    @property
    def fpr(self) -> np.ndarray:
        return self.fp / self.n_neg

    @property
    def fnr(self) -> np.ndarray:
        return self.fn / self.n_pos


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float


def roc_curve(pos_scores, neg_scores) -> RocCurve:
    """Thresholds at the midpoints between distinct merged scores, plus one below
    the lowest and one above the highest score."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("EER needs at least one positive and one negative score")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise DataError("EER scores must be finite")
    u = np.unique(np.concatenate([pos, neg]))
    pad = 0.5 * (u[-1] - u[0]) / (len(u) - 1) if len(u) > 1 else 0.5
    thresholds = np.concatenate([[u[0] - pad], 0.5 * (u[:-1] + u[1:]), [u[-1] + pad]])
    # threshold j sits just below u[j]: negatives at or above u[j] are false positives,
    # positives below u[j] are misses
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    edges = np.concatenate([u, [np.inf]])
    fp = len(neg) - np.searchsorted(neg_sorted, edges, side="left")
    fn = np.searchsorted(pos_sorted, edges, side="left")
    return RocCurve(thresholds, fp.astype(np.int64), fn.astype(np.int64), len(pos), len(neg))


def compute_eer(pos_scores, neg_scores) -> EerResult:
    """EER at the crossing of FPR and FNR along the threshold sweep.

    FPR - FNR strictly decreases along the sweep (from +1 to -1), so the crossing
    is unique; between two thresholds it is found by linear interpolation, done in
    integer arithmetic so the rate is a single correctly rounded division.
    """
    roc = roc_curve(pos_scores, neg_scores)
    n_pos, n_neg = roc.n_pos, roc.n_neg
    d = roc.fp * n_pos - roc.fn * n_neg  # (FPR - FNR) * n_pos * n_neg
    zero = np.flatnonzero(d == 0)
    if len(zero):
        j = zero[0]
        return EerResult(int(roc.fp[j]) / n_neg, float(roc.thresholds[j]))
    j = int(np.flatnonzero(d > 0)[-1])
    dj, dk = int(d[j]), int(d[j + 1])
    fj, fk = int(roc.fp[j]), int(roc.fp[j + 1])
    eer = (fk * dj - fj * dk) / (n_neg * (dj - dk))
    s = dj / (dj - dk)
    t0, t1 = roc.thresholds[j], roc.thresholds[j + 1]
    return EerResult(eer, float(t0 + s * (t1 - t0)))


def fuse(scene_ratios, rir_ratios, alpha: float) -> np.ndarray:
    return alpha * np.asarray(scene_ratios, dtype=np.float64) + (1.0 - alpha) * np.asarray(rir_ratios, dtype=np.float64)


def label_eer(scores, truth) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    return compute_eer(scores[truth], scores[~truth]).eer


def sweep_alpha(
    scene_ratios: Mapping[str, Sequence[float]],
    rir_ratios: Mapping[str, Sequence[float]],
    truth: Mapping[str, Sequence[bool]],
    alphas: Sequence[float],
) -> tuple[list[tuple[float, float]], float]:
    """Total (unweighted mean over labels) fused EER per alpha, and the minimizing alpha.

    ``truth[label][i]`` says whether trial i of that label's detector is a true
    instance of the label. Ties go to the smaller alpha.
    """
    labels = sorted(scene_ratios)
    if not labels or set(labels) != set(rir_ratios) or set(labels) != set(truth):
        raise DataError("scene, RIR and truth tables must cover the same labels")
    table = []
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {a}")
        eers = [label_eer(fuse(scene_ratios[c], rir_ratios[c], a), truth[c]) for c in labels]
        table.append((float(a), float(np.mean(eers))))
    best = min(table, key=lambda row: (row[1], row[0]))[0]
    return table, best


def confusion_matrix(final_confidences: Mapping[str, Mapping[str, float]], true_labels: Mapping[str, str], labels=None):
    """Mean final confidence per (true label, candidate label); rows are not normalized.

    ``final_confidences[room][candidate]`` is the room's last confidence for that
    candidate. Returns (labels, matrix); rows with no rooms are NaN.
    """
    labels = sorted({c for conf in final_confidences.values() for c in conf}) if labels is None else list(labels)
    index = {c: i for i, c in enumerate(labels)}
    total = np.zeros((len(labels), len(labels)))
    count = np.zeros(len(labels))
    for room, conf in final_confidences.items():
        if set(conf) != set(labels):
            raise DataError(f"room {room} lacks a confidence for some candidate label")
        r = index[true_labels[room]]
        count[r] += 1
        for c, v in conf.items():
            total[r, index[c]] += v
    with np.errstate(invalid="ignore"):
        return labels, total / count[:, None]


def diagonal_dominant_rows(matrix: np.ndarray) -> np.ndarray:
    """True for each row whose diagonal cell strictly exceeds every other cell."""
    m = np.asarray(matrix)
    off = np.where(np.eye(len(m), dtype=bool), -np.inf, m)
    return np.diag(m) > off.max(axis=1)


def assign_room_folds(rows, n_folds: int, seed: int) -> dict[str, int]:
    """Room id -> fold. Rooms of each label are shuffled, then dealt round-robin
    with a counter shared across labels, so every fold sees every label when
    there are enough rooms."""
    rooms_by_label: dict[str, list[str]] = {}
    for r in rows:
        rooms = rooms_by_label.setdefault(r.label, [])
        if r.room_id not in rooms:
            rooms.append(r.room_id)
    n_rooms = sum(len(v) for v in rooms_by_label.values())
    if n_folds < 2 or n_rooms < n_folds:
        raise DataError(f"cannot split {n_rooms} rooms into {n_folds} folds")
    rng = np.random.default_rng(seed)
    folds, counter = {}, 0
    for label in sorted(rooms_by_label):
        rooms = sorted(rooms_by_label[label])
        for i in rng.permutation(len(rooms)):
            folds[rooms[i]] = counter % n_folds
            counter += 1
    return folds


def cross_validate(manifest, n_folds: int, seed: int, run_fold: Callable) -> tuple[list[dict], dict]:
    """Room-grouped CV: ``run_fold(train_rows, test_rows, fold)`` returns a dict of
    scalar metrics; returns the per-fold dicts and their means."""
    rows = manifest.rows if hasattr(manifest, "rows") else list(manifest)
    folds = assign_room_folds(rows, n_folds, seed)
    results = []
    for f in range(n_folds):
        train = [r for r in rows if folds[r.room_id] != f]
        test = [r for r in rows if folds[r.room_id] == f]
        results.append(run_fold(train, test, f))
    keys = results[0].keys() if results else []
    return results, {k: float(np.mean([r[k] for r in results])) for k in keys}


def unseen_building_split(rows, test_buildings):
    """(train rows, test rows) holding out whole buildings."""
    test_buildings = set(test_buildings)
    train = [r for r in rows if r.building_id not in test_buildings]
    test = [r for r in rows if r.building_id in test_buildings]
    check_no_leak(train, test)
    if not test:
        raise DataError(f"no rows in held-out buildings {sorted(test_buildings)}")
    return train, test


def check_no_leak(train_rows, test_rows) -> None:
    leaked = {r.building_id for r in train_rows} & {r.building_id for r in test_rows}
    if leaked:
        raise DataError(f"unseen-building evaluation refused: buildings {sorted(leaked)} appear in training rows")
