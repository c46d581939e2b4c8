"""End-to-end training and evaluation of a bank of per-label room detectors."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import evaluation, fusion, gmm, svm
from .config import RunConfig
from .dsp import read_wav
from .errors import DataError, RoomSenseError
from .features import FeatureConfig, RecordingFeatures, extract
from .synthgen import CorpusManifest, ManifestRow

log = logging.getLogger(__name__)


def derive_seed(*keys) -> int:
    """Stable 32-bit seed from ints and strings."""
    ints = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass(frozen=True)
class Item:
    row: ManifestRow
    feats: RecordingFeatures


def load_items(manifest: CorpusManifest, cfg: FeatureConfig, rows: Sequence[ManifestRow] | None = None,
               cache: dict | None = None) -> list[Item]:
    """Features for each row in order; ``cache`` (path -> features) is read and filled."""
    items = []
    for row in manifest.rows if rows is None else rows:
        key = (str(manifest.resolve(row)), cfg)
        feats = None if cache is None else cache.get(key)
        if feats is None:
            try:
                feats = extract(read_wav(manifest.resolve(row)), cfg)
            except (OSError, RoomSenseError) as exc:
                raise DataError(f"{row.path}: {exc}") from exc
            if cache is not None:
                cache[key] = feats
        items.append(Item(row, feats))
    return items


def _subsample(frames: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(frames) <= n:
        return frames
    return frames[np.sort(rng.choice(len(frames), n, replace=False))]


def scene_training_frames(items: Sequence[Item], label: str, seed: int):
    """(in-class frames, out-of-class frames). The out-of-class pool takes an equal
    number of frames from every other label, downsampling the larger ones."""
    pos = [it.feats.frames for it in items if it.row.label == label]
    others: dict[str, list] = {}
    for it in items:
        if it.row.label != label:
            others.setdefault(it.row.label, []).append(it.feats.frames)
    if not pos or not others:
        raise DataError(f"label {label!r} needs training recordings of its own and of other labels")
    pooled = {c: np.vstack(v) for c, v in sorted(others.items())}
    share = min(len(v) for v in pooled.values())
    rng = np.random.default_rng(seed)
    neg = np.vstack([_subsample(v, share, rng) for v in pooled.values()])
    return np.vstack(pos), neg


def fit_scene_pair(items: Sequence[Item], label: str, cfg: RunConfig, seed: int) -> gmm.ScenePair:
    pos, neg = scene_training_frames(items, label, derive_seed(seed, "frames"))
    return gmm.ScenePair(
        gmm.fit(pos, seed=derive_seed(seed, "in"), cfg=cfg.gmm),
        gmm.fit(neg, seed=derive_seed(seed, "out"), cfg=cfg.gmm),
    )


def _svm_data(items: Sequence[Item], label: str):
    X = np.vstack([it.feats.rir for it in items])
    y = np.array([1.0 if it.row.label == label else -1.0 for it in items])
    return X, y


def scene_ratios(pair: gmm.ScenePair, items: Sequence[Item]) -> np.ndarray:
    return np.array([np.subtract(*gmm.sequence_score(pair, it.feats.frames)) for it in items])


@dataclass
class HeldOutScores:
    """Scores of training recordings produced by models that did not see their room."""

    scene: np.ndarray
    decision: np.ndarray
    truth: np.ndarray


def held_out_scores(items: Sequence[Item], label: str, cbox: float, gamma: float, cfg: RunConfig, seed: int) -> HeldOutScores:
    folds = evaluation.assign_room_folds([it.row for it in items], cfg.train.inner_folds, derive_seed(seed, "inner"))
    n = len(items)
    scene, decision = np.zeros(n), np.zeros(n)
    for f in range(cfg.train.inner_folds):
        tr = [i for i, it in enumerate(items) if folds[it.row.room_id] != f]
        te = [i for i, it in enumerate(items) if folds[it.row.room_id] == f]
        tr_items, te_items = [items[i] for i in tr], [items[i] for i in te]
        pair = fit_scene_pair(tr_items, label, cfg, derive_seed(seed, "inner-scene", f))
        scene[te] = scene_ratios(pair, te_items)
        X, y = _svm_data(tr_items, label)
        model = svm.train(X, y, cbox, gamma, cfg.svm.tol)
        decision[te] = model.decision_function(np.vstack([it.feats.rir for it in te_items]))
    truth = np.array([it.row.label == label for it in items])
    return HeldOutScores(scene, decision, truth)


def train_detector(items: Sequence[Item], label: str, cfg: RunConfig, seed: int) -> fusion.RoomDetector:
    """Grid search, held-out calibration (Platt sigmoid, EER threshold, score
    mixtures), then final scene and response models on all of ``items``."""
    X, y = _svm_data(items, label)
    grid = svm.GridSpec(cfg.svm.cbox, cfg.svm.gamma, cfg.svm.folds)
    cbox, gamma = svm.grid_search(X, y, grid, derive_seed(seed, "grid"), cfg.svm.tol)
    log.info("%s: grid search picked C=%g gamma=%g", label, cbox, gamma)

    held = held_out_scores(items, label, cbox, gamma, cfg, seed)
    platt_a, platt_b = svm.fit_platt(held.decision, np.where(held.truth, 1.0, -1.0))
    rir_ratio = -(platt_a * held.decision + platt_b)
    alpha = cfg.fusion.alpha
    fused = evaluation.fuse(held.scene, rir_ratio, alpha)
    t_c = evaluation.compute_eer(fused[held.truth], fused[~held.truth]).threshold
    shifted = fused - t_c
    dists = fusion.fit_score_distributions(
        shifted[held.truth], shifted[~held.truth], derive_seed(seed, "dists"), cfg.fusion.score_components
    )

    scene = fit_scene_pair(items, label, cfg, derive_seed(seed, "scene"))
    model = svm.calibrate(svm.train(X, y, cbox, gamma, cfg.svm.tol), held.decision, np.where(held.truth, 1.0, -1.0))
    return fusion.RoomDetector(label, scene, model, alpha, float(t_c), dists, cfg.fusion.omega)


def train_bank(items: Sequence[Item], cfg: RunConfig) -> list[fusion.RoomDetector]:
    labels = sorted({it.row.label for it in items})
    if len(labels) < 2:
        raise DataError(f"training needs at least 2 labels, got {labels}")
    bank = []
    for label in labels:
        try:
            bank.append(train_detector(items, label, cfg, derive_seed(cfg.seed, label)))
        except RoomSenseError as exc:
            raise type(exc)(f"training failed for label {label!r}: {exc}") from exc
    return bank


@dataclass
class BankScores:
    """Every detector of a bank applied to a list of recordings."""

    rows: list
    scene: dict = field(default_factory=dict)  # label -> (n,) scene log-likelihood ratios
    rir: dict = field(default_factory=dict)  # label -> (n,) response log-probability ratios
    p: dict = field(default_factory=dict)  # label -> (n,) fused scores with the detector's alpha
    p_shifted: dict = field(default_factory=dict)

    def truth(self, label: str) -> np.ndarray:
        return np.array([r.label == label for r in self.rows])

    @staticmethod
    def concat(parts: Sequence["BankScores"]) -> "BankScores":
        out = BankScores([r for p in parts for r in p.rows])
        for name in ("scene", "rir", "p", "p_shifted"):
            labels = getattr(parts[0], name).keys()
            setattr(out, name, {c: np.concatenate([getattr(p, name)[c] for p in parts]) for c in labels})
        return out


def score_bank(bank: Sequence[fusion.RoomDetector], items: Sequence[Item]) -> BankScores:
    out = BankScores([it.row for it in items])
    for det in bank:
        ratios = np.array([det.ratios(it.feats) for it in items])
        out.scene[det.label], out.rir[det.label] = ratios[:, 0], ratios[:, 1]
        out.p[det.label] = evaluation.fuse(ratios[:, 0], ratios[:, 1], det.alpha)
        out.p_shifted[det.label] = out.p[det.label] - det.t_c
    return out


@dataclass
class RoomTrace:
    room_id: str
    true_label: str
    rows: list  # (recording_index, label, p, p_shifted, confidence)

    def confidences(self, label: str) -> np.ndarray:
        return np.array([r[4] for r in self.rows if r[1] == label])

    def final(self) -> dict:
        return {r[1]: r[4] for r in self.rows} if self.rows else {}


def room_traces(bank: Sequence[fusion.RoomDetector], scores: BankScores) -> list[RoomTrace]:
    """Accumulate each room's recordings (in row order) into a fresh ledger."""
    dets = {d.label: d for d in bank}
    traces = []
    for room in dict.fromkeys(r.room_id for r in scores.rows):
        idx = [i for i, r in enumerate(scores.rows) if r.room_id == room]
        ledger = fusion.ConfidenceLedger.fresh(list(dets), {c: d.omega for c, d in dets.items()})
        rows = []
        for k, i in enumerate(idx, start=1):
            for c, det in dets.items():
                ledger = fusion.update(ledger, c, float(scores.p_shifted[c][i]), det.dists)
                rows.append((k, c, float(scores.p[c][i]), float(scores.p_shifted[c][i]), fusion.confidence(ledger, c)))
        traces.append(RoomTrace(room, scores.rows[idx[0]].label, rows))
    return traces


@dataclass
class EvalReport:
    labels: list
    eer_rows: list  # (label, scene_eer, rir_eer, fused_eer)
    sweep: list  # (alpha, total_eer)
    best_alpha: float
    traces: list
    confusion: np.ndarray
    reach: dict  # label -> first clip index where the mean true-label trace >= target, or None
    folds: list = field(default_factory=list)

    @property
    def total_scene_eer(self) -> float:
        return float(np.mean([r[1] for r in self.eer_rows]))

    @property
    def total_rir_eer(self) -> float:
        return float(np.mean([r[2] for r in self.eer_rows]))

    @property
    def total_fused_eer(self) -> float:
        return float(np.mean([r[3] for r in self.eer_rows]))

    def diagonal_dominant(self) -> np.ndarray:
        return evaluation.diagonal_dominant_rows(self.confusion)

    def summary(self) -> dict:
        sweep = dict(self.sweep)
        return {
            "labels": self.labels,
            "total_scene_eer": self.total_scene_eer,
            "total_rir_eer": self.total_rir_eer,
            "total_fused_eer": self.total_fused_eer,
            "best_alpha": self.best_alpha,
            "best_alpha_total_eer": sweep[self.best_alpha],
            "diagonal_dominant": [bool(v) for v in self.diagonal_dominant()],
            "clips_to_target": {c: self.reach[c] for c in self.labels},
            "folds": self.folds,
        }


def mean_true_trace(traces: Sequence[RoomTrace], label: str) -> np.ndarray:
    curves = [t.confidences(label) for t in traces if t.true_label == label]
    if not curves:
        return np.zeros(0)
    n = min(len(c) for c in curves)
    return np.mean([c[:n] for c in curves], axis=0)


def build_report(bank_per_fold, scores_per_fold, cfg: RunConfig, folds=None) -> EvalReport:
    scores = BankScores.concat(scores_per_fold)
    labels = sorted(scores.scene)
    truth = {c: scores.truth(c) for c in labels}
    eer_rows = []
    for c in labels:
        eer_rows.append((
            c,
            evaluation.label_eer(scores.scene[c], truth[c]),
            evaluation.label_eer(scores.rir[c], truth[c]),
            evaluation.label_eer(scores.p[c], truth[c]),
        ))
    sweep, best = evaluation.sweep_alpha(scores.scene, scores.rir, truth, cfg.eval.alphas)
    traces = [t for bank, s in zip(bank_per_fold, scores_per_fold) for t in room_traces(bank, s)]
    finals = {t.room_id: t.final() for t in traces}
    _, confusion = evaluation.confusion_matrix(finals, {t.room_id: t.true_label for t in traces}, labels)
    reach = {}
    for c in labels:
        curve = mean_true_trace(traces, c)[: cfg.eval.clip_budget]
        hit = np.flatnonzero(curve >= cfg.eval.confidence_target)
        reach[c] = int(hit[0]) + 1 if len(hit) else None
    return EvalReport(labels, eer_rows, sweep, best, traces, confusion, reach, folds or [])


def run_cv(items: Sequence[Item], cfg: RunConfig) -> EvalReport:
    """Room-grouped cross-validation over all items."""
    banks, parts, fold_metrics = [], [], []

    def run_fold(train_rows, test_rows, f):
        keep_train, keep_test = set(map(id, train_rows)), set(map(id, test_rows))
        tr = [it for it in items if id(it.row) in keep_train]
        te = [it for it in items if id(it.row) in keep_test]
        log.info("fold %d: %d training, %d test recordings", f, len(tr), len(te))
        bank = train_bank(tr, cfg)
        s = score_bank(bank, te)
        banks.append(bank)
        parts.append(s)
        labels = sorted(s.scene)
        return {
            "scene_eer": float(np.mean([evaluation.label_eer(s.scene[c], s.truth(c)) for c in labels])),
            "rir_eer": float(np.mean([evaluation.label_eer(s.rir[c], s.truth(c)) for c in labels])),
            "fused_eer": float(np.mean([evaluation.label_eer(s.p[c], s.truth(c)) for c in labels])),
        }

    per_fold, _ = evaluation.cross_validate([it.row for it in items], cfg.eval.folds, cfg.seed, run_fold)
    return build_report(banks, parts, cfg, per_fold)


def run_unseen(items: Sequence[Item], cfg: RunConfig, bank=None) -> EvalReport:
    """Train on buildings outside ``cfg.eval.test_buildings`` (unless a bank is
    given) and evaluate on the held-out buildings only."""
    train_rows, test_rows = evaluation.unseen_building_split([it.row for it in items], cfg.eval.test_buildings)
    test_ids = set(map(id, test_rows))
    tr = [it for it in items if id(it.row) not in test_ids]
    te = [it for it in items if id(it.row) in test_ids]
    bank = train_bank(tr, cfg) if bank is None else bank
    return build_report([bank], [score_bank(bank, te)], cfg)
