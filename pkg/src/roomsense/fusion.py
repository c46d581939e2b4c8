"""Score fusion and incremental per-label confidence.

For each recording a detector fuses the scene and response log-likelihood
ratios, ``p = alpha * L_A + (1 - alpha) * L_R``, shifts by its threshold t_C,
and looks the shifted score up in two 1-D mixtures (label present / absent).
A ledger keeps the running sums of those log densities, from which the
posterior ``prod P(p'|C) / (prod P(p'|C) + omega * prod P(p'|not C))`` is
read in log form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import gmm, svm
from .dsp import AudioClip
from .errors import DataError, RoomSenseError
from .features import FeatureConfig, RecordingFeatures, extract

LOG_DENSITY_FLOOR = math.log(1e-300)
DEFAULT_ALPHA = 0.10
DEFAULT_OMEGA = 4.0


class HybridScore(NamedTuple):
    p: float
    p_shifted: float


def hybrid_score(scene_ratio: float, rir_ratio: float, alpha: float, t_c: float) -> HybridScore:
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha must lie in [0, 1], got {alpha}")
    if not (math.isfinite(scene_ratio) and math.isfinite(rir_ratio) and math.isfinite(t_c)):
        raise DataError("hybrid_score inputs must be finite")
    p = alpha * scene_ratio + (1.0 - alpha) * rir_ratio
    return HybridScore(p, p - t_c)


@dataclass(frozen=True, eq=False)
class ScoreDistributions:
    pos: gmm.GaussianMixture
    neg: gmm.GaussianMixture


def fit_score_distributions(pos_scores, neg_scores, seed: int = 0, n_components: int = 4,
                            cfg: gmm.GmmConfig | None = None) -> ScoreDistributions:
    cfg = cfg or gmm.GmmConfig(n_components=n_components, max_iters=200, rel_tol=1e-8)
    for name, s in (("positive", pos_scores), ("negative", neg_scores)):
        if len(s) < cfg.n_components:
            raise DataError(f"need at least {cfg.n_components} {name} scores, got {len(s)}")
    pos = gmm.fit(np.asarray(pos_scores, dtype=np.float64), seed=seed, cfg=cfg)
    neg = gmm.fit(np.asarray(neg_scores, dtype=np.float64), seed=seed, cfg=cfg)
    return ScoreDistributions(pos, neg)


@dataclass(frozen=True)
class LedgerEntry:
    n: int = 0
    sum_log_pos: float = 0.0
    sum_log_neg: float = 0.0
    omega: float = DEFAULT_OMEGA

    def __post_init__(self):
        if not self.omega > 0:
            raise DataError(f"omega must be positive, got {self.omega}")


@dataclass(frozen=True)
class ConfidenceLedger:
    """Running evidence per label; updates return a new ledger."""

    entries: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, labels, omega=DEFAULT_OMEGA) -> "ConfidenceLedger":
        omegas = omega if isinstance(omega, dict) else {c: omega for c in labels}
        return cls({c: LedgerEntry(omega=float(omegas[c])) for c in labels})


def clamped_log_density(model: gmm.GaussianMixture, x: float) -> float:
    return max(float(model.log_pdf(x)), LOG_DENSITY_FLOOR)


def update(ledger: ConfidenceLedger, label: str, p_shifted: float, dists: ScoreDistributions) -> ConfidenceLedger:
    if label not in ledger.entries:
        raise DataError(f"ledger has no entry for label {label!r}")
    e = ledger.entries[label]
    new = LedgerEntry(
        e.n + 1,
        e.sum_log_pos + clamped_log_density(dists.pos, p_shifted),
        e.sum_log_neg + clamped_log_density(dists.neg, p_shifted),
        e.omega,
    )
    return ConfidenceLedger({**ledger.entries, label: new})


def confidence_from_sums(sum_log_pos: float, sum_log_neg: float, omega: float) -> float:
    z = math.log(omega) + sum_log_neg - sum_log_pos
    # 1 / (1 + e^z), evaluated without overflow for either sign of z
    if z >= 0:
        ez = math.exp(-z)
        return ez / (1.0 + ez)
    return 1.0 / (1.0 + math.exp(z))


def confidence(ledger: ConfidenceLedger, label: str) -> float:
    if label not in ledger.entries:
        raise DataError(f"ledger has no entry for label {label!r}")
    e = ledger.entries[label]
    return confidence_from_sums(e.sum_log_pos, e.sum_log_neg, e.omega)


@dataclass(frozen=True, eq=False)
class RoomDetector:
    label: str
    scene: gmm.ScenePair
    rir: svm.SvmModel
    alpha: float
    t_c: float
    dists: ScoreDistributions
    omega: float = DEFAULT_OMEGA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.omega > 0:
            raise DataError("omega must be positive")

    def ratios(self, feats: RecordingFeatures) -> tuple[float, float]:
        """(scene log-likelihood ratio, response log-probability ratio)."""
        la_in, la_out = gmm.sequence_score(self.scene, feats.frames)
        lr_in, lr_out = svm.predict_log_probs(self.rir, feats.rir)
        return la_in - la_out, lr_in - lr_out

    def score(self, feats: RecordingFeatures) -> HybridScore:
        la, lr = self.ratios(feats)
        return hybrid_score(la, lr, self.alpha, self.t_c)


class LabelOutcome(NamedTuple):
    label: str
    p: float
    p_shifted: float
    confidence: float
    error: str | None = None


def infer_recording(detectors, clip: AudioClip, ledger: ConfidenceLedger,
                    feature_cfg: FeatureConfig = FeatureConfig(), feats: RecordingFeatures | None = None):
    """Score one recording against every detector and absorb it into the ledger.

    Features are computed once and shared across labels. A label whose scoring
    fails keeps its ledger entry untouched and reports the error; the remaining
    labels proceed. Returns (new ledger, list of LabelOutcome).
    """
    outcomes = []
    try:
        feats = extract(clip, feature_cfg) if feats is None else feats
    except RoomSenseError as exc:
        return ledger, [LabelOutcome(d.label, math.nan, math.nan, confidence(ledger, d.label), str(exc)) for d in detectors]
    for det in detectors:
        try:
            hs = det.score(feats)
            ledger = update(ledger, det.label, hs.p_shifted, det.dists)
            outcomes.append(LabelOutcome(det.label, hs.p, hs.p_shifted, confidence(ledger, det.label)))
        except RoomSenseError as exc:
            outcomes.append(LabelOutcome(det.label, math.nan, math.nan, confidence(ledger, det.label), str(exc)))
    return ledger, outcomes


def with_alpha(det: RoomDetector, alpha: float) -> RoomDetector:
    return replace(det, alpha=alpha)
