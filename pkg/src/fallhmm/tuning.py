"""Proxy-outlier split and internal cross-validation for the inflation factor.

The split trains one HMM per activity on that activity's full data, scores
every training sequence, and rejects sequences whose log-likelihood lies
outside the quartile whiskers ``[Q1 - omega*IQR, Q3 + omega*IQR]``.  The
rejects pool into a proxy-fall validation set used to pick xi by stratified
K-fold cross-validation.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .hmm import TrainConfig, fit, log_likelihood
from .models import (
    DEFAULT_N_STATES,
    build_xhmm1,
    build_xhmm2,
    build_xhmm3,
)

logger = logging.getLogger(__name__)

DEFAULT_OMEGA = 1.5
DEFAULT_XI_GRID = (1.5, 5.0, 10.0, 100.0)
DEFAULT_CV_FOLDS = 3
MIN_SEQUENCES_FOR_SPLIT = 4  # quartiles are unstable below this


def quartiles(scores):
    """(Q1, Q3, IQR) with linear interpolation between order statistics."""
    scores = np.asarray(scores, dtype=np.float64)
    q1 = float(np.percentile(scores, 25))
    q3 = float(np.percentile(scores, 75))
    return q1, q3, q3 - q1


def iqr_outlier_mask(scores, omega=DEFAULT_OMEGA):
    """True where a score lies strictly outside the whiskers."""
    scores = np.asarray(scores, dtype=np.float64)
    q1, q3, iqr = quartiles(scores)
    return (scores > q3 + omega * iqr) | (scores < q1 - omega * iqr)


@dataclass
class OutlierSplit:
    non_fall: dict                 # activity -> retained sequences
    outliers: list                 # (activity, sequence) pairs, pooled
    omega: float
    stats: dict = field(default_factory=dict)  # activity -> (Q1, Q3, IQR)

    @property
    def outlier_sequences(self):
        return [s for _, s in self.outliers]

    @property
    def non_fall_sequences(self):
        return [s for a in sorted(self.non_fall) for s in self.non_fall[a]]


@dataclass
class XiSelection:
    grid: tuple
    k_folds: int
    chosen_xi: float
    mean_gmean: dict               # xi -> mean gmean over folds
    trace: list                    # (xi, fold, gmean) rows


def split_outliers(per_activity_sequences, omega=DEFAULT_OMEGA,
                   n_states=DEFAULT_N_STATES, config=None):
    """Per-activity IQR rejection of training log-likelihood outliers."""
    config = config or TrainConfig()
    non_fall, outliers, stats = {}, [], {}
    for activity in sorted(per_activity_sequences):
        seqs = per_activity_sequences[activity]
        if not seqs:
            raise ValueError(f"activity {activity!r} is empty")
        if len(seqs) < MIN_SEQUENCES_FOR_SPLIT:
            logger.info("activity %r has %d sequence(s); skipping outlier rejection",
                        activity, len(seqs))
            non_fall[activity] = list(seqs)
            continue
        model, _ = fit(seqs, n_states, config)
        # per-step scores, so sequences of different lengths are comparable
        scores = np.array([log_likelihood(model, s) / len(s) for s in seqs])
        stats[activity] = quartiles(scores)
        mask = iqr_outlier_mask(scores, omega)
        non_fall[activity] = [s for s, is_out in zip(seqs, mask) if not is_out]
        outliers.extend((activity, s) for s, is_out in zip(seqs, mask) if is_out)
    return OutlierSplit(non_fall=non_fall, outliers=outliers, omega=omega, stats=stats)


def stratified_folds(per_activity, k, seed):
    """Seeded K-fold partition keeping every activity present in each training set.

    Returns a list of K dicts mapping activity -> held-out sequence list.
    """
    rng = np.random.default_rng(seed)
    folds = [dict() for _ in range(k)]
    for activity in sorted(per_activity):
        seqs = list(per_activity[activity])
        order = rng.permutation(len(seqs))
        for fold in folds:
            fold[activity] = []
        for pos, idx in enumerate(order):
            folds[pos % k][activity].append(seqs[idx])
    for i, fold in enumerate(folds):
        train_counts = {
            a: len(per_activity[a]) - len(fold[a]) for a in per_activity
        }
        starved = [a for a, c in train_counts.items() if c == 0 and len(per_activity[a]) > 1]
        if starved:
            raise ValueError(f"fold {i} starves activities {starved}; reduce K")
    return folds


def _gmean(verdicts, truths):
    verdicts = np.asarray(verdicts, dtype=bool)
    truths = np.asarray(truths, dtype=bool)
    pos, neg = truths, ~truths
    tpr = (verdicts & pos).sum() / pos.sum() if pos.any() else 0.0
    tnr = (~verdicts & neg).sum() / neg.sum() if neg.any() else 0.0
    return float(np.sqrt(tpr * tnr))


def _train_base(variant, per_activity_train, n_states, config):
    """The xi-independent part of the training for one fold."""
    if variant == "xhmm1":
        return {a: fit(seqs, n_states, config)[0] for a, seqs in sorted(per_activity_train.items())}
    if variant == "xhmm2":
        pooled = [s for a in sorted(per_activity_train) for s in per_activity_train[a]]
        return fit(pooled, n_states, config)[0]
    if variant == "xhmm3":
        return [s for a in sorted(per_activity_train) for s in per_activity_train[a]]
    raise ValueError(f"xi selection applies to {('xhmm1', 'xhmm2', 'xhmm3')}, not {variant!r}")


def build_xfactor(variant, base, xi):
    if variant == "xhmm1":
        return build_xhmm1(base, xi)
    if variant == "xhmm2":
        return build_xhmm2(base, xi)
    return build_xhmm3(base, xi)


def _score_detector(variant, detector, held_out, outliers):
    verdicts, truths = [], []
    for seq in held_out:
        if variant == "xhmm3":
            verdicts.extend(v.is_fall for v in detector.classify_windows(seq))
            truths.extend([False] * len(seq))
        else:
            verdicts.append(detector.classify(seq).is_fall)
            truths.append(False)
    for seq in outliers:
        if variant == "xhmm3":
            verdicts.extend(v.is_fall for v in detector.classify_windows(seq))
            truths.extend([True] * len(seq))
        else:
            verdicts.append(detector.classify(seq).is_fall)
            truths.append(True)
    return _gmean(verdicts, truths)


def select_xi(variant, split, grid=DEFAULT_XI_GRID, k_folds=DEFAULT_CV_FOLDS,
              seed=0, n_states=DEFAULT_N_STATES, config=None):
    """Pick xi maximizing K-fold mean gmean; ties go to the smallest candidate.

    Each fold trains on (K-1)/K of the non-fall data and is scored on the
    held-out non-fall fraction (ground truth: normal) plus all pooled
    outliers (ground truth: proxy fall).
    """
    grid = tuple(grid)
    if not grid:
        raise ValueError("xi grid is empty")
    if not split.outliers:
        raise ValueError("outlier set is empty; lower omega before selecting xi")
    config = config or TrainConfig()
    folds = stratified_folds(split.non_fall, k_folds, seed)
    outlier_seqs = split.outlier_sequences

    trace = []
    scores = {xi: [] for xi in grid}
    for fold_idx, held in enumerate(folds):
        train = {
            a: [s for s in split.non_fall[a] if not any(s is h for h in held[a])]
            for a in split.non_fall
        }
        train = {a: seqs for a, seqs in train.items() if seqs}
        held_seqs = [s for a in sorted(held) for s in held[a]]
        base = _train_base(variant, train, n_states, config)
        for xi in grid:
            detector = build_xfactor(variant, base, xi)
            g = _score_detector(variant, detector, held_seqs, outlier_seqs)
            scores[xi].append(g)
            trace.append((xi, fold_idx, g))

    mean_gmean = {xi: float(np.mean(scores[xi])) for xi in grid}
    chosen = max(grid, key=lambda xi: (mean_gmean[xi], -xi))
    return XiSelection(grid=grid, k_folds=k_folds, chosen_xi=chosen,
                       mean_gmean=mean_gmean, trace=trace)
