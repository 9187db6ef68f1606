"""Leave-one-subject-out evaluation, metrics and the synthetic generator.

The dataset unit is a labelled window: per-frame feature vectors (pose-level
models) plus one window-level vector (activity-level models).  LOOCV runs
the full per-fold pipeline -- standardize on the training subjects, IQR
outlier split, xi selection, retraining -- so nothing from the test subject
leaks into training.
"""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import FALL_LABEL
from .features import ObservationSequence, Standardizer
from .hmm import GaussianHmm, TrainConfig
from .models import (
    DEFAULT_N_STATES,
    train_hmm1,
    train_hmm2,
    train_hmm_normout,
    train_ocnn,
    train_supervised,
)
from .tuning import (
    DEFAULT_CV_FOLDS,
    DEFAULT_OMEGA,
    DEFAULT_XI_GRID,
    build_xfactor,
    select_xi,
    split_outliers,
)

logger = logging.getLogger(__name__)

POSE_VARIANTS = ("hmm1", "hmm2", "xhmm1", "xhmm2", "hmm_normout", "hmm1_sup", "hmm2_sup")
WINDOW_VARIANTS = ("xhmm3", "hmm3_sup", "ocnn")


# ---------------------------------------------------------------------------
# dataset model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowObs:
    """One labelled window: frame-level vectors plus its window-level vector."""

    subject_id: str
    order: int            # position in the subject's timeline
    label: str
    frames: np.ndarray    # (L, D)

    def __post_init__(self):
        object.__setattr__(self, "frames", np.atleast_2d(np.asarray(self.frames, dtype=np.float64)))

    @property
    def vector(self):
        return self.frames.mean(axis=0)


def subjects_of(dataset):
    return sorted({w.subject_id for w in dataset})


def windows_to_csv(path, dataset):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        d = dataset[0].frames.shape[1]
        writer.writerow(["subject", "window", "label", "frame"] + [f"f{i}" for i in range(1, d + 1)])
        for w in dataset:
            for k, row in enumerate(w.frames):
                writer.writerow([w.subject_id, w.order, w.label, k] + [repr(float(v)) for v in row])


def windows_from_csv(path):
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = [c for c in reader.fieldnames
                  if c.startswith("f") and c[1:].isdigit()]
        for row in reader:
            key = (row["subject"], int(row["window"]), row["label"])
            groups.setdefault(key, []).append([float(row[c]) for c in fields])
    dataset = [
        WindowObs(subject_id=sub, order=order, label=label, frames=np.array(frames))
        for (sub, order, label), frames in groups.items()
    ]
    dataset.sort(key=lambda w: (w.subject_id, w.order))
    return dataset


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class FoldMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self):
        pos = self.tp + self.fn
        return self.tp / pos if pos else math.nan

    @property
    def tnr(self):
        neg = self.tn + self.fp
        return self.tn / neg if neg else math.nan

    @property
    def gmean(self):
        return math.sqrt(self.tpr * self.tnr)

    @property
    def fdr(self):
        return self.tpr

    @property
    def far(self):
        tnr = self.tnr
        return math.nan if math.isnan(tnr) else 1.0 - tnr


def compute_metrics(verdicts, truths):
    """Confusion counts with fall as the positive class."""
    verdicts = [bool(v) for v in verdicts]
    truths = [bool(t) for t in truths]
    if not verdicts or len(verdicts) != len(truths):
        raise ValueError("verdicts and truths must be nonempty and equal length")
    tp = sum(v and t for v, t in zip(verdicts, truths))
    fp = sum(v and not t for v, t in zip(verdicts, truths))
    tn = sum(not v and not t for v, t in zip(verdicts, truths))
    fn = sum(not v and t for v, t in zip(verdicts, truths))
    m = FoldMetrics(tp=tp, fp=fp, tn=tn, fn=fn)
    if math.isnan(m.tpr) or math.isnan(m.tnr):
        logger.info("a class is absent from the fold truth; its rate is NaN")
    return m


@dataclass
class FoldResult:
    subject_id: str
    metrics: FoldMetrics
    chosen_xi: float | None = None

    def to_dict(self):
        m = self.metrics

        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "subject_id": self.subject_id,
            "tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn,
            "tpr": clean(m.tpr), "tnr": clean(m.tnr),
            "gmean": clean(m.gmean), "fdr": clean(m.fdr), "far": clean(m.far),
            "chosen_xi": self.chosen_xi,
        }


@dataclass
class EvalReport:
    variant: str
    folds: list
    config: dict = field(default_factory=dict)

    def summary(self):
        """Unweighted means over folds; NaN fold rates are excluded."""
        out = {}
        for name in ("gmean", "fdr", "far"):
            values = [getattr(f.metrics, name) for f in self.folds]
            values = [v for v in values if not math.isnan(v)]
            out[name] = float(np.mean(values)) if values else None
        return out

    def to_dict(self):
        return {
            "variant": self.variant,
            "config": self.config,
            "folds": [f.to_dict() for f in self.folds],
            "summary": self.summary(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "subject", "tp", "fp", "tn", "fn",
                             "tpr", "tnr", "gmean", "fdr", "far", "chosen_xi"])
            for f in self.folds:
                d = f.to_dict()
                writer.writerow([self.variant, d["subject_id"], d["tp"], d["fp"], d["tn"],
                                 d["fn"], d["tpr"], d["tnr"], d["gmean"], d["fdr"],
                                 d["far"], d["chosen_xi"]])


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Archetype-driven generator for ground-truth labelled windows.

    Normal windows are emitted by per-activity Gaussian HMM archetypes; fall
    windows come from the inflated fall archetype.  A small fraction of
    normal windows ("artifacts") is re-emitted with strongly inflated noise
    while keeping its normal label -- the spurious readings that drag the
    max-NLL threshold and that the IQR split is meant to reject.
    """

    activities: dict               # name -> GaussianHmm archetype
    fall: GaussianHmm
    n_subjects: int = 5
    windows_per_subject: int = 120
    frames_per_window: int = 8
    fall_prevalence: float = 0.05
    artifact_rate: float = 0.03
    artifact_scale: float = 25.0
    activity_persistence: float = 0.9

    def __post_init__(self):
        if len(self.activities) < 2:
            raise ValueError("need at least 2 activity archetypes")


def default_synth_config(n_activities=3, n_dims=3, fall_inflation=6.0, separation=4.0, **kw):
    """Well-separated activity archetypes plus a centroid fall archetype."""
    names = [f"act{i}" for i in range(n_activities)]
    activities = {}
    centers = []
    for i, name in enumerate(names):
        center = np.zeros(n_dims)
        center[i % n_dims] = separation * (1 + i // n_dims)
        centers.append(center)
        means = np.stack([center - 0.5, center + 0.5])
        activities[name] = GaussianHmm(
            prior=np.array([0.5, 0.5]),
            trans=np.array([[0.8, 0.2], [0.2, 0.8]]),
            means=means,
            diag_covs=np.full((2, n_dims), 1.0),
        )
    centroid = np.mean(centers, axis=0)
    fall = GaussianHmm(
        prior=np.array([1.0]),
        trans=np.array([[1.0]]),
        means=centroid[None, :],
        diag_covs=np.full((1, n_dims), fall_inflation),
    )
    return SynthConfig(activities=activities, fall=fall, **kw)


def _sample_hmm(model, length, rng, scale=1.0):
    states = np.empty(length, dtype=int)
    states[0] = rng.choice(model.n_states, p=model.prior)
    for t in range(1, length):
        states[t] = rng.choice(model.n_states, p=model.trans[states[t - 1]])
    std = np.sqrt(model.diag_covs[states] * scale)
    return model.means[states] + rng.standard_normal((length, model.n_dims)) * std


def generate_synthetic(config, seed):
    """Seeded, reproducible multi-subject window dataset with ground truth."""
    rng = np.random.default_rng(seed)
    names = sorted(config.activities)
    n_act = len(names)
    p_stay = config.activity_persistence
    dataset = []
    for s in range(config.n_subjects):
        subject = f"subj{s:02d}"
        activity = int(rng.integers(n_act))
        for order in range(config.windows_per_subject):
            if config.fall_prevalence > 0 and rng.random() < config.fall_prevalence:
                frames = _sample_hmm(config.fall, config.frames_per_window, rng)
                label = FALL_LABEL
            else:
                scale = config.artifact_scale if rng.random() < config.artifact_rate else 1.0
                frames = _sample_hmm(
                    config.activities[names[activity]], config.frames_per_window, rng, scale
                )
                label = names[activity]
                if rng.random() > p_stay:
                    others = [a for a in range(n_act) if a != activity]
                    activity = int(others[rng.integers(len(others))])
            dataset.append(WindowObs(subject_id=subject, order=order, label=label, frames=frames))
    return dataset


# ---------------------------------------------------------------------------
# LOOCV pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    n_states: int = DEFAULT_N_STATES
    omega: float = DEFAULT_OMEGA
    xi_grid: tuple = DEFAULT_XI_GRID
    k_folds: int = DEFAULT_CV_FOLDS
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    feature_mask: tuple | None = None


def _mask(x, config):
    if config.feature_mask is None:
        return x
    return np.asarray(x)[..., np.array(config.feature_mask, dtype=bool)]


def _pose_sequence(w, std, config):
    return ObservationSequence(
        vectors=std.transform(_mask(w.frames, config)), label=w.label, subject_id=w.subject_id
    )


def _window_runs(windows, std, config, same_label_only=False):
    """Runs of consecutive windows (one standardized vector each).

    A run breaks on a subject change, a timeline gap, a fall window (the fall
    is kept as the run's last step), or -- when ``same_label_only`` -- any
    label change.
    """
    runs = []
    current = []

    def flush():
        if current:
            labels = tuple(w.label for w in current)
            runs.append(
                ObservationSequence(
                    vectors=std.transform(np.stack([_mask(w.vector, config) for w in current])),
                    label=FALL_LABEL if labels[-1] == FALL_LABEL else labels[0],
                    subject_id=current[0].subject_id,
                    vector_labels=labels,
                )
            )
            current.clear()

    for w in windows:
        if current:
            prev = current[-1]
            broken = (
                w.subject_id != prev.subject_id
                or w.order != prev.order + 1
                or (same_label_only and w.label != prev.label)
            )
            if broken:
                flush()
        current.append(w)
        if w.label == FALL_LABEL:
            flush()
    flush()
    return runs


def _group_pose(windows, std, config):
    groups = {}
    for w in windows:
        groups.setdefault(w.label, []).append(_pose_sequence(w, std, config))
    return groups


def _fit_standardizer(train_windows, level, config):
    data = (
        np.concatenate([_mask(w.frames, config) for w in train_windows])
        if level == "frame"
        else np.stack([_mask(w.vector, config) for w in train_windows])
    )
    return Standardizer().fit(data)


def _train_detector(variant, train_normal, train_falls, config):
    """Train one fold's detector. Returns (detector, standardizer, chosen_xi)."""
    level = "frame" if variant in POSE_VARIANTS else "window"
    std = _fit_standardizer(train_normal, level, config)
    chosen_xi = None
    tcfg = replace(config.train, seed=config.seed)

    if variant in ("hmm1", "hmm2", "hmm1_sup", "hmm2_sup"):
        per_activity = _group_pose(train_normal, std, config)
        pooled = [s for a in sorted(per_activity) for s in per_activity[a]]
        if variant == "hmm1":
            det = train_hmm1(per_activity, config.n_states, tcfg)
        elif variant == "hmm2":
            det = train_hmm2(pooled, config.n_states, tcfg)
        else:
            falls = [_pose_sequence(w, std, config) for w in train_falls]
            det = train_supervised(variant, pooled, falls, config.n_states, tcfg)
    elif variant in ("xhmm1", "xhmm2", "xhmm3"):
        if variant == "xhmm3":
            per_activity = _runs_by_activity(train_normal, std, config)
        else:
            per_activity = _group_pose(train_normal, std, config)
        split = split_outliers(per_activity, config.omega, config.n_states, tcfg)
        if split.outliers:
            sel = select_xi(variant, split, config.xi_grid, config.k_folds,
                            config.seed, config.n_states, tcfg)
            chosen_xi = sel.chosen_xi
        else:
            chosen_xi = min(config.xi_grid)
            logger.warning("no training outliers to tune xi against; "
                           "falling back to xi=%s", chosen_xi)
        from .tuning import _train_base  # xi-independent retraining on full non-fall data

        base = _train_base(variant, split.non_fall, config.n_states, tcfg)
        det = build_xfactor(variant, base, chosen_xi)
    elif variant == "hmm3_sup":
        runs = _window_runs(sorted(train_normal, key=lambda w: (w.subject_id, w.order)), std, config)
        falls = [
            ObservationSequence(
                vectors=std.transform(_mask(w.vector, config))[None, :],
                label=FALL_LABEL, subject_id=w.subject_id,
            )
            for w in train_falls
        ]
        det = train_supervised("hmm3_sup", runs, falls)
    elif variant == "hmm_normout":
        per_activity = _group_pose(train_normal, std, config)
        split = split_outliers(per_activity, config.omega, config.n_states, tcfg)
        det = train_hmm_normout(split.non_fall_sequences, split.outlier_sequences,
                                config.n_states, tcfg)
    elif variant == "ocnn":
        det = train_ocnn(np.stack([std.transform(_mask(w.vector, config)) for w in train_normal]))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return det, std, chosen_xi


def _runs_by_activity(train_normal, std, config):
    """Same-label runs grouped per activity (for the activity-level split)."""
    ordered = sorted(train_normal, key=lambda w: (w.subject_id, w.order))
    runs = _window_runs(ordered, std, config, same_label_only=True)
    per_activity = {}
    for r in runs:
        per_activity.setdefault(r.label, []).append(r)
    return per_activity


def _classify_fold(variant, detector, std, test_windows, config):
    """Per-window verdicts and truths for the held-out subject."""
    verdicts, truths = [], []
    if variant in ("xhmm3", "hmm3_sup"):
        ordered = sorted(test_windows, key=lambda w: (w.subject_id, w.order))
        for run in _window_runs(ordered, std, config):
            vs = detector.classify_windows(run)
            verdicts.extend(v.is_fall for v in vs)
            truths.extend(lab == FALL_LABEL for lab in run.vector_labels)
    elif variant == "ocnn":
        for w in test_windows:
            seq = ObservationSequence(
                vectors=std.transform(_mask(w.vector, config))[None, :],
                label=w.label, subject_id=w.subject_id,
            )
            verdicts.append(detector.classify(seq).is_fall)
            truths.append(w.label == FALL_LABEL)
    else:
        for w in test_windows:
            verdicts.append(detector.classify(_pose_sequence(w, std, config)).is_fall)
            truths.append(w.label == FALL_LABEL)
    return verdicts, truths


def _run_fold(args):
    dataset, variant, config, test_subject, fall_cap = args
    train = [w for w in dataset if w.subject_id != test_subject]
    test = [w for w in dataset if w.subject_id == test_subject]
    train_normal = [w for w in train if w.label != FALL_LABEL]
    train_falls = [w for w in train if w.label == FALL_LABEL]
    if fall_cap is not None:
        count, sub_seed = fall_cap
        if count > len(train_falls):
            logger.warning("fold %s: requested %d falls, only %d available",
                           test_subject, count, len(train_falls))
            count = len(train_falls)
        rng = np.random.default_rng(sub_seed)
        idx = rng.choice(len(train_falls), size=count, replace=False)
        train_falls = [train_falls[i] for i in sorted(idx)]
    detector, std, chosen_xi = _train_detector(variant, train_normal, train_falls, config)
    verdicts, truths = _classify_fold(variant, detector, std, test, config)
    return FoldResult(subject_id=test_subject, metrics=compute_metrics(verdicts, truths),
                      chosen_xi=chosen_xi)


def loocv(dataset, variant, config=None, jobs=1, fall_counts_per_fold=None):
    """Leave-one-subject-out evaluation of one detector variant."""
    config = config or PipelineConfig()
    subjects = subjects_of(dataset)
    if len(subjects) < 2:
        raise ValueError("LOOCV needs at least 2 subjects")
    if variant in ("hmm1_sup", "hmm2_sup", "hmm3_sup"):
        if not any(w.label == FALL_LABEL for w in dataset):
            raise ValueError(f"variant {variant!r} requires fall data in the dataset")
    tasks = [
        (dataset, variant, config, subject,
         None if fall_counts_per_fold is None else fall_counts_per_fold[i])
        for i, subject in enumerate(subjects)
    ]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold, tasks))
    else:
        folds = [_run_fold(t) for t in tasks]
    snapshot = {
        "variant": variant, "n_states": config.n_states, "omega": config.omega,
        "xi_grid": list(config.xi_grid), "k_folds": config.k_folds, "seed": config.seed,
    }
    return EvalReport(variant=variant, folds=folds, config=snapshot)


DEFAULT_INJECTION_COUNTS = (1, 2, 4, 6, 8, 10, 25, 50)


@dataclass
class InjectionPoint:
    count: int
    mean_gmean: float
    std_gmean: float
    mean_fdr: float
    mean_far: float


def fall_injection_curve(dataset, variant, counts=DEFAULT_INJECTION_COUNTS,
                         repeats=10, seed=0, config=None, jobs=1):
    """Mean metrics as the number of training falls grows (seeded subsets)."""
    if variant not in ("hmm1_sup", "hmm2_sup", "hmm3_sup"):
        raise ValueError("the injection experiment applies to the supervised variants")
    if any(c < 1 for c in counts):
        raise ValueError("fall counts must be >= 1")
    config = config or PipelineConfig()
    subjects = subjects_of(dataset)
    curve = []
    for count in counts:
        gmeans, fdrs, fars = [], [], []
        for rep in range(repeats):
            caps = [
                (count, _derive_seed(seed, count, rep, i))
                for i in range(len(subjects))
            ]
            report = loocv(dataset, variant, config, jobs=jobs, fall_counts_per_fold=caps)
            s = report.summary()
            gmeans.append(s["gmean"])
            fdrs.append(s["fdr"])
            fars.append(s["far"])
        curve.append(InjectionPoint(
            count=count,
            mean_gmean=float(np.mean(gmeans)), std_gmean=float(np.std(gmeans)),
            mean_fdr=float(np.mean(fdrs)), mean_far=float(np.mean(fars)),
        ))
    return curve


def _derive_seed(master, *parts):
    return int(np.random.SeedSequence([master, *parts]).generate_state(1)[0])


def outlier_vs_fall_diagnostic(dataset, variant, config=None):
    """Fraction of proxy outliers classified as fall, per source activity.

    Trains the supervised detector on (non-fall, falls) and presents the
    pooled outliers at test time.
    """
    if variant not in ("hmm1_sup", "hmm2_sup"):
        raise ValueError("the diagnostic uses hmm1_sup or hmm2_sup")
    config = config or PipelineConfig()
    falls = [w for w in dataset if w.label == FALL_LABEL]
    if not falls:
        raise ValueError("no fall data available for the supervised diagnostic")
    normal = [w for w in dataset if w.label != FALL_LABEL]
    std = _fit_standardizer(normal, "frame", config)
    tcfg = replace(config.train, seed=config.seed)
    per_activity = _group_pose(normal, std, config)
    split = split_outliers(per_activity, config.omega, config.n_states, tcfg)
    if not split.outliers:
        raise ValueError("no outliers rejected; use a smaller omega")
    non_fall = split.non_fall_sequences
    fall_seqs = [_pose_sequence(w, std, config) for w in falls]
    det = train_supervised(variant, non_fall, fall_seqs, config.n_states, tcfg)
    flagged, totals = {}, {}
    for activity, seq in split.outliers:
        totals[activity] = totals.get(activity, 0) + 1
        if det.classify(seq).is_fall:
            flagged[activity] = flagged.get(activity, 0) + 1
    return {a: flagged.get(a, 0) / totals[a] for a in sorted(totals)}
