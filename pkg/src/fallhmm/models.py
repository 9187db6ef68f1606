"""The fall-detector zoo behind one classify contract.

Nine variants:

* ``hmm1`` / ``hmm2``  -- per-activity / pooled HMMs with max-NLL thresholds.
* ``xhmm1`` / ``xhmm2`` -- the same models plus an alternate "X-factor" HMM
  whose covariances are the (averaged) normal covariances inflated by xi;
  classification is argmax log-likelihood, fall iff the alternate wins.
* ``xhmm3`` -- one activity-level HMM (a state per activity) with an extra
  novel state for falls; Viterbi decoding flags the windows decoded into it.
* ``hmm_normout`` -- argmax between a non-fall HMM and an HMM trained on the
  rejected outlier sequences.
* ``hmm1_sup`` / ``hmm2_sup`` / ``hmm3_sup`` -- supervised counterparts where
  the fall model/state is estimated from real fall data instead of inflation.
* ``ocnn`` -- one-class 1-NN baseline on window-level feature vectors.

Argmax ties break toward "normal" (conservative on false alarms).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import FALL_LABEL
from .hmm import GaussianHmm, TrainConfig, fit, log_likelihood, viterbi
from .hmm.core import MODEL_FORMAT_VERSION, VAR_FLOOR

DEFAULT_N_STATES = 4

FALL_SELF_TRANSITION = 0.95
NORMAL_TO_FALL = 0.05

NORMAL_KEY = "normal"

VARIANTS = (
    "hmm1", "hmm2", "xhmm1", "xhmm2", "xhmm3",
    "hmm_normout", "hmm1_sup", "hmm2_sup", "hmm3_sup", "ocnn",
)
XFACTOR_VARIANTS = ("xhmm1", "xhmm2", "xhmm3")
SUPERVISED_VARIANTS = ("hmm1_sup", "hmm2_sup", "hmm3_sup")


@dataclass(frozen=True)
class Verdict:
    is_fall: bool
    winning_label: str
    per_model_loglik: dict | None = None
    decoded_path: np.ndarray | None = None


def _vectors(seq):
    x = np.asarray(getattr(seq, "vectors", seq), dtype=np.float64)
    return x if x.ndim == 2 else x[:, None]


class FallDetector:
    """Uniform classify contract over the trained variants."""

    variant: str

    def classify(self, seq) -> Verdict:
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d):
        kind = d.get("kind")
        cls = {
            "threshold": ThresholdDetector,
            "argmax": ArgmaxDetector,
            "state_space": StateSpaceDetector,
            "ocnn": OcnnDetector,
        }.get(kind)
        if cls is None:
            raise ValueError(f"unknown detector kind {kind!r}")
        return cls._from_dict(d)

    @staticmethod
    def from_json(s):
        return FallDetector.from_dict(json.loads(s))


def _common_meta(det):
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "variant": det.variant,
        "feature_mask": None if det.feature_mask is None else np.asarray(det.feature_mask).astype(int).tolist(),
        "standardizer": det.standardizer,
    }


@dataclass
class ThresholdDetector(FallDetector):
    """HMM1/HMM2: fall iff the NLL exceeds every model's max-training-NLL."""

    variant: str
    models: dict            # label -> GaussianHmm
    thresholds: dict        # label -> max negative log-likelihood on training data
    feature_mask: np.ndarray | None = None
    standardizer: dict | None = None

    def classify(self, seq):
        logliks = {lab: log_likelihood(m, seq) for lab, m in self.models.items()}
        is_fall = all(-ll > self.thresholds[lab] for lab, ll in logliks.items())
        winning = FALL_LABEL if is_fall else max(logliks, key=lambda lab: (logliks[lab], lab))
        return Verdict(is_fall=is_fall, winning_label=winning, per_model_loglik=logliks)

    def to_dict(self):
        d = _common_meta(self)
        d.update(
            kind="threshold",
            models={lab: m.to_dict() for lab, m in self.models.items()},
            thresholds=dict(self.thresholds),
        )
        return d

    @classmethod
    def _from_dict(cls, d):
        return cls(
            variant=d["variant"],
            models={lab: GaussianHmm.from_dict(m) for lab, m in d["models"].items()},
            thresholds=dict(d["thresholds"]),
            feature_mask=None if d["feature_mask"] is None else np.array(d["feature_mask"], dtype=bool),
            standardizer=d["standardizer"],
        )


@dataclass
class ArgmaxDetector(FallDetector):
    """Argmax over normal models plus one fall model; ties go to normal."""

    variant: str
    models: dict                 # label -> GaussianHmm, normal activities only
    fall_model: GaussianHmm
    xi: float | None = None      # inflation factor, X-factor variants only
    feature_mask: np.ndarray | None = None
    standardizer: dict | None = None

    def classify(self, seq):
        logliks = {lab: log_likelihood(m, seq) for lab, m in self.models.items()}
        fall_ll = log_likelihood(self.fall_model, seq)
        best_lab = max(logliks, key=lambda lab: (logliks[lab], lab))
        is_fall = fall_ll > logliks[best_lab]  # strict: ties break toward normal
        logliks[FALL_LABEL] = fall_ll
        return Verdict(
            is_fall=is_fall,
            winning_label=FALL_LABEL if is_fall else best_lab,
            per_model_loglik=logliks,
        )

    def to_dict(self):
        d = _common_meta(self)
        d.update(
            kind="argmax",
            models={lab: m.to_dict() for lab, m in self.models.items()},
            fall_model=self.fall_model.to_dict(),
            xi=self.xi,
        )
        return d

    @classmethod
    def _from_dict(cls, d):
        return cls(
            variant=d["variant"],
            models={lab: GaussianHmm.from_dict(m) for lab, m in d["models"].items()},
            fall_model=GaussianHmm.from_dict(d["fall_model"]),
            xi=d["xi"],
            feature_mask=None if d["feature_mask"] is None else np.array(d["feature_mask"], dtype=bool),
            standardizer=d["standardizer"],
        )


@dataclass
class StateSpaceDetector(FallDetector):
    """XHMM3/HMM3_sup: activity-per-state HMM with a novel fall state."""

    variant: str
    model: GaussianHmm           # N activities + 1 fall state (last index)
    activity_names: tuple
    xi: float | None = None
    feature_mask: np.ndarray | None = None
    standardizer: dict | None = None

    @property
    def fall_state(self):
        return len(self.activity_names)

    def classify_windows(self, seq):
        """Per-window verdicts along a run of consecutive windows."""
        path, _ = viterbi(self.model, seq)
        verdicts = []
        for state in path:
            is_fall = state == self.fall_state
            verdicts.append(
                Verdict(
                    is_fall=bool(is_fall),
                    winning_label=FALL_LABEL if is_fall else self.activity_names[state],
                    decoded_path=path,
                )
            )
        return verdicts

    def classify(self, seq):
        verdicts = self.classify_windows(seq)
        hit = next((v for v in verdicts if v.is_fall), None)
        if hit is not None:
            return Verdict(is_fall=True, winning_label=FALL_LABEL, decoded_path=verdicts[0].decoded_path)
        return verdicts[-1]

    def to_dict(self):
        d = _common_meta(self)
        d.update(
            kind="state_space",
            model=self.model.to_dict(),
            activity_names=list(self.activity_names),
            xi=self.xi,
        )
        return d

    @classmethod
    def _from_dict(cls, d):
        return cls(
            variant=d["variant"],
            model=GaussianHmm.from_dict(d["model"]),
            activity_names=tuple(d["activity_names"]),
            xi=d["xi"],
            feature_mask=None if d["feature_mask"] is None else np.array(d["feature_mask"], dtype=bool),
            standardizer=d["standardizer"],
        )


@dataclass
class OcnnDetector(FallDetector):
    """One-class 1-NN: a point is novel when its nearest-neighbour distance
    exceeds that neighbour's own nearest-neighbour distance."""

    variant: str
    train_vectors: np.ndarray
    nn_distance: np.ndarray      # each training point's distance to its own NN
    feature_mask: np.ndarray | None = None
    standardizer: dict | None = None

    def _is_novel(self, v):
        d = np.linalg.norm(self.train_vectors - v, axis=1)
        nn = int(np.argmin(d))
        return d[nn] > self.nn_distance[nn]

    def classify(self, seq):
        x = _vectors(seq)
        is_fall = any(self._is_novel(v) for v in x)
        return Verdict(is_fall=is_fall, winning_label=FALL_LABEL if is_fall else NORMAL_KEY)

    def to_dict(self):
        d = _common_meta(self)
        d.update(
            kind="ocnn",
            train_vectors=self.train_vectors.tolist(),
            nn_distance=self.nn_distance.tolist(),
        )
        return d

    @classmethod
    def _from_dict(cls, d):
        return cls(
            variant=d["variant"],
            train_vectors=np.array(d["train_vectors"]),
            nn_distance=np.array(d["nn_distance"]),
            feature_mask=None if d["feature_mask"] is None else np.array(d["feature_mask"], dtype=bool),
            standardizer=d["standardizer"],
        )


# ---------------------------------------------------------------------------
# training / construction
# ---------------------------------------------------------------------------

def _group_by_label(sequences):
    groups = {}
    for s in sequences:
        groups.setdefault(s.label, []).append(s)
    return groups


def _fit_per_activity(per_activity, n_states, config):
    models = {}
    for label in sorted(per_activity):
        seqs = per_activity[label]
        if not seqs:
            raise ValueError(f"activity {label!r} has no training sequences")
        models[label], _ = fit(seqs, n_states, config)
    return models


def train_hmm1(per_activity_sequences, n_states=DEFAULT_N_STATES, config=None):
    """Per-activity HMMs on full normal data; T_i = max training NLL."""
    config = config or TrainConfig()
    if isinstance(per_activity_sequences, list):
        per_activity_sequences = _group_by_label(per_activity_sequences)
    models = _fit_per_activity(per_activity_sequences, n_states, config)
    thresholds = {
        lab: max(-log_likelihood(models[lab], s) for s in per_activity_sequences[lab])
        for lab in models
    }
    return ThresholdDetector(variant="hmm1", models=models, thresholds=thresholds)


def train_hmm2(all_normal_sequences, n_states=DEFAULT_N_STATES, config=None):
    """One pooled HMM over all normal data; a single threshold T."""
    config = config or TrainConfig()
    if not all_normal_sequences:
        raise ValueError("training set is empty")
    model, _ = fit(all_normal_sequences, n_states, config)
    t = max(-log_likelihood(model, s) for s in all_normal_sequences)
    return ThresholdDetector(variant="hmm2", models={NORMAL_KEY: model}, thresholds={NORMAL_KEY: t})


def average_models(models):
    """Element-wise average of per-activity HMM parameters."""
    models = list(models)
    shapes = {(m.n_states, m.n_dims) for m in models}
    if len(shapes) != 1:
        raise ValueError("all models must share the same state count and dimension")
    return GaussianHmm(
        prior=np.mean([m.prior for m in models], axis=0),
        trans=np.mean([m.trans for m in models], axis=0),
        means=np.mean([m.means for m in models], axis=0),
        diag_covs=np.mean([m.diag_covs for m in models], axis=0),
    )


def inflate(model, xi):
    """Covariance inflation by the X-factor."""
    if xi < 1:
        raise ValueError("xi must be >= 1")
    return GaussianHmm(
        prior=model.prior, trans=model.trans, means=model.means, diag_covs=model.diag_covs * xi
    )


def build_xhmm1(per_activity_models, xi):
    """Alternate model = averaged parameters with covariance inflated by xi."""
    return ArgmaxDetector(
        variant="xhmm1",
        models=dict(per_activity_models),
        fall_model=inflate(average_models(per_activity_models.values()), xi),
        xi=xi,
    )


def build_xhmm2(pooled_model, xi):
    return ArgmaxDetector(
        variant="xhmm2",
        models={NORMAL_KEY: pooled_model},
        fall_model=inflate(pooled_model, xi),
        xi=xi,
    )


def augment_transitions(trans):
    """Add the novel fall state to an empirical activity-transition matrix.

    Normal rows are rescaled by (1 - NORMAL_TO_FALL) and get a NORMAL_TO_FALL
    entry into the fall state; the fall row self-transitions with probability
    FALL_SELF_TRANSITION and returns to each activity uniformly.
    """
    trans = np.asarray(trans, dtype=np.float64)
    n = trans.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = trans * (1.0 - NORMAL_TO_FALL)
    out[:n, n] = NORMAL_TO_FALL
    out[n, :n] = (1.0 - FALL_SELF_TRANSITION) / n
    out[n, n] = FALL_SELF_TRANSITION
    return out


def _activity_moments(sequences, activities):
    """Window-vector moments per activity; errors when an activity has < 2 windows."""
    vectors = {a: [] for a in activities}
    for s in sequences:
        labels = s.vector_labels or (s.label,) * len(s)
        for v, lab in zip(s.vectors, labels):
            if lab in vectors:
                vectors[lab].append(v)
    means, covs = [], []
    for a in activities:
        x = np.asarray(vectors[a])
        if x.shape[0] < 2:
            raise ValueError(f"activity {a!r} has {x.shape[0]} window(s); moments need at least 2")
        means.append(x.mean(axis=0))
        covs.append(np.maximum(x.var(axis=0), VAR_FLOOR))
    return np.stack(means), np.stack(covs)


def _empirical_transitions(sequences, activities):
    index = {a: i for i, a in enumerate(activities)}
    n = len(activities)
    counts = np.zeros((n, n))
    for s in sequences:
        labels = s.vector_labels or (s.label,) * len(s)
        for a, b in zip(labels[:-1], labels[1:]):
            if a in index and b in index:
                counts[index[a], index[b]] += 1
    trans = np.empty_like(counts)
    for i in range(n):
        row_sum = counts[i].sum()
        trans[i] = counts[i] / row_sum if row_sum > 0 else 1.0 / n
    return trans


def _build_state_space(variant, sequences, fall_mean, fall_cov, xi=None):
    labels = set()
    for s in sequences:
        labels.update(s.vector_labels or (s.label,))
    activities = tuple(sorted(labels - {FALL_LABEL}))
    if not activities:
        raise ValueError("no normal activities in the training sequences")
    means, covs = _activity_moments(sequences, activities)
    trans = augment_transitions(_empirical_transitions(sequences, activities))
    if fall_mean is None:  # unsupervised: averaged moments, inflated covariance
        fall_mean = means.mean(axis=0)
        fall_cov = covs.mean(axis=0) * xi
    n = len(activities) + 1
    model = GaussianHmm(
        prior=np.full(n, 1.0 / n),
        trans=trans,
        means=np.vstack([means, fall_mean]),
        diag_covs=np.vstack([covs, fall_cov]),
    )
    return StateSpaceDetector(variant=variant, model=model, activity_names=activities, xi=xi)


def build_xhmm3(sequences, xi):
    """Activity-level model with a novel inflated-covariance fall state.

    ``sequences`` are runs of consecutive windows (one vector per window);
    moments and empirical transitions come straight from the annotated
    windows, with no Baum-Welch step.
    """
    if xi < 1:
        raise ValueError("xi must be >= 1")
    return _build_state_space("xhmm3", sequences, None, None, xi=xi)


def train_hmm_normout(non_fall_sequences, outlier_sequences,
                      n_states=DEFAULT_N_STATES, config=None):
    """Argmax between a non-fall HMM and an HMM trained on the outliers."""
    config = config or TrainConfig()
    if not outlier_sequences:
        raise ValueError("no outlier sequences; lower omega to reject some training data")
    normal, _ = fit(non_fall_sequences, n_states, config)
    outlier, _ = fit(outlier_sequences, n_states, config)
    return ArgmaxDetector(variant="hmm_normout", models={NORMAL_KEY: normal}, fall_model=outlier)


def train_supervised(variant, normal_sequences, fall_sequences,
                     n_states=DEFAULT_N_STATES, config=None):
    """Supervised counterparts: the fall model/state uses real fall data."""
    if variant not in SUPERVISED_VARIANTS:
        raise ValueError(f"unknown supervised variant {variant!r}")
    if not fall_sequences:
        raise ValueError("supervised variants cannot train without fall sequences")
    config = config or TrainConfig()
    if variant == "hmm3_sup":
        fall_vectors = np.concatenate([_vectors(s) for s in fall_sequences])
        fall_mean = fall_vectors.mean(axis=0)
        fall_cov = np.maximum(fall_vectors.var(axis=0), VAR_FLOOR)
        return _build_state_space("hmm3_sup", normal_sequences, fall_mean, fall_cov)
    fall_model, _ = fit(fall_sequences, n_states, config)
    if variant == "hmm1_sup":
        models = _fit_per_activity(_group_by_label(normal_sequences), n_states, config)
    else:
        models = {NORMAL_KEY: fit(normal_sequences, n_states, config)[0]}
    return ArgmaxDetector(variant=variant, models=models, fall_model=fall_model)


def train_ocnn(normal_vectors, k=1):
    """One-class nearest neighbour baseline (k fixed to 1)."""
    if k != 1:
        raise ValueError("only k=1 is supported")
    x = np.asarray(normal_vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("OCNN needs at least two training vectors")
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    return OcnnDetector(variant="ocnn", train_vectors=x, nn_distance=d.min(axis=1))
