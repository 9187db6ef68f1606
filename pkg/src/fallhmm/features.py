"""The 31-feature extractor, sequence assembly, standardization and ReliefF.

Feature order (1-based, matching the exported CSV header):

* f1-f5    mean of a_x, a_y, a_z, a_norm, w_norm
* f6-f10   maximum of the same five channels
* f11-f15  minimum
* f16-f20  population standard deviation
* f21-f22  interquartile range of a_norm, w_norm
* f23      normalized signal magnitude area
* f24      normalized average power spectral density of a_norm
* f25      spectral entropy of a_norm (DC excluded, normalized to [0, 1])
* f26      DC component of the a_norm FFT, divided by the sample count
* f27      energy: sum of squared non-DC FFT magnitudes over the sample count
* f28      normalized information entropy of the non-DC FFT magnitudes
* f29-f31  Pearson correlation of (a_x, a_y), (a_x, a_z), (a_y, a_z)

Degenerate (zero-variance / zero-power) channels produce correlation 0 and
entropy 0 so nothing downstream sees a NaN.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import FALL_LABEL

logger = logging.getLogger(__name__)

N_FEATURES = 31

FEATURE_NAMES = tuple(f"f{i}" for i in range(1, N_FEATURES + 1))


@dataclass(frozen=True)
class ObservationSequence:
    """Ordered feature vectors forming one HMM observation sequence."""

    vectors: np.ndarray  # (T, D)
    label: str
    subject_id: str
    # per-vector labels, set for activity-level sequences that may mix labels
    vector_labels: tuple | None = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        object.__setattr__(self, "vectors", v)
        if v.shape[0] == 0:
            raise ValueError("observation sequence must be nonempty")
        if self.vector_labels is not None:
            object.__setattr__(self, "vector_labels", tuple(self.vector_labels))
            if len(self.vector_labels) != v.shape[0]:
                raise ValueError("vector_labels length must match the sequence length")

    def __len__(self):
        return self.vectors.shape[0]


def derive_signals(accel, gyro):
    """Five derived channels: a_x, a_y, a_z, a_norm, w_norm."""
    accel = np.asarray(accel, dtype=np.float64)
    gyro = np.asarray(gyro, dtype=np.float64)
    a_norm = np.sqrt(np.sum(accel * accel, axis=1))
    w_norm = np.sqrt(np.sum(gyro * gyro, axis=1))
    return accel[:, 0], accel[:, 1], accel[:, 2], a_norm, w_norm


def _next_pow2(n):
    return 1 << (n - 1).bit_length()


def _normalized_entropy(weights):
    """Shannon entropy of weights (normalized to a distribution) over log(len)."""
    total = weights.sum()
    if total <= 0 or weights.size < 2:
        return 0.0
    p = weights / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum() / np.log(weights.size))


def _pearson(x, y):
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return 0.0  # degenerate channel rule
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def extract(accel, gyro):
    """Compute the 31 features from one slice of samples (>= 2 rows)."""
    accel = np.asarray(accel, dtype=np.float64)
    if accel.shape[0] < 2:
        raise ValueError("feature extraction needs at least 2 samples")
    ax, ay, az, a_norm, w_norm = derive_signals(accel, gyro)
    channels = (ax, ay, az, a_norm, w_norm)
    n = accel.shape[0]

    out = np.empty(N_FEATURES)
    out[0:5] = [c.mean() for c in channels]
    out[5:10] = [c.max() for c in channels]
    out[10:15] = [c.min() for c in channels]
    out[15:20] = [c.std() for c in channels]  # population (divisor n)
    out[20] = np.percentile(a_norm, 75) - np.percentile(a_norm, 25)
    out[21] = np.percentile(w_norm, 75) - np.percentile(w_norm, 25)
    out[22] = np.sum(np.abs(ax) + np.abs(ay) + np.abs(az)) / n

    padded = _next_pow2(n)
    spectrum = np.abs(np.fft.fft(a_norm, n=padded))
    power = spectrum**2
    # one-sided periodogram (DC excluded) for the PSD/entropy features; the
    # energy feature keeps the full two-sided sum so Parseval holds
    half_power = power[1 : padded // 2 + 1]
    out[23] = half_power.mean() / n
    out[24] = _normalized_entropy(half_power)
    out[25] = spectrum[0] / n
    out[26] = power[1:].sum() / n
    out[27] = _normalized_entropy(spectrum[1 : padded // 2 + 1])
    out[28] = _pearson(ax, ay)
    out[29] = _pearson(ax, az)
    out[30] = _pearson(ay, az)
    return out


def extract_window(window):
    return extract(window.accel, window.gyro)


def extract_frames(window, frames):
    return np.stack([extract(f.accel, f.gyro) for f in frames])


def build_pose_sequences(windows, make_frames_fn):
    """One sequence per window: a vector per frame (pose-level models)."""
    sequences = []
    for w in windows:
        frames = make_frames_fn(w)
        if not frames:
            continue
        sequences.append(
            ObservationSequence(
                vectors=extract_frames(w, frames),
                label=w.label,
                subject_id=w.subject_id,
            )
        )
    return sequences


def build_activity_sequences(windows, stride_samples, vectors=None):
    """Maximal runs of temporally consecutive same-subject windows.

    One vector per window.  A fall window terminates its run and is included.
    The run label is "fall" when the run ends with a fall window, otherwise
    the label of its first window; per-window truth stays in
    ``vector_labels``.
    """
    if vectors is None:
        vectors = [extract_window(w) for w in windows]
    runs = []
    current, current_vecs = [], []

    def flush():
        if not current:
            return
        labels = tuple(w.label for w in current)
        label = FALL_LABEL if labels[-1] == FALL_LABEL else labels[0]
        runs.append(
            ObservationSequence(
                vectors=np.stack(current_vecs),
                label=label,
                subject_id=current[0].subject_id,
                vector_labels=labels,
            )
        )
        current.clear()
        current_vecs.clear()

    for w, v in zip(windows, vectors):
        if current:
            prev = current[-1]
            contiguous = (
                w.subject_id == prev.subject_id
                and w.start_index - prev.start_index == stride_samples
            )
            if not contiguous:
                flush()
        current.append(w)
        current_vecs.append(v)
        if w.label == FALL_LABEL:
            flush()
    flush()
    return runs


@dataclass
class Standardizer:
    """Per-feature zero-mean/unit-scale transform, fit on training data only."""

    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def fit(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        self.scale = scale
        return self

    def transform(self, x):
        if self.mean is None:
            raise ValueError("standardizer is not fitted")
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def transform_sequence(self, seq):
        return ObservationSequence(
            vectors=self.transform(seq.vectors),
            label=seq.label,
            subject_id=seq.subject_id,
            vector_labels=seq.vector_labels,
        )

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.array(d["mean"]), scale=np.array(d["scale"]))


def relief_f_rank(x, y, k_neighbors=10, n_probes=200, seed=0):
    """ReliefF weights over labelled vectors; ranks features by how well they
    separate the normal activity classes.

    Features are standardized internally before distance computations; probes
    are drawn with a seeded generator so the ranking is deterministic.
    Returns (ranked feature indices, weights) where ranking is by descending
    weight with index order breaking ties.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ValueError("ReliefF needs at least two classes")
    priors = {c: counts[i] / y.size for i, c in enumerate(classes)}
    z = Standardizer().fit(x).transform(x)

    rng = np.random.default_rng(seed)
    probes = rng.integers(0, z.shape[0], size=n_probes)
    weights = np.zeros(z.shape[1])
    for idx in probes:
        zi, yi = z[idx], y[idx]
        dist = np.abs(z - zi).sum(axis=1)
        dist[idx] = np.inf
        for c in classes:
            members = np.nonzero(y == c)[0]
            members = members[np.argsort(dist[members], kind="stable")]
            members = members[np.isfinite(dist[members])]
            nearest = members[:k_neighbors]
            if nearest.size == 0:
                continue
            contrib = np.abs(z[nearest] - zi).mean(axis=0)
            if c == yi:
                weights -= contrib / n_probes
            else:
                weights += priors[c] / (1.0 - priors[yi]) * contrib / n_probes
    ranking = np.argsort(-weights, kind="stable")
    return ranking, weights


def top_k_mask(ranking, k):
    mask = np.zeros(len(ranking), dtype=bool)
    mask[ranking[:k]] = True
    return mask


def export_features_csv(path, vectors, labels, subjects):
    """Audit export: header f1..f31,label,subject."""
    vectors = np.asarray(vectors)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(FEATURE_NAMES[: vectors.shape[1]]) + ["label", "subject"])
        for v, lab, sub in zip(vectors, labels, subjects):
            writer.writerow([repr(float(x)) for x in v] + [lab, sub])
