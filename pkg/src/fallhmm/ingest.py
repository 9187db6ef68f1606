"""Dataset ingestion: raw recordings -> labelled, synchronized SensorStreams.

Three on-disk layouts are supported:

* ``generic-csv`` -- one CSV per recording with columns
  ``t,ax,ay,az,gx,gy,gz,label`` plus a JSON sidecar ``<stem>.meta.json``
  holding ``subject_id``, ``sample_rate_hz``, ``accel_unit`` and
  ``label_set``.
* ``dlr`` -- one directory per subject, recordings in the generic column
  layout at a fixed 100 Hz.
* ``mobifall`` -- one directory per subject with separate accelerometer
  (``*_acc.csv``: ``t,ax,ay,az,label``) and gyroscope (``*_gyro.csv``:
  ``t,gx,gy,gz``) tracks that get synchronized onto the accelerometer grid.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import FALL_LABEL

logger = logging.getLogger(__name__)

SCHEMAS = ("generic-csv", "dlr", "mobifall")

DLR_SAMPLE_RATE_HZ = 100.0


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class SensorStream:
    """Synchronized 6-axis recording with per-sample activity labels."""

    subject_id: str
    sample_rate_hz: float
    timestamps: np.ndarray  # (T,) seconds, strictly increasing
    accel: np.ndarray       # (T, 3)
    gyro: np.ndarray        # (T, 3)
    labels: tuple           # (T,) activity names
    label_set: frozenset    # declared normal activities plus "fall"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=np.float64))
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=np.float64))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "label_set", frozenset(self.label_set))
        if self.sample_rate_hz <= 0:
            raise IngestError("sample_rate_hz must be positive")
        n = t.shape[0]
        if np.any(np.diff(t) <= 0):
            raise IngestError("timestamps must be strictly increasing")
        if self.accel.shape != (n, 3) or self.gyro.shape != (n, 3) or len(self.labels) != n:
            raise IngestError("timestamps, accel, gyro and labels must have equal length")
        unknown = set(self.labels) - set(self.label_set)
        if unknown:
            raise IngestError(f"unknown label: {sorted(unknown)[0]!r}")

    def __len__(self):
        return self.timestamps.shape[0]

    def replace_channels(self, accel, gyro):
        return SensorStream(
            subject_id=self.subject_id,
            sample_rate_hz=self.sample_rate_hz,
            timestamps=self.timestamps,
            accel=accel,
            gyro=gyro,
            labels=self.labels,
            label_set=self.label_set,
            metadata=dict(self.metadata),
        )


@dataclass(frozen=True)
class Track:
    """One timestamped sensor track, before synchronization."""

    timestamps: np.ndarray
    values: np.ndarray            # (T, k)
    labels: tuple | None = None   # per-sample, accel track only

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", np.atleast_2d(np.asarray(self.values, dtype=np.float64)))
        if t.shape[0] == 0:
            raise IngestError("track must be nonempty")
        if np.any(np.diff(t) <= 0):
            raise IngestError("track timestamps must be strictly increasing")


def synchronize(accel_track, gyro_track, subject_id="", sample_rate_hz=None,
                label_set=None, metadata=None):
    """Interpolate the gyro track onto the accel timestamp grid.

    Gyro values are linearly interpolated; accel samples outside the gyro time
    range are dropped so both tracks cover exactly the overlap.
    """
    t_a, t_g = accel_track.timestamps, gyro_track.timestamps
    lo, hi = max(t_a[0], t_g[0]), min(t_a[-1], t_g[-1])
    keep = (t_a >= lo) & (t_a <= hi)
    if not np.any(keep):
        raise IngestError("accelerometer and gyroscope tracks have no temporal overlap")
    t = t_a[keep]
    gyro = np.column_stack([np.interp(t, t_g, gyro_track.values[:, k]) for k in range(3)])
    labels = accel_track.labels
    labels = tuple(np.asarray(labels)[keep]) if labels is not None else ("unknown",) * t.shape[0]
    if sample_rate_hz is None:
        sample_rate_hz = (t.shape[0] - 1) / (t[-1] - t[0]) if t.shape[0] > 1 else 1.0
    if label_set is None:
        label_set = set(labels) | {FALL_LABEL}
    return SensorStream(
        subject_id=subject_id,
        sample_rate_hz=sample_rate_hz,
        timestamps=t,
        accel=accel_track.values[keep],
        gyro=gyro,
        labels=labels,
        label_set=label_set,
        metadata=metadata or {},
    )


def _parse_float(raw, path, line_no, column):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise IngestError(f"{path}:{line_no}: malformed value {raw!r} in column {column!r}") from None


def _read_rows(path, columns):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise IngestError(f"{path}:1: missing column(s) {missing}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if any(row.get(c) in (None, "") for c in columns):
                raise IngestError(f"{path}:{line_no}: malformed row")
            rows.append((line_no, row))
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return rows


def _load_generic_file(path, meta):
    columns = ["t", "ax", "ay", "az", "gx", "gy", "gz", "label"]
    rows = _read_rows(path, columns)
    t, accel, gyro, labels = [], [], [], []
    label_set = set(meta["label_set"]) | {FALL_LABEL}
    for line_no, row in rows:
        t.append(_parse_float(row["t"], path, line_no, "t"))
        accel.append([_parse_float(row[c], path, line_no, c) for c in ("ax", "ay", "az")])
        gyro.append([_parse_float(row[c], path, line_no, c) for c in ("gx", "gy", "gz")])
        if row["label"] not in label_set:
            raise IngestError(f"{path}:{line_no}: unknown label {row['label']!r}")
        labels.append(row["label"])
    return SensorStream(
        subject_id=str(meta["subject_id"]),
        sample_rate_hz=float(meta["sample_rate_hz"]),
        timestamps=np.array(t),
        accel=np.array(accel),
        gyro=np.array(gyro),
        labels=labels,
        label_set=label_set,
        metadata={k: meta[k] for k in meta if k not in ("subject_id", "sample_rate_hz", "label_set")},
    )


def _load_generic(root):
    root = Path(root)
    files = sorted(root.glob("*.csv")) if root.is_dir() else [root]
    streams = []
    for f in files:
        sidecar = f.parent / (f.stem + ".meta.json")
        if not sidecar.exists():
            raise IngestError(f"{f}: missing metadata sidecar {sidecar.name}")
        meta = json.loads(sidecar.read_text())
        for key in ("subject_id", "sample_rate_hz", "accel_unit", "label_set"):
            if key not in meta:
                raise IngestError(f"{sidecar}: missing metadata key {key!r}")
        streams.append(_load_generic_file(f, meta))
    return streams


def _load_dlr(root):
    root = Path(root)
    streams = []
    for subject_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(subject_dir.glob("*.csv")):
            rows = _read_rows(f, ["t", "ax", "ay", "az", "gx", "gy", "gz", "label"])
            labels = [row["label"] for _, row in rows]
            meta = {
                "subject_id": subject_dir.name,
                "sample_rate_hz": DLR_SAMPLE_RATE_HZ,
                "accel_unit": "m/s^2",
                "label_set": sorted(set(labels) | {FALL_LABEL}),
            }
            streams.append(_load_generic_file(f, meta))
    return streams


def _load_mobifall(root):
    root = Path(root)
    streams = []
    for subject_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for acc_file in sorted(subject_dir.glob("*_acc.csv")):
            gyro_file = acc_file.parent / acc_file.name.replace("_acc.csv", "_gyro.csv")
            if not gyro_file.exists():
                raise IngestError(f"{acc_file}: missing gyroscope file {gyro_file.name}")
            acc_rows = _read_rows(acc_file, ["t", "ax", "ay", "az", "label"])
            gyro_rows = _read_rows(gyro_file, ["t", "gx", "gy", "gz"])
            acc_t = [_parse_float(r["t"], acc_file, n, "t") for n, r in acc_rows]
            acc_v = [[_parse_float(r[c], acc_file, n, c) for c in ("ax", "ay", "az")] for n, r in acc_rows]
            labels = [r["label"] for _, r in acc_rows]
            gyr_t = [_parse_float(r["t"], gyro_file, n, "t") for n, r in gyro_rows]
            gyr_v = [[_parse_float(r[c], gyro_file, n, c) for c in ("gx", "gy", "gz")] for n, r in gyro_rows]
            stream = synchronize(
                Track(np.array(acc_t), np.array(acc_v), tuple(labels)),
                Track(np.array(gyr_t), np.array(gyr_v)),
                subject_id=subject_dir.name,
                label_set=set(labels) | {FALL_LABEL},
                metadata={"accel_unit": "m/s^2"},
            )
            streams.append(stream)
    return streams


def filter_usable_subjects(streams):
    """Drop subjects lacking either normal or fall samples.

    Mirrors the dataset exclusions: a subject is usable only if its recordings
    contain both normal activity and fall samples.  Returns (usable streams,
    excluded subject ids).
    """
    has_normal, has_fall = {}, {}
    for s in streams:
        labels = set(s.labels)
        has_fall[s.subject_id] = has_fall.get(s.subject_id, False) or FALL_LABEL in labels
        has_normal[s.subject_id] = has_normal.get(s.subject_id, False) or bool(labels - {FALL_LABEL})
    excluded = sorted(sid for sid in has_normal if not (has_normal[sid] and has_fall[sid]))
    if excluded:
        logger.info("excluding subjects without both normal and fall data: %s", excluded)
    usable = [s for s in streams if s.subject_id not in excluded]
    return usable, excluded


def load_dataset(path, schema):
    """Load every recording under ``path`` for the given schema id."""
    if schema not in SCHEMAS:
        raise IngestError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    path = Path(path)
    if not path.exists():
        raise IngestError(f"dataset path does not exist: {path}")
    if schema == "generic-csv":
        return _load_generic(path)
    if schema == "dlr":
        return _load_dlr(path)
    return _load_mobifall(path)
