"""Noise filtering, overlapped windowing and frame subdivision.

Filtering is causal (forward-only) to match a real-time setting; the
Butterworth coefficients come from the bilinear transform with frequency
pre-warping, and the filter state is primed with the first sample so a
constant signal passes through unchanged.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF_HZ = 20.0
DEFAULT_FILTER_ORDER = 1
DEFAULT_OVERLAP = 0.5
DEFAULT_FRAME_S = 0.16  # 16 ms yields <2 samples at 87-100 Hz; 160 ms is the usable default


@dataclass(frozen=True)
class Window:
    """Contiguous single-label slice of a SensorStream."""

    timestamps: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    label: str
    subject_id: str
    sample_rate_hz: float
    duration_s: float
    start_index: int  # sample offset within the source stream

    def __len__(self):
        return self.timestamps.shape[0]


@dataclass(frozen=True)
class Frame:
    """Non-overlapping sub-slice of a Window."""

    accel: np.ndarray
    gyro: np.ndarray
    duration_s: float
    sample_rate_hz: float

    def __len__(self):
        return self.accel.shape[0]


def lowpass_filter(stream, cutoff_hz=DEFAULT_CUTOFF_HZ, order=DEFAULT_FILTER_ORDER):
    """Causal Butterworth low-pass over all six channels independently."""
    nyquist = stream.sample_rate_hz / 2.0
    if cutoff_hz >= nyquist:
        raise ValueError(f"cutoff {cutoff_hz} Hz must be below the Nyquist rate {nyquist} Hz")
    if order < 1:
        raise ValueError("filter order must be a positive integer")
    b, a = sp_signal.butter(order, cutoff_hz, btype="low", fs=stream.sample_rate_hz)
    zi = sp_signal.lfilter_zi(b, a)

    def run(channels):
        out = np.empty_like(channels)
        for k in range(channels.shape[1]):
            x = channels[:, k]
            y, _ = sp_signal.lfilter(b, a, x, zi=zi * x[0])
            out[:, k] = y
        return out

    return stream.replace_channels(run(stream.accel), run(stream.gyro))


def make_windows(stream, duration_s, overlap_fraction=DEFAULT_OVERLAP):
    """Fixed-length overlapped windows; mixed-label windows are dropped.

    Window starts advance by ``duration_s * (1 - overlap_fraction)``.  The
    number of dropped mixed-label windows is logged for auditing.
    """
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError("overlap_fraction must be in [0, 1)")
    fs = stream.sample_rate_hz
    w = int(round(duration_s * fs))
    if w <= 0:
        raise ValueError("window duration yields zero samples")
    stride = max(1, int(round(w * (1.0 - overlap_fraction))))
    n = len(stream)
    labels = np.asarray(stream.labels)
    windows = []
    dropped = 0
    for start in range(0, n - w + 1, stride):
        sl = slice(start, start + w)
        window_labels = set(labels[sl])
        if len(window_labels) != 1:
            dropped += 1
            continue
        windows.append(
            Window(
                timestamps=stream.timestamps[sl],
                accel=stream.accel[sl],
                gyro=stream.gyro[sl],
                label=window_labels.pop(),
                subject_id=stream.subject_id,
                sample_rate_hz=fs,
                duration_s=duration_s,
                start_index=start,
            )
        )
    if dropped:
        logger.info("dropped %d mixed-label window(s) for subject %s", dropped, stream.subject_id)
    return windows


def make_frames(window, frame_duration_s=DEFAULT_FRAME_S):
    """Tile a window with consecutive frames; a trailing remainder is dropped."""
    if frame_duration_s > window.duration_s + 1e-12:
        raise ValueError("frame duration exceeds the window duration")
    frame_len = int(frame_duration_s * window.sample_rate_hz + 1e-9)
    if frame_len < 2:
        raise ValueError(
            f"a {frame_duration_s * 1000:.0f} ms frame holds {frame_len} sample(s) at "
            f"{window.sample_rate_hz:g} Hz; use a larger frame duration (>=2 samples needed)"
        )
    n_frames = int(window.duration_s / frame_duration_s + 1e-9)
    n_frames = min(n_frames, len(window) // frame_len)
    frames = []
    for k in range(n_frames):
        sl = slice(k * frame_len, (k + 1) * frame_len)
        frames.append(
            Frame(
                accel=window.accel[sl],
                gyro=window.gyro[sl],
                duration_s=frame_duration_s,
                sample_rate_hz=window.sample_rate_hz,
            )
        )
    return frames
