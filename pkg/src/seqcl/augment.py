"""Temporal view construction: paired overlapping crops, frame sampling, padding
and feature-space jitter.

Two views of a video are built independently: each is a contiguous crop of
length in [T, alpha*T] frames, the two crops are guaranteed to overlap by at
least a beta fraction of the shorter one, and T frames are sampled from each
crop (uniformly without replacement, or evenly spaced). Every sampled frame
keeps its raw-video timestamp; the contrastive loss consumes those timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import VideoRecord
from .errors import ConfigError, SeqclError

MAX_CROP_ATTEMPTS = 1000


@dataclass
class AugmentConfig:
    T: int = 240
    alpha: float = 1.5
    beta: float = 0.20
    sampling: str = "random"  # "random" | "even"
    jitter_std: float = 0.0
    jitter_dropout: float = 0.0

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError(f"T must be >= 2, got {self.T}")
        if self.alpha < 1:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        if not 0 <= self.beta <= 1:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.sampling not in ("random", "even"):
            raise ConfigError(f"sampling must be 'random' or 'even', got {self.sampling!r}")
        if self.jitter_std < 0:
            raise ConfigError("jitter_std must be >= 0")
        if not 0 <= self.jitter_dropout < 1:
            raise ConfigError(f"jitter_dropout must be in [0, 1), got {self.jitter_dropout}")


@dataclass
class AugmentedView:
    features: np.ndarray  # (T, D)
    timestamps: np.ndarray  # (T,) raw-video frame indices, strictly increasing
    view_index: int

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps)
        if not (np.diff(self.timestamps) > 0).all():
            raise SeqclError("view timestamps must be strictly increasing")


@dataclass
class ViewPair:
    view1: AugmentedView
    view2: AugmentedView
    source_id: str


def pad_if_short(record: VideoRecord, T: int) -> VideoRecord:
    """Append zero-feature frames until the video has at least T frames.

    Padding frames repeat the last real frame's label so probes never see a
    phantom class; real_frames marks where the padding starts.
    """
    s = record.num_frames
    if s >= T:
        return record
    pad = np.zeros((T - s, record.feature_dim), dtype=record.features.dtype)
    labels = None
    if record.phase_labels is not None:
        labels = record.phase_labels + [record.phase_labels[-1]] * (T - s)
    return VideoRecord(
        id=record.id,
        features=np.concatenate([record.features, pad]),
        phase_labels=labels,
        action_label=record.action_label,
        real_frames=s,
    )


def _draw_window(S: int, T: int, alpha: float, rng: np.random.Generator) -> tuple[int, int]:
    max_len = min(int(alpha * T), S)
    length = int(rng.integers(T, max_len + 1))
    start = int(rng.integers(0, S - length + 1))
    return start, length


def _overlap(w1: tuple[int, int], w2: tuple[int, int]) -> int:
    lo = max(w1[0], w2[0])
    hi = min(w1[0] + w1[1], w2[0] + w2[1])
    return max(0, hi - lo)


def crop_pair(
    S: int, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Draw two crop windows (start, length) with the overlap guarantee.

    Rejection-samples independent windows; after MAX_CROP_ATTEMPTS failures
    the second window is shifted toward the first until the constraint holds
    (always possible for S >= T, beta <= 1).
    """
    if S < cfg.T:
        raise SeqclError(f"cannot crop {cfg.T} frames from a {S}-frame video; pad first")

    def ok(w1, w2):
        return _overlap(w1, w2) >= cfg.beta * min(w1[1], w2[1])

    w1 = _draw_window(S, cfg.T, cfg.alpha, rng)
    w2 = _draw_window(S, cfg.T, cfg.alpha, rng)
    for _ in range(MAX_CROP_ATTEMPTS):
        if ok(w1, w2):
            return w1, w2
        w2 = _draw_window(S, cfg.T, cfg.alpha, rng)

    # constructive fallback: slide window2 one frame at a time toward window1
    start2, len2 = w2
    step = 1 if w1[0] > start2 else -1
    while not ok(w1, (start2, len2)):
        nxt = start2 + step
        if nxt < 0 or nxt + len2 > S:
            raise SeqclError("crop overlap constraint unsatisfiable")  # pragma: no cover
        start2 = nxt
    return w1, (start2, len2)


def sample_frames(
    window: tuple[int, int], T: int, mode: str, rng: np.random.Generator
) -> np.ndarray:
    """T strictly-increasing timestamps from a (start, length) window."""
    start, length = window
    if length < T:
        raise SeqclError(f"window of {length} frames cannot yield {T} samples")
    if mode == "random":
        ts = rng.choice(np.arange(start, start + length), size=T, replace=False)
        return np.sort(ts)
    if mode == "even":
        k = np.arange(T)
        return start + np.round(k * (length - 1) / (T - 1)).astype(np.int64)
    raise ConfigError(f"unknown sampling mode {mode!r}")


def feature_jitter(
    view: AugmentedView, cfg: AugmentConfig, rng: np.random.Generator
) -> AugmentedView:
    """Gaussian noise per entry plus a per-view feature-dimension dropout mask.

    One mask is shared by all frames of the view, so the corruption is
    temporally consistent.
    """
    feats = view.features
    if cfg.jitter_std > 0:
        feats = feats + rng.normal(0.0, cfg.jitter_std, size=feats.shape)
    if cfg.jitter_dropout > 0:
        keep = rng.random(feats.shape[1]) >= cfg.jitter_dropout
        feats = feats * keep
    return replace(view, features=feats)


def build_view_pair(
    record: VideoRecord, cfg: AugmentConfig, rng: np.random.Generator
) -> ViewPair:
    record = pad_if_short(record, cfg.T)
    w1, w2 = crop_pair(record.num_frames, cfg, rng)
    views = []
    for idx, w in ((1, w1), (2, w2)):
        ts = sample_frames(w, cfg.T, cfg.sampling, rng)
        view = AugmentedView(features=record.features[ts], timestamps=ts, view_index=idx)
        views.append(feature_jitter(view, cfg, rng))
    return ViewPair(view1=views[0], view2=views[1], source_id=record.id)
