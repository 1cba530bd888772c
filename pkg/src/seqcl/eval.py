"""Evaluation of frozen frame-wise representations: linear-probe phase
classification, phase-progression R^2, Kendall's tau over nearest-neighbor
frame matches, AP@K retrieval, DTW alignment and similarity-matrix export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from .data import DatasetSplit, VideoRecord
from .errors import ConfigError, NumericError


@dataclass
class ProbeConfig:
    steps: int = 500
    lr: float = 0.1


@dataclass
class EvalReport:
    classification_acc: float
    progression_r2: float
    kendalls_tau: float
    ap_at_k: dict[int, float]

    def __post_init__(self):
        if not 0 <= self.classification_acc <= 1:
            raise NumericError(f"accuracy out of range: {self.classification_acc}")
        if self.progression_r2 > 1 + 1e-9:
            raise NumericError(f"R^2 above 1: {self.progression_r2}")
        if not -1 - 1e-9 <= self.kendalls_tau <= 1 + 1e-9:
            raise NumericError(f"tau out of range: {self.kendalls_tau}")
        for k, v in self.ap_at_k.items():
            if not 0 <= v <= 1:
                raise NumericError(f"AP@{k} out of range: {v}")

    def to_json(self) -> str:
        payload = {
            "classification_acc": self.classification_acc,
            "progression_r2": self.progression_r2,
            "kendalls_tau": self.kendalls_tau,
            "ap_at_k": {str(k): v for k, v in self.ap_at_k.items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def embed_dataset(
    params: enc.EncoderParams, cfg: enc.EncoderConfig, records: list[VideoRecord]
) -> list[np.ndarray]:
    """Encode each full video in one eval-mode pass; rows L2-normalized."""
    out = []
    for rec in records:
        emb, _ = enc.forward(params, cfg, rec.features, train=False)
        norms = np.linalg.norm(emb.H, axis=1, keepdims=True)
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise NumericError(f"video {rec.id!r}: embedding row {bad[0]} has zero norm")
        out.append(emb.H / norms)
    return out


# --- linear probes ---


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe_classification(
    train_X: np.ndarray,
    train_y: np.ndarray,
    test_X: np.ndarray,
    test_y: np.ndarray,
    probe: ProbeConfig = ProbeConfig(),
) -> float:
    """Multinomial logistic regression by full-batch gradient descent on the
    frozen embeddings; returns mean per-frame accuracy on the test frames."""
    classes = np.unique(train_y)
    if classes.size < 2:
        raise ConfigError("probe training data contains a single class")
    num_classes = int(classes.max()) + 1
    n, d = train_X.shape
    W = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[train_y]
    for _ in range(probe.steps):
        p = _softmax_rows(train_X @ W + b)
        err = (p - onehot) / n
        W -= probe.lr * (train_X.T @ err)
        b -= probe.lr * err.sum(axis=0)
    pred = (test_X @ W + b).argmax(axis=1)
    return float((pred == test_y).mean())


def progression_targets(record: VideoRecord, num_phases: int) -> np.ndarray:
    """(S, P) matrix of signed distances (t - boundary_p) / S, one column per
    phase start boundary. Length-normalized so videos of different durations
    are comparable."""
    if record.phase_labels is None:
        raise ConfigError(f"record {record.id!r} has no phase labels")
    labels = np.asarray(record.phase_labels)
    s = labels.size
    boundaries = np.empty(num_phases)
    prev = 0
    for p in range(num_phases):
        idx = np.flatnonzero(labels == p)
        boundaries[p] = idx[0] if idx.size else prev
        prev = boundaries[p]
    t = np.arange(s)[:, None]
    return (t - boundaries[None, :]) / s


def r_squared(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean R^2 over target components; constant components are skipped."""
    scores = []
    for c in range(target.shape[1]):
        ss_tot = ((target[:, c] - target[:, c].mean()) ** 2).sum()
        if ss_tot == 0:
            continue
        ss_res = ((target[:, c] - pred[:, c]) ** 2).sum()
        scores.append(1.0 - ss_res / ss_tot)
    if not scores:
        raise NumericError("all progression target components are constant")
    return float(np.mean(scores))


def linear_probe_progression(
    train_X: np.ndarray,
    train_Y: np.ndarray,
    test_X: np.ndarray,
    test_Y: np.ndarray,
    probe: ProbeConfig = ProbeConfig(),
) -> float:
    """Linear least-squares regressor fit by gradient descent; average R^2
    over target components on the test frames."""
    n, d = train_X.shape
    k = train_Y.shape[1]
    W = np.zeros((d, k))
    b = np.zeros(k)
    for _ in range(probe.steps):
        err = (train_X @ W + b - train_Y) / n
        W -= probe.lr * (train_X.T @ err)
        b -= probe.lr * err.sum(axis=0)
    return r_squared(test_X @ W + b, test_Y)


# --- rank and retrieval metrics ---


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if (na == 0).any() or (nb == 0).any():
        raise NumericError("zero-norm embedding row")
    return (a / na) @ (b / nb).T

def kendalls_tau(emb1: np.ndarray, emb2: np.ndarray) -> float:
    """Rank correlation between frame order in video 1 and the order of its
    nearest-neighbor frames in video 2. Pairs whose neighbors tie contribute
    zero to the numerator; the denominator stays T1*(T1-1)/2."""
    t1 = emb1.shape[0]
    if t1 < 2:
        raise ConfigError(f"need at least 2 frames, got {t1}")
    # argmax breaks score ties toward the smaller index
    nn = _cosine(emb1, emb2).argmax(axis=1)
    diff = np.sign(nn[None, :] - nn[:, None])
    upper = np.triu_indices(t1, k=1)
    return float(diff[upper].sum() / (t1 * (t1 - 1) / 2))


def ap_at_k(
    query_emb: np.ndarray,
    query_label: int,
    candidate_embs: np.ndarray,
    candidate_labels: np.ndarray,
    K: int,
) -> float:
    """Fraction of the K nearest candidate frames sharing the query's label."""
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if candidate_embs.shape[0] < K:
        raise ConfigError(
            f"K={K} exceeds candidate pool of {candidate_embs.shape[0]} frames"
        )
    scores = _cosine(query_emb[None, :], candidate_embs)[0]
    top = np.argsort(-scores, kind="stable")[:K]
    return float((np.asarray(candidate_labels)[top] == query_label).mean())


def retrieve_frames(
    query_emb: np.ndarray,
    dataset_embs: dict[str, np.ndarray],
    exclude_video: str,
    K: int,
) -> list[tuple[str, int, float]]:
    """Top-K (video_id, frame_index, score) over all other videos' frames."""
    ids, frames, pool = [], [], []
    for vid in dataset_embs:
        if vid == exclude_video:
            continue
        embs = dataset_embs[vid]
        ids.extend([vid] * embs.shape[0])
        frames.extend(range(embs.shape[0]))
        pool.append(embs)
    if not pool:
        raise ConfigError("empty candidate pool")
    pool = np.concatenate(pool)
    if pool.shape[0] < K:
        raise ConfigError(f"K={K} exceeds candidate pool of {pool.shape[0]} frames")
    scores = _cosine(query_emb[None, :], pool)[0]
    top = np.argsort(-scores, kind="stable")[:K]
    return [(ids[i], frames[i], float(scores[i])) for i in top]


# --- alignment ---


def similarity_matrix(emb1: np.ndarray, emb2: np.ndarray, normalize: bool = False) -> np.ndarray:
    m = _cosine(emb1, emb2)
    if normalize:
        lo, hi = m.min(), m.max()
        m = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    return m


def dtw_align(sim: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Minimal-cost monotone alignment path on cost 1 - sim with steps
    down/right/diagonal; ties prefer the diagonal, then the vertical step."""
    if sim.size == 0:
        raise ConfigError("empty similarity matrix")
    t1, t2 = sim.shape
    cost = 1.0 - np.asarray(sim, dtype=np.float64)
    acc = np.full((t1, t2), np.inf)
    # predecessor: 0 diagonal, 1 vertical (i-1, j), 2 horizontal (i, j-1)
    prev = np.zeros((t1, t2), dtype=np.int8)
    acc[0, 0] = cost[0, 0]
    for j in range(1, t2):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        prev[0, j] = 2
    for i in range(1, t1):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        prev[i, 0] = 1
    for i in range(1, t1):
        for j in range(1, t2):
            options = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            best = int(np.argmin(options))  # argmin keeps the preference order
            acc[i, j] = options[best] + cost[i, j]
            prev[i, j] = best

    path = [(t1 - 1, t2 - 1)]
    i, j = t1 - 1, t2 - 1
    while (i, j) != (0, 0):
        step = prev[i, j]
        if step == 0:
            i, j = i - 1, j - 1
        elif step == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    path.reverse()
    return path, float(acc[t1 - 1, t2 - 1])


# --- dataset-level evaluation ---


def _pool_frames(records, embs, num_phases):
    X, y, Yprog = [], [], []
    for rec, emb in zip(records, embs):
        real = rec.real_frames if rec.real_frames is not None else rec.num_frames
        X.append(emb[:real])
        y.append(np.asarray(rec.phase_labels[:real]))
        Yprog.append(progression_targets(rec, num_phases)[:real])
    return np.concatenate(X), np.concatenate(y), np.concatenate(Yprog)


def _same_action(a: VideoRecord, b: VideoRecord) -> bool:
    return a.action_label == b.action_label


def evaluate(
    params: enc.EncoderParams,
    cfg: enc.EncoderConfig,
    dataset: DatasetSplit,
    probe: ProbeConfig = ProbeConfig(),
    Ks: tuple[int, ...] = (5, 10, 15),
) -> EvalReport:
    """All four metrics on a dataset split with frozen encoder parameters."""
    train_embs = embed_dataset(params, cfg, dataset.train)
    test_embs = embed_dataset(params, cfg, dataset.test)
    train_X, train_y, train_Y = _pool_frames(dataset.train, train_embs, dataset.num_phases)
    test_X, test_y, test_Y = _pool_frames(dataset.test, test_embs, dataset.num_phases)

    acc = linear_probe_classification(train_X, train_y, test_X, test_y, probe)
    r2 = linear_probe_progression(train_X, train_Y, test_X, test_Y, probe)

    taus = []
    for i, (rec_i, emb_i) in enumerate(zip(dataset.test, test_embs)):
        for j, (rec_j, emb_j) in enumerate(zip(dataset.test, test_embs)):
            if i != j and _same_action(rec_i, rec_j):
                taus.append(kendalls_tau(emb_i, emb_j))
    tau = float(np.mean(taus)) if taus else float("nan")

    ap: dict[int, float] = {}
    for K in Ks:
        scores = []
        for i, (rec, emb) in enumerate(zip(dataset.test, test_embs)):
            cands, labels = [], []
            for j, (other, other_emb) in enumerate(zip(dataset.test, test_embs)):
                if j != i and _same_action(rec, other):
                    cands.append(other_emb)
                    labels.extend(other.phase_labels)
            if not cands:
                continue
            cands = np.concatenate(cands)
            labels = np.asarray(labels)
            for t in range(rec.num_frames):
                scores.append(ap_at_k(emb[t], rec.phase_labels[t], cands, labels, K))
        ap[K] = float(np.mean(scores)) if scores else float("nan")

    return EvalReport(
        classification_acc=acc, progression_r2=r2, kendalls_tau=tau, ap_at_k=ap
    )


# --- artifact export ---


def write_pgm(matrix: np.ndarray, path: str | Path) -> None:
    """8-bit grayscale PGM (P5) of a [0, 1] matrix."""
    gray = np.clip(np.asarray(matrix) * 255.0, 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def write_matrix_csv(matrix: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.9g")


def write_path_csv(path_pairs: list[tuple[int, int]], path: str | Path) -> None:
    with open(path, "w") as f:
        f.write("i,j\n")
        for i, j in path_pairs:
            f.write(f"{i},{j}\n")
