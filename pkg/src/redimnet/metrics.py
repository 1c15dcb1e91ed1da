"""Verification backend: cosine scoring, adaptive s-norm, EER and minDCF.

Trial lists are text, one trial per line: ``<0|1> <enroll_id> <test_id>``.
Score files are ``<enroll_id> <test_id> <score>``.  Both have no header.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError, InputError, NumericError


@dataclass
class Trial:
    label: int
    enroll: str
    test: str


@dataclass
class ScoreSet:
    labels: np.ndarray
    scores: np.ndarray
    normalized: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels.shape != self.scores.shape or self.labels.ndim != 1:
            raise InputError(f"labels {self.labels.shape} and scores {self.scores.shape} must be equal-length 1-D")
        if not np.isin(self.labels, (0, 1)).all():
            raise InputError("labels must be 0 (nontarget) or 1 (target)")

    @property
    def targets(self) -> np.ndarray:
        return self.scores[self.labels == 1]

    @property
    def nontargets(self) -> np.ndarray:
        return self.scores[self.labels == 0]


def cosine_score(e1, e2) -> float:
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    return float(_cosine_rows(e1[None], e2[None])[0])


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine; ``sqrt(fl(d * d)) == d`` makes identical rows score exactly 1."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    bad = np.flatnonzero((aa == 0) | (bb == 0))
    if bad.size:
        raise InputError(f"cosine score of a zero vector is undefined (row {int(bad[0])})")
    return np.clip(np.einsum("ij,ij->i", a, b) / np.sqrt(aa * bb), -1.0, 1.0)


def _unit_rows(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if (n == 0).any():
        raise InputError(f"zero embedding at row {int(np.flatnonzero(n[:, 0] == 0)[0])}")
    return x / n


def cosine_matrix(a, b) -> np.ndarray:
    return _unit_rows(a) @ _unit_rows(b).T


def _split(labels, scores):
    ss = scores if isinstance(scores, ScoreSet) else ScoreSet(labels, scores)
    tar, non = ss.targets, ss.nontargets
    if tar.size == 0 or non.size == 0:
        raise InputError(f"need at least one target and one nontarget trial, got {tar.size} and {non.size}")
    return tar, non


def error_rates(scores: ScoreSet):
    """Operating points at every distinct score and at +inf.

    Returns ``(thresholds, fnr, fpr)`` sorted by threshold, where a trial is
    accepted when its score is ``>= threshold``.
    """
    tar, non = _split(None, scores)
    thr = np.unique(np.concatenate([tar, non]))
    thr = np.append(thr, np.inf)
    tar_sorted, non_sorted = np.sort(tar), np.sort(non)
    fnr = np.searchsorted(tar_sorted, thr, side="left") / tar.size
    # from counts, so equal rates compare equal exactly
    fpr = (non.size - np.searchsorted(non_sorted, thr, side="left")) / non.size
    return thr, fnr, fpr


def eer_from_rates(fnr: np.ndarray, fpr: np.ndarray) -> float:
    """Crossing of FNR and FPR, linearly interpolated between adjacent points.

    ``fnr - fpr`` is nondecreasing in the threshold, starts at -1 (lowest
    score) and ends at +1 (+inf), so the first index where it becomes >= 0
    brackets the crossing.
    """
    diff = fnr - fpr
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        return float(fpr[i])
    d0, d1 = diff[i - 1], diff[i]
    a = d0 / (d0 - d1)
    return float(fpr[i - 1] + a * (fpr[i] - fpr[i - 1]))


def eer(scores: ScoreSet | np.ndarray, labels=None) -> float:
    if not isinstance(scores, ScoreSet):
        scores = ScoreSet(labels, scores)
    _, fnr, fpr = error_rates(scores)
    return eer_from_rates(fnr, fpr)


def min_dcf(scores: ScoreSet | np.ndarray, labels=None, p_target: float = 0.01, c_fa: float = 1.0,
            c_miss: float = 1.0) -> float:
    if not isinstance(scores, ScoreSet):
        scores = ScoreSet(labels, scores)
    if not 0 < p_target < 1:
        raise ConfigError("p_target must lie in (0, 1)")
    _, fnr, fpr = error_rates(scores)
    cost = c_miss * fnr * p_target + c_fa * fpr * (1.0 - p_target)
    return float(cost.min() / min(c_miss * p_target, c_fa * (1.0 - p_target)))


# -- adaptive s-norm ------------------------------------------------------------

def _topk_stats(cohort_scores: np.ndarray, topk: int, side: str):
    """Mean and sample std of the ``topk`` largest scores per row."""
    if cohort_scores.shape[1] < topk:
        raise ConfigError(f"cohort has {cohort_scores.shape[1]} entries, fewer than topk={topk}")
    if topk < 2:
        raise ConfigError("topk must be >= 2 for a sample standard deviation")
    top = -np.sort(-cohort_scores, axis=1)[:, :topk]
    mu = top.mean(axis=1)
    sd = top.std(axis=1, ddof=1)
    bad = np.flatnonzero(sd == 0)
    if bad.size:
        raise NumericError(f"{side} cohort scores have zero spread (row {int(bad[0])}); cannot normalize")
    return mu, sd


def asnorm_scores(raw, enroll_cohort, test_cohort, topk: int = 300) -> np.ndarray:
    """Normalize raw scores given each trial's cohort score rows.

    ``enroll_cohort[i]`` holds the scores of trial ``i``'s enrollment side
    against every cohort entry; likewise ``test_cohort[i]``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    mu_e, sd_e = _topk_stats(np.atleast_2d(np.asarray(enroll_cohort, dtype=np.float64)), topk, "enroll")
    mu_t, sd_t = _topk_stats(np.atleast_2d(np.asarray(test_cohort, dtype=np.float64)), topk, "test")
    return 0.5 * ((raw - mu_e) / sd_e + (raw - mu_t) / sd_t)


def asnorm(raw: ScoreSet, enroll_emb, test_emb, cohort_emb, topk: int = 300) -> ScoreSet:
    """Top-k adaptive s-norm of cosine scores.

    ``enroll_emb[i]`` and ``test_emb[i]`` are the embeddings of trial ``i``.
    """
    cohort = np.asarray(cohort_emb)
    if cohort.shape[0] < topk:
        raise ConfigError(f"cohort has {cohort.shape[0]} embeddings, fewer than topk={topk}")
    ec = cosine_matrix(enroll_emb, cohort)
    tc = cosine_matrix(test_emb, cohort)
    norm = asnorm_scores(raw.scores, ec, tc, topk)
    return ScoreSet(raw.labels, raw.scores, norm)


def score_trials(trials: Sequence[Trial], enroll: Mapping[str, np.ndarray], test: Mapping[str, np.ndarray],
                 cohort=None, topk: int = 300) -> ScoreSet:
    """Cosine score every trial; add AS-Norm scores when a cohort is given."""
    for tr in trials:
        if tr.enroll not in enroll:
            raise InputError(f"trial references missing enrollment id '{tr.enroll}'")
        if tr.test not in test:
            raise InputError(f"trial references missing test id '{tr.test}'")
    if not trials:
        raise InputError("empty trial list")
    e = np.asarray([enroll[tr.enroll] for tr in trials], dtype=np.float64)
    t = np.asarray([test[tr.test] for tr in trials], dtype=np.float64)
    raw = _cosine_rows(e, t)
    ss = ScoreSet([tr.label for tr in trials], raw)
    if cohort is not None:
        ss = asnorm(ss, e, t, cohort, topk)
    return ss


# -- text formats -------------------------------------------------------------

def read_trials(path) -> list[Trial]:
    trials = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise FormatError(f"{path}:{n}: expected '<0|1> <enroll_id> <test_id>', got {line!r}")
        trials.append(Trial(int(parts[0]), parts[1], parts[2]))
    return trials


def write_trials(path, trials: Sequence[Trial]) -> None:
    Path(path).write_text("".join(f"{t.label} {t.enroll} {t.test}\n" for t in trials))


def read_scores(path) -> list[tuple[str, str, float]]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{n}: expected '<enroll_id> <test_id> <score>', got {line!r}")
        try:
            out.append((parts[0], parts[1], float(parts[2])))
        except ValueError:
            raise FormatError(f"{path}:{n}: score {parts[2]!r} is not a number") from None
    return out


def format_score(x: float) -> str:
    return f"{x:.9g}"


def write_scores(path, trials: Sequence[Trial], scores) -> None:
    Path(path).write_text("".join(f"{t.enroll} {t.test} {format_score(s)}\n" for t, s in zip(trials, scores)))
