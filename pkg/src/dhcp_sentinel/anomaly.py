"""Lower detection layer: pick-detect thresholding, outcome accounting, attack sign.

Pick-detect is read as: cut traffic into fixed tumbling windows, compute six
per-window metrics, learn ``threshold = mean + k_sigma * stddev`` (population
stddev) from benign windows and alert on any metric strictly above its
threshold.

The attack sign is ``ST = (TN / (TN + d)) / (FN / (FN + b))``.  The printed
expression in the source is ambiguous; this grouping is the only one that
reproduces its worked example, TN=3, FN=2, d=b=1 -> 9/8 = 1.125.
"""
from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .trace import ConnectionRecord, DataPacket, EventTrace, NetworkEvent, TcpSyn
from .validation import check_positive, check_trace

METRICS = (
    "events_per_sec",
    "bytes_per_sec",
    "distinct_payloads_per_window",
    "syn_unacked_ratio",
    "connection_duration_secs",
    "failed_logins_per_window",
)


class TooShort(ValueError):
    pass


class LabeledAttackInBaseline(ValueError):
    pass


class Untrained(RuntimeError):
    pass


class EmptyList(ValueError):
    pass


class InvalidSmoothing(ValueError):
    pass


def window_metrics(events: Sequence[NetworkEvent], window_secs: float) -> Dict[str, float]:
    n_bytes = 0
    digests = set()
    syn_total = syn_unacked = 0
    max_duration = 0.0
    failed = 0
    for ev in events:
        kind = ev.kind
        if isinstance(kind, DataPacket):
            n_bytes += kind.payload_len
            digests.add(kind.payload_digest)
        elif isinstance(kind, TcpSyn):
            syn_total += 1
            syn_unacked += not kind.acked
        elif isinstance(kind, ConnectionRecord):
            max_duration = max(max_duration, kind.duration_secs)
            failed += kind.failed_logins
    return {
        "events_per_sec": len(events) / window_secs,
        "bytes_per_sec": n_bytes / window_secs,
        "distinct_payloads_per_window": float(len(digests)),
        "syn_unacked_ratio": syn_unacked / syn_total if syn_total else 0.0,
        "connection_duration_secs": max_duration,
        "failed_logins_per_window": float(failed),
    }


def window_index(ts: float, window_secs: float) -> int:
    return math.floor(ts / window_secs)


def iter_windows(events: Sequence[NetworkEvent], window_secs: float) -> Iterator[Tuple[int, List[NetworkEvent]]]:
    """Tumbling windows on the absolute grid, from the first event's window to the last one's.

    Empty windows in between are yielded too.
    """
    if not events:
        return
    first = window_index(events[0].timestamp, window_secs)
    last = window_index(events[-1].timestamp, window_secs)
    i = 0
    for w in range(first, last + 1):
        bucket = []
        while i < len(events) and window_index(events[i].timestamp, window_secs) == w:
            bucket.append(events[i])
            i += 1
        yield w, bucket


@dataclass(frozen=True)
class MetricStats:
    mean: float
    stddev: float
    threshold: float


@dataclass(frozen=True)
class ThresholdModel:
    stats: Mapping[str, MetricStats]
    window_secs: float
    k_sigma: float

    def threshold(self, metric: str) -> float:
        return self.stats[metric].threshold

    def to_dict(self) -> dict:
        return {
            "format": "dsent-model/1",
            "window_secs": self.window_secs,
            "k_sigma": self.k_sigma,
            "metrics": {m: {"mean": s.mean, "stddev": s.stddev, "threshold": s.threshold}
                        for m, s in sorted(self.stats.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ThresholdModel":
        stats = {m: MetricStats(float(v["mean"]), float(v["stddev"]), float(v["threshold"]))
                 for m, v in d["metrics"].items()}
        missing = set(METRICS) - set(stats)
        if missing:
            raise ValueError(f"model lacks metrics {sorted(missing)}")
        return cls(stats, float(d["window_secs"]), float(d["k_sigma"]))

    @classmethod
    def loads(cls, text: str) -> "ThresholdModel":
        return cls.from_dict(json.loads(text))

    def with_thresholds(self, **thresholds: float) -> "ThresholdModel":
        stats = dict(self.stats)
        for m, t in thresholds.items():
            s = stats[m]
            stats[m] = MetricStats(s.mean, s.stddev, t)
        return ThresholdModel(stats, self.window_secs, self.k_sigma)


def _fit_model(matrix: np.ndarray, window_secs: float, k_sigma: float) -> ThresholdModel:
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0, ddof=0)
    stats = {m: MetricStats(float(mean[j]), float(std[j]), float(mean[j] + k_sigma * std[j]))
             for j, m in enumerate(METRICS)}
    return ThresholdModel(stats, window_secs, k_sigma)


def metric_matrix(trace: EventTrace, window_secs: float) -> np.ndarray:
    rows = [[window_metrics(bucket, window_secs)[m] for m in METRICS]
            for _, bucket in iter_windows(trace.events, window_secs)]
    return np.asarray(rows, dtype=float).reshape(-1, len(METRICS))


def train_baseline(benign_trace: EventTrace, window_secs: float = 5.0, k_sigma: float = 3.0) -> ThresholdModel:
    check_positive(window_secs, "window_secs")
    for ev in benign_trace.events:
        if ev.is_attack:
            raise LabeledAttackInBaseline(f"event {ev.id} is labeled {ev.label.value}")
    matrix = metric_matrix(benign_trace, window_secs)
    if matrix.shape[0] < 2:
        raise TooShort(f"baseline spans {matrix.shape[0]} window(s), need at least 2")
    return _fit_model(matrix, window_secs, k_sigma)


@dataclass(frozen=True)
class PickVerdict:
    alert: bool
    metrics_exceeded: Tuple[str, ...]
    values: Mapping[str, float]


def pick_detect(window: Sequence[NetworkEvent], model: Optional[ThresholdModel]) -> PickVerdict:
    if model is None:
        raise Untrained("pick_detect needs a trained ThresholdModel")
    values = window_metrics(window, model.window_secs)
    exceeded = tuple(m for m in METRICS if values[m] > model.threshold(m))
    return PickVerdict(bool(exceeded), exceeded, values)


class PickDetector(TransformerMixin, BaseEstimator):
    """Estimator front end for the pick-detect layer.

    ``transform`` maps a trace to its per-window metric matrix (columns in
    :data:`METRICS` order); ``fit`` learns the thresholds from a benign trace;
    ``predict`` returns one 0/1 alert flag per window.
    """

    def __init__(self, window_secs: float = 5.0, k_sigma: float = 3.0):
        self.window_secs = window_secs
        self.k_sigma = k_sigma

    def fit(self, X, y=None):
        trace = check_trace(X)
        self.model_ = train_baseline(trace, self.window_secs, self.k_sigma)
        self.n_features_in_ = len(METRICS)
        return self

    def transform(self, X):
        return metric_matrix(check_trace(X), self.window_secs)

    def predict(self, X):
        check_is_fitted(self, "model_")
        matrix = self.transform(X)
        thresholds = np.array([self.model_.threshold(m) for m in METRICS])
        return (matrix > thresholds).any(axis=1).astype(int)

    def detect(self, window: Sequence[NetworkEvent]) -> PickVerdict:
        check_is_fitted(self, "model_")
        return pick_detect(window, self.model_)


# -- outcome accounting -----------------------------------------------------------

class Outcome(str, enum.Enum):
    TP = "tp"
    FP = "fp"
    TN = "tn"
    FN = "fn"


def classify_outcome(alert: bool, ground_truth_attack: bool) -> Outcome:
    if alert:
        return Outcome.TP if ground_truth_attack else Outcome.FP
    return Outcome.FN if ground_truth_attack else Outcome.TN


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts are non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[Outcome]) -> "ConfusionCounts":
        c = Counter(outcomes)
        return cls(c[Outcome.TP], c[Outcome.FP], c[Outcome.TN], c[Outcome.FN])

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def outcome_mean(outcomes: Sequence[Outcome]) -> Dict[Outcome, Fraction]:
    """Share of windows in each outcome class (the indicator average over d windows)."""
    d = len(outcomes)
    if d == 0:
        raise EmptyList("outcome_mean needs at least one window")
    c = Counter(outcomes)
    return {o: Fraction(c[o], d) for o in Outcome}


class SignVerdict(str, enum.Enum):
    ATTACK = "attack"
    NO_ATTACK = "no_attack"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class AttackSign:
    st_value: Union[Fraction, float]
    verdict: SignVerdict

    def to_dict(self) -> dict:
        st = "inf" if self.st_value == math.inf else str(Fraction(self.st_value))
        return {"st": st, "verdict": self.verdict.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttackSign":
        st = math.inf if d["st"] == "inf" else Fraction(d["st"])
        return cls(st, SignVerdict(d["verdict"]))


def _is_odd_prime(n: int) -> bool:
    if n < 3 or n % 2 == 0:
        return False
    return all(n % p for p in range(3, math.isqrt(n) + 1, 2))


def sign_verdict(tn: int, fn: int, d: int = 1, b: int = 1) -> SignVerdict:
    """Verdict of :func:`attack_sign` by integer cross-multiplication, no rational built."""
    if d < 1 or b < 1:
        raise InvalidSmoothing(f"smoothing constants must be >= 1 (d={d}, b={b})")
    if tn < 0 or fn < 0:
        raise ValueError("tn and fn are counts")
    if fn == 0:
        return SignVerdict.NO_ATTACK
    num, den = tn * (fn + b), (tn + d) * fn
    if num > den:
        return SignVerdict.NO_ATTACK
    if num < den:
        return SignVerdict.ATTACK
    return SignVerdict.INCONCLUSIVE


def attack_sign(tn: int, fn: int, d: int = 1, b: int = 1, strict: bool = False) -> AttackSign:
    """ST = (tn/(tn+d)) / (fn/(fn+b)), exact; ST > 1 no attack, ST < 1 attack.

    ``strict`` additionally enforces the illustrative constraints of the worked
    example (TN an odd prime, FN even, 1 < FN < TN).
    """
    verdict = sign_verdict(tn, fn, d, b)
    if strict and not (_is_odd_prime(tn) and fn % 2 == 0 and 1 < fn < tn):
        raise ValueError(f"strict mode needs odd prime TN and even FN with 1 < FN < TN (tn={tn}, fn={fn})")
    if fn == 0:
        return AttackSign(math.inf, verdict)
    return AttackSign(Fraction(tn * (fn + b), (tn + d) * fn), verdict)
