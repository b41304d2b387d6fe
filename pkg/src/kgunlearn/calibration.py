"""Entropy, entropy-threshold mapping, temperature scaling and calibration error."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

LOG2_3 = math.log2(3)
_ZERO = 1e-12
_SUM_TOL = 1e-9


class CalibrationDomainError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


def entropy_bits(dist: Sequence[float]) -> float:
    """Base-2 Shannon entropy of a probability vector.

    Components below 1e-12 contribute nothing. Raises
    :class:`CalibrationDomainError` on negative components or a sum that is
    not 1 within 1e-9.
    """
    if any(p < 0 for p in dist):
        raise CalibrationDomainError(f"negative probability in {tuple(dist)}")
    total = math.fsum(dist)
    if abs(total - 1.0) > _SUM_TOL:
        raise CalibrationDomainError(f"probabilities sum to {total!r}, not 1")
    h = -math.fsum(p * math.log2(p) for p in dist if p >= _ZERO)
    return h if h > 0.0 else 0.0


def _root_decreasing(f, lo: float, hi: float) -> float:
    # f(lo) >= 0 >= f(hi); endpoints that already sit on the root are returned as is
    if f(lo) <= 0.0:
        return lo
    if f(hi) >= 0.0:
        return hi
    return float(brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def yes_prob_range(u_star: float) -> tuple[float, float]:
    """Yes-probabilities compatible with entropy ``u_star`` when Yes is the argmax.

    The upper end is reached when No and Unknown split the remaining mass
    evenly; the lower end when the remainder sits on a single option. Above
    1 bit the single-option split can no longer keep Yes on top, so the lower
    end moves to the ``(p, p, 1-2p)`` family instead.
    """
    if not (0.0 < u_star <= LOG2_3 + 1e-12):
        raise CalibrationDomainError(f"u_star must lie in (0, log2 3], got {u_star}")
    u_star = min(u_star, LOG2_3)

    def upper(p: float) -> float:
        return entropy_bits((p, (1 - p) / 2, (1 - p) / 2)) - u_star

    hi = _root_decreasing(upper, 1.0 / 3.0, 1.0)
    if u_star <= 1.0:
        lo = _root_decreasing(lambda p: entropy_bits((p, 1 - p, 0.0)) - u_star, 0.5, 1.0)
    else:
        # H(p, p, 1-2p) falls from log2 3 at p=1/3 to 1 at p=1/2
        lo = _root_decreasing(
            lambda p: entropy_bits((p, p, max(0.0, 1 - 2 * p))) - u_star, 1.0 / 3.0, 0.5
        )
    return lo, hi


# --------------------------------------------------------------------------
# temperature scaling

Label = Literal["positive", "negative"]


@dataclass(frozen=True)
class LogitRecord:
    logit_yes: float
    logit_no: float
    logit_unknown: float
    gold_label: Label

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in (self.logit_yes, self.logit_no, self.logit_unknown)):
            raise CalibrationDomainError("logits must be finite")
        if self.gold_label not in ("positive", "negative"):
            raise CalibrationDomainError(f"unknown gold label {self.gold_label!r}")


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    mean_confidence: float
    accuracy: float
    count: int


@dataclass
class CalibrationReport:
    temperature: float
    ece_yes: float
    ece_no: float
    ece_yes_before: float
    ece_no_before: float
    nll: float
    nll_before: float
    n_bins: int
    bins_yes: list[ReliabilityBin] = field(default_factory=list)
    bins_no: list[ReliabilityBin] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationReport":
        data = dict(data)
        data["bins_yes"] = [ReliabilityBin(**b) for b in data.get("bins_yes", [])]
        data["bins_no"] = [ReliabilityBin(**b) for b in data.get("bins_no", [])]
        return cls(**data)

    def bins_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["split", "bin_lo", "bin_hi", "mean_conf", "accuracy", "count"])
        for split, bins in (("yes", self.bins_yes), ("no", self.bins_no)):
            for b in bins:
                writer.writerow([split, b.lo, b.hi, b.mean_confidence, b.accuracy, b.count])
        return buf.getvalue()


def softmax3(logits: Sequence[float], temperature: float = 1.0) -> tuple[float, float, float]:
    z = np.asarray(logits, dtype=float) / temperature
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    return float(p[0]), float(p[1]), float(p[2])


def _logit_matrix(records: Sequence[LogitRecord]) -> tuple[np.ndarray, np.ndarray]:
    z = np.array([[r.logit_yes, r.logit_no, r.logit_unknown] for r in records], dtype=float)
    positive = np.array([r.gold_label == "positive" for r in records])
    return z, positive


def _probs(z: np.ndarray, temperature: float) -> np.ndarray:
    s = z / temperature
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def _nll(z: np.ndarray, positive: np.ndarray, temperature: float) -> float:
    s = z / temperature
    m = s.max(axis=1, keepdims=True)
    log_norm = (m + np.log(np.exp(s - m).sum(axis=1, keepdims=True)))[:, 0]
    # negatives count as correct on whichever rejection option scores higher
    target = np.where(positive, s[:, 0], np.maximum(s[:, 1], s[:, 2]))
    return float(np.mean(log_norm - target))


def split_predictions(
    records: Sequence[LogitRecord], temperature: float
) -> tuple[list[tuple[float, bool]], list[tuple[float, bool]]]:
    """(confidence, correct) pairs for records predicted Yes and predicted No/Unknown."""
    z, positive = _logit_matrix(records)
    p = _probs(z, temperature)
    yes_preds: list[tuple[float, bool]] = []
    no_preds: list[tuple[float, bool]] = []
    for row, pos in zip(p, positive):
        top = int(np.argmax(row))
        if top == 0:
            yes_preds.append((float(row[0]), bool(pos)))
        else:
            no_preds.append((float(row[top]), not bool(pos)))
    return yes_preds, no_preds


def fit_temperature(
    records: Sequence[LogitRecord],
    *,
    n_bins: int = 10,
    bounds: tuple[float, float] = (0.05, 20.0),
    rel_tol: float = 1e-4,
) -> CalibrationReport:
    """Fit a single softmax temperature by minimising NLL of the correct choice.

    A bounded scalar search runs over ``ln T``; ECE on Yes- and No-predictions is
    reported both at T=1 and at the fitted temperature.
    """
    if len(records) < 10:
        raise DegenerateDataError(f"need at least 10 records, got {len(records)}")
    z, positive = _logit_matrix(records)
    if positive.all() or not positive.any():
        raise DegenerateDataError("records must contain both positive and negative labels")

    res = minimize_scalar(
        lambda x: _nll(z, positive, math.exp(x)),
        bounds=(math.log(bounds[0]), math.log(bounds[1])),
        method="bounded",
        options={"xatol": rel_tol},
    )
    temperature = math.exp(float(res.x))
    nll_before = _nll(z, positive, 1.0)
    nll_after = _nll(z, positive, temperature)
    if nll_after > nll_before:
        # the search interval excludes T=1 only if bounds were overridden
        temperature, nll_after = 1.0, nll_before

    yes_before, no_before = split_predictions(records, 1.0)
    yes_after, no_after = split_predictions(records, temperature)
    return CalibrationReport(
        temperature=temperature,
        ece_yes=_ece_or_zero(yes_after, n_bins),
        ece_no=_ece_or_zero(no_after, n_bins),
        ece_yes_before=_ece_or_zero(yes_before, n_bins),
        ece_no_before=_ece_or_zero(no_before, n_bins),
        nll=nll_after,
        nll_before=nll_before,
        n_bins=n_bins,
        bins_yes=reliability_bins(yes_after, n_bins),
        bins_no=reliability_bins(no_after, n_bins),
    )


def _ece_or_zero(preds: Sequence[tuple[float, bool]], n_bins: int) -> float:
    return expected_calibration_error(preds, n_bins) if preds else 0.0


# --------------------------------------------------------------------------
# calibration error


def _bin_index(conf: float, n_bins: int) -> int:
    return min(int(conf * n_bins), n_bins - 1)


def reliability_bins(predictions: Iterable[tuple[float, bool]], n_bins: int = 10) -> list[ReliabilityBin]:
    if n_bins < 1:
        raise CalibrationDomainError("n_bins must be >= 1")
    conf_sum = [0.0] * n_bins
    hits = [0] * n_bins
    counts = [0] * n_bins
    for conf, correct in predictions:
        if not 0.0 <= conf <= 1.0:
            raise CalibrationDomainError(f"confidence {conf} outside [0, 1]")
        i = _bin_index(conf, n_bins)
        conf_sum[i] += conf
        hits[i] += bool(correct)
        counts[i] += 1
    return [
        ReliabilityBin(
            lo=i / n_bins,
            hi=(i + 1) / n_bins,
            mean_confidence=conf_sum[i] / counts[i] if counts[i] else 0.0,
            accuracy=hits[i] / counts[i] if counts[i] else 0.0,
            count=counts[i],
        )
        for i in range(n_bins)
    ]


def expected_calibration_error(predictions: Sequence[tuple[float, bool]], n_bins: int = 10) -> float:
    """Equal-width binned ECE: sum over bins of (|b|/N) * |acc(b) - conf(b)|."""
    predictions = list(predictions)
    if not predictions:
        raise CalibrationDomainError("ECE of an empty prediction set is undefined")
    bins = reliability_bins(predictions, n_bins)
    n = len(predictions)
    return math.fsum(b.count / n * abs(b.accuracy - b.mean_confidence) for b in bins if b.count)
