"""Validation metrics: Dice overlap, intra/inter-subject consistency with a
Welch two-sample test, and within-ROI functional homogeneity.

The Student-t CDF is computed from the regularized incomplete beta function
via Lentz's continued fraction, so the package has no stats dependency; tests
pin it against a high-precision quadrature oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .connectome import TimeSeries, pearson_fc
from .errors import InputError
from .graph import Parcellation


# ---------------------------------------------------------------------------
# Student-t machinery
# ---------------------------------------------------------------------------

def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    max_iter = 300
    eps = 3e-16
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise InputError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student-t with df dof."""
    if df <= 0:
        raise InputError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(0.5 * df, 0.5, x)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float
    degenerate: bool = False


def welch_t_test(x: np.ndarray, y: np.ndarray) -> TTestResult:
    """Welch's unequal-variance two-sample t-test, two-sided."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or y.size < 2:
        raise InputError("each sample needs at least 2 observations")
    vx = x.var(ddof=1)
    vy = y.var(ddof=1)
    if vx == 0.0 and vy == 0.0:
        return TTestResult(t=float("nan"), p=float("nan"), df=float("nan"),
                           degenerate=True)
    sx = vx / x.size
    sy = vy / y.size
    t = (x.mean() - y.mean()) / math.sqrt(sx + sy)
    df = (sx + sy) ** 2 / (sx ** 2 / (x.size - 1) + sy ** 2 / (y.size - 1))
    return TTestResult(t=float(t), p=student_t_sf_two_sided(float(t), df), df=float(df))


def paired_t_test(x: np.ndarray, y: np.ndarray) -> TTestResult:
    """One-sample t-test on paired differences, two-sided."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InputError("paired samples must align")
    if x.size < 2:
        raise InputError("need at least 2 pairs")
    d = x - y
    sd = d.std(ddof=1)
    if sd == 0.0:
        return TTestResult(t=float("nan"), p=float("nan"), df=float(d.size - 1),
                           degenerate=True)
    t = d.mean() / (sd / math.sqrt(d.size))
    df = d.size - 1
    return TTestResult(t=float(t), p=student_t_sf_two_sided(float(t), df), df=float(df))


# ---------------------------------------------------------------------------
# Dice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiceResult:
    per_roi: np.ndarray  # (n_roi,) float64, nan for skipped ROIs
    mean: float  # over non-skipped ROIs
    skipped: tuple[int, ...]


def dice(a: Parcellation, b: Parcellation) -> DiceResult:
    """Per-ROI overlap 2|A & B| / (|A| + |B|) under one-to-one ROI identity.

    ROIs empty in both parcellations are skipped (excluded from the mean);
    ROIs empty in exactly one score 0.
    """
    if a.n_roi != b.n_roi:
        raise InputError(f"ROI count mismatch: {a.n_roi} vs {b.n_roi}")
    if a.vertex_count != b.vertex_count:
        raise InputError("parcellations cover different vertex counts")
    n_roi = a.n_roi
    size_a = np.bincount(a.labels, minlength=n_roi)
    size_b = np.bincount(b.labels, minlength=n_roi)
    agree = a.labels == b.labels
    inter = np.bincount(a.labels[agree], minlength=n_roi)
    per_roi = np.full(n_roi, np.nan)
    skipped = []
    for r in range(n_roi):
        total = size_a[r] + size_b[r]
        if total == 0:
            skipped.append(r)
        else:
            per_roi[r] = 2.0 * inter[r] / total
    live = ~np.isnan(per_roi)
    if not live.any():
        raise InputError("every ROI is empty in both parcellations")
    return DiceResult(per_roi, float(per_roi[live].mean()), tuple(skipped))


# ---------------------------------------------------------------------------
# Consistency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConsistencyReport:
    intra: np.ndarray  # mean dice per same-subject session pair
    inter: np.ndarray  # mean dice per cross-subject session pair
    intra_mean: float
    inter_mean: float
    t: float
    p: float
    degenerate: bool


def consistency(parcellations: dict[tuple, Parcellation]) -> ConsistencyReport:
    """Same-subject vs cross-subject session-pair Dice, Welch-tested.

    Keys are (subject, session) tuples.  Requires at least two subjects with
    at least two sessions each.
    """
    by_subject: dict = {}
    for (subject, session), parc in parcellations.items():
        by_subject.setdefault(subject, []).append((session, parc))
    if len(by_subject) < 2:
        raise InputError("consistency needs at least 2 subjects")
    for subject, sessions in by_subject.items():
        if len(sessions) < 2:
            raise InputError(f"subject {subject!r} has fewer than 2 sessions")
        sessions.sort(key=lambda item: item[0])

    subjects = sorted(by_subject)
    intra = []
    for subject in subjects:
        sessions = by_subject[subject]
        for i in range(len(sessions)):
            for j in range(i + 1, len(sessions)):
                intra.append(dice(sessions[i][1], sessions[j][1]).mean)
    inter = []
    for i in range(len(subjects)):
        for j in range(i + 1, len(subjects)):
            for _, pa in by_subject[subjects[i]]:
                for _, pb in by_subject[subjects[j]]:
                    inter.append(dice(pa, pb).mean)
    intra = np.asarray(intra)
    inter = np.asarray(inter)
    test = welch_t_test(intra, inter)
    return ConsistencyReport(intra, inter, float(intra.mean()), float(inter.mean()),
                             test.t, test.p, test.degenerate)


# ---------------------------------------------------------------------------
# Functional homogeneity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomogeneityResult:
    per_roi: np.ndarray  # (n_roi,) float64, nan for skipped ROIs
    mean: float  # unweighted over non-skipped ROIs
    skipped: tuple[int, ...]


def homogeneity(atlas: Parcellation, ts: TimeSeries) -> HomogeneityResult:
    """Mean pairwise within-ROI correlation, averaged evenly across ROIs.

    ROIs with fewer than 2 vertices are skipped.
    """
    if atlas.vertex_count != ts.vertex_count:
        raise InputError(
            f"atlas covers {atlas.vertex_count} vertices, series {ts.vertex_count}"
        )
    per_roi = np.full(atlas.n_roi, np.nan)
    skipped = []
    for roi in range(atlas.n_roi):
        members = atlas.roi_vertices(roi)
        m = members.size
        if m < 2:
            skipped.append(roi)
            continue
        fc, _ = pearson_fc(TimeSeries(ts.data[:, members]))
        per_roi[roi] = (fc.sum() - np.trace(fc)) / (m * (m - 1))
    live = ~np.isnan(per_roi)
    if not live.any():
        raise InputError("every ROI has fewer than 2 vertices")
    return HomogeneityResult(per_roi, float(per_roi[live].mean()), tuple(skipped))
