"""Case-complexity hypothesis tests.

Mann-Whitney U with midrank ties and a Hodges-Lehmann shift estimate,
Pearson chi-square on 2x2 admission tables, and Kaplan-Meier based
restricted-mean comparison of ED length of stay.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2, norm, rankdata

from .errors import DegenerateDataError

EXACT_SIZE_LIMIT = 10  # per-sample size below which the U null is enumerated
MATERIALIZE_LIMIT = 4_000_000  # pairwise diffs held in memory below this


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    p: float
    df: int | None = None
    effect: float | None = None
    ci95: tuple[float, float] | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "df": self.df,
            "p": self.p,
            "effect": self.effect,
            "ci95": None if self.ci95 is None else list(self.ci95),
            "extras": dict(self.extras),
        }


# ---------------------------------------------------------------------------
# Mann-Whitney U


def _tie_corrected_sd(pooled: np.ndarray, n1: int, n2: int) -> float:
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(float) ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    return math.sqrt(max(var, 0.0))


def _exact_u_distribution(doubled_ranks: list[int], n1: int) -> np.ndarray:
    """Subset counts of the doubled rank-sum via dynamic programming.

    Returns counts[k][s] over subsets of size k with doubled rank-sum s;
    exact under ties because midranks double to integers.
    """
    total = sum(doubled_ranks)
    counts = np.zeros((n1 + 1, total + 1), dtype=float)
    counts[0, 0] = 1.0
    for r in doubled_ranks:
        for k in range(n1 - 1, -1, -1):
            row = counts[k]
            nz = np.nonzero(row)[0]
            counts[k + 1, nz + r] += row[nz]
    return counts[n1]


def _exact_p(
    pooled_ranks: np.ndarray, n1: int, n2: int, u1: float, alternative: str
) -> float:
    doubled = [int(round(2 * r)) for r in pooled_ranks]
    dist = _exact_u_distribution(doubled, n1)
    total = dist.sum()
    # doubled U for sample 1 = doubled rank sum - n1(n1+1)
    shift = n1 * (n1 + 1)
    u_doubled = np.arange(dist.shape[0]) - shift
    u_obs = int(round(2 * u1))
    mass = dist / total
    le = float(mass[u_doubled <= u_obs].sum())
    ge = float(mass[u_doubled >= u_obs].sum())
    if alternative == "less":
        return min(le, 1.0)
    if alternative == "greater":
        return min(ge, 1.0)
    return min(2.0 * min(le, ge), 1.0)


def _count_diffs_le(xs: np.ndarray, ys: np.ndarray, v: float) -> int:
    """#{(i, j): x_i - y_j <= v} with both arrays sorted ascending."""
    # x - y <= v  <=>  y >= x - v
    idx = np.searchsorted(ys, xs - v, side="left")
    return int(np.sum(len(ys) - idx))


def _kth_pairwise_diff(xs: np.ndarray, ys: np.ndarray, k: int) -> float:
    """Exact k-th smallest of {x_i - y_j} (1-based) without materializing."""
    total = len(xs) * len(ys)
    k = min(max(k, 1), total)
    if total <= MATERIALIZE_LIMIT:
        diffs = np.subtract.outer(xs, ys).ravel()
        return float(np.partition(diffs, k - 1)[k - 1])
    lo = float(xs[0] - ys[-1]) - 1.0
    hi = float(xs[-1] - ys[0])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _count_diffs_le(xs, ys, mid) >= k:
            hi = mid
        else:
            lo = mid
    # lo < kth value <= hi; the kth value is the smallest achieved diff > lo
    j = np.searchsorted(ys, xs - lo, side="left") - 1
    valid = j >= 0
    if not valid.any():
        return hi
    return float(np.min(xs[valid] - ys[j[valid]]))


def _hodges_lehmann(xs: np.ndarray, ys: np.ndarray) -> float:
    total = len(xs) * len(ys)
    k = (total + 1) // 2
    lo = _kth_pairwise_diff(xs, ys, k)
    if total % 2 == 1:
        return lo
    return 0.5 * (lo + _kth_pairwise_diff(xs, ys, k + 1))


def mann_whitney_u(
    x: Sequence[float],
    y: Sequence[float],
    alternative: str = "two-sided",
    method: str = "auto",
) -> TestResult:
    """Rank-sum comparison of two samples.

    The U statistic counts pairs where x exceeds y (ties count half). Small
    samples get the exact permutation null (enumerated by dynamic
    programming, valid under ties); larger ones use the normal approximation
    with tie-corrected variance and continuity correction. The effect is the
    Hodges-Lehmann median of pairwise differences x - y with a
    distribution-free confidence interval ("greater" yields a one-sided
    lower bound, the upper end reported as +inf).
    """
    xa = np.asarray(list(x), dtype=float)
    ya = np.asarray(list(y), dtype=float)
    if xa.size == 0 or ya.size == 0:
        raise DegenerateDataError("both samples must be non-empty")
    if alternative not in ("two-sided", "less", "greater"):
        raise ValueError(f"unknown alternative: {alternative}")
    n1, n2 = len(xa), len(ya)
    pooled = np.concatenate([xa, ya])
    if np.all(pooled == pooled[0]):
        raise DegenerateDataError("all values identical; rank variance is zero")

    ranks = rankdata(pooled)
    r1 = float(ranks[:n1].sum())
    u1 = n1 * n2 + n1 * (n1 + 1) / 2.0 - r1

    use_exact = method == "exact" or (
        method == "auto" and max(n1, n2) <= EXACT_SIZE_LIMIT
    )
    sd = _tie_corrected_sd(pooled, n1, n2)
    if use_exact:
        p = _exact_p(ranks, n1, n2, u1, alternative)
    else:
        mean = n1 * n2 / 2.0
        if alternative == "two-sided":
            z = (abs(u1 - mean) - 0.5) / sd
            p = 2.0 * float(norm.sf(max(z, 0.0)))
        elif alternative == "greater":  # shift x - y > 0, i.e. large U
            z = (u1 - mean - 0.5) / sd
            p = float(norm.sf(z))
        else:
            z = (u1 - mean + 0.5) / sd
            p = float(norm.cdf(z))
        p = min(p, 1.0)

    xs = np.sort(xa)
    ys = np.sort(ya)
    effect = _hodges_lehmann(xs, ys)
    total = n1 * n2
    if alternative == "greater":
        k = int(math.floor(total / 2.0 - norm.ppf(0.95) * sd))
        lower = _kth_pairwise_diff(xs, ys, max(k, 0) + 1)
        ci: tuple[float, float] = (lower, math.inf)
    elif alternative == "less":
        k = int(math.floor(total / 2.0 - norm.ppf(0.95) * sd))
        upper = _kth_pairwise_diff(xs, ys, total - max(k, 0))
        ci = (-math.inf, upper)
    else:
        k = int(math.floor(total / 2.0 - norm.ppf(0.975) * sd))
        k = max(k, 0)
        ci = (
            _kth_pairwise_diff(xs, ys, k + 1),
            _kth_pairwise_diff(xs, ys, total - k),
        )
    return TestResult(
        test="mann_whitney",
        statistic=u1,
        p=p,
        effect=effect,
        ci95=ci,
        extras={
            "n_x": n1,
            "n_y": n2,
            "median_x": float(np.median(xa)),
            "median_y": float(np.median(ya)),
            "method": "exact" if use_exact else "normal",
        },
    )


# ---------------------------------------------------------------------------
# 2x2 chi-square


def chi_square_2x2(table: Sequence[Sequence[float]], yates: bool = False) -> TestResult:
    """Pearson chi-square on a 2x2 table, df = 1, no correction by default.

    Rows are groups, columns outcomes; the effect is the difference of
    first-column proportions with a Wald 95% interval.
    """
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2):
        raise ValueError("table must be 2x2")
    if (t < 0).any():
        raise ValueError("counts must be non-negative")
    a, b = t[0]
    c, d = t[1]
    n = a + b + c + d
    row1, row2 = a + b, c + d
    col1, col2 = a + c, b + d
    if min(row1, row2, col1, col2) <= 0:
        raise DegenerateDataError("all table marginals must be positive")
    delta = abs(a * d - b * c)
    if yates:
        delta = max(delta - n / 2.0, 0.0)
    stat = float(n * delta**2 / (row1 * row2 * col1 * col2))
    p = float(chi2.sf(stat, 1))
    p1, p2 = a / row1, c / row2
    diff = p1 - p2
    se = math.sqrt(p1 * (1 - p1) / row1 + p2 * (1 - p2) / row2)
    zq = float(norm.ppf(0.975))
    return TestResult(
        test="chi_square_2x2",
        statistic=stat,
        df=1,
        p=p,
        effect=float(diff),
        ci95=(float(diff - zq * se), float(diff + zq * se)),
        extras={"rate_1": float(p1), "rate_2": float(p2), "n_1": float(row1), "n_2": float(row2)},
    )


# ---------------------------------------------------------------------------
# Kaplan-Meier and restricted mean survival time


@dataclass
class SurvivalCurve:
    """Product-limit estimate with Greenwood variance at each event time."""

    times: np.ndarray  # distinct event times, increasing
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    greenwood_var: np.ndarray
    max_followup: float  # last observed time, censored or not

    def survival_at(self, t: float) -> float:
        """Right-continuous step evaluation; S(t) = 1 before the first event."""
        idx = bisect_right(self.times.tolist(), t) - 1
        return 1.0 if idx < 0 else float(self.survival[idx])

    def rmst(self, tau: float) -> float:
        """Stepwise-exact integral of S over [0, tau]."""
        self._check_tau(tau)
        area = 0.0
        prev_t, prev_s = 0.0, 1.0
        for t, s in zip(self.times, self.survival):
            if t >= tau:
                break
            area += prev_s * (t - prev_t)
            prev_t, prev_s = float(t), float(s)
        area += prev_s * (tau - prev_t)
        return area

    def rmst_variance(self, tau: float) -> float:
        """Greenwood-based variance of the restricted mean."""
        self._check_tau(tau)
        var = 0.0
        for i, t in enumerate(self.times):
            if t >= tau:
                break
            tail = self._area_from(float(t), tau)
            n_i, d_i = float(self.at_risk[i]), float(self.events[i])
            if n_i - d_i > 0:
                var += tail**2 * d_i / (n_i * (n_i - d_i))
        return var

    def _area_from(self, start: float, tau: float) -> float:
        area = 0.0
        prev_t = start
        prev_s = self.survival_at(start)
        for t, s in zip(self.times, self.survival):
            if t <= start:
                continue
            if t >= tau:
                break
            area += prev_s * (t - prev_t)
            prev_t, prev_s = float(t), float(s)
        area += prev_s * (tau - prev_t)
        return area

    def _check_tau(self, tau: float) -> None:
        if tau <= 0:
            raise ValueError("tau must be positive")
        if tau > self.max_followup and self.survival_at(self.max_followup) > 0.0:
            raise ValueError(
                f"tau {tau} exceeds follow-up {self.max_followup} with survivors remaining"
            )


def kaplan_meier(
    times: Sequence[float], events: Sequence[bool] | None = None
) -> SurvivalCurve:
    """Product-limit estimator; ties between events and censorings put the
    events first at each time."""
    t = np.asarray(list(times), dtype=float)
    if t.size == 0:
        raise DegenerateDataError("survival estimate needs at least one observation")
    if (t <= 0).any():
        raise ValueError("times must be positive")
    e = (
        np.ones(t.shape, dtype=bool)
        if events is None
        else np.asarray(list(events), dtype=bool)
    )
    if e.shape != t.shape:
        raise ValueError("times and event flags must align")

    order = np.argsort(t, kind="stable")
    t, e = t[order], e[order]
    distinct = np.unique(t[e])
    out_t, out_s, out_n, out_d, out_v = [], [], [], [], []
    s = 1.0
    varsum = 0.0
    for ti in distinct:
        n_i = int(np.sum(t >= ti))
        d_i = int(np.sum((t == ti) & e))
        s *= (n_i - d_i) / n_i
        if n_i - d_i > 0:
            varsum += d_i / (n_i * (n_i - d_i))
            green = s * s * varsum
        else:
            green = 0.0  # survival hit zero; variance is degenerate there
        out_t.append(float(ti))
        out_s.append(s)
        out_n.append(n_i)
        out_d.append(d_i)
        out_v.append(green)
    return SurvivalCurve(
        times=np.array(out_t),
        survival=np.array(out_s),
        at_risk=np.array(out_n),
        events=np.array(out_d),
        greenwood_var=np.array(out_v),
        max_followup=float(t.max()),
    )


def rmst_diff(
    times_a: Sequence[float],
    times_b: Sequence[float],
    tau: float,
    events_a: Sequence[bool] | None = None,
    events_b: Sequence[bool] | None = None,
) -> TestResult:
    """Difference in restricted mean survival time (group a minus b) at tau.

    The z-based 95% interval uses the Greenwood RMST variance of each group.
    tau may exceed a group's last observed time only when its survival has
    already reached zero (the integral is then exact).
    """
    times_a, times_b = list(times_a), list(times_b)
    curve_a = kaplan_meier(times_a, events_a)
    curve_b = kaplan_meier(times_b, events_b)
    rmst_a, rmst_b = curve_a.rmst(tau), curve_b.rmst(tau)
    var = curve_a.rmst_variance(tau) + curve_b.rmst_variance(tau)
    diff = rmst_a - rmst_b
    se = math.sqrt(var)
    if se == 0.0:
        z = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    else:
        z = diff / se
    p = 2.0 * float(norm.sf(abs(z))) if math.isfinite(z) else 0.0
    zq = float(norm.ppf(0.975))
    return TestResult(
        test="rmst_diff",
        statistic=float(z),
        p=min(p, 1.0),
        effect=float(diff),
        ci95=(float(diff - zq * se), float(diff + zq * se)),
        extras={
            "rmst_a": float(rmst_a),
            "rmst_b": float(rmst_b),
            "tau": float(tau),
            "n_a": len(times_a),
            "n_b": len(times_b),
        },
    )


def median_iqr(values: Iterable[float]) -> tuple[float, float, float]:
    arr = np.asarray(list(values), dtype=float)
    return (
        float(np.median(arr)),
        float(np.percentile(arr, 25)),
        float(np.percentile(arr, 75)),
    )
