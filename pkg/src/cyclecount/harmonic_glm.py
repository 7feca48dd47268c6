"""Poisson regression of hourly counts on weekly/daily Fourier terms.

The linear predictor is

    ln E(count) = ln N + a0
                  + sum_k [ a_k cos(2 pi k day/7)  + b_k sin(2 pi k day/7) ]
                  + sum_k [ alpha_k cos(2 pi k hour/24) + beta_k sin(2 pi k hour/24) ]
                  + frail * ( x_k/y_k day terms + xi_k/eta_k hour terms )

with ln N (group size) as a fixed offset and the frail-gated blocks present
only when the spec enables the interaction. Fitting is iteratively reweighted
least squares for the log-link Poisson likelihood.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg as sla
from scipy.special import gammaln
from scipy.stats import chi2

from .cohort import FRAIL
from .config import FitControls
from .errors import NonNestedError, RankDeficiencyError, RateUndefinedError
from .timeseries import N_SLOTS, SlotSeries, WeekSlot

MAX_K_WEEKLY = 3  # Nyquist limit for period 7
MAX_K_DAILY = 12  # Nyquist limit for period 24


@dataclass(frozen=True)
class FourierSpec:
    """Harmonic orders for the weekly and daily cycles."""

    k_weekly: int = 0
    k_daily: int = 0
    frail_interaction: bool = False

    def __post_init__(self):
        if not 0 <= self.k_weekly <= MAX_K_WEEKLY:
            raise ValueError(f"k_weekly must be in 0..{MAX_K_WEEKLY}")
        if not 0 <= self.k_daily <= MAX_K_DAILY:
            raise ValueError(f"k_daily must be in 0..{MAX_K_DAILY}")

    @property
    def n_params(self) -> int:
        base = 1 + 2 * self.k_weekly + 2 * self.k_daily
        # The frail-gated block mirrors the base block including its
        # intercept (a frail level shift, named x0 as the k=0 cosine term).
        return 2 * base if self.frail_interaction else base

    @property
    def column_names(self) -> tuple[str, ...]:
        names = ["a0"]
        for k in range(1, self.k_weekly + 1):
            names += [f"a{k}", f"b{k}"]
        for k in range(1, self.k_daily + 1):
            names += [f"alpha{k}", f"beta{k}"]
        if self.frail_interaction:
            names.append("x0")
            for k in range(1, self.k_weekly + 1):
                names += [f"x{k}", f"y{k}"]
            for k in range(1, self.k_daily + 1):
                names += [f"xi{k}", f"eta{k}"]
        return tuple(names)


def _trig_block(phase: np.ndarray, order: int) -> np.ndarray:
    """cos/sin column pairs for harmonics 1..order of the given phase."""
    cols = []
    for k in range(1, order + 1):
        cols.append(np.cos(k * phase))
        cols.append(np.sin(k * phase))
    if not cols:
        return np.empty((phase.shape[0], 0))
    return np.column_stack(cols)


def base_regressors(day: np.ndarray, hour: np.ndarray, spec: FourierSpec) -> np.ndarray:
    """Intercept plus weekly and daily harmonic columns (no interaction)."""
    day = np.asarray(day, dtype=float)
    hour = np.asarray(hour, dtype=float)
    ones = np.ones((day.shape[0], 1))
    weekly = _trig_block(2.0 * np.pi * day / 7.0, spec.k_weekly)
    daily = _trig_block(2.0 * np.pi * hour / 24.0, spec.k_daily)
    return np.hstack([ones, weekly, daily])


@dataclass
class Design:
    """Stacked regression data for one or two cohorts."""

    x: np.ndarray
    y: np.ndarray
    offset: np.ndarray
    names: tuple[str, ...]
    spec: FourierSpec
    frail: np.ndarray  # indicator per row
    day: np.ndarray
    hour: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.y.shape[0])

    def data_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.y, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.offset, dtype=np.float64).tobytes())
        return h.hexdigest()


def build_design(series_seq: Sequence[SlotSeries], spec: FourierSpec) -> Design:
    """Stack rows over (hour, group) with ln(group size) as the offset."""
    if not series_seq:
        raise ValueError("need at least one series")
    xs, ys, offs, frails, days, hours = [], [], [], [], [], []
    for series in series_seq:
        if series.n_patients <= 0:
            raise RateUndefinedError(
                f"group {series.group!r} has zero patients; offset ln N undefined"
            )
        slots = series.slot_indices()
        day = (slots // 24).astype(float)
        hour = (slots % 24).astype(float)
        base = base_regressors(day, hour, spec)
        is_frail = 1.0 if series.group == FRAIL else 0.0
        if spec.frail_interaction:
            inter = base * is_frail
            xs.append(np.hstack([base, inter]))
        else:
            xs.append(base)
        ys.append(series.counts.astype(np.float64))
        offs.append(np.full(series.n_hours, np.log(series.n_patients)))
        frails.append(np.full(series.n_hours, is_frail))
        days.append(day)
        hours.append(hour)
    return Design(
        x=np.vstack(xs),
        y=np.concatenate(ys),
        offset=np.concatenate(offs),
        names=spec.column_names,
        spec=spec,
        frail=np.concatenate(frails),
        day=np.concatenate(days),
        hour=np.concatenate(hours),
    )


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    """2 * sum[y ln(y/mu) - (y - mu)], taking 0 ln 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ylog = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(ylog - (y - mu)))


def poisson_loglik(y: np.ndarray, mu: np.ndarray) -> float:
    return float(np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))


@dataclass
class FittedModel:
    spec: FourierSpec | None
    names: tuple[str, ...]
    coef: np.ndarray
    cov: np.ndarray
    deviance: float
    loglik: float
    aic: float
    df_residual: int
    converged: bool
    iterations: int
    trace: list[float]
    design: Design | None = None
    mu: np.ndarray | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def coefficients(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.coef)}

    def summary(self) -> dict:
        return {
            "spec": None
            if self.spec is None
            else {
                "k_weekly": self.spec.k_weekly,
                "k_daily": self.spec.k_daily,
                "frail_interaction": self.spec.frail_interaction,
            },
            "coefficients": [
                {"name": n, "estimate": float(c), "se": float(s)}
                for n, c, s in zip(self.names, self.coef, self.se)
            ],
            "deviance": self.deviance,
            "loglik": self.loglik,
            "aic": self.aic,
            "df_residual": self.df_residual,
            "n_rows": None if self.design is None else self.design.n_rows,
            "converged": self.converged,
            "iterations": self.iterations,
            "deviance_trace": [float(d) for d in self.trace],
            "data_hash": None if self.design is None else self.design.data_hash(),
        }


def _check_rank(x: np.ndarray, names: Sequence[str], rank_tol: float) -> None:
    _, r, pivots = sla.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        raise RankDeficiencyError(list(names))
    rank = int(np.sum(diag > rank_tol * diag[0]))
    if rank < x.shape[1]:
        dependent = [names[j] for j in sorted(pivots[rank:])]
        raise RankDeficiencyError(dependent)


def fit_poisson(
    design: Design | np.ndarray,
    y: np.ndarray | None = None,
    offset: np.ndarray | None = None,
    names: Sequence[str] | None = None,
    controls: FitControls | None = None,
) -> FittedModel:
    """Maximum-likelihood Poisson fit with log link via IRLS.

    Accepts either a Design or a bare (matrix, response, offset) triple.
    Convergence is a relative deviance change below ``controls.tol``; a fit
    that runs out of iterations is returned flagged, not raised.
    """
    controls = controls or FitControls()
    if isinstance(design, Design):
        x, y, offset = design.x, design.y, design.offset
        names = design.names
        spec = design.spec
        keep_design = design
    else:
        x = np.asarray(design, dtype=np.float64)
        if y is None:
            raise ValueError("response vector required")
        y = np.asarray(y, dtype=np.float64)
        offset = (
            np.zeros_like(y) if offset is None else np.asarray(offset, dtype=np.float64)
        )
        names = tuple(names or [f"c{j}" for j in range(x.shape[1])])
        spec = None
        keep_design = None

    if (y < 0).any() or not np.allclose(y, np.round(y)):
        raise ValueError("response must be non-negative integer counts")
    n, p = x.shape
    _check_rank(x, names, controls.rank_tol)

    mu = y + 0.5  # guards zero counts at start
    eta = np.log(mu)
    dev = poisson_deviance(y, mu)
    trace = [dev]
    coef = np.zeros(p)
    converged = False
    iterations = 0
    for iterations in range(1, controls.max_iter + 1):
        w = mu
        z = eta - offset + (y - mu) / mu
        xw = x * w[:, None]
        xtwx = x.T @ xw
        xtwz = xw.T @ z
        coef = np.linalg.solve(xtwx, xtwz)
        eta = np.clip(x @ coef + offset, -700.0, 700.0)
        mu = np.maximum(np.exp(eta), 1e-300)
        new_dev = poisson_deviance(y, mu)
        trace.append(new_dev)
        if abs(new_dev - dev) / (abs(new_dev) + 0.1) < controls.tol:
            dev = new_dev
            converged = True
            break
        dev = new_dev

    xtwx = x.T @ (x * mu[:, None])
    cov = np.linalg.inv(xtwx)
    ll = poisson_loglik(y, mu)
    model = FittedModel(
        spec=spec,
        names=tuple(names),
        coef=coef,
        cov=cov,
        deviance=dev,
        loglik=ll,
        aic=-2.0 * ll + 2.0 * p,
        df_residual=n - p,
        converged=converged,
        iterations=iterations,
        trace=trace,
        design=keep_design,
        mu=mu,
    )
    return model


def deviance_aic(model: FittedModel) -> tuple[float, float]:
    return model.deviance, model.aic


def dispersion(model: FittedModel) -> float:
    """Pearson chi-square over residual degrees of freedom."""
    if model.mu is None or model.design is None:
        raise ValueError("model carries no fitted data")
    if (model.mu <= 0).any():
        raise ValueError("fitted means must be positive")
    pearson = float(np.sum((model.design.y - model.mu) ** 2 / model.mu))
    return pearson / model.df_residual


@dataclass(frozen=True)
class SelectionCell:
    k_weekly: int
    k_daily: int
    aic: float | None
    deviance: float | None
    converged: bool
    failed: bool = False
    error: str | None = None


@dataclass
class SelectionResult:
    k_weekly: int
    k_daily: int
    trace: list[SelectionCell]

    def to_dict(self) -> dict:
        return {
            "k_weekly": self.k_weekly,
            "k_daily": self.k_daily,
            "trace": [
                {
                    "k_weekly": c.k_weekly,
                    "k_daily": c.k_daily,
                    "aic": c.aic,
                    "deviance": c.deviance,
                    "converged": c.converged,
                    "failed": c.failed,
                    "error": c.error,
                }
                for c in self.trace
            ],
        }


def select_orders(
    series_seq: Sequence[SlotSeries],
    kw_range: tuple[int, int] = (0, MAX_K_WEEKLY),
    kd_range: tuple[int, int] = (0, MAX_K_DAILY),
    controls: FitControls | None = None,
) -> SelectionResult:
    """Exhaustive AIC grid over harmonic orders, no interaction terms.

    Ties go to the smaller daily order, then the smaller weekly order. Cells
    whose fit fails are excluded from the argmin but flagged in the trace.
    """
    max_spec = FourierSpec(k_weekly=kw_range[1], k_daily=kd_range[1])
    full = build_design(series_seq, max_spec)

    cells: list[SelectionCell] = []
    best: tuple[float, int, int] | None = None
    for kw in range(kw_range[0], kw_range[1] + 1):
        for kd in range(kd_range[0], kd_range[1] + 1):
            cols = [0]
            cols += list(range(1, 1 + 2 * kw))
            base_daily = 1 + 2 * max_spec.k_weekly
            cols += list(range(base_daily, base_daily + 2 * kd))
            spec = FourierSpec(k_weekly=kw, k_daily=kd)
            try:
                model = fit_poisson(
                    full.x[:, cols], full.y, full.offset,
                    names=spec.column_names, controls=controls,
                )
            except Exception as exc:  # noqa: BLE001 - cell failures are data
                cells.append(
                    SelectionCell(kw, kd, None, None, False, failed=True, error=str(exc))
                )
                continue
            cells.append(
                SelectionCell(kw, kd, model.aic, model.deviance, model.converged)
            )
            key = (model.aic, kd, kw)
            if best is None or key < best:
                best = key
    if best is None:
        raise RuntimeError("every selection cell failed to fit")
    return SelectionResult(k_weekly=best[2], k_daily=best[1], trace=cells)


@dataclass(frozen=True)
class AnovaResult:
    resid_df: tuple[int, int]
    resid_deviance: tuple[float, float]
    deviance_drop: float
    df_drop: int
    p: float

    def to_dict(self) -> dict:
        return {
            "resid_df": list(self.resid_df),
            "resid_deviance": list(self.resid_deviance),
            "deviance_drop": self.deviance_drop,
            "df_drop": self.df_drop,
            "p": self.p,
        }


def nested_deviance_test(
    dev_small: float,
    dev_large: float,
    df_small: int,
    df_large: int,
) -> AnovaResult:
    """Chi-square test on a deviance drop between nested fits."""
    df_drop = df_small - df_large
    if df_drop < 0:
        raise NonNestedError("smaller model must have more residual df")
    drop = dev_small - dev_large
    if df_drop == 0:
        p = 1.0
    else:
        p = float(chi2.sf(max(drop, 0.0), df_drop))
    return AnovaResult(
        resid_df=(df_small, df_large),
        resid_deviance=(dev_small, dev_large),
        deviance_drop=drop,
        df_drop=df_drop,
        p=p,
    )


def anova_nested(m_small: FittedModel, m_large: FittedModel) -> AnovaResult:
    """Compare nested fits on identical data."""
    if m_small.design is None or m_large.design is None:
        raise NonNestedError("both models must carry their fitted data")
    if not set(m_small.names) <= set(m_large.names):
        extra = sorted(set(m_small.names) - set(m_large.names))
        raise NonNestedError(f"models are not nested; extra columns: {extra}")
    if m_small.design.data_hash() != m_large.design.data_hash():
        raise NonNestedError("models were fitted on different data")
    return nested_deviance_test(
        m_small.deviance, m_large.deviance, m_small.df_residual, m_large.df_residual
    )


def predict_rate(model: FittedModel, slot: WeekSlot, group: str) -> float:
    """Fitted normalized arrival rate E(count)/N for one week slot."""
    if model.spec is None:
        raise ValueError("model was not fitted from a FourierSpec design")
    spec = model.spec
    day = np.array([float(slot.day)])
    hour = np.array([float(slot.hour)])
    base = base_regressors(day, hour, spec)
    if spec.frail_interaction:
        inter = base * (1.0 if group == FRAIL else 0.0)
        row = np.hstack([base, inter])
    else:
        row = base
    return float(np.exp(row @ model.coef)[0])


def predict_rate_curve(model: FittedModel, group: str) -> np.ndarray:
    """Fitted normalized rates for all 168 week slots."""
    return np.array(
        [predict_rate(model, WeekSlot.from_index(i), group) for i in range(N_SLOTS)]
    )
