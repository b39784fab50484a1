"""Proportional-hazards survival modeling for outcome estimation.

The hazard for covariates ``s`` is ``lambda0(t) * exp(s @ coef)``. The
coefficient vector maximizes the Breslow-tie partial log-likelihood minus an
elastic-net penalty ``l1*||b||_1 + (l2/2)*||b||_2^2``, solved by proximal
gradient descent with a backtracking line search (the penalized objective is
non-increasing across iterations). The baseline cumulative hazard is the
Breslow step estimate at event times, and seven-day mortality is
``1 - exp(-Lambda0(7) * exp(s @ coef))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MORTALITY_WINDOW_DAYS = 7.0
DEFAULT_PENALTY_VALUES = (0.01, 0.02, 0.04, 0.06, 0.08)


class FitError(ValueError):
    pass


class GridSearchError(ValueError):
    pass


@dataclass
class SurvivalSample:
    """Covariates (oxygen flow included as one coordinate), follow-up duration
    in days, and whether death was observed within the window."""

    covariates: np.ndarray
    duration: float
    event: bool


@dataclass
class CoxModel:
    feature_names: tuple[str, ...]
    coef: np.ndarray
    baseline_times: np.ndarray     # ascending event times (days)
    baseline_cumhaz: np.ndarray    # cumulative hazard at those times
    converged: bool = True
    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if len(self.coef) != len(self.feature_names):
            raise ValueError("coefficient/feature length mismatch")
        if len(self.baseline_times) and (
                np.any(np.diff(self.baseline_times) <= 0)
                or np.any(np.diff(self.baseline_cumhaz) < 0)
                or self.baseline_cumhaz[0] < 0):
            raise ValueError("baseline cumulative hazard must be a non-decreasing step")

    def cumulative_hazard(self, t: float):
        """Right-continuous step lookup; returns (value, extrapolated)."""
        if t < 0:
            raise ValueError("time must be non-negative")
        if len(self.baseline_times) == 0 or t < self.baseline_times[0]:
            return 0.0, False
        idx = int(np.searchsorted(self.baseline_times, t, side="right")) - 1
        return float(self.baseline_cumhaz[idx]), bool(t > self.baseline_times[-1])

    def risk(self, covariates) -> np.ndarray:
        x = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
        return np.exp(x @ self.coef)


def _design(samples):
    x = np.asarray([s.covariates for s in samples], dtype=np.float64)
    t = np.asarray([s.duration for s in samples], dtype=np.float64)
    e = np.asarray([s.event for s in samples], dtype=bool)
    return x, t, e


def partial_loglik(x, t, e, beta):
    """Breslow-tie partial log-likelihood and its gradient."""
    order = np.argsort(t, kind="stable")
    xs, ts, es = x[order], t[order], e[order]
    eta = xs @ beta
    shift = eta.max() if len(eta) else 0.0
    w = np.exp(eta - shift)
    # suffix sums: risk set at time ts[i] is everyone with duration >= ts[i]
    s0 = np.cumsum(w[::-1])[::-1]
    s1 = np.cumsum((w[:, None] * xs)[::-1], axis=0)[::-1]
    ev = np.flatnonzero(es)
    if len(ev) == 0:
        raise FitError("no events in the sample set")
    first = np.searchsorted(ts, ts[ev], side="left")
    ll = float(np.sum(eta[ev] - shift - np.log(s0[first])))
    grad = xs[ev].sum(axis=0) - (s1[first] / s0[first, None]).sum(axis=0)
    return ll, grad


def _soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def breslow_baseline(x, t, e, beta):
    """Stepwise baseline cumulative hazard at the distinct event times."""
    order = np.argsort(t, kind="stable")
    xs, ts, es = x[order], t[order], e[order]
    eta = xs @ beta
    shift = eta.max() if len(eta) else 0.0
    w = np.exp(eta - shift)
    s0 = np.cumsum(w[::-1])[::-1]
    times = []
    increments = []
    ev_times = ts[es]
    for tau in np.unique(ev_times):
        first = int(np.searchsorted(ts, tau, side="left"))
        deaths = int(np.sum(ev_times == tau))
        times.append(tau)
        increments.append(deaths / (s0[first] * np.exp(shift)))
    return np.asarray(times), np.cumsum(increments)


def fit_cox(samples, l1: float = 0.0, l2: float = 0.0, *,
            max_iterations: int = 10000, tolerance: float = 1e-6,
            debug: bool = False) -> CoxModel:
    """Penalized fit by proximal gradient with backtracking.

    Convergence is declared when the proximal-gradient residual norm drops
    below `tolerance`; otherwise the model is returned with its converged
    flag cleared. With debug=True every accepted step is checked for a
    monotone decrease of the penalized objective.
    """
    x, t, e = _design(samples)
    if not np.any(e):
        raise FitError("cannot fit without at least one event")
    n, p = x.shape

    def smooth(beta):
        ll, grad = partial_loglik(x, t, e, beta)
        return -ll + 0.5 * l2 * float(beta @ beta), -grad + l2 * beta

    def objective(beta, g_val):
        return g_val + l1 * float(np.abs(beta).sum())

    beta = np.zeros(p)
    g_val, g_grad = smooth(beta)
    obj = objective(beta, g_val)
    step = 1.0
    converged = False
    for _ in range(max_iterations):
        while True:
            candidate = _soft_threshold(beta - step * g_grad, step * l1)
            delta = candidate - beta
            cand_val, cand_grad = smooth(candidate)
            bound = g_val + float(g_grad @ delta) + float(delta @ delta) / (2 * step)
            if cand_val <= bound + 1e-12 * (1 + abs(bound)):
                break
            step *= 0.5
            if step < 1e-16:
                raise FitError("backtracking line search collapsed")
        residual = float(np.linalg.norm(delta)) / step
        new_obj = objective(candidate, cand_val)
        if debug and new_obj > obj + 1e-9 * (1 + abs(obj)):
            raise AssertionError(
                f"penalized objective increased: {obj} -> {new_obj}")
        beta, g_val, g_grad, obj = candidate, cand_val, cand_grad, new_obj
        if residual <= tolerance:
            converged = True
            break
        step *= 1.5  # try a longer step next round; backtracking will trim it

    times, cumhaz = breslow_baseline(x, t, e, beta)
    names = tuple(f"x{i}" for i in range(p))
    return CoxModel(names, beta, times, cumhaz, converged=converged, l1=l1, l2=l2)


def predict_survival(model: CoxModel, covariates, t: float) -> float:
    """Probability of surviving past day t for one covariate vector."""
    if t < 0:
        raise ValueError("time must be non-negative")
    lam0, _ = model.cumulative_hazard(t)
    return float(np.exp(-lam0 * model.risk(covariates)[0]))


def predict_mortality7(model: CoxModel, covariates) -> float:
    return 1.0 - predict_survival(model, covariates, MORTALITY_WINDOW_DAYS)


def concordance_index(model: CoxModel, samples) -> float:
    """Harrell's C over comparable pairs (i, j): i has an event and
    duration_i < duration_j. Concordant when risk_i > risk_j; risk ties
    count one half."""
    x, t, e = _design(samples)
    risk = model.risk(x)
    ev = np.flatnonzero(e)
    concordant = 0.0
    comparable = 0
    for i in ev:
        later = t > t[i]
        comparable += int(later.sum())
        concordant += float(np.sum(risk[later] < risk[i]))
        concordant += 0.5 * float(np.sum(risk[later] == risk[i]))
    if comparable == 0:
        raise ValueError("no comparable pairs")
    return concordant / comparable


@dataclass
class GridCell:
    l1: float
    l2: float
    concordance: float
    converged: bool


@dataclass
class ElasticNetGrid:
    l1_values: tuple[float, ...] = DEFAULT_PENALTY_VALUES
    l2_values: tuple[float, ...] = DEFAULT_PENALTY_VALUES
    results: list[GridCell] = field(default_factory=list)


def grid_search(samples_train, samples_val, grid: ElasticNetGrid | None = None):
    """Fit every (l1, l2) pair on the training samples and score concordance
    on the validation samples; ties break toward smaller l1, then smaller l2.
    Returns (best_l1, best_l2, best_model); scores land in grid.results."""
    if grid is None:
        grid = ElasticNetGrid()
    if not grid.l1_values or not grid.l2_values:
        raise GridSearchError("empty penalty grid")
    grid.results.clear()
    best = None
    for l1 in sorted(grid.l1_values):
        for l2 in sorted(grid.l2_values):
            model = fit_cox(samples_train, l1, l2)
            score = concordance_index(model, samples_val)
            grid.results.append(GridCell(l1, l2, score, model.converged))
            if model.converged and (best is None or score > best[0]):
                best = (score, l1, l2, model)
    if best is None:
        raise GridSearchError("no grid fit converged")
    _, l1, l2, model = best
    return l1, l2, model


def cosine_similarity(pred, actual) -> float:
    u = np.asarray(pred, dtype=np.float64)
    v = np.asarray(actual, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(u @ v / (nu * nv))


def paired_binary_test(pred_labels, actual_labels):
    """McNemar statistic on discordant counts with a 1-df chi-squared
    p-value; (0, 1) when there is no discordance."""
    pred = np.asarray(pred_labels, dtype=bool)
    actual = np.asarray(actual_labels, dtype=bool)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError("label vectors must be non-empty and equal length")
    b = int(np.sum(pred & ~actual))
    c = int(np.sum(~pred & actual))
    if b + c == 0:
        return 0.0, 1.0
    statistic = (b - c) ** 2 / (b + c)
    p_value = math.erfc(math.sqrt(statistic / 2.0))
    return float(statistic), float(p_value)


def prune_correlated(data, names, threshold: float = 0.7):
    """Greedy pass in the given order: drop a column whose absolute Pearson
    correlation with any already-retained column exceeds the threshold.
    Zero-variance columns correlate 0 with everything and are retained."""
    x = np.asarray(data, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least two samples to compute correlations")
    if x.shape[1] != len(names):
        raise ValueError("column/name mismatch")
    centered = x - x.mean(axis=0)
    scale = x.std(axis=0)
    retained: list[int] = []
    for j in range(x.shape[1]):
        keep = True
        for k in retained:
            if scale[j] == 0.0 or scale[k] == 0.0:
                continue
            r = float(centered[:, j] @ centered[:, k]) / (
                x.shape[0] * scale[j] * scale[k])
            if abs(r) > threshold:
                keep = False
                break
        if keep:
            retained.append(j)
    return [names[j] for j in retained]


# --- model file ---------------------------------------------------------------

MODEL_MAGIC = "oxyrl-cox-v1"


def save_cox_model(path, model: CoxModel) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(MODEL_MAGIC + "\n")
        fh.write(f"penalty {float(model.l1)!r} {float(model.l2)!r}\n")
        fh.write(f"converged {int(model.converged)}\n")
        fh.write(f"features {len(model.feature_names)}\n")
        for name, value in zip(model.feature_names, model.coef):
            fh.write(f"{name} {float(value)!r}\n")
        fh.write(f"baseline {len(model.baseline_times)}\n")
        for t, h in zip(model.baseline_times, model.baseline_cumhaz):
            fh.write(f"{float(t)!r} {float(h)!r}\n")


def load_cox_model(path) -> CoxModel:
    with open(path) as fh:
        if fh.readline().strip() != MODEL_MAGIC:
            raise ValueError("unrecognized model file")
        _, l1, l2 = fh.readline().split()
        converged = bool(int(fh.readline().split()[1]))
        n = int(fh.readline().split()[1])
        names, coef = [], []
        for _ in range(n):
            name, value = fh.readline().split()
            names.append(name)
            coef.append(float(value))
        m = int(fh.readline().split()[1])
        times, cumhaz = [], []
        for _ in range(m):
            t, h = fh.readline().split()
            times.append(float(t))
            cumhaz.append(float(h))
    return CoxModel(tuple(names), np.asarray(coef), np.asarray(times),
                    np.asarray(cumhaz), converged=converged,
                    l1=float(l1), l2=float(l2))


def write_grid_report(path, grid: ElasticNetGrid) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("l1,l2,concordance,converged\n")
        for cell in grid.results:
            fh.write(f"{float(cell.l1)!r},{float(cell.l2)!r},"
                     f"{float(cell.concordance)!r},{int(cell.converged)}\n")
