"""Leave-one-hospital-out evaluation of a dosing policy against logged care.

Each fold trains the policy and an outcome model on three hospitals and
scores every patient of the held-out hospital: the outcome model predicts
seven-day mortality at every decision point twice, once with the logged
flow in the covariates and once with the recommended flow, and the
patient-level averages aggregate into pooled estimates, subgroup rows,
difference-mortality curves and flow histograms. Confidence intervals come
from a seeded patient-level bootstrap (percentile method), with paired
resamples so policy differences are resampled consistently.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import cohort, ddpg, survival

WINDOW_HOURS = 7.0 * 24.0

AGE_BANDS = (("age 50 to 65", 50.0, 65.0), ("age 65 to 75", 65.0, 75.0),
             ("age 75 to 80", 75.0, 80.0), ("age >= 80", 80.0, np.inf))
BMI_BANDS = (("bmi < 25", -np.inf, 25.0), ("bmi 25 to 30", 25.0, 30.0),
             ("bmi 30 to 35", 30.0, 35.0), ("bmi >= 35", 35.0, np.inf))


@dataclass
class EvalOptions:
    consistency_threshold: float = 10.0
    curve_bin_width: float = 5.0
    curve_min_count: int = 10
    hist_bin_width: float = 5.0
    n_bootstrap: int = 1000
    seed: int = 0
    mortality_label_threshold: float = 0.5
    significance_p: float = 0.001

    def validate(self) -> None:
        if self.consistency_threshold <= 0:
            raise ValueError("consistency threshold must be positive")
        if self.curve_bin_width <= 0 or self.hist_bin_width <= 0:
            raise ValueError("bin widths must be positive")
        if self.n_bootstrap < 1:
            raise ValueError("bootstrap count must be at least 1")
        if not 0.0 < self.mortality_label_threshold < 1.0:
            raise ValueError("mortality label threshold must lie in (0, 1)")


@dataclass
class PatientEval:
    patient_id: str
    hospital_id: str
    logged_flows: np.ndarray
    recommended_flows: np.ndarray
    mortality_rl: float
    mortality_logged: float
    observed_death7: bool
    age: float
    male: bool
    bmi: float
    comorbidities: dict


@dataclass
class FoldResult:
    fold_id: str
    patients: list
    cox: survival.CoxModel
    grid: survival.ElasticNetGrid
    retained_features: list
    concordance: float


@dataclass
class FoldRun:
    """One fold's artifacts: evaluation rows plus the trained policy."""

    fold: FoldResult
    bundle: ddpg.PolicyBundle
    training_log: ddpg.TrainingLog


@dataclass
class FlowStats:
    mean: float
    sd: float

    def transform(self, flows):
        return (np.asarray(flows, dtype=np.float64) - self.mean) / self.sd


# --- outcome-model construction ------------------------------------------------

def patient_state_means(records, schema, interval_hours):
    """Per-patient time-averaged state matrix on the resampling grid."""
    rows = []
    flows = []
    for record in records:
        traj = cohort.resample_trajectory(record, interval_hours, schema)
        rows.append(traj.states.mean(axis=0))
        flows.append(traj.actions.mean())
    return np.asarray(rows), np.asarray(flows)


def build_survival_samples(records, schema, interval_hours, retained_idx,
                           flow_stats: FlowStats):
    """One sample per patient: averaged normalized state (pruned columns)
    plus the standardized mean flow; durations capped at the seven-day
    window."""
    states, flows = patient_state_means(records, schema, interval_hours)
    flows_std = flow_stats.transform(flows)
    samples = []
    for i, record in enumerate(records):
        covars = np.append(states[i, retained_idx], flows_std[i])
        duration = min(record.event_time, WINDOW_HOURS) / 24.0
        event = record.outcome == cohort.DIED and record.event_time <= WINDOW_HOURS
        samples.append(survival.SurvivalSample(covars, duration, event))
    return samples


def fit_outcome_model(train_records, schema, interval_hours, seed,
                      grid: survival.ElasticNetGrid | None = None):
    """Prune correlated state features, then grid-search the elastic-net
    penalties on an inner 80/20 split of the training hospitals.

    `train_records` must already be normalized with the training-fold
    statistics. Returns (model, grid, retained names, flow stats).
    """
    if grid is None:
        grid = survival.ElasticNetGrid()
    states, flows = patient_state_means(train_records, schema, interval_hours)
    retained = survival.prune_correlated(states, list(schema.names))
    retained_idx = [schema.index(name) for name in retained]
    flow_stats = FlowStats(float(flows.mean()), float(flows.std()) or 1.0)
    samples = build_survival_samples(train_records, schema, interval_hours,
                                     retained_idx, flow_stats)
    # stratified 80/20 split keeps events on both sides of the grid search
    rng = np.random.default_rng(seed)
    events = [i for i, s in enumerate(samples) if s.event]
    censored = [i for i, s in enumerate(samples) if not s.event]
    fit_idx, val_idx = [], []
    for group in (events, censored):
        order = rng.permutation(len(group))
        cut = max(1, int(round(0.8 * len(group)))) if group else 0
        fit_idx.extend(group[i] for i in order[:cut])
        val_idx.extend(group[i] for i in order[cut:])
    fit_samples = [samples[i] for i in sorted(fit_idx)]
    val_samples = [samples[i] for i in sorted(val_idx)]
    if not any(s.event for s in val_samples):
        warnings.warn("validation split has no events; scoring on the fit split")
        val_samples = fit_samples
    l1, l2, model = survival.grid_search(fit_samples, val_samples, grid)
    model = replace(model, feature_names=tuple(retained) + ("oxygen_flow",))
    return model, grid, retained, flow_stats


def mortality7_batch(model: survival.CoxModel, covariates) -> np.ndarray:
    lam0, _ = model.cumulative_hazard(survival.MORTALITY_WINDOW_DAYS)
    return 1.0 - np.exp(-lam0 * model.risk(covariates))


def actor_policy(actor: ddpg.ActorNet):
    """Recommendation hook querying the trained policy."""
    def fn(states, logged_flows):
        return actor.act(states)
    return fn


def mirror_policy():
    """Recommendation hook echoing logged care (null-policy identities)."""
    def fn(states, logged_flows):
        return np.asarray(logged_flows, dtype=np.float64).copy()
    return fn


def evaluate_patients(fold_id, test_records, schema, stats, recommend_fn,
                      model, retained, flow_stats, interval_hours,
                      grid=None) -> FoldResult:
    """Score held-out patients decision point by decision point.

    `test_records` are raw; they are normalized here with the training-fold
    statistics. The outcome model sees identical covariates for both
    policies except for the flow coordinate.
    """
    retained_idx = [schema.index(name) for name in retained]
    normalized = cohort.apply_feature_stats(test_records, schema, stats)
    patients = []
    for raw, record in zip(test_records, normalized):
        traj = cohort.resample_trajectory(record, interval_hours, schema)
        logged = traj.actions
        recommended = np.clip(recommend_fn(traj.states, logged),
                              cohort.FLOW_MIN, cohort.FLOW_MAX)
        pruned = traj.states[:, retained_idx]
        covars_logged = np.column_stack([pruned, flow_stats.transform(logged)])
        covars_rl = np.column_stack([pruned, flow_stats.transform(recommended)])
        m_logged = float(mortality7_batch(model, covars_logged).mean())
        m_rl = float(mortality7_batch(model, covars_rl).mean())
        statics = raw.static_covariates
        comorbidities = {
            name: bool(statics.get(name, 0.0))
            for name, kind in zip(schema.names, schema.kinds)
            if kind == cohort.COMORBIDITY
        }
        patients.append(PatientEval(
            patient_id=raw.patient_id,
            hospital_id=raw.hospital_id,
            logged_flows=logged,
            recommended_flows=np.asarray(recommended, dtype=np.float64),
            mortality_rl=m_rl,
            mortality_logged=m_logged,
            observed_death7=(raw.outcome == cohort.DIED
                            and raw.event_time <= WINDOW_HOURS),
            age=float(statics.get("age", np.nan)),
            male=bool(statics.get("male", 0.0)),
            bmi=float(statics.get("bmi", np.nan)),
            comorbidities=comorbidities,
        ))
    test_samples = build_survival_samples(normalized, schema, interval_hours,
                                          retained_idx, flow_stats)
    try:
        concordance = survival.concordance_index(model, test_samples)
    except ValueError:
        concordance = float("nan")
    return FoldResult(fold_id, patients, model, grid, list(retained), concordance)


# --- fold orchestration -----------------------------------------------------------

def run_fold(records, schema, training_config: ddpg.TrainingConfig,
             interval_hours: float, fold_index: int, train_raw, test_raw,
             grid_template: survival.ElasticNetGrid | None = None) -> FoldRun:
    """Train the policy and the outcome model on `train_raw` and score every
    record of `test_raw`."""
    fold_id = test_raw[0].hospital_id if test_raw else f"fold{fold_index}"
    if not train_raw:
        raise cohort.PartitionError(f"fold {fold_id}: empty training set")
    stats = cohort.compute_feature_stats(train_raw, schema)
    train_norm = cohort.apply_feature_stats(train_raw, schema, stats)

    transitions = []
    for record in train_norm:
        traj = cohort.resample_trajectory(record, interval_hours, schema)
        transitions.extend(cohort.build_transitions(traj))
    memory = ddpg.ReplayMemory.from_transitions(transitions, seed=fold_index)
    result = ddpg.train(memory, training_config)

    grid = survival.ElasticNetGrid() if grid_template is None else \
        survival.ElasticNetGrid(grid_template.l1_values, grid_template.l2_values)
    model, grid, retained, flow_stats = fit_outcome_model(
        train_norm, schema, interval_hours,
        seed=training_config.seed + fold_index, grid=grid)

    fold = evaluate_patients(
        fold_id, test_raw, schema, stats, actor_policy(result.actor),
        model, retained, flow_stats, interval_hours, grid=grid)
    bundle = ddpg.PolicyBundle(
        actor=result.actor, critic=result.critic, targets=result.targets,
        config=training_config, interval_hours=interval_hours,
        feature_names=schema.names, feature_means=stats.means,
        feature_sds=stats.sds)
    return FoldRun(fold, bundle, result.log)


def loho_cross_validate(records, schema, training_config: ddpg.TrainingConfig,
                        interval_hours: float = 4.0,
                        grid_template: survival.ElasticNetGrid | None = None,
                        labels=None):
    """Train and evaluate once per hospital. Returns a list of FoldRun with
    every test set scored by a policy that never saw its hospital."""
    folds = cohort.split_by_hospital(records, labels=labels)
    return [
        run_fold(records, schema, training_config, interval_hours, index,
                 train_raw, test_raw, grid_template=grid_template)
        for index, (train_raw, test_raw) in enumerate(folds)
    ]


# --- aggregation -------------------------------------------------------------------

def _all_patients(fold_results):
    patients = []
    for fold in fold_results:
        patients.extend(fold.patients)
    return patients


def _bootstrap_indices(n, options: EvalOptions):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(options.seed, n)))
    return rng.integers(0, n, size=(options.n_bootstrap, n))


def _percentile_ci(samples):
    return float(np.percentile(samples, 2.5)), float(np.percentile(samples, 97.5))


def estimate_policy_mortality(fold_results, policy: str, options: EvalOptions):
    """Patient-mean seven-day mortality under a policy with a bootstrap CI.

    `fold_results` may be a single FoldResult or a list (pooled estimate:
    the patient-weighted mean across folds).
    """
    if isinstance(fold_results, FoldResult):
        fold_results = [fold_results]
    patients = _all_patients(fold_results)
    if not patients:
        raise ValueError("no patients to evaluate")
    key = {"rl": "mortality_rl", "logged": "mortality_logged"}[policy.lower()]
    values = np.asarray([getattr(p, key) for p in patients])
    idx = _bootstrap_indices(len(values), options)
    boot = values[idx].mean(axis=1)
    return float(values.mean()), _percentile_ci(boot)


def consistency_rate(fold_results, threshold: float = 10.0) -> float:
    """Fraction of decision points with |recommended - logged| strictly
    below the threshold."""
    agree = 0
    total = 0
    for p in _all_patients(fold_results):
        diffs = np.abs(p.recommended_flows - p.logged_flows)
        agree += int(np.sum(diffs < threshold))
        total += len(diffs)
    if total == 0:
        raise ValueError("no decision points")
    return agree / total


@dataclass
class CurvePoint:
    center: float
    low: float
    high: float
    count: int
    observed_mortality: float
    ci_low: float
    ci_high: float
    estimated_mortality: float
    low_support: bool


def difference_mortality_curve(fold_results, options: EvalOptions):
    """Observed seven-day mortality binned by each patient's mean
    (recommended - logged) flow difference. Bins are half-open intervals
    between multiples of the bin width (histogram convention); zero
    difference falls in the [0, width) bin."""
    patients = _all_patients(fold_results)
    width = options.curve_bin_width
    diffs = np.asarray([float(np.mean(p.recommended_flows - p.logged_flows))
                        for p in patients])
    observed = np.asarray([p.observed_death7 for p in patients], dtype=float)
    estimated = np.asarray([p.mortality_logged for p in patients])
    lows = width * np.floor(diffs / width)
    points = []
    for low in np.unique(lows):
        mask = lows == low
        count = int(mask.sum())
        values = observed[mask]
        idx = _bootstrap_indices(count, options)
        boot = values[idx].mean(axis=1)
        ci_lo, ci_hi = _percentile_ci(boot)
        points.append(CurvePoint(
            center=float(low + width / 2), low=float(low),
            high=float(low + width), count=count,
            observed_mortality=float(values.mean()), ci_low=ci_lo, ci_high=ci_hi,
            estimated_mortality=float(estimated[mask].mean()),
            low_support=count < options.curve_min_count))
    return points


@dataclass
class SubgroupRow:
    name: str
    count: int
    rl_mortality: float
    rl_mortality_se: float
    logged_mortality: float
    logged_mortality_se: float
    rl_flow: float
    rl_flow_se: float
    logged_flow: float
    logged_flow_se: float
    significant: bool


def _subgroup_row(name, patients, options: EvalOptions) -> SubgroupRow:
    if not patients:
        return SubgroupRow(name, 0, *([float("nan")] * 8), False)
    m_rl = np.asarray([p.mortality_rl for p in patients])
    m_lg = np.asarray([p.mortality_logged for p in patients])
    f_rl = np.asarray([float(np.mean(p.recommended_flows)) for p in patients])
    f_lg = np.asarray([float(np.mean(p.logged_flows)) for p in patients])
    idx = _bootstrap_indices(len(patients), options)
    boots = {key: arr[idx].mean(axis=1)
             for key, arr in (("m_rl", m_rl), ("m_lg", m_lg),
                              ("f_rl", f_rl), ("f_lg", f_lg))}
    diff = boots["m_rl"] - boots["m_lg"]
    sd = float(diff.std())
    if sd == 0.0:
        significant = False
    else:
        z = float(m_rl.mean() - m_lg.mean()) / sd
        significant = math.erfc(abs(z) / math.sqrt(2.0)) < options.significance_p
    return SubgroupRow(
        name, len(patients),
        float(m_rl.mean()), float(boots["m_rl"].std()),
        float(m_lg.mean()), float(boots["m_lg"].std()),
        float(f_rl.mean()), float(boots["f_rl"].std()),
        float(f_lg.mean()), float(boots["f_lg"].std()),
        significant)


def subgroup_table(fold_results, options: EvalOptions):
    """Overall, sex, age-band, BMI-band and comorbidity rows (comorbidity
    rows may overlap; a patient counts in each flag it carries)."""
    patients = _all_patients(fold_results)
    rows = [_subgroup_row("overall", patients, options)]
    rows.append(_subgroup_row("male", [p for p in patients if p.male], options))
    rows.append(_subgroup_row("female", [p for p in patients if not p.male], options))
    for name, lo, hi in AGE_BANDS:
        rows.append(_subgroup_row(
            name, [p for p in patients if lo <= p.age < hi], options))
    for name, lo, hi in BMI_BANDS:
        rows.append(_subgroup_row(
            name, [p for p in patients if lo <= p.bmi < hi], options))
    flags = sorted({name for p in patients for name in p.comorbidities})
    for flag in flags:
        rows.append(_subgroup_row(
            flag, [p for p in patients if p.comorbidities.get(flag)], options))
    return rows


def flow_histograms(fold_results, options: EvalOptions):
    """Decision-point histograms: recommended and logged flows over [0, 60],
    differences over [-60, 60]. Counts sum to the decision-point total."""
    patients = _all_patients(fold_results)
    rl = np.concatenate([p.recommended_flows for p in patients])
    logged = np.concatenate([p.logged_flows for p in patients])
    width = options.hist_bin_width
    flow_edges = np.arange(0.0, 60.0 + width, width)
    diff_edges = np.arange(-60.0, 60.0 + width, width)
    rl_counts, _ = np.histogram(rl, bins=flow_edges)
    logged_counts, _ = np.histogram(logged, bins=flow_edges)
    diff_counts, _ = np.histogram(rl - logged, bins=diff_edges)
    return {
        "flow_edges": flow_edges,
        "rl": rl_counts,
        "logged": logged_counts,
        "diff_edges": diff_edges,
        "diff": diff_counts,
        "total": len(rl),
    }


@dataclass
class EvalReport:
    n_patients: int
    n_decision_points: int
    rl_mortality: float
    rl_ci: tuple
    logged_mortality: float
    logged_ci: tuple
    reduction: float
    reduction_ci: tuple
    rl_flow: float
    rl_flow_ci: tuple
    logged_flow: float
    logged_flow_ci: tuple
    consistency: float
    cosine_similarity: float
    accuracy: float
    concordance: float
    mcnemar_statistic: float
    mcnemar_p: float
    subgroups: list
    curve: list
    histograms: dict
    fold_summaries: list = field(default_factory=list)


def build_report(fold_results, options: EvalOptions) -> EvalReport:
    options.validate()
    patients = _all_patients(fold_results)
    if not patients:
        raise ValueError("no patients to report on")
    m_rl = np.asarray([p.mortality_rl for p in patients])
    m_lg = np.asarray([p.mortality_logged for p in patients])
    f_rl = np.asarray([float(np.mean(p.recommended_flows)) for p in patients])
    f_lg = np.asarray([float(np.mean(p.logged_flows)) for p in patients])
    idx = _bootstrap_indices(len(patients), options)
    boot = {key: arr[idx].mean(axis=1)
            for key, arr in (("m_rl", m_rl), ("m_lg", m_lg),
                             ("f_rl", f_rl), ("f_lg", f_lg))}

    predicted_dead = m_lg >= options.mortality_label_threshold
    actual_dead = np.asarray([p.observed_death7 for p in patients])
    pred_alive = (~predicted_dead).astype(float)
    actual_alive = (~actual_dead).astype(float)
    try:
        cosine = survival.cosine_similarity(pred_alive, actual_alive)
    except ValueError:
        cosine = float("nan")
    accuracy = float(np.mean(predicted_dead == actual_dead))
    statistic, p_value = survival.paired_binary_test(predicted_dead, actual_dead)
    concordances = [f.concordance for f in fold_results
                    if not math.isnan(f.concordance)]
    concordance = float(np.mean(concordances)) if concordances else float("nan")

    fold_summaries = []
    for fold in fold_results:
        fm_rl = float(np.mean([p.mortality_rl for p in fold.patients])) \
            if fold.patients else float("nan")
        fm_lg = float(np.mean([p.mortality_logged for p in fold.patients])) \
            if fold.patients else float("nan")
        fold_summaries.append((fold.fold_id, len(fold.patients), fm_rl, fm_lg,
                               fold.concordance))

    return EvalReport(
        n_patients=len(patients),
        n_decision_points=int(sum(len(p.logged_flows) for p in patients)),
        rl_mortality=float(m_rl.mean()), rl_ci=_percentile_ci(boot["m_rl"]),
        logged_mortality=float(m_lg.mean()), logged_ci=_percentile_ci(boot["m_lg"]),
        reduction=float(m_lg.mean() - m_rl.mean()),
        reduction_ci=_percentile_ci(boot["m_lg"] - boot["m_rl"]),
        rl_flow=float(f_rl.mean()), rl_flow_ci=_percentile_ci(boot["f_rl"]),
        logged_flow=float(f_lg.mean()), logged_flow_ci=_percentile_ci(boot["f_lg"]),
        consistency=consistency_rate(fold_results, options.consistency_threshold),
        cosine_similarity=cosine,
        accuracy=accuracy,
        concordance=concordance,
        mcnemar_statistic=statistic,
        mcnemar_p=p_value,
        subgroups=subgroup_table(fold_results, options),
        curve=difference_mortality_curve(fold_results, options),
        histograms=flow_histograms(fold_results, options),
        fold_summaries=fold_summaries,
    )


# --- report files --------------------------------------------------------------------

def _f(x) -> str:
    return repr(float(x))


def write_report_files(outdir, report: EvalReport) -> list:
    """Emit the machine-readable CSV set plus a human-readable summary.
    Returns the list of paths written."""
    import os

    paths = []

    def _open(name):
        path = os.path.join(outdir, name)
        paths.append(path)
        return open(path, "w", newline="\n")

    with _open("pooled.csv") as fh:
        fh.write("policy,mortality,mortality_ci_low,mortality_ci_high,"
                 "mean_flow,mean_flow_ci_low,mean_flow_ci_high\n")
        fh.write(f"rl,{_f(report.rl_mortality)},{_f(report.rl_ci[0])},"
                 f"{_f(report.rl_ci[1])},{_f(report.rl_flow)},"
                 f"{_f(report.rl_flow_ci[0])},{_f(report.rl_flow_ci[1])}\n")
        fh.write(f"logged,{_f(report.logged_mortality)},{_f(report.logged_ci[0])},"
                 f"{_f(report.logged_ci[1])},{_f(report.logged_flow)},"
                 f"{_f(report.logged_flow_ci[0])},{_f(report.logged_flow_ci[1])}\n")

    with _open("metrics.csv") as fh:
        fh.write("metric,value\n")
        for name, value in (
                ("n_patients", report.n_patients),
                ("n_decision_points", report.n_decision_points),
                ("consistency_rate", report.consistency),
                ("mortality_reduction", report.reduction),
                ("mortality_reduction_ci_low", report.reduction_ci[0]),
                ("mortality_reduction_ci_high", report.reduction_ci[1]),
                ("cosine_similarity", report.cosine_similarity),
                ("accuracy", report.accuracy),
                ("concordance_index", report.concordance),
                ("mcnemar_statistic", report.mcnemar_statistic),
                ("mcnemar_p", report.mcnemar_p)):
            fh.write(f"{name},{_f(value)}\n")

    with _open("subgroups.csv") as fh:
        fh.write("subgroup,n,rl_mortality,rl_mortality_se,logged_mortality,"
                 "logged_mortality_se,rl_flow,rl_flow_se,logged_flow,"
                 "logged_flow_se,significant\n")
        for row in report.subgroups:
            fh.write(",".join([
                row.name.replace(",", ";"), str(row.count),
                _f(row.rl_mortality), _f(row.rl_mortality_se),
                _f(row.logged_mortality), _f(row.logged_mortality_se),
                _f(row.rl_flow), _f(row.rl_flow_se),
                _f(row.logged_flow), _f(row.logged_flow_se),
                str(int(row.significant))]) + "\n")

    with _open("curve.csv") as fh:
        fh.write("bin_center,bin_low,bin_high,count,observed_mortality,"
                 "ci_low,ci_high,estimated_mortality,low_support\n")
        for pt in report.curve:
            fh.write(",".join([
                _f(pt.center), _f(pt.low), _f(pt.high), str(pt.count),
                _f(pt.observed_mortality), _f(pt.ci_low), _f(pt.ci_high),
                _f(pt.estimated_mortality), str(int(pt.low_support))]) + "\n")

    hist = report.histograms
    with _open("hist_flows.csv") as fh:
        fh.write("bin_low,bin_high,rl_count,logged_count\n")
        for i in range(len(hist["rl"])):
            fh.write(f"{_f(hist['flow_edges'][i])},{_f(hist['flow_edges'][i + 1])},"
                     f"{hist['rl'][i]},{hist['logged'][i]}\n")
    with _open("hist_difference.csv") as fh:
        fh.write("bin_low,bin_high,count\n")
        for i in range(len(hist["diff"])):
            fh.write(f"{_f(hist['diff_edges'][i])},{_f(hist['diff_edges'][i + 1])},"
                     f"{hist['diff'][i]}\n")

    with _open("summary.txt") as fh:
        fh.write(format_summary(report))
    return paths


def format_summary(report: EvalReport) -> str:
    def pct(x):
        return f"{100 * x:.2f}%"

    lines = [
        "Policy evaluation summary",
        "=" * 64,
        f"patients: {report.n_patients}   decision points: {report.n_decision_points}",
        "",
        f"{'':24s}{'Recommended':>16s}{'Logged':>16s}",
        f"{'7-day mortality':24s}{pct(report.rl_mortality):>16s}"
        f"{pct(report.logged_mortality):>16s}",
        f"{'  95% CI':24s}"
        f"{'(' + pct(report.rl_ci[0]) + '-' + pct(report.rl_ci[1]) + ')':>16s}"
        f"{'(' + pct(report.logged_ci[0]) + '-' + pct(report.logged_ci[1]) + ')':>16s}",
        f"{'mean flow (L/min)':24s}{report.rl_flow:>16.2f}{report.logged_flow:>16.2f}",
        "",
        f"mortality reduction: {pct(report.reduction)} "
        f"(95% CI {pct(report.reduction_ci[0])} to {pct(report.reduction_ci[1])})",
        f"consistency (<10 L/min): {pct(report.consistency)}",
        f"outcome model: cosine {report.cosine_similarity:.4f}, "
        f"accuracy {pct(report.accuracy)}, concordance {report.concordance:.3f}, "
        f"paired chi-squared p {report.mcnemar_p:.3g}",
        "",
        f"{'subgroup':28s}{'n':>6s}{'RL mort':>10s}{'Logged':>10s}"
        f"{'RL flow':>10s}{'Logged':>10s}  sig",
    ]
    for row in report.subgroups:
        if row.count == 0:
            lines.append(f"{row.name:28s}{row.count:>6d}{'-':>10s}{'-':>10s}"
                         f"{'-':>10s}{'-':>10s}")
            continue
        lines.append(
            f"{row.name:28s}{row.count:>6d}{pct(row.rl_mortality):>10s}"
            f"{pct(row.logged_mortality):>10s}{row.rl_flow:>10.2f}"
            f"{row.logged_flow:>10.2f}  {'*' if row.significant else ''}")
    lines.append("")
    return "\n".join(lines)
