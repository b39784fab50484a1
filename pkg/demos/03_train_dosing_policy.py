"""Train the offline actor-critic on a synthetic cohort and compare its
recommendations with the ground-truth optimal doses.

Takes a couple of minutes: the replay memory is built from resampled
trajectories, the critic regresses bootstrapped targets from slow-moving
target copies, and the actor climbs the critic's action gradient.
"""

import numpy as np

from oxyrl import cohort, ddpg

config = cohort.GeneratorConfig(n_patients=1500, seed=7)
schema = cohort.default_schema()
records = cohort.generate_synthetic_cohort(config, schema)
normalized, stats = cohort.normalize_features(records, schema)

transitions = []
for record in normalized:
    trajectory = cohort.resample_trajectory(record, 8.0, schema)
    transitions.extend(cohort.build_transitions(trajectory))
memory = ddpg.ReplayMemory.from_transitions(transitions, seed=0)
print(f"replay memory: {len(memory)} transitions from {len(records)} patients")

train_config = ddpg.TrainingConfig(max_iterations=10000, patience=10000, seed=11)
result = ddpg.train(memory, train_config)
log = result.log
print(f"trained {log.n_iterations} iterations ({log.stop_reason})")
td = np.asarray(log.td_mse)
print(f"mean squared TD error: first 50 iters {td[:50].mean():.2f}, "
      f"last 50 iters {td[-50:].mean():.2f}")

raw_by_id = {r.patient_id: r for r in records}
rows = []
for record in normalized[:300]:
    trajectory = cohort.resample_trajectory(record, 8.0, schema)
    recommended = result.actor.act(trajectory.states).mean()
    raw = raw_by_id[record.patient_id]
    optimum = cohort.optimal_dose(config, raw.static_covariates["age"])
    rows.append((raw.static_covariates["age"], recommended,
                 trajectory.actions.mean(), optimum))

rows = np.asarray(rows)
print("\n  age band      recommended   logged   optimal")
for lo, hi in ((50, 65), (65, 75), (75, 120)):
    band = rows[(rows[:, 0] >= lo) & (rows[:, 0] < hi)]
    print(f"  {lo:3d}-{hi:<3d}  {band[:, 1].mean():11.1f} {band[:, 2].mean():8.1f}"
          f" {band[:, 3].mean():9.1f}")

gap = np.abs(rows[:, 1] - rows[:, 3])
print(f"\nmean |recommended - optimal| = {gap.mean():.1f} L/min")
print(f"consistency (mean squared deviation from logged): "
      f"{ddpg.consistency_metric(result.actor, memory):.0f}")
