"""Offline deterministic-policy actor-critic for continuous dosing.

The critic regresses one-step bootstrapped targets computed with slow-moving
target copies of both networks; the actor ascends the critic's value of its
own actions by chain-ruling through the critic's action input. The dataset
is fixed logged experience: no environment interaction, no exploration
noise. Early stopping watches the mean squared deviation between
recommended and logged flows and halts once it stops improving for a
configured number of iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn

FLOW_MAX = 60.0
STATE_HIDDEN = 32
TRUNK_HIDDEN = 16


class TrainingAbortedError(RuntimeError):
    """Non-finite loss or objective; carries the failing iteration."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class TrainingConfig:
    discount: float = 0.99
    batch_size: int = 64
    critic_lr: float = 0.002
    actor_lr: float = 0.002
    polyak: float = 0.995
    max_iterations: int = 5000
    patience: int = 500            # early-stop window, in iterations
    consistency_every: int = 50
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 <= self.polyak <= 1.0:
            raise ValueError("polyak must lie in [0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.max_iterations < 0 or self.patience <= 0 or self.consistency_every <= 0:
            raise ValueError("iteration counts must be positive")
        if self.critic_lr <= 0 or self.actor_lr <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray

    @classmethod
    def from_transitions(cls, transitions):
        return cls(
            states=np.asarray([t.state for t in transitions], dtype=np.float64),
            actions=np.asarray([t.action for t in transitions], dtype=np.float64),
            rewards=np.asarray([t.reward for t in transitions], dtype=np.float64),
            next_states=np.asarray([t.next_state for t in transitions], dtype=np.float64),
            terminal=np.asarray([t.terminal for t in transitions], dtype=bool),
        )

    def __len__(self):
        return len(self.actions)


@dataclass
class ReplayMemory:
    """Static store of logged one-step transitions plus the sampler seed."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    seed: int = 0

    @classmethod
    def from_transitions(cls, transitions, seed: int = 0):
        batch = Batch.from_transitions(transitions)
        return cls(batch.states, batch.actions, batch.rewards,
                   batch.next_states, batch.terminal, seed)

    def __len__(self):
        return len(self.actions)

    @property
    def state_dim(self):
        return self.states.shape[1]

    def minibatch(self, idx) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminal[idx])


@dataclass
class ActorNet:
    """Deterministic policy: dense(32)+batchnorm+relu into a single output
    squashed to [0, 60] by a scaled sigmoid."""

    state_dim: int
    net: nn.NetworkParams

    @classmethod
    def build(cls, state_dim: int, seed) -> "ActorNet":
        specs = [
            nn.dense(state_dim, STATE_HIDDEN),
            nn.batchnorm(STATE_HIDDEN),
            nn.activation("relu"),
            nn.dense(STATE_HIDDEN, 1),
            nn.activation("sigmoid"),
        ]
        return cls(state_dim, nn.init_params(specs, seed))

    def forward_train(self, states):
        out, cache = nn.forward(self.net, states, nn.TRAIN)
        return FLOW_MAX * out[:, 0], cache

    def act(self, states) -> np.ndarray:
        out, _ = nn.forward(self.net, states, nn.INFER)
        return FLOW_MAX * out[:, 0]

    def backward(self, cache, dflow):
        return nn.backward(self.net, cache, FLOW_MAX * np.asarray(dflow)[:, None])[0]

    def copy(self) -> "ActorNet":
        return ActorNet(self.state_dim, self.net.copy())


@dataclass
class CriticNet:
    """Scalar action-value net: a state branch, the action concatenated onto
    its features, then a narrowing trunk with a linear head."""

    state_dim: int
    state_net: nn.NetworkParams
    trunk: nn.NetworkParams

    @classmethod
    def build(cls, state_dim: int, seed) -> "CriticNet":
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        seeds = seed.spawn(2)
        state_specs = [
            nn.dense(state_dim, STATE_HIDDEN),
            nn.batchnorm(STATE_HIDDEN),
            nn.activation("relu"),
        ]
        trunk_specs = [
            nn.dense(STATE_HIDDEN + 1, TRUNK_HIDDEN),
            nn.batchnorm(TRUNK_HIDDEN),
            nn.activation("relu"),
            nn.dense(TRUNK_HIDDEN, 1),
        ]
        return cls(state_dim, nn.init_params(state_specs, seeds[0]),
                   nn.init_params(trunk_specs, seeds[1]))

    def forward_train(self, states, actions):
        h, cache_s = nn.forward(self.state_net, states, nn.TRAIN)
        z = np.concatenate([h, np.asarray(actions, dtype=np.float64)[:, None]], axis=1)
        q, cache_t = nn.forward(self.trunk, z, nn.TRAIN)
        return q[:, 0], (cache_s, cache_t)

    def forward_infer_cached(self, states, actions):
        """Deployment-mode value with a backward-capable cache (running
        statistics are constants, so the pass is row-independent)."""
        h, cache_s = nn.forward_cached(self.state_net, states, nn.INFER)
        z = np.concatenate([h, np.asarray(actions, dtype=np.float64)[:, None]], axis=1)
        q, cache_t = nn.forward_cached(self.trunk, z, nn.INFER)
        return q[:, 0], (cache_s, cache_t)

    def q_values(self, states, actions) -> np.ndarray:
        h, _ = nn.forward(self.state_net, states, nn.INFER)
        z = np.concatenate([h, np.asarray(actions, dtype=np.float64)[:, None]], axis=1)
        q, _ = nn.forward(self.trunk, z, nn.INFER)
        return q[:, 0]

    def backward(self, caches, dq):
        cache_s, cache_t = caches
        dq2d = np.asarray(dq, dtype=np.float64)[:, None]
        trunk_grads, dz = nn.backward(self.trunk, cache_t, dq2d)
        dh, daction = dz[:, :STATE_HIDDEN], dz[:, STATE_HIDDEN]
        state_grads, dstates = nn.backward(self.state_net, cache_s, dh)
        return (state_grads, trunk_grads), dstates, daction

    def copy(self) -> "CriticNet":
        return CriticNet(self.state_dim, self.state_net.copy(), self.trunk.copy())


@dataclass
class TargetPair:
    critic: CriticNet
    actor: ActorNet

    @classmethod
    def from_online(cls, critic: CriticNet, actor: ActorNet) -> "TargetPair":
        return cls(critic.copy(), actor.copy())


@dataclass
class CriticOptState:
    state_net: nn.OptimizerState
    trunk: nn.OptimizerState


@dataclass
class TrainingLog:
    td_mse: list = field(default_factory=list)
    consistency: list = field(default_factory=list)   # (iteration, value)
    stop_reason: str = "max_iterations"
    n_iterations: int = 0


@dataclass
class TrainResult:
    actor: ActorNet
    critic: CriticNet
    targets: TargetPair
    log: TrainingLog


def td_target(batch: Batch, targets: TargetPair, discount: float) -> np.ndarray:
    """Bootstrapped regression target: r + discount * Q~(s', pi~(s')), with
    the bootstrap truncated to r at terminal (absorbing) transitions."""
    out = batch.rewards.astype(np.float64).copy()
    live = ~batch.terminal
    if np.any(live) and discount != 0.0:
        next_actions = targets.actor.act(batch.next_states[live])
        q_next = targets.critic.q_values(batch.next_states[live], next_actions)
        out[live] += discount * q_next
    return out


def critic_step(critic: CriticNet, batch: Batch, targets_vec, opt: CriticOptState,
                lr: float):
    """One Adam step on the mean of half the squared TD error; the targets
    are constants. Returns (critic, opt, pre-update mean squared TD error)."""
    q, caches = critic.forward_train(batch.states, batch.actions)
    diff = q - np.asarray(targets_vec, dtype=np.float64)
    td_mse = float(np.mean(diff * diff))
    if not np.isfinite(td_mse):
        raise TrainingAbortedError(f"non-finite critic loss {td_mse}")
    dq = diff / len(diff)
    (state_grads, trunk_grads), _, _ = critic.backward(caches, dq)
    new_state, opt_state = nn.apply_update(critic.state_net, state_grads,
                                           opt.state_net, lr)
    new_trunk, opt_trunk = nn.apply_update(critic.trunk, trunk_grads, opt.trunk, lr)
    new_state = nn.commit_running_stats(new_state, caches[0])
    new_trunk = nn.commit_running_stats(new_trunk, caches[1])
    updated = CriticNet(critic.state_dim, new_state, new_trunk)
    return updated, CriticOptState(opt_state, opt_trunk), td_mse


def actor_step(actor: ActorNet, critic: CriticNet, batch: Batch,
               opt: nn.OptimizerState, lr: float):
    """One Adam ascent step on mean Q(s, pi(s)); the critic is frozen (its
    parameters receive no update). Returns (actor, opt, pre-update
    objective).

    The critic is evaluated in deployment mode here: with train-mode batch
    statistics active after the action merge, the objective would be
    invariant to a common shift of every action in the batch, leaving the
    policy's overall dose level unconstrained.
    """
    flows, actor_cache = actor.forward_train(batch.states)
    q, critic_caches = critic.forward_infer_cached(batch.states, flows)
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise TrainingAbortedError(f"non-finite actor objective {objective}")
    dq = np.full(len(q), 1.0 / len(q))
    _, _, daction = critic.backward(critic_caches, dq)
    grads = actor.backward(actor_cache, daction)
    ascent = [{k: -g for k, g in entry.items()} for entry in grads]
    new_net, new_opt = nn.apply_update(actor.net, ascent, opt, lr)
    new_net = nn.commit_running_stats(new_net, actor_cache)
    return ActorNet(actor.state_dim, new_net), new_opt, objective


def polyak_update(targets: TargetPair, critic: CriticNet, actor: ActorNet,
                  rho: float) -> TargetPair:
    """Convex blend of every parameter tensor, batch-norm scale/shift and
    running statistics included."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    blended_critic = CriticNet(
        critic.state_dim,
        nn.blend_params(targets.critic.state_net, critic.state_net, rho),
        nn.blend_params(targets.critic.trunk, critic.trunk, rho))
    blended_actor = ActorNet(
        actor.state_dim, nn.blend_params(targets.actor.net, actor.net, rho))
    return TargetPair(blended_critic, blended_actor)


def consistency_metric(actor: ActorNet, dataset) -> float:
    """Mean squared deviation between recommended and logged flows."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    recommended = actor.act(dataset.states)
    return float(np.mean((recommended - dataset.actions) ** 2))


def recommend(actor: ActorNet, state) -> float:
    """Deterministic flow recommendation in [0, 60] for one normalized state."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1 or state.shape[0] != actor.state_dim:
        raise ValueError(f"state must be a vector of length {actor.state_dim}")
    return float(actor.act(state[None, :])[0])


def train(memory: ReplayMemory, config: TrainingConfig,
          consistency_fn=None) -> TrainResult:
    """Run the offline training loop to early stop or the iteration cap.

    Per iteration: sample a uniform minibatch, regress the critic on its
    bootstrapped targets, ascend the actor through the frozen critic, then
    blend both target copies. `consistency_fn(actor, memory)` is evaluated
    every `consistency_every` iterations (a hook mainly for tests; defaults
    to :func:`consistency_metric`) and training halts once it has not
    improved within `patience` iterations. Fully reproducible from the
    config and memory seeds.
    """
    config.validate()
    if len(memory) == 0:
        raise ValueError("replay memory is empty")
    if consistency_fn is None:
        consistency_fn = consistency_metric

    net_seeds = np.random.SeedSequence(config.seed).spawn(2)
    critic = CriticNet.build(memory.state_dim, net_seeds[0])
    actor = ActorNet.build(memory.state_dim, net_seeds[1])
    targets = TargetPair.from_online(critic, actor)
    critic_opt = CriticOptState(nn.init_optimizer(critic.state_net),
                                nn.init_optimizer(critic.trunk))
    actor_opt = nn.init_optimizer(actor.net)
    sampler = np.random.default_rng(
        np.random.SeedSequence(entropy=(config.seed, memory.seed)))

    log = TrainingLog()
    best = np.inf
    best_iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        idx = sampler.integers(0, len(memory), size=config.batch_size)
        batch = memory.minibatch(idx)
        try:
            targets_vec = td_target(batch, targets, config.discount)
            critic, critic_opt, td_mse = critic_step(
                critic, batch, targets_vec, critic_opt, config.critic_lr)
            actor, actor_opt, _ = actor_step(
                actor, critic, batch, actor_opt, config.actor_lr)
        except TrainingAbortedError as err:
            raise TrainingAbortedError(str(err), iteration=iteration) from None
        targets = polyak_update(targets, critic, actor, config.polyak)
        log.td_mse.append(td_mse)
        log.n_iterations = iteration
        if iteration % config.consistency_every == 0:
            value = float(consistency_fn(actor, memory))
            log.consistency.append((iteration, value))
            if value < best:
                best = value
                best_iteration = iteration
            elif iteration - best_iteration >= config.patience:
                log.stop_reason = "early_stop"
                break
    return TrainResult(actor, critic, targets, log)


def write_training_log(path, log: TrainingLog) -> None:
    """CSV `iteration,td_mse,consistency_mse`; consistency is blank on
    iterations where it was not evaluated."""
    evaluated = dict(log.consistency)
    with open(path, "w", newline="\n") as fh:
        fh.write("iteration,td_mse,consistency_mse\n")
        for i, mse in enumerate(log.td_mse, start=1):
            extra = repr(evaluated[i]) if i in evaluated else ""
            fh.write(f"{i},{mse!r},{extra}\n")


# --- policy checkpoint --------------------------------------------------------

POLICY_MAGIC = "oxyrl-policy-v1"

POLICY_KIND_ACTOR = "actor"
# test hook: a checkpoint marked mirror_logged makes evaluation echo the
# logged flows instead of querying the actor
POLICY_KIND_MIRROR = "mirror_logged"


@dataclass
class PolicyBundle:
    actor: ActorNet
    critic: CriticNet
    targets: TargetPair
    config: TrainingConfig
    interval_hours: float
    feature_names: tuple[str, ...]
    feature_means: np.ndarray
    feature_sds: np.ndarray
    policy_kind: str = POLICY_KIND_ACTOR


_CONFIG_FIELDS = ("discount", "batch_size", "critic_lr", "actor_lr", "polyak",
                  "max_iterations", "patience", "consistency_every", "seed")


def save_policy(path, bundle: PolicyBundle) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(POLICY_MAGIC + "\n")
        fh.write(f"policy_kind {bundle.policy_kind}\n")
        fh.write(f"interval_hours {float(bundle.interval_hours)!r}\n")
        values = " ".join(repr(getattr(bundle.config, name))
                          for name in _CONFIG_FIELDS)
        fh.write(f"config {values}\n")
        fh.write("features " + " ".join(bundle.feature_names) + "\n")
        nn._write_array(fh, "feature_means", bundle.feature_means)
        nn._write_array(fh, "feature_sds", bundle.feature_sds)
        for net in (bundle.actor.net, bundle.critic.state_net, bundle.critic.trunk,
                    bundle.targets.actor.net, bundle.targets.critic.state_net,
                    bundle.targets.critic.trunk):
            nn.write_params(fh, net)


def load_policy(path) -> PolicyBundle:
    with open(path) as fh:
        if fh.readline().strip() != POLICY_MAGIC:
            raise ValueError("unrecognized policy checkpoint")
        policy_kind = fh.readline().split()[1]
        interval_hours = float(fh.readline().split()[1])
        raw = fh.readline().split()[1:]
        config = TrainingConfig(
            discount=float(raw[0]), batch_size=int(raw[1]), critic_lr=float(raw[2]),
            actor_lr=float(raw[3]), polyak=float(raw[4]), max_iterations=int(raw[5]),
            patience=int(raw[6]), consistency_every=int(raw[7]), seed=int(raw[8]))
        feature_names = tuple(fh.readline().split()[1:])
        _, means = nn._read_array(fh.readline(), fh)
        _, sds = nn._read_array(fh.readline(), fh)
        nets = [nn.read_params(fh) for _ in range(6)]
    state_dim = len(feature_names)
    actor = ActorNet(state_dim, nets[0])
    critic = CriticNet(state_dim, nets[1], nets[2])
    targets = TargetPair(CriticNet(state_dim, nets[4], nets[5]),
                         ActorNet(state_dim, nets[3]))
    return PolicyBundle(actor, critic, targets, config, interval_hours,
                        feature_names, means, sds, policy_kind)
