"""Steering-rate agent trained with DDPG on the digital twin.

The environment wraps :class:`VehicleTwin` with the PI speed loop, integrates
the commanded steering rate into a saturated steering angle and scores each
tick with a demonstrator-shaped reward. The LQ law queried at the pre-step
errors acts as the demonstrator.
"""
from __future__ import annotations

import json
import logging
import math
import pathlib
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np
import pandas as pd

from .controllers import LqScheduler, PiGains, PiState, SteeringLimits, lq_ed, pi_speed, rate_limit_and_saturate
from .errors import PolicyFormatError, ValidationError
from .kpis import KpiReport, compute_kpis
from .networks import ActorNetwork, Adam, CriticNetwork, Dense, Mlp, soft_update
from .paths import Path, TrackingErrors, lookup, tracking_errors, travelled_distance_rate
from .vehicle_models import (
    SAMPLE_TIME,
    V_MIN,
    BicycleState,
    ControlInput,
    TruthSample,
    TwinDisturbance,
    VehicleParams,
    VehicleTwin,
    steady_state_cornering,
)

LOGGER = logging.getLogger(__name__)

OBSERVATION_SCALE = (0.3, 1.0, 0.5, 2.0)
POLICY_FORMAT = "robocar-twin-policy"
POLICY_VERSION = 1
LEARNING_CURVE_COLUMNS = ("episode", "cumulative_reward", "mean_reward")
_ACTOR_ACTIVATIONS = ("relu", "relu", "tanh")


@dataclass(frozen=True, slots=True)
class RewardWeights:
    m1: float = 1.0
    m2: float = 1.0
    m3: float = 0.5
    m4: float = 0.5
    m5: float = 0.05
    m6: float = 0.5
    big_m: float = 100.0
    dy_th_low: float = 0.03
    dy_th_high: float = 0.30
    dpsi_th: float = 0.10

    def __post_init__(self) -> None:
        for name in ("m1", "m2", "m3", "m4", "m5", "m6"):
            if getattr(self, name) < 0:
                msg = f"Reward weight {name} must be non negative"
                raise ValidationError(msg)
        if not self.big_m > 0:
            msg = "Terminal penalty M must be positive"
            raise ValidationError(msg)
        if not 0 < self.dy_th_low < self.dy_th_high:
            msg = "Lateral thresholds must satisfy 0 < dy_th_low < dy_th_high"
            raise ValidationError(msg)
        if not self.dpsi_th > 0:
            msg = "Heading threshold must be positive"
            raise ValidationError(msg)

    def without_demonstrator(self) -> "RewardWeights":
        return replace(self, m6=0.0)


def reward(
    errors: TrackingErrors,
    delta_dot: float,
    delta: float,
    delta_ed: float,
    w: RewardWeights,
) -> tuple[float, bool]:
    """Shaped reward of one tick and whether the lateral error breached the outer threshold."""

    abs_dy = abs(errors.dy)
    terminal = abs_dy >= w.dy_th_high
    if terminal:
        r_y = -w.big_m
    elif abs_dy <= w.dy_th_low:
        r_y = -w.m1 * math.log(w.dy_th_low)
    else:
        r_y = -w.m2 * math.log(abs_dy)
    abs_dpsi = abs(errors.dpsi)
    if abs_dpsi <= w.dpsi_th:
        r_psi = -w.m3 * math.log(w.dpsi_th)
    else:
        r_psi = -w.m4 * math.log(abs_dpsi)
    r_rate = -w.m5 * abs(delta_dot)
    r_demo = -w.m6 * abs(delta_ed - delta)
    return r_y + r_psi + r_rate + r_demo, terminal


def normalise_observation(errors: TrackingErrors, scale: tuple[float, ...] = OBSERVATION_SCALE) -> np.ndarray:
    return errors.as_array() / np.asarray(scale, dtype=float)


@dataclass(frozen=True, slots=True)
class EnvConfig:
    v_ref: float = 0.5
    delta_dot_max: float = math.radians(70.0)
    initial_dy: float = 0.05
    horizon_margin: float = 0.2
    corner_speed_factor: float = 1.0
    laps: int = 1
    dt: float = SAMPLE_TIME

    def __post_init__(self) -> None:
        if not self.v_ref > 0:
            msg = "Reference speed must be positive"
            raise ValidationError(msg)
        if not self.delta_dot_max > 0:
            msg = "Steering-rate limit must be positive"
            raise ValidationError(msg)
        if self.initial_dy < 0 or self.horizon_margin < 0:
            msg = "Initial offset range and horizon margin must be non negative"
            raise ValidationError(msg)
        if not 0 < self.corner_speed_factor <= 1.0:
            msg = "corner_speed_factor must lie in (0, 1]"
            raise ValidationError(msg)
        if self.laps < 1:
            msg = "laps must be at least one"
            raise ValidationError(msg)
        if not self.dt > 0:
            msg = "Environment step must be positive"
            raise ValidationError(msg)


@dataclass(frozen=True, slots=True)
class EnvStep:
    observation: np.ndarray
    reward: float
    terminal: bool
    breached: bool
    errors: TrackingErrors
    delta: float
    delta_dot: float
    delta_ed: float
    va: float
    s: float


class PathTrackingEnv:
    """Closed loop of twin, PI speed loop and steering integrator along one path."""

    def __init__(
        self,
        params: VehicleParams,
        path: Path,
        *,
        config: EnvConfig | None = None,
        weights: RewardWeights | None = None,
        use_demonstrator: bool = True,
        pi_gains: PiGains | None = None,
        demonstrator: LqScheduler | None = None,
        disturbance: TwinDisturbance | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        if config is not None and config.laps > 1 and not path.closed:
            msg = f"Open path {path.name} can only be driven once per episode"
            raise ValidationError(msg)
        self.params = params
        self.path = path
        self.config = config or EnvConfig()
        weights = weights or RewardWeights()
        self.weights = weights if use_demonstrator else weights.without_demonstrator()
        self.limits = SteeringLimits(delta_max=params.chassis.delta_max, delta_dot_max=self.config.delta_dot_max)
        self.demonstrator = demonstrator or LqScheduler(params.chassis, dt=self.config.dt)
        self._pi_gains = pi_gains or PiGains()
        self._disturbance = disturbance
        self._rng = rng
        self.s_end = path.length * self.config.laps
        self.horizon = int(math.ceil(self.s_end / (self.config.v_ref * self.config.dt) * (1.0 + self.config.horizon_margin)))
        self.twin: VehicleTwin | None = None
        self.last_truth: TruthSample | None = None
        self.delta = 0.0
        self.s = 0.0
        self.steps = 0
        self.done = True
        self._pi: PiState | None = None
        self._errors: TrackingErrors | None = None

    @property
    def delta_dot_max(self) -> float:
        return self.config.delta_dot_max

    @property
    def state(self) -> BicycleState:
        return self._twin().state

    @property
    def errors(self) -> TrackingErrors:
        if self._errors is None:
            msg = "Environment used before reset"
            raise ValidationError(msg)
        return self._errors

    @property
    def t(self) -> float:
        return self.steps * self.config.dt

    def _twin(self) -> VehicleTwin:
        if self.twin is None:
            msg = "Environment used before reset"
            raise ValidationError(msg)
        return self.twin

    def speed_reference(self, kappa: float) -> float:
        factor = self.config.corner_speed_factor if kappa != 0.0 else 1.0
        return self.config.v_ref * factor

    def reset(self, initial_dy: float = 0.0, *, initial_speed: float | None = None) -> np.ndarray:
        """Place the car ``initial_dy`` left of the path start, at steady state for its curvature.

        ``initial_speed`` defaults to the speed reference at the start.
        """

        ref = lookup(self.path, 0.0)
        v = self.speed_reference(ref.kappa) if initial_speed is None else initial_speed
        if not v > V_MIN:
            msg = f"Initial speed must exceed {V_MIN} m/s"
            raise ValidationError(msg)
        beta, r, delta = 0.0, 0.0, 0.0
        if ref.kappa != 0.0:
            beta, r, delta = steady_state_cornering(self.params.chassis, v, ref.kappa)
            delta = max(-self.limits.delta_max, min(self.limits.delta_max, delta))
        initial = BicycleState(
            x=ref.x - initial_dy * math.sin(ref.psi),
            y=ref.y + initial_dy * math.cos(ref.psi),
            v=v,
            psi=ref.psi,
            beta=beta,
            r=r,
        )
        self.twin = VehicleTwin(self.params, initial, dt=self.config.dt, disturbance=self._disturbance, rng=self._rng)
        self._pi = PiState(self._pi_gains, integral=self.params.motor.steady_voltage(v) / self._pi_gains.ki)
        self.delta = delta
        self.s = 0.0
        self.steps = 0
        self.done = False
        self._errors = tracking_errors(initial, ref)
        LOGGER.debug("Environment reset", extra={"path": self.path.name, "initial_dy": initial_dy})
        return normalise_observation(self._errors)

    def step(self, delta_dot: float) -> EnvStep:
        """Apply a steering rate for one tick."""

        rate = max(-self.delta_dot_max, min(self.delta_dot_max, float(delta_dot)))
        delta = max(-self.limits.delta_max, min(self.limits.delta_max, self.delta + rate * self.config.dt))
        return self._advance(delta, rate)

    def step_steering(self, delta_cmd: float) -> EnvStep:
        """Apply a steering angle command through the rate limiter and saturation."""

        delta = rate_limit_and_saturate(delta_cmd, self.delta, self.config.dt, self.limits)
        return self._advance(delta, (delta - self.delta) / self.config.dt)

    def _advance(self, delta: float, delta_dot: float) -> EnvStep:
        if self.done or self._pi is None:
            msg = "Episode finished; call reset() first"
            raise ValidationError(msg)
        twin = self._twin()
        state = twin.state
        xe = self.errors
        ref = lookup(self.path, self.s)
        delta_ed = lq_ed(xe, self.demonstrator.gain_for(state.v), self.limits.delta_max)
        va = pi_speed(self.speed_reference(ref.kappa), state.v, self.config.dt, self._pi)
        u = ControlInput(va=va, delta=delta)
        self.last_truth = twin.sample(u)
        s_dot = travelled_distance_rate(state, xe, ref)
        twin.step(u)
        self.s += s_dot * self.config.dt
        self.steps += 1
        self.delta = delta
        self._errors = tracking_errors(twin.state, lookup(self.path, self.s))
        value, breached = reward(self._errors, delta_dot, delta, delta_ed, self.weights)
        finished = self.s >= self.s_end
        self.done = breached or finished or self.steps >= self.horizon
        return EnvStep(
            observation=normalise_observation(self._errors),
            reward=value,
            terminal=breached or finished,
            breached=breached,
            errors=self._errors,
            delta=delta,
            delta_dot=delta_dot,
            delta_ed=delta_ed,
            va=va,
            s=self.s,
        )


@dataclass(frozen=True, slots=True, eq=False)
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int) -> None:
        if capacity <= 0 or state_dim <= 0:
            msg = "Replay buffer capacity and state dimension must be positive"
            raise ValidationError(msg)
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros(capacity)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, state: np.ndarray, action: float, reward_value: float, next_state: np.ndarray, done: bool) -> None:
        i = self._cursor
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = reward_value
        self._next_states[i] = next_state
        self._dones[i] = done
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if self._size == 0:
            msg = "Cannot sample from an empty replay buffer"
            raise ValidationError(msg)
        idx = rng.integers(0, self._size, size=batch_size)
        return TransitionBatch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            dones=self._dones[idx],
        )


def critic_targets(rewards: np.ndarray, next_q: np.ndarray, dones: np.ndarray, gamma: float) -> np.ndarray:
    """TD targets ``r + gamma * (1 - done) * Q'(s', mu'(s'))``."""

    if not 0.0 <= gamma < 1.0:
        msg = "Discount factor must lie in [0, 1)"
        raise ValidationError(msg)
    rewards = np.asarray(rewards, dtype=float)
    live = 1.0 - np.asarray(dones, dtype=float)
    return rewards + gamma * live * np.asarray(next_q, dtype=float)


@dataclass(frozen=True, slots=True)
class DdpgConfig:
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 64
    tau: float = 5e-3
    buffer_size: int = 200_000
    noise_std: float = 0.3
    noise_decay: float = 0.995
    episodes: int = 300
    max_steps: int | None = None
    divergence_check: int = 500
    curve_window: int = 20
    actor_hidden: tuple[int, int] = (200, 200)
    critic_state_hidden: tuple[int, int] = (200, 200)
    critic_action_hidden: tuple[int, int] = (100, 200)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            msg = "gamma must lie in (0, 1)"
            raise ValidationError(msg)
        if self.actor_lr < 0 or self.critic_lr < 0:
            msg = "Learning rates must be non negative"
            raise ValidationError(msg)
        if self.batch_size <= 0 or self.buffer_size < self.batch_size:
            msg = "Batch size must be positive and fit in the replay buffer"
            raise ValidationError(msg)
        if not 0.0 <= self.tau <= 1.0:
            msg = "tau must lie in [0, 1]"
            raise ValidationError(msg)
        if self.noise_std < 0 or not 0.0 < self.noise_decay <= 1.0:
            msg = "Exploration noise must be non negative with a decay in (0, 1]"
            raise ValidationError(msg)
        if self.episodes <= 0 or self.curve_window <= 0:
            msg = "episodes and curve_window must be positive"
            raise ValidationError(msg)
        if self.max_steps is not None and self.max_steps <= 0:
            msg = "max_steps must be positive when given"
            raise ValidationError(msg)


@dataclass(slots=True)
class MlpPolicy:
    """Deployable actor: normalised tracking errors in, steering rate out."""

    actor: ActorNetwork
    observation_scale: tuple[float, ...] = OBSERVATION_SCALE

    @property
    def delta_dot_max(self) -> float:
        return self.actor.scale

    def act(self, observation: np.ndarray) -> float:
        return float(self.actor.forward(observation)[0])

    def act_on_errors(self, errors: TrackingErrors) -> float:
        return self.act(normalise_observation(errors, self.observation_scale))

    def parameters(self) -> list[np.ndarray]:
        return self.actor.parameters()


class DdpgAgent:
    """Actor, critic, their target copies and optimisers."""

    def __init__(self, state_dim: int, delta_dot_max: float, config: DdpgConfig, rng: np.random.Generator) -> None:
        self.config = config
        self.scale = delta_dot_max
        self.actor = ActorNetwork.build(state_dim, delta_dot_max, rng, hidden=config.actor_hidden)
        self.critic = CriticNetwork.build(
            state_dim,
            1,
            rng,
            state_hidden=config.critic_state_hidden,
            action_hidden=config.critic_action_hidden,
        )
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_optimiser = Adam(self.actor.parameters(), config.actor_lr)
        self.critic_optimiser = Adam(self.critic.parameters(), config.critic_lr)

    def act(self, observation: np.ndarray) -> float:
        return float(self.actor.forward(observation)[0])

    def update(self, batch: TransitionBatch) -> float:
        """One critic and one actor step on ``batch``; returns the critic loss."""

        n = batch.rewards.shape[0]
        next_actions = self.target_actor.forward(batch.next_states)
        next_q = self.target_critic.forward(batch.next_states, next_actions / self.scale)
        targets = critic_targets(batch.rewards, next_q, batch.dones, self.config.gamma)

        q = self.critic.forward(batch.states, batch.actions / self.scale)
        critic_grads, _ = self.critic.backward(2.0 * (q - targets) / n)
        self.critic_optimiser.step(critic_grads)

        actions = self.actor.forward(batch.states)
        self.critic.forward(batch.states, actions / self.scale)
        _, dq_da = self.critic.backward(np.full(n, -1.0 / n))
        self.actor_optimiser.step(self.actor.backward(dq_da[:, 0] / self.scale))

        soft_update(self.target_critic.parameters(), self.critic.parameters(), self.config.tau)
        soft_update(self.target_actor.parameters(), self.actor.parameters(), self.config.tau)
        return float(np.mean((q - targets) ** 2))

    def policy(self) -> MlpPolicy:
        return MlpPolicy(self.actor.copy())


@dataclass(slots=True)
class TrainingResult:
    policy: MlpPolicy
    curve: pd.DataFrame
    diverged: bool = False
    baseline: float | None = None
    updates: int = 0


def _episode_return(rewards: list[float], gamma: float) -> float:
    return float(sum(value * gamma**k for k, value in enumerate(rewards)))


def _random_policy_return(env: PathTrackingEnv, rng: np.random.Generator, config: DdpgConfig) -> float:
    env.reset(rng.uniform(-env.config.initial_dy, env.config.initial_dy))
    rewards: list[float] = []
    while not env.done:
        rewards.append(env.step(rng.uniform(-env.delta_dot_max, env.delta_dot_max)).reward)
        if config.max_steps is not None and len(rewards) >= config.max_steps:
            break
    return _episode_return(rewards, config.gamma)


def learning_curve(returns: list[float], window: int) -> pd.DataFrame:
    series = pd.Series(returns, dtype=float)
    return pd.DataFrame(
        {
            "episode": np.arange(1, len(returns) + 1),
            "cumulative_reward": series,
            "mean_reward": series.rolling(window=window, min_periods=1).mean(),
        }
    )


def ddpg_train(env: PathTrackingEnv, config: DdpgConfig, seed: int) -> TrainingResult:
    """Train a steering-rate policy; every random draw comes from one generator seeded with ``seed``."""

    rng = np.random.default_rng(seed)
    agent = DdpgAgent(len(OBSERVATION_SCALE), env.delta_dot_max, config, rng)
    buffer = ReplayBuffer(config.buffer_size, len(OBSERVATION_SCALE))
    returns: list[float] = []
    baseline: float | None = None
    diverged = False
    updates = 0
    LOGGER.info(
        "Starting DDPG training",
        extra={"path": env.path.name, "episodes": config.episodes, "seed": seed},
    )
    for episode in range(config.episodes):
        sigma = config.noise_std * env.delta_dot_max * config.noise_decay**episode
        observation = env.reset(rng.uniform(-env.config.initial_dy, env.config.initial_dy))
        rewards: list[float] = []
        while not env.done:
            action = agent.act(observation)
            if sigma > 0:
                action += rng.normal(0.0, sigma)
            action = max(-env.delta_dot_max, min(env.delta_dot_max, action))
            outcome = env.step(action)
            buffer.add(observation, action, outcome.reward, outcome.observation, outcome.terminal)
            observation = outcome.observation
            rewards.append(outcome.reward)
            if len(buffer) >= config.batch_size:
                agent.update(buffer.sample(config.batch_size, rng))
                updates += 1
            if config.max_steps is not None and len(rewards) >= config.max_steps:
                break
        returns.append(_episode_return(rewards, config.gamma))
        LOGGER.debug(
            "Episode finished",
            extra={"episode": episode + 1, "episode_return": returns[-1], "steps": len(rewards), "sigma": sigma},
        )
        if episode + 1 >= config.divergence_check:
            if baseline is None:
                baseline = _random_policy_return(env, rng, config)
            running = float(np.mean(returns[-config.curve_window :]))
            if running < baseline:
                diverged = True
                LOGGER.error(
                    "DDPG training diverged: running reward below the random-policy baseline",
                    extra={"episode": episode + 1, "running_reward": running, "baseline": baseline, "seed": seed},
                )
                break
    curve = learning_curve(returns, config.curve_window)
    LOGGER.info(
        "Finished DDPG training",
        extra={"episodes": len(returns), "updates": updates, "final_mean_reward": float(curve["mean_reward"].iloc[-1])},
    )
    return TrainingResult(policy=agent.policy(), curve=curve, diverged=diverged, baseline=baseline, updates=updates)


@dataclass(slots=True)
class PolicyEvaluation:
    kpis: KpiReport
    terminated: bool
    trace: pd.DataFrame = field(default_factory=pd.DataFrame)


TRACE_COLUMNS = ("t", "s", "X", "Y", "v", "dy", "dpsi", "delta", "delta_dot")


def rollout_row(env: PathTrackingEnv, outcome: EnvStep) -> dict[str, float]:
    state = env.state
    return {
        "t": env.t,
        "s": outcome.s,
        "X": state.x,
        "Y": state.y,
        "v": state.v,
        "dy": outcome.errors.dy,
        "dpsi": outcome.errors.dpsi,
        "delta": outcome.delta,
        "delta_dot": outcome.delta_dot,
    }


def evaluate_policy(policy: MlpPolicy, env: PathTrackingEnv, *, initial_dy: float = 0.0, controller: str = "drl") -> PolicyEvaluation:
    """Noise-free rollout of ``policy`` over one pass of the environment's path."""

    observation = env.reset(initial_dy)
    rows: list[dict[str, float]] = []
    terminated = False
    while not env.done:
        outcome = env.step(policy.act(observation))
        observation = outcome.observation
        rows.append(rollout_row(env, outcome))
        terminated = outcome.breached
    trace = pd.DataFrame(rows, columns=list(TRACE_COLUMNS))
    kpis = compute_kpis(trace["dy"], trace["delta"], env.config.dt, controller=controller, path=env.path.name)
    if terminated:
        LOGGER.warning("Policy breached the lateral threshold", extra={"path": env.path.name, "t": env.t})
    return PolicyEvaluation(kpis=kpis, terminated=terminated, trace=trace)


def export_policy(policy: MlpPolicy, file: str | pathlib.Path) -> pathlib.Path:
    """Write the actor as a versioned JSON weight dump (row-major, shapes in the header)."""

    layers = []
    for layer in policy.actor.body.layers:
        layers.append(
            {
                "shape": list(layer.shape),
                "activation": layer.activation,
                "weight": layer.weight.ravel(order="C").tolist(),
                "bias": layer.bias.tolist(),
            }
        )
    payload = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "delta_dot_max": policy.delta_dot_max,
        "observation_scale": list(policy.observation_scale),
        "layers": layers,
    }
    target = pathlib.Path(file)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload), encoding="utf-8")
    LOGGER.info("Exported policy", extra={"policy_file": str(target), "layers": len(layers)})
    return target


def _parse_layer(raw: Mapping[str, Any], index: int) -> Dense:
    try:
        n_in, n_out = (int(value) for value in raw["shape"])
        weight = np.asarray(raw["weight"], dtype=float)
        bias = np.asarray(raw["bias"], dtype=float)
        activation = str(raw["activation"])
    except (KeyError, TypeError, ValueError) as exc:
        msg = f"Policy layer {index} is malformed"
        raise PolicyFormatError(msg) from exc
    if weight.size != n_in * n_out or bias.shape != (n_out,):
        msg = f"Policy layer {index} does not match its shape header {n_in}x{n_out}"
        raise PolicyFormatError(msg)
    try:
        return Dense(weight.reshape(n_in, n_out), bias, activation)
    except ValidationError as exc:
        msg = f"Policy layer {index} has unknown activation {activation!r}"
        raise PolicyFormatError(msg) from exc


def load_policy(file: str | pathlib.Path) -> MlpPolicy:
    source = pathlib.Path(file)
    if not source.exists():
        msg = f"Policy file {source} not found"
        raise ValidationError(msg)
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        msg = f"Policy file {source} is not valid JSON"
        raise PolicyFormatError(msg) from exc
    if not isinstance(payload, dict) or payload.get("format") != POLICY_FORMAT:
        msg = f"{source} is not a policy file"
        raise PolicyFormatError(msg)
    if payload.get("version") != POLICY_VERSION:
        msg = f"Unsupported policy version {payload.get('version')!r}; expected {POLICY_VERSION}"
        raise PolicyFormatError(msg)
    raw_layers = payload.get("layers")
    if not isinstance(raw_layers, list) or len(raw_layers) != len(_ACTOR_ACTIVATIONS):
        msg = f"Policy must hold {len(_ACTOR_ACTIVATIONS)} layers"
        raise PolicyFormatError(msg)
    layers = [_parse_layer(raw, index) for index, raw in enumerate(raw_layers)]
    if tuple(layer.activation for layer in layers) != _ACTOR_ACTIVATIONS:
        msg = "Policy activations must be relu, relu, tanh"
        raise PolicyFormatError(msg)
    scale = tuple(float(value) for value in payload.get("observation_scale", ()))
    if len(scale) != len(OBSERVATION_SCALE) or layers[0].shape[0] != len(scale):
        msg = "Policy input width does not match the four tracking errors"
        raise PolicyFormatError(msg)
    try:
        body = Mlp(layers)
        actor = ActorNetwork(body, float(payload["delta_dot_max"]))
    except (KeyError, TypeError, ValidationError) as exc:
        msg = f"Policy file {source} does not describe a valid actor"
        raise PolicyFormatError(msg) from exc
    LOGGER.info("Loaded policy", extra={"policy_file": str(source)})
    return MlpPolicy(actor, scale)


__all__ = [
    "DdpgAgent",
    "DdpgConfig",
    "EnvConfig",
    "EnvStep",
    "LEARNING_CURVE_COLUMNS",
    "MlpPolicy",
    "OBSERVATION_SCALE",
    "PathTrackingEnv",
    "PolicyEvaluation",
    "ReplayBuffer",
    "RewardWeights",
    "TRACE_COLUMNS",
    "TrainingResult",
    "TransitionBatch",
    "critic_targets",
    "ddpg_train",
    "evaluate_policy",
    "export_policy",
    "learning_curve",
    "load_policy",
    "normalise_observation",
    "reward",
    "rollout_row",
]
