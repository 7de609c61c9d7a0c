"""Truncated-quantile-critics agent, replay buffer, and baseline policies.

The agent is an entropy-regularised squashed-Gaussian actor with an ensemble
of quantile critics.  Temporal-difference targets pool the target critics'
quantile atoms, drop the largest ones (the truncation that fights
overestimation bias), and regress the online critics onto the surviving
atoms with an asymmetric Huber quantile loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor, concat, custom_unary
from .nn import AdamState, Mlp, ParameterSet, adam_update, forward, forward_tape, init_mlp_params
from .nn import load_checkpoint, save_checkpoint

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = float(np.log(2.0 * np.pi))
SQUASH_EPS = 1.0e-6


@dataclass(frozen=True)
class TqcConfig:
    n_critics: int = 2
    quantiles_per_critic: int = 25
    dropped_per_critic: int = 2
    discount: float = 0.99
    target_smoothing: float = 0.005
    learning_rate: float = 3.0e-4
    batch_size: int = 256
    entropy_target: float | None = None  # default: -action_dim
    replay_capacity: int = 1_000_000
    warmup_steps: int = 1000
    hidden_sizes: tuple = (64, 64)
    train_freq: int = 1  # environment steps per gradient update

    def __post_init__(self):
        if self.n_critics < 1:
            raise ValueError("n_critics must be >= 1")
        if not 0 <= self.dropped_per_critic < self.quantiles_per_critic:
            raise ValueError("dropped_per_critic must satisfy 0 <= d < M")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if not 0.0 < self.target_smoothing <= 1.0:
            raise ValueError("target_smoothing must lie in (0, 1]")
        if self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("batch_size and replay_capacity must be >= 1")
        if self.train_freq < 1:
            raise ValueError("train_freq must be >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


def quantile_fractions(n_quantiles: int) -> np.ndarray:
    """Midpoint fractions tau_m = (2m - 1) / 2M for m = 1..M."""
    m = np.arange(1, n_quantiles + 1, dtype=np.float64)
    return (2.0 * m - 1.0) / (2.0 * n_quantiles)


def quantile_huber_loss(
    predicted: np.ndarray, targets: np.ndarray, fractions: np.ndarray | None = None
) -> float:
    """Mean asymmetric Huber quantile loss (kappa = 1) over all pairs."""
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if fractions is None:
        fractions = quantile_fractions(predicted.size)
    fractions = np.asarray(fractions, dtype=np.float64).reshape(-1)
    if fractions.size != predicted.size:
        raise ValueError("one fraction per predicted quantile is required")
    if np.any(fractions <= 0.0) or np.any(fractions >= 1.0) or np.any(
        np.diff(fractions) <= 0.0
    ):
        raise ValueError("fractions must be strictly increasing within (0, 1)")
    loss, _ = kernels.quantile_huber_loss_grad(
        np.ascontiguousarray(predicted.reshape(1, 1, -1)),
        np.ascontiguousarray(targets.reshape(1, -1)),
        np.ascontiguousarray(fractions),
    )
    return float(loss)


def truncated_target(
    atoms: np.ndarray,
    reward: float,
    terminated: bool,
    discount: float,
    dropped_per_critic: int,
    entropy_term: float = 0.0,
) -> np.ndarray:
    """Sort pooled atoms, drop the d largest per critic, build TD targets.

    ``atoms`` has shape (n_critics, quantiles_per_critic); the result is the
    k*N smallest pooled atoms (k = M - d) mapped through
    ``reward + (1 - terminated) * discount * (atom - entropy_term)``.
    """
    atoms = np.asarray(atoms, dtype=np.float64)
    if atoms.ndim != 2:
        raise ValueError("atoms must have shape (n_critics, quantiles_per_critic)")
    n_critics, n_quantiles = atoms.shape
    if not 0 <= dropped_per_critic < n_quantiles:
        raise ValueError("dropped_per_critic must satisfy 0 <= d < M")
    if not 0.0 < discount <= 1.0:
        raise ValueError("discount must lie in (0, 1]")
    keep = (n_quantiles - dropped_per_critic) * n_critics
    pooled = np.sort(atoms.reshape(-1))[:keep]
    cont = 0.0 if terminated else discount
    return reward + cont * (pooled - entropy_term)


def policy_moments(net: Mlp, params, obs: np.ndarray, act_dim: int):
    """Actor head split into the Gaussian mean and clipped log-std."""
    out = forward(net, params, obs)
    mean = out[..., :act_dim]
    log_std = np.clip(out[..., act_dim:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


class ActorSnapshot:
    """Frozen actor parameters; enough to act, nothing else."""

    def __init__(self, net: Mlp, params: dict, act_dim: int):
        self._net = net
        self._params = params
        self._act_dim = act_dim

    def select_action(
        self, obs: np.ndarray, stochastic: bool = True, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        mean, log_std = policy_moments(
            self._net, self._params, np.asarray(obs, dtype=np.float64), self._act_dim
        )
        if not stochastic:
            return np.tanh(mean)
        if rng is None:
            raise ValueError("stochastic snapshot actions need an explicit rng")
        noise = rng.standard_normal(mean.shape)
        return np.tanh(mean + np.exp(log_std) * noise)


class ReplayBuffer:
    """Uniform ring buffer of transitions."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._obs = np.zeros((capacity, obs_dim))
        self._act = np.zeros((capacity, act_dim))
        self._rew = np.zeros(capacity)
        self._next_obs = np.zeros((capacity, obs_dim))
        self._term = np.zeros(capacity)
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs, act, reward, next_obs, terminated) -> None:
        i = self._cursor
        self._obs[i] = obs
        self._act[i] = act
        self._rew[i] = reward
        self._next_obs[i] = next_obs
        self._term[i] = 1.0 if terminated else 0.0
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self._size < 1:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return (
            self._obs[idx],
            self._act[idx],
            self._rew[idx],
            self._next_obs[idx],
            self._term[idx],
        )


class TqcAgent:
    """Actor, critic ensemble, temperature, and their optimiser state."""

    def __init__(self, obs_dim: int, act_dim: int, config: TqcConfig | None = None, seed: int = 0):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.config = config if config is not None else TqcConfig()
        cfg = self.config
        self.entropy_target = (
            float(cfg.entropy_target)
            if cfg.entropy_target is not None
            else -float(act_dim)
        )
        seq = np.random.SeedSequence(seed)
        init_rng, self._noise_rng, self._train_rng = (
            np.random.default_rng(s) for s in seq.spawn(3)
        )
        hidden = cfg.hidden_sizes
        self.actor_net = Mlp((obs_dim, *hidden, 2 * act_dim))
        self.critic_net = Mlp((obs_dim + act_dim, *hidden, cfg.quantiles_per_critic))
        self.actor_params = init_mlp_params(self.actor_net, init_rng)
        self.critic_params = init_mlp_params(
            self.critic_net, init_rng, ensemble=cfg.n_critics
        )
        self.target_params = self.critic_params.copy()
        self.log_alpha = ParameterSet({"log_alpha": np.zeros(())})
        self._actor_adam = AdamState(self.actor_params)
        self._critic_adam = AdamState(self.critic_params)
        self._alpha_adam = AdamState(self.log_alpha)
        self._taus = quantile_fractions(cfg.quantiles_per_critic)
        self.updates = 0

    # -- acting --------------------------------------------------------------

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"]))

    def select_action(
        self, obs: np.ndarray, stochastic: bool = True, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        """Squashed-Gaussian sample, or tanh(mean) when deterministic."""
        mean, log_std = policy_moments(
            self.actor_net, self.actor_params, np.asarray(obs, dtype=np.float64), self.act_dim
        )
        if not stochastic:
            return np.tanh(mean)
        rng = rng if rng is not None else self._noise_rng
        noise = rng.standard_normal(mean.shape)
        return np.tanh(mean + np.exp(log_std) * noise)

    def sample_with_logprob(self, obs: np.ndarray, rng: np.random.Generator):
        """Stochastic actions plus their squashed log-density (plain arrays)."""
        mean, log_std = policy_moments(self.actor_net, self.actor_params, obs, self.act_dim)
        noise = rng.standard_normal(mean.shape)
        std = np.exp(log_std)
        pre_squash = mean + std * noise
        action = np.tanh(pre_squash)
        gauss = -0.5 * noise**2 - log_std - 0.5 * LOG_2PI
        correction = np.log(1.0 - action**2 + SQUASH_EPS)
        logp = np.sum(gauss - correction, axis=-1)
        return action, logp

    def actor_snapshot(self) -> "ActorSnapshot":
        """Read-only policy copy for use by rollout workers."""
        return ActorSnapshot(
            self.actor_net,
            {name: arr.copy() for name, arr in self.actor_params.items()},
            self.act_dim,
        )

    # -- critics ---------------------------------------------------------------

    def critic_quantiles(self, params: ParameterSet, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        """Quantile atoms (n_critics, batch, M) for a batch of state-actions."""
        inp = np.concatenate([obs, act], axis=-1)
        return forward(self.critic_net, params, inp)

    # -- training ----------------------------------------------------------------

    def _td_targets(self, rew, next_obs, term):
        cfg = self.config
        next_act, next_logp = self.sample_with_logprob(next_obs, self._train_rng)
        z_next = self.critic_quantiles(self.target_params, next_obs, next_act)
        batch = z_next.shape[1]
        pooled = np.sort(
            np.swapaxes(z_next, 0, 1).reshape(batch, -1), axis=1
        )
        keep = (cfg.quantiles_per_critic - cfg.dropped_per_critic) * cfg.n_critics
        kept = pooled[:, :keep]
        cont = (1.0 - term)[:, None] * cfg.discount
        return rew[:, None] + cont * (kept - self.alpha * next_logp[:, None])

    def _critic_update(self, obs, act, targets) -> float:
        tensors = {
            name: Tensor(arr, requires_grad=True)
            for name, arr in self.critic_params.items()
        }
        inp = Tensor(np.concatenate([obs, act], axis=-1))
        preds = forward_tape(self.critic_net, tensors, inp)
        loss_value, grad = kernels.quantile_huber_loss_grad(
            np.ascontiguousarray(preds.data), np.ascontiguousarray(targets), self._taus
        )
        loss = custom_unary(preds, np.float64(loss_value), lambda g: g * grad)
        loss.backward()
        grads = {name: t.grad for name, t in tensors.items()}
        adam_update(
            self.critic_params, grads, self._critic_adam, self.config.learning_rate
        )
        return float(loss_value)

    def _actor_update(self, obs) -> tuple[float, np.ndarray]:
        tensors = {
            name: Tensor(arr, requires_grad=True)
            for name, arr in self.actor_params.items()
        }
        obs_t = Tensor(obs)
        out = forward_tape(self.actor_net, tensors, obs_t)
        mean = out[:, : self.act_dim]
        log_std = out[:, self.act_dim :].clip(LOG_STD_MIN, LOG_STD_MAX)
        std = log_std.exp()
        noise = self._train_rng.standard_normal((obs.shape[0], self.act_dim))
        pre_squash = mean + std * noise
        action = pre_squash.tanh()
        u = (pre_squash - mean) / std
        gauss = u.square() * (-0.5) - log_std - 0.5 * LOG_2PI
        correction = (1.0 + SQUASH_EPS - action.square()).log()
        logp = (gauss - correction).sum(axis=1)
        # critic parameters enter as constants: gradient flows via the action
        critic_consts = {
            name: Tensor(arr) for name, arr in self.critic_params.items()
        }
        q_in = concat([obs_t, action], axis=1)
        q_atoms = forward_tape(self.critic_net, critic_consts, q_in)
        q_mean = q_atoms.mean(axis=(0, 2))
        actor_loss = (logp * self.alpha - q_mean).mean()
        actor_loss.backward()
        grads = {name: t.grad for name, t in tensors.items()}
        adam_update(
            self.actor_params, grads, self._actor_adam, self.config.learning_rate
        )
        return float(actor_loss.data), logp.data

    def _alpha_update(self, logp: np.ndarray) -> None:
        grad = -float(np.mean(logp + self.entropy_target))
        adam_update(
            self.log_alpha,
            {"log_alpha": np.asarray(grad)},
            self._alpha_adam,
            self.config.learning_rate,
        )

    def _soft_update(self) -> None:
        tau = self.config.target_smoothing
        for name, target in self.target_params.items():
            target *= 1.0 - tau
            target += tau * self.critic_params[name]

    def train_step(self, buffer: ReplayBuffer) -> dict | None:
        """One critic, actor and temperature update plus the target blend."""
        cfg = self.config
        if len(buffer) < cfg.batch_size:
            return None
        obs, act, rew, next_obs, term = buffer.sample(cfg.batch_size, self._train_rng)
        targets = self._td_targets(rew, next_obs, term)
        critic_loss = self._critic_update(obs, act, targets)
        actor_loss, logp = self._actor_update(obs)
        self._alpha_update(logp)
        self._soft_update()
        self.updates += 1
        return {
            "update": self.updates,
            "critic_loss": critic_loss,
            "actor_loss": actor_loss,
            "alpha": self.alpha,
        }

    # -- persistence ---------------------------------------------------------------

    def checkpoint_arrays(self) -> dict:
        arrays = {}
        for name, arr in self.actor_params.items():
            arrays[f"actor/{name}"] = arr
        for name, arr in self.critic_params.items():
            arrays[f"critics/{name}"] = arr
        for name, arr in self.target_params.items():
            arrays[f"targets/{name}"] = arr
        arrays["log_alpha"] = self.log_alpha["log_alpha"]
        return arrays

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "updates": self.updates,
            "config": {
                "n_critics": self.config.n_critics,
                "quantiles_per_critic": self.config.quantiles_per_critic,
                "dropped_per_critic": self.config.dropped_per_critic,
                "discount": self.config.discount,
                "target_smoothing": self.config.target_smoothing,
                "learning_rate": self.config.learning_rate,
                "batch_size": self.config.batch_size,
                "entropy_target": self.entropy_target,
                "replay_capacity": self.config.replay_capacity,
                "warmup_steps": self.config.warmup_steps,
                "hidden_sizes": list(self.config.hidden_sizes),
                "train_freq": self.config.train_freq,
            },
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.checkpoint_arrays(), meta)

    @classmethod
    def load(cls, path, seed: int = 0) -> "TqcAgent":
        arrays, meta = load_checkpoint(path)
        config = TqcConfig(**{**meta["config"], "hidden_sizes": tuple(meta["config"]["hidden_sizes"])})
        agent = cls(meta["obs_dim"], meta["act_dim"], config, seed=seed)
        for name in agent.actor_params.names():
            agent.actor_params[name] = arrays[f"actor/{name}"]
        for name in agent.critic_params.names():
            agent.critic_params[name] = arrays[f"critics/{name}"]
            agent.target_params[name] = arrays[f"targets/{name}"]
        agent.log_alpha["log_alpha"] = arrays["log_alpha"].reshape(())
        agent.updates = int(meta.get("updates", 0))
        return agent


# ---------------------------------------------------------------------------
# baseline policies
# ---------------------------------------------------------------------------

class ScriptedGraspPolicy:
    """Deterministic reach-descend-grasp-lift controller.

    Moves are capped below the safety-rated reduced speed so a clean run
    produces no velocity violations; with an obstacle present the controller
    climbs over it before traversing.
    """

    def __init__(
        self,
        action_scale: float = 0.02,
        dt: float = 0.05,
        grasp_radius: float = 0.01,
        obstacle_half_extents=(0.025, 0.20, 0.025),
        eef_radius: float = 0.02,
    ):
        self.action_scale = action_scale
        self.step_cap = 0.96 * 0.25 * dt  # stay under the reduced-speed limit
        self.grasp_radius = grasp_radius
        self.obstacle_half = np.asarray(obstacle_half_extents, dtype=np.float64)
        self.eef_radius = eef_radius

    def __call__(self, obs) -> np.ndarray:
        if obs.grasped:
            delta = np.array([0.0, 0.0, self.step_cap])
            return self._command(delta, close=True)
        eef = obs.eef_position
        cube = obs.cube_position
        target = cube.copy()
        horizontal = float(np.hypot(cube[0] - eef[0], cube[1] - eef[1]))
        if horizontal > 0.004:
            # cruise above the cube before descending onto it
            target[2] = cube[2] + 0.08
        obstacle = obs.obstacle_position
        if np.any(obstacle != 0.0):
            safe_z = obstacle[2] + self.obstacle_half[2] + self.eef_radius + 0.05
            blocking = (
                eef[0] < obstacle[0] + self.obstacle_half[0] + 0.03
                and cube[0] > obstacle[0]
            )
            if blocking:
                if eef[2] < safe_z - 0.005:
                    target = np.array([eef[0], eef[1], safe_z])
                else:
                    target = np.array([cube[0], cube[1], max(safe_z, cube[2] + 0.08)])
        delta = target - eef
        close = float(np.linalg.norm(cube - eef)) <= 0.8 * self.grasp_radius
        return self._command(delta, close)

    def _command(self, delta: np.ndarray, close: bool) -> np.ndarray:
        norm = float(np.linalg.norm(delta))
        if norm > self.step_cap:
            delta = delta * (self.step_cap / norm)
        act = np.clip(delta / self.action_scale, -1.0, 1.0)
        return np.array([act[0], act[1], act[2], 1.0 if close else -1.0])


def scripted_policy(obs) -> np.ndarray:
    """Default-configured scripted controller (module-level convenience)."""
    return ScriptedGraspPolicy()(obs)


class RandomPolicy:
    """Uniform actions in [-1, 1]^4."""

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)

    def __call__(self, obs) -> np.ndarray:
        return self._rng.uniform(-1.0, 1.0, size=4)
