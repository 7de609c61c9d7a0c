"""TQC agent: truncation, quantile loss, actor density, replay, training."""

import numpy as np
import pytest
from scipy import stats

from safegrasp.autodiff import Tensor
from safegrasp import kernels
from safegrasp.env import GraspEnv
from safegrasp.nn import forward, forward_tape
from safegrasp.tqc import (
    ActorSnapshot,
    RandomPolicy,
    ReplayBuffer,
    ScriptedGraspPolicy,
    TqcAgent,
    TqcConfig,
    policy_moments,
    quantile_fractions,
    quantile_huber_loss,
    truncated_target,
)


def small_config(**overrides) -> TqcConfig:
    base = dict(
        batch_size=32,
        replay_capacity=4096,
        hidden_sizes=(16, 16),
        warmup_steps=0,
        quantiles_per_critic=5,
        dropped_per_critic=1,
    )
    base.update(overrides)
    return TqcConfig(**base)


def fill_buffer(buf: ReplayBuffer, rng, n, obs_dim=17, act_dim=4, terminated=False):
    for _ in range(n):
        buf.add(
            rng.normal(size=obs_dim),
            rng.uniform(-1, 1, act_dim),
            float(rng.normal()),
            rng.normal(size=obs_dim),
            terminated,
        )


class TestTruncatedTarget:
    def test_no_truncation_keeps_all_atoms(self):
        atoms = np.array([[3.0, 1.0, 2.0], [0.5, 4.0, -1.0]])
        out = truncated_target(atoms, reward=0.0, terminated=False, discount=1.0,
                               dropped_per_critic=0)
        assert sorted(out.tolist()) == sorted(atoms.reshape(-1).tolist())
        assert np.all(np.diff(out) >= 0.0)

    def test_documented_sort_and_drop(self):
        atoms = np.array([[1.0, 3.0, 5.0, 7.0], [2.0, 4.0, 6.0, 8.0]])
        out = truncated_target(atoms, 0.0, False, 1.0, dropped_per_critic=1)
        assert np.array_equal(out, np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))

    def test_degenerate_distribution(self):
        atoms = np.full((3, 4), 2.5)
        out = truncated_target(atoms, reward=0.7, terminated=False, discount=0.9,
                               dropped_per_critic=2)
        assert out.shape == (6,)
        assert np.allclose(out, 0.7 + 0.9 * 2.5)

    def test_terminated_removes_bootstrap(self):
        atoms = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = truncated_target(atoms, reward=-1.0, terminated=True, discount=0.99,
                               dropped_per_critic=0)
        assert np.allclose(out, -1.0)

    def test_entropy_term_enters_bootstrap(self):
        atoms = np.array([[2.0, 2.0]])
        out = truncated_target(atoms, 0.0, False, 0.5, 0, entropy_term=1.0)
        assert np.allclose(out, 0.5 * (2.0 - 1.0))

    def test_invalid_drop_count(self):
        with pytest.raises(ValueError):
            truncated_target(np.ones((2, 3)), 0.0, False, 0.9, dropped_per_critic=3)

    def test_matches_brute_force_oracle_1000_cases(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            n = int(rng.integers(1, 6))
            m = int(rng.integers(1, 9))
            d = int(rng.integers(0, m))
            atoms = rng.normal(size=(n, m)) * 10.0
            reward = float(rng.normal())
            terminated = bool(rng.integers(2))
            discount = float(rng.uniform(0.1, 1.0))
            entropy = float(rng.normal(scale=0.3))
            out = truncated_target(atoms, reward, terminated, discount, d, entropy)
            # oracle: flat sort, slice, affine map
            kept = sorted(atoms.reshape(-1).tolist())[: (m - d) * n]
            cont = 0.0 if terminated else discount
            expected = [reward + cont * (a - entropy) for a in kept]
            assert out.shape == ((m - d) * n,)
            assert np.allclose(out, expected, atol=1e-12)

    def test_monotonicity_in_dropped_atoms(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(2, 8))
            atoms = rng.normal(size=(n, m))
            means = []
            for d in range(m):
                out = truncated_target(atoms, 0.0, False, 1.0, d)
                means.append(out.mean())
            assert all(means[i + 1] <= means[i] + 1e-12 for i in range(m - 1))


class TestQuantileHuberLoss:
    def test_zero_when_predictions_equal_targets(self):
        # the loss is pairwise, so exact zero needs every pair to agree
        assert quantile_huber_loss([0.7], [0.7]) == pytest.approx(0.0, abs=1e-15)
        constant = np.full(4, -1.3)
        assert quantile_huber_loss(constant, constant) == pytest.approx(0.0, abs=1e-15)

    def test_single_pair_linear_branch(self):
        assert quantile_huber_loss([0.0], [2.0], [0.5]) == pytest.approx(0.75, abs=1e-12)

    def test_asymmetry_scaling_in_linear_regime(self):
        tau = 0.2
        up = quantile_huber_loss([0.0], [3.0], [tau])
        down = quantile_huber_loss([0.0], [-3.0], [tau])
        assert down / up == pytest.approx((1.0 - tau) / tau, rel=1e-12)

    def test_rejects_bad_fractions(self):
        with pytest.raises(ValueError):
            quantile_huber_loss([0.0, 1.0], [1.0], [0.7, 0.3])
        with pytest.raises(ValueError):
            quantile_huber_loss([0.0], [1.0], [1.0])

    def test_matches_brute_force_oracle_1000_cases(self):
        rng = np.random.default_rng(321)
        for _ in range(1000):
            m = int(rng.integers(1, 8))
            k = int(rng.integers(1, 8))
            preds = rng.normal(size=m) * 3.0
            targets = rng.normal(size=k) * 3.0
            taus = np.sort(rng.uniform(0.01, 0.99, size=m))
            if np.any(np.diff(taus) <= 0):
                continue
            got = quantile_huber_loss(preds, targets, taus)
            # oracle: explicit double loop over pairs
            total = 0.0
            for i in range(m):
                for j in range(k):
                    u = targets[j] - preds[i]
                    weight = (1.0 - taus[i]) if u < 0.0 else taus[i]
                    huber = 0.5 * u * u if abs(u) <= 1.0 else abs(u) - 0.5
                    total += weight * huber
            assert got == pytest.approx(total / (m * k), abs=1e-10)

    def test_kernel_variants_agree(self):
        rng = np.random.default_rng(11)
        preds = rng.normal(size=(2, 16, 5))
        targets = rng.normal(size=(16, 8))
        taus = quantile_fractions(5)
        loss_a, grad_a = kernels.BENCH_PAIRS["quantile_huber_loss_grad"][0](
            preds, targets, taus
        )
        loss_b, grad_b = kernels.BENCH_PAIRS["quantile_huber_loss_grad"][1](
            preds, targets, taus
        )
        assert loss_a == pytest.approx(loss_b, rel=1e-12, abs=1e-13)
        assert np.allclose(grad_a, grad_b, atol=1e-13)


class TestSelectAction:
    def test_deterministic_calls_identical(self):
        agent = TqcAgent(6, 3, small_config(), seed=5)
        obs = np.linspace(-1, 1, 6)
        a = agent.select_action(obs, stochastic=False)
        b = agent.select_action(obs, stochastic=False)
        assert np.array_equal(a, b)

    def test_all_actions_bounded_10k_draws(self):
        agent = TqcAgent(6, 4, small_config(), seed=6)
        rng = np.random.default_rng(0)
        obs = rng.normal(size=(10_000, 6))
        actions = agent.select_action(obs, stochastic=True, rng=rng)
        assert actions.shape == (10_000, 4)
        assert np.all(actions >= -1.0) and np.all(actions <= 1.0)

    def test_log_density_matches_quadrature_oracle(self):
        """The squashed density integrates to 1 and matches Gaussian masses."""
        agent = TqcAgent(3, 1, small_config(), seed=7)
        obs = np.array([0.2, -0.4, 1.0])
        mean, log_std = policy_moments(agent.actor_net, agent.actor_params, obs, 1)
        mu, sigma = float(mean[0]), float(np.exp(log_std[0]))

        eps_grid = np.linspace(-8.0, 8.0, 60_001)

        class GridNoise:
            def __init__(self, grid):
                self.grid = grid

            def standard_normal(self, shape):
                return self.grid.reshape(shape)

        batch_obs = np.tile(obs, (eps_grid.size, 1))
        actions, logp = agent.sample_with_logprob(batch_obs, GridNoise(eps_grid))
        a = actions[:, 0]
        density = np.exp(logp)
        total_mass = np.trapezoid(density, a)
        assert total_mass == pytest.approx(1.0, abs=1e-3)
        # interval masses agree with the exact pre-squash Gaussian
        for lo, hi in [(-0.5, 0.5), (-0.9, 0.2), (0.1, 0.8)]:
            sel = (a >= lo) & (a <= hi)
            mass = np.trapezoid(density[sel], a[sel])
            exact = stats.norm.cdf(
                (np.arctanh(hi) - mu) / sigma
            ) - stats.norm.cdf((np.arctanh(lo) - mu) / sigma)
            assert mass == pytest.approx(exact, abs=1e-3)

    def test_snapshot_matches_agent(self):
        agent = TqcAgent(5, 2, small_config(), seed=8)
        snap = agent.actor_snapshot()
        obs = np.linspace(-0.5, 0.5, 5)
        assert np.array_equal(
            agent.select_action(obs, stochastic=False),
            snap.select_action(obs, stochastic=False),
        )


class TestReplayBuffer:
    def test_sampling_reproducible_with_seed(self):
        buf = ReplayBuffer(4, 2, 128)
        rng = np.random.default_rng(3)
        fill_buffer(buf, rng, 50, obs_dim=4, act_dim=2)
        a = buf.sample(16, np.random.default_rng(42))
        b = buf.sample(16, np.random.default_rng(42))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_uniformity_chi_square(self):
        buf = ReplayBuffer(1, 1, 16)
        for i in range(10):
            buf.add([float(i)], [0.0], 0.0, [0.0], False)
        rng = np.random.default_rng(10)
        obs, *_ = buf.sample(10_000, rng)
        counts = np.bincount(obs[:, 0].astype(int), minlength=10)
        _, p_value = stats.chisquare(counts)
        assert p_value > 0.01

    def test_ring_overwrite(self):
        buf = ReplayBuffer(1, 1, 4)
        for i in range(6):
            buf.add([float(i)], [0.0], 0.0, [0.0], False)
        assert len(buf) == 4
        obs, *_ = buf.sample(100, np.random.default_rng(0))
        assert set(obs[:, 0].astype(int)) <= {2, 3, 4, 5}

    def test_empty_sample_rejected(self):
        buf = ReplayBuffer(1, 1, 4)
        with pytest.raises(ValueError):
            buf.sample(1, np.random.default_rng(0))


class TestTrainStep:
    def test_insufficient_buffer_skips(self):
        agent = TqcAgent(4, 2, small_config(batch_size=64), seed=1)
        buf = ReplayBuffer(4, 2, 128)
        fill_buffer(buf, np.random.default_rng(0), 10, obs_dim=4, act_dim=2)
        assert agent.train_step(buf) is None

    def test_full_smoothing_copies_online_to_target(self):
        agent = TqcAgent(4, 2, small_config(target_smoothing=1.0), seed=2)
        buf = ReplayBuffer(4, 2, 256)
        fill_buffer(buf, np.random.default_rng(1), 64, obs_dim=4, act_dim=2)
        agent.train_step(buf)
        for name in agent.critic_params.names():
            assert np.array_equal(agent.target_params[name], agent.critic_params[name])

    def test_critic_loss_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        agent = TqcAgent(3, 2, small_config(hidden_sizes=(8, 8)), seed=3)
        taus = quantile_fractions(agent.config.quantiles_per_critic)
        # kink-clear batch keeps the finite-difference oracle valid
        for _ in range(100):
            obs = rng.normal(size=(6, 3))
            act = rng.uniform(-1, 1, size=(6, 2))
            inp = np.concatenate([obs, act], axis=1)
            clear = True
            h = inp
            for i in range(agent.critic_net.n_layers - 1):
                h = h @ agent.critic_params[f"w{i}"] + agent.critic_params[f"b{i}"]
                if np.min(np.abs(h)) < 1e-3:
                    clear = False
                h = np.maximum(h, 0.0)
            if clear:
                break
        targets = rng.normal(size=(6, 8))

        def loss_value():
            preds = agent.critic_quantiles(agent.critic_params, obs, act)
            loss, _ = kernels.quantile_huber_loss_grad(
                np.ascontiguousarray(preds), targets, taus
            )
            return float(loss)

        tensors = {
            name: Tensor(arr, requires_grad=True)
            for name, arr in agent.critic_params.items()
        }
        from safegrasp.autodiff import custom_unary

        preds_t = forward_tape(agent.critic_net, tensors, Tensor(inp))
        loss, grad = kernels.quantile_huber_loss_grad(
            np.ascontiguousarray(preds_t.data), targets, taus
        )
        loss_t = custom_unary(preds_t, np.float64(loss), lambda g: g * grad)
        loss_t.backward()

        h = 1e-5
        worst = 0.0
        for name, tensor in tensors.items():
            arr = agent.critic_params[name]
            flat = arr.reshape(-1)
            analytic = tensor.grad.reshape(-1)
            idx = np.random.default_rng(6).choice(
                flat.size, size=min(40, flat.size), replace=False
            )
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                hi = loss_value()
                flat[i] = orig - h
                lo = loss_value()
                flat[i] = orig
                numeric = (hi - lo) / (2 * h)
                err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
        assert worst < 1e-4

    def test_gradient_check_holds_at_default_architectures(self):
        """Finite-difference spot check on the full-width actor and critics."""
        from test_nn import draw_kink_clear_input

        agent = TqcAgent(17, 4, TqcConfig(replay_capacity=1), seed=12)
        rng = np.random.default_rng(13)
        h = 1e-5
        for net, params in (
            (agent.actor_net, agent.actor_params),
            (agent.critic_net, agent.critic_params),
        ):
            x = draw_kink_clear_input(net, params, rng, batch=2)
            target = rng.normal(size=(2, net.sizes[-1]))
            from safegrasp.nn import gradients

            grads = gradients(
                net, params, x, lambda out: (out - target).square().mean()
            )

            def loss_value():
                out = forward(net, params, x)
                return float(np.mean((out - target) ** 2))

            for name in params.names():
                arr = params[name]
                flat = arr.reshape(-1)
                analytic = grads[name].reshape(-1)
                idx = rng.choice(flat.size, size=min(60, flat.size), replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    hi = loss_value()
                    flat[i] = orig - h
                    lo = loss_value()
                    flat[i] = orig
                    numeric = (hi - lo) / (2 * h)
                    assert abs(analytic[i] - numeric) / max(1.0, abs(numeric)) < 1e-4

    def test_bandit_critic_converges_to_reward(self):
        config = small_config(
            batch_size=64,
            hidden_sizes=(16, 16),
            quantiles_per_critic=5,
            dropped_per_critic=1,
            learning_rate=1e-3,
        )
        agent = TqcAgent(2, 1, config, seed=4)
        buf = ReplayBuffer(2, 1, 2048)
        rng = np.random.default_rng(2)
        obs = np.zeros(2)
        for _ in range(512):
            buf.add(obs, rng.uniform(-1, 1, 1), 1.0, obs, True)
        for _ in range(5000):
            agent.train_step(buf)
        atoms = agent.critic_quantiles(
            agent.critic_params, obs[None, :], np.array([[0.0]])
        )
        assert float(atoms.mean()) == pytest.approx(1.0, abs=0.05)

    def test_training_arithmetic_stays_finite_10k_updates(self):
        config = small_config(batch_size=32, hidden_sizes=(12, 12))
        agent = TqcAgent(6, 2, config, seed=9)
        buf = ReplayBuffer(6, 2, 4096)
        rng = np.random.default_rng(3)
        fill_buffer(buf, rng, 600, obs_dim=6, act_dim=2)
        for i in range(10_000):
            diag = agent.train_step(buf)
            assert np.isfinite(diag["critic_loss"])
            assert np.isfinite(diag["actor_loss"])
            assert np.isfinite(diag["alpha"])
        for params in (agent.actor_params, agent.critic_params, agent.target_params):
            for name, arr in params.items():
                assert np.all(np.isfinite(arr))

    def test_save_load_round_trip(self, tmp_path):
        agent = TqcAgent(6, 3, small_config(), seed=10)
        buf = ReplayBuffer(6, 3, 512)
        fill_buffer(buf, np.random.default_rng(4), 64, obs_dim=6, act_dim=3)
        for _ in range(5):
            agent.train_step(buf)
        path = tmp_path / "agent.ckpt"
        agent.save(path)
        clone = TqcAgent.load(path)
        obs = np.linspace(-1, 1, 6)
        assert np.array_equal(
            agent.select_action(obs, stochastic=False),
            clone.select_action(obs, stochastic=False),
        )
        assert clone.updates == agent.updates


class TestPolicies:
    def test_scripted_moves_toward_cube(self, env):
        obs = env.reset(seed=40)
        # place a synthetic observation with the cube 0.1 m away on +x
        from safegrasp.env import Observation

        obs = Observation(
            eef_position=np.array([0.4, 0.0, 0.1]),
            eef_velocity=np.zeros(3),
            gripper_aperture=1.0,
            cube_position=np.array([0.5, 0.0, 0.1]),
            cube_relative=np.array([0.1, 0.0, 0.0]),
            obstacle_position=np.zeros(3),
            grasped=False,
        )
        action = ScriptedGraspPolicy()(obs)
        assert action[0] > 0.0
        assert action[3] == -1.0  # too far to close

    def test_scripted_closes_within_grasp_radius(self):
        from safegrasp.env import Observation

        obs = Observation(
            eef_position=np.array([0.5, 0.0, 0.1]),
            eef_velocity=np.zeros(3),
            gripper_aperture=1.0,
            cube_position=np.array([0.5, 0.0, 0.105]),
            cube_relative=np.array([0.0, 0.0, 0.005]),
            obstacle_position=np.zeros(3),
            grasped=False,
        )
        action = ScriptedGraspPolicy()(obs)
        assert action[3] == 1.0

    def test_scripted_full_episode_succeeds(self, env):
        policy = ScriptedGraspPolicy()
        obs = env.reset(seed=41)
        result = None
        for _ in range(200):
            result = env.step(policy(obs))
            obs = result.observation
            if result.terminated or result.truncated:
                break
        assert result.terminated
        assert result.events.lift_success

    def test_scripted_obstacle_episode_avoids_env_collision(self, env):
        policy = ScriptedGraspPolicy()
        obs = env.reset(seed=42, scenario="obstacle")
        collided = False
        for _ in range(200):
            result = env.step(policy(obs))
            obs = result.observation
            collided = collided or result.events.collision_env
            if result.terminated or result.truncated:
                break
        assert not collided

    def test_random_policy_seeded(self):
        a = RandomPolicy(seed=1)
        b = RandomPolicy(seed=1)
        assert np.array_equal(a(None), b(None))
        assert np.all(np.abs(a(None)) <= 1.0)


class TestConfigValidation:
    def test_drop_count_bounds(self):
        with pytest.raises(ValueError):
            TqcConfig(quantiles_per_critic=5, dropped_per_critic=5)

    def test_discount_bounds(self):
        with pytest.raises(ValueError):
            TqcConfig(discount=1.0)

    def test_smoothing_bounds(self):
        with pytest.raises(ValueError):
            TqcConfig(target_smoothing=0.0)
