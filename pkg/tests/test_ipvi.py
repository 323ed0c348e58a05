import time
from dataclasses import dataclass
from unittest.mock import patch

import numpy as np
import pytest
from scipy import integrate, linalg, stats

from apps.baselines import exact_log_evidence, kl_gaussian, titsias_optimal_q
from apps.dgp import InducingSample, build, data_fit
from apps.gpcore import KernelHyper, Likelihood, jitter_chol, rbf_ard
from apps.ipvi import (
    BRDConfig,
    DGPProblem,
    Discriminator,
    GameState,
    Generator,
    LayerShape,
    brd_train,
    discriminator_payoff,
    discriminator_step,
    elbo_estimate,
    generate,
    param_count,
    player2_payoff,
    posterior_blocks,
    prior_blocks,
    sample_posterior,
    sample_prior,
)
from apps.numcore import Rng, Tape, Tensor, bind
from apps.numcore.optim import Ascent
from apps.shared.errors import ConfigError, TrainingAbort
from tests.conftest import check_grad, sine_data


@dataclass
class Options:
    num_layers: int = 1
    num_inducing: int = 5
    hidden_width: int | None = None
    seed: int = 0


def _problem(num_layers: int = 1, n: int = 20, m: int = 5, **kwargs) -> DGPProblem:
    x, y = sine_data(n=n, d=1)
    model = build(Options(num_layers, m), x, 1, Likelihood("gaussian"))
    return DGPProblem(model, x, y, **kwargs)


def _state(problem, rng=None, config=None, **kwargs) -> GameState:
    config = config or BRDConfig(num_samples=4, max_iters=3)
    return GameState.initialize(problem, config, rng or Rng(0), noise_dim=2, **kwargs)


class ShiftedGaussianProblem:
    """One scalar inducing variable with prior N(0, 1)."""

    layers = [LayerShape(d_in=1, d_out=1, num_inducing=1)]

    def inducing_inputs(self):
        return [np.zeros((1, 1))]

    def prior_blocks(self, count, rng):
        return [rng.normal((count, 1, 1))]


def _shifted_generator() -> tuple[Generator, dict[str, np.ndarray]]:
    """Untied linear generator with u = ε + 1."""
    generator = Generator(1, ShiftedGaussianProblem.layers, tied=False, hidden=())
    phi = {"gen.layer0.W0": np.ones((1, 1, 1)), "gen.layer0.b0": np.ones((1, 1))}
    return generator, phi


def _gaussian_task(noise: float = 2.0, m: int = 5) -> DGPProblem:
    """Fixed-hyper one-layer regression with inducing inputs on an even grid."""
    x, y = sine_data(n=30, d=1, seed=3)
    model = build(Options(num_inducing=m), x, 1, Likelihood("gaussian"))
    model.params["layer0.Z"] = np.linspace(-2.0, 2.0, m).reshape(-1, 1)
    model.params["layer0.log_lengthscales"] = np.full_like(
        model.params["layer0.log_lengthscales"], np.log(0.5)
    )
    model.params["likelihood.log_noise_variance"] = np.full_like(
        model.params["likelihood.log_noise_variance"], np.log(noise)
    )
    return DGPProblem(model, x, y, train_hypers=False, train_inducing=False)


def _optimal_q(problem: DGPProblem) -> tuple[np.ndarray, np.ndarray]:
    model = problem.model
    hyper = KernelHyper.from_params(bind(model.params), "layer0.")
    noise = float(np.exp(model.params["likelihood.log_noise_variance"]))
    residual = problem.y - problem.x @ model.layers[0].w_mean
    return titsias_optimal_q(problem.x, residual, model.params["layer0.Z"], hyper, noise)


def _prior_cov(problem: DGPProblem) -> np.ndarray:
    z = problem.model.params["layer0.Z"]
    hyper = KernelHyper.from_params(bind(problem.model.params), "layer0.")
    chol = jitter_chol(rbf_ard(z, z, hyper)).factor.value
    return chol @ chol.T


def _linear_q_state(problem: DGPProblem, m_star: np.ndarray, s_star: np.ndarray) -> GameState:
    """Untied linear generator producing exactly N(m*, S*) and a zero quadratic discriminator."""
    size = len(m_star)
    state = GameState.initialize(
        problem, BRDConfig(), Rng(0), noise_dim=size, tied=False, hidden=(), disc_kind="quadratic"
    )
    state.phi = {
        "gen.layer0.W0": linalg.cholesky(s_star, lower=True)[:, :, None].copy(),
        "gen.layer0.b0": m_star.copy(),
    }
    return state


def _log_ratio_params(mean: np.ndarray, s: np.ndarray, k: np.ndarray) -> dict[str, np.ndarray]:
    """Quadratic discriminator weights with T(u) = log N(u; mean, s) − log N(u; 0, k)."""
    s_inv, k_inv = np.linalg.inv(s), np.linalg.inv(k)
    log_det_ratio = np.linalg.slogdet(k)[1] - np.linalg.slogdet(s)[1]
    return {
        "disc.layer0.P": s_inv - k_inv,
        "disc.layer0.b": s_inv @ mean,
        "disc.layer0.c": np.array([-0.5 * mean @ s_inv @ mean + 0.5 * log_det_ratio]),
    }


class TestGenerator:
    """Test the inducing-output generator"""

    def test_deterministic_map(self):
        """Test identical noise gives identical samples"""
        problem = _problem(num_layers=2)
        state = _state(problem)
        z_all = problem.inducing_inputs()
        eps = np.array([0.3, -1.2])
        a = generate(state.generator, bind(state.phi), eps, z_all)
        b = generate(state.generator, bind(state.phi), eps.copy(), z_all)
        for ua, ub in zip(a.values(), b.values()):
            np.testing.assert_array_equal(ua, ub)

    def test_tying_equivariance(self):
        """Test permuting inducing inputs permutes generated rows"""
        problem = _problem()
        state = _state(problem)
        z = problem.inducing_inputs()[0]
        perm = np.array([3, 0, 4, 1, 2])
        eps = np.array([0.5, 0.1])
        u = generate(state.generator, bind(state.phi), eps, [z]).values()[0]
        u_perm = generate(state.generator, bind(state.phi), eps, [z[perm]]).values()[0]
        np.testing.assert_allclose(u_perm, u[perm], rtol=1e-14)

    def test_tied_size_independent_of_m(self):
        """Test tied parameter counts do not depend on M"""
        small = Generator(3, [LayerShape(2, 1, 8)]).init_params(Rng(0))
        large = Generator(3, [LayerShape(2, 1, 128)]).init_params(Rng(0))
        assert param_count(small) == param_count(large)

    def test_untied_size_grows_with_m(self):
        """Test untied parameter counts scale with M"""
        small = Generator(3, [LayerShape(2, 1, 8)], tied=False).init_params(Rng(0))
        large = Generator(3, [LayerShape(2, 1, 16)], tied=False).init_params(Rng(0))
        assert param_count(large) == 2 * param_count(small)

    def test_init_scale(self):
        """Test weights are initialized with std 1/√fan_in and zero biases"""
        params = Generator(40, [LayerShape(60, 1, 4)], hidden=(200,)).init_params(Rng(1))
        assert params["gen.layer0.W0"].std() == pytest.approx(1.0 / 10.0, rel=0.05)
        np.testing.assert_array_equal(params["gen.layer0.b0"], 0.0)

    def test_batch_matches_sequential(self):
        """Test one stacked pass equals K separate generate calls"""
        problem = _problem(num_layers=2)
        state = _state(problem)
        z_all = problem.inducing_inputs()
        eps = Rng(3).normal((4, 2))
        stacked = state.generator.generate_batch(bind(state.phi), eps, z_all)
        for k in range(4):
            single = generate(state.generator, bind(state.phi), eps[k], z_all)
            for layer, block in enumerate(stacked):
                np.testing.assert_allclose(block.value[k], single[layer].value, rtol=1e-12)


class TestSampling:
    """Test posterior and prior sampling"""

    def test_single_posterior_sample(self):
        """Test K=1 returns one sample"""
        problem = _problem()
        state = _state(problem)
        samples = sample_posterior(state.generator, state.phi, problem.inducing_inputs(), 1, Rng(0))
        assert len(samples) == 1

    def test_posterior_reproducible(self):
        """Test the same seed gives the same sample set"""
        problem = _problem()
        state = _state(problem)
        z_all = problem.inducing_inputs()
        a = sample_posterior(state.generator, state.phi, z_all, 3, Rng(5))
        b = sample_posterior(state.generator, state.phi, z_all, 3, Rng(5))
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.values()[0], sb.values()[0])

    def test_linear_generator_mean(self):
        """Test the sample mean of a linear generator equals its output at ε = 0"""
        problem = _problem()
        state = _state(problem)
        phi = dict(state.phi)
        phi["gen.layer0.b0"] = np.full_like(phi["gen.layer0.b0"], 100.0)
        z_all = problem.inducing_inputs()
        blocks = np.stack(
            [s.values()[0] for s in sample_posterior(state.generator, phi, z_all, 10_000, Rng(6))]
        )
        center = generate(state.generator, bind(phi), np.zeros(2), z_all).values()[0]
        stderr = blocks.std(axis=0, ddof=1) / np.sqrt(len(blocks))
        assert np.all(np.abs(blocks.mean(axis=0) - center) <= 3.5 * stderr + 1e-12)

    def test_prior_covariance(self):
        """Test prior draws of a 3-point layer have covariance K_ZZ"""
        problem = _problem(m=3)
        model = problem.model
        z = model.params["layer0.Z"]
        kzz = rbf_ard(z, z, KernelHyper.from_params(bind(model.params), "layer0.")).value
        draws = prior_blocks(model, 10_000, Rng(7))[0][:, :, 0]
        cov = np.cov(draws, rowvar=False)
        stderr = np.sqrt((np.outer(np.diag(kzz), np.diag(kzz)) + kzz**2) / len(draws))
        assert np.all(np.abs(cov - kzz) <= 4.0 * stderr)

    def test_identity_prior_is_standard_normal(self):
        """Test K_ZZ = I gives standard normal draws"""
        problem = _problem(m=3)
        model = problem.model
        model.params["layer0.Z"] = np.array([[0.0], [100.0], [200.0]])
        draws = sample_prior(model, 2000, Rng(8))
        values = np.concatenate([s.values()[0].ravel() for s in draws])
        assert stats.kstest(values, "norm").pvalue > 0.01

    def test_prior_columns_uncorrelated(self):
        """Test output columns of a wide layer are independent"""
        x, _ = sine_data(n=20, d=2)
        model = build(Options(num_inducing=3), x, 2, Likelihood("gaussian"))
        draws = prior_blocks(model, 10_000, Rng(9))[0]
        cross = np.mean(draws[:, 0, 0] * draws[:, 0, 1])
        assert abs(cross) <= 4.0 / np.sqrt(10_000)


class TestPayoffs:
    """Test the two players' payoffs"""

    def test_zero_discriminator(self):
        """Test T ≡ 0 gives 2·log(1/2)"""
        problem = _problem()
        state = _state(problem)
        psi = {k: np.zeros_like(v) for k, v in state.psi.items()}
        z_all = problem.inducing_inputs()
        prior = problem.prior_blocks(5, Rng(0))
        post = [b for b in prior]
        payoff = discriminator_payoff(state.discriminator, bind(psi), prior, post, z_all)
        assert payoff.item() == pytest.approx(2.0 * np.log(0.5))

    def test_payoff_negative_and_finite(self):
        """Test the discriminator payoff stays finite and below zero for large weights"""
        problem = _problem()
        state = _state(problem)
        z_all = problem.inducing_inputs()
        for seed in range(5):
            psi = {k: 50.0 * Rng(seed).normal(v.shape) for k, v in state.psi.items()}
            prior = problem.prior_blocks(4, Rng(seed))
            post = prior_blocks(problem.model, 4, Rng(seed + 100))
            value = discriminator_payoff(state.discriminator, bind(psi), prior, post, z_all).item()
            assert np.isfinite(value)
            assert value <= 0.0

    def test_discriminator_row_invariance(self):
        """Test permuting rows of U and Z leaves the tied score unchanged"""
        problem = _problem()
        state = _state(problem)
        z = problem.inducing_inputs()[0]
        u = Rng(1).normal((3, 5, 1))
        perm = np.array([4, 2, 0, 3, 1])
        a = state.discriminator.layer_scores(bind(state.psi), 0, Tensor(u), z).value
        b = state.discriminator.layer_scores(bind(state.psi), 0, Tensor(u[:, perm]), z[perm]).value
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_discriminator_payoff_gradient(self):
        """Test the Ψ gradient of the discriminator payoff against finite differences"""
        problem = _problem()
        state = _state(problem)
        z_all = problem.inducing_inputs()
        prior = problem.prior_blocks(6, Rng(1))
        post = prior_blocks(problem.model, 6, Rng(2))
        name = "disc.layer0.W0"

        def payoff(weight):
            psi = {**bind(state.psi), name: weight}
            return discriminator_payoff(state.discriminator, psi, prior, post, z_all)

        check_grad(payoff, state.psi[name], tol=1e-4)

    def test_player2_payoff_gradient(self):
        """Test the Φ gradient of Player 2's payoff with common random numbers"""
        problem = _problem(num_layers=2, m=4)
        state = _state(problem)
        eps = Rng(2).normal((3, 2))
        name = "gen.layer1.W0"

        def payoff(weight):
            phi = {**bind(state.phi), name: weight}
            blocks = state.generator.generate_batch(phi, eps, problem.inducing_inputs())
            return player2_payoff(
                problem,
                state.discriminator,
                bind(state.psi),
                bind(problem.theta_params()),
                blocks,
                problem.full_batch(),
                Rng(3),
            )

        check_grad(payoff, state.phi[name], tol=1e-4)

    def _player2(self, problem, state, psi, theta, rng_seed=3):
        eps = Rng(2).normal((4, 2))
        blocks = state.generator.generate_batch(bind(state.phi), eps, problem.inducing_inputs())
        return player2_payoff(
            problem, state.discriminator, psi, theta, blocks, problem.full_batch(), Rng(rng_seed)
        ), blocks

    def test_zero_discriminator_gives_mean_fit(self):
        """Test Ψ ≡ 0 reduces Player 2's payoff to the mean data fit"""
        problem = _problem()
        state = _state(problem)
        psi = bind({k: np.zeros_like(v) for k, v in state.psi.items()})
        payoff, blocks = self._player2(problem, state, psi, bind(problem.theta_params()))
        rng = Rng(3)
        fits = []
        for k in range(4):
            sample = InducingSample([Tensor(b.value[k]) for b in blocks])
            fits.append(data_fit(problem.model, problem.x, problem.y, sample, 1, rng).item())
        assert payoff.item() == pytest.approx(np.mean(fits), rel=1e-12)

    def test_theta_gradient_ignores_discriminator(self):
        """Test θ gradients are identical for two different discriminators"""
        problem = _problem()
        state = _state(problem)
        grads = []
        for scale in (0.0, 3.0):
            psi = bind({k: scale * np.ones_like(v) for k, v in state.psi.items()})
            tape = Tape()
            theta = tape.watch(problem.theta_params())
            payoff, _ = self._player2(problem, state, psi, theta)
            grads.append(tape.backward(payoff).by_name(theta))
        for name in grads[0]:
            np.testing.assert_allclose(grads[0][name], grads[1][name], rtol=1e-12)


class TestQuadraticDiscriminator:
    """Test the joint quadratic discriminator"""

    def _discriminator(self) -> tuple[Discriminator, dict[str, np.ndarray]]:
        discriminator = Discriminator([LayerShape(1, 2, 4)], kind="quadratic")
        gen = np.random.default_rng(4)
        psi = {
            "disc.layer0.P": gen.standard_normal((4, 4)),
            "disc.layer0.b": gen.standard_normal(4),
            "disc.layer0.c": np.array([0.7]),
        }
        return discriminator, psi

    def test_init_is_zero(self):
        """Test fresh quadratic weights score every draw as zero"""
        discriminator = Discriminator([LayerShape(1, 1, 3)], kind="quadratic")
        psi = discriminator.init_params(Rng(0))
        assert set(psi) == {"disc.layer0.P", "disc.layer0.b", "disc.layer0.c"}
        u = Rng(1).normal((6, 3, 1))
        scores = discriminator.score(bind(psi), [u], [np.zeros((3, 1))]).value
        np.testing.assert_array_equal(scores, 0.0)

    def test_score_matches_quadratic_form(self):
        """Test the score sums −½uᵀPu + bᵀu over output columns plus c"""
        discriminator, psi = self._discriminator()
        u = Rng(2).normal((5, 4, 2))
        expected = 0.7 + sum(
            -0.5 * np.einsum("ki,ij,kj->k", u[:, :, d], psi["disc.layer0.P"], u[:, :, d])
            + u[:, :, d] @ psi["disc.layer0.b"]
            for d in range(2)
        )
        scores = discriminator.score(bind(psi), [u], [np.zeros((4, 1))]).value
        np.testing.assert_allclose(scores, expected, rtol=1e-12)

    def test_represents_gaussian_log_ratio(self):
        """Test analytic weights reproduce log N(m, S) − log N(0, K)"""
        problem = _gaussian_task()
        m_star, s_star = _optimal_q(problem)
        k = _prior_cov(problem)
        state = _linear_q_state(problem, m_star, s_star)
        u = Rng(3).normal((7, 5, 1))
        scores = state.discriminator.score(
            bind(_log_ratio_params(m_star[:, 0], s_star, k)), [u], problem.inducing_inputs()
        ).value
        expected = stats.multivariate_normal(m_star[:, 0], s_star).logpdf(u[:, :, 0])
        expected -= stats.multivariate_normal(np.zeros(5), k).logpdf(u[:, :, 0])
        np.testing.assert_allclose(scores, expected, rtol=1e-8, atol=1e-8)

    def test_payoff_gradient(self):
        """Test the Ψ gradient through P, b and c against finite differences"""
        discriminator, psi = self._discriminator()
        z_all = [np.zeros((4, 1))]
        prior = [0.3 * Rng(5).normal((6, 4, 2))]
        post = [0.3 * Rng(6).normal((6, 4, 2)) + 0.2]
        for name in psi:

            def payoff(value, name=name):
                return discriminator_payoff(
                    discriminator, {**bind(psi), name: value}, prior, post, z_all
                )

            check_grad(payoff, psi[name], tol=1e-4)

    def test_unknown_kind(self):
        """Test an unknown discriminator kind is rejected"""
        with pytest.raises(ConfigError):
            Discriminator([LayerShape(1, 1, 3)], kind="conv")


class TestBRD:
    """Test the best-response dynamics loop"""

    def test_zero_iterations(self):
        """Test a zero budget changes nothing"""
        problem = _problem()
        config = BRDConfig(max_iters=0, num_samples=3)
        state = _state(problem, config=config)
        phi, psi = dict(state.phi), dict(state.psi)
        theta = {k: v.copy() for k, v in problem.theta_params().items()}
        assert brd_train(state, problem, config) == []
        for name, value in phi.items():
            np.testing.assert_array_equal(state.phi[name], value)
        for name, value in psi.items():
            np.testing.assert_array_equal(state.psi[name], value)
        for name, value in theta.items():
            np.testing.assert_array_equal(problem.model.params[name], value)

    def test_records_and_callback(self):
        """Test one record per iteration reaches the callback"""
        problem = _problem()
        config = BRDConfig(max_iters=3, num_samples=3)
        state = _state(problem, config=config)
        seen = []
        records = brd_train(state, problem, config, lambda s, r: seen.append(r["iter"]))
        assert [r["iter"] for r in records] == [1, 2, 3]
        assert seen == [1, 2, 3]
        assert set(records[0]) == {"iter", "player1", "player2", "elbo", "seconds"}
        assert all(np.isfinite(r["player1"]) and np.isfinite(r["player2"]) for r in records)

    def test_same_seed_same_trajectory(self):
        """Test two runs from the same seed are bit-identical"""
        runs = []
        for _ in range(2):
            problem = _problem()
            config = BRDConfig(max_iters=4, num_samples=3)
            state = _state(problem, rng=Rng(21), config=config)
            runs.append([r["player2"] for r in brd_train(state, problem, config)])
        assert runs[0] == runs[1]

    def test_frozen_hypers_stay_fixed(self):
        """Test fixed-hyperparameter mode leaves kernel and Z unchanged"""
        problem = _problem(train_hypers=False, train_inducing=False)
        before = {k: v.copy() for k, v in problem.model.params.items()}
        config = BRDConfig(max_iters=2, num_samples=3)
        state = _state(problem, config=config)
        brd_train(state, problem, config)
        for name, value in before.items():
            np.testing.assert_array_equal(problem.model.params[name], value)

    @patch("apps.ipvi.brd.logger")
    @patch("apps.ipvi.brd.player2_step", return_value=float("nan"))
    def test_nan_aborts(self, mock_step, mock_logger):
        """Test a NaN payoff aborts with the diagnostic record"""
        problem = _problem()
        config = BRDConfig(max_iters=5, num_samples=3)
        state = _state(problem, config=config)
        with pytest.raises(TrainingAbort) as excinfo:
            brd_train(state, problem, config)
        assert excinfo.value.record["iter"] == 1
        mock_logger.error.assert_called_once()
        assert mock_logger.error.call_args[0][0] == "brd_abort"

    def test_invalid_config(self):
        """Test non-positive rates are rejected"""
        with pytest.raises(ConfigError):
            BRDConfig(rate_psi=0.0)

    def test_discriminator_sample_count(self):
        """Test discriminator steps draw K samples unless disc_samples is set"""
        assert BRDConfig(num_samples=7).discriminator_count == 7
        assert BRDConfig(num_samples=7, disc_samples=64).discriminator_count == 64
        with pytest.raises(ConfigError):
            BRDConfig(disc_samples=0)

    def test_elbo_estimate_leaves_state(self):
        """Test ELBO refinement works on a copy of Ψ"""
        problem = _problem()
        config = BRDConfig(max_iters=2, num_samples=3)
        state = _state(problem, config=config)
        brd_train(state, problem, config)
        psi = {k: v.copy() for k, v in state.psi.items()}
        value = elbo_estimate(state, problem, k_eval=5, refine_steps=3, config=config, rng=Rng(4))
        assert np.isfinite(value)
        for name, v in psi.items():
            np.testing.assert_array_equal(state.psi[name], v)

    def test_untied_mode_trains(self):
        """Test the no-tying ablation runs end to end"""
        problem = _problem(num_layers=2)
        config = BRDConfig(max_iters=2, num_samples=3)
        state = _state(problem, config=config, tied=False)
        assert len(brd_train(state, problem, config)) == 2
        assert state.phi["gen.layer0.W0"].ndim == 3


class TestElbo:
    """Test the ELBO identities at the exact Gaussian posterior and log ratio"""

    def _exact_state(self) -> tuple[DGPProblem, GameState, np.ndarray, np.ndarray]:
        problem = _gaussian_task()
        m_star, s_star = _optimal_q(problem)
        state = _linear_q_state(problem, m_star, s_star)
        state.psi = _log_ratio_params(m_star[:, 0], s_star, _prior_cov(problem))
        return problem, state, m_star, s_star

    def test_player2_payoff_is_fit_minus_log_ratio(self):
        """Test Player 2's payoff equals mean data fit minus mean log q/p"""
        problem, state, m_star, s_star = self._exact_state()
        count = 50
        theta = bind(problem.theta_params())
        eps = Rng(2).normal((count, 5))
        blocks = state.generator.generate_batch(bind(state.phi), eps, problem.inducing_inputs())
        payoff = player2_payoff(
            problem,
            state.discriminator,
            bind(state.psi),
            theta,
            blocks,
            problem.full_batch(),
            Rng(3),
        ).item()

        u = blocks[0].value[:, :, 0]
        log_ratio = stats.multivariate_normal(m_star[:, 0], s_star).logpdf(u)
        log_ratio -= stats.multivariate_normal(np.zeros(5), _prior_cov(problem)).logpdf(u)
        samples = [InducingSample([Tensor(b.value[k]) for b in blocks]) for k in range(count)]
        fit = problem.data_fit_sum(theta, samples, problem.full_batch(), Rng(3)).item()
        assert payoff == pytest.approx((fit - np.sum(log_ratio)) / count, rel=1e-9)

    def test_mean_log_ratio_is_kl(self):
        """Test the exact log ratio averages to KL[q ‖ p] under q"""
        problem, state, m_star, s_star = self._exact_state()
        z_all = problem.inducing_inputs()
        blocks = posterior_blocks(state.generator, state.phi, z_all, 20_000, Rng(4))
        scores = state.discriminator.score(bind(state.psi), blocks, z_all).value
        kl = kl_gaussian(
            m_star,
            linalg.cholesky(s_star, lower=True),
            linalg.cholesky(_prior_cov(problem), lower=True),
        ).item()
        standard_error = scores.std() / np.sqrt(len(scores))
        assert abs(scores.mean() - kl) <= 4.0 * standard_error

    def test_estimate_spread_shrinks_with_samples(self):
        """Test the ELBO estimate spread over 20 repeats falls as K_eval grows from 10 to 100"""
        problem, state, _, _ = self._exact_state()
        spread = {}
        for k_eval in (10, 100):
            values = [
                elbo_estimate(state, problem, k_eval=k_eval, refine_steps=0, rng=Rng(seed))
                for seed in range(20)
            ]
            spread[k_eval] = np.std(values)
        assert spread[100] < 0.6 * spread[10]


@pytest.mark.slow
@pytest.mark.oracle
class TestOracles:
    """Test convergence against analytic answers"""

    def test_discriminator_learns_log_ratio(self):
        """Test T converges to log q − log p = u − 1/2 for q = N(1,1), p = N(0,1)"""
        problem = ShiftedGaussianProblem()
        generator, phi = _shifted_generator()
        discriminator = Discriminator(problem.layers, hidden=())
        state = GameState(
            generator=generator,
            discriminator=discriminator,
            phi=phi,
            psi=discriminator.init_params(Rng(0)),
            opt_psi=Ascent("adam", 0.05),
            opt_phi=Ascent("adam", 0.001),
            opt_theta=Ascent("adam", 0.001),
            rng=Rng(1),
        )
        psi = state.psi
        adam = Ascent("adam", 0.05)
        for _ in range(500):
            psi, _ = discriminator_step(state, problem, psi, adam, 1000, state.rng)
        sga = Ascent("sga", 0.5)
        for _ in range(500):
            psi, _ = discriminator_step(state, problem, psi, sga, 4000, state.rng)

        grid = np.linspace(-3.0, 4.0, 71).reshape(-1, 1, 1)
        scores = discriminator.score(bind(psi), [grid], problem.inducing_inputs()).value
        assert np.max(np.abs(scores - (grid.ravel() - 0.5))) <= 0.15

        def mixture(u):
            p, q = stats.norm.pdf(u), stats.norm.pdf(u, loc=1.0)
            m = 0.5 * (p + q)
            return 0.5 * (p * np.log(p / m) + q * np.log(q / m))

        jsd = integrate.quad(mixture, -12.0, 13.0)[0]
        rng = Rng(2)
        prior = problem.prior_blocks(200_000, rng)
        post = [rng.normal((200_000, 1, 1)) + 1.0]
        payoff = discriminator_payoff(
            discriminator, bind(psi), prior, post, problem.inducing_inputs()
        ).item()
        assert payoff == pytest.approx(-(2.0 * np.log(2.0) - 2.0 * jsd), abs=0.02)

    def _train_fixed_hyper(self, problem: DGPProblem, max_iters: int) -> tuple[GameState, list]:
        config = BRDConfig(
            rate_phi=0.01, num_samples=10, disc_samples=200, max_iters=max_iters, log_every=500
        )
        state = GameState.initialize(
            problem, config, Rng(0), noise_dim=5, tied=False, hidden=(), disc_kind="quadratic"
        )
        return state, brd_train(state, problem, config)

    def test_fixed_hyper_posterior(self):
        """Test the generator recovers the optimal Gaussian posterior mean and covariance"""
        problem = _gaussian_task()
        state, _ = self._train_fixed_hyper(problem, 1500)
        state.opt_phi.rate = 0.002
        state.opt_psi.rate = 0.01
        config = BRDConfig(num_samples=10, disc_samples=200, max_iters=4000, log_every=500)
        brd_train(state, problem, config)

        m_star, s_star = _optimal_q(problem)
        z = problem.inducing_inputs()[0]
        draws = posterior_blocks(state.generator, state.phi, [z], 20_000, Rng(9))[0][:, :, 0]
        assert np.max(np.abs(draws.mean(axis=0) - m_star[:, 0])) <= 0.05 * np.max(np.abs(m_star))
        # relative Frobenius error of the sample covariance
        error = np.linalg.norm(np.cov(draws, rowvar=False) - s_star) / np.linalg.norm(s_star)
        assert error <= 0.1

    def test_player2_moving_average_non_decreasing(self):
        """Test 200-iteration means of Player 2's payoff never drop on the fixed-hyper task"""
        problem = _gaussian_task()
        _, records = self._train_fixed_hyper(problem, 1400)
        payoffs = np.array([r["player2"] for r in records])
        window_means = payoffs.reshape(-1, 200).mean(axis=1)
        assert np.all(np.diff(window_means) >= -0.25)
        assert window_means[-1] > window_means[0]

    def test_elbo_estimate_matches_evidence(self):
        """Test the refined ELBO estimate lands within one nat of the exact evidence"""
        x, y = sine_data(n=8, d=1, seed=5)
        model = build(Options(num_inducing=8), x, 1, Likelihood("gaussian"))
        # Z = X makes the optimal Gaussian bound equal the evidence
        model.params["layer0.Z"] = x.copy()
        model.params["likelihood.log_noise_variance"] = np.full_like(
            model.params["likelihood.log_noise_variance"], np.log(4.0)
        )
        problem = DGPProblem(model, x, y, train_hypers=False, train_inducing=False)
        m_star, s_star = _optimal_q(problem)
        state = _linear_q_state(problem, m_star, s_star)

        config = BRDConfig(rate_psi=0.01, disc_samples=256)
        value = elbo_estimate(
            state, problem, k_eval=2000, refine_steps=3000, config=config, rng=Rng(6)
        )
        hyper = KernelHyper.from_params(bind(model.params), "layer0.")
        residual = y - x @ model.layers[0].w_mean
        assert value == pytest.approx(exact_log_evidence(x, residual, hyper, 4.0), abs=1.0)


@pytest.mark.slow
class TestBatchedGeneration:
    """Test the cost of stacked posterior sampling"""

    def test_stacked_faster_than_sequential(self):
        """Test one stacked pass beats per-sample generation by at least 10x"""
        x, _ = sine_data(n=200, d=2)
        model = build(Options(num_layers=4, num_inducing=128), x, 1, Likelihood("gaussian"))
        problem = DGPProblem(model, x, np.zeros((200, 1)))
        state = _state(problem)
        z_all = problem.inducing_inputs()
        eps = Rng(0).normal((200, 2))
        state.generator.generate_batch(bind(state.phi), eps[:2], z_all)

        started = time.perf_counter()
        state.generator.generate_batch(bind(state.phi), eps, z_all)
        stacked = time.perf_counter() - started
        started = time.perf_counter()
        for row in eps:
            generate(state.generator, bind(state.phi), row, z_all)
        sequential = time.perf_counter() - started
        assert sequential >= 10.0 * stacked
