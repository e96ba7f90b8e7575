import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import log_expit
from scipy.stats import norm

from app.models.batch import InteractionBatch
from app.models.networks import PROB_FLOOR, GaussianPosterior, discriminate, discriminator_logit, encode, param_binder
from app.models.objectives import (
    aae_objective,
    build_disc_graph,
    build_generator_graph,
    build_kl_graph,
    build_prediction_graph,
    build_vae_graph,
    closed_form_kl,
    disc_objective,
    generator_objective,
    optimal_disc_value,
    prediction_objective,
    total_objective,
    vae_objective,
)
from app.models.params import ModelParams, init_params
from app.schemas.config import ModelConfig
from app.schemas.training import BatchLosses
from app.services.manage_training.optimizers import rmsprop_state, rmsprop_step
from app.utils.diffcore import Tape, backward, forward, grad_check
from app.utils.exceptions import ShapeError
from app.utils.rng import make_rng

from conftest import jittered_params, tiny_model_config

LOG_HALF = np.log(0.5)
GRAD_TOLERANCE = 1e-5


def _binary_rows(rng, rows: int, width: int) -> np.ndarray:
    vectors = rng.integers(0, 2, size=(rows, width)).astype(float)
    vectors[:, 0] = 1.0
    return vectors


def _batch(rng, config: ModelConfig, size: int = 4) -> InteractionBatch:
    users = np.arange(min(size, config.num_users))
    items = np.arange(min(size, config.num_items))
    user_index = rng.integers(0, users.size, size=size)
    item_index = rng.integers(0, items.size, size=size)
    return InteractionBatch(
        user_ids=users,
        item_ids=items,
        user_vectors=_binary_rows(rng, users.size, config.num_items),
        item_vectors=_binary_rows(rng, items.size, config.num_users),
        user_index=user_index,
        item_index=item_index,
        labels=rng.integers(0, 2, size=size).astype(float),
    )


def _single_pair(config: ModelConfig, label: float) -> InteractionBatch:
    return InteractionBatch(
        user_ids=np.array([0]),
        item_ids=np.array([0]),
        user_vectors=np.zeros((1, config.num_items)),
        item_vectors=np.zeros((1, config.num_users)),
        user_index=np.array([0]),
        item_index=np.array([0]),
        labels=np.array([label]),
    )


def _check(graph) -> float:
    return grad_check(graph.tape, graph.inputs, graph.loss, wrt=graph.wrt)


class TestDiscriminatorObjective:
    def test_uninformative_discriminator(self):
        params = ModelParams.zeros(tiny_model_config())
        result = disc_objective(params, "user", np.ones((4, 4)), make_rng(0, "disc"))
        assert result.value == pytest.approx(2 * LOG_HALF)
        assert result.value == pytest.approx(-1.3863, abs=1e-4)

    def test_confident_discriminator_approaches_zero(self):
        config = ModelConfig(num_users=3, num_items=4, embedding_dim=1, encoder_hidden=(3,), decoder_hidden=(3,),
                             discriminator_hidden=(2,), predictor_hidden=(3,))
        # Logit 1e4 * |z| - 20: fakes sit at the zero-network mean, priors almost never do
        params = ModelParams.zeros(config).replace({
            "discriminator_user.0.weight": np.array([[1.0, -1.0]]),
            "discriminator_user.1.weight": np.array([[1e4], [1e4]]),
            "discriminator_user.1.bias": np.array([-20.0]),
        })
        result = disc_objective(params, "user", np.ones((2000, 4)), make_rng(0, "disc"), point_estimate=True)
        assert result.components["posterior"] > -1e-6
        assert -0.2 < result.value <= 0.0

    def test_gradient_reaches_only_its_discriminator(self):
        params = jittered_params(tiny_model_config(), seed=0)
        result = disc_objective(params, "item", _binary_rows(np.random.default_rng(0), 4, 3), make_rng(0, "disc"))
        for name, grad in result.grads.items():
            if name.startswith("discriminator_item"):
                continue
            assert not grad.any(), name
        assert any(grad.any() for name, grad in result.grads.items() if name.startswith("discriminator_item"))

    def test_missing_for_closed_form_variant(self):
        with pytest.raises(ShapeError):
            disc_objective(ModelParams.zeros(tiny_model_config("dave-adv")), "user", np.ones((1, 4)), make_rng(0, "d"))

    def test_gradient_check_four_samples(self):
        params = jittered_params(tiny_model_config(), seed=1)
        graph = build_disc_graph(params, "user", _binary_rows(np.random.default_rng(1), 4, 4), make_rng(1, "disc"))
        assert _check(graph) < GRAD_TOLERANCE


class TestVaeObjective:
    def test_zero_network_on_empty_vector(self):
        result = vae_objective(ModelParams.zeros(tiny_model_config()), "user", np.zeros(4), make_rng(0, "vae"))
        assert result.components["recon"] == pytest.approx(4 * LOG_HALF)
        assert result.components["recon"] == pytest.approx(-2.7726, abs=1e-4)
        assert result.components["reg"] == 0.0
        assert result.value == pytest.approx(4 * LOG_HALF)

    def test_kl_regularizer_matches_closed_form(self):
        params = jittered_params(tiny_model_config("dave-adv"), seed=2)
        vectors = _binary_rows(np.random.default_rng(2), 3, 4)
        result = vae_objective(params, "user", vectors, make_rng(0, "vae"))
        expected = -np.mean(closed_form_kl(encode(params, "user", vectors)))
        assert result.components["reg"] == pytest.approx(expected, rel=1e-10)

    def test_gradient_stays_on_its_side(self):
        params = jittered_params(tiny_model_config(), seed=3)
        result = vae_objective(params, "user", _binary_rows(np.random.default_rng(3), 3, 4), make_rng(0, "vae"))
        for name, grad in result.grads.items():
            if name.startswith(("encoder_user", "decoder_user")):
                continue
            assert not grad.any(), name

    @pytest.mark.parametrize("variant,regularizer", [("dave", "adversarial"), ("dave", "kl"), ("dave-adv", "kl")])
    def test_gradient_check(self, variant, regularizer):
        params = jittered_params(tiny_model_config(variant), seed=4)
        graph = build_vae_graph(params, "item", _binary_rows(np.random.default_rng(4), 2, 3), make_rng(4, "vae"),
                               regularizer=regularizer)
        assert _check(graph) < GRAD_TOLERANCE


class TestPointEncoderObjective:
    def test_fooling_term_at_logit_zero(self):
        params = ModelParams.zeros(tiny_model_config("dave-aae"))
        result = aae_objective(params, "user", np.zeros((2, 4)), make_rng(0, "aae"))
        assert result.components["reg"] == pytest.approx(LOG_HALF)
        assert result.value == pytest.approx(4 * LOG_HALF + LOG_HALF)

    @pytest.mark.parametrize("regularizer", ["adversarial", "kl"])
    def test_point_encoder_cannot_sample(self, regularizer):
        with pytest.raises(ShapeError):
            vae_objective(ModelParams.zeros(tiny_model_config("dave-aae")), "user", np.zeros(4), make_rng(0, "a"),
                          regularizer=regularizer)

    def test_gradient_check(self):
        params = jittered_params(tiny_model_config("dave-aae"), seed=5)
        graph = build_vae_graph(params, "user", _binary_rows(np.random.default_rng(5), 3, 4), make_rng(5, "aae"))
        assert _check(graph) < GRAD_TOLERANCE

    def test_discriminator_sees_posterior_means(self):
        params = jittered_params(tiny_model_config("dave-aae"), seed=6)
        vectors = _binary_rows(np.random.default_rng(6), 3, 4)
        result = disc_objective(params, "user", vectors, make_rng(0, "disc"))
        logits = discriminate(params, "user", encode(params, "user", vectors).mean)
        assert result.components["posterior"] == pytest.approx(np.mean(log_expit(-logits)), rel=1e-10)


class TestPredictionObjective:
    def test_even_odds(self):
        config = tiny_model_config()
        result = prediction_objective(ModelParams.zeros(config), _single_pair(config, 1.0), make_rng(0, "pred"))
        assert result.value == pytest.approx(LOG_HALF)
        assert result.value == pytest.approx(-0.6931, abs=1e-4)

    def test_confident_negative_approaches_zero(self):
        config = tiny_model_config()
        params = ModelParams.zeros(config).replace({"predictor.1.bias": np.array([-50.0])})
        result = prediction_objective(params, _single_pair(config, 0.0), make_rng(0, "pred"))
        assert -1e-6 < result.value <= 0.0

    def test_saturated_scores_are_clamped(self):
        config = tiny_model_config()
        params = ModelParams.zeros(config).replace({"predictor.1.bias": np.array([1e3])})
        result = prediction_objective(params, _single_pair(config, 0.0), make_rng(0, "pred"))
        assert np.isfinite(result.value)
        assert result.value == pytest.approx(np.log(PROB_FLOOR), rel=1e-6)

    def test_gradient_check(self):
        config = tiny_model_config()
        params = jittered_params(config, seed=7)
        graph = build_prediction_graph(params, _batch(np.random.default_rng(7), config), make_rng(7, "pred"))
        assert _check(graph) < GRAD_TOLERANCE

    def test_no_gradient_to_decoders_or_discriminators(self):
        config = tiny_model_config()
        params = jittered_params(config, seed=8)
        result = prediction_objective(params, _batch(np.random.default_rng(8), config), make_rng(8, "pred"))
        for name, grad in result.grads.items():
            if name.startswith(("decoder_", "discriminator_")):
                assert not grad.any(), name


class TestGeneratorObjective:
    @pytest.mark.parametrize("variant", ["dave", "dave-adv", "dave-aae"])
    def test_components_add_up(self, variant):
        config = tiny_model_config(variant)
        params = jittered_params(config, seed=9)
        result = generator_objective(params, _batch(np.random.default_rng(9), config), make_rng(9, "gen"))
        parts = result.components
        assert result.value == pytest.approx(parts["vae_user"] + parts["vae_item"] + parts["prediction"], rel=1e-12)
        assert parts["vae_user"] == pytest.approx(parts["recon_user"] + parts["reg_user"], rel=1e-12)
        for name, grad in result.grads.items():
            if name.startswith("discriminator_"):
                assert not grad.any(), name

    def test_weights_scale_the_terms(self):
        config = tiny_model_config()
        params = jittered_params(config, seed=10)
        batch = _batch(np.random.default_rng(10), config)
        base = generator_objective(params, batch, make_rng(10, "gen"))
        weighted = generator_objective(params, batch, make_rng(10, "gen"),
                                       weights={"user": 0.0, "item": 2.0, "prediction": 1.0})
        parts = base.components
        assert weighted.value == pytest.approx(2 * parts["vae_item"] + parts["prediction"], rel=1e-10)

    @pytest.mark.parametrize("variant", ["dave", "dave-adv", "dave-aae"])
    def test_gradient_check(self, variant):
        config = tiny_model_config(variant)
        params = jittered_params(config, seed=11)
        graph = build_generator_graph(params, _batch(np.random.default_rng(11), config), make_rng(11, "gen"))
        assert _check(graph) < GRAD_TOLERANCE


class TestPropertyGradients:
    @given(seed=st.integers(min_value=0, max_value=2**16),
           variant=st.sampled_from(["dave", "dave-adv", "dave-aae"]))
    @settings(max_examples=6, deadline=None)
    def test_vae_and_prediction_graphs(self, seed, variant):
        config = tiny_model_config(variant)
        params = jittered_params(config, seed=seed)
        rng = np.random.default_rng(seed)
        vae = build_vae_graph(params, "user", _binary_rows(rng, 2, 4), make_rng(seed, "vae"))
        prediction = build_prediction_graph(params, _batch(rng, config), make_rng(seed, "pred"))
        assert _check(vae) < GRAD_TOLERANCE
        assert _check(prediction) < GRAD_TOLERANCE

    @given(seed=st.integers(min_value=0, max_value=2**16))
    @settings(max_examples=6, deadline=None)
    def test_disc_graph(self, seed):
        params = jittered_params(tiny_model_config(), seed=seed)
        graph = build_disc_graph(params, "item", _binary_rows(np.random.default_rng(seed), 4, 3), make_rng(seed, "d"))
        assert _check(graph) < GRAD_TOLERANCE

    @given(seed=st.integers(min_value=0, max_value=2**16))
    @settings(max_examples=10, deadline=None)
    def test_kl_graph(self, seed):
        rng = np.random.default_rng(seed)
        posterior = GaussianPosterior(rng.normal(size=(2, 3)), rng.uniform(-1.0, 1.0, size=(2, 3)))
        assert _check(build_kl_graph(posterior)) < GRAD_TOLERANCE


class TestClosedFormKl:
    def test_prior_equals_posterior(self):
        assert closed_form_kl(GaussianPosterior.from_std([0.0, 0.0], [1.0, 1.0])) == 0.0

    def test_unit_shift(self):
        assert closed_form_kl(GaussianPosterior.from_std([1.0], [1.0])) == pytest.approx(0.5)

    def test_batch_gives_one_value_per_row(self):
        posterior = GaussianPosterior.from_std([[0.0], [1.0]], [[1.0], [1.0]])
        np.testing.assert_allclose(closed_form_kl(posterior), [0.0, 0.5])

    def test_graph_agrees_with_closed_form(self):
        posterior = GaussianPosterior.from_std([0.5, -1.0], [0.7, 1.3])
        graph = build_kl_graph(posterior)
        forward(graph.tape, graph.inputs)
        assert -float(graph.tape.values[graph.loss]) == pytest.approx(-closed_form_kl(posterior), rel=1e-12)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(21)
        samples = 1_000_000
        for _ in range(10):
            mean = rng.uniform(1.0, 2.0, size=2) * rng.choice([-1.0, 1.0], size=2)
            posterior = GaussianPosterior.from_std(mean, rng.uniform(0.5, 1.5, size=2))
            z = posterior.mean + posterior.std * rng.standard_normal((samples, 2))
            log_q = norm.logpdf(z, loc=posterior.mean, scale=posterior.std).sum(axis=1)
            log_p = norm.logpdf(z).sum(axis=1)
            estimate = float(np.mean(log_q - log_p))
            assert estimate == pytest.approx(closed_form_kl(posterior), rel=0.01)


class TestOptimalDiscriminator:
    def test_identical_densities(self):
        x = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(optimal_disc_value(norm(0, 1).pdf, norm(0, 1).pdf, x), 0.0)

    @pytest.mark.parametrize("x,expected", [(0.5, 0.0), (0.0, 0.5), (2.0, -1.5)])
    def test_shifted_unit_gaussians(self, x, expected):
        assert optimal_disc_value(norm(0, 1).pdf, norm(1, 1).pdf, x) == pytest.approx(expected, abs=1e-12)

    def test_zero_density(self):
        with pytest.raises(ValueError):
            optimal_disc_value(norm(0, 1).pdf, lambda x: 0.0, 0.0)

    def test_adversarial_term_at_optimum_matches_closed_form_kl(self):
        # The adversarial regularizer is E_q[T(z)]; at T = log p - log q it equals -KL(q || p)
        posterior = GaussianPosterior.from_std([1.5, -1.0], [0.6, 1.4])
        graph = build_kl_graph(posterior)
        forward(graph.tape, graph.inputs)
        closed_form = -float(graph.tape.values[graph.loss])

        rng = np.random.default_rng(8)
        z = posterior.mean + posterior.std * rng.standard_normal((100_000, 2))
        logits = optimal_disc_value(lambda x: norm.pdf(x).prod(axis=1),
                                    lambda x: norm.pdf(x, loc=posterior.mean, scale=posterior.std).prod(axis=1), z)
        assert float(np.mean(logits)) == pytest.approx(closed_form, rel=0.02)

    @pytest.mark.slow
    def test_trained_discriminator_matches_log_ratio(self):
        config = ModelConfig(num_users=1, num_items=1, embedding_dim=1, discriminator_hidden=(16, 16))
        params = init_params(config, make_rng(0, "init"))
        rng = np.random.default_rng(0)
        priors = rng.standard_normal((100_000, 1))
        fakes = 1.0 + rng.standard_normal((100_000, 1))

        tape = Tape()
        p = param_binder(tape, lambda name: name.startswith("discriminator_user"))
        prior_term = tape.mean(tape.log_sigmoid(discriminator_logit(tape, p, config, "user", tape.constant("prior"))))
        fake_term = tape.mean(tape.log_sigmoid(tape.neg(discriminator_logit(tape, p, config, "user", tape.constant("fake")))))
        objective = tape.add(prior_term, fake_term)

        names = params.names(("discriminator_user",))
        state = rmsprop_state([(name, params[name].shape) for name in names], learning_rate=1e-3)
        tensors = dict(params.tensors)
        batch_size = 1000
        for epoch in range(40):
            if epoch == 30:
                state = rmsprop_state([(name, params[name].shape) for name in names], learning_rate=2e-4)
            order = rng.permutation(priors.shape[0])
            for start in range(0, order.size, batch_size):
                rows = order[start:start + batch_size]
                forward(tape, {**tensors, "prior": priors[rows], "fake": fakes[rows]})
                grads = backward(tape, objective)
                updated, state = rmsprop_step(state, tensors, grads)
                tensors.update(updated)

        grid = np.linspace(-2.0, 3.0, 101).reshape(-1, 1)
        tape = Tape()
        p = param_binder(tape, lambda name: False)
        logit = tape.output("logit", discriminator_logit(tape, p, config, "user", tape.constant("z")))
        learned = forward(tape, {**tensors, "z": grid})["logit"][:, 0]
        oracle = optimal_disc_value(norm(0, 1).pdf, norm(1, 1).pdf, grid[:, 0])
        assert np.mean(np.abs(learned - oracle)) < 0.15


class TestTotalObjective:
    def test_all_zero(self):
        assert total_objective(BatchLosses()) == 0.0

    def test_sums_the_five_components(self):
        losses = BatchLosses(disc_user=-1, disc_item=-2, vae_user=-3, vae_item=-4, prediction=-5)
        assert total_objective(losses) == -15.0
