import numpy as np
import pytest

from attacks.attacker import (
    PerturbationAttacker,
    attack_objective,
    flattened_similarity,
    masked_mean_similarity,
    masked_min_similarity,
)
from attacks.model_gradcheck import model_cases, run_model_suite
from attacks.perturbation import Perturbation, example_norms, init_perturbation, pgd_step, project
from autodiff.gradcheck import check_case
from autodiff.tensor import Graph, Tensor, backward
from encoder.params import init_params
from encoder.transformer import MiniTransformer
from models.config import AttackConfig, AttackMode, SimilarityAggregation
from utils.errors import ConfigurationError, NumericalError


def attack(mode, steps=1, **overrides):
    return AttackConfig(mode=mode, ascent_steps=steps, **overrides)


@pytest.fixture
def mask():
    return np.array([[True, True, True], [True, True, False]])


def test_project_scales_outside_points_onto_the_ball(mask):
    delta = np.zeros((2, 3, 2))
    delta[0, 0] = [3.0, 4.0]
    delta[1, 1] = [0.3, 0.4]
    projected = project(Perturbation(delta, mask), epsilon=1.0)
    np.testing.assert_allclose(projected.delta[0, 0], [0.6, 0.8])
    np.testing.assert_array_equal(projected.delta[1], delta[1])


def test_project_zeroes_padding(mask):
    projected = project(Perturbation(np.ones((2, 3, 2)), mask), epsilon=10.0)
    assert (projected.delta[1, 2] == 0.0).all()
    np.testing.assert_array_equal(projected.delta[0], np.ones((3, 2)))


def test_project_rejects_non_positive_radius(mask):
    with pytest.raises(ConfigurationError):
        project(Perturbation.zeros((2, 3, 2), mask), epsilon=0.0)


def test_init_stays_inside_the_ball(mask):
    for seed in range(1000):
        p = init_perturbation((2, 3, 4), mask, epsilon=0.5, seed=seed)
        assert (p.norms() <= 0.5 + 1e-12).all()
        assert (p.delta[1, 2] == 0.0).all()


def test_init_is_seeded(mask):
    a = init_perturbation((2, 3, 4), mask, epsilon=0.5, seed=1)
    b = init_perturbation((2, 3, 4), mask, epsilon=0.5, seed=1)
    c = init_perturbation((2, 3, 4), mask, epsilon=0.5, seed=2)
    np.testing.assert_array_equal(a.delta, b.delta)
    assert not np.array_equal(a.delta, c.delta)


def test_pgd_step_with_zero_gradient_leaves_delta(mask, caplog):
    p = init_perturbation((2, 3, 2), mask, epsilon=1.0, seed=0)
    stepped = pgd_step(p, np.zeros((2, 3, 2)), alpha=0.1, epsilon=1.0)
    np.testing.assert_array_equal(stepped.delta, p.delta)
    assert "zero attack gradient" in caplog.text


def test_pgd_step_moves_along_normalized_gradient(mask):
    grad = np.zeros((2, 3, 2))
    grad[0, 0] = [3.0, 4.0]
    grad[1, 1] = [0.0, 2.0]
    stepped = pgd_step(Perturbation.zeros((2, 3, 2), mask), grad, alpha=0.1, epsilon=1.0)
    np.testing.assert_allclose(stepped.delta[0, 0], [0.06, 0.08], atol=1e-12)
    np.testing.assert_allclose(stepped.delta[1, 1], [0.0, 0.1], atol=1e-12)


def test_pgd_step_is_projected(mask):
    grad = np.ones((2, 3, 2))
    stepped = pgd_step(Perturbation.zeros((2, 3, 2), mask), grad, alpha=5.0, epsilon=1.0)
    np.testing.assert_allclose(example_norms(stepped.delta), [1.0, 1.0])
    assert (stepped.delta[1, 2] == 0.0).all()


def test_run_attack_keeps_padding_zero(tiny_model, tiny_params, tiny_batch):
    attacker = PerturbationAttacker(tiny_model, attack(AttackMode.CREAT, steps=3))
    p = attacker.run_attack(tiny_batch, tiny_params, seed=0)
    assert (p.delta[~tiny_batch.mask] == 0.0).all()
    assert (p.norms() <= 0.1 + 1e-12).all()
    assert attacker.backward_calls == 3
    assert len(attacker.last_trace) == 3


def test_zero_temperature_matches_at(tiny_model, tiny_params, tiny_batch):
    at = PerturbationAttacker(tiny_model, attack(AttackMode.AT, steps=3)).run_attack(tiny_batch, tiny_params, seed=4)
    creat = PerturbationAttacker(
        tiny_model, attack(AttackMode.CREAT, steps=3, temperature=0.0)
    ).run_attack(tiny_batch, tiny_params, seed=4)
    np.testing.assert_allclose(creat.delta, at.delta, rtol=0, atol=1e-12)


def test_creat_at_zero_delta_is_loss_minus_temperature(tiny_model, tiny_params, tiny_batch):
    zero = Perturbation.zeros(tiny_batch.ids.shape + (8,), tiny_batch.mask)
    at = PerturbationAttacker(tiny_model, attack(AttackMode.AT))
    creat = PerturbationAttacker(tiny_model, attack(AttackMode.CREAT, temperature=0.7))
    anchor = creat.benign_anchor(tiny_batch, tiny_params)
    loss = at.objective_value(tiny_batch, tiny_params, zero)
    value = creat.objective_value(tiny_batch, tiny_params, zero, anchor)
    assert value == pytest.approx(loss - 0.7, abs=1e-9)


def test_creat_minus_at_zero_delta_is_minus_one(tiny_model, tiny_params, tiny_batch):
    zero = Perturbation.zeros(tiny_batch.ids.shape + (8,), tiny_batch.mask)
    attacker = PerturbationAttacker(tiny_model, attack(AttackMode.CREAT_MINUS))
    anchor = attacker.benign_anchor(tiny_batch, tiny_params)
    assert attacker.objective_value(tiny_batch, tiny_params, zero, anchor) == pytest.approx(-1.0, abs=1e-9)


def test_objective_rejects_non_ascending_modes(tiny_model, tiny_params, tiny_batch):
    x = tiny_model.embed(tiny_batch.ids, tiny_params)
    delta = Tensor(np.zeros(x.shape))
    for mode in (AttackMode.RPT, AttackMode.NONE):
        with pytest.raises(ConfigurationError):
            attack_objective(tiny_model, tiny_params, tiny_batch, x, delta, attack(mode))


def test_anchored_objective_requires_anchor(tiny_model, tiny_params, tiny_batch):
    x = tiny_model.embed(tiny_batch.ids, tiny_params)
    with pytest.raises(ConfigurationError, match="anchor"):
        attack_objective(tiny_model, tiny_params, tiny_batch, x, Tensor(np.zeros(x.shape)), attack(AttackMode.CREAT))


def test_negative_temperature_is_rejected():
    with pytest.raises(ValueError):
        AttackConfig(mode=AttackMode.CREAT, temperature=-0.5)


def test_random_perturbation_never_differentiates(tiny_model, tiny_params, tiny_batch):
    attacker = PerturbationAttacker(tiny_model, attack(AttackMode.RPT, steps=4))
    p = attacker.run_attack(tiny_batch, tiny_params, seed=2)
    assert attacker.backward_calls == 0
    assert tiny_model.forward_calls == 0
    assert np.abs(p.delta).sum() > 0


def test_no_attack_is_zero(tiny_model, tiny_params, tiny_batch):
    p = PerturbationAttacker(tiny_model, attack(AttackMode.NONE)).run_attack(tiny_batch, tiny_params, seed=0)
    assert (p.delta == 0.0).all()


def test_zero_step_at_equals_random_perturbation(tiny_model, tiny_params, tiny_batch):
    at = PerturbationAttacker(tiny_model, attack(AttackMode.AT, steps=0)).run_attack(tiny_batch, tiny_params, seed=8)
    rpt = PerturbationAttacker(tiny_model, attack(AttackMode.RPT, steps=0)).run_attack(tiny_batch, tiny_params, seed=8)
    np.testing.assert_array_equal(at.delta, rpt.delta)


@pytest.mark.parametrize("mode", [AttackMode.AT, AttackMode.CREAT, AttackMode.CREAT_MINUS])
def test_attack_leaves_model_gradients_untouched(tiny_model, tiny_params, tiny_batch, mode):
    before = {name: t.data.copy() for name, t in tiny_params.named().items()}
    PerturbationAttacker(tiny_model, attack(mode, steps=2)).run_attack(tiny_batch, tiny_params, seed=0)
    for name, tensor in tiny_params.named().items():
        assert tensor._grad is None, name
        np.testing.assert_array_equal(tensor.data, before[name])


def test_at_ascent_is_monotone_for_convex_objective(tiny_encoder, tiny_task, tiny_batch):
    # without layers the loss is convex in delta, so normalized ascent plus projection never goes down
    config = tiny_encoder.model_copy(update={"num_layers": 0})
    model = MiniTransformer(config)
    params = init_params(config, seed=0, task=tiny_task)
    attacker = PerturbationAttacker(model, attack(AttackMode.AT, steps=5))
    shape = tiny_batch.ids.shape + (config.hidden_size,)
    for seed in range(100):
        final = attacker.run_attack(tiny_batch, params, seed=seed)
        start = init_perturbation(shape, tiny_batch.mask, attacker.config.decision_boundary, seed)
        trace = np.array(attacker.last_trace + [attacker.objective_value(tiny_batch, params, final)])
        assert len(trace) == 6
        assert trace[0] == pytest.approx(attacker.objective_value(tiny_batch, params, start), abs=1e-12)
        assert (np.diff(trace) >= -1e-10).all(), (seed, trace)
        assert trace[-1] >= trace[0] - 1e-10


def test_non_finite_objective_raises(tiny_encoder, tiny_task, tiny_batch):
    config = tiny_encoder.model_copy(update={"num_layers": 0})
    model = MiniTransformer(config)
    params = init_params(config, seed=0, task=tiny_task)
    params.decoder["classifier.bias"] = Tensor(np.array([np.nan, 0.0]), requires_grad=True)
    with pytest.raises(NumericalError):
        PerturbationAttacker(model, attack(AttackMode.AT)).run_attack(tiny_batch, params, seed=0)


@pytest.mark.parametrize("name", sorted(model_cases()))
def test_model_gradients_match_finite_differences(name):
    outcome = check_case(model_cases(seed=0)[name])
    assert outcome.passed, f"{name}: relative error {outcome.max_relative_error:.3e}"


@pytest.mark.slow
def test_model_suite_passes_for_other_seeds():
    assert all(o.passed for o in run_model_suite(seed=5))


@pytest.mark.parametrize("aggregate, expected", [
    (masked_mean_similarity, 0.5),
    (masked_min_similarity, 0.0),
    (flattened_similarity, 0.5),
])
def test_similarity_aggregations(aggregate, expected):
    anchor = Tensor(np.array([[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]]))
    perturbed = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]]))
    mask = np.array([[True, True, False]])
    assert aggregate(anchor, perturbed, mask).item() == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("aggregation", list(SimilarityAggregation))
def test_creat_at_zero_delta_for_every_aggregation(tiny_model, tiny_params, tiny_batch, aggregation):
    zero = Perturbation.zeros(tiny_batch.ids.shape + (8,), tiny_batch.mask)
    loss = PerturbationAttacker(tiny_model, attack(AttackMode.AT)).objective_value(tiny_batch, tiny_params, zero)
    creat = PerturbationAttacker(
        tiny_model, attack(AttackMode.CREAT, temperature=2.0, similarity_aggregation=aggregation)
    )
    anchor = creat.benign_anchor(tiny_batch, tiny_params)
    assert creat.objective_value(tiny_batch, tiny_params, zero, anchor) == pytest.approx(loss - 2.0, abs=1e-9)


def test_min_aggregation_gradient_skips_padding(tiny_model, tiny_params, tiny_batch):
    config = attack(AttackMode.CREAT_MINUS, steps=1, similarity_aggregation=SimilarityAggregation.MIN)
    attacker = PerturbationAttacker(tiny_model, config)
    x = tiny_model.embed(tiny_batch.ids, tiny_params)
    anchor = attacker.benign_anchor(tiny_batch, tiny_params)
    start = init_perturbation(x.shape, tiny_batch.mask, config.decision_boundary, seed=3)
    with Graph():
        delta = Tensor(start.delta, requires_grad=True)
        objective = attack_objective(tiny_model, tiny_params, tiny_batch, x.detach(), delta, config, anchor)
    (grad,) = backward(objective, [delta])
    assert (grad[~tiny_batch.mask] == 0.0).all()
    assert np.abs(grad).sum() > 0
