import numpy as np
import pytest
from scipy.stats import binom, norm

from popkit.apuf import (
    NoiseModel,
    TmvConfig,
    all_challenges,
    delay_difference,
    evaluate,
    random_challenges,
)
from popkit.crp import respond
from popkit.errors import ParameterError
from popkit.metrics import uniformity, uniqueness
from popkit.pop import (
    PopConfig,
    build_pop,
    evaluate_pop,
    first_layer_eval,
    trace_rounds,
    wiring,
    wiring_matrix,
)


def test_wiring_wraps_around():
    assert wiring(0, 3, 8) == [0, 1, 2]
    assert wiring(7, 3, 8) == [7, 0, 1]
    m = wiring_matrix(3, 8)
    assert m.shape == (8, 3)
    for i in range(8):
        assert m[i].tolist() == wiring(i, 3, 8)


@pytest.mark.parametrize("changes", [
    {"first_layer_stages": 9, "width": 8},
    {"rounds": 0},
    {"stage_sigma": 0.0},
    {"master_seed": -1},
])
def test_config_validation(changes):
    with pytest.raises(ParameterError):
        PopConfig(**changes)


def test_config_description_round_trip():
    cfg = PopConfig(width=16, first_layer_stages=4, rounds=3, tmv=TmvConfig(7), master_seed=2)
    assert PopConfig.from_description(cfg.describe()) == cfg
    assert cfg.label == "4-APUF-POP"


def test_build_pop_is_reproducible():
    cfg = PopConfig(width=16, first_layer_stages=4, master_seed=5)
    a, b = build_pop(cfg), build_pop(cfg)
    assert np.array_equal(a.layer_weights, b.layer_weights)
    assert np.array_equal(a.second_layer.weights, b.second_layer.weights)
    assert a.layer_weights.shape == (16, 5)
    other = build_pop(cfg.replace(master_seed=6))
    assert not np.array_equal(a.layer_weights, other.layer_weights)


def test_first_layer_matches_individual_apufs(rng):
    pop = build_pop(PopConfig(width=16, first_layer_stages=4, master_seed=1))
    c = random_challenges(rng, 50, 16)
    out = first_layer_eval(pop, c)
    for i, inst in enumerate(pop.first_layer):
        assert np.array_equal(out[:, i], evaluate(inst, c[:, wiring(i, 4, 16)]))


def _reference_pop(pop, c, rounds):
    k, w = pop.config.first_layer_stages, pop.config.width
    register = np.array(c, dtype=np.uint8)
    for _ in range(rounds):
        register = np.array([evaluate(pop.first_layer[i], register[wiring(i, k, w)])
                             for i in range(w)], dtype=np.uint8)
    return evaluate(pop.second_layer, register)


@pytest.mark.parametrize("rounds", [1, 3])
def test_evaluate_pop_matches_reference_exhaustively(rounds):
    pop = build_pop(PopConfig(width=8, first_layer_stages=2, rounds=rounds, master_seed=4))
    challenges = all_challenges(8)
    fast = evaluate_pop(pop, challenges)
    slow = [_reference_pop(pop, c, rounds) for c in challenges]
    assert fast.tolist() == slow


def test_trace_rounds_shape(small_pop, rng):
    c = random_challenges(rng, 10, 8)
    trace = trace_rounds(small_pop, c, rounds=4)
    assert trace.shape == (4, 10, 8)
    assert np.array_equal(trace[0], first_layer_eval(small_pop, c))
    assert np.array_equal(trace[1], first_layer_eval(small_pop, trace[0]))


def test_single_challenge_returns_int(small_pop):
    assert evaluate_pop(small_pop, np.zeros(8, dtype=np.uint8)) in (0, 1)


def test_noisy_pop_is_seeded(rng):
    pop = build_pop(PopConfig(width=16, first_layer_stages=4, master_seed=2))
    c = random_challenges(rng, 300, 16)
    noise = NoiseModel(2.0, eval_seed=1)
    assert np.array_equal(evaluate_pop(pop, c, noise), evaluate_pop(pop, c, noise))


def test_pop_responses_are_balanced(rng):
    c = random_challenges(rng, 1000, 64)
    means = [uniformity(respond(build_pop(PopConfig(master_seed=s)), c)) for s in range(50)]
    assert np.mean(means) == pytest.approx(0.5, abs=0.05)


def _exact_ones_rate(pop, sigma):
    """P(response = 1) per challenge, summed over every register state."""
    w, k, votes = pop.config.width, pop.config.first_layer_stages, pop.config.tmv.votes

    def p_one(delta):
        return binom.sf(votes // 2, votes, norm.cdf(-delta / sigma))

    c = all_challenges(w)
    first = np.stack([p_one(delay_difference(inst, c[:, wiring(i, k, w)]))
                      for i, inst in enumerate(pop.first_layer)], axis=1)
    registers = all_challenges(w)
    state = np.prod(np.where(registers[None] == 1, first[:, None], 1 - first[:, None]), axis=2)
    return state @ p_one(delay_difference(pop.second_layer, registers))


@pytest.mark.parametrize("votes", [1, 3])
def test_noisy_pop_matches_enumeration(votes):
    pop = build_pop(PopConfig(width=8, first_layer_stages=2, tmv=TmvConfig(votes),
                              master_seed=5))
    sigma, repeats = 0.7, 2000
    exact = _exact_ones_rate(pop, sigma)
    c = np.tile(all_challenges(8), (repeats, 1))
    out = evaluate_pop(pop, c, NoiseModel(sigma), np.random.default_rng(11))
    observed = out.reshape(repeats, 256).mean(axis=0)
    stderr = np.sqrt(np.sum(exact * (1 - exact)) / repeats) / 256
    assert abs(observed.mean() - exact.mean()) < 3 * stderr
    assert np.max(np.abs(observed - exact)) < 0.05


def test_pop_uniqueness(rng):
    c = random_challenges(rng, 1000, 64)
    responses = [respond(build_pop(PopConfig(master_seed=s)), c) for s in range(10)]
    assert uniqueness(responses) == pytest.approx(0.5, abs=0.05)
