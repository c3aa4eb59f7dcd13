import numpy as np
import pytest

from popkit.analysis import (
    BiasDistribution,
    challenge_pair_distance,
    cross_challenge_hd,
    interround_hd,
    last_stage_shift,
    mismatch_pattern,
    round_distances,
    sac_analytic,
    sac_curve,
    sac_exact,
    sac_mean,
    stage_bias,
    stage_bias_distribution,
    stage_walk,
)
from popkit.apuf import (
    ApufInstance,
    StageModel,
    all_challenges,
    evaluate,
    new_instance,
    parity,
    random_challenges,
)
from popkit.engine import derive_seed, engine
from popkit.errors import ParameterError
from popkit.pop import PopConfig

# Published HW-2 means for APUF sizes 24, 12, 8, 6, 4, 2
HW2_MEANS = {24: 0.132, 12: 0.19, 8: 0.236, 6: 0.265, 4: 0.335, 2: 0.505}
BIAS_STD = {24: 0.12, 8: 0.20, 4: 0.29, 2: 0.40}


# =============================================================================
# MISMATCH PATTERNS
# =============================================================================

def test_mismatch_patterns():
    assert mismatch_pattern(8, 1, 3).tolist() == [0, 0, 0, 1, 0, 0, 0, 0]
    assert mismatch_pattern(8, 2, 6).tolist() == [0, 0, 0, 0, 0, 0, 1, 1]
    assert mismatch_pattern(8, 2, 7, wrap=True).tolist() == [1, 0, 0, 0, 0, 0, 0, 1]


@pytest.mark.parametrize("size, hw, shift", [(8, 1, 8), (8, 2, 7), (8, 3, 0), (1, 2, 0)])
def test_mismatch_pattern_rejects(size, hw, shift):
    with pytest.raises(ParameterError):
        mismatch_pattern(size, hw, shift)


# =============================================================================
# PROBABILITY OF OUTPUT CHANGE
# =============================================================================

@pytest.mark.parametrize("size", [2, 3, 4])
@pytest.mark.parametrize("hw", [1, 2])
def test_exhaustive_curve_matches_oracle(size, hw):
    curve = sac_curve(size, hw, n_instances=1, seed=7, exhaustive=True)
    inst = new_instance(size, 1.0, derive_seed(7, "sac-instance", 0), StageModel.DELAY)
    for shift, value in zip(curve.x, curve.value):
        assert value == pytest.approx(sac_exact(inst, hw, int(shift)), abs=1e-12)


def test_exact_oracle_hand_example():
    inst = ApufInstance.from_weights([1.0, -2.0, 0.0])
    # flipping c_1 negates every phi except the zero offset term
    assert sac_exact(inst, 1, 1) == 1.0
    assert sac_exact(inst, 1, 0) == 0.0


def test_hw2_size2_analytic_is_half():
    assert sac_analytic(2, 2, 0) == pytest.approx(0.5)


def test_analytic_hw2_means_near_published():
    for size, published in HW2_MEANS.items():
        mean = np.mean([sac_analytic(size, 2, s) for s in range(size - 1)])
        assert mean == pytest.approx(published, abs=0.02)


def test_analytic_hw1_rises_towards_arbiter():
    values = [sac_analytic(64, 1, s) for s in range(64)]
    assert values[0] == pytest.approx(0.055, abs=0.015)
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_last_stage_is_one_before_the_arbiter_bit():
    assert last_stage_shift(64) == 62
    assert sac_analytic(64, 1, last_stage_shift(64)) == pytest.approx(0.905, abs=0.005)
    assert sac_analytic(64, 1, 63) > 0.94
    with pytest.raises(ParameterError):
        last_stage_shift(1)


def test_hw2_is_flat_on_64_stages():
    curve = sac_curve(64, 2, n_instances=100, n_challenges=2000, seed=1)
    assert curve.mean() == pytest.approx(0.08, abs=0.01)
    assert np.all(np.abs(curve.value - 0.08) < 0.04)


def test_hw1_curve_follows_analytic():
    curve = sac_curve(64, 1, n_instances=100, n_challenges=2000, seed=2)
    analytic = np.array([sac_analytic(64, 1, s) for s in range(64)])
    assert curve.value[0] == pytest.approx(0.055, abs=0.015)
    assert np.all(np.abs(curve.value - analytic) < 0.05)
    assert np.all(np.diff(curve.value) > -0.05)


@pytest.mark.parametrize("size", [24, 8, 4])
def test_hw2_mean_matches_analytic(size):
    simulated = sac_mean(size, 2, n_instances=3000, n_challenges=1000, seed=size)
    analytic = sac_analytic(size, 2, 0)
    assert simulated == pytest.approx(analytic, abs=0.02)


def test_sac_curve_independent_of_threads():
    one = sac_curve(16, 1, n_instances=10, n_challenges=500, seed=3)
    engine.configure(4)
    many = sac_curve(16, 1, n_instances=10, n_challenges=500, seed=3)
    assert np.array_equal(one.value, many.value)
    assert np.array_equal(one.stderr, many.stderr)


# =============================================================================
# STAGE BIAS
# =============================================================================

@pytest.mark.parametrize("cw", [1, 4, 8])
def test_stage_walk_tracks_parity(cw):
    challenges = all_challenges(cw)
    for j, t, p in stage_walk(challenges):
        assert np.array_equal(t, challenges[:, j])
        assert np.array_equal(p, parity(challenges, j))


def test_stage_bias_hand_example(hand_apuf):
    matrix = stage_bias(lambda c: evaluate(hand_apuf, c), 2, exhaustive=True)
    assert matrix.y.tolist() == [[1.0, 1.0], [1.0, 0.0]]
    assert matrix.n.tolist() == [[2, 2], [2, 2]]


def test_stage_bias_counts_sum_to_nc(apuf64):
    matrix = stage_bias(lambda c: evaluate(apuf64, c), 64, nc=777, seed=1)
    assert np.all(matrix.n.sum(axis=0) == 777)
    assert matrix.nc == 777
    assert np.all((matrix.y >= 0) & (matrix.y <= 1))


def test_stage_bias_absent_entries():
    matrix = stage_bias(lambda c: np.zeros(len(c), dtype=np.uint8), 6, nc=1, seed=0)
    assert matrix.absent.sum() == 6
    assert np.isnan(matrix.y[matrix.absent]).all()
    assert len(matrix.values()) == 6


def test_fair_coin_has_no_stage_bias():
    coin = np.random.default_rng(5)
    matrix = stage_bias(lambda c: coin.integers(0, 2, len(c)), 6, nc=40_000, seed=2)
    assert np.allclose(matrix.y, 0.5, atol=0.02)


def test_stage_bias_rejects_missing_count():
    with pytest.raises(ParameterError):
        stage_bias(lambda c: np.zeros(len(c)), 4)


def test_stage_bias_random_matches_exhaustive_on_all_challenges():
    inst = new_instance(4, instance_seed=3)
    exhaustive = stage_bias(lambda c: evaluate(inst, c), 4, exhaustive=True)
    sampled = stage_bias(lambda c: evaluate(inst, c), 4, nc=20_000, seed=1)
    assert np.allclose(sampled.y, exhaustive.y, atol=0.03)


def test_bias_distribution_mean_and_spread():
    small = stage_bias_distribution(2, n_instances=1000, n_crps=1000, seed=1)
    large = stage_bias_distribution(24, n_instances=50, n_crps=1000, seed=1)
    assert small.mean == pytest.approx(0.5, abs=0.05)
    assert large.mean == pytest.approx(0.5, abs=0.02)
    assert small.std > large.std
    counts, edges = large.histogram(bins=10)
    assert counts.sum() == len(large.entries)


def test_bias_distribution_instance_means():
    samples = np.array([[[0.25, 0.25], [0.25, np.nan]], [[0.75, 0.75], [0.75, 0.75]]])
    dist = BiasDistribution(samples)
    assert dist.instance_means.tolist() == [0.25, 0.75]
    assert dist.mean_stderr == pytest.approx(0.25)
    assert np.isnan(BiasDistribution(samples[:1]).mean_stderr)


# =============================================================================
# INTERMEDIATE RESPONSES
# =============================================================================

def test_round_distances_shape(small_pop, rng):
    c = random_challenges(rng, 100, 8)
    d = round_distances(small_pop, c, 4)
    assert d.shape == (3,)
    assert np.all((d >= 0) & (d <= 1))


def test_identical_challenges_have_zero_distance(small_pop, rng):
    c = random_challenges(rng, 50, 8)
    assert np.all(challenge_pair_distance(small_pop, c, c, [1, 2, 3]) == 0)


def test_interround_needs_two_rounds():
    with pytest.raises(ParameterError):
        interround_hd(PopConfig(rounds=1), n_challenges=10, n_instances=1)


def test_cross_challenge_rejects_bad_rounds():
    with pytest.raises(ParameterError):
        cross_challenge_hd(PopConfig(), rounds=[0, 1], n_pairs=10, n_instances=1)


def test_large_first_layer_decorrelates():
    inter = interround_hd(PopConfig(first_layer_stages=24, rounds=3), n_challenges=300,
                          n_instances=3, seed=1)
    cross = cross_challenge_hd(PopConfig(first_layer_stages=24), rounds=[1, 2],
                               n_pairs=300, n_instances=3, seed=1)
    assert np.allclose(inter.value, 0.5, atol=0.05)
    assert np.allclose(cross.value, 0.5, atol=0.05)


# =============================================================================
# FULL-SCALE ANCHORS
# =============================================================================

@pytest.mark.slow
def test_hw1_anchors_full_scale():
    curve = sac_curve(64, 1, n_instances=200, n_challenges=10_000, seed=0)
    assert curve.value[0] == pytest.approx(0.055, abs=0.015)
    assert curve.value[last_stage_shift(64)] == pytest.approx(0.905, abs=0.02)


@pytest.mark.slow
@pytest.mark.parametrize("size, published", sorted(HW2_MEANS.items()))
def test_hw2_means_full_scale(size, published):
    # few-stage instances vary a lot, so small sizes need a larger population
    instances = 20_000 if size <= 4 else 2000
    value = sac_mean(size, 2, n_instances=instances, n_challenges=2000, seed=0)
    assert value == pytest.approx(published, abs=0.02)


@pytest.mark.slow
@pytest.mark.parametrize("size, published", sorted(BIAS_STD.items()))
def test_stage_bias_spread_full_scale(size, published):
    dist = stage_bias_distribution(size, n_instances=100, n_crps=3000, seed=0)
    assert dist.std == pytest.approx(published, abs=0.03)
    assert abs(dist.mean - 0.5) <= 3 * dist.mean_stderr


@pytest.mark.slow
@pytest.mark.parametrize("size", sorted(BIAS_STD))
def test_stage_bias_mean_full_scale(size):
    # 2-APUF instance means spread by about 0.2; 100 instances leave a 0.02 error
    dist = stage_bias_distribution(size, n_instances=1000, n_crps=3000, seed=0)
    assert dist.mean == pytest.approx(0.5, abs=0.02)
    assert dist.mean_stderr < 0.01


@pytest.mark.slow
def test_hd_anchors_full_scale():
    inter = interround_hd(PopConfig(first_layer_stages=2, rounds=5), 1000, 500, seed=0)
    assert inter.value[0] == pytest.approx(0.36, abs=0.02)
    assert inter.stderr.max() < 0.005
    # the additive-delay model settles near 0.285 for rounds (4,5); silicon reads 0.24
    assert inter.value[3] == pytest.approx(0.285, abs=0.015)
    assert inter.value[3] < inter.value[0]
    cross = cross_challenge_hd(PopConfig(first_layer_stages=2), (1, 2, 4, 8), 1000, 500, seed=0)
    assert cross.value.tolist() == pytest.approx([0.36, 0.30, 0.25, 0.22], abs=0.02)


@pytest.mark.slow
def test_hd_large_first_layer_stays_random():
    inter = interround_hd(PopConfig(first_layer_stages=24, rounds=5), 1000, 100, seed=0)
    assert inter.value.tolist() == pytest.approx([0.5] * 4, abs=0.01)
    cross = cross_challenge_hd(PopConfig(first_layer_stages=24), (1, 2, 4, 8), 1000, 100, seed=0)
    assert cross.value.tolist() == pytest.approx([0.5] * 4, abs=0.01)
