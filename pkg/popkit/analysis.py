"""
Security analytics on noiseless model responses.

- Probability of output change (strict avalanche): response(c) vs
  response(c XOR e) for mismatch patterns e of hamming weight 1 or 2.
- Stage bias: the (2, CW) matrix of P(r = 1 XOR p_j(c) | c_j = t),
  accumulated exactly as the stage-walk algorithm prescribes.
- Hamming distance of first-layer (intermediate) responses across rounds
  and across challenges.
"""
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from numpy.typing import NDArray

from .apuf import (
    ApufInstance,
    Bits,
    StageModel,
    all_challenges,
    as_challenges,
    evaluate,
    features,
    new_instance,
    random_challenges,
)
from .engine import derive_rng, derive_seed, engine
from .errors import ParameterError
from .pop import PopConfig, PopInstance, build_pop, trace_rounds

log = structlog.get_logger()

Evaluator = Callable[[Bits], Bits]


@dataclass(frozen=True, eq=False)
class Curve:
    """Estimates over an x axis (shifts, round pairs, round counts)."""
    x: NDArray
    value: NDArray[np.float64]
    stderr: NDArray[np.float64]

    def mean(self) -> float:
        return float(np.mean(self.value))


# =============================================================================
# PROBABILITY OF OUTPUT CHANGE
# =============================================================================

def shift_range(size: int, hw: int, wrap: bool = False) -> range:
    if hw == 1:
        return range(size)
    if hw == 2:
        if size < 2:
            raise ParameterError("size", "hamming weight 2 needs at least 2 stages")
        return range(size if wrap else size - 1)
    raise ParameterError("hw", f"hamming weight must be 1 or 2, got {hw}")


def last_stage_shift(size: int) -> int:
    """
    Shift reported as the last APUF stage: n-2, the end of the axis both
    hamming weights share. Toggling c_{n-1} mirrors the whole accumulated
    difference rather than one stage's share of it.
    """
    if size < 2:
        raise ParameterError("size", "needs at least 2 stages")
    return size - 2


def mismatch_pattern(size: int, hw: int, shift: int, wrap: bool = False) -> Bits:
    """Single bit at `shift`, or two adjacent bits starting at `shift`."""
    if shift not in shift_range(size, hw, wrap):
        raise ParameterError("shift", f"shift {shift} invalid for size {size}, hw {hw}")
    e = np.zeros(size, dtype=np.uint8)
    e[shift] = 1
    if hw == 2:
        e[(shift + 1) % size] = 1
    return e


def weight_variances(size: int, model: StageModel) -> NDArray[np.float64]:
    """Per-weight variance in units of stage_sigma**2."""
    if StageModel(model) is StageModel.LINEAR:
        return np.ones(size + 1)
    var = np.full(size + 1, 2.0)
    var[0] = var[-1] = 1.0
    return var


def _negated(e: Bits) -> NDArray[np.bool_]:
    """phi_i changes sign under c -> c XOR e iff the suffix parity of e at i is odd."""
    suffix = np.cumsum(e[::-1])[::-1] % 2
    return np.append(suffix.astype(bool), False)


def sac_analytic(size: int, hw: int, shift: int, model: StageModel = StageModel.DELAY,
                 wrap: bool = False) -> float:
    """
    Population value over random instances and challenges. The negated and
    kept parts of the delay sum are independent zero-mean Gaussians given
    the challenge, so P(change) = P(|neg| > |kept|) = 2/pi * atan(sd_neg / sd_kept).
    """
    var = weight_variances(size, model)
    mask = _negated(mismatch_pattern(size, hw, shift, wrap))
    neg, kept = var[mask].sum(), var[~mask].sum()
    if kept == 0:
        return 1.0
    return 2 / math.pi * math.atan(math.sqrt(neg / kept))


def _responses(challenges: Bits, weights: NDArray[np.float64]) -> NDArray[np.bool_]:
    """Noiseless responses for every (challenge, instance) pair, shape (N, I)."""
    return features(challenges).astype(np.float64) @ weights.T < 0


def sac_exact(inst: ApufInstance, hw: int, shift: int, wrap: bool = False) -> float:
    """Exhaustive probability of output change for one instance."""
    challenges = all_challenges(inst.n_stages)
    e = mismatch_pattern(inst.n_stages, hw, shift, wrap)
    base = np.asarray(evaluate(inst, challenges))
    return float(np.mean(base != np.asarray(evaluate(inst, challenges ^ e))))


def sac_curve(
    apuf_size: int,
    hw: int,
    n_instances: int = 100,
    n_challenges: int = 10_000,
    seed: int = 0,
    model: StageModel = StageModel.DELAY,
    wrap: bool = False,
    exhaustive: bool = False,
    stage_sigma: float = 1.0,
) -> Curve:
    """
    Fraction of (instance, challenge) pairs whose response changes, per
    mismatch-pattern shift. All instances answer the same challenge set;
    `exhaustive` replaces it with every challenge of the width.
    """
    shifts = shift_range(apuf_size, hw, wrap)
    if n_instances < 1:
        raise ParameterError("instances", f"must be at least 1, got {n_instances}")
    if not exhaustive and n_challenges < 1:
        raise ParameterError("challenges", f"must be at least 1, got {n_challenges}")
    log.info("sac.start", size=apuf_size, hw=hw, instances=n_instances,
             challenges="all" if exhaustive else n_challenges)

    weights = np.stack([
        new_instance(apuf_size, stage_sigma, derive_seed(seed, "sac-instance", i), model).weights
        for i in range(n_instances)
    ])
    if exhaustive:
        challenges = all_challenges(apuf_size)
    else:
        challenges = random_challenges(derive_rng(seed, "sac-challenges"), n_challenges, apuf_size)
    base = _responses(challenges, weights)

    def at_shift(shift: int) -> NDArray[np.float64]:
        flipped = challenges ^ mismatch_pattern(apuf_size, hw, shift, wrap)
        return np.mean(_responses(flipped, weights) != base, axis=0)

    per_instance = np.stack(engine.map(at_shift, shifts))  # (shifts, instances)
    prob = per_instance.mean(axis=1)
    if n_instances > 1:
        # instance-to-instance spread dominates the sampling error
        stderr = per_instance.std(axis=1, ddof=1) / math.sqrt(n_instances)
    else:
        stderr = np.sqrt(prob * (1 - prob) / len(challenges))
    return Curve(np.array(list(shifts)), prob, stderr)


def sac_mean(apuf_size: int, hw: int = 2, **kwargs) -> float:
    return sac_curve(apuf_size, hw, **kwargs).mean()


# =============================================================================
# STAGE BIAS
# =============================================================================

@dataclass(frozen=True, eq=False)
class StageBiasMatrix:
    """
    y[t, j]: P(r = 1 XOR p_j(c) | c_j = t); n[t, j]: challenges counted.
    Entries with n = 0 are absent and hold NaN.
    """
    y: NDArray[np.float64]
    n: NDArray[np.int64]

    @classmethod
    def finalize(cls, sums: NDArray[np.float64], counts: NDArray[np.int64]) -> "StageBiasMatrix":
        with np.errstate(invalid="ignore", divide="ignore"):
            y = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        return cls(y, counts)

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def nc(self) -> int:
        return int(self.n[:, 0].sum())

    @property
    def absent(self) -> NDArray[np.bool_]:
        return self.n == 0

    def values(self) -> NDArray[np.float64]:
        return self.y[~self.absent]


def stage_walk(challenges: Bits) -> Iterator[Tuple[int, Bits, Bits]]:
    """
    Inner loop of the stage bias algorithm for a batch of challenges.
    p starts as the XOR of all bits; at stage j it is updated with t = c[j]
    and then equals p_j(c). Yields (j, t, p).
    """
    challenges = as_challenges(challenges)
    p = np.bitwise_xor.reduce(challenges, axis=-1)
    for j in range(challenges.shape[-1]):
        t = challenges[..., j]
        p = p ^ t
        yield j, t, p


def stage_bias(
    evaluator: Evaluator,
    cw: int,
    nc: Optional[int] = None,
    seed: int = 0,
    exhaustive: bool = False,
) -> StageBiasMatrix:
    """
    Stage bias of a challenge -> bit evaluator of width cw. Uses nc uniform
    random challenges, or every challenge when `exhaustive`.
    """
    if exhaustive:
        challenges = all_challenges(cw)
    else:
        if nc is None or nc < 1:
            raise ParameterError("crps", f"need at least one challenge, got {nc}")
        challenges = random_challenges(np.random.default_rng(seed), nc, cw)
    r = np.asarray(evaluator(challenges), dtype=np.uint8)
    if r.shape != (len(challenges),):
        raise ParameterError("evaluator", f"expected {len(challenges)} responses, got {r.shape}")

    sums = np.zeros((2, cw))
    counts = np.zeros((2, cw), dtype=np.int64)
    for j, t, p in stage_walk(challenges):
        hit = r ^ p
        ones = t.astype(bool)
        sums[1, j] += np.count_nonzero(hit[ones])
        sums[0, j] += np.count_nonzero(hit[~ones])
        counts[1, j] += np.count_nonzero(ones)
        counts[0, j] += len(t) - np.count_nonzero(ones)
    return StageBiasMatrix.finalize(sums, counts)


@dataclass(frozen=True, eq=False)
class BiasDistribution:
    samples: NDArray[np.float64]  # (instances, 2, size)

    @property
    def entries(self) -> NDArray[np.float64]:
        flat = self.samples.ravel()
        return flat[np.isfinite(flat)]

    @property
    def mean(self) -> float:
        return float(self.entries.mean())

    @property
    def std(self) -> float:
        return float(self.entries.std())

    @property
    def instance_means(self) -> NDArray[np.float64]:
        return np.nanmean(self.samples.reshape(len(self.samples), -1), axis=1)

    @property
    def mean_stderr(self) -> float:
        """Spread of the per-instance means over sqrt(instances)."""
        means = self.instance_means
        if len(means) < 2:
            return float("nan")
        return float(means.std(ddof=1) / math.sqrt(len(means)))

    def histogram(self, bins: int = 20) -> Tuple[NDArray, NDArray]:
        return np.histogram(self.entries, bins=bins, range=(0.0, 1.0))


def stage_bias_distribution(
    apuf_size: int,
    n_instances: int = 100,
    n_crps: int = 3000,
    seed: int = 0,
    model: StageModel = StageModel.DELAY,
    exhaustive: bool = False,
) -> BiasDistribution:
    """Stage bias matrices of fresh instances, pooled."""
    if n_instances < 1:
        raise ParameterError("instances", f"must be at least 1, got {n_instances}")
    log.info("stage_bias.start", size=apuf_size, instances=n_instances,
             crps="all" if exhaustive else n_crps)

    def one(index: int) -> NDArray[np.float64]:
        inst = new_instance(apuf_size, 1.0, derive_seed(seed, "bias-instance", index), model)
        matrix = stage_bias(lambda c: evaluate(inst, c), apuf_size, n_crps,
                            derive_seed(seed, "bias-challenges", index), exhaustive)
        return matrix.y

    return BiasDistribution(np.stack(engine.map(one, range(n_instances))))


# =============================================================================
# HAMMING DISTANCE OF INTERMEDIATE RESPONSES
# =============================================================================

def round_distances(pop: PopInstance, challenges: Bits, rounds: int) -> NDArray[np.float64]:
    """Mean normalized HD between the responses of round r and r+1, r = 1..rounds-1."""
    trace = trace_rounds(pop, challenges, rounds)
    return np.array([np.mean(trace[r] != trace[r + 1]) for r in range(rounds - 1)])


def challenge_pair_distance(pop: PopInstance, a: Bits, b: Bits,
                            rounds: Sequence[int]) -> NDArray[np.float64]:
    """Mean normalized HD between first-layer responses to a and b after each R in rounds."""
    deepest = max(rounds)
    ta, tb = trace_rounds(pop, a, deepest), trace_rounds(pop, b, deepest)
    return np.array([np.mean(ta[r - 1] != tb[r - 1]) for r in rounds])


def _over_instances(values: List[NDArray[np.float64]]) -> Tuple[NDArray, NDArray]:
    stack = np.stack(values)
    if len(stack) < 2:
        return stack[0], np.zeros(stack.shape[1])
    return stack.mean(axis=0), stack.std(axis=0, ddof=1) / math.sqrt(len(stack))


def interround_hd(
    config: PopConfig,
    n_challenges: int = 1000,
    n_instances: int = 100,
    seed: int = 0,
) -> Curve:
    """Distance between consecutive rounds for the same challenge; x holds pair (r, r+1) as r."""
    if config.rounds < 2:
        raise ParameterError("rounds", f"need at least 2 rounds, got {config.rounds}")
    log.info("hd.interround", size=config.first_layer_stages, rounds=config.rounds,
             instances=n_instances, challenges=n_challenges)

    def one(index: int) -> NDArray[np.float64]:
        pop = build_pop(config.replace(master_seed=derive_seed(seed, "hd-instance", index)))
        challenges = random_challenges(derive_rng(seed, "hd-challenges", index),
                                       n_challenges, config.width)
        return round_distances(pop, challenges, config.rounds)

    value, stderr = _over_instances(engine.map(one, range(n_instances)))
    return Curve(np.arange(1, config.rounds), value, stderr)


def cross_challenge_hd(
    config: PopConfig,
    rounds: Sequence[int] = (1, 2, 4, 8),
    n_pairs: int = 1000,
    n_instances: int = 100,
    seed: int = 0,
) -> Curve:
    """Distance between first-layer responses of independent random challenges after R rounds."""
    if not rounds or min(rounds) < 1:
        raise ParameterError("rounds", f"round counts must be positive, got {list(rounds)}")
    log.info("hd.cross", size=config.first_layer_stages, rounds=list(rounds),
             instances=n_instances, pairs=n_pairs)

    def one(index: int) -> NDArray[np.float64]:
        pop = build_pop(config.replace(master_seed=derive_seed(seed, "hd-instance", index)))
        rng = derive_rng(seed, "hd-pairs", index)
        a = random_challenges(rng, n_pairs, config.width)
        b = random_challenges(rng, n_pairs, config.width)
        return challenge_pair_distance(pop, a, b, rounds)

    value, stderr = _over_instances(engine.map(one, range(n_instances)))
    return Curve(np.array(list(rounds)), value, stderr)
