"""
Strong-PUF quality metrics and authentication failure simulation.

uniformity, uniqueness and BER follow their usual definitions (normalized
hamming weight, mean pairwise normalized hamming distance, mismatch ratio
against enrolled responses). Authentication succeeds when at least
`threshold` of n_crps responses are correct, with the threshold set
`margin` below (1 - BER) and rounded up.
"""
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike
from scipy.stats import binom

from .apuf import NoiseModel, random_challenges
from .crp import Target, respond
from .engine import derive_rng, engine
from .errors import ParameterError

log = structlog.get_logger()

# Guards ceil() against representation error, e.g. 0.85 * 200 = 170.00000000000003
_ROUNDING_SLACK = 1e-9


def mc_stderr(p: float, n: int) -> float:
    """Binomial standard error of a proportion estimated from n samples."""
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n > 0 else float("nan")


def _bits(x: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.size == 0:
        raise ParameterError(name, "must not be empty")
    return arr.astype(np.uint8)


# =============================================================================
# QUALITY METRICS
# =============================================================================

def uniformity(responses: ArrayLike) -> float:
    return float(_bits(responses, "responses").mean())


def hamming_distance(a: ArrayLike, b: ArrayLike) -> float:
    """Normalized hamming distance of two equal-length bit vectors."""
    a, b = _bits(a, "responses"), _bits(b, "responses")
    if a.shape != b.shape:
        raise ParameterError("responses", f"length mismatch {a.shape} vs {b.shape}")
    return float(np.count_nonzero(a != b) / a.size)


def uniqueness(instance_responses: Sequence[ArrayLike]) -> float:
    if len(instance_responses) < 2:
        raise ParameterError("instances", "uniqueness needs at least two instances")
    rows = [_bits(r, "responses") for r in instance_responses]
    if len({r.shape for r in rows}) != 1:
        raise ParameterError("responses", "all instances must answer the same challenge set")
    return float(np.mean([hamming_distance(a, b) for a, b in combinations(rows, 2)]))


def ber(enrolled: ArrayLike, reevaluations: Iterable[ArrayLike]) -> float:
    ref = _bits(enrolled, "enrolled")
    rows = [_bits(r, "reevaluations") for r in reevaluations]
    if not rows:
        raise ParameterError("reevaluations", "need at least one re-evaluation")
    if any(r.shape != ref.shape for r in rows):
        raise ParameterError("reevaluations", "length mismatch with enrolled responses")
    return float(np.mean([np.count_nonzero(r != ref) / ref.size for r in rows]))


def measure_ber(
    target: Target,
    n_crps: int,
    n_reevals: int,
    noise: NoiseModel,
    seed: int = 0,
) -> Tuple[float, float]:
    """
    Enroll one noisy evaluation of n_crps random challenges, then
    re-evaluate them n_reevals times. Returns (ber, stderr).
    """
    if n_crps < 1 or n_reevals < 1:
        raise ParameterError("crps", "n_crps and n_reevals must be positive")
    challenges = random_challenges(derive_rng(seed, "ber-challenges"), n_crps, target.width)
    enrolled = respond(target, challenges, noise, derive_rng(seed, "ber-enroll"))

    def reeval(index: int) -> np.ndarray:
        return respond(target, challenges, noise, derive_rng(seed, "ber-reeval", index))

    value = ber(enrolled, engine.map(reeval, range(n_reevals)))
    return value, mc_stderr(value, n_crps * n_reevals)


def worst_ber(
    target: Target,
    n_crps: int,
    n_reevals: int,
    noise: NoiseModel,
    noise_scales: Sequence[float] = (0.8, 1.0, 1.25),
    seed: int = 0,
) -> Tuple[float, float]:
    """Largest BER over a set of noise scalings (stand-in for a temperature set)."""
    results = [measure_ber(target, n_crps, n_reevals, noise.scaled(s), seed)
               for s in noise_scales]
    return max(results)


# =============================================================================
# AUTHENTICATION
# =============================================================================

@dataclass(frozen=True)
class AuthPolicy:
    n_crps: int
    ber_assumed: float
    margin: float = 0.05

    def __post_init__(self):
        if self.n_crps < 1:
            raise ParameterError("crps", f"must be at least 1, got {self.n_crps}")
        if not 0 <= self.ber_assumed < 1:
            raise ParameterError("ber", f"must be in [0, 1), got {self.ber_assumed}")
        if not 0 < self.threshold <= self.n_crps:
            raise ParameterError(
                "margin", f"threshold {self.threshold} outside 1..{self.n_crps}")

    @property
    def threshold(self) -> int:
        """Minimum number of correct responses."""
        raw = (1 - self.ber_assumed - self.margin) * self.n_crps
        return math.ceil(raw - _ROUNDING_SLACK)


def _check_ber(true_ber: float) -> None:
    if not 0 <= true_ber <= 1:
        raise ParameterError("ber", f"must be in [0, 1], got {true_ber}")


def auth_failure_exact(policy: AuthPolicy, true_ber: float) -> float:
    """P(correct < threshold) with correct ~ Binomial(n_crps, 1 - true_ber)."""
    _check_ber(true_ber)
    return float(binom.cdf(policy.threshold - 1, policy.n_crps, 1 - true_ber))


def auth_failure_prob(
    policy: AuthPolicy,
    true_ber: float,
    trials: int,
    seed: int = 0,
    block_size: int = 100_000,
) -> float:
    """Monte Carlo estimate over `trials` independent authentications."""
    _check_ber(true_ber)

    def failures(rng: np.random.Generator, n: int) -> int:
        correct = rng.binomial(policy.n_crps, 1 - true_ber, size=n)
        return int(np.count_nonzero(correct < policy.threshold))

    total = sum(engine.monte_carlo(failures, trials, seed, "auth", block_size))
    p = total / trials
    log.debug("auth.simulated", n_crps=policy.n_crps, ber=true_ber, trials=trials, failure=p)
    return p


def required_crps(
    ber_value: float,
    target_failure: float = 0.01,
    margin: float = 0.05,
    grid: Optional[Sequence[int]] = None,
) -> Optional[int]:
    """Smallest CRP count on the grid whose exact failure is at most target_failure."""
    grid = grid if grid is not None else range(50, 1001, 50)
    for n in grid:
        if auth_failure_exact(AuthPolicy(n, ber_value, margin), ber_value) <= target_failure:
            return n
    return None
