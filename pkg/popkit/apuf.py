"""
Arbiter PUF - linear additive-delay model.

A challenge c of n bits maps to the feature vector phi with
phi_i = prod_{j>=i} (1 - 2 c_j) and phi_n = 1. The delay difference is
weights . phi and the arbiter latches r = 1 iff the (noisy) difference is
negative. Every function accepts a single challenge (n,) or a batch (N, n).
"""
import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import structlog
from numpy.typing import ArrayLike, NDArray

from .errors import ParameterError, WidthMismatchError

log = structlog.get_logger()

Bits = NDArray[np.uint8]
Response = Union[int, Bits]

MAX_ENUMERATION_WIDTH = 20

# Default evaluation noise as a fraction of stage_sigma
NOISE_RATIO = 0.1


class StageModel(str, enum.Enum):
    """How stage randomness is folded into the weight vector."""
    LINEAR = "linear"  # n+1 i.i.d. Normal weights
    DELAY = "delay"    # four Normal delays per stage, reduced to n+1 weights


@dataclass(frozen=True, eq=False)
class ApufInstance:
    """Immutable arbiter PUF. weights[-1] is the arbiter offset term."""
    n_stages: int
    weights: NDArray[np.float64] = field(repr=False)
    instance_seed: int = 0
    stage_sigma: float = 1.0
    model: StageModel = StageModel.LINEAR

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.shape != (self.n_stages + 1,):
            raise ParameterError(
                "weights", f"expected length {self.n_stages + 1}, got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ParameterError("weights", "must be finite")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_weights(cls, weights: ArrayLike) -> "ApufInstance":
        w = np.asarray(weights, dtype=np.float64)
        return cls(n_stages=len(w) - 1, weights=w, instance_seed=-1)

    @property
    def width(self) -> int:
        return self.n_stages

    def describe(self) -> dict:
        """Regeneration triple plus the stage model."""
        return {
            "kind": "apuf",
            "n_stages": self.n_stages,
            "stage_sigma": self.stage_sigma,
            "instance_seed": self.instance_seed,
            "model": self.model.value,
        }


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian added to the delay difference at every evaluation."""
    sigma_noise: float = 0.0
    eval_seed: int = 0

    def __post_init__(self):
        if not self.sigma_noise >= 0:
            raise ParameterError("noise", f"sigma_noise must be >= 0, got {self.sigma_noise}")

    @classmethod
    def relative(cls, stage_sigma: float, eval_seed: int = 0,
                 ratio: float = NOISE_RATIO) -> "NoiseModel":
        """sigma_noise = ratio * stage_sigma."""
        return cls(ratio * stage_sigma, eval_seed)

    @property
    def noiseless(self) -> bool:
        return self.sigma_noise == 0

    def stream(self) -> np.random.Generator:
        return np.random.default_rng(self.eval_seed)

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel(self.sigma_noise * factor, self.eval_seed)


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class TmvConfig:
    """Temporal majority voting: odd number of repeated evaluations."""
    votes: int = 1

    def __post_init__(self):
        if self.votes < 1 or self.votes % 2 == 0:
            raise ParameterError("votes", f"must be a positive odd integer, got {self.votes}")


SINGLE_VOTE = TmvConfig(1)


# =============================================================================
# INSTANCES
# =============================================================================

def new_instance(
    n_stages: int,
    stage_sigma: float = 1.0,
    instance_seed: int = 0,
    model: StageModel = StageModel.LINEAR,
) -> ApufInstance:
    """Draw a fresh instance; identical arguments give identical weights."""
    if n_stages < 1:
        raise ParameterError("n_stages", f"must be at least 1, got {n_stages}")
    if not stage_sigma > 0:
        raise ParameterError("stage_sigma", f"must be positive, got {stage_sigma}")
    if instance_seed < 0:
        raise ParameterError("seed", f"must be non-negative, got {instance_seed}")
    model = StageModel(model)
    rng = np.random.default_rng(instance_seed)

    if model is StageModel.LINEAR:
        weights = rng.normal(0.0, stage_sigma, n_stages + 1)
    else:
        # columns: straight top, straight bottom, crossed top, crossed bottom
        d = rng.normal(0.0, stage_sigma, (n_stages, 4))
        alpha = (d[:, 0] - d[:, 1] + d[:, 2] - d[:, 3]) / 2
        beta = (d[:, 0] - d[:, 1] - d[:, 2] + d[:, 3]) / 2
        weights = np.zeros(n_stages + 1)
        weights[:-1] += alpha
        weights[1:] += beta

    return ApufInstance(n_stages, weights, instance_seed, stage_sigma, model)


# =============================================================================
# CHALLENGES
# =============================================================================

def as_challenges(c: ArrayLike, width: Optional[int] = None) -> Bits:
    """Validate challenge bits (last axis is the challenge word) as uint8."""
    bits = np.asarray(c)
    if bits.ndim < 1 or bits.shape[-1] == 0:
        raise ParameterError("challenge", f"expected shape (..., W), got {bits.shape}")
    if width is not None and bits.shape[-1] != width:
        raise WidthMismatchError(width, bits.shape[-1])
    if bits.dtype != np.uint8:
        if not np.all((bits == 0) | (bits == 1)):
            raise ParameterError("challenge", "bits must be 0 or 1")
        bits = bits.astype(np.uint8)
    elif bits.size and bits.max() > 1:
        raise ParameterError("challenge", "bits must be 0 or 1")
    return bits


def random_challenges(rng: np.random.Generator, count: int, width: int) -> Bits:
    return rng.integers(0, 2, size=(count, width), dtype=np.uint8)


def all_challenges(width: int) -> Bits:
    """Every challenge of the given width in counting order, c_0 most significant."""
    if not 1 <= width <= MAX_ENUMERATION_WIDTH:
        raise ParameterError("width", f"enumeration needs 1 <= width <= {MAX_ENUMERATION_WIDTH}")
    values = np.arange(2 ** width, dtype=np.uint32)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint32)
    return ((values[:, None] >> shifts) & 1).astype(np.uint8)


def features(c: ArrayLike) -> NDArray[np.int8]:
    """phi_i = prod_{j=i}^{n-1} (1 - 2 c_j) for i < n, phi_n = 1."""
    bits = as_challenges(c)
    signs = 1 - 2 * bits.astype(np.int8)
    phi = np.ones(bits.shape[:-1] + (bits.shape[-1] + 1,), dtype=np.int8)
    phi[..., :-1] = np.cumprod(signs[..., ::-1], axis=-1, dtype=np.int8)[..., ::-1]
    return phi


def parity(c: ArrayLike, i: int) -> Response:
    """p_i(c): XOR of c_{i+1} .. c_{n-1}; p_{n-1} = 0."""
    bits = as_challenges(c)
    n = bits.shape[-1]
    if not 0 <= i < n:
        raise ParameterError("stage", f"index {i} outside 0..{n - 1}")
    p = np.bitwise_xor.reduce(bits[..., i + 1:], axis=-1) if i + 1 < n else np.zeros(
        bits.shape[:-1], dtype=np.uint8)
    return int(p) if bits.ndim == 1 else p.astype(np.uint8)


def parities(c: ArrayLike) -> Bits:
    """All p_i at once, shape (..., n)."""
    bits = as_challenges(c)
    suffix = np.cumsum(bits[..., ::-1], axis=-1, dtype=np.int64)[..., ::-1] % 2
    out = np.zeros_like(bits)
    out[..., :-1] = suffix[..., 1:]
    return out


# =============================================================================
# EVALUATION
# =============================================================================

def delay_difference(inst: ApufInstance, c: ArrayLike) -> Union[float, NDArray[np.float64]]:
    bits = as_challenges(c, inst.n_stages)
    delta = features(bits) @ inst.weights
    return float(delta) if bits.ndim == 1 else delta


def decide(
    delta: NDArray[np.float64],
    noise: NoiseModel,
    tmv: TmvConfig,
    rng: Optional[np.random.Generator] = None,
) -> Bits:
    """
    Arbiter decision with TMV on an array of delay differences of any shape.
    Each vote draws an independent noise sample per element.

    Without rng the draws come from a fresh noise.stream(), so repeated
    calls replay the same noise. Pass one generator to get independent
    re-evaluations.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if noise.noiseless:
        return (delta < 0).astype(np.uint8)
    rng = rng if rng is not None else noise.stream()
    if tmv.votes == 1:
        return (delta + rng.normal(0.0, noise.sigma_noise, delta.shape) < 0).astype(np.uint8)
    draws = rng.normal(0.0, noise.sigma_noise, (tmv.votes,) + delta.shape)
    ones = np.count_nonzero(delta + draws < 0, axis=0)
    return (ones > tmv.votes // 2).astype(np.uint8)


def _shape_response(bits: Bits, single: bool) -> Response:
    return int(bits) if single else bits


def evaluate(
    inst: ApufInstance,
    c: ArrayLike,
    noise: NoiseModel = NOISELESS,
    rng: Optional[np.random.Generator] = None,
) -> Response:
    """
    Single noisy evaluation. rng defaults to a fresh stream from
    noise.eval_seed: two calls without rng return the same bits.
    """
    bits = as_challenges(c, inst.n_stages)
    delta = np.atleast_1d(features(bits) @ inst.weights)
    out = decide(delta, noise, SINGLE_VOTE, rng)
    return _shape_response(out[0] if bits.ndim == 1 else out, bits.ndim == 1)


def evaluate_tmv(
    inst: ApufInstance,
    c: ArrayLike,
    noise: NoiseModel = NOISELESS,
    tmv: TmvConfig = SINGLE_VOTE,
    rng: Optional[np.random.Generator] = None,
) -> Response:
    """Majority of tmv.votes independent evaluations."""
    bits = as_challenges(c, inst.n_stages)
    delta = np.atleast_1d(features(bits) @ inst.weights)
    out = decide(delta, noise, tmv, rng)
    return _shape_response(out[0] if bits.ndim == 1 else out, bits.ndim == 1)
