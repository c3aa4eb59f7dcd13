"""
PUF-on-PUF composition.

W first-layer APUFs of k stages each read the challenge register at
offset i (wrapping around the word). Their W response bits reload the
register for the next round; after the last round the register is the
challenge of the single W-stage second-layer APUF. TMV applies to every
APUF evaluation, never to the composition as a whole.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike, NDArray

from .apuf import (
    NOISELESS,
    ApufInstance,
    Bits,
    NoiseModel,
    Response,
    StageModel,
    TmvConfig,
    as_challenges,
    decide,
    evaluate_tmv,
    features,
    new_instance,
)
from .engine import derive_seed
from .errors import ParameterError

log = structlog.get_logger()


@dataclass(frozen=True)
class PopConfig:
    width: int = 64
    first_layer_stages: int = 8
    rounds: int = 1
    tmv: TmvConfig = TmvConfig(15)
    stage_sigma: float = 1.0
    master_seed: int = 0
    stage_model: StageModel = StageModel.DELAY

    def __post_init__(self):
        if self.width < 1:
            raise ParameterError("width", f"must be positive, got {self.width}")
        if not 1 <= self.first_layer_stages <= self.width:
            raise ParameterError(
                "size", f"first-layer stages must be in 1..{self.width}, "
                        f"got {self.first_layer_stages}")
        if self.rounds < 1:
            raise ParameterError("rounds", f"must be at least 1, got {self.rounds}")
        if not self.stage_sigma > 0:
            raise ParameterError("stage_sigma", f"must be positive, got {self.stage_sigma}")
        if self.master_seed < 0:
            raise ParameterError("seed", f"must be non-negative, got {self.master_seed}")
        object.__setattr__(self, "stage_model", StageModel(self.stage_model))

    @property
    def label(self) -> str:
        """Short name for report tables, e.g. 8-APUF-POP."""
        return f"{self.first_layer_stages}-APUF-POP"

    def replace(self, **changes) -> "PopConfig":
        return dataclasses.replace(self, **changes)

    def describe(self) -> dict:
        return {
            "kind": "pop",
            "width": self.width,
            "first_layer_stages": self.first_layer_stages,
            "rounds": self.rounds,
            "votes": self.tmv.votes,
            "stage_sigma": self.stage_sigma,
            "master_seed": self.master_seed,
            "stage_model": self.stage_model.value,
        }

    @classmethod
    def from_description(cls, d: dict) -> "PopConfig":
        return cls(
            width=int(d["width"]),
            first_layer_stages=int(d["first_layer_stages"]),
            rounds=int(d["rounds"]),
            tmv=TmvConfig(int(d["votes"])),
            stage_sigma=float(d["stage_sigma"]),
            master_seed=int(d["master_seed"]),
            stage_model=StageModel(d["stage_model"]),
        )


@dataclass(frozen=True, eq=False)
class PopInstance:
    config: PopConfig
    first_layer: Tuple[ApufInstance, ...]
    second_layer: ApufInstance
    layer_weights: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.config
        if len(self.first_layer) != cfg.width:
            raise ParameterError(
                "first_layer", f"expected {cfg.width} instances, got {len(self.first_layer)}")
        if any(a.n_stages != cfg.first_layer_stages for a in self.first_layer):
            raise ParameterError("first_layer", "all first-layer APUFs must have the same size")
        if self.second_layer.n_stages != cfg.width:
            raise ParameterError(
                "second_layer", f"expected {cfg.width} stages, got {self.second_layer.n_stages}")
        stacked = np.stack([a.weights for a in self.first_layer])
        stacked.setflags(write=False)
        object.__setattr__(self, "layer_weights", stacked)

    @property
    def width(self) -> int:
        return self.config.width

    def describe(self) -> dict:
        return self.config.describe()


def build_pop(config: PopConfig) -> PopInstance:
    """
    Instance i of the first layer uses derive_seed(master_seed, "L1", i);
    the second layer uses derive_seed(master_seed, "L2", 0).
    """
    first = tuple(
        new_instance(config.first_layer_stages, config.stage_sigma,
                     derive_seed(config.master_seed, "L1", i), config.stage_model)
        for i in range(config.width)
    )
    second = new_instance(config.width, config.stage_sigma,
                          derive_seed(config.master_seed, "L2", 0), config.stage_model)
    return PopInstance(config, first, second)


# =============================================================================
# WIRING
# =============================================================================

def wiring(i: int, k: int, width: int) -> List[int]:
    """Challenge-bit indices read by first-layer instance i."""
    if not 0 <= i < width:
        raise ParameterError("index", f"instance index {i} outside 0..{width - 1}")
    if not 1 <= k <= width:
        raise ParameterError("size", f"k must be in 1..{width}, got {k}")
    return [(i + j) % width for j in range(k)]


def wiring_matrix(k: int, width: int) -> NDArray[np.intp]:
    """Row i is wiring(i, k, width)."""
    if not 1 <= k <= width:
        raise ParameterError("size", f"k must be in 1..{width}, got {k}")
    return (np.arange(width)[:, None] + np.arange(k)[None, :]) % width


# =============================================================================
# EVALUATION
# =============================================================================

def first_layer_eval(
    pop: PopInstance,
    c: ArrayLike,
    noise: NoiseModel = NOISELESS,
    rng: Optional[np.random.Generator] = None,
) -> Bits:
    """One round: bit i is APUF_i (with TMV) on its wired slice of c."""
    bits = as_challenges(c, pop.width)
    cfg = pop.config
    sub = bits[..., wiring_matrix(cfg.first_layer_stages, cfg.width)]
    delta = np.einsum("...wk,wk->...w", features(sub), pop.layer_weights)
    return decide(delta, noise, cfg.tmv, rng)


def trace_rounds(
    pop: PopInstance,
    c: ArrayLike,
    rounds: Optional[int] = None,
    noise: NoiseModel = NOISELESS,
    rng: Optional[np.random.Generator] = None,
) -> Bits:
    """Register contents after every round, shape (R,) + c.shape."""
    rounds = pop.config.rounds if rounds is None else rounds
    if rounds < 1:
        raise ParameterError("rounds", f"must be at least 1, got {rounds}")
    if rng is None and not noise.noiseless:
        rng = noise.stream()
    register = as_challenges(c, pop.width)
    trace = []
    for _ in range(rounds):
        register = first_layer_eval(pop, register, noise, rng)
        trace.append(register)
    return np.stack(trace)


def evaluate_pop(
    pop: PopInstance,
    c: ArrayLike,
    noise: NoiseModel = NOISELESS,
    rng: Optional[np.random.Generator] = None,
) -> Response:
    """Run the configured rounds, then the second layer on the final register."""
    if rng is None and not noise.noiseless:
        rng = noise.stream()
    register = trace_rounds(pop, c, noise=noise, rng=rng)[-1]
    return evaluate_tmv(pop.second_layer, register, noise, pop.config.tmv, rng)
