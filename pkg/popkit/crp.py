"""
CRP datasets: generation, persistence and train/test splitting.

On disk a set is two files: `<name>.json` (header) and `<name>.csv`
(body). The body has a `challenge,response` header row followed by one
record per line, `<hex challenge>,<0|1>`. The hex is big-endian with c_0
as the most significant bit, zero padded to ceil(W/4) digits.
"""
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field, ValidationError

from .apuf import (
    NOISELESS,
    ApufInstance,
    Bits,
    NoiseModel,
    StageModel,
    as_challenges,
    evaluate,
    new_instance,
    random_challenges,
)
from .engine import blocks, derive_rng, engine
from .errors import CrpFormatError, ParameterError
from .pop import PopConfig, PopInstance, build_pop, evaluate_pop

log = structlog.get_logger()

Target = Union[ApufInstance, PopInstance]

# Records per generation chunk. Fixed so output never depends on threading.
CHUNK = 8192
CSV_HEADER = "challenge,response"


class CrpHeader(BaseModel):
    width: int = Field(gt=0)
    count: int = Field(ge=0)
    generator: dict
    challenge_seed: int = Field(ge=0)
    sigma_noise: float = Field(ge=0)
    eval_seed: int = Field(ge=0)
    split: Optional[dict] = None


@dataclass(frozen=True)
class CrpRecord:
    challenge: Bits
    response: int


@dataclass(frozen=True, eq=False)
class CrpSet:
    header: CrpHeader
    challenges: Bits
    responses: Bits

    def __post_init__(self):
        if self.challenges.ndim != 2 or self.challenges.shape[1] != self.header.width:
            raise ParameterError("width", f"challenge matrix {self.challenges.shape} does not "
                                          f"match width {self.header.width}")
        if len(self.challenges) != len(self.responses) or len(self.responses) != self.header.count:
            raise ParameterError("count", "record count does not match header")

    def __len__(self) -> int:
        return len(self.responses)

    def __iter__(self) -> Iterator[CrpRecord]:
        return self.records()

    def records(self) -> Iterator[CrpRecord]:
        for c, r in zip(self.challenges, self.responses):
            yield CrpRecord(c, int(r))

    @property
    def width(self) -> int:
        return self.header.width

    def equals(self, other: "CrpSet") -> bool:
        return (
            self.header == other.header
            and np.array_equal(self.challenges, other.challenges)
            and np.array_equal(self.responses, other.responses)
        )

    def subset(self, index: np.ndarray, split: dict) -> "CrpSet":
        header = self.header.model_copy(update={"count": len(index), "split": split})
        return CrpSet(header, self.challenges[index], self.responses[index])


# =============================================================================
# GENERATION
# =============================================================================

def respond(
    target: Target,
    challenges: Bits,
    noise: NoiseModel = NOISELESS,
    rng: Optional[np.random.Generator] = None,
) -> Bits:
    """Batch responses of an APUF (plain evaluation) or a POP (full composition)."""
    if isinstance(target, PopInstance):
        return np.asarray(evaluate_pop(target, challenges, noise, rng), dtype=np.uint8)
    return np.asarray(evaluate(target, challenges, noise, rng), dtype=np.uint8)


def target_from_header(header: CrpHeader) -> Target:
    """Rebuild the generating APUF or POP from a persisted header."""
    gen = header.generator
    if gen.get("kind") == "pop":
        return build_pop(PopConfig.from_description(gen))
    if gen.get("kind") == "apuf":
        return new_instance(int(gen["n_stages"]), float(gen["stage_sigma"]),
                            int(gen["instance_seed"]), StageModel(gen["model"]))
    raise ParameterError("generator", f"unknown generator kind {gen.get('kind')!r}")


def generate_crps(
    target: Target,
    count: int,
    challenge_seed: int,
    noise: NoiseModel = NOISELESS,
) -> CrpSet:
    """
    Uniform random challenges and their responses. Chunk b draws challenges
    from derive_seed(challenge_seed, "challenges", b) and noise from
    derive_seed(eval_seed, "noise", b).
    """
    if count < 1:
        raise ParameterError("crps", f"count must be at least 1, got {count}")
    if challenge_seed < 0:
        raise ParameterError("seed", f"must be non-negative, got {challenge_seed}")
    width = target.width

    def chunk(item: Tuple[int, Tuple[int, int]]) -> Tuple[Bits, Bits]:
        index, (lo, hi) = item
        challenges = random_challenges(derive_rng(challenge_seed, "challenges", index),
                                       hi - lo, width)
        rng = None if noise.noiseless else derive_rng(noise.eval_seed, "noise", index)
        return challenges, respond(target, challenges, noise, rng)

    parts = engine.map(chunk, enumerate(blocks(count, CHUNK)))
    header = CrpHeader(
        width=width,
        count=count,
        generator=target.describe(),
        challenge_seed=challenge_seed,
        sigma_noise=noise.sigma_noise,
        eval_seed=noise.eval_seed,
    )
    crps = CrpSet(header, np.concatenate([p[0] for p in parts]),
                  np.concatenate([p[1] for p in parts]))
    log.info("crp.generated", count=count, width=width, kind=header.generator["kind"],
             mean_response=round(float(crps.responses.mean()), 4))
    return crps


# =============================================================================
# PERSISTENCE
# =============================================================================

def challenges_to_hex(challenges: Bits) -> list:
    width = challenges.shape[1]
    digits = (width + 3) // 4
    packed = np.packbits(challenges, axis=1)
    pad = packed.shape[1] * 8 - width
    return [f"{int.from_bytes(row.tobytes(), 'big') >> pad:0{digits}x}" for row in packed]


def hex_to_challenge(text: str, width: int) -> Bits:
    """Exactly ceil(width / 4) lowercase hex digits, as written by challenges_to_hex."""
    digits = (width + 3) // 4
    if not re.fullmatch(rf"[0-9a-f]{{{digits}}}", text):
        raise ValueError(f"expected {digits} lowercase hex digits, got {text!r}")
    value = int(text, 16)
    if value >> width:
        raise ValueError(f"value exceeds {width} bits")
    return np.frombuffer(format(value, f"0{width}b").encode(), dtype=np.uint8) - ord("0")


def _paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    base = Path(path)
    return base.with_suffix(".json"), base.with_suffix(".csv")


def write_crps(crps: CrpSet, path: Union[str, Path]) -> Tuple[Path, Path]:
    header_path, body_path = _paths(path)
    header_path.write_text(crps.header.model_dump_json(indent=2) + "\n")
    lines = [CSV_HEADER]
    lines.extend(f"{h},{int(r)}" for h, r in zip(challenges_to_hex(crps.challenges),
                                                  crps.responses))
    body_path.write_text("\n".join(lines) + "\n")
    log.info("crp.written", header=str(header_path), body=str(body_path), count=len(crps))
    return header_path, body_path


def read_crps(path: Union[str, Path]) -> CrpSet:
    header_path, body_path = _paths(path)
    try:
        header = CrpHeader.model_validate(json.loads(header_path.read_text()))
    except (json.JSONDecodeError, ValidationError) as e:
        raise CrpFormatError(str(header_path), 0, f"bad header: {e}") from e

    challenges, responses = [], []
    with body_path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if lineno == 1 and line == CSV_HEADER:
                continue
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise CrpFormatError(str(body_path), lineno,
                                     f"expected '<hex>,<0|1>', got {line!r}")
            try:
                challenges.append(hex_to_challenge(parts[0], header.width))
            except ValueError as e:
                raise CrpFormatError(str(body_path), lineno, f"bad challenge: {e}") from e
            responses.append(int(parts[1]))

    if len(responses) != header.count:
        raise CrpFormatError(str(body_path), len(responses) + 1,
                             f"header declares {header.count} records, body has {len(responses)}")
    matrix = (np.stack(challenges) if challenges
              else np.zeros((0, header.width), dtype=np.uint8))
    return CrpSet(header, matrix, np.asarray(responses, dtype=np.uint8))


# =============================================================================
# SPLITTING
# =============================================================================

def split(crps: CrpSet, fraction: float, seed: int) -> Tuple[CrpSet, CrpSet]:
    """
    Disjoint train/test partition with round(fraction * N) training records.
    Records keep their original order inside each part.
    """
    if not 0 < fraction < 1:
        raise ParameterError("fraction", f"must be in (0, 1), got {fraction}")
    n = len(crps)
    n_train = int(round(fraction * n))
    if n_train in (0, n):
        raise ParameterError("fraction", f"{fraction} of {n} records leaves an empty part")
    order = np.random.default_rng(seed).permutation(n)
    train_idx, test_idx = np.sort(order[:n_train]), np.sort(order[n_train:])
    meta = {"fraction": fraction, "seed": seed}
    return (crps.subset(train_idx, {**meta, "part": "train"}),
            crps.subset(test_idx, {**meta, "part": "test"}))


def as_crp_set(challenges: Bits, responses: Bits, generator: dict) -> CrpSet:
    """Wrap in-memory arrays (e.g. exhaustive enumerations) as a CrpSet."""
    challenges = as_challenges(challenges)
    header = CrpHeader(width=challenges.shape[1], count=len(challenges), generator=generator,
                       challenge_seed=0, sigma_noise=0.0, eval_seed=0)
    return CrpSet(header, np.atleast_2d(challenges), np.asarray(responses, dtype=np.uint8))
