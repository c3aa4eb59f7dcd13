"""
Experiment Configuration - Pydantic Settings
Flat, typed run parameters. Values come from CLI flags first, then an
optional dotenv-style file (KEY=value); the process environment is never read.
"""
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Type, Union

from dotenv import dotenv_values, set_key
from pydantic import ValidationError, field_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from .apuf import NoiseModel, StageModel, TmvConfig
from .attacks import LR_DEFAULTS, MLP_PRESETS, TrainConfig
from .errors import ParameterError
from .pop import PopConfig

# Not written by --save-config: they say where output goes, not what it is.
RUNTIME_ONLY = {"out", "verbose", "quiet"}


class ExperimentConfig(BaseSettings):
    model_config = SettingsConfigDict(extra="forbid", validate_default=True)

    # Run control
    seed: int = 0
    threads: int = 1
    out: Optional[Path] = None
    format: Literal["csv", "json"] = "csv"
    no_timestamp: bool = False
    verbose: bool = False
    quiet: bool = False

    # Instances
    kind: Optional[Literal["apuf", "pop"]] = None
    size: int = 64
    width: int = 64
    k: int = 8
    rounds: Optional[int] = None
    votes: int = 15
    sigma: float = 1.0
    stage_model: StageModel = StageModel.DELAY
    instance_seed: int = 0

    # Noise and measurement
    noise: Optional[float] = None
    eval_seed: int = 0
    crps: Optional[int] = None
    reevals: int = 100
    instances: Optional[int] = None
    challenges: Optional[int] = None
    trials: Optional[int] = None
    hw: int = 1
    wrap: bool = False
    exhaustive: bool = False
    hd_mode: Literal["interround", "cross"] = "interround"
    input: Optional[Path] = None

    # Authentication
    ber: float = 0.1
    true_ber: Optional[float] = None
    margin: float = 0.05

    # Training
    preset: Literal["desk", "full"] = "desk"
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    learning_rate: Optional[float] = None
    hidden: Optional[str] = None
    test_fraction: float = 0.1
    budget: Optional[float] = None

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    @field_validator("seed", "instance_seed", "eval_seed")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("threads", "size", "width", "k", "reevals")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("crps", "instances", "challenges", "trials", "epochs", "rounds", "batch_size")
    @classmethod
    def _positive_count(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("votes")
    @classmethod
    def _odd(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError("must be a positive odd integer")
        return v

    @field_validator("sigma")
    @classmethod
    def _positive_real(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator("budget")
    @classmethod
    def _budget(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator("noise")
    @classmethod
    def _noise(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v >= 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("ber", "margin")
    @classmethod
    def _fraction(cls, v: float) -> float:
        if not 0 <= v < 1:
            raise ValueError("must be in [0, 1)")
        return v

    @field_validator("true_ber")
    @classmethod
    def _probability(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not 0 <= v <= 1:
            raise ValueError("must be in [0, 1]")
        return v

    @field_validator("test_fraction")
    @classmethod
    def _open_fraction(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("must be in (0, 1)")
        return v

    @field_validator("hw")
    @classmethod
    def _hw(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError("must be 1 or 2")
        return v

    @field_validator("hidden")
    @classmethod
    def _hidden(cls, v: Optional[str]) -> Optional[str]:
        if v is None:
            return v
        try:
            sizes = [int(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise ValueError("must be comma-separated layer sizes") from None
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("must list at least one positive layer size")
        return ",".join(map(str, sizes))

    # =========================================================================
    # DERIVED
    # =========================================================================

    @property
    def timestamp(self) -> bool:
        return not self.no_timestamp

    @property
    def hidden_layers(self) -> Optional[Tuple[int, ...]]:
        return None if self.hidden is None else tuple(int(x) for x in self.hidden.split(","))

    @property
    def noise_model(self) -> NoiseModel:
        """--noise, or NOISE_RATIO x --sigma when it was not given."""
        if self.noise is None:
            return NoiseModel.relative(self.sigma, self.eval_seed)
        return NoiseModel(self.noise, self.eval_seed)

    @property
    def pop_config(self) -> PopConfig:
        return PopConfig(width=self.width, first_layer_stages=self.k, rounds=self.pick("rounds", 1),
                         tmv=TmvConfig(self.votes), stage_sigma=self.sigma,
                         master_seed=self.instance_seed, stage_model=self.stage_model)

    def pick(self, name: str, default: Any) -> Any:
        """Optional field, or the command's own default when it was not given."""
        value = getattr(self, name)
        return default if value is None else value

    def train_config(self, kind: Literal["lr", "mlp"]) -> TrainConfig:
        """Flags over the attack's defaults; the MLP defaults come from --preset."""
        base = LR_DEFAULTS if kind == "lr" else MLP_PRESETS[self.preset][0]
        return replace(
            base,
            epochs=self.pick("epochs", base.epochs),
            batch_size=self.pick("batch_size", base.batch_size),
            learning_rate=self.pick("learning_rate", base.learning_rate),
            hidden=self.pick("hidden_layers", base.hidden),
            test_fraction=self.test_fraction,
            budget_seconds=self.pick("budget", base.budget_seconds),
            seed=self.seed,
        )


def flag_name(field: str) -> str:
    return "--" + field.replace("_", "-")


def _read_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ParameterError("config", f"config file not found: {path}")
    values = dotenv_values(path)
    return {key.lower(): value for key, value in values.items() if value is not None}


def load_config(config_file: Optional[Union[str, Path]] = None, **flags: Any) -> ExperimentConfig:
    """
    Merge the config file with explicitly given flags (None means "not
    given"). Validation failures surface as ParameterError naming the flag.
    """
    merged = _read_file(config_file) if config_file is not None else {}
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        return ExperimentConfig(**merged)
    except ValidationError as e:
        err = e.errors()[0]
        field = str(err["loc"][0]) if err["loc"] else "config"
        if err["type"] == "extra_forbidden":
            raise ParameterError("config", f"unknown key {field.upper()!r}") from e
        raise ParameterError(field, err["msg"].removeprefix("Value error, ")) from e


def save_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    """Write every resolved field as KEY=value so the file re-runs the same experiment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("")
    for name, value in cfg.model_dump(mode="json", exclude=RUNTIME_ONLY).items():
        if value is None:
            continue
        set_key(str(path), name.upper(), str(value), quote_mode="never")
    return path
