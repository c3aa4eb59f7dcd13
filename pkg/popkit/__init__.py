"""popkit - PUF-on-PUF simulation and security assessment"""
from .apuf import (
    ApufInstance,
    NoiseModel,
    StageModel,
    TmvConfig,
    evaluate,
    evaluate_tmv,
    new_instance,
)
from .crp import CrpSet, generate_crps, read_crps, write_crps
from .engine import derive_seed, engine
from .pop import PopConfig, PopInstance, build_pop, evaluate_pop

__version__ = "1.0.0"

__all__ = [
    'ApufInstance', 'NoiseModel', 'StageModel', 'TmvConfig', 'evaluate', 'evaluate_tmv',
    'new_instance', 'PopConfig', 'PopInstance', 'build_pop', 'evaluate_pop',
    'CrpSet', 'generate_crps', 'read_crps', 'write_crps', 'derive_seed', 'engine',
]
