"""
Experiments - Reproduce targets.
Each target runs one published measurement at configurable scale and
returns a report.Table. Defaults are the full-scale values; the CLI
overrides them with --instances / --challenges / --trials / --crps.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from . import analysis
from .apuf import (
    MAX_ENUMERATION_WIDTH,
    NoiseModel,
    StageModel,
    TmvConfig,
    new_instance,
    random_challenges,
)
from .attacks import DESK_MLP, LR_DEFAULTS, AttackReport, TrainConfig, run_attack
from .crp import respond
from .engine import derive_rng, derive_seed, engine
from .errors import ParameterError
from .metrics import (
    AuthPolicy,
    auth_failure_exact,
    auth_failure_prob,
    mc_stderr,
    measure_ber,
    required_crps,
    uniformity,
    uniqueness,
    worst_ber,
)
from .pop import PopConfig, build_pop
from .report import Table

log = structlog.get_logger()

SAC_SIZES = (24, 12, 8, 6, 4, 2)
BIAS_SIZES = (24, 8, 4, 2)
HD_SIZES = (2, 4, 6, 8, 12, 24)
AUTH_BERS = (0.1, 0.2, 0.3)
AUTH_GRID = tuple(range(50, 501, 50))
VOTE_LEVELS = (1, 7, 15, 31)


def _pooled_stderr(stderr: np.ndarray) -> float:
    """Standard error of the mean of independent estimates."""
    return float(math.sqrt(np.sum(np.square(stderr))) / len(stderr))


# =============================================================================
# AUTHENTICATION
# =============================================================================

def fig4(
    seed: int = 0,
    trials: int = 1_000_000,
    bers: Sequence[float] = AUTH_BERS,
    grid: Sequence[int] = AUTH_GRID,
    margin: float = 0.05,
    target_failure: float = 0.01,
) -> Table:
    """
    Authentication failure vs CRP count, Monte Carlo next to the exact tail.
    The meta block also names the smallest grid CRP count per BER whose
    exact failure is at most target_failure.
    """
    meta = {"target": "fig4", "seed": seed, "trials": trials, "margin": margin,
            "target_failure": target_failure}
    meta.update((f"required_crps_{b:g}", required_crps(b, target_failure, margin, grid))
                for b in bers)
    table = Table(["ber", "crps", "threshold", "failure", "stderr", "exact"], meta=meta)
    for b_index, ber_value in enumerate(bers):
        for n in grid:
            policy = AuthPolicy(n, ber_value, margin)
            run_seed = derive_seed(seed, "fig4", b_index * 10_000 + n)
            p = auth_failure_prob(policy, ber_value, trials, run_seed)
            table.add(ber_value, n, policy.threshold, p, mc_stderr(p, trials),
                      auth_failure_exact(policy, ber_value))
    return table


# =============================================================================
# PROBABILITY OF OUTPUT CHANGE
# =============================================================================

def fig9a(seed: int = 0, instances: int = 100, challenges: int = 10_000,
          size: int = 64) -> Table:
    """Per-shift curves of a single APUF for hamming weights 1 and 2."""
    table = Table(["hw", "shift", "prob", "stderr", "analytic"],
                  meta={"target": "fig9a", "seed": seed, "size": size,
                        "instances": instances, "challenges": challenges})
    for hw in (1, 2):
        curve = analysis.sac_curve(size, hw, instances, challenges, derive_seed(seed, "fig9a", hw))
        for shift, prob, err in zip(curve.x, curve.value, curve.stderr):
            table.add(hw, int(shift), prob, err, analysis.sac_analytic(size, hw, int(shift)))
        if hw == 1:
            last = analysis.last_stage_shift(size)
            table.meta.update(last_stage_shift=last, last_stage_prob=float(curve.value[last]),
                              last_stage_analytic=analysis.sac_analytic(size, 1, last))
    return table


def sac_population(size: int, instances: int, challenges: int) -> Tuple[int, bool]:
    """
    (instances, exhaustive) for one APUF size. When all 2**size challenges
    fit in the budget they are enumerated and the instance count is
    multiplied by challenges // 2**size.
    """
    space = 2 ** size
    if size > MAX_ENUMERATION_WIDTH or space > challenges:
        return instances, False
    return instances * (challenges // space), True


def fig9b(seed: int = 0, instances: int = 100, challenges: int = 10_000,
          sizes: Sequence[int] = SAC_SIZES) -> Table:
    """Mean hamming-weight-2 change probability for small APUFs."""
    table = Table(["size", "instances", "challenges", "prob", "stderr", "analytic"],
                  meta={"target": "fig9b", "seed": seed,
                        "instances": instances, "challenges": challenges})
    for size in sizes:
        population, exhaustive = sac_population(size, instances, challenges)
        curve = analysis.sac_curve(size, 2, population, challenges,
                                   derive_seed(seed, "fig9b", size), exhaustive=exhaustive)
        analytic = np.mean([analysis.sac_analytic(size, 2, int(s)) for s in curve.x])
        table.add(size, population, 2 ** size if exhaustive else challenges, curve.mean(),
                  _pooled_stderr(curve.stderr), analytic)
    return table


# =============================================================================
# STAGE BIAS
# =============================================================================

def fig10(seed: int = 0, instances: int = 1000, crps: int = 3000,
          sizes: Sequence[int] = BIAS_SIZES) -> Table:
    """Spread of the stage bias across instances for each APUF size."""
    table = Table(["size", "mean", "mean_stderr", "std", "entries"],
                  meta={"target": "fig10", "seed": seed, "instances": instances, "crps": crps})
    for size in sizes:
        dist = analysis.stage_bias_distribution(size, instances, crps,
                                                derive_seed(seed, "fig10", size))
        table.add(size, dist.mean, dist.mean_stderr, dist.std, len(dist.entries))
    return table


# =============================================================================
# INTERMEDIATE RESPONSES
# =============================================================================

def fig11a(seed: int = 0, instances: int = 500, challenges: int = 1000, rounds: int = 5,
           sizes: Sequence[int] = HD_SIZES, width: int = 64) -> Table:
    """Distance between consecutive rounds for the same challenge."""
    table = Table(["k", "rounds", "hd", "stderr"],
                  meta={"target": "fig11a", "seed": seed, "width": width,
                        "instances": instances, "challenges": challenges})
    for k in sizes:
        cfg = PopConfig(width=width, first_layer_stages=k, rounds=rounds)
        curve = analysis.interround_hd(cfg, challenges, instances, derive_seed(seed, "fig11a", k))
        for r, hd, err in zip(curve.x, curve.value, curve.stderr):
            table.add(k, f"{r}-{r + 1}", hd, err)
    return table


def fig11b(seed: int = 0, instances: int = 500, challenges: int = 1000,
           rounds: Sequence[int] = (1, 2, 4, 8), sizes: Sequence[int] = HD_SIZES,
           width: int = 64) -> Table:
    """Distance between first-layer responses of independent challenges."""
    table = Table(["k", "rounds", "hd", "stderr"],
                  meta={"target": "fig11b", "seed": seed, "width": width,
                        "instances": instances, "pairs": challenges})
    for k in sizes:
        cfg = PopConfig(width=width, first_layer_stages=k)
        curve = analysis.cross_challenge_hd(cfg, rounds, challenges, instances,
                                            derive_seed(seed, "fig11b", k))
        for r, hd, err in zip(curve.x, curve.value, curve.stderr):
            table.add(k, int(r), hd, err)
    return table


# =============================================================================
# LEARNING ATTACKS
# =============================================================================

TABLE2_TARGETS: Tuple[Tuple[int, int], ...] = ((2, 1), (2, 2), (2, 4), (4, 1), (6, 1), (8, 1))


def table2(
    seed: int = 0,
    crps: int = 500_000,
    targets: Sequence[Tuple[int, int]] = TABLE2_TARGETS,
    cfg: TrainConfig = DESK_MLP,
    width: int = 64,
    timing: bool = True,
    instances: int = 1,
) -> Table:
    """
    Desk-scale attack table: LR on a plain APUF as the learnable baseline,
    then the MLP against POPs of growing first-layer size and rounds. With
    instances > 1 each POP row averages that many independent POPs.
    """
    if instances < 1:
        raise ParameterError("instances", f"must be positive, got {instances}")
    columns = ["target", "attack", "rounds", "crps", "train_accuracy", "test_accuracy",
               "budget_exhausted"]
    if timing:
        columns.append("seconds")
    table = Table(columns, meta={"target": "table2", "seed": seed, "crps": crps,
                                 "hidden": "x".join(map(str, cfg.hidden)), "epochs": cfg.epochs,
                                 "instances": instances})

    def row(name: str, reports: List[AttackReport], rounds: int) -> list:
        values = [name, reports[0].kind, rounds, reports[0].crp_count,
                  np.mean([r.train_accuracy for r in reports]),
                  np.mean([r.test_accuracy for r in reports]),
                  any(r.budget_exhausted for r in reports)]
        return values + [sum(r.training_seconds for r in reports)] if timing else values

    apuf = new_instance(width, instance_seed=derive_seed(seed, "table2-apuf"),
                        model=StageModel.DELAY)
    baseline = run_attack("lr", apuf, min(crps, 50_000), LR_DEFAULTS,
                          derive_seed(seed, "table2-lr"))
    table.add(*row(f"{width}-APUF", [baseline], 0))

    for k, rounds in targets:
        reports = []
        for rep in range(instances):
            label = k * 100 + rounds + rep * 10_000
            pop = build_pop(PopConfig(width=width, first_layer_stages=k, rounds=rounds,
                                      master_seed=derive_seed(seed, "table2-pop", label)))
            reports.append(run_attack("mlp", pop, crps, cfg,
                                      derive_seed(seed, "table2-mlp", label)))
        table.add(*row(pop.config.label, reports, rounds))
    return table


# =============================================================================
# QUALITY
# =============================================================================

def quality(
    seed: int = 0,
    instances: int = 10,
    challenges: int = 1000,
    reevals: int = 100,
    k: int = 8,
    width: int = 64,
    noise: Optional[float] = None,
    votes: Sequence[int] = VOTE_LEVELS,
    rounds: Sequence[int] = (1, 2, 3, 4),
    noise_scales: Sequence[float] = (0.8, 1.0, 1.25),
) -> Table:
    """
    Uniformity and uniqueness of noiseless POPs, then BER of one POP against
    the number of TMV votes and against the number of rounds, and its worst
    BER over noise_scales. noise defaults to NOISE_RATIO x stage_sigma.
    """
    base = PopConfig(width=width, first_layer_stages=k)
    noise_seed = derive_seed(seed, "quality-noise")
    noise_model = (NoiseModel.relative(base.stage_sigma, noise_seed) if noise is None
                   else NoiseModel(noise, noise_seed))
    table = Table(["metric", "config", "value", "stderr"],
                  meta={"target": "quality", "seed": seed, "instances": instances,
                        "challenges": challenges, "reevals": reevals,
                        "sigma_noise": noise_model.sigma_noise})
    shared = random_challenges(derive_rng(seed, "quality-challenges"), challenges, width)

    def responses(index: int) -> np.ndarray:
        pop = build_pop(base.replace(master_seed=derive_seed(seed, "quality-instance", index)))
        return respond(pop, shared)

    per_instance = engine.map(responses, range(instances))
    u = [uniformity(r) for r in per_instance]
    table.add("uniformity", base.label, float(np.mean(u)),
              float(np.std(u, ddof=1) / math.sqrt(len(u))) if len(u) > 1 else None)
    if instances > 1:
        table.add("uniqueness", base.label, uniqueness(per_instance), None)

    master = derive_seed(seed, "quality-instance", 0)
    for v in votes:
        pop = build_pop(base.replace(tmv=TmvConfig(v), master_seed=master))
        value, err = measure_ber(pop, challenges, reevals, noise_model,
                                 derive_seed(seed, "ber-votes", v))
        table.add("ber", f"{base.label} votes={v}", value, err)
    for r in rounds:
        pop = build_pop(base.replace(rounds=r, master_seed=master))
        value, err = measure_ber(pop, challenges, reevals, noise_model,
                                 derive_seed(seed, "ber-rounds", r))
        table.add("ber", f"{base.label} rounds={r}", value, err)

    pop = build_pop(base.replace(master_seed=master))
    value, err = worst_ber(pop, challenges, reevals, noise_model, noise_scales,
                           derive_seed(seed, "ber-worst"))
    scales = "/".join(f"{s:g}" for s in noise_scales)
    table.add("worst_ber", f"{base.label} scales={scales}", value, err)
    return table


# =============================================================================
# REGISTRY
# =============================================================================

@dataclass(frozen=True)
class Target:
    name: str
    run: Callable[..., Table]
    knobs: Tuple[str, ...]
    summary: str


TARGETS: Dict[str, Target] = {t.name: t for t in (
    Target("fig4", fig4, ("trials",), "authentication failure vs CRP count"),
    Target("fig9a", fig9a, ("instances", "challenges"), "64-APUF output change per shift"),
    Target("fig9b", fig9b, ("instances", "challenges"), "HW-2 output change vs APUF size"),
    Target("fig10", fig10, ("instances", "crps"), "stage bias spread vs APUF size"),
    Target("fig11a", fig11a, ("instances", "challenges"), "inter-round hamming distance"),
    Target("fig11b", fig11b, ("instances", "challenges"), "cross-challenge hamming distance"),
    Target("table2", table2, ("crps", "timing", "instances"), "desk-scale learning attacks"),
    Target("quality", quality, ("instances", "challenges", "reevals", "noise"),
           "uniformity, uniqueness and BER"),
)}


def reproduce(name: str, seed: int = 0, **overrides: Optional[object]) -> Table:
    """Run a target; overrides it has no knob for, or that are None, are ignored."""
    target = TARGETS.get(name)
    if target is None:
        raise ParameterError("target", f"unknown target {name!r}; choose from {', '.join(TARGETS)}")
    kwargs = {k: v for k, v in overrides.items() if v is not None and k in target.knobs}
    log.info("reproduce.start", target=name, seed=seed, **kwargs)
    table = target.run(seed=seed, **kwargs)
    log.info("reproduce.done", target=name, rows=len(table))
    return table
