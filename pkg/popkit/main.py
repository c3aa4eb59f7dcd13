"""
popkit - Experiment CLI
One subcommand per measurement; CSV/JSON on stdout (or --out), logs on stderr.
Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""
import sys
from pathlib import Path
from typing import Annotated, Any, List, Optional

import click
import numpy as np
import structlog
import typer

from . import analysis, experiments
from .apuf import StageModel, new_instance, random_challenges
from .attacks import MLP_PRESETS, AttackReport, attack_crps, run_attack
from .config import ExperimentConfig, flag_name, load_config, save_config
from .crp import Target, generate_crps, read_crps, respond, write_crps
from .engine import derive_rng, derive_seed, engine
from .errors import CrpFormatError, ParameterError
from .metrics import (
    AuthPolicy,
    auth_failure_exact,
    auth_failure_prob,
    mc_stderr,
    measure_ber,
    uniformity,
    uniqueness,
)
from .pop import build_pop
from .report import Table, emit

app = typer.Typer(
    name="popkit",
    help="PUF-on-PUF simulation and security assessment",
    no_args_is_help=True,
    add_completion=False,
    pretty_exceptions_enable=False,
)

log = structlog.get_logger()

# Library parameter names that differ from the flag that sets them
FLAG_ALIASES = {"n_stages": "size", "stage_sigma": "sigma", "first_layer_stages": "k",
                "budget_seconds": "budget", "fraction": "test_fraction", "index": "instances"}


def configure_logging(verbose: bool = False, quiet: bool = False, timestamp: bool = True) -> None:
    processors: List[Any] = [structlog.processors.add_log_level]
    if timestamp:
        processors.append(structlog.processors.TimeStamper(fmt="iso"))
    processors.append(structlog.dev.ConsoleRenderer(colors=False))
    level = 10 if verbose else 30 if quiet else 20
    structlog.configure(
        processors=processors,
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
    )


# =============================================================================
# SHARED OPTIONS
# =============================================================================

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", help="KEY=value file of defaults.")]
SaveOpt = Annotated[Optional[Path], typer.Option("--save-config", help="Write resolved config.")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", "-o", help="Output path, else stdout.")]
FormatOpt = Annotated[Optional[str], typer.Option("--format", help="csv or json.")]
ThreadsOpt = Annotated[Optional[int], typer.Option("--threads", help="Worker threads.")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Master seed.")]
NoTimestampOpt = Annotated[bool, typer.Option("--no-timestamp", help="Omit wall-clock fields.")]
VerboseOpt = Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")]
QuietOpt = Annotated[bool, typer.Option("--quiet", "-q", help="Warnings only.")]

KindOpt = Annotated[Optional[str], typer.Option("--kind", help="apuf or pop.")]
SizeOpt = Annotated[Optional[int], typer.Option("--size", help="APUF stages.")]
WidthOpt = Annotated[Optional[int], typer.Option("--width", help="POP challenge width W.")]
KOpt = Annotated[Optional[int], typer.Option("--k", help="First-layer APUF stages.")]
RoundsOpt = Annotated[Optional[int], typer.Option("--rounds", help="First-layer rounds.")]
VotesOpt = Annotated[Optional[int], typer.Option("--votes", help="TMV votes (odd).")]
SigmaOpt = Annotated[Optional[float], typer.Option("--sigma", help="Stage delay std.")]
StageModelOpt = Annotated[Optional[StageModel], typer.Option("--stage-model")]
InstanceSeedOpt = Annotated[Optional[int], typer.Option("--instance-seed")]
NoiseOpt = Annotated[Optional[float], typer.Option("--noise", help="Evaluation noise std.")]
EvalSeedOpt = Annotated[Optional[int], typer.Option("--eval-seed")]
CrpsOpt = Annotated[Optional[int], typer.Option("--crps", help="CRP count.")]
InstancesOpt = Annotated[Optional[int], typer.Option("--instances")]
ChallengesOpt = Annotated[Optional[int], typer.Option("--challenges")]
TrialsOpt = Annotated[Optional[int], typer.Option("--trials")]
ReevalsOpt = Annotated[Optional[int], typer.Option("--reevals")]
InputOpt = Annotated[Optional[Path], typer.Option("--input", help="CRP file base path.")]
EpochsOpt = Annotated[Optional[int], typer.Option("--epochs")]
LrOpt = Annotated[Optional[float], typer.Option("--learning-rate")]
TestFractionOpt = Annotated[Optional[float], typer.Option("--test-fraction")]
BudgetOpt = Annotated[Optional[float], typer.Option("--budget", help="Training seconds.")]


def _setup(config: Optional[Path], save: Optional[Path], **flags: Any) -> ExperimentConfig:
    """Resolve flags and config file, then configure logging, threads and --save-config."""
    if "fmt" in flags:
        flags["format"] = flags.pop("fmt")
    # boolean switches only ever turn a setting on
    flags = {k: (None if v is False else v) for k, v in flags.items()}
    cfg = load_config(config, **flags)
    configure_logging(cfg.verbose, cfg.quiet, cfg.timestamp)
    engine.configure(cfg.threads)
    if save is not None:
        save_config(cfg, save)
        log.info("config.saved", path=str(save))
    return cfg


def _build_target(cfg: ExperimentConfig, default_kind: str) -> Target:
    if cfg.pick("kind", default_kind) == "apuf":
        return new_instance(cfg.size, cfg.sigma, cfg.instance_seed, cfg.stage_model)
    return build_pop(cfg.pop_config)


def _write(cfg: ExperimentConfig, table: Table, command: str) -> None:
    table.meta = {"command": command, "seed": cfg.seed, **table.meta}
    emit(table.render(cfg.format, cfg.timestamp), cfg.out)


# =============================================================================
# INSTANCES AND DATA
# =============================================================================

@app.command("gen-instance")
def gen_instance(
    kind: KindOpt = None, size: SizeOpt = None, width: WidthOpt = None, k: KOpt = None,
    rounds: RoundsOpt = None, votes: VotesOpt = None, sigma: SigmaOpt = None,
    stage_model: StageModelOpt = None, instance_seed: InstanceSeedOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Describe an APUF or POP instance (and list APUF weights)."""
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    target = _build_target(cfg, "pop")
    table = Table(["param", "value"], meta={"kind": target.describe()["kind"]})
    table.extend(target.describe().items())
    if cfg.pick("kind", "pop") == "apuf":
        table.extend((f"w{i}", float(w)) for i, w in enumerate(target.weights))
    _write(cfg, table, "gen-instance")


@app.command("gen-crps")
def gen_crps(
    kind: KindOpt = None, size: SizeOpt = None, width: WidthOpt = None, k: KOpt = None,
    rounds: RoundsOpt = None, votes: VotesOpt = None, sigma: SigmaOpt = None,
    stage_model: StageModelOpt = None, instance_seed: InstanceSeedOpt = None,
    crps: CrpsOpt = None, noise: NoiseOpt = None, eval_seed: EvalSeedOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Write <out>.json and <out>.csv; --seed is the challenge seed."""
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    if cfg.out is None:
        raise ParameterError("out", "gen-crps needs a base path for <out>.json and <out>.csv")
    crp_set = generate_crps(_build_target(cfg, "pop"), cfg.pick("crps", 1000), cfg.seed,
                            cfg.noise_model)
    write_crps(crp_set, cfg.out)


@app.command("metrics")
def metrics(
    kind: KindOpt = None, size: SizeOpt = None, width: WidthOpt = None, k: KOpt = None,
    rounds: RoundsOpt = None, votes: VotesOpt = None, sigma: SigmaOpt = None,
    stage_model: StageModelOpt = None, instance_seed: InstanceSeedOpt = None,
    instances: InstancesOpt = None, challenges: ChallengesOpt = None,
    reevals: ReevalsOpt = None, noise: NoiseOpt = None, eval_seed: EvalSeedOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """
    Uniformity and uniqueness over instances derived from --instance-seed,
    and BER of the --instance-seed instance under --noise.
    """
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    n_instances = cfg.pick("instances", 10)
    n_challenges = cfg.pick("challenges", 1000)
    shared = random_challenges(derive_rng(cfg.seed, "metrics-challenges"), n_challenges,
                               _build_target(cfg, "pop").width)

    def responses(index: int) -> np.ndarray:
        inst_cfg = cfg.model_copy(
            update={"instance_seed": derive_seed(cfg.instance_seed, "metrics-instance", index)})
        return respond(_build_target(inst_cfg, "pop"), shared)

    per_instance = engine.map(responses, range(n_instances))
    label = cfg.pick("kind", "pop")
    table = Table(["metric", "config", "value", "stderr"],
                  meta={"instances": n_instances, "challenges": n_challenges})
    u = float(np.mean([uniformity(r) for r in per_instance]))
    table.add("uniformity", label, u, mc_stderr(u, n_instances * n_challenges))
    if n_instances > 1:
        table.add("uniqueness", label, uniqueness(per_instance), None)
    value, err = measure_ber(_build_target(cfg, "pop"), n_challenges, cfg.reevals,
                             cfg.noise_model, derive_seed(cfg.seed, "metrics-ber"))
    table.add("ber", f"{label} noise={cfg.noise_model.sigma_noise:g}", value, err)
    _write(cfg, table, "metrics")


# =============================================================================
# ANALYSES
# =============================================================================

@app.command("auth-sim")
def auth_sim(
    ber: Annotated[Optional[float], typer.Option("--ber", help="BER the policy assumes.")] = None,
    true_ber: Annotated[Optional[float],
                        typer.Option("--true-ber", help="Device BER, defaults to --ber.")] = None,
    crps: CrpsOpt = None,
    margin: Annotated[Optional[float], typer.Option("--margin")] = None,
    trials: TrialsOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Monte Carlo authentication failure next to the exact binomial tail."""
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    policy = AuthPolicy(cfg.pick("crps", 200), cfg.ber, cfg.margin)
    device_ber = cfg.pick("true_ber", cfg.ber)
    n_trials = cfg.pick("trials", 1_000_000)
    p = auth_failure_prob(policy, device_ber, n_trials, cfg.seed)
    table = Table(["ber", "true_ber", "crps", "margin", "threshold", "failure", "stderr",
                   "exact"], meta={"trials": n_trials})
    table.add(cfg.ber, device_ber, policy.n_crps, cfg.margin, policy.threshold, p,
              mc_stderr(p, n_trials), auth_failure_exact(policy, device_ber))
    _write(cfg, table, "auth-sim")


@app.command("sac")
def sac(
    size: SizeOpt = None,
    hw: Annotated[Optional[int], typer.Option("--hw", help="Mismatch weight, 1 or 2.")] = None,
    instances: InstancesOpt = None, challenges: ChallengesOpt = None,
    wrap: Annotated[bool, typer.Option("--wrap", help="HW-2 pattern wraps around.")] = False,
    exhaustive: Annotated[bool, typer.Option("--exhaustive")] = False,
    stage_model: StageModelOpt = None, sigma: SigmaOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Probability of output change per mismatch-pattern shift."""
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    n_instances = cfg.pick("instances", 100)
    n_challenges = cfg.pick("challenges", 10_000)
    curve = analysis.sac_curve(cfg.size, cfg.hw, n_instances, n_challenges, cfg.seed,
                               cfg.stage_model, cfg.wrap, cfg.exhaustive, cfg.sigma)
    table = Table(["shift", "prob", "stderr"],
                  meta={"size": cfg.size, "hw": cfg.hw, "instances": n_instances,
                        "challenges": "all" if cfg.exhaustive else n_challenges,
                        "stage_model": cfg.stage_model.value})
    table.extend(zip(curve.x.tolist(), curve.value, curve.stderr))
    _write(cfg, table, "sac")


@app.command("stage-bias")
def stage_bias(
    size: SizeOpt = None, instances: InstancesOpt = None, crps: CrpsOpt = None,
    exhaustive: Annotated[bool, typer.Option("--exhaustive")] = False,
    stage_model: StageModelOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Pooled stage-bias mean and spread over fresh instances."""
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    n_instances = cfg.pick("instances", 100)
    n_crps = cfg.pick("crps", 3000)
    dist = analysis.stage_bias_distribution(cfg.size, n_instances, n_crps, cfg.seed,
                                            cfg.stage_model, cfg.exhaustive)
    table = Table(["size", "mean", "mean_stderr", "std", "entries"],
                  meta={"instances": n_instances, "crps": "all" if cfg.exhaustive else n_crps})
    table.add(cfg.size, dist.mean, dist.mean_stderr, dist.std, len(dist.entries))
    _write(cfg, table, "stage-bias")


@app.command("hd-rounds")
def hd_rounds(
    width: WidthOpt = None, k: KOpt = None, rounds: RoundsOpt = None,
    instances: InstancesOpt = None, challenges: ChallengesOpt = None,
    mode: Annotated[Optional[str], typer.Option("--hd-mode",
                                                help="interround or cross.")] = None,
    stage_model: StageModelOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Hamming distance of first-layer responses across rounds or across challenges."""
    flags = dict(locals())
    flags["hd_mode"] = flags.pop("mode")
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    n_instances = cfg.pick("instances", 100)
    n_challenges = cfg.pick("challenges", 1000)
    pop_cfg = cfg.pop_config.replace(rounds=cfg.pick("rounds", 5))
    if cfg.hd_mode == "interround":
        curve = analysis.interround_hd(pop_cfg, n_challenges, n_instances, cfg.seed)
        x = [f"{r}-{r + 1}" for r in curve.x]
    else:
        curve = analysis.cross_challenge_hd(pop_cfg, range(1, pop_cfg.rounds + 1), n_challenges,
                                            n_instances, cfg.seed)
        x = curve.x.tolist()
    table = Table(["k", "rounds", "hd", "stderr"],
                  meta={"mode": cfg.hd_mode, "width": cfg.width,
                        "instances": n_instances, "challenges": n_challenges})
    table.extend((cfg.k, r, hd, err) for r, hd, err in zip(x, curve.value, curve.stderr))
    _write(cfg, table, "hd-rounds")


# =============================================================================
# ATTACKS
# =============================================================================

def _attack(cfg: ExperimentConfig, kind: str, default_target: str, default_crps: int) -> None:
    train_cfg = cfg.train_config(kind)
    if cfg.input is not None:
        report = attack_crps(kind, read_crps(cfg.input), train_cfg, cfg.seed)
    else:
        target = _build_target(cfg, default_target)
        report = run_attack(kind, target, cfg.pick("crps", default_crps), train_cfg, cfg.seed)

    if cfg.format == "json":
        exclude = None if cfg.timestamp else {"training_seconds"}
        emit(report.model_dump_json(indent=2, exclude=exclude) + "\n", cfg.out)
        return
    _write(cfg, attack_table([report], cfg.timestamp), f"attack-{kind}")


def attack_table(reports: List[AttackReport], timing: bool = True) -> Table:
    """Attack results as one row per target."""
    columns = ["target", "attack", "rounds", "crps", "train_accuracy", "test_accuracy",
               "budget_exhausted"] + (["seconds"] if timing else [])
    table = Table(columns)
    for r in reports:
        name = (f"{r.target['first_layer_stages']}-APUF-POP" if r.target.get("kind") == "pop"
                else f"{r.target.get('n_stages', '?')}-APUF")
        row = [name, r.kind, r.target.get("rounds", 0), r.crp_count, r.train_accuracy,
               r.test_accuracy, r.budget_exhausted]
        table.add(*(row + ([r.training_seconds] if timing else [])))
    return table


@app.command("attack-lr")
def attack_lr(
    kind: KindOpt = None, size: SizeOpt = None, width: WidthOpt = None, k: KOpt = None,
    rounds: RoundsOpt = None, stage_model: StageModelOpt = None,
    instance_seed: InstanceSeedOpt = None, crps: CrpsOpt = None, input: InputOpt = None,
    epochs: EpochsOpt = None, learning_rate: LrOpt = None,
    test_fraction: TestFractionOpt = None, budget: BudgetOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Logistic regression on the APUF feature vector (default target: a single APUF)."""
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    _attack(cfg, "lr", "apuf", 50_000)


@app.command("attack-mlp")
def attack_mlp(
    kind: KindOpt = None, size: SizeOpt = None, width: WidthOpt = None, k: KOpt = None,
    rounds: RoundsOpt = None, stage_model: StageModelOpt = None,
    instance_seed: InstanceSeedOpt = None, crps: CrpsOpt = None, input: InputOpt = None,
    epochs: EpochsOpt = None, learning_rate: LrOpt = None,
    batch_size: Annotated[Optional[int], typer.Option("--batch-size")] = None,
    hidden: Annotated[Optional[str], typer.Option("--hidden", help="e.g. 128,128,128")] = None,
    preset: Annotated[Optional[str], typer.Option(
        "--preset", help="desk (3x128, 500k CRPs) or full (10x2000, 10M CRPs).")] = None,
    test_fraction: TestFractionOpt = None, budget: BudgetOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Rectifier MLP trained with Adam (default target: a POP); flags override --preset."""
    flags = dict(locals())
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    _attack(cfg, "mlp", "pop", MLP_PRESETS[cfg.preset][1])


# =============================================================================
# REPRODUCTION
# =============================================================================

@app.command("reproduce")
def reproduce(
    target: Annotated[str, typer.Argument(help=", ".join(experiments.TARGETS))],
    instances: InstancesOpt = None, challenges: ChallengesOpt = None,
    trials: TrialsOpt = None, crps: CrpsOpt = None, reevals: ReevalsOpt = None,
    noise: NoiseOpt = None,
    config: ConfigOpt = None, save_config: SaveOpt = None, out: OutOpt = None,
    fmt: FormatOpt = None, threads: ThreadsOpt = None, seed: SeedOpt = None,
    no_timestamp: NoTimestampOpt = False, verbose: VerboseOpt = False, quiet: QuietOpt = False,
):
    """Re-run a published measurement; scale flags override its defaults."""
    flags = dict(locals())
    name = flags.pop("target")
    cfg = _setup(flags.pop("config"), flags.pop("save_config"), **flags)
    table = experiments.reproduce(
        name, cfg.seed, instances=cfg.instances, challenges=cfg.challenges, trials=cfg.trials,
        crps=cfg.crps, reevals=cfg.reevals, noise=cfg.noise,
        timing=cfg.timestamp)
    _write(cfg, table, f"reproduce {name}")


# =============================================================================
# ENTRY POINT
# =============================================================================

def _flag_for(name: str) -> str:
    name = FLAG_ALIASES.get(name, name)
    return flag_name(name) if name in ExperimentConfig.model_fields else name


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    try:
        result = app(args=argv, standalone_mode=False, prog_name="popkit")
        return result if isinstance(result, int) else 0
    except click.UsageError as e:
        if e.ctx is not None:
            click.echo(e.ctx.get_usage(), err=True)
        click.echo(f"Error: {e.format_message()}", err=True)
        return 1
    except ParameterError as e:
        click.echo(f"Error: {_flag_for(e.name)}: {e.detail}", err=True)
        return 1
    except CrpFormatError as e:
        click.echo(f"Error: {e}", err=True)
        return 1
    except click.Abort:
        return 1
    except Exception:
        log.exception("popkit.failed")
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
