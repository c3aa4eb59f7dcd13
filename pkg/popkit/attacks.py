"""
Learning attacks at desk scale.

- Logistic regression over the APUF feature vector, full-batch gradient
  descent on cross-entropy.
- A rectifier MLP on +-1 encoded challenges with a single sigmoid output,
  minibatch training with Adam.

Both models expose encode / loss_and_grads / parameters so that
gradient_check can verify them against central finite differences.
"""
import time
from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np
import structlog
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel
from scipy.special import expit

from .apuf import ApufInstance, Bits, as_challenges, features
from .crp import CrpSet, Target, generate_crps, split
from .engine import derive_seed
from .errors import ParameterError

log = structlog.get_logger()

Array = NDArray[np.float64]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    hidden: Tuple[int, ...] = (128, 128, 128)
    test_fraction: float = 0.1
    validation_fraction: float = 0.0
    budget_seconds: float = 600.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ParameterError("epochs", f"must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError("batch_size", f"must be positive, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate", f"must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("learning_rate", "Adam betas must be in [0, 1)")
        if any(h < 1 for h in self.hidden):
            raise ParameterError("hidden", f"layer sizes must be positive, got {self.hidden}")
        if not 0 < self.test_fraction < 1:
            raise ParameterError("test_fraction", f"must be in (0, 1), got {self.test_fraction}")
        if not 0 <= self.validation_fraction < 1:
            raise ParameterError(
                "validation_fraction", f"must be in [0, 1), got {self.validation_fraction}")
        if not self.budget_seconds > 0:
            raise ParameterError("budget", f"must be positive, got {self.budget_seconds}")


LR_DEFAULTS = TrainConfig(epochs=300, learning_rate=1.0)
# 5% of the training part selects the epoch that is kept
DESK_MLP = TrainConfig(epochs=20, batch_size=256, learning_rate=1e-3, hidden=(128, 128, 128),
                       validation_fraction=0.05)
# 12 layers counting input and output, 2000 units each, 10 M CRPs and 72 h of
# GPU time.
FULL_SCALE_MLP = TrainConfig(epochs=1000, batch_size=1024, learning_rate=1e-3,
                             hidden=(2000,) * 10, budget_seconds=72 * 3600.0)
FULL_SCALE_CRPS = 10_000_000

# --preset name -> (MLP settings, default CRP count)
MLP_PRESETS = {
    "desk": (DESK_MLP, 500_000),
    "full": (FULL_SCALE_MLP, FULL_SCALE_CRPS),
}


class Model(Protocol):
    width: int

    def encode(self, challenges: Bits) -> Array: ...

    def parameters(self) -> List[Array]: ...

    def loss_and_grads(self, x: Array, y: Array) -> Tuple[float, List[Array]]: ...

    def predict(self, challenges: ArrayLike) -> Bits: ...


def bce_with_logits(z: Array, y: Array) -> Tuple[float, Array]:
    """Mean binary cross-entropy and its derivative with respect to the logits."""
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return loss, (expit(z) - y) / len(z)


# =============================================================================
# LOGISTIC REGRESSION
# =============================================================================

@dataclass(eq=False)
class LrModel:
    """P(r = 1) = sigmoid(coefficients . phi(c)); predicts 1 only when the logit is positive."""
    coefficients: Array
    loss_history: List[float] = field(default_factory=list)
    budget_exhausted: bool = False

    @classmethod
    def from_instance(cls, inst: ApufInstance) -> "LrModel":
        return cls(-np.array(inst.weights, dtype=np.float64))

    @property
    def width(self) -> int:
        return len(self.coefficients) - 1

    def encode(self, challenges: Bits) -> Array:
        return features(as_challenges(challenges, self.width)).astype(np.float64)

    def parameters(self) -> List[Array]:
        return [self.coefficients]

    def loss_and_grads(self, x: Array, y: Array) -> Tuple[float, List[Array]]:
        loss, dz = bce_with_logits(x @ self.coefficients, y)
        return loss, [x.T @ dz]

    def predict(self, challenges: ArrayLike) -> Bits:
        return (self.encode(np.asarray(challenges)) @ self.coefficients > 0).astype(np.uint8)


def train_lr(train: CrpSet, cfg: TrainConfig = LR_DEFAULTS) -> LrModel:
    """Full-batch gradient descent from zero; cfg.epochs is the number of steps."""
    model = LrModel(np.zeros(train.width + 1))
    x = model.encode(train.challenges)
    y = train.responses.astype(np.float64)
    start = time.monotonic()
    for step in range(cfg.epochs):
        loss, (grad,) = model.loss_and_grads(x, y)
        model.loss_history.append(loss)
        model.coefficients -= cfg.learning_rate * grad
        if time.monotonic() - start > cfg.budget_seconds:
            model.budget_exhausted = True
            log.warning("attack.budget_exhausted", model="lr", step=step)
            break
    model.loss_history.append(model.loss_and_grads(x, y)[0])
    log.info("attack.lr_trained", crps=len(train), steps=len(model.loss_history) - 1,
             loss=round(model.loss_history[-1], 6))
    return model


# =============================================================================
# MULTILAYER PERCEPTRON
# =============================================================================

@dataclass(eq=False)
class MlpModel:
    """Rectifier hidden layers, one logit out. weights[i] has shape (fan_in, fan_out)."""
    weights: List[Array]
    biases: List[Array]
    loss_history: List[float] = field(default_factory=list)
    validation_history: List[float] = field(default_factory=list)
    budget_exhausted: bool = False

    @classmethod
    def initialize(cls, width: int, hidden: Sequence[int],
                   rng: np.random.Generator) -> "MlpModel":
        sizes = [width, *hidden, 1]
        weights = [rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
                   for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
        return cls(weights, biases)

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.width] + [w.shape[1] for w in self.weights]

    def encode(self, challenges: Bits) -> Array:
        return 1.0 - 2.0 * as_challenges(challenges, self.width).astype(np.float64)

    def parameters(self) -> List[Array]:
        return [*self.weights, *self.biases]

    def forward(self, x: Array) -> Tuple[Array, List[Tuple[Array, Array]]]:
        """Logits and the (input, pre-activation) pair of every layer."""
        cache = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            cache.append((a, z))
            a = np.maximum(z, 0.0)
        logits = a @ self.weights[-1] + self.biases[-1]
        cache.append((a, logits))
        return logits[:, 0], cache

    def loss_and_grads(self, x: Array, y: Array) -> Tuple[float, List[Array]]:
        logits, cache = self.forward(x)
        loss, dz = bce_with_logits(logits, y)
        dz = dz[:, None]
        dws, dbs = [], []
        for layer in range(len(self.weights) - 1, -1, -1):
            a, _ = cache[layer]
            dws.append(a.T @ dz)
            dbs.append(dz.sum(axis=0))
            if layer:
                _, z_prev = cache[layer - 1]
                dz = (dz @ self.weights[layer].T) * (z_prev > 0)
        return loss, [*dws[::-1], *dbs[::-1]]

    def predict(self, challenges: ArrayLike) -> Bits:
        logits, _ = self.forward(self.encode(np.asarray(challenges)))
        return (logits > 0).astype(np.uint8)

    def snapshot(self) -> Tuple[List[Array], List[Array]]:
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]

    def restore(self, snap: Tuple[List[Array], List[Array]]) -> None:
        for dst, src in zip(self.parameters(), [*snap[0], *snap[1]]):
            dst[...] = src


class Adam:
    """Adaptive-moment optimizer updating parameter arrays in place."""

    def __init__(self, params: List[Array], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[Array]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def train_mlp(train: CrpSet, cfg: TrainConfig = DESK_MLP) -> MlpModel:
    """
    Minibatch Adam on binary cross-entropy. With cfg.validation_fraction > 0
    that share of train is held out and the epoch with the best held-out
    accuracy is kept. When the wall-clock budget runs out the best completed
    epoch is restored and the model is flagged.
    """
    rng = np.random.default_rng(cfg.seed)
    model = MlpModel.initialize(train.width, cfg.hidden, rng)
    x = model.encode(train.challenges)
    y = train.responses.astype(np.float64)
    x_val = y_val = None
    n_val = int(len(y) * cfg.validation_fraction)
    if n_val:
        held = rng.permutation(len(y))
        x_val, y_val = x[held[:n_val]], train.responses[held[:n_val]]
        x, y = x[held[n_val:]], y[held[n_val:]]
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    start = time.monotonic()
    best: Optional[Tuple[float, tuple]] = None

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        batch_losses = []
        for lo in range(0, len(y), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, grads = model.loss_and_grads(x[idx], y[idx])
            opt.step(grads)
            batch_losses.append(loss)
            if time.monotonic() - start > cfg.budget_seconds:
                model.budget_exhausted = True
                break
        if model.budget_exhausted:
            log.warning("attack.budget_exhausted", model="mlp", epoch=epoch,
                        seconds=round(time.monotonic() - start, 1))
            break
        epoch_loss = float(np.mean(batch_losses))
        model.loss_history.append(epoch_loss)
        # lower is better: training loss, or held-out error rate
        score = epoch_loss
        if x_val is not None:
            logits, _ = model.forward(x_val)
            score = float(np.mean((logits > 0) != y_val))
            model.validation_history.append(1 - score)
        if best is None or score < best[0]:
            best = (score, model.snapshot())
        log.info("attack.epoch", epoch=epoch, loss=round(epoch_loss, 6),
                 validation=round(1 - score, 4) if x_val is not None else None)

    if best is not None and (model.budget_exhausted or x_val is not None):
        model.restore(best[1])
    return model


# =============================================================================
# SCORING
# =============================================================================

def predict(model: Model, c: ArrayLike) -> Bits:
    return model.predict(c)


def accuracy(model: Model, test: CrpSet) -> float:
    if len(test) == 0:
        raise ParameterError("test", "empty test set")
    return float(np.mean(model.predict(test.challenges) == test.responses))


def gradient_check(
    model: Model,
    challenges: Bits,
    responses: ArrayLike,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Max relative error between analytic gradients and central differences,
    |a - f| / max(|a| + |f|, 1e-6), over every parameter entry (or a
    random sample of max_entries per parameter array).
    """
    x = model.encode(challenges)
    y = np.asarray(responses, dtype=np.float64)
    _, grads = model.loss_and_grads(x, y)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for param, grad in zip(model.parameters(), grads):
        entries = np.arange(param.size)
        if max_entries is not None and param.size > max_entries:
            entries = rng.choice(param.size, max_entries, replace=False)
        for flat in entries:
            pos = np.unravel_index(flat, param.shape)
            saved = param[pos]
            param[pos] = saved + eps
            plus = model.loss_and_grads(x, y)[0]
            param[pos] = saved - eps
            minus = model.loss_and_grads(x, y)[0]
            param[pos] = saved
            numeric = (plus - minus) / (2 * eps)
            analytic = grad[pos]
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6))
    return worst


# =============================================================================
# ATTACK RUNS
# =============================================================================

class AttackReport(BaseModel):
    kind: Literal["lr", "mlp"]
    target: dict
    crp_count: int
    train_count: int
    test_count: int
    train_accuracy: float
    test_accuracy: float
    training_seconds: Optional[float] = None
    seed: int
    epochs_run: int
    budget_exhausted: bool


def attack_crps(
    kind: Literal["lr", "mlp"],
    crps: CrpSet,
    cfg: Optional[TrainConfig] = None,
    seed: int = 0,
) -> AttackReport:
    """Split an existing CRP set, train, score."""
    if kind not in ("lr", "mlp"):
        raise ParameterError("kind", f"unknown attack {kind!r}")
    cfg = cfg or (LR_DEFAULTS if kind == "lr" else DESK_MLP)
    cfg = replace(cfg, seed=derive_seed(seed, "attack-train"))
    train, test = split(crps, 1 - cfg.test_fraction, derive_seed(seed, "attack-split"))

    log.info("attack.start", kind=kind, target=crps.header.generator, crps=len(crps))
    start = time.monotonic()
    model: Model = train_lr(train, cfg) if kind == "lr" else train_mlp(train, cfg)
    elapsed = time.monotonic() - start

    report = AttackReport(
        kind=kind,
        target=crps.header.generator,
        crp_count=len(crps),
        train_count=len(train),
        test_count=len(test),
        train_accuracy=accuracy(model, train),
        test_accuracy=accuracy(model, test),
        training_seconds=round(elapsed, 3),
        seed=seed,
        epochs_run=len(model.loss_history) - (1 if kind == "lr" else 0),
        budget_exhausted=model.budget_exhausted,
    )
    log.info("attack.done", kind=kind, test_accuracy=round(report.test_accuracy, 4),
             seconds=report.training_seconds)
    return report


def run_attack(
    kind: Literal["lr", "mlp"],
    target: Target,
    n_crps: int,
    cfg: Optional[TrainConfig] = None,
    seed: int = 0,
) -> AttackReport:
    """Noiseless CRPs from target, then attack_crps."""
    crps = generate_crps(target, n_crps, derive_seed(seed, "attack-challenges"))
    return attack_crps(kind, crps, cfg, seed)
