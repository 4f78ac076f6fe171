"""SGD-with-momentum training, evaluation, and the ablation harness.

Randomness contract: everything derives from TrainConfig.seed through a
splittable counter RNG. Weight init uses split(INIT); the epoch shuffle
uses split(SHUFFLE, epoch); per-step randomness (augmentation, dropout,
SAF masks) uses split(STEP, epoch, step) further split by layer index
inside the model, so the streams are keyed by (seed, epoch, step,
layer) and survive any internal reordering. Two runs with the same
config are byte-identical; `deterministic` additionally zeroes the
wall-clock column so metrics files reproduce exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .analyzer import audit
from .archdsl import Preset, ablation_presets, build
from .data import AugmentPolicy, Dataset, augment, batches
from .errors import IsolationError, NumericsError
from .layers import EVAL, ReLU, activation_stats, softmax_xent
from .network import Model, count_params, save_checkpoint
from .rng import SplitRng

# split labels off the root seed
INIT, SHUFFLE, STEP = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: tuple[tuple[int, float], ...] | None = None  # (epoch, multiplier); None = x0.2 at 50%/75%
    seed: int = 0
    deterministic: bool = False
    augment_policy: AugmentPolicy | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def resolved_schedule(self) -> tuple[tuple[int, float], ...]:
        if self.schedule is not None:
            return tuple(self.schedule)
        return ((math.ceil(self.epochs * 0.5) + 1, 0.2), (math.ceil(self.epochs * 0.75) + 1, 0.2))


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    lr = cfg.lr
    for at_epoch, mult in cfg.resolved_schedule():
        if epoch >= at_epoch:
            lr *= mult
    return lr


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    step: int
    split: str  # train | test
    loss: float
    top1: float
    lr: float
    seconds: float


METRICS_HEADER = "epoch,step,split,loss,top1,lr,seconds"


def format_metrics_csv(rows) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(
            f"{r.epoch},{r.step},{r.split},{r.loss:.6g},{r.top1:.6g},{r.lr:.6g},{r.seconds:.6g}"
        )
    return "\n".join(lines) + "\n"


def sgd_step(params, velocities: dict, lr: float, momentum: float, weight_decay: float):
    """v <- momentum*v - lr*(g + wd*w); w <- w + v (classical momentum).

    params is an iterable of (name, weight, grad). Aborts on non-finite
    gradients, naming the tensor.
    """
    for name, w, g in params:
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in {name!r}")
        v = velocities.get(name)
        if v is None:
            v = velocities[name] = np.zeros_like(w)
        v *= momentum
        v -= lr * (g + weight_decay * w)
        w += v


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """Mean loss and top-1 accuracy in eval mode; deterministic."""
    was = model.mode
    model.eval()
    loss_sum = 0.0
    correct = 0
    for x, y in batches(dataset, batch_size):
        logits = model.forward(x)
        loss, _ = softmax_xent(logits, y)
        loss_sum += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    model.mode = was
    n = len(dataset)
    return loss_sum / n, correct / n


def init_model(model: Model, seed: int, dtype=np.float32) -> Model:
    """Initialize parameters from the training seed's INIT stream."""
    return model.init_params(SplitRng(seed).split(INIT), dtype)


def train_loop(
    model: Model,
    train_ds: Dataset,
    cfg: TrainConfig,
    test_ds: Dataset | None = None,
    metrics_path=None,
    ckpt_path=None,
    log=None,
) -> list[MetricsRow]:
    """Epoch loop emitting one train and one test metrics row per epoch.

    When a checkpoint path is given the model state is written before
    training and at each epoch boundary, so after a non-finite-loss
    abort (NumericsError) the file still holds the last good state.
    """
    root = SplitRng(cfg.seed)
    velocities: dict[str, np.ndarray] = {}
    rows: list[MetricsRow] = []
    step = 0
    t0 = time.perf_counter()

    def clock() -> float:
        return 0.0 if cfg.deterministic else time.perf_counter() - t0

    def flush():
        if metrics_path is not None:
            with open(metrics_path, "w", encoding="utf-8", newline="") as f:
                f.write(format_metrics_csv(rows))

    def emit(epoch, split, loss, top1, lr):
        rows.append(MetricsRow(epoch, step, split, loss, top1, lr, clock()))
        if log:
            log(f"epoch {epoch} {split}: loss {loss:.4f} top1 {top1:.4f} lr {lr:.4g}")

    if ckpt_path is not None:
        save_checkpoint(model, ckpt_path)
    stop = False
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(cfg, epoch)
        model.train()
        shuffle_rng = root.split(SHUFFLE, epoch)
        loss_sum = 0.0
        correct = 0
        seen = 0
        for x, y in batches(train_ds, cfg.batch_size, shuffle_rng):
            step += 1
            step_rng = root.split(STEP, epoch, step)
            if cfg.augment_policy is not None:
                x = augment(x, cfg.augment_policy, step_rng.split(0))
            model.zero_grads()
            logits = model.forward(x, step_rng.split(1))
            loss, grad = softmax_xent(logits, y)
            if not math.isfinite(loss):
                flush()
                raise NumericsError(f"loss became non-finite at epoch {epoch} step {step}")
            model.backward(grad)
            sgd_step(model.params(), velocities, lr, cfg.momentum, cfg.weight_decay)
            loss_sum += loss * len(y)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += len(y)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                stop = True
                break
        emit(epoch, "train", loss_sum / seen, correct / seen, lr)
        if test_ds is not None:
            test_loss, test_top1 = evaluate(model, test_ds, max(cfg.batch_size, 256))
            emit(epoch, "test", test_loss, test_top1, lr)
        if ckpt_path is not None:
            save_checkpoint(model, ckpt_path)
        if stop:
            break
    flush()
    return rows


# ---------------------------------------------------------------------------
# ablation harness


@dataclass
class ArmResult:
    arm: str
    params: int
    seed_top1: list[tuple[int, float]] = field(default_factory=list)
    dead_fraction: float = 0.0

    @property
    def mean_top1(self) -> float:
        return sum(t for _, t in self.seed_top1) / len(self.seed_top1)

    @property
    def top1_range(self) -> tuple[float, float]:
        vals = [t for _, t in self.seed_top1]
        return min(vals), max(vals)


@dataclass
class AblateResult:
    preset: Preset
    arms: list[ArmResult]

    def table(self) -> str:
        lines = [
            f"preset {self.preset.name}: {self.preset.note}",
            f"{'arm':<14} {'params':>10} {'mean top1':>10} {'min':>8} {'max':>8} {'dead_frac':>10}  per-seed",
        ]
        for a in self.arms:
            lo, hi = a.top1_range
            per_seed = " ".join(f"s{s}={t:.4f}" for s, t in a.seed_top1)
            lines.append(
                f"{a.arm:<14} {a.params:>10} {a.mean_top1:>10.4f} {lo:>8.4f} {hi:>8.4f} {a.dead_fraction:>10.4f}  {per_seed}"
            )
        for arm_name, rep in audit_arms(self.preset):
            n_fail, n_warn = len(rep.fails()), len(rep.warns())
            lines.append(
                f"audit {arm_name}: {rep.ledger.total_params} params, "
                f"{rep.ledger.total_macs} macs, {n_fail} fail / {n_warn} warn findings"
            )
        return "\n".join(lines)

    def records(self) -> str:
        lines = []
        for a in self.arms:
            for seed, top1 in a.seed_top1:
                lines.append(f"{self.preset.name}\t{a.arm}\t{seed}\t{top1:.6g}\t{a.params}\t{a.dead_fraction:.6g}")
        return "\n".join(lines) + "\n"


def check_budgets(preset: Preset) -> dict[str, int]:
    """Parameter totals per arm; refuse mismatches on equal-budget presets."""
    totals = {arm: count_params(build(spec)).total_params for arm, spec in preset.arms}
    if preset.equal_budget:
        lo, hi = min(totals.values()), max(totals.values())
        if lo == 0 or (hi - lo) / lo > 0.02:
            raise IsolationError(
                f"preset {preset.name}: arm budgets differ by more than 2% ({totals}); "
                "experiment isolation requires matched parameter counts"
            )
    return totals


def relu_dead_fraction(model: Model, probe: np.ndarray) -> float:
    """Mean dead-channel fraction over every post-ReLU activation for a
    probe batch (eval mode)."""
    was = model.mode
    model.eval()
    fractions = []
    x = probe
    for layer in model.layers:
        x = layer.forward(x, EVAL, None)
        if isinstance(layer, ReLU) and x.ndim == 4:
            fractions.append(activation_stats(x).dead_fraction)
    model.mode = was
    return float(np.mean(fractions)) if fractions else 0.0


def ablate(
    preset_name: str,
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: TrainConfig,
    subset: int | None = None,
    seeds: tuple[int, ...] | None = None,
    log=None,
) -> AblateResult:
    """Train every arm of a preset under identical config and seeds
    {s, s+1, s+2}; report mean and range of test top-1 per arm."""
    presets = ablation_presets(input_shape=train_ds.sample_shape, num_classes=train_ds.num_classes)
    if preset_name not in presets:
        raise KeyError(f"unknown preset {preset_name!r}; valid: {', '.join(sorted(presets))}")
    preset = presets[preset_name]
    totals = check_budgets(preset)
    if subset is not None:
        train_ds = train_ds.subset(subset)
    seeds = seeds if seeds is not None else (cfg.seed, cfg.seed + 1, cfg.seed + 2)

    probe = test_ds.images[: min(64, len(test_ds))]
    arms: list[ArmResult] = []
    for arm_name, spec in preset.arms:
        result = ArmResult(arm=arm_name, params=totals[arm_name])
        dead = []
        for seed in seeds:
            model = build(spec)
            init_model(model, seed)
            run_cfg = replace(cfg, seed=seed)
            if log:
                log(f"[{preset_name}] arm {arm_name} seed {seed}: training")
            train_loop(model, train_ds, run_cfg, test_ds=None)
            _, top1 = evaluate(model, test_ds, max(cfg.batch_size, 256))
            result.seed_top1.append((seed, top1))
            dead.append(relu_dead_fraction(model, probe))
            if log:
                log(f"[{preset_name}] arm {arm_name} seed {seed}: top1 {top1:.4f}")
        result.dead_fraction = float(np.mean(dead))
        arms.append(result)
    return AblateResult(preset, arms)


def audit_arms(preset: Preset):
    """Audit report per arm (used by the CLI to print ledgers alongside)."""
    return [(arm, audit(spec)) for arm, spec in preset.arms]
