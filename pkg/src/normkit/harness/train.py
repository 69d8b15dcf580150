"""Training loop, run configuration and run reports."""
from __future__ import annotations

import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from ..nets import AdamState, GruModel, Mlp, NonFiniteGradient, adam_step
from ..normalizers import NormalizerKind
from .tasks import TaskKind, TaskSpec, sample_batch

SCHEMA_VERSION = 1
DIVERGENCE_LOSS = 1e6


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    type: str = "gru"  # "gru" or "mlp"
    hidden: int = 32
    layers: int = 1  # hidden layers for an MLP; a GRU has one recurrent layer

    def __post_init__(self):
        if self.type not in ("gru", "mlp"):
            raise ConfigError(f"unknown model type {self.type!r}")
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("model sizes must be positive")


@dataclass(frozen=True)
class OptimizerSpec:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0  # global gradient-norm clip; 0 disables

    def __post_init__(self):
        if not self.lr > 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or not self.eps > 0:
            raise ConfigError("invalid optimizer hyperparameters")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0")


def _default_task() -> TaskSpec:
    return TaskSpec.copy(length=20, vocab=4)


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=_default_task)
    model: ModelSpec = field(default_factory=ModelSpec)
    normalizer: Optional[NormalizerKind] = None
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    steps: int = 2000
    eval_every: int = 100
    batch_size: int = 16
    eval_cases: int = 128
    seeds: tuple = (0,)
    init_center: float = 0.0
    label: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {self.schema_version}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.batch_size < 1 or self.eval_cases < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.model.type == "gru" and not self.task.sequential:
            raise ConfigError("a GRU needs a sequential task")
        if self.model.type == "mlp" and self.task.sequential:
            raise ConfigError("an MLP needs the spiral task")

    @property
    def name(self) -> str:
        return self.label or (self.normalizer.label if self.normalizer else "Baseline")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "label": self.label,
            "task": self.task.to_dict(),
            "model": {f.name: getattr(self.model, f.name) for f in fields(ModelSpec)},
            "normalizer": self.normalizer.to_dict() if self.normalizer else None,
            "optimizer": {f.name: getattr(self.optimizer, f.name) for f in fields(OptimizerSpec)},
            "steps": self.steps,
            "eval_every": self.eval_every,
            "batch_size": self.batch_size,
            "eval_cases": self.eval_cases,
            "seeds": list(self.seeds),
            "init_center": self.init_center,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "task" in kw:
                kw["task"] = TaskSpec.from_dict(kw["task"])
            if "model" in kw:
                kw["model"] = ModelSpec(**kw["model"])
            if "optimizer" in kw:
                kw["optimizer"] = OptimizerSpec(**kw["optimizer"])
            if kw.get("normalizer") is not None:
                kw["normalizer"] = NormalizerKind.from_dict(kw["normalizer"])
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kw)

    def replace(self, **changes) -> "RunConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return RunConfig(**d)


@dataclass
class CurvePoint:
    step: int
    train_loss: float  # mean training loss over the steps since the previous point
    eval_loss: float  # loss on a fixed held-out batch
    wallclock_s: float
    cpu_s: float


@dataclass
class RunReport:
    config: RunConfig
    seed: int
    curve: list = field(default_factory=list)
    diverged: bool = False
    diverged_at: Optional[int] = None
    reason: str = ""
    warnings: list = field(default_factory=list)
    stats: Optional[dict] = None
    wallclock_s: float = 0.0
    cpu_s: float = 0.0
    model: object = field(default=None, repr=False, compare=False)

    @property
    def label(self) -> str:
        return self.config.name

    @property
    def final_train_loss(self) -> float:
        return self.curve[-1].train_loss if self.curve else math.nan

    @property
    def final_eval_loss(self) -> float:
        return self.curve[-1].eval_loss if self.curve else math.nan

    @property
    def steps_completed(self) -> int:
        return self.curve[-1].step if self.curve else 0

    def loss_at(self, step: int) -> float:
        for point in self.curve:
            if point.step == step:
                return point.train_loss
        raise KeyError(f"no curve point at step {step}")

    def to_dict(self, include_timing: bool = False) -> dict:
        def t(x):
            return x if include_timing else None

        return {
            "schema_version": SCHEMA_VERSION,
            "label": self.label,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
            "reason": self.reason,
            "warnings": list(self.warnings),
            "final": {"step": self.steps_completed, "train_loss": _num(self.final_train_loss),
                      "eval_loss": _num(self.final_eval_loss)},
            "curve": [{"step": p.step, "train_loss": _num(p.train_loss), "eval_loss": _num(p.eval_loss),
                       "wallclock_s": t(p.wallclock_s), "cpu_s": t(p.cpu_s)} for p in self.curve],
            "stats": self.stats,
            "wallclock_s": t(self.wallclock_s),
            "cpu_s": t(self.cpu_s),
        }

    def curve_csv(self, include_timing: bool = False) -> str:
        buf = io.StringIO()
        buf.write("step,loss,wallclock_s\n")
        for p in self.curve:
            clock = repr(p.wallclock_s) if include_timing else ""
            buf.write(f"{p.step},{_num(p.train_loss)!r},{clock}\n")
        return buf.getvalue()


def _num(x):
    """JSON has no NaN/Inf; non-finite losses are written as strings."""
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def build_model(config: RunConfig, rng: np.random.Generator):
    task, spec = config.task, config.model
    if spec.type == "gru":
        head = "regress" if task.kind is TaskKind.ADDING else "classify"
        return GruModel.init(task.input_size, spec.hidden, task.output_size, rng, norm=config.normalizer,
                             head=head, init_center=config.init_center)
    sizes = [task.input_size] + [spec.hidden] * spec.layers + [task.output_size]
    return Mlp.init(sizes, rng, norm=config.normalizer, init_center=config.init_center)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def train(config: RunConfig, seed: Optional[int] = None, model=None) -> RunReport:
    """Train one model for ``config.steps`` Adam steps.

    Divergence (a non-finite loss or gradient, or a loss above 1e6) stops the
    run early; the returned report is flagged and still fully serializable.
    """
    seed = config.seeds[0] if seed is None else int(seed)
    if model is None:
        model = build_model(config, np.random.default_rng([seed, 0]))
    data_rng = np.random.default_rng([seed, 1])
    if config.task.sequential:
        eval_set = sample_batch(config.task, np.random.default_rng([seed, 2]), config.eval_cases)
    else:
        eval_set = sample_batch(config.task, np.random.default_rng(config.task.seed), config.task.cases)
    opt = AdamState(lr=config.optimizer.lr, beta1=config.optimizer.beta1, beta2=config.optimizer.beta2,
                    eps=config.optimizer.eps)
    params = model.params()
    report = RunReport(config, seed)
    if config.normalizer is not None:
        report.warnings.extend(config.normalizer.warnings(config.model.hidden))

    wall0, cpu0 = time.perf_counter(), time.process_time()
    window = []
    for step in range(1, config.steps + 1):
        batch = eval_set if not config.task.sequential else sample_batch(config.task, data_rng,
                                                                         config.batch_size)
        with np.errstate(all="ignore"):
            loss, grads = model.loss_and_grads(batch.inputs, batch.targets)
        window.append(loss)
        failure = None
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            failure = f"loss {loss!r} at step {step}"
        else:
            clip_gradients(grads, config.optimizer.clip_norm)
            try:
                adam_step(opt, params, grads)
            except NonFiniteGradient as exc:
                failure = str(exc)
        if failure is not None:
            report.diverged, report.diverged_at, report.reason = True, step, failure
            report.curve.append(CurvePoint(step, float(np.mean(window)), math.nan,
                                           time.perf_counter() - wall0, time.process_time() - cpu0))
            break
        if step % config.eval_every == 0 or step == config.steps:
            with np.errstate(all="ignore"):
                eval_loss = model.loss(eval_set.inputs, eval_set.targets)
            report.curve.append(CurvePoint(step, float(np.mean(window)), float(eval_loss),
                                           time.perf_counter() - wall0, time.process_time() - cpu0))
            window = []
    report.wallclock_s = time.perf_counter() - wall0
    report.cpu_s = time.process_time() - cpu0
    report.model = model
    return report


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("NORMKIT_THREADS", "1")))
    except ValueError:
        return 1


def _train_detached(config: RunConfig, seed: int) -> RunReport:
    report = train(config, seed)
    report.model = None
    return report


def train_seeds(config: RunConfig, keep_models: bool = False) -> list:
    """One run per seed in ``config.seeds``; runs in worker processes when NORMKIT_THREADS > 1."""
    workers = min(_workers(), len(config.seeds))
    if workers > 1 and not keep_models:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_train_detached, [config] * len(config.seeds), config.seeds))
    return [train(config, s) if keep_models else _train_detached(config, s) for s in config.seeds]


def median_final_loss(reports: list) -> float:
    return float(np.median([r.final_train_loss for r in reports]))
