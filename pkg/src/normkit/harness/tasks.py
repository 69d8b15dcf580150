"""Synthetic tasks: sequence copy, the adding problem and 2-D spirals."""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np


class TaskKind(str, enum.Enum):
    COPY = "copy"
    ADDING = "adding"
    SPIRAL = "spiral"


@dataclass(frozen=True)
class TaskSpec:
    """Task parameters; only the fields relevant to ``kind`` may be set."""

    kind: TaskKind
    length: Optional[int] = None  # copy / adding
    vocab: Optional[int] = None  # copy
    classes: Optional[int] = None  # spiral
    points: Optional[int] = None  # spiral, per class
    seed: int = 0
    cases: int = 64

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        need = {TaskKind.COPY: ("length", "vocab"), TaskKind.ADDING: ("length",),
                TaskKind.SPIRAL: ("classes", "points")}[self.kind]
        for name in ("length", "vocab", "classes", "points"):
            value = getattr(self, name)
            if name in need:
                if value is None or int(value) < 1:
                    raise ValueError(f"{self.kind.value} task needs a positive {name}")
            elif value is not None:
                raise ValueError(f"{name} does not apply to the {self.kind.value} task")
        if self.kind is TaskKind.COPY and self.vocab < 2:
            raise ValueError("copy task needs at least 2 symbols")
        if self.kind is TaskKind.ADDING and self.length < 2:
            raise ValueError("adding problem needs length >= 2")
        if self.kind is TaskKind.SPIRAL and self.classes < 2:
            raise ValueError("spiral task needs at least 2 classes")
        if self.cases < 1:
            raise ValueError("cases must be >= 1")

    @classmethod
    def copy(cls, length: int, vocab: int, seed: int = 0, cases: int = 64) -> "TaskSpec":
        return cls(TaskKind.COPY, length=length, vocab=vocab, seed=seed, cases=cases)

    @classmethod
    def adding(cls, length: int, seed: int = 0, cases: int = 64) -> "TaskSpec":
        return cls(TaskKind.ADDING, length=length, seed=seed, cases=cases)

    @classmethod
    def spiral(cls, classes: int, points: int, seed: int = 0) -> "TaskSpec":
        return cls(TaskKind.SPIRAL, classes=classes, points=points, seed=seed, cases=classes * points)

    @property
    def sequential(self) -> bool:
        return self.kind is not TaskKind.SPIRAL

    @property
    def input_size(self) -> int:
        return {TaskKind.COPY: (self.vocab or 0) + 2, TaskKind.ADDING: 2, TaskKind.SPIRAL: 2}[self.kind]

    @property
    def output_size(self) -> int:
        return {TaskKind.COPY: self.vocab, TaskKind.ADDING: 1, TaskKind.SPIRAL: self.classes}[self.kind]

    @property
    def steps(self) -> int:
        """Sequence length seen by a recurrent model."""
        if self.kind is TaskKind.COPY:
            return 2 * self.length + 1
        return self.length or 1

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["kind"] = self.kind.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown task fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    symbols: Optional[np.ndarray] = None  # copy: integer input stream, blank = vocab, delimiter = vocab + 1
    markers: Optional[np.ndarray] = None  # adding: marked positions

    def __len__(self) -> int:
        return len(self.inputs)


def _copy(spec: TaskSpec, rng: np.random.Generator, n: int) -> Dataset:
    L, V = spec.length, spec.vocab
    T = 2 * L + 1
    tokens = rng.integers(0, V, size=(n, L))
    symbols = np.full((n, T), V)
    symbols[:, :L] = tokens
    symbols[:, L] = V + 1
    targets = np.full((n, T), -1)
    targets[:, L + 1:] = tokens
    inputs = np.eye(V + 2)[symbols]
    return Dataset(inputs, targets, symbols=symbols)


def adding_target(values: np.ndarray, markers: np.ndarray) -> np.ndarray:
    """Sum of the values at the marked positions, per sequence."""
    return np.sum(np.asarray(values) * np.asarray(markers), axis=-1)


def _adding(spec: TaskSpec, rng: np.random.Generator, n: int) -> Dataset:
    T = spec.length
    half = T // 2
    values = rng.uniform(0.0, 1.0, (n, T))
    first = rng.integers(0, half, n)
    second = rng.integers(half, T, n)
    markers = np.zeros((n, T))
    markers[np.arange(n), first] = 1.0
    markers[np.arange(n), second] = 1.0
    inputs = np.stack([values, markers], axis=-1)
    return Dataset(inputs, adding_target(values, markers), markers=markers)


def _spiral(spec: TaskSpec, rng: np.random.Generator, n: int) -> Dataset:
    K = spec.classes
    xs, ys = [], []
    for k in range(K):
        per = n // K + (k < n % K)
        r = np.linspace(0.05, 1.0, per)
        theta = 2 * np.pi * k / K + 4.0 * r + rng.normal(0.0, 0.2, per)
        xs.append(np.stack([r * np.sin(theta), r * np.cos(theta)], axis=1))
        ys.append(np.full(per, k))
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return Dataset(X[order], y[order])


_GENERATORS = {TaskKind.COPY: _copy, TaskKind.ADDING: _adding, TaskKind.SPIRAL: _spiral}


def sample_batch(spec: TaskSpec, rng: np.random.Generator, n: int) -> Dataset:
    if n < 1:
        raise ValueError("batch size must be >= 1")
    return _GENERATORS[spec.kind](spec, rng, n)


def generate_task(spec: TaskSpec) -> Dataset:
    """The task's fixed dataset of ``spec.cases`` examples, a pure function of ``spec``."""
    return sample_batch(spec, np.random.default_rng(spec.seed), spec.cases)
