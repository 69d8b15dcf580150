"""Invariance laboratory and gradient-law checks.

The invariance lab builds a random layer ``y = tanh(norm(W x) * g + b)``,
perturbs either the weights or the data, and measures how far the outputs
move.  A cell of the invariance table is reproduced when invariant cells stay
below ``tolerance`` on every trial and non-invariant cells escape past
``escape_threshold`` on (almost) every trial.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .nets.gru import GruModel
from .nets.layer import LinearLayer, layer_backward, layer_forward
from .normalizers import (NormalizerKind, NormParams, Variant, batchnorm_forward, normalize,
                          normalize_backward, weightnorm_forward)

INVARIANCE_TOL = 1e-9
ESCAPE_THRESHOLD = 1e-3
ESCAPE_FRACTION = 0.95
MIN_RMS = 1e-2

N_OUT = N_IN = 8
BATCH = 16
WEIGHT_STD = 0.5
TABLE_DELTA = 2.0
TABLE_PRMS_P = 0.5


class Target(str, enum.Enum):
    WEIGHT_MATRIX = "weight_matrix"
    WEIGHT_VECTOR = "weight_vector"
    DATASET = "dataset"
    SINGLE_CASE = "single_case"


class Op(str, enum.Enum):
    RESCALE = "rescale"
    RECENTER = "recenter"


PROPERTIES = (
    (Target.WEIGHT_MATRIX, Op.RESCALE),
    (Target.WEIGHT_MATRIX, Op.RECENTER),
    (Target.WEIGHT_VECTOR, Op.RESCALE),
    (Target.DATASET, Op.RESCALE),
    (Target.DATASET, Op.RECENTER),
    (Target.SINGLE_CASE, Op.RESCALE),
)

PROPERTY_NAMES = {
    (Target.WEIGHT_MATRIX, Op.RESCALE): "weight matrix re-scaling",
    (Target.WEIGHT_MATRIX, Op.RECENTER): "weight matrix re-centering",
    (Target.WEIGHT_VECTOR, Op.RESCALE): "weight vector re-scaling",
    (Target.DATASET, Op.RESCALE): "dataset re-scaling",
    (Target.DATASET, Op.RECENTER): "dataset re-centering",
    (Target.SINGLE_CASE, Op.RESCALE): "single training case re-scaling",
}

# rows follow the table's normalizer order, columns follow PROPERTIES
EXPECTED_TABLE = {
    Variant.BATCHNORM: (True, False, True, True, True, False),
    Variant.WEIGHTNORM: (True, False, True, False, False, False),
    Variant.LAYERNORM: (True, True, False, True, False, True),
    Variant.RMSNORM: (True, False, False, True, False, True),
    Variant.PRMSNORM: (True, False, False, True, False, True),
}


class UnsupportedPerturbation(ValueError):
    """The perturbation has no meaning for the requested normalizer or layer."""


class TableMismatch(AssertionError):
    def __init__(self, cells):
        self.cells = cells
        listing = "; ".join(f"{v.normalizer.label} / {v.property_name}: expected "
                            f"{'invariant' if v.expected else 'not invariant'}, "
                            f"max deviation {v.max_abs_deviation:.3e}, escapes {v.escaped_trials}/{v.trials}"
                            for v in cells)
        super().__init__(f"{len(cells)} cell(s) disagree with the invariance table: {listing}")


@dataclass(frozen=True)
class Perturbation:
    target: Target
    op: Op
    delta: float
    index: Optional[int] = None  # row for WEIGHT_VECTOR, case for SINGLE_CASE

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        object.__setattr__(self, "op", Op(self.op))
        if self.op is Op.RESCALE and self.delta == 0:
            raise ValueError("re-scaling needs a nonzero factor")
        if (self.target, self.op) not in PROPERTY_NAMES:
            raise UnsupportedPerturbation(f"{self.op.value} of a {self.target.value.replace('_', ' ')} "
                                          "is not an invariance property")

    @property
    def property_name(self) -> str:
        return PROPERTY_NAMES[(self.target, self.op)]

    def apply(self, W: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        W, X = W.copy(), X.copy()

        def change(arr):
            return arr * self.delta if self.op is Op.RESCALE else arr + self.delta

        if self.target is Target.WEIGHT_MATRIX:
            W = change(W)
        elif self.target is Target.DATASET:
            X = change(X)
        elif self.target is Target.WEIGHT_VECTOR:
            i = 0 if self.index is None else self.index
            if not 0 <= i < W.shape[0]:
                raise UnsupportedPerturbation(f"weight row {i} out of range for {W.shape[0]} rows")
            W[i] = change(W[i])
        else:
            i = 0 if self.index is None else self.index
            if not 0 <= i < X.shape[0]:
                raise UnsupportedPerturbation(f"case {i} out of range for a batch of {X.shape[0]}")
            X[i] = change(X[i])
        return W, X


def table_perturbations(delta: float = TABLE_DELTA) -> list[Perturbation]:
    return [Perturbation(t, o, delta) for t, o in PROPERTIES]


def table_normalizers(prms_p: float = TABLE_PRMS_P) -> list[NormalizerKind]:
    return [NormalizerKind.batchnorm(), NormalizerKind.weightnorm(), NormalizerKind.layernorm(),
            NormalizerKind.rmsnorm(), NormalizerKind.prmsnorm(prms_p)]


def expected_cell(kind: NormalizerKind, perturbation: Perturbation) -> Optional[bool]:
    row = EXPECTED_TABLE.get(kind.variant)
    if row is None:
        return None
    return row[PROPERTIES.index((perturbation.target, perturbation.op))]


@dataclass(frozen=True)
class InvarianceVerdict:
    normalizer: NormalizerKind
    perturbation: Perturbation
    invariant: bool
    max_abs_deviation: float
    escaped_trials: int
    trials: int
    expected: Optional[bool] = None
    tolerance: float = INVARIANCE_TOL
    escape_threshold: float = ESCAPE_THRESHOLD

    @property
    def property_name(self) -> str:
        return self.perturbation.property_name

    @property
    def matches(self) -> Optional[bool]:
        """True when the observation reproduces the expected cell; None when nothing is expected."""
        if self.expected is None:
            return None
        if self.expected:
            return self.invariant
        return (not self.invariant) and self.escaped_trials >= math.ceil(ESCAPE_FRACTION * self.trials)

    def to_dict(self) -> dict:
        return {
            "normalizer": self.normalizer.label,
            "property": self.property_name,
            "expected": self.expected,
            "observed": self.invariant,
            "max_deviation": self.max_abs_deviation,
            "escaped_trials": self.escaped_trials,
            "trials": self.trials,
            "match": self.matches,
        }


def layer_outputs(kind: NormalizerKind, W, X, g, b) -> np.ndarray:
    """``tanh`` outputs of a normalized layer for a batch ``X`` (rows are cases)."""
    if kind.variant is Variant.BATCHNORM:
        return np.tanh(batchnorm_forward(X @ W.T, NormParams(g, b), kind.epsilon))
    if kind.variant is Variant.WEIGHTNORM:
        return np.tanh(weightnorm_forward(W, g, X, kind.epsilon) + b)
    out, _ = normalize(kind, X @ W.T, g)
    return np.tanh(out + b)


def _draw(kind: NormalizerKind, rng: np.random.Generator):
    k = kind.partial_size(N_OUT)
    while True:
        W = rng.normal(0.0, WEIGHT_STD, (N_OUT, N_IN))
        X = rng.standard_normal((BATCH, N_IN))
        A = X @ W.T
        # reject draws whose statistic is so small that the stabilizer matters
        if np.sqrt(np.mean(A[:, :k] ** 2, axis=1)).min() >= MIN_RMS:
            break
    g = rng.uniform(0.5, 1.5, N_OUT)
    b = rng.normal(0.0, 0.5, N_OUT)
    return W, X, g, b


def _trial_deviation(kind, perturbation, seed, trial) -> float:
    rng = np.random.default_rng([seed, trial])
    W, X, g, b = _draw(kind, rng)
    W2, X2 = perturbation.apply(W, X)
    return float(np.max(np.abs(layer_outputs(kind, W2, X2, g, b) - layer_outputs(kind, W, X, g, b))))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("NORMKIT_THREADS", "1")))
    except ValueError:
        return 1


def check_invariance(normalizer: NormalizerKind, perturbation: Perturbation, trials: int = 100,
                     seed: int = 0, tolerance: float = INVARIANCE_TOL,
                     escape_threshold: float = ESCAPE_THRESHOLD) -> InvarianceVerdict:
    """Measure output deviation of a random normalized layer under ``perturbation``.

    Trial ``i`` draws from ``default_rng([seed, i])``, so results do not
    depend on evaluation order.  For cells the table marks as not invariant,
    the escape count must reach 95% of trials; otherwise an
    :class:`AssertionError` is raised rather than reporting a silent pass.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if perturbation.target is Target.WEIGHT_VECTOR and perturbation.index is not None \
            and not 0 <= perturbation.index < N_OUT:
        raise UnsupportedPerturbation(f"weight row {perturbation.index} out of range")
    if perturbation.target is Target.SINGLE_CASE and perturbation.index is not None \
            and not 0 <= perturbation.index < BATCH:
        raise UnsupportedPerturbation(f"case {perturbation.index} out of range")

    def run(t):
        return _trial_deviation(normalizer, perturbation, seed, t)

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            devs = list(pool.map(run, range(trials)))
    else:
        devs = [run(t) for t in range(trials)]
    devs = np.array(devs)
    return InvarianceVerdict(
        normalizer=normalizer,
        perturbation=perturbation,
        invariant=bool(devs.max() <= tolerance),
        max_abs_deviation=float(devs.max()),
        escaped_trials=int(np.sum(devs > escape_threshold)),
        trials=trials,
        expected=expected_cell(normalizer, perturbation),
        tolerance=tolerance,
        escape_threshold=escape_threshold,
    )


@dataclass
class TableResult:
    verdicts: list

    @property
    def mismatches(self) -> list:
        return [v for v in self.verdicts if v.matches is False]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def raise_for_mismatch(self) -> None:
        if self.mismatches:
            raise TableMismatch(self.mismatches)

    def matrix(self) -> dict:
        """``{normalizer label: [observed invariant per property]}``."""
        out: dict = {}
        for v in self.verdicts:
            out.setdefault(v.normalizer.label, []).append(v.invariant)
        return out

    def to_dict(self) -> list:
        return [v.to_dict() for v in self.verdicts]


def check_full_table(trials: int = 100, seed: int = 0, prms_p: float = TABLE_PRMS_P,
                     delta: float = TABLE_DELTA) -> TableResult:
    """All five normalizers against all six properties."""
    return TableResult([check_invariance(kind, pert, trials, seed)
                        for kind in table_normalizers(prms_p)
                        for pert in table_perturbations(delta)])


def format_table(result: TableResult) -> str:
    short = ["W rescale", "W recenter", "w_i rescale", "X rescale", "X recenter", "x_c rescale"]
    width = max(len(v.normalizer.label) for v in result.verdicts) + 2
    lines = [" " * width + " ".join(f"{s:>12}" for s in short)]
    for label, row in result.matrix().items():
        verdicts = [v for v in result.verdicts if v.normalizer.label == label]
        cells = []
        for v in verdicts:
            mark = "yes" if v.invariant else "no"
            if v.matches is False:
                mark += " (!)"
            cells.append(f"{mark:>12}")
        lines.append(f"{label:<{width}}" + " ".join(cells))
    return "\n".join(lines)


class NonFiniteProbe(FloatingPointError):
    pass


def finite_diff_grad(loss_probe: Callable[[np.ndarray], float], point, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(L(x + h e_i) - L(x - h e_i)) / 2h`` for every coordinate."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(point, dtype=float)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss_probe(x))
        flat[i] = orig - h
        down = float(loss_probe(x))
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NonFiniteProbe(f"probe returned a non-finite value at coordinate {i}")
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-4) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)``.

    The floor keeps gradients that are identically zero (or lost in rounding,
    as for a one-element normalizer) comparable by absolute error.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)), floor)
    return float(np.max(np.abs(a - n), initial=0.0)) / scale


@dataclass(frozen=True)
class GradScalingReport:
    delta: float
    ratio_observed: float
    expected: float
    pass_: bool
    errors: dict
    tolerance: float

    def to_dict(self) -> dict:
        return {"delta": self.delta, "ratio_observed": self.ratio_observed, "expected": self.expected,
                "pass": self.pass_, "tolerance": self.tolerance, "errors": self.errors}


def _rel(a, b) -> float:
    scale = float(np.max(np.abs(b)))
    diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
    return diff / scale if scale > 0 else diff


def _layer_grads(layer: LinearLayer, X, T):
    y, cache = layer_forward(layer, X)
    return layer_backward(cache, y - T)  # L = 0.5 * ||y - T||^2


def check_grad_invariance(delta: float, seed: int = 0, normalizer: Optional[NormalizerKind] = None,
                          tolerance: float = 1e-9) -> GradScalingReport:
    """Check how gain, bias and weight gradients respond to scaling ``x`` or ``W`` by ``delta``.

    Gain and bias gradients must not change under either scaling; the weight
    gradient must not change under input scaling and must shrink by exactly
    ``1/delta`` under weight scaling.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    kind = normalizer or NormalizerKind.rmsnorm()
    rng = np.random.default_rng(seed)
    while True:
        W = rng.normal(0.0, WEIGHT_STD, (N_OUT, N_IN))
        X = rng.standard_normal((4, N_IN))
        if np.sqrt(np.mean((X @ W.T)[:, :kind.partial_size(N_OUT)] ** 2, axis=1)).min() >= MIN_RMS:
            break
    g = rng.uniform(0.5, 1.5, N_OUT)
    b = rng.normal(0.0, 0.5, N_OUT)
    T = rng.normal(0.0, 0.5, (4, N_OUT))

    def layer(weights):
        return LinearLayer(weights, b.copy(), norm=kind, gain=g.copy(), activation="tanh")

    base = _layer_grads(layer(W), X, T)
    by_input = _layer_grads(layer(W), delta * X, T)
    by_weight = _layer_grads(layer(delta * W), X, T)
    errors = {
        "d_g_input_scaling": _rel(by_input.d_g, base.d_g),
        "d_g_weight_scaling": _rel(by_weight.d_g, base.d_g),
        "d_b_input_scaling": _rel(by_input.d_b, base.d_b),
        "d_b_weight_scaling": _rel(by_weight.d_b, base.d_b),
        "d_W_input_scaling": _rel(by_input.d_W, base.d_W),
        "d_W_weight_scaling": _rel(by_weight.d_W, base.d_W / delta),
    }
    ratio = float(np.linalg.norm(by_weight.d_W) / np.linalg.norm(base.d_W))
    errors["ratio"] = abs(ratio * delta - 1.0)
    return GradScalingReport(delta, ratio, 1.0 / delta, all(e <= tolerance for e in errors.values()),
                             errors, tolerance)


__all__ = [
    "Target", "Op", "Perturbation", "InvarianceVerdict", "GradScalingReport", "TableResult",
    "TableMismatch", "UnsupportedPerturbation", "NonFiniteProbe", "EXPECTED_TABLE", "PROPERTIES",
    "check_invariance", "check_full_table", "finite_diff_grad", "check_grad_invariance",
    "relative_error", "layer_outputs", "format_table", "table_normalizers", "table_perturbations",
    "GradCheck", "gradient_checks", "GRAD_DIMS",
]


# -- finite-difference gradient checks -------------------------------------

GRAD_DIMS = (1, 2, 7, 64)
FD_STEP = 1e-5
LOCAL_TOL = 1e-6  # normalizer and single layer
BPTT_TOL = 1e-5  # full GRU through time
GRU_COORDS = 16  # sampled coordinates per GRU parameter tensor
MIN_FD_STAT = 0.1


@dataclass(frozen=True)
class GradCheck:
    target: str
    dim: int
    draw: int
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {"target": self.target, "dim": self.dim, "draw": self.draw, "rel_error": self.rel_error,
                "tolerance": self.tolerance, "pass": self.passed}


def _joint_error(pairs) -> float:
    """Relative error over several gradients flattened into one vector."""
    return relative_error(np.concatenate([np.ravel(a) for a, _ in pairs]),
                          np.concatenate([np.ravel(n) for _, n in pairs]))


def _well_conditioned(kind: NormalizerKind, a) -> bool:
    # central differences lose accuracy like (h / stat)^2 when the statistic is tiny
    n = a.shape[-1]
    if kind.variant is Variant.LAYERNORM:
        return n == 1 or a.std(axis=-1).min() >= MIN_FD_STAT
    head = a[..., :kind.partial_size(n)]
    return np.sqrt(np.mean(head * head, axis=-1)).min() >= MIN_FD_STAT


def _check_normalizer(kind: NormalizerKind, n: int, rng) -> float:
    a = rng.standard_normal((3, n))
    while not _well_conditioned(kind, a):
        a = rng.standard_normal((3, n))
    g = rng.uniform(0.5, 1.5, n)
    w = rng.standard_normal((3, n))
    _, cache = normalize(kind, a, g)
    d_a, d_g = normalize_backward(cache, g, w)
    num_a = finite_diff_grad(lambda x: float(np.sum(w * normalize(kind, x, g)[0])), a, FD_STEP)
    num_g = finite_diff_grad(lambda x: float(np.sum(w * normalize(kind, a, x)[0])), g, FD_STEP)
    return _joint_error([(d_a, num_a), (d_g, num_g)])


def _check_layer(n: int, rng) -> float:
    kind = NormalizerKind.rmsnorm()
    W = rng.normal(0.0, 1.0, (n, n))
    b = rng.normal(0.0, 0.5, n)
    g = rng.uniform(0.5, 1.5, n)
    X = rng.standard_normal((3, n))
    T = rng.normal(0.0, 0.5, (3, n))

    def loss(W_, b_, g_, X_):
        y, _ = layer_forward(LinearLayer(W_, b_, norm=kind, gain=g_, activation="tanh"), X_)
        return 0.5 * float(np.sum((y - T) ** 2))

    grads = _layer_grads(LinearLayer(W, b, norm=kind, gain=g, activation="tanh"), X, T)
    return _joint_error([
        (grads.d_W, finite_diff_grad(lambda v: loss(v, b, g, X), W, FD_STEP)),
        (grads.d_b, finite_diff_grad(lambda v: loss(W, v, g, X), b, FD_STEP)),
        (grads.d_g, finite_diff_grad(lambda v: loss(W, b, v, X), g, FD_STEP)),
        (grads.d_x, finite_diff_grad(lambda v: loss(W, b, g, v), X, FD_STEP)),
    ])


def _check_gru(n: int, rng, norm: Optional[NormalizerKind]) -> float:
    """Full BPTT against central differences on a sample of coordinates per tensor."""
    n_in, steps, batch = 3, 5, 2
    model = GruModel.init(n_in, n, 1, rng, norm=norm, head="regress")
    params = model.params()
    for name, value in params.items():
        fan = value.shape[-1] if value.ndim > 1 else 1
        value[...] = rng.normal(0.0, 1.0 / math.sqrt(fan), value.shape)
        if name == "gru.g":
            value[...] = rng.uniform(0.5, 1.5, value.shape)
    xs = rng.standard_normal((batch, steps, n_in))
    ys = rng.standard_normal(batch)
    _, grads = model.loss_and_grads(xs, ys)
    pairs = []
    for name, value in params.items():
        flat = value.reshape(-1)
        picks = rng.choice(flat.size, size=min(GRU_COORDS, flat.size), replace=False)
        numeric = np.empty(len(picks))
        for j, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            up = model.loss(xs, ys)
            flat[i] = orig - FD_STEP
            down = model.loss(xs, ys)
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * FD_STEP)
        pairs.append((grads[name].reshape(-1)[picks], numeric))
    return _joint_error(pairs)


def gradient_checks(dims=GRAD_DIMS, draws: int = 20, seed: int = 0) -> list:
    """Analytic vs finite-difference gradients for the normalizers, a layer and a GRU.

    Draw ``d`` at dimension ``n`` uses ``default_rng([seed, n, d, target])``.
    """
    targets = [
        ("RMSNorm", LOCAL_TOL, lambda n, r: _check_normalizer(NormalizerKind.rmsnorm(), n, r)),
        ("pRMSNorm(p=0.5)", LOCAL_TOL, lambda n, r: _check_normalizer(NormalizerKind.prmsnorm(0.5), n, r)),
        ("LayerNorm", LOCAL_TOL, lambda n, r: _check_normalizer(NormalizerKind.layernorm(), n, r)),
        ("layer+RMSNorm", LOCAL_TOL, _check_layer),
        ("GRU", BPTT_TOL, lambda n, r: _check_gru(n, r, None)),
        ("GRU+RMSNorm", BPTT_TOL, lambda n, r: _check_gru(n, r, NormalizerKind.rmsnorm())),
        ("GRU+LayerNorm", BPTT_TOL, lambda n, r: _check_gru(n, r, NormalizerKind.layernorm())),
    ]
    out = []
    for t_index, (name, tol, fn) in enumerate(targets):
        for n in dims:
            for d in range(draws):
                rng = np.random.default_rng([seed, n, d, t_index])
                out.append(GradCheck(name, n, d, fn(n, rng), tol))
    return out
