"""CPU microbenchmarks and analytic flop counts for the normalizers.

Timing is single-threaded and median-based.  Each kernel writes into
buffers allocated before the timed loop, so only arithmetic is measured.
Only relative orderings are meaningful; absolute numbers depend on the host.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import os
import platform
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .normalizers import NormalizerKind, Variant

MIN_ITERS = 30
MIN_WARMUP = 5
MIN_TICKS = 100  # median below this many timer ticks counts as too coarse
MAX_BATCH = 1 << 16
SUITE_SIZES = (128, 512, 1024, 4096)
SUITE_PRECISIONS = ("f32", "f64")
CSV_COLUMNS = ("normalizer", "n", "batch", "precision", "median_ns", "p10_ns", "p90_ns", "flops")
_DTYPES = {"f32": np.float32, "f64": np.float64}


def count_flops(kind: NormalizerKind, n: int) -> int:
    """Forward floating-point operations for one length-``n`` vector.

    Adds, multiplies, divides and square roots count one each.  RMSNorm:
    n squares, n-1 adds, a divide by n, a sqrt, n divides and n gain
    multiplies.  LayerNorm adds the mean pass (n-1 adds, 1 divide, n
    subtracts).  WeightNorm counts an n x n weight applied to one vector.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    v = kind.variant
    if v is Variant.RMSNORM:
        return 4 * n + 1
    if v is Variant.PRMSNORM:
        k = kind.partial_size(n)
        return k + (k - 1) + 1 + 1 + n + n
    if v in (Variant.LAYERNORM, Variant.BATCHNORM):
        # BatchNorm does the same work per feature, over the batch axis.
        return 6 * n + 1
    if v is Variant.L2NORM:
        return n + (n - 1) + 1 + n + n
    if v is Variant.WEIGHTNORM:
        # per row: n squares, n-1 adds, sqrt, g/||v||, n mul + n-1 add for v.x, 1 rescale
        return n * (4 * n + 1)
    raise ValueError(f"no flop count for {v}")


@dataclass(frozen=True)
class BenchCase:
    normalizer: NormalizerKind
    n: int
    batch: int = 64
    precision: str = "f64"
    iters: int = MIN_ITERS
    warmup_iters: int = MIN_WARMUP
    seed: int = 0

    def __post_init__(self):
        if self.iters < MIN_ITERS:
            raise ValueError(f"iters must be >= {MIN_ITERS}")
        if self.warmup_iters < MIN_WARMUP:
            raise ValueError(f"warmup_iters must be >= {MIN_WARMUP}")
        if self.precision not in _DTYPES:
            raise ValueError(f"precision must be one of {sorted(_DTYPES)}")
        if self.n < 1 or self.batch < 1:
            raise ValueError("n and batch must be >= 1")
        if self.normalizer.variant is Variant.BATCHNORM and self.batch < 2:
            raise ValueError("BatchNorm needs batch >= 2")


@dataclass
class BenchResult:
    case: BenchCase
    op: str  # "fwd_bwd" for differentiable normalizers, else "fwd"
    median_ns: float
    p10_ns: float
    p90_ns: float
    flops: int
    batch: int  # may exceed case.batch after widening
    fwd: Optional[dict] = None  # forward-only percentiles, recorded alongside
    notes: list = field(default_factory=list)

    def row(self) -> dict:
        return {"normalizer": self.case.normalizer.label, "n": self.case.n, "batch": self.batch,
                "precision": self.case.precision, "median_ns": self.median_ns, "p10_ns": self.p10_ns,
                "p90_ns": self.p90_ns, "flops": self.flops}

    def to_dict(self) -> dict:
        return {**self.row(), "op": self.op, "fwd": self.fwd, "iters": self.case.iters,
                "warmup_iters": self.case.warmup_iters, "notes": list(self.notes)}


# -- kernels ---------------------------------------------------------------
#
# make_kernels returns (forward, forward_backward) closures over buffers
# allocated once; forward_backward is None where no backward exists.

def _row_stats(a, k, sq, stat, eps):
    head = a if k == a.shape[1] else a[:, :k]
    np.multiply(head, head, out=sq[:, :k])
    np.sum(sq[:, :k], axis=1, out=stat[:, 0])
    np.divide(stat, k, out=stat)
    np.add(stat, eps, out=stat)
    np.sqrt(stat, out=stat)


def _make_rms(a, g, d, k, eps):
    B, n = a.shape
    sq, r = np.empty_like(a), np.empty((B, 1), a.dtype)
    y, u, t = np.empty_like(a), np.empty_like(a), np.empty_like(a)
    dot, d_a, d_g = np.empty((B, 1), a.dtype), np.empty_like(a), np.empty(n, a.dtype)

    def fwd():
        _row_stats(a, k, sq, r, eps)
        np.divide(a, r, out=t)  # t = xhat
        np.multiply(t, g, out=y)
        return y

    def fwd_bwd():
        fwd()
        np.multiply(d, t, out=u)
        np.sum(u, axis=0, out=d_g)
        np.multiply(d, g, out=u)
        np.multiply(u, t, out=sq)  # the rms sees only the head, but every output depends on it
        np.sum(sq, axis=1, out=dot[:, 0])
        np.divide(dot, k, out=dot)
        np.multiply(t[:, :k], dot, out=sq[:, :k])
        np.subtract(u[:, :k], sq[:, :k], out=d_a[:, :k])
        if k < n:
            d_a[:, k:] = u[:, k:]
        np.divide(d_a, r, out=d_a)
        return d_a

    return fwd, fwd_bwd


def _make_layernorm(a, g, d, eps):
    B, n = a.shape
    c, sq, y, t, u = (np.empty_like(a) for _ in range(5))
    mu, s, m1, m2 = (np.empty((B, 1), a.dtype) for _ in range(4))
    d_a, d_g = np.empty_like(a), np.empty(n, a.dtype)

    def fwd():
        np.sum(a, axis=1, out=mu[:, 0])
        np.divide(mu, n, out=mu)
        np.subtract(a, mu, out=c)
        np.multiply(c, c, out=sq)
        np.sum(sq, axis=1, out=s[:, 0])
        np.divide(s, n, out=s)
        np.add(s, eps, out=s)
        np.sqrt(s, out=s)
        np.divide(c, s, out=t)
        np.multiply(t, g, out=y)
        return y

    def fwd_bwd():
        fwd()
        np.multiply(d, t, out=u)
        np.sum(u, axis=0, out=d_g)
        np.multiply(d, g, out=u)
        np.sum(u, axis=1, out=m1[:, 0])
        np.divide(m1, n, out=m1)
        np.multiply(u, t, out=sq)
        np.sum(sq, axis=1, out=m2[:, 0])
        np.divide(m2, n, out=m2)
        np.multiply(t, m2, out=sq)
        np.subtract(u, m1, out=d_a)
        np.subtract(d_a, sq, out=d_a)
        np.divide(d_a, s, out=d_a)
        return d_a

    return fwd, fwd_bwd


def _make_l2(a, g, d, eps):
    B, n = a.shape
    sq, y, t, u = (np.empty_like(a) for _ in range(4))
    r, dot = np.empty((B, 1), a.dtype), np.empty((B, 1), a.dtype)
    d_a, d_g = np.empty_like(a), np.empty(n, a.dtype)

    def fwd():
        np.multiply(a, a, out=sq)
        np.sum(sq, axis=1, out=r[:, 0])
        np.add(r, eps, out=r)
        np.sqrt(r, out=r)
        np.divide(a, r, out=t)
        np.multiply(t, g, out=y)
        return y

    def fwd_bwd():
        fwd()
        np.multiply(d, t, out=u)
        np.sum(u, axis=0, out=d_g)
        np.multiply(d, g, out=u)
        np.multiply(u, t, out=sq)
        np.sum(sq, axis=1, out=dot[:, 0])
        np.multiply(t, dot, out=sq)
        np.subtract(u, sq, out=d_a)
        np.divide(d_a, r, out=d_a)
        return d_a

    return fwd, fwd_bwd


def _make_batchnorm(a, g, eps):
    B, n = a.shape
    c, sq, y = (np.empty_like(a) for _ in range(3))
    mu, s = np.empty(n, a.dtype), np.empty(n, a.dtype)

    def fwd():
        np.sum(a, axis=0, out=mu)
        np.divide(mu, B, out=mu)
        np.subtract(a, mu, out=c)
        np.multiply(c, c, out=sq)
        np.sum(sq, axis=0, out=s)
        np.divide(s, B, out=s)
        np.add(s, eps, out=s)
        np.sqrt(s, out=s)
        np.divide(c, s, out=y)
        np.multiply(y, g, out=y)
        return y

    return fwd, None


def _make_weightnorm(a, g, rng, eps):
    B, n = a.shape
    V = rng.standard_normal((n, n)).astype(a.dtype)
    vsq, norms, y = np.empty_like(V), np.empty(n, a.dtype), np.empty((B, n), a.dtype)

    def fwd():
        np.multiply(V, V, out=vsq)
        np.sum(vsq, axis=1, out=norms)
        np.add(norms, eps, out=norms)
        np.sqrt(norms, out=norms)
        np.divide(g, norms, out=norms)
        np.matmul(a, V.T, out=y)
        np.multiply(y, norms, out=y)
        return y

    return fwd, None


def make_kernels(kind: NormalizerKind, a: np.ndarray, g: np.ndarray, d: np.ndarray,
                 rng: np.random.Generator) -> tuple:
    eps = a.dtype.type(kind.epsilon)
    v = kind.variant
    if v is Variant.RMSNORM:
        return _make_rms(a, g, d, a.shape[1], eps)
    if v is Variant.PRMSNORM:
        return _make_rms(a, g, d, kind.partial_size(a.shape[1]), eps)
    if v is Variant.LAYERNORM:
        return _make_layernorm(a, g, d, eps)
    if v is Variant.L2NORM:
        return _make_l2(a, g, d, eps)
    if v is Variant.BATCHNORM:
        return _make_batchnorm(a, g, eps)
    return _make_weightnorm(a, g, rng, eps)


# -- timing ----------------------------------------------------------------

def timer_resolution_ns() -> float:
    return max(time.get_clock_info("perf_counter").resolution * 1e9, 1.0)


def _time(fn: Callable, iters: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    samples = np.empty(iters)
    clock = time.perf_counter_ns
    for i in range(iters):
        t0 = clock()
        fn()
        samples[i] = clock() - t0
    return samples


def _percentiles(samples: np.ndarray) -> tuple:
    p10, med, p90 = np.percentile(samples, [10, 50, 90])
    return float(p10), float(med), float(p90)


def run_bench(case: BenchCase) -> BenchResult:
    """Time one case; the batch doubles until the median spans ``MIN_TICKS`` timer ticks."""
    dtype = _DTYPES[case.precision]
    tick = timer_resolution_ns()
    batch, notes = case.batch, []
    while True:
        rng = np.random.default_rng([case.seed, case.n, batch])
        a = rng.standard_normal((batch, case.n)).astype(dtype)
        d = rng.standard_normal((batch, case.n)).astype(dtype)
        g = (1.0 + 0.1 * rng.standard_normal(case.n)).astype(dtype)
        fwd, fwd_bwd = make_kernels(case.normalizer, a, g, d, rng)
        timed = fwd_bwd or fwd
        samples = _time(timed, case.iters, case.warmup_iters)
        p10, med, p90 = _percentiles(samples)
        if med >= MIN_TICKS * tick or batch * 2 > MAX_BATCH:
            break
        notes.append(f"median {med:.0f} ns below {MIN_TICKS} timer ticks at batch {batch}; widened")
        batch *= 2
    fwd_stats = None
    if fwd_bwd is not None:
        f10, fmed, f90 = _percentiles(_time(fwd, case.iters, case.warmup_iters))
        fwd_stats = {"median_ns": fmed, "p10_ns": f10, "p90_ns": f90}
    return BenchResult(case, "fwd_bwd" if fwd_bwd else "fwd", med, p10, p90,
                       count_flops(case.normalizer, case.n), batch, fwd_stats, notes)


def suite_normalizers() -> list:
    return [NormalizerKind.rmsnorm(), NormalizerKind.prmsnorm(0.0625), NormalizerKind.layernorm(),
            NormalizerKind.l2norm(), NormalizerKind.batchnorm(), NormalizerKind.weightnorm()]


def bench_suite(sizes=SUITE_SIZES, precisions=SUITE_PRECISIONS, batch: int = 64, iters: int = 50,
                warmup_iters: int = MIN_WARMUP, seed: int = 0, normalizers=None) -> list:
    """Every (n, precision, normalizer) cell, run sequentially."""
    normalizers = normalizers or suite_normalizers()
    return [run_bench(BenchCase(kind, n, batch, prec, iters, warmup_iters, seed))
            for n in sizes for prec in precisions for kind in normalizers]


def ordering_cells(results: list, faster: str = "RMSNorm", slower: str = "LayerNorm") -> dict:
    """``{(n, precision): faster_median <= slower_median}`` for each cell holding both."""
    by_cell = {}
    for r in results:
        by_cell.setdefault((r.case.n, r.case.precision), {})[r.case.normalizer.label] = r.median_ns
    return {cell: v[faster] <= v[slower] for cell, v in by_cell.items() if faster in v and slower in v}


def to_csv(results: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(r.row())
    return buf.getvalue()


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or "unknown"


def environment() -> dict:
    return {"os": platform.platform(), "cpu": _cpu_model(), "cpu_count": os.cpu_count(),
            "python": platform.python_version(), "numpy": np.__version__,
            "timer_resolution_ns": timer_resolution_ns(),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def to_json(results: list) -> str:
    return json.dumps({"environment": environment(), "columns": list(CSV_COLUMNS),
                       "rows": [r.to_dict() for r in results]}, indent=2)


def format_results(results: list) -> str:
    lines = [f"{'normalizer':<22}{'n':>6}{'prec':>6}{'op':>8}{'median_us':>12}{'flops':>12}"]
    for r in results:
        lines.append(f"{r.case.normalizer.label:<22}{r.case.n:>6}{r.case.precision:>6}{r.op:>8}"
                     f"{r.median_ns / 1e3:12.1f}{r.flops:>12}")
    cells = ordering_cells(results)
    if cells:
        lines.append(f"RMSNorm <= LayerNorm (fwd+bwd median) in {sum(cells.values())}/{len(cells)} cells")
    return "\n".join(lines)

