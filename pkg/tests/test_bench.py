import csv
import io
import json

import numpy as np
import pytest

from normkit import bench
from normkit.bench import BenchCase, count_flops, run_bench
from normkit.normalizers import NormalizerKind, NormParams, batchnorm_forward, normalize, normalize_backward

KINDS = bench.suite_normalizers()


def hand_tally_rms(n):
    squares, adds, mean_div, sqrt, divides, gains = n, n - 1, 1, 1, n, n
    return squares + adds + mean_div + sqrt + divides + gains


def test_flop_examples():
    assert count_flops(NormalizerKind.rmsnorm(), 1) == 5
    for n in (1, 2, 3, 128, 4096):
        assert count_flops(NormalizerKind.rmsnorm(), n) == hand_tally_rms(n)
        # mean pass adds n-1 adds, one divide and n subtracts
        assert count_flops(NormalizerKind.layernorm(), n) == hand_tally_rms(n) + (n - 1) + 1 + n
        assert count_flops(NormalizerKind.rmsnorm(), n) < count_flops(NormalizerKind.layernorm(), n)


@pytest.mark.parametrize("p", [0.0625, 0.1, 0.5, 0.99])
def test_partial_variant_is_cheaper(p):
    for n in (128, 512, 1024, 4096):
        assert count_flops(NormalizerKind.prmsnorm(p), n) < count_flops(NormalizerKind.rmsnorm(), n)


def test_flops_reject_empty():
    with pytest.raises(ValueError):
        count_flops(NormalizerKind.rmsnorm(), 0)


@pytest.mark.parametrize("kind", [k for k in KINDS if k.differentiable], ids=lambda k: k.label)
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_kernels_agree_with_reference(kind, dtype, rng):
    a = rng.standard_normal((6, 32))
    d = rng.standard_normal((6, 32))
    g = rng.uniform(0.5, 1.5, 32)
    fwd, fwd_bwd = bench.make_kernels(kind, a.astype(dtype), g.astype(dtype), d.astype(dtype), rng)
    y, cache = normalize(kind, a, g)
    d_a, _ = normalize_backward(cache, g, d)
    tol = 1e-12 if dtype is np.float64 else 1e-4
    np.testing.assert_allclose(fwd(), y, atol=tol, rtol=tol)
    np.testing.assert_allclose(fwd_bwd(), d_a, atol=tol * 10, rtol=tol * 10)


def test_batchnorm_kernel_agrees(rng):
    a, g = rng.standard_normal((6, 5)), rng.uniform(0.5, 1.5, 5)
    fwd, fwd_bwd = bench.make_kernels(NormalizerKind.batchnorm(), a, g, a, rng)
    assert fwd_bwd is None
    np.testing.assert_allclose(fwd(), batchnorm_forward(a, NormParams(g, np.zeros(5))), atol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(iters=29), dict(warmup_iters=4), dict(precision="f16"), dict(n=0)])
def test_case_validation(kwargs):
    with pytest.raises(ValueError):
        BenchCase(NormalizerKind.rmsnorm(), **{"n": 64, **kwargs})


def test_result_percentiles_ordered():
    r = run_bench(BenchCase(NormalizerKind.layernorm(), 256, batch=8))
    assert r.p10_ns <= r.median_ns <= r.p90_ns
    assert r.flops == count_flops(NormalizerKind.layernorm(), 256)
    assert r.op == "fwd_bwd" and r.fwd["median_ns"] > 0


def test_coarse_timer_widens_batch(monkeypatch):
    monkeypatch.setattr(bench, "timer_resolution_ns", lambda: 1e6)
    monkeypatch.setattr(bench, "MAX_BATCH", 32)
    r = run_bench(BenchCase(NormalizerKind.rmsnorm(), 16, batch=4))
    assert r.batch == 32 and r.notes


def test_rmsnorm_not_slower_than_layernorm():
    rms = run_bench(BenchCase(NormalizerKind.rmsnorm(), 1024, 64, "f64", iters=60))
    ln = run_bench(BenchCase(NormalizerKind.layernorm(), 1024, 64, "f64", iters=60))
    assert rms.median_ns <= ln.median_ns


def test_repeat_runs_are_stable():
    case = BenchCase(NormalizerKind.rmsnorm(), 1024, 64, "f64", iters=60)
    first, second = run_bench(case), run_bench(case)
    assert abs(first.median_ns - second.median_ns) <= 0.2 * max(first.median_ns, second.median_ns)


def test_suite_schema():
    results = bench.bench_suite(sizes=(16, 32), iters=30)
    assert len(results) == 2 * 2 * 6
    rows = list(csv.DictReader(io.StringIO(bench.to_csv(results))))
    assert list(rows[0]) == list(bench.CSV_COLUMNS)
    for row, r in zip(rows, results):
        assert int(row["flops"]) == count_flops(r.case.normalizer, r.case.n)
    doc = json.loads(bench.to_json(results))
    assert {"os", "cpu", "timestamp"} <= set(doc["environment"])
    assert len(doc["rows"]) == len(results)
    assert len(bench.ordering_cells(results)) == 4
