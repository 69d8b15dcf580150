import json

import numpy as np
import pytest

from normkit import verify
from normkit.normalizers import NormalizerKind
from normkit.verify import (EXPECTED_TABLE, Op, Perturbation, TableMismatch, Target, UnsupportedPerturbation,
                            check_full_table, check_grad_invariance, check_invariance, finite_diff_grad,
                            format_table, relative_error)

# hand transcription: columns are W rescale, W recenter, w_i rescale, X rescale, X recenter, x_c rescale
INVARIANCE_MARKS = {
    "BatchNorm": "✓✗✓✓✓✗",
    "WeightNorm": "✓✗✓✗✗✗",
    "LayerNorm": "✓✓✗✓✗✓",
    "RMSNorm": "✓✗✗✓✗✓",
    "pRMSNorm(p=0.5)": "✓✗✗✓✗✓",
}


def test_expected_table_matches_transcription():
    for kind in verify.table_normalizers():
        marks = tuple(c == "✓" for c in INVARIANCE_MARKS[kind.label])
        assert EXPECTED_TABLE[kind.variant] == marks


@pytest.fixture(scope="module")
def table():
    return check_full_table(trials=100, seed=7)


def test_full_table_reproduced(table):
    assert len(table.verdicts) == 30
    assert table.ok, [v.to_dict() for v in table.mismatches]
    observed = {label: "".join("✓" if x else "✗" for x in row) for label, row in table.matrix().items()}
    assert observed == INVARIANCE_MARKS


def test_cells_are_well_separated(table):
    for v in table.verdicts:
        if v.expected:
            assert v.max_abs_deviation <= 1e-9
        else:
            assert v.escaped_trials >= 95


def test_verdicts_do_not_depend_on_seed_or_trial_count(table):
    for seed, trials in [(1, 100), (7, 1), (123, 5)]:
        assert check_full_table(trials=trials, seed=seed).matrix() == table.matrix()


def test_verdict_json_schema(table):
    cell = json.loads(json.dumps(table.to_dict()))[0]
    assert {"normalizer", "property", "expected", "observed", "max_deviation"} <= set(cell)
    assert "RMSNorm" in format_table(table)


@pytest.mark.parametrize("kind,target,op,delta,invariant", [
    (NormalizerKind.rmsnorm(), Target.WEIGHT_MATRIX, Op.RESCALE, 10.0, True),
    (NormalizerKind.rmsnorm(), Target.WEIGHT_MATRIX, Op.RECENTER, 0.5, False),
    (NormalizerKind.layernorm(), Target.DATASET, Op.RECENTER, 1.0, False),
    (NormalizerKind.batchnorm(), Target.DATASET, Op.RECENTER, 1.0, True),
])
def test_single_cells(kind, target, op, delta, invariant):
    v = check_invariance(kind, Perturbation(target, op, delta), trials=30, seed=3)
    assert v.invariant is invariant and v.matches is True
    assert v.invariant == (v.max_abs_deviation <= v.tolerance)


def test_perturbation_validation():
    with pytest.raises(ValueError):
        Perturbation(Target.DATASET, Op.RESCALE, 0.0)
    with pytest.raises(UnsupportedPerturbation):
        Perturbation(Target.WEIGHT_VECTOR, Op.RECENTER, 1.0)
    with pytest.raises(UnsupportedPerturbation):
        check_invariance(NormalizerKind.rmsnorm(), Perturbation(Target.SINGLE_CASE, Op.RESCALE, 2.0, index=99))
    with pytest.raises(ValueError):
        check_invariance(NormalizerKind.rmsnorm(), Perturbation(Target.DATASET, Op.RESCALE, 2.0), trials=0)


def test_perturbation_apply_targets_only_what_it_names(rng):
    W, X = rng.standard_normal((8, 8)), rng.standard_normal((16, 8))
    W2, X2 = Perturbation(Target.SINGLE_CASE, Op.RESCALE, 3.0, index=2).apply(W, X)
    assert np.array_equal(W2, W) and np.array_equal(X2[2], 3 * X[2])
    assert np.array_equal(np.delete(X2, 2, axis=0), np.delete(X, 2, axis=0))
    W2, X2 = Perturbation(Target.WEIGHT_MATRIX, Op.RECENTER, 0.5).apply(W, X)
    assert np.array_equal(W2, W + 0.5) and np.array_equal(X2, X)


def test_mismatch_is_structured():
    v = check_invariance(NormalizerKind.rmsnorm(), Perturbation(Target.DATASET, Op.RESCALE, 2.0), trials=3)
    wrong = verify.InvarianceVerdict(v.normalizer, v.perturbation, False, 0.5, 0, 3, expected=True)
    result = verify.TableResult([v, wrong])
    with pytest.raises(TableMismatch, match="dataset re-scaling"):
        result.raise_for_mismatch()


def test_finite_diff_examples():
    np.testing.assert_allclose(finite_diff_grad(lambda x: float(np.sum(x * x)), [1.0, 2.0]), [2.0, 4.0],
                               atol=1e-8)
    np.testing.assert_allclose(finite_diff_grad(lambda x: float(x[0] * x[1]), [3.0, 5.0]), [5.0, 3.0],
                               atol=1e-8)
    with pytest.raises(verify.NonFiniteProbe):
        finite_diff_grad(lambda x: float("nan"), [1.0])
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, [1.0], h=0.0)


def test_relative_error_floor():
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 2.0 + 2e-6]) == pytest.approx(1e-6, rel=1e-5)
    assert relative_error([1e-9], [2e-9]) == pytest.approx(1e-9 / 1e-4)


@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0, 2.0, 4.0, 10.0])
def test_gradient_scaling_law(delta):
    report = check_grad_invariance(delta, seed=5)
    assert report.pass_, report.errors
    assert report.ratio_observed == pytest.approx(1.0 / delta, rel=1e-9)


def test_identity_scaling_is_bit_identical():
    report = check_grad_invariance(1.0, seed=2)
    assert all(e == 0.0 for e in report.errors.values())


def test_scaling_law_for_partial_variant():
    assert check_grad_invariance(2.0, seed=1, normalizer=NormalizerKind.prmsnorm(0.25)).pass_


def test_gradient_checks_small():
    checks = verify.gradient_checks(dims=(1, 7), draws=2, seed=4)
    assert len(checks) == 7 * 2 * 2
    assert all(c.passed for c in checks), [c.to_dict() for c in checks if not c.passed]
