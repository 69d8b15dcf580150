import numpy as np
import pytest

from normkit.tensor import (ShapeError, as_matrix, as_vector, hadamard, identity, matvec, reduce_mean,
                            reduce_sum, reduce_sumsq, scale, shift)


def naive_matvec(W, x):
    out = []
    for i in range(len(W)):
        acc = 0.0
        for j in range(len(x)):
            acc += W[i][j] * x[j]
        out.append(acc)
    return out


def test_matvec_identity():
    assert matvec(identity(3), as_vector([1, 2, 3])).tolist() == [1.0, 2.0, 3.0]


def test_matvec_hand_example():
    assert matvec(as_matrix([[1, 1], [2, 0]]), as_vector([3, 4])).tolist() == [7.0, 6.0]


def test_matvec_matches_naive_loop_exactly(rng):
    W = rng.standard_normal((8, 8))
    x = rng.standard_normal(8)
    assert matvec(W, x).tolist() == naive_matvec(W.tolist(), x.tolist())


def test_matvec_shape_mismatch():
    with pytest.raises(ShapeError):
        matvec(np.ones((2, 3)), np.ones(2))


def test_reductions():
    assert reduce_mean([1, 2, 3]) == 2.0
    assert reduce_sumsq([3, 4]) == 25.0
    assert reduce_sum([0.1, 0.2, 0.3]) == (0.1 + 0.2) + 0.3


def test_elementwise():
    assert scale([1, -2], 0.5).tolist() == [0.5, -1.0]
    assert shift([1, 2], -1).tolist() == [0.0, 1.0]
    assert hadamard([1, 2], [3, 4]).tolist() == [3.0, 8.0]
    with pytest.raises(ShapeError):
        hadamard([1, 2], [1, 2, 3])


def test_reduction_is_repeatable(rng):
    v = rng.standard_normal(1000)
    assert reduce_sumsq(v) == reduce_sumsq(v.copy())


@pytest.mark.parametrize("bad", [[], [1.0, float("nan")], [float("inf")]])
def test_vector_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        as_vector(bad)


def test_constructed_values_are_read_only():
    v = as_vector([1.0, 2.0])
    with pytest.raises(ValueError):
        v[0] = 3.0
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
