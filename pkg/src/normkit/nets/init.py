import numpy as np

INIT_STD = 0.01


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-distributed random orthogonal ``n x n`` matrix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_weight(rng: np.random.Generator, rows: int, cols: int, center: float = 0.0) -> np.ndarray:
    """Normal(0, 0.01) for rectangular weights, random orthogonal for square ones.

    ``center`` shifts every entry; it is used to probe robustness to a
    mis-centred initialization.
    """
    if rows == cols:
        w = orthogonal(rng, rows)
    else:
        w = INIT_STD * rng.standard_normal((rows, cols))
    return w + center
