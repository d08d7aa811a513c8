"""Pure-numpy implementations of the hot row operations.

Same call signatures as the compiled extension so either can serve as the
active backend.  All inputs are float64 arrays; none are modified in
place.
"""

import numpy as np

PROB_FLOOR = 1e-12


def row_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of an (R, N) logit array."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax_vjp(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backpropagate dy through y = row_softmax(z); returns dz.

    dz_v = y_v * (dy_v - sum_j dy_j y_j), per row.
    """
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def relax_forward(y: np.ndarray, xi, temperature: float) -> np.ndarray:
    """Tempered softmax of log-probabilities plus optional Gumbel noise.

    phi = row_softmax((log max(y, floor) + xi) / temperature).  The floor
    keeps zero coordinates finite; xi may be None for the deterministic
    variant.
    """
    logs = np.log(np.maximum(y, PROB_FLOOR))
    if xi is not None:
        logs = logs + xi
    return row_softmax(logs / temperature)


def relax_vjp(phi: np.ndarray, y: np.ndarray, temperature: float, dphi: np.ndarray) -> np.ndarray:
    """Backpropagate dphi through relax_forward; returns dy.

    Uses the analytic Jacobian d phi_j / d y_v =
    phi_j (1[j=v] - phi_v) / (temperature * y_v) evaluated at the floored
    input, so dy_v = phi_v (dphi_v - sum_j dphi_j phi_j) / (temperature * y_v).
    """
    yf = np.maximum(y, PROB_FLOOR)
    inner = (dphi * phi).sum(axis=1, keepdims=True)
    return phi * (dphi - inner) / (temperature * yf)


def kl_rows(p: np.ndarray, q: np.ndarray) -> float:
    """Sum over rows of KL(p_row || q_row) in nats; inf if q lacks support."""
    support = p > 0
    if np.any(q[support] == 0):
        return float("inf")
    terms = np.where(support, p * (np.log(np.where(support, p, 1.0)) - np.log(np.where(q > 0, q, 1.0))), 0.0)
    return float(terms.sum())


def sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw one index per row by inverting the CDF at uniform u.

    probs is (R, N) with rows summing to one; u is (R,) in [0, 1).
    """
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1).astype(np.int64)


def one_hot_rows(ids: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((ids.shape[0], n))
    out[np.arange(ids.shape[0]), ids] = 1.0
    return out


def argmax_rows(rows: np.ndarray) -> np.ndarray:
    return np.argmax(rows, axis=1).astype(np.int64)
