"""Least-squares sensing-channel estimation from echoes and the known
transmit matrix: h_est = Y X^H (X X^H + ridge I)^-1."""

from dataclasses import dataclass

import numpy as np

COND_LIMIT = 1e10
AUTO_RIDGE_SCALE = 1e-8


@dataclass
class EstimatedChannel:
    h_est: np.ndarray
    cond_estimate: float


def ls_estimate(Y, X, ridge: float = 0.0) -> EstimatedChannel:
    """Estimate the channel from Y = H X + N.

    With ridge = 0 the Gram matrix X X^H must be invertible (requires
    L >= N_b); a Tikhonov ridge of 1e-8 * trace(XX^H)/N_b is applied
    automatically when its condition number exceeds 1e10.
    """
    Y = np.asarray(Y, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    if ridge < 0.0:
        raise ValueError("ridge must be non-negative")
    n_b, L = X.shape
    if ridge == 0.0 and L < n_b:
        raise ValueError(f"unregularized LS needs L >= N_b (got L={L}, N_b={n_b})")

    gram = X @ X.conj().T
    cond = float(np.linalg.cond(gram))
    eff_ridge = ridge
    if ridge == 0.0 and (not np.isfinite(cond) or cond > COND_LIMIT):
        eff_ridge = AUTO_RIDGE_SCALE * float(np.real(np.trace(gram))) / n_b
        if eff_ridge <= 0.0:
            raise np.linalg.LinAlgError("singular X X^H and zero trace; cannot regularize")
    if eff_ridge > 0.0:
        gram = gram + eff_ridge * np.eye(n_b)
    b = Y @ X.conj().T
    try:
        h_est = np.linalg.solve(gram.T, b.T).T  # solves h_est @ gram = b
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular X X^H (cond ~ {cond:.2e})") from exc
    return EstimatedChannel(h_est=h_est, cond_estimate=cond)
