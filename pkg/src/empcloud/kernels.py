"""Hot numeric kernels with numba-accelerated and pure-numpy implementations.

The public names (``greens_tensor``, ``mom_matrix``, ``pairwise_min_sq``) are
bound at import time: numba JIT versions when numba imports and the
``EMPCLOUD_NUMBA`` environment variable is not ``0``, pure-numpy otherwise.
Both paths compute the same formulas, so results agree to the last few ulps;
``benchmarks/bench_kernels.py`` times them side by side.

The free-space dyadic kernel evaluated here, for r = |p1 - p2| and unit
direction rhat, is

    G(p1, p2) = (g(r) * rhat rhat^T - h(r) * I) * exp(j k r) / (4 pi r)
    g(r) = 3/(k r)^2 - 3j/(k r) - 1
    h(r) = 1/(k r)^2 -  j/(k r) - 1
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("EMPCLOUD_NUMBA", "1").lower() not in ("0", "false", "no")

try:
    import numba as nb

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAS_NUMBA = False
    USE_NUMBA = False

_FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------
def greens_tensor_numpy(obs, src, k_c):
    """Dyadic Green blocks for all (obs, src) pairs.

    Parameters
    ----------
    obs : (A, 3) float64
    src : (B, 3) float64
    k_c : float
        Wavenumber, rad/m.

    Returns
    -------
    (A, B, 3, 3) complex128. Pairs with r = 0 are left as zeros; callers that
    cannot tolerate coincident points must check beforehand.
    """
    obs = np.asarray(obs, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    d = obs[:, None, :] - src[None, :, :]          # (A, B, 3)
    r = np.sqrt(np.sum(d * d, axis=-1))            # (A, B)
    safe = r > 0.0
    rs = np.where(safe, r, 1.0)
    kr = k_c * rs
    inv_kr = 1.0 / kr
    inv_kr2 = inv_kr * inv_kr
    g = 3.0 * inv_kr2 - 3.0j * inv_kr - 1.0
    h = inv_kr2 - 1.0j * inv_kr - 1.0
    scale = np.exp(1j * kr) / (_FOUR_PI * rs)
    rhat = d / rs[..., None]
    outer = rhat[..., :, None] * rhat[..., None, :]          # (A, B, 3, 3)
    eye = np.eye(3)
    out = (g[..., None, None] * outer - h[..., None, None] * eye) * scale[..., None, None]
    out[~safe] = 0.0
    return out


def mom_matrix_numpy(positions, chi, volumes, k_c, self_term=True):
    """Dense system matrix of the point-matched volume scattering equation.

    Blocks are 3x3 per scatterer pair: off-diagonal blocks are
    -k^2 chi_j V_j G(p_i, p_j); diagonal blocks are (1 + chi_i/3) I
    (small-sphere depolarization self term) or I when ``self_term`` is False.

    Returns (3M, 3M) complex128.
    """
    positions = np.asarray(positions, dtype=np.float64)
    m = positions.shape[0]
    g = greens_tensor_numpy(positions, positions, k_c)   # zero diagonal blocks
    w = np.asarray(chi, dtype=np.complex128) * np.asarray(volumes, dtype=np.float64)
    blocks = -(k_c * k_c) * g * w[None, :, None, None]
    a = blocks.transpose(0, 2, 1, 3).reshape(3 * m, 3 * m).copy()
    diag = np.ones(m, dtype=np.complex128)
    if self_term:
        diag = diag + np.asarray(chi, dtype=np.complex128) / 3.0
    idx = np.arange(3 * m)
    a[idx, idx] += np.repeat(diag, 3)
    return a


def pairwise_min_sq_numpy(a, b):
    """For each row of ``a``, the squared distance to its nearest row of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty(a.shape[0], dtype=np.float64)
    # chunked so the (chunk, Mb) distance block stays small
    step = max(1, 2**22 // max(1, b.shape[0]))
    bb = np.sum(b * b, axis=1)
    for lo in range(0, a.shape[0], step):
        hi = min(lo + step, a.shape[0])
        chunk = a[lo:hi]
        d2 = np.sum(chunk * chunk, axis=1)[:, None] - 2.0 * chunk @ b.T + bb[None, :]
        out[lo:hi] = np.maximum(d2.min(axis=1), 0.0)
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------
if HAS_NUMBA:

    @nb.njit(cache=True, parallel=True)
    def _greens_fill(obs, src, k_c, out):
        for i in nb.prange(obs.shape[0]):
            for j in range(src.shape[0]):
                dx = obs[i, 0] - src[j, 0]
                dy = obs[i, 1] - src[j, 1]
                dz = obs[i, 2] - src[j, 2]
                r2 = dx * dx + dy * dy + dz * dz
                if r2 == 0.0:
                    continue
                r = np.sqrt(r2)
                kr = k_c * r
                inv_kr = 1.0 / kr
                inv_kr2 = inv_kr * inv_kr
                g = 3.0 * inv_kr2 - 3.0j * inv_kr - 1.0
                h = inv_kr2 - 1.0j * inv_kr - 1.0
                scale = np.exp(1j * kr) / (_FOUR_PI * r)
                rx = dx / r
                ry = dy / r
                rz = dz / r
                out[i, j, 0, 0] = (g * rx * rx - h) * scale
                out[i, j, 0, 1] = (g * rx * ry) * scale
                out[i, j, 0, 2] = (g * rx * rz) * scale
                out[i, j, 1, 0] = (g * ry * rx) * scale
                out[i, j, 1, 1] = (g * ry * ry - h) * scale
                out[i, j, 1, 2] = (g * ry * rz) * scale
                out[i, j, 2, 0] = (g * rz * rx) * scale
                out[i, j, 2, 1] = (g * rz * ry) * scale
                out[i, j, 2, 2] = (g * rz * rz - h) * scale

    def greens_tensor_numba(obs, src, k_c):
        obs = np.ascontiguousarray(obs, dtype=np.float64)
        src = np.ascontiguousarray(src, dtype=np.float64)
        out = np.zeros((obs.shape[0], src.shape[0], 3, 3), dtype=np.complex128)
        _greens_fill(obs, src, float(k_c), out)
        return out

    @nb.njit(cache=True, parallel=True)
    def _mom_fill(positions, w, k_c, diag, out):
        m = positions.shape[0]
        k2 = k_c * k_c
        for i in nb.prange(m):
            for j in range(m):
                if i == j:
                    out[3 * i, 3 * i] = diag[i]
                    out[3 * i + 1, 3 * i + 1] = diag[i]
                    out[3 * i + 2, 3 * i + 2] = diag[i]
                    continue
                dx = positions[i, 0] - positions[j, 0]
                dy = positions[i, 1] - positions[j, 1]
                dz = positions[i, 2] - positions[j, 2]
                r = np.sqrt(dx * dx + dy * dy + dz * dz)
                kr = k_c * r
                inv_kr = 1.0 / kr
                inv_kr2 = inv_kr * inv_kr
                g = 3.0 * inv_kr2 - 3.0j * inv_kr - 1.0
                h = inv_kr2 - 1.0j * inv_kr - 1.0
                coef = -k2 * w[j] * np.exp(1j * kr) / (_FOUR_PI * r)
                rx = dx / r
                ry = dy / r
                rz = dz / r
                out[3 * i, 3 * j] = coef * (g * rx * rx - h)
                out[3 * i, 3 * j + 1] = coef * (g * rx * ry)
                out[3 * i, 3 * j + 2] = coef * (g * rx * rz)
                out[3 * i + 1, 3 * j] = coef * (g * ry * rx)
                out[3 * i + 1, 3 * j + 1] = coef * (g * ry * ry - h)
                out[3 * i + 1, 3 * j + 2] = coef * (g * ry * rz)
                out[3 * i + 2, 3 * j] = coef * (g * rz * rx)
                out[3 * i + 2, 3 * j + 1] = coef * (g * rz * ry)
                out[3 * i + 2, 3 * j + 2] = coef * (g * rz * rz - h)

    def mom_matrix_numba(positions, chi, volumes, k_c, self_term=True):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        chi = np.asarray(chi, dtype=np.complex128)
        w = chi * np.asarray(volumes, dtype=np.float64)
        m = positions.shape[0]
        diag = np.ones(m, dtype=np.complex128)
        if self_term:
            diag = diag + chi / 3.0
        out = np.zeros((3 * m, 3 * m), dtype=np.complex128)
        _mom_fill(positions, w, float(k_c), diag, out)
        return out

    @nb.njit(cache=True, parallel=True)
    def _pairwise_min_sq(a, b):
        out = np.empty(a.shape[0], dtype=np.float64)
        d = a.shape[1]
        for i in nb.prange(a.shape[0]):
            best = np.inf
            for j in range(b.shape[0]):
                acc = 0.0
                for c in range(d):
                    t = a[i, c] - b[j, c]
                    acc += t * t
                if acc < best:
                    best = acc
            out[i] = best
        return out

    def pairwise_min_sq_numba(a, b):
        return _pairwise_min_sq(
            np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64),
        )


if USE_NUMBA and HAS_NUMBA:
    greens_tensor = greens_tensor_numba
    mom_matrix = mom_matrix_numba
    pairwise_min_sq = pairwise_min_sq_numba
else:
    greens_tensor = greens_tensor_numpy
    mom_matrix = mom_matrix_numpy
    pairwise_min_sq = pairwise_min_sq_numpy
