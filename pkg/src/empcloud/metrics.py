"""Reconstruction quality metrics: Chamfer/weighted distance, centroid
position estimation, rotor-plane extraction, and normal-direction error.

The weighted distance combines the Chamfer distance of the two clouds after
each is centered at its own centroid with the squared error between the
centroid-based position estimates of truth and reconstruction, reported as
10 log10 of the expectation. Positions enter in meters; the cloud term uses
the clouds' native normalized coordinates.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .kernels import pairwise_min_sq
from .scene import EmPointCloud, RegionSpec

WD_FLOOR_DB = -100.0
KDTREE_MIN_POINTS = 64   # below this a direct pairwise scan is faster


def _as_points(cloud, channels):
    pts = cloud.points if isinstance(cloud, EmPointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("empty point set")
    return pts[:, :channels] if pts.shape[1] > channels else pts


def chamfer_sq(a, b, channels: int = 3) -> float:
    """Symmetric mean squared nearest-neighbor distance between point sets.

    ``channels`` selects how many leading columns enter the distance
    (3 = positions only, 5 = positions plus EP channels).
    """
    pa = _as_points(a, channels)
    pb = _as_points(b, channels)
    if max(pa.shape[0], pb.shape[0]) >= KDTREE_MIN_POINTS:
        da = cKDTree(pb).query(pa)[0]
        db = cKDTree(pa).query(pb)[0]
        return float(np.mean(da**2) + np.mean(db**2))
    return float(np.mean(pairwise_min_sq(pa, pb)) + np.mean(pairwise_min_sq(pb, pa)))


def ep_match_error(truth, recon) -> float:
    """Mean squared EP error of position-wise nearest-neighbor matches."""
    pt = _as_points(truth, 5)
    pr = _as_points(recon, 5)
    idx = cKDTree(pt[:, :3]).query(pr[:, :3])[1]
    return float(np.mean(np.sum((pr[:, 3:] - pt[idx, 3:]) ** 2, axis=1)))


def estimate_position(cloud, region: RegionSpec) -> np.ndarray:
    """Centroid-based position: q_pre + s * mean(u, v, w)."""
    pts = _as_points(cloud, 3)
    return region.q_pre + region.s * pts.mean(axis=0)


def wd_argument(truth, recon, region: RegionSpec, channels: int = 3) -> float:
    """Centered Chamfer plus squared position-estimate error for one sample."""
    pt = _as_points(truth, channels)
    pr = _as_points(recon, channels)
    q_truth = estimate_position(truth, region)
    q_recon = estimate_position(recon, region)
    cham = chamfer_sq(pt - pt.mean(axis=0), pr - pr.mean(axis=0), channels=channels)
    return cham + float(np.sum((q_truth - q_recon) ** 2))


def wd_db(mean_argument: float) -> float:
    """dB form with a floor for perfect reconstructions."""
    if mean_argument <= 10.0 ** (WD_FLOOR_DB / 10.0):
        return WD_FLOOR_DB
    return 10.0 * math.log10(mean_argument)


def weighted_distance(samples, channels: int = 3) -> float:
    """WD in dB over an evaluation set of (truth, recon, region) triples.

    The expectation sits inside the logarithm: per-sample arguments are
    averaged first, then converted to dB.
    """
    args = [wd_argument(t, r, reg, channels=channels) for (t, r, reg) in samples]
    return wd_db(float(np.mean(args)))


# ---------------------------------------------------------------------------
# rotor plane and attitude
# ---------------------------------------------------------------------------
class PlaneNotFoundError(RuntimeError):
    pass


def select_rotor_points(
    cloud,
    mode: str = "labeled",
    rng=None,
    n_hypotheses: int = 500,
    slab_halfwidth: float = 0.03,
    min_inlier_frac: float = 0.10,
):
    """Points on the rotor plane, by label or by RANSAC dominant-plane search.

    ``labeled`` uses the generation-side rotor mask. ``ransac`` draws random
    3-point plane hypotheses and keeps the one with the most points within
    ``slab_halfwidth`` of it; it fails if no plane captures at least
    ``min_inlier_frac`` of the cloud.
    """
    if mode == "labeled":
        if not isinstance(cloud, EmPointCloud) or cloud.rotor_mask is None:
            raise ValueError("labeled mode needs a cloud with a rotor mask")
        return cloud.points[cloud.rotor_mask, :3]
    if mode != "ransac":
        raise ValueError(f"unknown rotor selection mode {mode!r}")

    pts = _as_points(cloud, 3)
    n = pts.shape[0]
    if n < 3:
        raise PlaneNotFoundError("need at least 3 points for a plane")
    rng = rng if rng is not None else np.random.default_rng(0)
    scale = float(np.linalg.norm(pts.std(axis=0))) or 1.0

    best_count = 0
    best_mask = None
    for _ in range(n_hypotheses):
        i, j, k = rng.choice(n, size=3, replace=False)
        normal = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(normal)
        if norm < 1e-9 * scale:
            continue  # degenerate (collinear) triple
        normal /= norm
        dist = np.abs((pts - pts[i]) @ normal)
        mask = dist <= slab_halfwidth
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < min_inlier_frac * n:
        raise PlaneNotFoundError(
            f"no plane with >= {min_inlier_frac:.0%} inliers in {n_hypotheses} hypotheses"
        )
    return pts[best_mask]


def estimate_normal(rotor_points, J: int = 100, rng=None) -> np.ndarray:
    """Average of J random-triple cross products, sign-aligned and normalized."""
    pts = np.asarray(rotor_points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 rotor points")
    if J < 1:
        raise ValueError("J must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    scale = float(np.linalg.norm(pts.std(axis=0))) or 1.0

    acc = np.zeros(3)
    reference = None
    degenerate = 0
    for _ in range(J):
        i, j, k = rng.choice(pts.shape[0], size=3, replace=False)
        cross = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(cross)
        if norm < 1e-12 * scale * scale:
            degenerate += 1
            continue
        sample = cross / norm
        if reference is None:
            reference = sample
        elif sample @ reference < 0.0:
            sample = -sample
        acc += sample
    if degenerate > J // 2 or reference is None:
        raise ValueError(f"degenerate triples in {degenerate}/{J} samples (near-collinear set)")
    return acc / np.linalg.norm(acc)


def canonical_sign(normal) -> np.ndarray:
    """Flip so the z-component is non-negative (tilt is limited to +-30 deg)."""
    normal = np.asarray(normal, dtype=np.float64)
    return -normal if normal[2] < 0.0 else normal.copy()


def mde(true_normal, est_normal) -> float:
    """Directional error 1 - cos similarity after sign canonicalization."""
    a = np.asarray(true_normal, dtype=np.float64)
    b = np.asarray(est_normal, dtype=np.float64)
    for v in (a, b):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("mde expects unit normals")
    return float(1.0 - canonical_sign(a) @ canonical_sign(b))


def mpe(q, q_est) -> float:
    """Positioning error in meters."""
    return float(np.linalg.norm(np.asarray(q, dtype=np.float64) - np.asarray(q_est, dtype=np.float64)))


@dataclass
class EvalReport:
    """Aggregated metrics plus the per-sample breakdown."""

    wd_db: float
    mcd: float
    mpe: float
    mde: float
    per_sample: list = field(default_factory=list)

    def to_dict(self):
        return {
            "wd_db": self.wd_db,
            "mcd": self.mcd,
            "mpe": self.mpe,
            "mde": self.mde,
            "n_samples": len(self.per_sample),
        }
