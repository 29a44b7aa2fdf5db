"""Target geometry: procedural quadrotor shapes, poses, trajectories, and the
normalized 5D point-cloud representation.

Coordinates live in three frames: the body frame (shape definition, origin at
the airframe center), the world frame (meters, base station at the origin),
and the normalized frame (u, v, w) = ((x, y, z) - q_pre) / s relative to a
reconstruction region. The two extra per-point channels are the real and
imaginary parts of the material's contrast against air,

    ep_re = eps_rel - 1,    ep_im = sigma / (2 pi f_c eps_0),

so a denormalized cloud feeds the scattering solver directly.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .constants import EPSILON_0

EPS_REL_RANGE = (1.5, 5.0)
SIGMA_RANGE = (1e-3, 1e-2)     # S/m
TILT_XY_MAX_DEG = 30.0
SHAPE_KINDS = ("quad_a", "quad_b", "quad_c", "quad_d", "quad_e")


class EmPoint(NamedTuple):
    """One normalized 5D point: coordinates plus contrast channels."""

    u: float
    v: float
    w: float
    ep_re: float
    ep_im: float


@dataclass
class EmPointCloud:
    """M normalized 5D points as an (M, 5) float64 array.

    ``rotor_mask`` marks generation-side rotor-disk points; reconstructed
    clouds carry ``None``.
    """

    points: np.ndarray
    rotor_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 5)
        if self.rotor_mask is not None:
            self.rotor_mask = np.asarray(self.rotor_mask, dtype=bool).reshape(-1)
            if self.rotor_mask.shape[0] != self.points.shape[0]:
                raise ValueError("rotor_mask length does not match point count")

    def __len__(self) -> int:
        return self.points.shape[0]

    def point(self, i: int) -> EmPoint:
        return EmPoint(*self.points[i])

    @property
    def coords(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def ep(self) -> np.ndarray:
        return self.points[:, 3:]

    def validate(self):
        if len(self) == 0:
            raise ValueError("empty point cloud")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point cloud entries")


@dataclass
class RegionSpec:
    """Reconstruction region: predicted center q_pre and per-axis scales s."""

    q_pre: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.q_pre = np.asarray(self.q_pre, dtype=np.float64).reshape(3)
        self.s = np.asarray(self.s, dtype=np.float64).reshape(3)
        if np.any(self.s <= 0.0):
            raise ValueError("region scales must be positive")


@dataclass
class UavShape:
    """Body-frame surface samples of one airframe with shared material."""

    body_points: np.ndarray
    rotor_mask: np.ndarray
    eps_rel: float
    sigma_cond: float
    kind: str = "quad_a"

    def __post_init__(self):
        self.body_points = np.asarray(self.body_points, dtype=np.float64).reshape(-1, 3)
        self.rotor_mask = np.asarray(self.rotor_mask, dtype=bool).reshape(-1)
        if self.rotor_mask.shape[0] != self.body_points.shape[0]:
            raise ValueError("rotor_mask length does not match point count")
        lo, hi = EPS_REL_RANGE
        if not (lo <= self.eps_rel <= hi):
            raise ValueError(f"eps_rel {self.eps_rel} outside [{lo}, {hi}]")
        lo, hi = SIGMA_RANGE
        if not (lo <= self.sigma_cond <= hi):
            raise ValueError(f"sigma_cond {self.sigma_cond} outside [{lo}, {hi}] S/m")


@dataclass
class Pose:
    """World position q (meters) and tilt angles theta = (tx, ty, tz) in degrees."""

    q: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(3)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(3)
        if np.any(np.abs(self.theta[:2]) > TILT_XY_MAX_DEG + 1e-9):
            raise ValueError("tilt about x/y exceeds +-30 degrees")
        if abs(self.theta[2]) > 180.0 + 1e-9:
            raise ValueError("yaw outside +-180 degrees")


@dataclass
class Trajectory:
    poses: list
    dt: float

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.stack([p.q for p in self.poses])


# ---------------------------------------------------------------------------
# procedural shapes
# ---------------------------------------------------------------------------
# per-kind geometry: fuselage (lx, ly, lz), hub reach from origin in the x-y
# plane, rotor radius, rotor plane height, arm radius. All shapes stay inside
# a 0.6 m cube centered at the body origin.
_SHAPE_PARAMS = {
    "quad_a": dict(fuselage=(0.16, 0.16, 0.08), reach=0.19, rotor_r=0.10, rotor_z=0.06, arm_r=0.010),
    "quad_b": dict(fuselage=(0.12, 0.12, 0.06), reach=0.23, rotor_r=0.06, rotor_z=0.05, arm_r=0.008),
    "quad_c": dict(fuselage=(0.24, 0.12, 0.07), reach=0.18, rotor_r=0.09, rotor_z=0.07, arm_r=0.010),
    "quad_d": dict(fuselage=(0.10, 0.10, 0.05), reach=0.14, rotor_r=0.07, rotor_z=0.04, arm_r=0.006),
    "quad_e": dict(fuselage=(0.14, 0.14, 0.10), reach=0.16, rotor_r=0.13, rotor_z=0.08, arm_r=0.012),
}


def _sample_box_surface(n, dims, rng):
    """Uniform samples on the surface of an origin-centered box."""
    lx, ly, lz = dims
    areas = np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    a = rng.uniform(-0.5, 0.5, size=n)
    b = rng.uniform(-0.5, 0.5, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        f = face[i]
        if f < 2:
            pts[i] = ((0.5 if f == 0 else -0.5) * lx, a[i] * ly, b[i] * lz)
        elif f < 4:
            pts[i] = (a[i] * lx, (0.5 if f == 2 else -0.5) * ly, b[i] * lz)
        else:
            pts[i] = (a[i] * lx, b[i] * ly, (0.5 if f == 4 else -0.5) * lz)
    return pts


def _sample_cylinder(n, p0, p1, radius, rng):
    """Uniform samples on the lateral surface of a cylinder from p0 to p1."""
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    # orthonormal frame around the axis
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    t = rng.uniform(0.0, length, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return (
        p0[None, :]
        + t[:, None] * axis[None, :]
        + radius * np.cos(phi)[:, None] * e1[None, :]
        + radius * np.sin(phi)[:, None] * e2[None, :]
    )


def _sample_disk(n, center, radius, rng):
    """Uniform samples on a horizontal disk (exactly planar in z)."""
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    pts[:, 0] = center[0] + r * np.cos(phi)
    pts[:, 1] = center[1] + r * np.sin(phi)
    pts[:, 2] = center[2]
    return pts


def _allocate(weights, total, n_min):
    """Largest-remainder allocation of ``total`` points with a floor of ``n_min``."""
    weights = np.asarray(weights, dtype=np.float64)
    k = len(weights)
    if total < k * n_min:
        raise ValueError(f"point budget {total} too small for {k} components")
    spare = total - k * n_min
    raw = weights / weights.sum() * spare
    counts = np.floor(raw).astype(int)
    rem = raw - counts
    for i in np.argsort(-rem)[: spare - counts.sum()]:
        counts[i] += 1
    return counts + n_min


def make_shape(kind: str, point_budget: int, material, rng) -> UavShape:
    """Sample a procedural quadrotor surface with ``point_budget`` points.

    ``material`` is an (eps_rel, sigma_cond) pair. Rotor-disk points carry
    ``rotor_mask = True``; all four disks share one plane in the body frame.
    """
    if kind not in _SHAPE_PARAMS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    if point_budget < 16:
        raise ValueError("point_budget must be at least 16")
    p = _SHAPE_PARAMS[kind]
    eps_rel, sigma_cond = material

    d = p["reach"] / math.sqrt(2.0)
    hubs = np.array([(sx * d, sy * d, p["rotor_z"]) for sx in (1, -1) for sy in (1, -1)])
    lx, ly, lz = p["fuselage"]
    arm_roots = np.array([(sx * lx / 2, sy * ly / 2, lz / 2) for sx in (1, -1) for sy in (1, -1)])

    fus_area = 2 * (lx * ly + lx * lz + ly * lz)
    arm_area = 2 * np.pi * p["arm_r"] * np.linalg.norm(hubs[0] - arm_roots[0])
    rot_area = np.pi * p["rotor_r"] ** 2
    counts = _allocate(
        [fus_area] + [arm_area] * 4 + [rot_area] * 4, point_budget, n_min=1
    )

    parts = [_sample_box_surface(counts[0], p["fuselage"], rng)]
    for i in range(4):
        parts.append(_sample_cylinder(counts[1 + i], arm_roots[i], hubs[i], p["arm_r"], rng))
    for i in range(4):
        parts.append(_sample_disk(counts[5 + i], hubs[i], p["rotor_r"], rng))

    pts = np.concatenate(parts)
    mask = np.zeros(point_budget, dtype=bool)
    mask[counts[:5].sum():] = True
    return UavShape(pts, mask, float(eps_rel), float(sigma_cond), kind=kind)


# ---------------------------------------------------------------------------
# poses and trajectories
# ---------------------------------------------------------------------------
def rotation_matrix(theta_deg) -> np.ndarray:
    """Body-to-world rotation R_z(tz) @ R_y(ty) @ R_x(tx), angles in degrees."""
    tx, ty, tz = np.radians(np.asarray(theta_deg, dtype=np.float64))
    cx, sx = math.cos(tx), math.sin(tx)
    cy, sy = math.cos(ty), math.sin(ty)
    cz, sz = math.cos(tz), math.sin(tz)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def apply_pose(shape: UavShape, pose: Pose) -> np.ndarray:
    """World-frame positions of the shape's body points under ``pose``."""
    r = rotation_matrix(pose.theta)
    return shape.body_points @ r.T + pose.q[None, :]


def rotor_plane_normal(pose: Pose) -> np.ndarray:
    """World-frame unit normal of the rotor plane (body +z under the pose)."""
    return rotation_matrix(pose.theta)[:, 2].copy()


def sample_trajectory(flight_range, n_steps: int, dt: float, bounds, rng) -> Trajectory:
    """Random trajectory satisfying speed and acceleration bounds exactly.

    A mean-reverting bounded-acceleration velocity walk is integrated from the
    origin, then scaled per axis (scaling never increases speeds or speed
    changes) and translated to fit inside ``flight_range``. Tilt angles are
    low-pass filtered uniform draws within the allowed ranges.

    ``flight_range`` is a (3, 2) array of per-axis [lo, hi] in meters;
    ``bounds`` is (v_max, a_max).
    """
    v_max, a_max = bounds
    if v_max <= 0.0 or a_max <= 0.0:
        raise ValueError("v_max and a_max must be positive")
    if n_steps < 2:
        raise ValueError("n_steps must be at least 2")
    frange = np.asarray(flight_range, dtype=np.float64).reshape(3, 2)

    v = rng.uniform(-1.0, 1.0, size=3)
    v *= 0.5 * v_max / max(np.linalg.norm(v), 1e-12)
    vel = [v.copy()]
    for _ in range(n_steps - 2):
        a = -0.5 * v + rng.normal(scale=a_max, size=3)
        na = np.linalg.norm(a)
        if na > a_max:
            a *= a_max / na
        v_new = v + a * dt
        speed = np.linalg.norm(v_new)
        if speed > v_max:
            # shrink the acceleration step until the speed cap is met
            t_lo, t_hi = 0.0, 1.0
            for _ in range(60):
                t = 0.5 * (t_lo + t_hi)
                if np.linalg.norm(v + t * a * dt) > v_max:
                    t_hi = t
                else:
                    t_lo = t
            v_new = v + t_lo * a * dt
        v = v_new
        vel.append(v.copy())

    q = np.zeros((n_steps, 3))
    q[1:] = np.cumsum(np.stack(vel) * dt, axis=0)

    span = q.max(axis=0) - q.min(axis=0)
    size = frange[:, 1] - frange[:, 0]
    gamma = np.minimum(1.0, 0.95 * size / np.maximum(span, 1e-12))
    q *= gamma[None, :]
    lo = frange[:, 0] - q.min(axis=0)
    hi = frange[:, 1] - q.max(axis=0)
    q += rng.uniform(lo, hi)[None, :]

    theta = np.empty((n_steps, 3))
    limits = np.array([TILT_XY_MAX_DEG, TILT_XY_MAX_DEG, 180.0])
    theta[0] = rng.uniform(-limits, limits)
    c = 0.3
    for k in range(1, n_steps):
        target = rng.uniform(-limits, limits)
        theta[k] = (1.0 - c) * theta[k - 1] + c * target

    poses = [Pose(q[k], theta[k]) for k in range(n_steps)]
    return Trajectory(poses, dt)


# ---------------------------------------------------------------------------
# region and normalization
# ---------------------------------------------------------------------------
def make_region(q_true, err_radius: float, s, rng) -> RegionSpec:
    """Region centered at the true position plus a coarse-estimation error,
    drawn uniformly from the cube [-err_radius, err_radius]^3."""
    if err_radius < 0.0:
        raise ValueError("err_radius must be non-negative")
    q_true = np.asarray(q_true, dtype=np.float64).reshape(3)
    e = rng.uniform(-err_radius, err_radius, size=3) if err_radius > 0 else np.zeros(3)
    return RegionSpec(q_true + e, np.asarray(s, dtype=np.float64))


def contrast_channels(eps_rel: float, sigma_cond: float, f_c: float):
    """Real/imaginary contrast of a material against air at carrier f_c."""
    return eps_rel - 1.0, sigma_cond / (2.0 * np.pi * f_c * EPSILON_0)


def normalize_cloud(world_points, shape: UavShape, region: RegionSpec, f_c: float) -> EmPointCloud:
    """Build the normalized 5D cloud from world-frame surface points."""
    world_points = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(world_points)):
        raise ValueError("non-finite world points")
    uvw = (world_points - region.q_pre[None, :]) / region.s[None, :]
    ep_re, ep_im = contrast_channels(shape.eps_rel, shape.sigma_cond, f_c)
    pts = np.empty((world_points.shape[0], 5))
    pts[:, :3] = uvw
    pts[:, 3] = ep_re
    pts[:, 4] = ep_im
    return EmPointCloud(pts, rotor_mask=shape.rotor_mask.copy())


def denormalize_cloud(cloud: EmPointCloud, region: RegionSpec):
    """Invert the coordinate normalization.

    Returns (world_points (M, 3), chi (M,) complex) where chi = ep_re + j ep_im.
    """
    world = cloud.coords * region.s[None, :] + region.q_pre[None, :]
    chi = cloud.points[:, 3] + 1j * cloud.points[:, 4]
    return world, chi
