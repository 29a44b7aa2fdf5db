"""Electromagnetic forward model: dyadic Green's function, incident/total/
scattered fields, sensing-channel assembly, DFT-codebook precoding, and noisy
echo synthesis.

Antennas are modeled as ideal point dipoles with moment v_p at the element
centers, so the field at p due to unit excitation of element n is
G(p, p_n) v_p. The scattered return closes the loop through the receive
polarization, giving

    H[m, n] = v_p^T k^2 sum_i chi_i V_i G(p_m, p_i) E_tot^{(n)}(p_i),

with E_tot the incident field (first-order Born) or the solution of the
point-matched volume integral equation (dense method-of-moments solve).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import dft

from . import kernels
from .constants import C0, wavelength, wavenumber

MOM_SIZE_CAP = 512


@dataclass
class ArrayConfig:
    """Planar half-wavelength antenna grid in the x-z plane at the origin."""

    n_x: int
    n_z: int
    f_c: float
    v_p: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.v_p = np.asarray(self.v_p, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.v_p)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("polarization vector must be unit length")

    @property
    def n_b(self) -> int:
        return self.n_x * self.n_z

    @property
    def k_c(self) -> float:
        return wavenumber(self.f_c)

    def element_positions(self) -> np.ndarray:
        """(N_b, 3) element centers; index n maps to (ix, iz) = (n // n_z, n % n_z)."""
        d = wavelength(self.f_c) / 2.0
        ix = np.arange(self.n_x) - (self.n_x - 1) / 2.0
        iz = np.arange(self.n_z) - (self.n_z - 1) / 2.0
        pts = np.zeros((self.n_x, self.n_z, 3))
        pts[:, :, 0] = d * ix[:, None]
        pts[:, :, 2] = d * iz[None, :]
        return pts.reshape(-1, 3)


@dataclass
class ScattererSet:
    """World-frame scatter points with complex contrast and voxel volumes."""

    positions: np.ndarray
    chi: np.ndarray
    volumes: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.chi = np.asarray(self.chi, dtype=np.complex128).reshape(-1)
        self.volumes = np.asarray(self.volumes, dtype=np.float64).reshape(-1)
        m = self.positions.shape[0]
        if self.chi.shape[0] != m or self.volumes.shape[0] != m:
            raise ValueError("positions, chi, volumes must have equal length")
        if np.any(self.volumes <= 0.0):
            raise ValueError("voxel volumes must be positive")

    @classmethod
    def from_world_points(cls, world_points, eps_rel, sigma_cond, f_c):
        """Uniform voxel volumes from the bounding-box volume of the samples."""
        from .scene import contrast_channels

        world_points = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
        ep_re, ep_im = contrast_channels(eps_rel, sigma_cond, f_c)
        span = world_points.max(axis=0) - world_points.min(axis=0)
        v_box = float(np.prod(np.maximum(span, 1e-6)))
        m = world_points.shape[0]
        return cls(
            world_points,
            np.full(m, ep_re + 1j * ep_im, dtype=np.complex128),
            np.full(m, v_box / m),
        )

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass
class TransmitFrame:
    """Precoding matrix, symbol matrix, and transmit power of one frame."""

    W: np.ndarray
    S: np.ndarray
    p_s: float

    @property
    def X(self) -> np.ndarray:
        return self.W @ self.S


@dataclass
class ChannelMeasurement:
    """True channel, noisy echoes, and the realized signal-to-noise ratio."""

    H: np.ndarray
    Y: np.ndarray
    sigma2: float
    p_snr: float


class SingularGeometryError(ValueError):
    """Raised for coincident field/source points where the kernel is singular."""


def greens_dyadic(p1, p2, k_c: float) -> np.ndarray:
    """3x3 dyadic Green's function between two points (see module docstring)."""
    p1 = np.asarray(p1, dtype=np.float64).reshape(3)
    p2 = np.asarray(p2, dtype=np.float64).reshape(3)
    if np.array_equal(p1, p2):
        raise SingularGeometryError("Green's function is singular at coincident points")
    return kernels.greens_tensor(p1[None, :], p2[None, :], k_c)[0, 0]


def _check_disjoint(points_a, points_b):
    d = points_a[:, None, :] - points_b[None, :, :]
    if np.any(np.sum(d * d, axis=-1) == 0.0):
        raise SingularGeometryError("scatterer coincides with an antenna element")


def incident_field(scatterers: ScattererSet, array: ArrayConfig) -> np.ndarray:
    """Per-(point, antenna) incident field columns m_n(p_i) = G(p_i, ant_n) v_p.

    Returns (M, N_b, 3) complex. The field at p_i under excitation x is
    ``einsum('inb,n->ib', out, x)``.
    """
    ants = array.element_positions()
    _check_disjoint(scatterers.positions, ants)
    g = kernels.greens_tensor(scatterers.positions, ants, array.k_c)  # (M, N_b, 3, 3)
    return g @ array.v_p


def solve_total_field(
    scatterers: ScattererSet,
    incident: np.ndarray,
    k_c: float,
    mode: str = "born",
    self_term: bool = True,
    size_cap: int = MOM_SIZE_CAP,
):
    """Total field at the scatter points for one or more excitations.

    ``incident`` has shape (M, 3) or (M, 3, K) for K right-hand sides. Born
    mode returns the incident field unchanged; MoM mode solves the dense
    3M x 3M point-matched system and verifies the residual.
    """
    m = len(scatterers)
    if mode == "born":
        return np.array(incident, dtype=np.complex128, copy=True)
    if mode != "mom":
        raise ValueError(f"unknown solver mode {mode!r}")
    if m > size_cap:
        raise ValueError(f"MoM solve with M={m} exceeds the cap of {size_cap}")

    a = kernels.mom_matrix(scatterers.positions, scatterers.chi, scatterers.volumes, k_c, self_term=self_term)
    inc = np.asarray(incident, dtype=np.complex128)
    single = inc.ndim == 2
    rhs = inc.reshape(3 * m, -1, order="C") if single else inc.reshape(3 * m, inc.shape[2])
    sol = np.linalg.solve(a, rhs)
    resid = np.linalg.norm(a @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(sol)) or resid > 1e-8:
        raise np.linalg.LinAlgError(
            f"MoM solve ill-conditioned: residual {resid:.2e}, cond ~ {np.linalg.cond(a):.2e}"
        )
    out = sol.reshape(m, 3) if single else sol.reshape(m, 3, inc.shape[2])
    return out


def assemble_channel(
    scatterers: ScattererSet,
    array: ArrayConfig,
    mode: str = "born",
    self_term: bool = True,
    size_cap: int = MOM_SIZE_CAP,
) -> np.ndarray:
    """Sensing channel H (N_b x N_b) for the scatter scene.

    Column n is the echo across receive elements under unit excitation of
    transmit element n.
    """
    inc = incident_field(scatterers, array)            # (M, N_b, 3)
    k_c = array.k_c
    etot = solve_total_field(
        scatterers, np.swapaxes(inc, 1, 2), k_c, mode=mode, self_term=self_term, size_cap=size_cap
    )                                                  # (M, 3, N_b)
    w = (k_c * k_c) * scatterers.chi * scatterers.volumes
    # receive side reuses incident columns: v_p^T G(p_m, p_i) = m_m(p_i)^T
    return np.einsum("imc,i,icn->mn", inc, w, etot, optimize=True)


def dft_codebook(n_x: int, n_z: int, p_s: float) -> np.ndarray:
    """DFT precoder W = sqrt(p_s / N_b) (F_nx kron F_nz), W^H W = (p_s/N_b) I."""
    if n_x < 1 or n_z < 1:
        raise ValueError("antenna counts must be at least 1")
    f_x = dft(n_x, scale="sqrtn")
    f_z = dft(n_z, scale="sqrtn")
    n_b = n_x * n_z
    return np.sqrt(p_s / n_b) * np.kron(f_x, f_z)


def simulate_measurement(H, W, L: int, sigma2: float, rng, p_s: Optional[float] = None):
    """Synthesize one noisy echo frame: Y = H W S + N.

    Symbols are unit-modulus QPSK (zero mean, identity covariance in
    expectation); noise is circularly-symmetric complex Gaussian with
    per-entry variance ``sigma2``. Returns (ChannelMeasurement, TransmitFrame).
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    H = np.asarray(H, dtype=np.complex128)
    W = np.asarray(W, dtype=np.complex128)
    n_b = W.shape[0]
    quad = rng.integers(0, 4, size=(n_b, L))
    S = np.exp(1j * (np.pi / 4.0 + np.pi / 2.0 * quad))
    X = W @ S
    signal = H @ X
    if sigma2 > 0.0:
        N = np.sqrt(sigma2 / 2.0) * (rng.standard_normal((n_b, L)) + 1j * rng.standard_normal((n_b, L)))
        p_snr = float(np.linalg.norm(signal) ** 2 / np.linalg.norm(N) ** 2)
    else:
        N = np.zeros((n_b, L), dtype=np.complex128)
        p_snr = float("inf")
    if p_s is None:
        p_s = float(np.real(np.trace(W.conj().T @ W)))  # column powers sum to p_s per symbol
    meas = ChannelMeasurement(H=H, Y=signal + N, sigma2=float(sigma2), p_snr=p_snr)
    return meas, TransmitFrame(W=W, S=S, p_s=float(p_s))
