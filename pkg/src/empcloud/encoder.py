"""Channel feature encoder: maps the estimated channel plus region-center and
SNR side information to the latent condition vector z.

The estimated channel is vectorized and linearly projected; the projection is
then gated elementwise by a head driven by a Fourier encoding of the region
center, and a second head of the SNR encoding is appended before a 6-layer
MLP produces z. Gating (rather than adding) the positional information keeps
the projection focused on target structure while the head absorbs the
position-dependent phase ramps of the channel.
"""

from dataclasses import dataclass

import numpy as np

from .nn import Dense, MLP, Tensor, concat, sigmoid, sigmoid_np, swish, swish_np

SNR_DB_RANGE = (0.0, 40.0)


@dataclass
class LatentCondition:
    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.z)):
            raise ValueError("non-finite latent condition")


def vectorize_channel(h_est) -> np.ndarray:
    """Column-major flatten with interleaved (real, imag) parts: length 2 N^2."""
    h_est = np.asarray(h_est, dtype=np.complex128)
    flat = h_est.flatten(order="F")
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out


def unvectorize_channel(vec, n_rows: int) -> np.ndarray:
    """Exact inverse of :func:`vectorize_channel`."""
    vec = np.asarray(vec, dtype=np.float64)
    flat = vec[0::2] + 1j * vec[1::2]
    return flat.reshape(n_rows, -1, order="F")


def affine_to_unit(x, lo, hi):
    """Map [lo, hi] to [-1, 1] per component, clamping out-of-range values."""
    x = np.asarray(x, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return np.clip(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def fourier_encode(x, d_xi: int) -> np.ndarray:
    """Per-component harmonic lift of a normalized vector.

    Each component x maps to [x, sin(2^0 pi x), cos(2^0 pi x), ...,
    sin(2^(d_xi-1) pi x), cos(2^(d_xi-1) pi x)]; components are concatenated,
    giving length k (2 d_xi + 1).
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty((x.size, 2 * d_xi + 1))
    out[:, 0] = x
    for level in range(d_xi):
        arg = (2.0**level) * np.pi * x
        out[:, 1 + 2 * level] = np.sin(arg)
        out[:, 2 + 2 * level] = np.cos(arg)
    return out.reshape(-1)


def snr_db(p_snr: float) -> float:
    """Realized linear SNR in dB, clamped to the embedding range."""
    lo, hi = SNR_DB_RANGE
    if p_snr <= 0.0:
        return lo
    return float(np.clip(10.0 * np.log10(p_snr), lo, hi))


class _GateHead:
    """Two-layer head ending in 2*sigmoid: a positive gate centered at 1."""

    def __init__(self, in_dim, hidden, out_dim, rng, name):
        self.l0 = Dense(in_dim, hidden, rng, name=f"{name}.l0")
        self.l1 = Dense(hidden, out_dim, rng, name=f"{name}.l1", weight_scale=0.1 / np.sqrt(hidden))

    def __call__(self, x: Tensor) -> Tensor:
        return sigmoid(self.l1(swish(self.l0(x)))) * 2.0

    def apply_np(self, x):
        return 2.0 * sigmoid_np(self.l1.apply_np(swish_np(self.l0.apply_np(x))))

    def params(self):
        return self.l0.params() + self.l1.params()


class _SnrHead:
    """Two-layer head whose output is appended to the embedded vector."""

    def __init__(self, in_dim, hidden, out_dim, rng, name):
        self.l0 = Dense(in_dim, hidden, rng, name=f"{name}.l0")
        self.l1 = Dense(hidden, out_dim, rng, name=f"{name}.l1")

    def __call__(self, x: Tensor) -> Tensor:
        return self.l1(swish(self.l0(x)))

    def apply_np(self, x):
        return self.l1.apply_np(swish_np(self.l0.apply_np(x)))

    def params(self):
        return self.l0.params() + self.l1.params()


class ChannelEncoder:
    """Estimated channel + (q_pre, SNR) side info -> latent condition z.

    ``mode`` selects the conditioning pathway:
      * ``embed``  - full multiplicative position gate and SNR append (default)
      * ``noebd``  - projection feeds the MLP directly, no embeddings
      * ``direct`` - z is the raw vectorized channel; no parameters at all
    """

    def __init__(self, n_b, d_xi, d_p, d_snr, mlp_hidden, d_z, flight_range, rng, mode="embed"):
        if mode not in ("embed", "noebd", "direct"):
            raise ValueError(f"unknown encoder mode {mode!r}")
        self.n_b = n_b
        self.d_xi = d_xi
        self.mode = mode
        self.flight_range = np.asarray(flight_range, dtype=np.float64).reshape(3, 2)
        vec_dim = 2 * n_b * n_b
        if mode == "direct":
            self.d_z = vec_dim
            return
        self.d_z = d_z
        self.proj = Dense(vec_dim, d_p, rng, name="enc.proj")
        pos_dim = 3 * (2 * d_xi + 1)
        snr_dim = 2 * d_xi + 1
        if mode == "embed":
            self.gate_head = _GateHead(pos_dim, max(16, d_p // 2), d_p, rng, name="enc.gate")
            self.snr_head = _SnrHead(snr_dim, 16, d_snr, rng, name="enc.snr")
            mlp_in = d_p + d_snr
        else:
            mlp_in = d_p
        self.mlp = MLP([mlp_in] + list(mlp_hidden) + [d_z], rng, name="enc.mlp")

    # -- feature preparation (constant w.r.t. parameters) ---------------------
    def side_features(self, q_pre, p_snr):
        xi_pos = fourier_encode(
            affine_to_unit(q_pre, self.flight_range[:, 0], self.flight_range[:, 1]), self.d_xi
        )
        xi_snr = fourier_encode(
            affine_to_unit(snr_db(p_snr), SNR_DB_RANGE[0], SNR_DB_RANGE[1]), self.d_xi
        )
        return xi_pos, xi_snr

    def embed(self, h_vec: Tensor, xi_pos: Tensor, xi_snr: Tensor) -> Tensor:
        """Embedded channel vector [gate(xi_pos) * proj(vec); snr_head(xi_snr)]."""
        h_proj = self.proj(h_vec)
        if self.mode != "embed":
            return h_proj
        gated = self.gate_head(xi_pos) * h_proj
        return concat([gated, self.snr_head(xi_snr)], axis=1)

    def encode(self, h_est, q_pre, p_snr) -> Tensor:
        """Latent condition for one sample as a (1, d_z) tensor on the tape."""
        return self.encode_batch([h_est], [q_pre], [p_snr])

    def encode_batch(self, h_ests, q_pres, p_snrs) -> Tensor:
        """Latent conditions for a batch as a (B, d_z) tensor on the tape."""
        vecs = np.stack([vectorize_channel(h) for h in h_ests])
        if self.mode == "direct":
            return Tensor(vecs)
        if self.mode == "noebd":
            return self.mlp(self.proj(Tensor(vecs)))
        sides = [self.side_features(q, p) for q, p in zip(q_pres, p_snrs)]
        xi_pos = np.stack([s[0] for s in sides])
        xi_snr = np.stack([s[1] for s in sides])
        h_emb = self.embed(Tensor(vecs), Tensor(xi_pos), Tensor(xi_snr))
        return self.mlp(h_emb)

    def encode_np(self, h_est, q_pre, p_snr) -> np.ndarray:
        """Plain-numpy inference path; matches :meth:`encode` exactly."""
        vec = vectorize_channel(h_est)[None, :]
        if self.mode == "direct":
            return vec[0]
        h_proj = self.proj.apply_np(vec)
        if self.mode == "embed":
            xi_pos, xi_snr = self.side_features(q_pre, p_snr)
            gated = self.gate_head.apply_np(xi_pos[None, :]) * h_proj
            h_emb = np.concatenate([gated, self.snr_head.apply_np(xi_snr[None, :])], axis=1)
        else:
            h_emb = h_proj
        return self.mlp.apply_np(h_emb)[0]

    def params(self):
        if self.mode == "direct":
            return []
        out = self.proj.params()
        if self.mode == "embed":
            out += self.gate_head.params() + self.snr_head.params()
        return out + self.mlp.params()
