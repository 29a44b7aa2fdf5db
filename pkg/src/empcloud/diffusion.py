"""Conditional denoising diffusion over 5D points.

Forward corruption follows p_s = sqrt(abar_s) p_0 + sqrt(1 - abar_s) eps with
abar the cumulative product of per-step retention factors; the reverse pass
iterates the learned posterior mean

    mu(p_s, s, z) = (p_s - talpha_s * eps_hat(p_s, s, z)) / sqrt(alpha_s),
    talpha_s = beta_s / sqrt(1 - abar_s),

adding sqrt(tbeta_s) Gaussian noise except at the final step, where tbeta_1
is identically zero. The noise estimator is a stack of ConcatSquash layers
conditioned on the normalized step embedding and the latent code z.

Schedule tables are stored 1-indexed (index s for step s, abar[0] = 1) so the
identities tbeta_1 = 0 and abar_s = alpha_s * abar_{s-1} hold by construction.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .nn import ConcatSquash, Tensor, concat, swish, swish_np
from .scene import EmPointCloud


@dataclass
class NoiseSchedule:
    """Per-step diffusion tables; arrays have length S + 1, entry 0 unused
    except abar[0] = 1."""

    S: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    tilde_beta: np.ndarray
    tilde_alpha: np.ndarray


def build_schedule(S: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta schedule with derived alpha/posterior tables."""
    if S < 1:
        raise ValueError("S must be at least 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.zeros(S + 1)
    beta[1:] = np.linspace(beta_start, beta_end, S)
    alpha = 1.0 - beta
    alpha_bar = np.ones(S + 1)
    alpha_bar[1:] = np.cumprod(alpha[1:])
    tilde_beta = np.zeros(S + 1)
    tilde_beta[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    tilde_alpha = np.zeros(S + 1)
    tilde_alpha[1:] = beta[1:] / np.sqrt(1.0 - alpha_bar[1:])
    return NoiseSchedule(S, beta, alpha, alpha_bar, tilde_beta, tilde_alpha)


def _check_step(s, S):
    s = np.asarray(s)
    if np.any(s < 1) or np.any(s > S):
        raise ValueError(f"diffusion step out of range 1..{S}")


def _table_at(table, s, target_ndim):
    """Index a schedule table with scalar or per-row s, ready to broadcast."""
    s_arr = np.asarray(s)
    val = table[s_arr]
    if s_arr.ndim == 1 and target_ndim == 2:
        val = val[:, None]
    return val


def forward_sample(p0, s, schedule: NoiseSchedule, eps):
    """One-shot corruption to step s; s may be a scalar or one entry per row."""
    _check_step(s, schedule.S)
    p0 = np.asarray(p0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = _table_at(schedule.alpha_bar, s, p0.ndim)
    return np.sqrt(ab) * p0 + np.sqrt(1.0 - ab) * eps


def eps_from_sample(p_s, p0, s, schedule: NoiseSchedule):
    """The noise realization implied by (p_s, p0) at step s."""
    _check_step(s, schedule.S)
    p_s = np.asarray(p_s, dtype=np.float64)
    ab = _table_at(schedule.alpha_bar, s, p_s.ndim)
    return (p_s - np.sqrt(ab) * np.asarray(p0)) / np.sqrt(1.0 - ab)


def posterior_stats(p_s, p0, s: int, schedule: NoiseSchedule):
    """Mean and variance of the reverse transition conditioned on p0
    (coefficient form of the posterior mean)."""
    if s < 2:
        raise ValueError("posterior_stats requires s >= 2 (tilde_beta[1] = 0)")
    _check_step(s, schedule.S)
    ab_s = schedule.alpha_bar[s]
    ab_prev = schedule.alpha_bar[s - 1]
    beta = schedule.beta[s]
    alpha = schedule.alpha[s]
    mean = (
        np.sqrt(ab_prev) * beta / (1.0 - ab_s) * np.asarray(p0)
        + np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_s) * np.asarray(p_s)
    )
    return mean, float(schedule.tilde_beta[s])


def mean_from_eps(p_s, eps, s, schedule: NoiseSchedule):
    """Noise form of the posterior mean; this is what the sampler iterates."""
    _check_step(s, schedule.S)
    p_s = np.asarray(p_s, dtype=np.float64)
    ta = _table_at(schedule.tilde_alpha, s, p_s.ndim)
    al = _table_at(schedule.alpha, s, p_s.ndim)
    return (p_s - ta * np.asarray(eps)) / np.sqrt(al)


def step_features(s, S: int) -> np.ndarray:
    """Per-row step embedding [sbar, sin sbar, cos sbar, sin 2 sbar, cos 2 sbar]."""
    sbar = np.atleast_1d(np.asarray(s, dtype=np.float64)) / S
    return np.stack([sbar, np.sin(sbar), np.cos(sbar), np.sin(2 * sbar), np.cos(2 * sbar)], axis=1)


class NoiseEstimator:
    """ConcatSquash stack; input/output width 5, context width 5 + d_z."""

    def __init__(self, widths, d_z, rng):
        widths = list(widths)
        if widths[0] != 5 or widths[-1] != 5:
            raise ValueError("noise estimator must map 5 -> 5")
        self.widths = widths
        self.d_z = d_z
        ctx = 5 + d_z
        self.layers = [
            ConcatSquash(widths[i], widths[i + 1], ctx, rng, name=f"net.cs{i}")
            for i in range(len(widths) - 1)
        ]

    def __call__(self, x: Tensor, c: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = swish(layer(x, c))
        return self.layers[-1](x, c)

    def apply_np(self, x, c):
        for layer in self.layers[:-1]:
            x = swish_np(layer.apply_np(x, c))
        return self.layers[-1].apply_np(x, c)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


def predict_noise(net: NoiseEstimator, p_s, s, z, S: int) -> np.ndarray:
    """Estimated noise for points p_s (M, 5) at step(s) s under condition z."""
    p_s = np.atleast_2d(np.asarray(p_s, dtype=np.float64))
    m = p_s.shape[0]
    s_arr = np.full(m, s) if np.ndim(s) == 0 else np.asarray(s)
    feats = step_features(s_arr, S)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    c = np.concatenate([feats, np.repeat(z[None, :], m, axis=0)], axis=1)
    return net.apply_np(p_s, c)


def _row(t: Tensor, i: int) -> Tensor:
    """View row i of a 2-D tensor as (1, d) on the tape."""

    def backward(grad):
        full = np.zeros_like(t.data)
        full[i : i + 1] = grad
        t._accum(full)

    return Tensor._result(t.data[i : i + 1], (t,), backward)


def training_loss(
    net: NoiseEstimator,
    clouds,
    z_rows: Tensor,
    schedule: NoiseSchedule,
    gamma_pos: float,
    gamma_ep: float,
    rng,
) -> Tensor:
    """Weighted denoising loss over a batch of (cloud, condition) pairs.

    For every point independently a step s is drawn uniformly from 1..S and a
    noise vector eps from N(0, I5); the loss is
    gamma_pos |eps_pos - eps_hat_pos|^2 + gamma_ep |eps_ep - eps_hat_ep|^2
    averaged over all points of the batch. ``z_rows`` is a (B, d_z) tensor,
    one condition per cloud, typically the encoder output.
    """
    if gamma_pos < 0.0 or gamma_ep < 0.0:
        raise ValueError("loss weights must be non-negative")
    xs, feats, targets, counts = [], [], [], []
    for cloud in clouds:
        p0 = cloud.points if isinstance(cloud, EmPointCloud) else np.asarray(cloud, dtype=np.float64)
        m = p0.shape[0]
        s = rng.integers(1, schedule.S + 1, size=m)
        eps = rng.standard_normal((m, 5))
        xs.append(forward_sample(p0, s, schedule, eps))
        feats.append(step_features(s, schedule.S))
        targets.append(eps)
        counts.append(m)

    x = Tensor(np.concatenate(xs))
    target = Tensor(np.concatenate(targets))
    z_parts = [_row(z_rows, i).repeat_rows(m) for i, m in enumerate(counts)]
    z_block = concat(z_parts, axis=0) if len(z_parts) > 1 else z_parts[0]
    c = concat([Tensor(np.concatenate(feats)), z_block], axis=1)

    diff = net(x, c) - target
    sq = diff * diff
    n = sum(counts)
    loss_pos = sq.slice_cols(0, 3).sum() * (1.0 / n)
    loss_ep = sq.slice_cols(3, 5).sum() * (1.0 / n)
    return loss_pos * gamma_pos + loss_ep * gamma_ep


def generate(
    net: NoiseEstimator,
    z,
    M: int,
    schedule: NoiseSchedule,
    rng,
    trace_path=None,
) -> EmPointCloud:
    """Reverse-sample an M-point cloud from the standard-normal prior.

    Reverse noise is suppressed at the final step (tilde_beta[1] = 0). An
    optional per-step CSV trace records the running point statistics.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if M == 0:
        return EmPointCloud(np.zeros((0, 5)))
    p = rng.standard_normal((M, 5))
    z_block = np.repeat(z[None, :], M, axis=0)
    rows = []
    for s in range(schedule.S, 0, -1):
        feats = step_features(np.full(M, s), schedule.S)
        eps_hat = net.apply_np(p, np.concatenate([feats, z_block], axis=1))
        p = mean_from_eps(p, eps_hat, s, schedule)
        if s > 1:
            p = p + np.sqrt(schedule.tilde_beta[s]) * rng.standard_normal((M, 5))
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite sampler state at step {s}")
        if trace_path is not None:
            rows.append([s, float(np.mean(p)), float(np.std(p)), float(np.abs(p).max())])
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "mean", "std", "absmax"])
            writer.writerows(rows)
    return EmPointCloud(p)
