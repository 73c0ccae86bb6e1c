"""Coding-rate-reduction objectives.

Feature side: the empirical rate-reduction of a labeled sample batch (with
its analytic ascent direction), and a projected-ascent routine that
optimizes the samples directly on the unit sphere to produce well-separated
feature statistics.  Channel side: the rate reduction measured on the
received signal through a given channel/precoder pair, which is the
objective every precoding solver in this package maximizes.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics
from .model import FeatureBatch, GMModel, _precoder_blocks


class EmptyClass(Exception):
    """A class with zero samples makes the per-class rate undefined."""


def coding_rate(Z, dim_scale, count, eps2):
    """log det(I + (dim_scale / (count * eps2)) Z Z^H), in the Gram domain.

    Z is D x m; the log-det is taken over the D x D Gram matrix, which is
    the cheap side whenever samples outnumber dimensions.
    """
    D = Z.shape[0]
    c = dim_scale / (count * eps2)
    G = np.eye(D, dtype=complex) + c * (Z @ Z.conj().T)
    return numerics.logdet_hpd(numerics.hermitian_part(G))


def _check_classes(batch):
    counts = [batch.class_count(j) for j in range(batch.n_classes)]
    for j, m in enumerate(counts):
        if m == 0:
            raise EmptyClass(f"class {j} has no samples")
    return counts


def feature_mcr2(batch, eps2):
    """Rate reduction of a feature batch: total coding rate minus the
    count-weighted per-class coding rates."""
    Z = batch.samples
    D, M = Z.shape
    counts = _check_classes(batch)
    total = coding_rate(Z, D, M, eps2)
    for j, Mj in enumerate(counts):
        total -= (Mj / M) * coding_rate(batch.class_columns(j), D, Mj, eps2)
    return total


def feature_mcr2_grad(batch, eps2):
    """Conjugate (Wirtinger) gradient of feature_mcr2 with respect to the samples.

    Returns G (D x M) with d objective = 2 Re <G, dZ>, i.e. the partial
    derivatives w.r.t. the real and imaginary parts of Z are 2*Re(G) and
    2*Im(G).  For each column the global term contributes
    (D/(M eps2)) (I + (D/(M eps2)) Z Z^H)^{-1} z and its own class term is
    subtracted with the class Gram matrix at the same leading coefficient.
    """
    Z = batch.samples
    D, M = Z.shape
    counts = _check_classes(batch)
    c = D / (M * eps2)
    G_all = np.eye(D, dtype=complex) + c * (Z @ Z.conj().T)
    grad = c * numerics.hermitian_solve(numerics.hermitian_part(G_all), Z)
    for j, Mj in enumerate(counts):
        idx = batch.labels == j
        Zj = Z[:, idx]
        cj = D / (Mj * eps2)
        Gj = np.eye(D, dtype=complex) + cj * (Zj @ Zj.conj().T)
        grad[:, idx] -= c * numerics.hermitian_solve(numerics.hermitian_part(Gj), Zj)
    return grad


def empirical_gm(batch):
    """Second-moment Gaussian-mixture statistics of a batch: empirical
    priors M_j/M, class covariances Z_j Z_j^H / M_j, and their mixture."""
    Z = batch.samples
    M = batch.n_samples
    counts = _check_classes(batch)
    priors = np.array([m / M for m in counts])
    covs = tuple(numerics.hermitian_part(batch.class_columns(j) @ batch.class_columns(j).conj().T / counts[j])
                 for j in range(batch.n_classes))
    global_cov = numerics.hermitian_part(Z @ Z.conj().T / M)
    return GMModel(priors=priors, class_covs=covs, global_cov=global_cov)


@dataclass(frozen=True)
class FeatureOptimization:
    """Result of optimize_features: the chosen batch, its second-moment
    statistics, and the objective value per visited iterate."""

    batch: FeatureBatch
    gm: GMModel
    objective_trace: np.ndarray


def optimize_features(batch, eps2, steps, lr):
    """Projected ascent of feature_mcr2 over unit-norm feature samples.

    Each step moves along the conjugate gradient and renormalizes every
    column back to the unit sphere.  Per-step monotonicity is not
    guaranteed at a fixed learning rate, so the best iterate seen (by
    objective value, including the input) is returned; the result is
    therefore never worse than the input.  Also returns the empirical
    mixture statistics of the selected batch.
    """
    Z = batch.samples
    norms = np.linalg.norm(Z, axis=0)
    if np.abs(norms - 1.0).max() > 1e-8:
        raise ValueError("initial feature columns must be unit-norm")
    trace = [feature_mcr2(batch, eps2)]
    best_Z, best_val = Z, trace[0]
    cur = batch
    for _ in range(steps):
        g = feature_mcr2_grad(cur, eps2)
        Znew = cur.samples + lr * g
        col_norms = np.linalg.norm(Znew, axis=0)
        if np.any(col_norms == 0.0):
            raise ValueError("ascent step produced a zero feature column")
        Znew = Znew / col_norms
        cur = FeatureBatch(samples=Znew, labels=batch.labels, n_classes=batch.n_classes)
        val = feature_mcr2(cur, eps2)
        trace.append(val)
        if val > best_val:
            best_Z, best_val = Znew, val
    best = FeatureBatch(samples=best_Z, labels=batch.labels, n_classes=batch.n_classes)
    return FeatureOptimization(batch=best, gm=empirical_gm(best),
                               objective_trace=np.asarray(trace))


def alpha_for(config, eps2=None):
    """Signal-scale coefficient of the received-signal rate terms.

    Uses the stacked received dimension O*N_r over the coding precision,
    so multi-slot transmissions are scaled by the dimension of the actual
    received vector.
    """
    if eps2 is None:
        eps2 = config.eps2_precoding
    return config.recv_dim / eps2


def channel_mcr2(V, ch, gm, eps2=None, sigma=None):
    """Rate reduction of the received signal for one channel state.

    With alpha = O*N_r/eps2 and gamma = 1 + alpha sigma^2:
    log det(gamma I + alpha H V Sigma V^H H^H)
    - sum_j p_j log det(gamma I + alpha H V Sigma_j V^H H^H).
    """
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    if sigma is None:
        sigma = ch.sigma
    alpha = alpha_for(cfg, eps2)
    gamma = 1.0 + alpha * sigma ** 2
    S = ch.assembled @ _precoder_blocks(V)  # effective channel, recv_dim x D
    n = S.shape[0]
    eye = np.eye(n, dtype=complex)
    F0 = numerics.hermitian_part(gamma * eye + alpha * (S @ gm.global_cov @ S.conj().T))
    val = numerics.logdet_hpd(F0)
    for p, cov in zip(gm.priors, gm.class_covs):
        Fj = numerics.hermitian_part(gamma * eye + alpha * (S @ cov @ S.conj().T))
        val -= p * numerics.logdet_hpd(Fj)
    return val


def channel_mcr2_batch(precoders, channels, noise_levels, gm, eps2=None):
    """Mean rate reduction over a channel x noise-level grid.

    precoders[n][e] is the precoder used for channel n at noise level e;
    the per-pair noise level overrides the sigma stored in each channel
    state.  Summation runs in fixed index order for reproducibility.
    """
    total = 0.0
    count = 0
    for n, ch in enumerate(channels):
        for e, sig in enumerate(noise_levels):
            total += channel_mcr2(precoders[n][e], ch, gm, eps2=eps2, sigma=sig)
            count += 1
    if count == 0:
        raise ValueError("empty channel/noise grid")
    return total / count
