"""MAP classification of received signals and Monte-Carlo evaluation.

Under the Gaussian-mixture feature model the received vector is itself a
mixture with per-class covariances H V Sigma_j V^H H^H + sigma^2 I, so the
Bayes-optimal classifier is an argmax over class log-posteriors, computed
entirely in the log domain via Cholesky factorizations.  The end-to-end
loss is the mean negative log-posterior of the true class, and
evaluate_accuracy runs the full sample-channel / precode / transmit /
classify pipeline.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from . import numerics
from .model import (_precoder_blocks, child_rng, complex_gaussian,
                    sample_channel, sample_features, transmit)


def _class_covariances(V, ch, gm, sigma=None):
    """Per-class received-signal covariances H V Sigma_j V^H H^H + sigma^2 I."""
    if sigma is None:
        sigma = ch.sigma
    S = ch.assembled @ _precoder_blocks(V)
    eye = np.eye(S.shape[0], dtype=complex)
    return [numerics.hermitian_part(S @ cov @ S.conj().T + sigma ** 2 * eye)
            for cov in gm.class_covs]


def _log_posteriors_batch(R, V, ch, gm, sigma=None):
    """Unnormalized class log-posteriors for a batch of received vectors.

    R is recv_dim x S; returns a J x S array of
    log p_j - r^H C_j^{-1} r - log det(C_j) - n log(pi).
    """
    covs = _class_covariances(V, ch, gm, sigma=sigma)
    n, S = R.shape
    out = np.empty((len(covs), S))
    with np.errstate(divide="ignore"):
        log_priors = np.log(gm.priors)
    for j, C in enumerate(covs):
        L = np.linalg.cholesky(C)
        X = la.solve_triangular(L, R, lower=True)
        quad = np.sum(np.abs(X) ** 2, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(L).real))
        out[j] = log_priors[j] - quad - logdet - n * np.log(np.pi)
    return out


def class_log_posteriors(r, V, ch, gm):
    """Log-posterior score of each class for one received vector r."""
    r = np.asarray(r, dtype=complex).reshape(-1, 1)
    return _log_posteriors_batch(r, V, ch, gm)[:, 0]


def map_classify(r, V, ch, gm):
    """Most likely class for a received vector; ties resolve to the lowest index."""
    return int(np.argmax(class_log_posteriors(r, V, ch, gm)))


def _log_softmax(lp, axis=0):
    m = np.max(lp, axis=axis, keepdims=True)
    return lp - (m + np.log(np.sum(np.exp(lp - m), axis=axis, keepdims=True)))


def cross_entropy_terms(R, labels, V, ch, gm, sigma=None):
    """Negative log-posterior (normalized over classes) of the true label
    for each column of R.  Always nonnegative."""
    lp = _log_softmax(_log_posteriors_batch(R, V, ch, gm, sigma=sigma), axis=0)
    return -lp[np.asarray(labels, dtype=int), np.arange(R.shape[1])]


def e2e_loss(features, precoders, channels, noise_levels, gm, rng_seed,
             noise_draws=1, pairing="grid"):
    """Empirical end-to-end classification loss.

    pairing "grid": averages the per-sample cross-entropy over the full
    feature x channel x noise-level x noise-draw grid; precoders[n][e] is
    used for channel n at noise level e, and the noise for cell (n, e, f)
    is drawn from the child stream (rng_seed, n, e, f).

    pairing "indexed": the cheaper index-paired estimate; requires one
    channel per feature sample and pairs them positionally, with a single
    noise draw per (noise level, sample) from stream (rng_seed, i, e).
    """
    Z = features.samples
    y = features.labels
    M = features.n_samples
    dim = channels[0].config.recv_dim
    total = 0.0
    count = 0
    if pairing == "grid":
        for n, ch in enumerate(channels):
            H = ch.assembled
            for e, sig in enumerate(noise_levels):
                clean = H @ _precoder_blocks(precoders[n][e]) @ Z
                for f in range(noise_draws):
                    noise = sig * complex_gaussian(child_rng(rng_seed, n, e, f), (dim, M))
                    terms = cross_entropy_terms(clean + noise, y, precoders[n][e],
                                                ch, gm, sigma=sig)
                    total += float(np.sum(terms))
                    count += M
    elif pairing == "indexed":
        if len(channels) != M:
            raise ValueError("indexed pairing needs one channel per feature sample")
        for e, sig in enumerate(noise_levels):
            for i, ch in enumerate(channels):
                noise = sig * complex_gaussian(child_rng(rng_seed, i, e), (dim,))
                r = ch.assembled @ _precoder_blocks(precoders[i][e]) @ Z[:, i] + noise
                terms = cross_entropy_terms(r.reshape(-1, 1), y[i:i + 1],
                                            precoders[i][e], ch, gm, sigma=sig)
                total += float(terms[0])
                count += 1
    else:
        raise ValueError(f"unknown pairing mode {pairing!r}")
    return total / count


@dataclass(frozen=True)
class AccuracyResult:
    """Monte-Carlo accuracy summary: overall mean, per-channel accuracies
    (for CDF plots), and the standard error of the mean across channels."""

    mean: float
    per_channel: np.ndarray
    stderr: float
    n_channels: int
    n_samples_per_channel: int


def evaluate_accuracy(precoder_fn, gm, rician, config, n_channels,
                      n_samples_per_channel, rng_seed, sigma=None, threads=1,
                      noise_draws_per_sample=1):
    """Monte-Carlo classification accuracy of a precoding scheme.

    For each of n_channels seeded channel draws: compute the precoder via
    precoder_fn(channel), sample labeled features, transmit them (once per
    noise draw), and classify each received vector.  Per-channel streams
    are derived from (rng_seed, channel index), so runs are reproducible
    and two schemes evaluated with the same seed see identical channels,
    features, and noise (a paired comparison).
    """
    def one_channel(i):
        ch = sample_channel(rician, config, child_rng(rng_seed, i, 0), sigma=sigma)
        V = precoder_fn(ch)
        batch = sample_features(gm, n_samples_per_channel, False, child_rng(rng_seed, i, 1))
        hits = 0
        for f in range(noise_draws_per_sample):
            R = transmit(batch.samples, V, ch, child_rng(rng_seed, i, 2, f))
            lp = _log_posteriors_batch(R, V, ch, gm)
            hits += int(np.sum(np.argmax(lp, axis=0) == batch.labels))
        return hits / (n_samples_per_channel * noise_draws_per_sample)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per = np.array(list(pool.map(one_channel, range(n_channels))))
    else:
        per = np.array([one_channel(i) for i in range(n_channels)])
    stderr = float(per.std(ddof=1) / np.sqrt(n_channels)) if n_channels > 1 else 0.0
    return AccuracyResult(mean=float(per.mean()), per_channel=per, stderr=stderr,
                          n_channels=n_channels,
                          n_samples_per_channel=n_samples_per_channel)
