"""System configuration, Gaussian-mixture feature source, and the Rician
MIMO multiple-access channel with the linear transmission model r = H V z + n.

Units: configs and CLI speak dB/dBm, everything in here is linear (watts,
amplitude path gains).  Samplers take explicit seeds and are pure given the
seed; independent streams are derived as (seed, stream indices).
"""

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as la

from . import numerics


class RankTooLarge(Exception):
    """Requested class-subspace rank exceeds the feature dimension."""


DEFAULT_NOISE_DBM = -80.0  # noise variance sigma^2, in dBm


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(watt) + 30.0


def pathloss_db_at(distance_m):
    """Distance-dependent path loss in dB: 32.6 + 36.7 lg(d)."""
    return 32.6 + 36.7 * np.log10(distance_m)


def default_noise_sigma():
    """Linear noise standard deviation for the default noise variance."""
    return float(np.sqrt(dbm_to_watt(DEFAULT_NOISE_DBM)))


def child_rng(seed, *stream):
    """Deterministic child generator for (seed, stream indices)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) & 0xFFFFFFFFFFFFFFFF for s in stream]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return child_rng(seed_or_rng)


def complex_gaussian(rng, shape):
    """iid CN(0, 1) entries (unit variance split across real/imag parts)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and budgets of the multi-device system.

    D_k, N_t_k, P_k are per-device tuples of length K.  P_k is in linear
    watts.  O is the number of transmit slots per feature vector.
    """

    K: int
    J: int
    D_k: tuple
    N_t_k: tuple
    N_r: int
    P_k: tuple
    O: int = 1
    eps2_feature: float = 0.5
    eps2_precoding: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "D_k", tuple(int(d) for d in self.D_k))
        object.__setattr__(self, "N_t_k", tuple(int(n) for n in self.N_t_k))
        object.__setattr__(self, "P_k", tuple(float(p) for p in self.P_k))
        if self.K < 1 or self.J < 1 or self.N_r < 1 or self.O < 1:
            raise ValueError("all counts must be >= 1")
        if not (len(self.D_k) == len(self.N_t_k) == len(self.P_k) == self.K):
            raise ValueError("per-device tuples must all have length K")
        if any(d < 1 for d in self.D_k) or any(n < 1 for n in self.N_t_k):
            raise ValueError("per-device dimensions must be >= 1")
        if any(p <= 0 for p in self.P_k):
            raise ValueError("power budgets must be positive")
        if self.eps2_feature <= 0 or self.eps2_precoding <= 0:
            raise ValueError("coding precisions eps^2 must be positive")

    @property
    def D(self):
        return sum(self.D_k)

    @property
    def recv_dim(self):
        """Length of the stacked received vector, O * N_r."""
        return self.O * self.N_r

    def tx_dim(self, k):
        """Stacked transmit dimension of device k, O * N_t_k."""
        return self.O * self.N_t_k[k]

    def feature_bounds(self):
        """Start/stop offsets of each device's rows in the stacked feature vector."""
        edges = np.concatenate([[0], np.cumsum(self.D_k)])
        return [(int(edges[k]), int(edges[k + 1])) for k in range(self.K)]

    @classmethod
    def homogeneous(cls, K, J, D_per_device, N_t_per_device, N_r, P_per_device,
                    O=1, eps2_feature=0.5, eps2_precoding=1e-6):
        return cls(K=K, J=J, D_k=(D_per_device,) * K, N_t_k=(N_t_per_device,) * K,
                   N_r=N_r, P_k=(P_per_device,) * K, O=O,
                   eps2_feature=eps2_feature, eps2_precoding=eps2_precoding)


@dataclass(frozen=True)
class GMModel:
    """Zero-mean complex Gaussian-mixture feature model.

    One mixture component per class: priors p_j, per-class covariances
    Sigma_j, and the mixture covariance Sigma = sum_j p_j Sigma_j.
    """

    priors: np.ndarray
    class_covs: tuple
    global_cov: np.ndarray

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        covs = tuple(np.asarray(c, dtype=complex) for c in self.class_covs)
        gcov = np.asarray(self.global_cov, dtype=complex)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "class_covs", covs)
        object.__setattr__(self, "global_cov", gcov)
        if abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError("class priors must sum to 1")
        if np.any(priors < 0):
            raise ValueError("class priors must be nonnegative")
        dim = gcov.shape[0]
        for c in covs:
            if c.shape != (dim, dim):
                raise ValueError("covariance dimensions disagree")
            if np.abs(c - c.conj().T).max() > 1e-9 * max(1.0, np.abs(c).max()):
                raise ValueError("class covariance is not Hermitian")
            w = np.linalg.eigvalsh(c)
            if w.min() < -max(numerics.psd_tolerance(c), 1e-12):
                raise ValueError("class covariance is not PSD")
        mix = sum(p * c for p, c in zip(priors, covs))
        if np.abs(mix - gcov).max() > 1e-10 * max(1.0, np.abs(gcov).max()):
            raise ValueError("global covariance is not the prior mixture of class covariances")

    @property
    def dim(self):
        return self.global_cov.shape[0]

    @property
    def n_classes(self):
        return len(self.class_covs)


@dataclass(frozen=True)
class RicianParams:
    """Rician fading parameters shared by all devices.

    pathloss_db defaults to the distance law 32.6 + 36.7 lg(d).  With
    hold_channel (the default) the per-slot channels of a multi-slot
    transmission are identical; otherwise each slot fades independently.
    """

    kappa: float = 1.0
    distance_m: float = 80.0
    pathloss_db: float = None
    hold_channel: bool = True

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("Rician factor must be >= 0")
        if self.pathloss_db is None:
            object.__setattr__(self, "pathloss_db", float(pathloss_db_at(self.distance_m)))

    @property
    def pathloss_amplitude(self):
        return 10.0 ** (-self.pathloss_db / 20.0)


def los_matrix(n_r, n_t, device_index):
    """Deterministic rank-one line-of-sight component with unit-modulus entries.

    Outer product of steering-like vectors whose phases increase linearly
    with the antenna index; slopes are a fixed, arbitrary function of the
    device index so distinct devices get distinct geometry.
    """
    mu = 2.0 * np.pi * ((0.30 + 0.61803398875 * device_index) % 1.0) - np.pi
    nu = 2.0 * np.pi * ((0.70 + 0.41421356237 * device_index) % 1.0) - np.pi
    a = np.exp(1j * mu * np.arange(n_r))
    b = np.exp(1j * nu * np.arange(n_t))
    return np.outer(a, b.conj())


@dataclass(frozen=True)
class ChannelState:
    """One realization of the multiple-access channel and its noise level.

    blocks[k] is the O*N_r x O*N_t_k channel of device k, block-diagonal
    over slots when O > 1.  The assembled channel H horizontally stacks
    the device blocks.
    """

    blocks: tuple
    sigma: float
    config: SystemConfig

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=complex) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if self.sigma <= 0:
            raise ValueError("noise level sigma must be positive")
        cfg = self.config
        if len(blocks) != cfg.K:
            raise ValueError("one channel block per device required")
        for k, b in enumerate(blocks):
            if b.shape != (cfg.recv_dim, cfg.tx_dim(k)):
                raise ValueError(f"device {k} block has shape {b.shape}, "
                                 f"expected {(cfg.recv_dim, cfg.tx_dim(k))}")
            if cfg.O > 1:
                mask = np.kron(np.eye(cfg.O), np.ones((cfg.N_r, cfg.N_t_k[k])))
                if np.abs(b[mask == 0]).max(initial=0.0) != 0.0:
                    raise ValueError("multi-slot channel block must be block-diagonal")

    @property
    def assembled(self):
        """H = [H_1, ..., H_K], shape O*N_r x sum_k O*N_t_k."""
        return np.concatenate(self.blocks, axis=1)

    @property
    def H(self):
        return self.assembled

    def with_sigma(self, sigma):
        return replace(self, sigma=float(sigma))


@dataclass(frozen=True)
class FeatureBatch:
    """A batch of feature samples with class labels.

    samples is D x M (one column per sample); labels holds class indices
    in [0, n_classes).
    """

    samples: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        Z = np.asarray(self.samples, dtype=complex)
        y = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "samples", Z)
        object.__setattr__(self, "labels", y)
        if Z.ndim != 2 or y.ndim != 1 or Z.shape[1] != y.size:
            raise ValueError("samples must be D x M with one label per column")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("labels out of range")

    @property
    def dim(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    def class_count(self, j):
        return int(np.sum(self.labels == j))

    def class_columns(self, j):
        return self.samples[:, self.labels == j]


def make_gm_model(config, subspace_rank, rng_seed, priors=None):
    """Synthesize a Gaussian-mixture feature model with subspace-supported classes.

    Each class covariance is B_j B_j^H / subspace_rank where B_j has
    orthonormal columns drawn by QR of a seeded complex Gaussian, so
    trace(Sigma_j) = 1 and class subspaces are independent draws.  Priors
    default to uniform.
    """
    D = config.D
    rank = int(subspace_rank)
    if rank > D:
        raise RankTooLarge(f"subspace rank {rank} exceeds feature dimension {D}")
    if rank < 1:
        raise ValueError("subspace rank must be >= 1")
    rng = as_rng(rng_seed)
    if priors is None:
        priors = np.full(config.J, 1.0 / config.J)
    priors = np.asarray(priors, dtype=float)
    covs = []
    for _ in range(config.J):
        G = complex_gaussian(rng, (D, rank))
        Q, _ = np.linalg.qr(G)
        covs.append(numerics.hermitian_part(Q @ Q.conj().T / rank))
    global_cov = numerics.hermitian_part(sum(p * c for p, c in zip(priors, covs)))
    return GMModel(priors=priors, class_covs=tuple(covs), global_cov=global_cov)


def sample_features(gm, M, normalize, rng_seed):
    """Draw M labeled feature samples from the mixture.

    Labels follow the priors; conditioned on class j the sample is
    Sigma_j^{1/2} w with w standard complex Gaussian.  With normalize,
    every column is scaled to unit l2 norm (a zero column is an error).
    """
    if M < 1:
        raise ValueError("need at least one sample")
    rng = as_rng(rng_seed)
    labels = rng.choice(gm.n_classes, size=M, p=gm.priors)
    roots = [numerics.matrix_sqrt_psd(c) for c in gm.class_covs]
    W = complex_gaussian(rng, (gm.dim, M))
    Z = np.empty_like(W)
    for j in range(gm.n_classes):
        idx = labels == j
        if np.any(idx):
            Z[:, idx] = roots[j] @ W[:, idx]
    if normalize:
        norms = np.linalg.norm(Z, axis=0)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize a zero feature column")
        Z = Z / norms
    return FeatureBatch(samples=Z, labels=labels, n_classes=gm.n_classes)


def sample_channel(params, config, rng_seed, sigma=None):
    """Draw one Rician channel realization for every device.

    Per device and slot: H = pl * (sqrt(kappa/(kappa+1)) H_los
    + sqrt(1/(kappa+1)) H_nlos) with iid CN(0,1) non-LoS entries and pl the
    linear path-loss amplitude.  For O > 1 the slot channels are stacked
    block-diagonally; with params.hold_channel a single draw is repeated
    across slots, otherwise each slot fades independently.

    sigma is the linear noise standard deviation; defaults to the -80 dBm
    noise-variance convention.
    """
    if sigma is None:
        sigma = default_noise_sigma()
    rng = as_rng(rng_seed)
    kappa = params.kappa
    w_los = np.sqrt(kappa / (kappa + 1.0))
    w_nlos = np.sqrt(1.0 / (kappa + 1.0))
    pl = params.pathloss_amplitude
    blocks = []
    for k in range(config.K):
        los = los_matrix(config.N_r, config.N_t_k[k], k)
        n_draws = 1 if params.hold_channel else config.O
        slots = []
        for _ in range(n_draws):
            nlos = complex_gaussian(rng, (config.N_r, config.N_t_k[k]))
            slots.append(pl * (w_los * los + w_nlos * nlos))
        if params.hold_channel:
            slots = slots * config.O
        blocks.append(la.block_diag(*slots))
    return ChannelState(blocks=tuple(blocks), sigma=float(sigma), config=config)


def _precoder_blocks(V):
    """Accept a PrecoderSet-like object, a list of per-device matrices, or
    an already assembled block-diagonal matrix."""
    vs = getattr(V, "vs", V)
    if isinstance(vs, np.ndarray) and vs.ndim == 2:
        return vs
    return la.block_diag(*[np.asarray(v, dtype=complex) for v in vs])


def transmit(z, V, ch, rng_seed):
    """Simulate r = H V z + n with n ~ CN(0, sigma^2 I).

    z may be a single feature vector (length D) or a D x S batch; the
    result has matching shape with O*N_r rows.
    """
    Vbd = _precoder_blocks(V)
    H = ch.assembled
    if Vbd.shape != (H.shape[1], ch.config.D):
        raise numerics.DimensionMismatch(
            f"precoder is {Vbd.shape}, expected {(H.shape[1], ch.config.D)}")
    z = np.asarray(z, dtype=complex)
    single = z.ndim == 1
    Z = z[:, None] if single else z
    if Z.shape[0] != ch.config.D:
        raise numerics.DimensionMismatch(
            f"feature vector has {Z.shape[0]} rows, expected {ch.config.D}")
    rng = as_rng(rng_seed)
    noise = ch.sigma * complex_gaussian(rng, (H.shape[0], Z.shape[1]))
    R = H @ (Vbd @ Z) + noise
    return R[:, 0] if single else R


def channel_fingerprint(ch):
    """Stable 63-bit content hash of a channel realization (used to derive
    per-channel seeds, e.g. for reproducible precoder initialization)."""
    h = hashlib.sha256()
    for b in ch.blocks:
        h.update(np.ascontiguousarray(b).tobytes())
        h.update(str(b.shape).encode())
    h.update(np.float64(ch.sigma).tobytes())
    return int.from_bytes(h.digest()[:8], "big") & 0x7FFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# JSON serialization.  Complex matrices are encoded as nested lists of
# [re, im] pairs; every document carries a schema tag.
# ---------------------------------------------------------------------------

def complex_matrix_to_lists(A):
    A = np.asarray(A, dtype=complex)
    return [[[float(x.real), float(x.imag)] for x in row] for row in A]


def complex_matrix_from_lists(rows):
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def config_to_dict(config):
    return {
        "K": config.K, "J": config.J,
        "D_k": list(config.D_k), "N_t_k": list(config.N_t_k),
        "N_r": config.N_r, "O": config.O, "P_k": list(config.P_k),
        "eps2_feature": config.eps2_feature,
        "eps2_precoding": config.eps2_precoding,
    }


def config_from_dict(d):
    return SystemConfig(K=d["K"], J=d["J"], D_k=tuple(d["D_k"]),
                        N_t_k=tuple(d["N_t_k"]), N_r=d["N_r"], P_k=tuple(d["P_k"]),
                        O=d["O"], eps2_feature=d["eps2_feature"],
                        eps2_precoding=d["eps2_precoding"])


def gm_model_to_dict(gm):
    return {
        "schema": "taskcomm.gm_model/1",
        "priors": [float(p) for p in gm.priors],
        "class_covs": [complex_matrix_to_lists(c) for c in gm.class_covs],
        "global_cov": complex_matrix_to_lists(gm.global_cov),
    }


def gm_model_from_dict(d):
    if d.get("schema") != "taskcomm.gm_model/1":
        raise ValueError(f"unrecognized GM model schema: {d.get('schema')!r}")
    return GMModel(priors=np.asarray(d["priors"], dtype=float),
                   class_covs=tuple(complex_matrix_from_lists(c) for c in d["class_covs"]),
                   global_cov=complex_matrix_from_lists(d["global_cov"]))


def channel_state_to_dict(ch):
    return {
        "schema": "taskcomm.channel_state/1",
        "sigma": float(ch.sigma),
        "blocks": [complex_matrix_to_lists(b) for b in ch.blocks],
        "config": config_to_dict(ch.config),
    }


def channel_state_from_dict(d):
    if d.get("schema") != "taskcomm.channel_state/1":
        raise ValueError(f"unrecognized channel schema: {d.get('schema')!r}")
    return ChannelState(blocks=tuple(complex_matrix_from_lists(b) for b in d["blocks"]),
                        sigma=d["sigma"], config=config_from_dict(d["config"]))


def save_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
