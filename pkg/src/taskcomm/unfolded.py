"""Deep-unfolded precoding networks and their gradient-free trainer.

Each network layer mirrors one iteration of a block-coordinate precoding
solver with the expensive pieces replaced by learnable structures: the
matrix inverses of the U/W updates become three-matrix approximators
A^ddag Xi1 + A Xi2 + Xi3, and the device update is either a learnable
linear solve with a constant multiplier (the plain variant) or a stack of
majorize-minimize sub-layers whose identity matrix is replaced by a
learnable one (the enhanced variant).  Anchor initialization makes the
forward pass reproduce the underlying algorithm, so training starts from
algorithm parity.  Training estimates gradients by simultaneous
antithetic perturbation of all parameters (two forward evaluations per
step), which keeps the package free of autodiff machinery.
"""

import copy
from dataclasses import dataclass

import numpy as np

from . import numerics
from .bca import (_assemble_qcqp, _e0_matrix, compute_F, feature_whitener,
                  random_feasible_precoder, sigma_block, v_step_bisection)
from .inference import cross_entropy_terms, e2e_loss
from .mcr2 import alpha_for, channel_mcr2, channel_mcr2_batch, empirical_gm
from .mm import eta_bound, project_ball, ETA_FLOOR
from .model import (FeatureBatch, GMModel, channel_fingerprint, child_rng,
                    complex_gaussian, complex_matrix_from_lists,
                    complex_matrix_to_lists, config_from_dict, config_to_dict,
                    sample_features)

VARIANT_PLAIN = "du-bca"
VARIANT_MM = "du-bca-mm"


class ZeroDiagonal(Exception):
    """The diagonal-reciprocal term of the inverse approximator is undefined."""


@dataclass
class InverseApproxParams:
    """Learnable triple (Xi1, Xi2, Xi3) approximating a matrix inverse as
    A^ddag Xi1 + A Xi2 + Xi3, with A^ddag the diagonal-reciprocal of A."""

    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray

    @classmethod
    def zeros(cls, dim):
        z = np.zeros((dim, dim), dtype=complex)
        return cls(xi1=z.copy(), xi2=z.copy(), xi3=z.copy())

    def arrays(self):
        return [self.xi1, self.xi2, self.xi3]


def _checked_diagonal(A):
    """Diagonal of A, guarded against the (near-)zero entries that would
    make the diagonal-reciprocal term blow up."""
    A = np.asarray(A, dtype=complex)
    d = np.diag(A)
    floor = 1e-14 * np.linalg.norm(A) / A.shape[0]
    if np.abs(d).min() <= floor:
        raise ZeroDiagonal("matrix has a (near-)zero diagonal entry")
    return d


def inv_approx(A, p):
    """Evaluate the learnable inverse approximator at A.

    A^ddag Xi1 + A Xi2 + Xi3, where A^ddag holds the reciprocals of the
    diagonal of A and zeros elsewhere."""
    A = np.asarray(A, dtype=complex)
    d = _checked_diagonal(A)
    return (p.xi1 / d[:, None]) + A @ p.xi2 + p.xi3


def taylor_anchor(A0, A0_inv=None):
    """Parameters at which the approximator returns A0^{-1} exactly when
    evaluated at A0 (first-order expansion of the inverse around A0)."""
    A0 = np.asarray(A0, dtype=complex)
    if A0_inv is None:
        A0_inv = numerics.hpd_inverse(A0)
    xi2 = -A0_inv @ A0_inv
    xi3 = 2.0 * A0_inv
    return InverseApproxParams(xi1=np.zeros_like(A0), xi2=xi2, xi3=xi3)


def shared_inverse_anchor(mats):
    """One parameter triple fitting the inverses of several matrices.

    Solves the stacked interpolation system A_m^ddag Xi1 + A_m Xi2 + Xi3
    = A_m^{-1} in the least-squares sense, with per-block column scaling
    for conditioning.  For up to three matrices the system is square or
    underdetermined and the fit is exact whenever it is consistent; class
    matrices that differ only on a low-dimensional common subspace can
    make it inconsistent, in which case this is the best l2 fit.
    """
    n = mats[0].shape[0]
    eye = np.eye(n, dtype=complex)
    rows, rhs = [], []
    for A in mats:
        A = np.asarray(A, dtype=complex)
        Add = np.diag(1.0 / _checked_diagonal(A))
        rows.append(np.hstack([Add, A, eye]))
        rhs.append(numerics.hpd_inverse(A))
    stacked = np.vstack(rows)
    B = np.vstack(rhs)
    scales = []
    for i in range(3):
        block = stacked[:, i * n:(i + 1) * n]
        s = max(np.linalg.norm(block) / np.sqrt(block.size), 1e-30)
        stacked[:, i * n:(i + 1) * n] = block / s
        scales.append(s)
    X, *_ = np.linalg.lstsq(stacked, B, rcond=None)
    return InverseApproxParams(xi1=X[:n] / scales[0],
                               xi2=X[n:2 * n] / scales[1],
                               xi3=X[2 * n:] / scales[2])


@dataclass
class DuBcaLayerParams:
    """One plain-variant layer: approximators for the three inverse
    families plus, per device, an approximator for the regularized device
    solve and a constant complex multiplier.  psi is shared across all
    classes."""

    theta: InverseApproxParams
    phi: InverseApproxParams
    psi: InverseApproxParams
    omega: tuple            # per device
    lambdas: np.ndarray     # (K,) complex

    def arrays(self):
        out = self.theta.arrays() + self.phi.arrays() + self.psi.arrays()
        for om in self.omega:
            out += om.arrays()
        out.append(self.lambdas)
        return out


@dataclass
class DuBcaMmLayerParams:
    """One enhanced-variant layer: the same three approximators plus, per
    device and per majorize-minimize sub-layer, a learnable matrix that
    replaces the identity in the sub-layer update."""

    theta: InverseApproxParams
    phi: InverseApproxParams
    psi: InverseApproxParams
    upsilon: tuple          # upsilon[k][i], per device per sub-layer

    def arrays(self):
        out = self.theta.arrays() + self.phi.arrays() + self.psi.arrays()
        for per_device in self.upsilon:
            out += list(per_device)
        return out


@dataclass
class UnfoldedNet:
    """A stack of unfolded layers of one variant, tied to a system config."""

    variant: str
    layers: list
    mm_sublayers: int
    config: object

    def __post_init__(self):
        if self.variant not in (VARIANT_PLAIN, VARIANT_MM):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def n_layers(self):
        return len(self.layers)

    def parameter_arrays(self):
        out = []
        for layer in self.layers:
            out += layer.arrays()
        return out


def layer_parameter_count(net):
    """Per-layer learnable-parameter count in the headline accounting that
    charges each three-matrix inverse approximator once at its base matrix
    size: 2 (O N_r)^2 + D^2 plus, per device, (D_k O N_t_k)^2 (times the
    number of sub-layers for the enhanced variant) and one multiplier for
    the plain variant.  Counted in complex parameters; see
    stored_parameter_count for the actual storage, which is larger."""
    cfg = net.config
    n = cfg.recv_dim
    base = 2 * n ** 2 + cfg.D ** 2
    device = sum((cfg.D_k[k] * cfg.tx_dim(k)) ** 2 for k in range(cfg.K))
    if net.variant == VARIANT_PLAIN:
        return base + device + cfg.K
    return base + net.mm_sublayers * device


def stored_parameter_count(net):
    """Total complex parameters actually stored across all layers."""
    return sum(a.size for a in net.parameter_arrays())


def net_to_vector(net):
    """Flatten all parameters into one real vector (re/im interleaved)."""
    parts = [np.ascontiguousarray(a, dtype=complex).reshape(-1).view(np.float64)
             for a in net.parameter_arrays()]
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def net_with_vector(net, x):
    """Rebuild a network of the same structure from a flat real vector."""
    out = copy.deepcopy(net)
    x = np.asarray(x, dtype=np.float64)
    pos = 0
    for a in out.parameter_arrays():
        n = 2 * a.size
        chunk = x[pos:pos + n].view(np.complex128).reshape(a.shape)
        a[...] = chunk
        pos += n
    if pos != x.size:
        raise numerics.DimensionMismatch(
            f"vector of length {x.size} does not match {pos} parameter entries")
    return out


def parameter_scales(net, floor_ratio=1e-2):
    """Per-entry perturbation scales, one shared scale per parameter array
    (its rms magnitude, floored relative to the largest array)."""
    arrays = net.parameter_arrays()
    rms = [float(np.sqrt(np.mean(np.abs(a) ** 2))) if a.size else 0.0 for a in arrays]
    top = max(rms) if rms else 1.0
    if top == 0.0:
        top = 1.0
    out = []
    for a, r in zip(arrays, rms):
        s = max(r, floor_ratio * top)
        out.append(np.full(2 * a.size, s))
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _project_rescale(Vk, gm, cfg, k):
    """Rescale the device precoder onto the power boundary if infeasible."""
    skk = sigma_block(gm.global_cov, cfg, k, k)
    p = float(np.trace(Vk @ skk @ Vk.conj().T).real)
    budget = cfg.P_k[k]
    if p > budget:
        return np.sqrt(budget / p) * Vk
    return Vk


def _layer_forward(layer, variant, mm_sublayers, V, ch, gm, eps2):
    """Run one unfolded layer from precoders V to the next precoders."""
    cfg = ch.config
    alpha = alpha_for(cfg, eps2)
    gamma = 1.0 + alpha * ch.sigma ** 2
    root = numerics.matrix_sqrt_psd(gm.global_cov)

    F0, Fj = compute_F(V, ch, gm, eps2=eps2)
    U = alpha * inv_approx(F0, layer.theta) @ (ch.assembled @ V.block_diag() @ root)
    E0 = _e0_matrix(U, V, ch, gm, alpha, gamma)
    W0 = inv_approx(E0, layer.phi)
    Wj = tuple(inv_approx(F, layer.psi) for F in Fj)

    for k in range(cfg.K):
        b, N = _assemble_qcqp(U, W0, Wj, V, ch, gm, k, eps2=eps2)
        Dk, Dk_inv = feature_whitener(gm, cfg, k)
        if variant == VARIANT_PLAIN:
            om = layer.omega[k]
            lam = layer.lambdas[k]
            shifted = N + lam * np.eye(N.shape[0], dtype=complex)
            d = _checked_diagonal(shifted)
            approx = (om.xi1 / d[:, None]) + N @ om.xi2 + om.xi3
            v = approx @ b
            Vk = numerics.devec(Dk_inv @ v, cfg.tx_dim(k), cfg.D_k[k])
            Vk = _project_rescale(Vk, gm, cfg, k)
        else:
            eta = max(eta_bound(N), ETA_FLOOR)
            v = project_ball(Dk @ numerics.vec(V.vs[k]), cfg.P_k[k])
            for i in range(mm_sublayers):
                ups = layer.upsilon[k][i]
                q = (b - (N @ v - eta * (ups @ v))) / eta
                v = project_ball(q, cfg.P_k[k])
            Vk = numerics.devec(Dk_inv @ v, cfg.tx_dim(k), cfg.D_k[k])
        V = V.with_device(k, Vk)
    return V


def du_forward(net, ch, gm, eps2=None, V_init=None):
    """Run the unfolded network on one channel state.

    V_init of None uses the same channel-fingerprint-seeded feasible random
    start as the algorithmic solvers, so network and solver runs on the
    same channel are directly comparable.  The output is always feasible:
    the plain variant rescales infeasible devices, the enhanced variant is
    feasible by construction of the ball projection.
    """
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    V = V_init if V_init is not None else random_feasible_precoder(
        ch, gm, channel_fingerprint(ch))
    for layer in net.layers:
        V = _layer_forward(layer, net.variant, net.mm_sublayers, V, ch, gm, eps2)
    return V


# ---------------------------------------------------------------------------
# Anchored initialization
# ---------------------------------------------------------------------------

def _jitter_inverse(N, lam):
    """Inverse of N + lam I, escalating a diagonal jitter until the shifted
    matrix factorizes (N may be singular when lam is zero)."""
    n = N.shape[0]
    eye = np.eye(n, dtype=complex)
    jit = 0.0
    base = max(numerics.psd_tolerance(N), 1e-30)
    for _ in range(60):
        try:
            shifted = numerics.hermitian_part(N) + (lam + jit) * eye
            return numerics.hpd_inverse(shifted), lam + jit
        except numerics.NotPositiveDefinite:
            jit = base if jit == 0.0 else jit * 10.0
    raise numerics.NotPositiveDefinite("could not regularize device matrix")


def init_anchored(variant, n_layers, mm_sublayers, ch, gm, eps2=None,
                  V_init=None, lambda_mode="zero"):
    """Build a network whose forward pass mimics the base algorithm.

    Walks the algorithm greedily on the given (reference) channel: at each
    layer the approximators are anchored at the matrices the forward pass
    actually encounters, the enhanced variant's sub-layer matrices start at
    the identity, and the plain variant's multipliers start at zero (or at
    the exact bisection multipliers with lambda_mode="bisection", which
    makes one plain layer reproduce one exact iteration).
    """
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    alpha = alpha_for(cfg, eps2)
    gamma = 1.0 + alpha * ch.sigma ** 2
    root = numerics.matrix_sqrt_psd(gm.global_cov)
    V = V_init if V_init is not None else random_feasible_precoder(
        ch, gm, channel_fingerprint(ch))

    layers = []
    for _ in range(n_layers):
        F0, Fj = compute_F(V, ch, gm, eps2=eps2)
        F0_inv = numerics.hpd_inverse(F0)
        theta = taylor_anchor(F0, F0_inv)
        U = alpha * (F0_inv @ ch.assembled @ V.block_diag() @ root)
        E0 = _e0_matrix(U, V, ch, gm, alpha, gamma)
        phi = taylor_anchor(E0)
        psi = shared_inverse_anchor(Fj)
        W0 = numerics.hpd_inverse(E0)
        Wj = tuple(numerics.hpd_inverse(F) for F in Fj)
        if variant == VARIANT_MM:
            upsilon = tuple(
                tuple(np.eye(cfg.D_k[k] * cfg.tx_dim(k), dtype=complex)
                      for _ in range(mm_sublayers))
                for k in range(cfg.K))
            layer = DuBcaMmLayerParams(theta=theta, phi=phi, psi=psi, upsilon=upsilon)
        else:
            # the forward pass refreshes (b, N) from already-updated device
            # precoders, so anchor each device at the matrices it will
            # actually see by applying the updates while anchoring
            omegas = []
            lambdas = np.zeros(cfg.K, dtype=complex)
            V_work = V
            for k in range(cfg.K):
                b, N = _assemble_qcqp(U, W0, Wj, V_work, ch, gm, k, eps2=eps2)
                if lambda_mode == "bisection":
                    _, lam = v_step_bisection(b, N, cfg.P_k[k])
                else:
                    lam = 0.0
                A0_inv, _ = _jitter_inverse(N, lam)
                xi2 = -A0_inv @ A0_inv
                xi3 = A0_inv - N @ xi2
                omegas.append(InverseApproxParams(
                    xi1=np.zeros_like(N), xi2=xi2, xi3=xi3))
                lambdas[k] = lam
                _, Dk_inv = feature_whitener(gm, cfg, k)
                Vk = numerics.devec(Dk_inv @ (A0_inv @ b),
                                    cfg.tx_dim(k), cfg.D_k[k])
                V_work = V_work.with_device(
                    k, _project_rescale(Vk, gm, cfg, k))
            layer = DuBcaLayerParams(theta=theta, phi=phi, psi=psi,
                                     omega=tuple(omegas), lambdas=lambdas)
        layers.append(layer)
        V = _layer_forward(layer, variant, mm_sublayers, V, ch, gm, eps2)
    return UnfoldedNet(variant=variant, layers=layers,
                       mm_sublayers=mm_sublayers, config=cfg)


# ---------------------------------------------------------------------------
# Trainer: simultaneous-perturbation stochastic approximation
# ---------------------------------------------------------------------------

@dataclass
class TrainerConfig:
    """Knobs of the perturbation trainer.

    step_scale / perturb_scale are the classic a and c gains; the step and
    perturbation sequences decay as a/(t+A)^0.602 and c/t^0.101.  Scales
    apply in normalized parameter coordinates (see parameter_scales), so
    perturb_scale is roughly a relative perturbation size.
    """

    steps: int = 2000
    step_scale: float = 0.5
    perturb_scale: float = 0.1
    stability: float = None
    step_decay: float = 0.602
    perturb_decay: float = 0.101
    batch_channels: int = 8
    eval_every: int = 100
    eval_pairs: int = 64      # selection-loss size for fine-tuning
    select_margin: float = 0.0  # relative improvement required to adopt an iterate

    def __post_init__(self):
        if self.stability is None:
            self.stability = max(1.0, 0.1 * self.steps)


def spsa_extremize(objective, x0, cfg, rng, maximize=True, eval_fn=None):
    """Simultaneous-perturbation stochastic approximation.

    objective(x, t) may be stochastic but must be deterministic given
    (x, t), so the two antithetic evaluations of each step see the same
    mini-batch.  When eval_fn is given it is evaluated at the start, every
    eval_every steps, and at the end; the best iterate under eval_fn
    (including the start) is returned along with the evaluation history.
    cfg.select_margin demands a relative improvement before an iterate
    displaces the incumbent, which keeps noise-level wins from replacing
    the starting point.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    sign = 1.0 if maximize else -1.0
    best_x = x.copy()
    best_val = eval_fn(x) if eval_fn is not None else None
    history = [(0, best_val)] if eval_fn is not None else []

    def better(a, b):
        gap = cfg.select_margin * max(1.0, abs(b))
        return a > b + gap if maximize else a < b - gap

    for t in range(1, cfg.steps + 1):
        a_t = cfg.step_scale / (t + cfg.stability) ** cfg.step_decay
        c_t = cfg.perturb_scale / t ** cfg.perturb_decay
        delta = rng.integers(0, 2, size=x.size) * 2.0 - 1.0
        f_plus = objective(x + c_t * delta, t)
        f_minus = objective(x - c_t * delta, t)
        ghat = (f_plus - f_minus) / (2.0 * c_t) * delta
        x = x + sign * a_t * ghat
        if eval_fn is not None and (t % cfg.eval_every == 0 or t == cfg.steps):
            val = eval_fn(x)
            history.append((t, val))
            if better(val, best_val):
                best_val, best_x = val, x.copy()
    if eval_fn is None:
        return x, history
    return best_x, history


def train_unfolded(net, channels, noise_levels, gm, eps2=None,
                   trainer_cfg=None, rng_seed=0):
    """Fit the network to maximize the mean received-signal rate reduction
    over a channel training set and a set of noise levels.

    Every trainer step draws a channel mini-batch and a single noise level,
    runs the two antithetic forward evaluations, and ascends the estimated
    gradient.  The returned network achieves a full-training-set objective
    at least as large as the initialization's (the best evaluated iterate
    is kept).
    """
    if len(channels) == 0:
        raise ValueError("channel training set is empty")
    cfg = trainer_cfg if trainer_cfg is not None else TrainerConfig()
    if eps2 is None:
        eps2 = net.config.eps2_precoding
    x0 = net_to_vector(net)
    scales = parameter_scales(net)

    def forward_mean(x, idx, sig):
        cand = net_with_vector(net, x * scales)
        vals = []
        for n in idx:
            ch = channels[n].with_sigma(sig)
            V = du_forward(cand, ch, gm, eps2=eps2)
            vals.append(channel_mcr2(V, ch, gm, eps2=eps2))
        return float(np.mean(vals))

    def objective(x, t):
        mrng = child_rng(rng_seed, 11, t)
        size = min(cfg.batch_channels, len(channels))
        idx = mrng.choice(len(channels), size=size, replace=False)
        sig = noise_levels[mrng.integers(len(noise_levels))]
        return forward_mean(x, idx, sig)

    def eval_fn(x):
        cand = net_with_vector(net, x * scales)
        precs = [[du_forward(cand, ch.with_sigma(sig), gm, eps2=eps2)
                  for sig in noise_levels] for ch in channels]
        return channel_mcr2_batch(precs, channels, noise_levels, gm, eps2=eps2)

    rng = child_rng(rng_seed, 7)
    if cfg.steps == 0:
        return net_with_vector(net, x0)
    best_x, _ = spsa_extremize(objective, x0 / scales, cfg, rng,
                               maximize=True, eval_fn=eval_fn)
    return net_with_vector(net, best_x * scales)


def finetune_feature_source(feature_source):
    """Resolve a fine-tuning feature source into (stats, sampler).

    A mixture model yields fresh samples per call; a fixed labeled batch is
    column-subsampled and contributes its empirical second-moment
    statistics.  The statistics drive the classifier and stay fixed."""
    if isinstance(feature_source, GMModel):
        stats = feature_source

        def draw(rng, count):
            return sample_features(stats, count, False, rng)
    elif isinstance(feature_source, FeatureBatch):
        stats = empirical_gm(feature_source)

        def draw(rng, count):
            idx = rng.choice(feature_source.n_samples, size=count,
                             replace=count > feature_source.n_samples)
            return FeatureBatch(samples=feature_source.samples[:, idx],
                                labels=feature_source.labels[idx],
                                n_classes=feature_source.n_classes)
    else:
        raise TypeError("feature_source must be a GMModel or a FeatureBatch")
    return stats, draw


def finetune_eval_loss(net, feature_source, channels, noise_levels,
                       rng_seed, eps2=None, n_pairs=None):
    """Deterministic end-to-end loss used to select fine-tuning iterates.

    Index-paired loss of a fixed feature batch drawn from stream
    (rng_seed, 19), with the channel list tiled cyclically to at least
    n_pairs pairs (default 64) so the selection metric is not dominated by
    per-sample noise when the channel set is small."""
    if eps2 is None:
        eps2 = net.config.eps2_precoding
    if n_pairs is None:
        n_pairs = max(len(channels), 64)
    stats, draw = finetune_feature_source(feature_source)
    reps = -(-n_pairs // len(channels))  # ceil
    tiled = (list(channels) * reps)[:reps * len(channels)]
    batch = draw(child_rng(rng_seed, 19), len(tiled))
    per_channel = [[du_forward(net, ch.with_sigma(sig), stats, eps2=eps2)
                    for sig in noise_levels] for ch in channels]
    precs = [per_channel[i % len(channels)] for i in range(len(tiled))]
    return e2e_loss(batch, precs, tiled, noise_levels, stats,
                    child_rng_seed_int(rng_seed, 23), pairing="indexed")


def child_rng_seed_int(seed, *stream):
    """Derived integer seed for handing to APIs that take a seed."""
    return int(child_rng(seed, *stream).integers(0, 2 ** 62))


def e2e_finetune(net, feature_source, channels, noise_levels,
                 trainer_cfg=None, rng_seed=0, eps2=None):
    """Fine-tune a pretrained network on the end-to-end classification loss.

    feature_source is either a mixture model (fresh samples are drawn per
    mini-batch) or a fixed labeled batch (columns are subsampled); either
    way its second-moment statistics drive the classifier and stay fixed.
    Mini-batches pair feature i with channel i and one noise draw per index
    under a single per-batch noise level.  The best iterate under the
    deterministic finetune_eval_loss (including the initialization) is
    returned, so the selection loss never ends worse than it started.
    """
    if len(channels) == 0:
        raise ValueError("channel training set is empty")
    cfg = trainer_cfg if trainer_cfg is not None else TrainerConfig()
    if eps2 is None:
        eps2 = net.config.eps2_precoding
    stats, draw = finetune_feature_source(feature_source)
    x0 = net_to_vector(net)
    scales = parameter_scales(net)
    recv = net.config.recv_dim

    def objective(x, t):
        mrng = child_rng(rng_seed, 11, t)
        size = min(cfg.batch_channels, len(channels))
        idx = mrng.choice(len(channels), size=size, replace=False)
        sig = noise_levels[mrng.integers(len(noise_levels))]
        batch = draw(child_rng(rng_seed, 13, t), size)
        noise = sig * complex_gaussian(child_rng(rng_seed, 17, t), (recv, size))
        cand = net_with_vector(net, x * scales)
        total = 0.0
        for i, n in enumerate(idx):
            ch_e = channels[n].with_sigma(sig)
            V = du_forward(cand, ch_e, stats, eps2=eps2)
            r = ch_e.assembled @ V.block_diag() @ batch.samples[:, i] + noise[:, i]
            term = cross_entropy_terms(r.reshape(-1, 1), batch.labels[i:i + 1],
                                       V, ch_e, stats, sigma=sig)
            total += float(term[0])
        return total / size

    def eval_fn(x):
        cand = net_with_vector(net, x * scales)
        return finetune_eval_loss(cand, feature_source, channels,
                                  noise_levels, rng_seed, eps2=eps2,
                                  n_pairs=cfg.eval_pairs)

    rng = child_rng(rng_seed, 7)
    if cfg.steps == 0:
        return net_with_vector(net, x0)
    best_x, _ = spsa_extremize(objective, x0 / scales, cfg, rng,
                               maximize=False, eval_fn=eval_fn)
    return net_with_vector(net, best_x * scales)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _approx_to_dict(p):
    return {"xi1": complex_matrix_to_lists(p.xi1),
            "xi2": complex_matrix_to_lists(p.xi2),
            "xi3": complex_matrix_to_lists(p.xi3)}


def _approx_from_dict(d):
    return InverseApproxParams(xi1=complex_matrix_from_lists(d["xi1"]),
                               xi2=complex_matrix_from_lists(d["xi2"]),
                               xi3=complex_matrix_from_lists(d["xi3"]))


def net_to_dict(net):
    layers = []
    for layer in net.layers:
        d = {"theta": _approx_to_dict(layer.theta),
             "phi": _approx_to_dict(layer.phi),
             "psi": _approx_to_dict(layer.psi)}
        if net.variant == VARIANT_PLAIN:
            d["omega"] = [_approx_to_dict(om) for om in layer.omega]
            d["lambdas"] = [[float(l.real), float(l.imag)] for l in layer.lambdas]
        else:
            d["upsilon"] = [[complex_matrix_to_lists(u) for u in per_device]
                            for per_device in layer.upsilon]
        layers.append(d)
    return {"schema": "taskcomm.unfolded_net/1", "variant": net.variant,
            "mm_sublayers": net.mm_sublayers, "config": config_to_dict(net.config),
            "layers": layers}


def net_from_dict(d):
    if d.get("schema") != "taskcomm.unfolded_net/1":
        raise ValueError(f"unrecognized network schema: {d.get('schema')!r}")
    cfg = config_from_dict(d["config"])
    variant = d["variant"]
    layers = []
    for ld in d["layers"]:
        theta = _approx_from_dict(ld["theta"])
        phi = _approx_from_dict(ld["phi"])
        psi = _approx_from_dict(ld["psi"])
        if variant == VARIANT_PLAIN:
            omega = tuple(_approx_from_dict(om) for om in ld["omega"])
            lambdas = np.array([complex(re, im) for re, im in ld["lambdas"]],
                               dtype=complex)
            layers.append(DuBcaLayerParams(theta=theta, phi=phi, psi=psi,
                                           omega=omega, lambdas=lambdas))
        else:
            upsilon = tuple(tuple(complex_matrix_from_lists(u) for u in per_device)
                            for per_device in ld["upsilon"])
            layers.append(DuBcaMmLayerParams(theta=theta, phi=phi, psi=psi,
                                             upsilon=upsilon))
    return UnfoldedNet(variant=variant, layers=layers,
                       mm_sublayers=d["mm_sublayers"], config=cfg)
