"""Block-coordinate ascent for the precoding problem.

The received-signal rate reduction is maximized by cycling through exact
convex updates of three blocks: an auxiliary receive matrix U, a family of
Hermitian weight matrices {W_j}, and the per-device precoders V_k.  With U
and the weights fixed, each V_k solves a quadratically constrained
quadratic program in the whitened coordinates v_k = D_k vec(V_k); that
QCQP is solved exactly through an eigendecomposition plus a bisection (and
Newton polish) on the power-constraint multiplier.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as la

from . import numerics
from .mcr2 import alpha_for, channel_mcr2
from .model import child_rng, channel_fingerprint, complex_gaussian


class SingularFeatureBlock(Exception):
    """A device's feature covariance block is not invertible even after ridging."""


class BisectionFailed(Exception):
    """No bracket for the power-constraint multiplier could be found."""


@dataclass(frozen=True)
class PrecoderSet:
    """Per-device precoders V_k (each O*N_t_k x D_k) plus the owning config.

    Feasibility means tr(V_k Sigma^(kk) V_k^H) <= P_k for every device.
    """

    vs: tuple
    config: object

    def __post_init__(self):
        vs = tuple(np.asarray(v, dtype=complex) for v in self.vs)
        object.__setattr__(self, "vs", vs)
        cfg = self.config
        if len(vs) != cfg.K:
            raise ValueError("one precoder per device required")
        for k, v in enumerate(vs):
            if v.shape != (cfg.tx_dim(k), cfg.D_k[k]):
                raise ValueError(f"device {k} precoder has shape {v.shape}, "
                                 f"expected {(cfg.tx_dim(k), cfg.D_k[k])}")

    def block_diag(self):
        return la.block_diag(*self.vs)

    def power(self, gm, k):
        """Transmit power of device k, tr(V_k Sigma^(kk) V_k^H)."""
        skk = sigma_block(gm.global_cov, self.config, k, k)
        return float(np.trace(self.vs[k] @ skk @ self.vs[k].conj().T).real)

    def is_feasible(self, gm, tol=1e-9):
        return all(self.power(gm, k) <= self.config.P_k[k] + tol
                   for k in range(self.config.K))

    def with_device(self, k, Vk):
        vs = list(self.vs)
        vs[k] = Vk
        return PrecoderSet(vs=tuple(vs), config=self.config)


@dataclass(frozen=True)
class BcaState:
    """Solver state: auxiliary blocks, current precoders, and the
    objective value recorded before the first and after every iteration."""

    U: np.ndarray
    W0: np.ndarray
    Wj: tuple
    V: PrecoderSet
    objective_trace: np.ndarray


def sigma_block(cov, config, q, k):
    """(q, k) device block of a stacked D x D covariance."""
    bounds = config.feature_bounds()
    (mq, nq), (mk, nk) = bounds[q], bounds[k]
    return cov[mq:nq, mk:nk]


def feature_whitener(gm, config, k):
    """Whitening pair (D_k_mat, D_k_inv) for device k.

    D_k_mat = ((Sigma^(kk))^T kron I)^{1/2} maps vec(V_k) to the whitened
    coordinates in which the power constraint is a plain norm ball.  A
    relative ridge of 1e-10 * trace/dim is added before inversion when the
    block is (near-)singular, which happens by design for low-rank feature
    mixtures; raises SingularFeatureBlock when even that cannot help.
    """
    skk = sigma_block(gm.global_cov, config, k, k)
    dk = config.D_k[k]
    t = np.trace(skk).real
    if t <= 0:
        raise SingularFeatureBlock(f"device {k} feature covariance block has trace {t}")
    ridge = 1e-10 * t / dk
    T = numerics.hermitian_part(skk.T)
    if np.linalg.eigvalsh(T).min() < ridge:
        T = T + ridge * np.eye(dk)
    S = numerics.matrix_sqrt_psd(T)
    try:
        S_inv = numerics.hpd_inverse(S)
    except numerics.NotPositiveDefinite as exc:
        raise SingularFeatureBlock(f"device {k} feature covariance block is singular") from exc
    eye_t = np.eye(config.tx_dim(k), dtype=complex)
    return numerics.kron(S, eye_t), numerics.kron(S_inv, eye_t)


def compute_F(V, ch, gm, eps2=None, sigma=None):
    """Received-signal covariance-style matrices (F_0, [F_j]) for a precoder.

    F_0 = gamma I + alpha H V Sigma V^H H^H and the per-class analogues;
    both are Hermitian PD whenever sigma > 0.
    """
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    if sigma is None:
        sigma = ch.sigma
    alpha = alpha_for(cfg, eps2)
    gamma = 1.0 + alpha * sigma ** 2
    S = ch.assembled @ V.block_diag()
    eye = np.eye(S.shape[0], dtype=complex)
    F0 = numerics.hermitian_part(gamma * eye + alpha * (S @ gm.global_cov @ S.conj().T))
    Fj = [numerics.hermitian_part(gamma * eye + alpha * (S @ cov @ S.conj().T))
          for cov in gm.class_covs]
    return F0, Fj


def _effective(V, ch):
    """H V, the effective stacked channel applied to the feature vector."""
    return ch.assembled @ V.block_diag()


def _e0_matrix(U, V, ch, gm, alpha, gamma):
    """E_0 = (I - U^H H V Sigma^{1/2})(.)^H + (gamma/alpha) U^H U."""
    root = numerics.matrix_sqrt_psd(gm.global_cov)
    X = np.eye(gm.dim, dtype=complex) - U.conj().T @ _effective(V, ch) @ root
    return numerics.hermitian_part(X @ X.conj().T + (gamma / alpha) * (U.conj().T @ U))


def u_step(state, ch, gm, eps2=None):
    """Exact convex maximizer over U: alpha F_0^{-1} H V Sigma^{1/2}."""
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    alpha = alpha_for(cfg, eps2)
    F0, _ = compute_F(state.V, ch, gm, eps2=eps2)
    root = numerics.matrix_sqrt_psd(gm.global_cov)
    return alpha * numerics.hermitian_solve(F0, _effective(state.V, ch) @ root)


def w_step(state, ch, gm, eps2=None):
    """Exact convex maximizers over the weights: W_0 = E_0^{-1}, W_j = F_j^{-1}."""
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    alpha = alpha_for(cfg, eps2)
    gamma = 1.0 + alpha * ch.sigma ** 2
    _, Fj = compute_F(state.V, ch, gm, eps2=eps2)
    E0 = _e0_matrix(state.U, state.V, ch, gm, alpha, gamma)
    W0 = numerics.hpd_inverse(E0)
    Wj = tuple(numerics.hpd_inverse(F) for F in Fj)
    return W0, Wj


def p5_objective(U, W0, Wj, V, ch, gm, eps2=None):
    """Value of the variational (auxiliary-variable) objective at the given
    blocks: log det(W_0) - tr(W_0 E_0) + sum_j p_j [log det(W_j) - tr(W_j F_j)].

    Used by the solver tests; at the per-block optima it coincides with the
    rate-reduction objective up to an additive constant.
    """
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    alpha = alpha_for(cfg, eps2)
    gamma = 1.0 + alpha * ch.sigma ** 2
    _, Fj = compute_F(V, ch, gm, eps2=eps2)
    E0 = _e0_matrix(U, V, ch, gm, alpha, gamma)
    val = numerics.logdet_hpd(W0) - float(np.trace(W0 @ E0).real)
    for p, W, F in zip(gm.priors, Wj, Fj):
        val += p * (numerics.logdet_hpd(W) - float(np.trace(W @ F).real))
    return val


def _assemble_qcqp(U, W0, Wj, V, ch, gm, k, eps2=None):
    """Quadratic model (b_k, N_k) of the variational objective in the
    whitened coordinates v_k of device k, all other blocks fixed.

    The objective restricted to v_k is 2 Re(b_k^H v_k) - v_k^H N_k v_k up
    to a constant, so the device update minimizes
    -2 Re(b_k^H v_k) + v_k^H N_k v_k over the ball ||v_k||^2 <= P_k.
    """
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    alpha = alpha_for(cfg, eps2)
    bounds = cfg.feature_bounds()
    mk, nk = bounds[k]
    Hk = ch.blocks[k]
    root = numerics.matrix_sqrt_psd(gm.global_cov)
    root_k = root[mk:nk, :]  # device-k rows of Sigma^{1/2}

    cross0 = np.zeros((cfg.recv_dim, cfg.D_k[k]), dtype=complex)
    cross_j = [np.zeros_like(cross0) for _ in range(gm.n_classes)]
    for q in range(cfg.K):
        if q == k:
            continue
        HqVq = ch.blocks[q] @ V.vs[q]
        cross0 += HqVq @ sigma_block(gm.global_cov, cfg, q, k)
        for j, cov in enumerate(gm.class_covs):
            cross_j[j] += HqVq @ sigma_block(cov, cfg, q, k)

    HkH = Hk.conj().T
    UW0 = U @ W0
    b_mat = HkH @ UW0 @ root_k.conj().T
    b_mat -= HkH @ UW0 @ U.conj().T @ cross0
    for p, W, cj in zip(gm.priors, Wj, cross_j):
        b_mat -= alpha * p * (HkH @ W @ cj)

    A0 = HkH @ (U @ W0 @ U.conj().T) @ Hk
    N_raw = numerics.kron(sigma_block(gm.global_cov, cfg, k, k).T, A0)
    for p, W, cov in zip(gm.priors, Wj, gm.class_covs):
        N_raw += alpha * p * numerics.kron(sigma_block(cov, cfg, k, k).T, HkH @ W @ Hk)

    _, Dk_inv = feature_whitener(gm, cfg, k)
    b = Dk_inv @ numerics.vec(b_mat)
    N = numerics.hermitian_part(Dk_inv @ N_raw @ Dk_inv)
    return b, N


def assemble_qcqp(state, ch, gm, k, eps2=None):
    """QCQP data (b_k, N_k) for device k at the current solver state."""
    return _assemble_qcqp(state.U, state.W0, state.Wj, state.V, ch, gm, k, eps2=eps2)


def v_step_bisection(b_k, N_k, P_k):
    """Exactly solve min -2 Re(b^H v) + v^H N v subject to ||v||^2 <= P.

    Returns (v, lam) satisfying the KKT conditions: v = (N + lam I)^{-1} b
    with either lam = 0 and ||v||^2 <= P, or lam > 0 and ||v||^2 = P.  The
    multiplier is located by doubling a bracket and bisecting the secular
    equation in the eigenbasis of N, then polished by Newton steps to
    machine precision.
    """
    b = np.asarray(b_k, dtype=complex).reshape(-1)
    P = float(P_k)
    if P <= 0:
        raise ValueError("power budget must be positive")
    if np.linalg.norm(b) == 0.0:
        return np.zeros_like(b), 0.0

    w, Q = np.linalg.eigh(np.asarray(N_k, dtype=complex))
    w = np.clip(w, 0.0, None)
    beta = Q.conj().T @ b
    beta2 = np.abs(beta) ** 2

    def norm2(lam):
        return float(np.sum(beta2 / (w + lam) ** 2))

    # Interior optimum: well-posed only if b has no component on the null
    # space of N; use the PSD tolerance of N as the null threshold.
    tol_null = max(numerics.psd_tolerance(np.diag(w)), 1e-300)
    null_mass = float(np.sum(beta2[w <= tol_null]))
    if null_mass <= 1e-14 * float(np.sum(beta2)):
        active = w > tol_null
        v_free = np.zeros_like(beta)
        v_free[active] = beta[active] / w[active]
        if float(np.sum(np.abs(v_free) ** 2)) <= P:
            return Q @ v_free, 0.0

    lo, hi = 0.0, 1.0
    doublings = 0
    while norm2(hi) > P:
        hi *= 2.0
        doublings += 1
        if doublings > 200:
            raise BisectionFailed("no feasible multiplier bracket within 200 doublings")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm2(mid) > P:
            lo = mid
        else:
            hi = mid
        if abs(norm2(mid) - P) <= 1e-13 * P:
            break
    lam = 0.5 * (lo + hi)
    # Newton polish on f(lam) = sum beta2/(w+lam)^2 - P (decreasing, convex).
    for _ in range(50):
        f = norm2(lam) - P
        if abs(f) <= 4e-16 * P:
            break
        fp = -2.0 * float(np.sum(beta2 / (w + lam) ** 3))
        step = f / fp
        lam_new = lam - step
        if not np.isfinite(lam_new) or lam_new <= 0:
            break
        lam = lam_new
    v = Q @ (beta / (w + lam))
    return v, float(lam)


def random_feasible_precoder(ch, gm, rng_seed):
    """Random complex-Gaussian precoders projected onto the power ball."""
    cfg = ch.config
    rng = child_rng(rng_seed)
    vs = []
    for k in range(cfg.K):
        Vk = complex_gaussian(rng, (cfg.tx_dim(k), cfg.D_k[k]))
        vs.append(Vk)
    V = PrecoderSet(vs=tuple(vs), config=cfg)
    return project_precoders(V, gm)


def project_precoders(V, gm):
    """Rescale every infeasible device precoder onto its power boundary."""
    vs = []
    for k in range(V.config.K):
        p = V.power(gm, k)
        budget = V.config.P_k[k]
        if p > budget:
            vs.append(V.vs[k] * np.sqrt(budget / p))
        else:
            vs.append(V.vs[k])
    return PrecoderSet(vs=tuple(vs), config=V.config)


def scaled_identity_precoder(ch, gm):
    """Identity-pattern baseline: eye(O*N_t_k, D_k) scaled to use the full
    power budget of each device."""
    cfg = ch.config
    vs = []
    for k in range(cfg.K):
        E = np.eye(cfg.tx_dim(k), cfg.D_k[k], dtype=complex)
        skk = sigma_block(gm.global_cov, cfg, k, k)
        p = float(np.trace(E @ skk @ E.conj().T).real)
        if p <= 0:
            raise SingularFeatureBlock(
                f"identity pattern radiates no power for device {k}")
        vs.append(np.sqrt(cfg.P_k[k] / p) * E)
    return PrecoderSet(vs=tuple(vs), config=cfg)


def _converged(prev, cur, tol):
    return abs(cur - prev) <= tol * max(abs(prev), abs(cur), 1e-12)


def bca_solve(V_init, ch, gm, eps2=None, max_iters=50, tol=1e-8):
    """Run block-coordinate ascent until the objective stalls.

    Each iteration updates U, then all weights, then the device precoders
    in ascending index order with (b_k, N_k) refreshed from the already
    updated precoders.  V_init of None draws a feasible random start seeded
    from the channel fingerprint, so reruns on the same channel are
    reproducible.
    """
    cfg = ch.config
    if eps2 is None:
        eps2 = cfg.eps2_precoding
    V = V_init if V_init is not None else random_feasible_precoder(
        ch, gm, channel_fingerprint(ch))
    trace = [channel_mcr2(V, ch, gm, eps2=eps2)]
    state = BcaState(U=np.zeros((cfg.recv_dim, cfg.D), dtype=complex),
                     W0=np.eye(cfg.D, dtype=complex),
                     Wj=tuple(np.eye(cfg.recv_dim, dtype=complex) for _ in range(gm.n_classes)),
                     V=V, objective_trace=None)
    whiteners = [feature_whitener(gm, cfg, k) for k in range(cfg.K)]
    for _ in range(max_iters):
        U = u_step(state, ch, gm, eps2=eps2)
        state = replace(state, U=U)
        W0, Wj = w_step(state, ch, gm, eps2=eps2)
        state = replace(state, W0=W0, Wj=Wj)
        for k in range(cfg.K):
            b, N = assemble_qcqp(state, ch, gm, k, eps2=eps2)
            v, _ = v_step_bisection(b, N, cfg.P_k[k])
            _, Dk_inv = whiteners[k]
            Vk = numerics.devec(Dk_inv @ v, cfg.tx_dim(k), cfg.D_k[k])
            state = replace(state, V=state.V.with_device(k, Vk))
        trace.append(channel_mcr2(state.V, ch, gm, eps2=eps2))
        if _converged(trace[-2], trace[-1], tol):
            break
    return replace(state, objective_trace=np.asarray(trace))
