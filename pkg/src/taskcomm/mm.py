"""Majorize-minimize replacement for the precoder update.

Instead of inverting (N_k + lam I) and tuning the multiplier, each device
update iterates a closed-form step derived from a scaled-identity quadratic
upper bound of the QCQP objective: the curvature eta_k is the maximum
absolute row sum of N_k (which dominates its largest eigenvalue), every
iterate is produced by a plain ball projection, and the limit coincides
with the exact bisection solution.
"""

from dataclasses import replace

import numpy as np

from . import numerics
from .bca import (BcaState, assemble_qcqp, feature_whitener,
                  random_feasible_precoder, u_step, w_step)
from .mcr2 import channel_mcr2
from .model import channel_fingerprint

ETA_FLOOR = 1e-30  # avoids 0/0 when N_k is identically zero


def eta_bound(N_k):
    """Curvature bound eta >= lambda_max(N_k) via the maximum absolute row sum."""
    return numerics.max_abs_row_sum(N_k)


def project_ball(q, P):
    """Scale q into the ball ||v||^2 <= P: q * min(sqrt(P)/||q||, 1)."""
    nq = np.linalg.norm(q)
    if nq == 0.0:
        return q
    return q * min(np.sqrt(P) / nq, 1.0)


def mm_v_step(b_k, N_k, P_k, v_init, inner_iters):
    """Iterate the majorize-minimize update for one device.

    Each inner iteration forms q = (b - (N - eta I) v_bar) / eta and
    projects it onto the power ball; the QCQP objective is non-increasing
    across iterations and every iterate is feasible by construction.
    """
    b = np.asarray(b_k, dtype=complex).reshape(-1)
    v = np.asarray(v_init, dtype=complex).reshape(-1).copy()
    eta = max(eta_bound(N_k), ETA_FLOOR)
    N = np.asarray(N_k, dtype=complex)
    for _ in range(inner_iters):
        q = (b - (N @ v - eta * v)) / eta
        v = project_ball(q, P_k)
    return v


def qcqp_objective(b_k, N_k, v):
    """-2 Re(b^H v) + v^H N v, the objective each device update minimizes."""
    b = np.asarray(b_k).reshape(-1)
    v = np.asarray(v).reshape(-1)
    return float((-2.0 * np.real(np.vdot(b, v))
                  + np.real(np.vdot(v, np.asarray(N_k) @ v))))


def majorizer_value(b_k, N_k, eta, v, v_bar):
    """Scaled-identity quadratic upper bound of qcqp_objective at v,
    anchored at v_bar; equals the objective when v = v_bar."""
    b = np.asarray(b_k).reshape(-1)
    v = np.asarray(v).reshape(-1)
    v_bar = np.asarray(v_bar).reshape(-1)
    N = np.asarray(N_k)
    lin = b - (N @ v_bar - eta * v_bar)
    val = eta * np.real(np.vdot(v, v)) - 2.0 * np.real(np.vdot(lin, v))
    val += np.real(np.vdot(v_bar, eta * v_bar - N @ v_bar))
    return float(val)


def bca_mm_solve(V_init, ch, gm, eps2=None, max_iters=50, inner_iters=20, tol=1e-8):
    """Block-coordinate ascent with the majorize-minimize device update.

    Same contract and stopping rule as bca_solve; each device update warm
    starts from its current precoder (carried across outer iterations) and
    runs inner_iters projections.  The curvature bound is recomputed every
    outer iteration since N_k changes with the other blocks.
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
            Dk, Dk_inv = whiteners[k]
            v_bar = project_ball(Dk @ numerics.vec(state.V.vs[k]), cfg.P_k[k])
            v = mm_v_step(b, N, cfg.P_k[k], v_bar, inner_iters)
            Vk = numerics.devec(Dk_inv @ v, cfg.tx_dim(k), cfg.D_k[k])
            state = replace(state, V=state.V.with_device(k, Vk))
        trace.append(channel_mcr2(state.V, ch, gm, eps2=eps2))
        if abs(trace[-1] - trace[-2]) <= tol * max(abs(trace[-2]), abs(trace[-1]), 1e-12):
            break
    return replace(state, objective_trace=np.asarray(trace))
