"""Shared helpers for the test suite: random instance builders in
normalized units (unit path gain, O(1) powers and noise) so objectives and
tolerances live at a sane scale."""

import numpy as np
import pytest

from taskcomm import model


def random_hpd(rng, n, cond_shift=1.0):
    """Random Hermitian positive definite matrix of dimension n."""
    G = model.complex_gaussian(rng, (n, n))
    return 0.5 * (G @ G.conj().T + (G @ G.conj().T).conj().T) / n + cond_shift * np.eye(n)


def make_instance(seed, K=2, J=2, D_per=2, N_t_per=2, N_r=4, O=1, rank=1,
                  sigma=0.5, P=1.0, eps2=1.0, kappa=1.0, hold_channel=True):
    """(config, gm, channel) triple in normalized units."""
    config = model.SystemConfig.homogeneous(
        K=K, J=J, D_per_device=D_per, N_t_per_device=N_t_per, N_r=N_r,
        P_per_device=P, O=O, eps2_precoding=eps2)
    gm = model.make_gm_model(config, rank, seed)
    rician = model.RicianParams(kappa=kappa, pathloss_db=0.0,
                                hold_channel=hold_channel)
    ch = model.sample_channel(rician, config, seed + 1, sigma=sigma)
    return config, gm, ch


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
