"""Classifier and evaluation checks: posterior normalization, hand-computed
scalar decisions, loss identities against a naive re-summation oracle, and
Monte-Carlo accuracy sanity bounds."""

import numpy as np
import pytest

from taskcomm import bca, inference, mcr2, mm, model
from conftest import make_instance


def scalar_setup(sigma2=0.5, c1=2.0, c2=1.0, priors=(0.5, 0.5)):
    """Scalar system with per-class received variances c1 and c2
    (noise included): Sigma_j = c_j - sigma^2 with H = V = 1."""
    config = model.SystemConfig.homogeneous(1, 2, 1, 1, 1, 10.0,
                                            eps2_precoding=1.0)
    covs = (np.array([[c1 - sigma2 + 0j]]), np.array([[c2 - sigma2 + 0j]]))
    gm = model.GMModel(priors=np.asarray(priors), class_covs=covs,
                       global_cov=sum(p * c for p, c in zip(priors, covs)))
    ch = model.ChannelState(blocks=(np.array([[1.0 + 0j]]),),
                            sigma=float(np.sqrt(sigma2)), config=config)
    V = bca.PrecoderSet(vs=(np.array([[1.0 + 0j]]),), config=config)
    return config, gm, ch, V


class TestClassLogPosteriors:
    def test_single_class_always_wins(self):
        config, gm, ch = make_instance(0, J=1)
        V = bca.random_feasible_precoder(ch, gm, 1)
        r = model.complex_gaussian(model.child_rng(2), (config.recv_dim,))
        assert inference.map_classify(r, V, ch, gm) == 0

    def test_scalar_hand_decision(self):
        # variances 2 vs 1, equal priors, |r|^2 = 3:
        # class 0 iff -3/2 - ln 2 > -3 - 0, which holds
        config, gm, ch, V = scalar_setup()
        r = np.array([np.sqrt(3.0) + 0j])
        lp = inference.class_log_posteriors(r, V, ch, gm)
        want_gap = (-3.0 / 2.0 - np.log(2.0)) - (-3.0)
        assert abs((lp[0] - lp[1]) - want_gap) < 1e-12
        assert inference.map_classify(r, V, ch, gm) == 0

    def test_swapping_classes_swaps_posteriors(self):
        config, gm, ch, V = scalar_setup()
        gm_swapped = model.GMModel(priors=gm.priors[::-1].copy(),
                                   class_covs=gm.class_covs[::-1],
                                   global_cov=gm.global_cov)
        r = np.array([1.3 - 0.2j])
        lp = inference.class_log_posteriors(r, V, ch, gm)
        lp_sw = inference.class_log_posteriors(r, V, ch, gm_swapped)
        np.testing.assert_allclose(lp, lp_sw[::-1], atol=1e-12)

    def test_normalized_posteriors_sum_to_one(self):
        config, gm, ch = make_instance(3, J=3, rank=2)
        V = bca.random_feasible_precoder(ch, gm, 4)
        r = model.complex_gaussian(model.child_rng(5), (config.recv_dim,))
        lp = inference.class_log_posteriors(r, V, ch, gm)
        p = np.exp(lp - lp.max())
        p /= p.sum()
        assert abs(p.sum() - 1.0) < 1e-12

    def test_argmax_invariant_to_common_shift(self):
        config, gm, ch = make_instance(6, J=4, rank=1)
        V = bca.random_feasible_precoder(ch, gm, 7)
        r = model.complex_gaussian(model.child_rng(8), (config.recv_dim,))
        lp = inference.class_log_posteriors(r, V, ch, gm)
        assert int(np.argmax(lp)) == int(np.argmax(lp + 123.456))


class TestMapClassify:
    def test_exact_tie_takes_lowest_index(self):
        config, gm, ch, V = scalar_setup(c1=1.5, c2=1.5)
        r = np.array([0.3 + 0.4j])
        assert inference.map_classify(r, V, ch, gm) == 0

    def test_near_noiseless_orthogonal_classes(self):
        # rank-one orthogonal classes, almost no noise: the true class wins
        config = model.SystemConfig.homogeneous(1, 2, 2, 2, 2, 10.0,
                                                eps2_precoding=1.0)
        e0 = np.zeros((2, 1), dtype=complex)
        e0[0] = 1.0
        e1 = np.zeros((2, 1), dtype=complex)
        e1[1] = 1.0
        covs = (e0 @ e0.conj().T, e1 @ e1.conj().T)
        gm = model.GMModel(priors=np.array([0.5, 0.5]), class_covs=covs,
                           global_cov=0.5 * (covs[0] + covs[1]))
        ch = model.ChannelState(blocks=(np.eye(2, dtype=complex),),
                                sigma=1e-6, config=config)
        V = bca.PrecoderSet(vs=(np.eye(2, dtype=complex),), config=config)
        batch = model.sample_features(gm, 10_000, False, 9)
        R = model.transmit(batch.samples, V, ch, 10)
        lp = inference._log_posteriors_batch(R, V, ch, gm)
        acc = np.mean(np.argmax(lp, axis=0) == batch.labels)
        assert acc >= 0.999


def naive_grid_loss(features, precoders, channels, sigmas, gm, seed, draws):
    """Four-nested-loop reference implementation of the grid loss with its
    own dense Gaussian log-pdf."""
    Z, y = features.samples, features.labels
    total, count = 0.0, 0
    for n, ch in enumerate(channels):
        H = ch.assembled
        for e, sig in enumerate(sigmas):
            Vbd = precoders[n][e].block_diag()
            for f in range(draws):
                noise = sig * model.complex_gaussian(
                    model.child_rng(seed, n, e, f), (H.shape[0], Z.shape[1]))
                for m in range(Z.shape[1]):
                    r = H @ Vbd @ Z[:, m] + noise[:, m]
                    logp = []
                    for p, cov in zip(gm.priors, gm.class_covs):
                        C = H @ Vbd @ cov @ Vbd.conj().T @ H.conj().T \
                            + sig ** 2 * np.eye(H.shape[0])
                        Ci = np.linalg.inv(C)
                        quad = float(np.real(r.conj() @ Ci @ r))
                        _, logdet = np.linalg.slogdet(C)
                        logp.append(np.log(p) - quad - logdet)
                    logp = np.array(logp)
                    lse = logp.max() + np.log(np.exp(logp - logp.max()).sum())
                    total += -(logp[y[m]] - lse)
                    count += 1
    return total / count


class TestE2eLoss:
    def test_single_class_zero_loss(self):
        config, gm, ch = make_instance(11, J=1)
        V = bca.random_feasible_precoder(ch, gm, 12)
        batch = model.sample_features(gm, 8, False, 13)
        loss = inference.e2e_loss(batch, [[V]], [ch], [ch.sigma], gm, 0)
        assert loss == 0.0

    def test_identical_covariances_give_log_j(self):
        config = model.SystemConfig.homogeneous(1, 3, 2, 2, 2, 1.0,
                                                eps2_precoding=1.0)
        cov = np.eye(2, dtype=complex) / 2
        gm = model.GMModel(priors=np.full(3, 1 / 3),
                           class_covs=(cov, cov, cov), global_cov=cov)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
        ch = model.sample_channel(rician, config, 1, sigma=0.5)
        V = bca.random_feasible_precoder(ch, gm, 2)
        batch = model.sample_features(gm, 12, False, 3)
        loss = inference.e2e_loss(batch, [[V]], [ch], [ch.sigma], gm, 4)
        assert abs(loss - np.log(3.0)) < 1e-10

    def test_matches_naive_grid_oracle(self):
        config, gm, _ = make_instance(14, K=2, J=2, rank=1)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
        channels = [model.sample_channel(rician, config, 30 + n, sigma=0.4)
                    for n in range(2)]
        sigmas = [0.3, 0.8]
        precs = [[bca.random_feasible_precoder(ch, gm, 40 + 10 * n + e)
                  for e in range(2)] for n, ch in enumerate(channels)]
        batch = model.sample_features(gm, 5, False, 15)
        got = inference.e2e_loss(batch, precs, channels, sigmas, gm, 99,
                                 noise_draws=2)
        want = naive_grid_loss(batch, precs, channels, sigmas, gm, 99, 2)
        assert abs(got - want) < 1e-12

    def test_nonnegative(self):
        config, gm, ch = make_instance(16, J=3, rank=1)
        V = bca.random_feasible_precoder(ch, gm, 17)
        batch = model.sample_features(gm, 30, False, 18)
        assert inference.e2e_loss(batch, [[V]], [ch], [ch.sigma], gm, 19) >= 0.0

    def test_indexed_pairing_matches_manual(self):
        config, gm, _ = make_instance(20, rank=1)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
        channels = [model.sample_channel(rician, config, 50 + i, sigma=0.5)
                    for i in range(4)]
        batch = model.sample_features(gm, 4, False, 21)
        precs = [[bca.random_feasible_precoder(ch, gm, 60 + i)]
                 for i, ch in enumerate(channels)]
        got = inference.e2e_loss(batch, precs, channels, [0.5], gm, 22,
                                 pairing="indexed")
        total = 0.0
        for i, ch in enumerate(channels):
            noise = 0.5 * model.complex_gaussian(model.child_rng(22, i, 0),
                                                 (config.recv_dim,))
            r = ch.assembled @ precs[i][0].block_diag() @ batch.samples[:, i] + noise
            term = inference.cross_entropy_terms(
                r.reshape(-1, 1), batch.labels[i:i + 1], precs[i][0], ch, gm,
                sigma=0.5)
            total += float(term[0])
        assert abs(got - total / 4) < 1e-12

    def test_indexed_pairing_needs_matching_counts(self):
        config, gm, ch = make_instance(23)
        batch = model.sample_features(gm, 3, False, 24)
        with pytest.raises(ValueError):
            inference.e2e_loss(batch, [[None]], [ch], [0.5], gm, 0,
                               pairing="indexed")


class TestEvaluateAccuracy:
    def test_indistinguishable_classes_are_chance(self):
        # rank = D makes every class covariance I/D, so accuracy is 1/J
        config = model.SystemConfig.homogeneous(1, 2, 3, 3, 3, 1.0,
                                                eps2_precoding=1.0)
        gm = model.make_gm_model(config, 3, 0)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
        res = inference.evaluate_accuracy(
            lambda ch: bca.scaled_identity_precoder(ch, gm), gm, rician,
            config, 40, 100, 7, sigma=0.5)
        assert abs(res.mean - 0.5) <= max(3 * res.stderr, 0.03)

    def test_solver_beats_identity_baseline_on_paired_channels(self):
        config, gm, _ = make_instance(25, K=1, J=2, D_per=4, N_t_per=4,
                                      N_r=4, rank=1)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)

        def solver_fn(ch):
            return mm.bca_mm_solve(None, ch, gm, max_iters=15).V

        def baseline_fn(ch):
            return bca.scaled_identity_precoder(ch, gm)

        a = inference.evaluate_accuracy(solver_fn, gm, rician, config,
                                        60, 80, 31, sigma=1.0)
        b = inference.evaluate_accuracy(baseline_fn, gm, rician, config,
                                        60, 80, 31, sigma=1.0)
        wins = np.sum(a.per_channel >= b.per_channel)
        assert wins >= 0.9 * 60
        assert a.mean > b.mean

    def test_extra_noise_draws_reduce_channel_variance(self):
        config, gm, _ = make_instance(28, K=1, J=2, D_per=4, N_t_per=4,
                                      N_r=4, rank=1)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)

        def fn(ch):
            return bca.scaled_identity_precoder(ch, gm)

        one = inference.evaluate_accuracy(fn, gm, rician, config, 25, 30, 5,
                                          sigma=1.0, noise_draws_per_sample=1)
        four = inference.evaluate_accuracy(fn, gm, rician, config, 25, 30, 5,
                                           sigma=1.0, noise_draws_per_sample=4)
        assert abs(one.mean - four.mean) < 0.05
        assert four.per_channel.std() <= one.per_channel.std() + 0.02

    def test_threads_do_not_change_results(self):
        config, gm, _ = make_instance(26, rank=1)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)

        def fn(ch):
            return bca.scaled_identity_precoder(ch, gm)

        r1 = inference.evaluate_accuracy(fn, gm, rician, config, 12, 40, 3,
                                         sigma=0.5, threads=1)
        r4 = inference.evaluate_accuracy(fn, gm, rician, config, 12, 40, 3,
                                         sigma=0.5, threads=4)
        np.testing.assert_array_equal(r1.per_channel, r4.per_channel)

    def test_accuracy_monotone_in_snr(self):
        # five SNR points spanning 24 dB: mean accuracy must not drop by
        # more than two standard errors at any step
        config, gm, _ = make_instance(27, K=1, J=2, D_per=4, N_t_per=4,
                                      N_r=4, rank=1)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
        sigmas = [np.sqrt(10 ** (-s / 10)) for s in (-6, 0, 6, 12, 18)]

        def fn(ch):
            return mm.bca_mm_solve(None, ch, gm, max_iters=12).V

        means, errs = [], []
        for sig in sigmas:
            res = inference.evaluate_accuracy(fn, gm, rician, config, 40, 60,
                                              17, sigma=float(sig))
            means.append(res.mean)
            errs.append(res.stderr)
        for lo, hi, e_lo, e_hi in zip(means[:-1], means[1:], errs[:-1], errs[1:]):
            assert hi >= lo - 2 * np.hypot(e_lo, e_hi)
