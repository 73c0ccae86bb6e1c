"""Unfolded-network checks: approximator identities, anchored equivalence
with the base algorithms, feasibility of arbitrary parameterizations,
parameter accounting, packing/serialization round-trips, and trainer
behavior."""

import numpy as np
import pytest

from taskcomm import bca, inference, mcr2, mm, model, unfolded
from conftest import make_instance, random_hpd


class TestInvApprox:
    def test_diagonal_exact_inverse(self):
        A = np.diag([2.0, 4.0, 5.0]).astype(complex)
        p = unfolded.InverseApproxParams(xi1=np.eye(3, dtype=complex),
                                         xi2=np.zeros((3, 3), dtype=complex),
                                         xi3=np.zeros((3, 3), dtype=complex))
        np.testing.assert_allclose(unfolded.inv_approx(A, p),
                                   np.diag([0.5, 0.25, 0.2]), atol=1e-15)

    def test_constant_term(self, rng):
        A = random_hpd(rng, 3)
        C = model.complex_gaussian(rng, (3, 3))
        p = unfolded.InverseApproxParams(xi1=np.zeros((3, 3), dtype=complex),
                                         xi2=np.zeros((3, 3), dtype=complex),
                                         xi3=C)
        np.testing.assert_allclose(unfolded.inv_approx(A, p), C)

    def test_taylor_anchor_is_exact_at_anchor(self, rng):
        for _ in range(10):
            A = random_hpd(rng, 4)
            p = unfolded.taylor_anchor(A)
            got = unfolded.inv_approx(A, p)
            want = np.linalg.inv(A)
            assert np.abs(got - want).max() < 1e-10

    def test_zero_diagonal_rejected(self):
        A = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        p = unfolded.InverseApproxParams.zeros(2)
        with pytest.raises(unfolded.ZeroDiagonal):
            unfolded.inv_approx(A, p)


class TestSharedAnchor:
    @pytest.mark.parametrize("count", [1, 2, 3])
    def test_exact_for_up_to_three_matrices(self, count):
        rng = model.child_rng(count)
        mats = [random_hpd(rng, 5) for _ in range(count)]
        p = unfolded.shared_inverse_anchor(mats)
        for A in mats:
            got = unfolded.inv_approx(A, p)
            want = np.linalg.inv(A)
            assert np.abs(got - want).max() < 1e-8

    def test_least_squares_beyond_three(self):
        rng = model.child_rng(9)
        mats = [random_hpd(rng, 3) for _ in range(6)]
        p = unfolded.shared_inverse_anchor(mats)
        resid = max(np.abs(unfolded.inv_approx(A, p) - np.linalg.inv(A)).max()
                    for A in mats)
        assert np.isfinite(resid)


class TestParameterCounts:
    def test_plain_layer_count(self):
        config, gm, ch = make_instance(0, K=2, J=2, D_per=2, N_t_per=3, N_r=4)
        net = unfolded.init_anchored("du-bca", 2, 1, ch, gm)
        want = 2 * 4 ** 2 + 4 ** 2 + 2 * (2 * 3) ** 2 + 2
        assert unfolded.layer_parameter_count(net) == want

    def test_enhanced_layer_count(self):
        config, gm, ch = make_instance(1, K=2, J=2, D_per=2, N_t_per=3, N_r=4)
        net = unfolded.init_anchored("du-bca-mm", 2, 3, ch, gm)
        want = 2 * 4 ** 2 + 4 ** 2 + 3 * (2 * (2 * 3) ** 2)
        assert unfolded.layer_parameter_count(net) == want

    def test_stored_count_matches_vector_length(self):
        config, gm, ch = make_instance(2, K=2)
        for variant, subs in (("du-bca", 1), ("du-bca-mm", 2)):
            net = unfolded.init_anchored(variant, 2, subs, ch, gm)
            x = unfolded.net_to_vector(net)
            assert x.size == 2 * unfolded.stored_parameter_count(net)


class TestPacking:
    def test_vector_roundtrip(self):
        config, gm, ch = make_instance(3, K=2)
        net = unfolded.init_anchored("du-bca-mm", 2, 2, ch, gm)
        x = unfolded.net_to_vector(net)
        rng = model.child_rng(4)
        y = x + rng.standard_normal(x.size)
        net2 = unfolded.net_with_vector(net, y)
        np.testing.assert_allclose(unfolded.net_to_vector(net2), y)
        # original untouched
        np.testing.assert_array_equal(unfolded.net_to_vector(net), x)

    def test_wrong_length_rejected(self):
        config, gm, ch = make_instance(5)
        net = unfolded.init_anchored("du-bca-mm", 1, 1, ch, gm)
        with pytest.raises(Exception):
            unfolded.net_with_vector(net, np.zeros(3))


class TestForward:
    def test_zero_layers_returns_init(self):
        config, gm, ch = make_instance(6)
        net = unfolded.UnfoldedNet(variant="du-bca-mm", layers=[],
                                   mm_sublayers=1, config=config)
        V0 = bca.random_feasible_precoder(ch, gm, 7)
        out = unfolded.du_forward(net, ch, gm, V_init=V0)
        for a, b in zip(out.vs, V0.vs):
            np.testing.assert_array_equal(a, b)

    def test_feasible_for_random_parameterizations(self):
        # 1000 random parameter draws across both variants stay feasible
        config, gm, ch = make_instance(8, K=2, J=2, rank=1)
        nets = {v: unfolded.init_anchored(v, 1, 1, ch, gm)
                for v in ("du-bca", "du-bca-mm")}
        rng = model.child_rng(9)
        for trial in range(1000):
            variant = "du-bca" if trial % 2 else "du-bca-mm"
            net = nets[variant]
            x = unfolded.net_to_vector(net)
            y = rng.standard_normal(x.size) * float(rng.uniform(0.1, 3.0))
            cand = unfolded.net_with_vector(net, y)
            out = unfolded.du_forward(cand, ch, gm)
            assert out.is_feasible(gm, tol=1e-9)

    def test_anchored_mm_layer_reproduces_one_iteration(self):
        for seed in range(6):
            config, gm, ch = make_instance(seed, K=2, J=2, rank=1, sigma=0.7)
            V0 = bca.random_feasible_precoder(ch, gm, seed + 3)
            net = unfolded.init_anchored("du-bca-mm", 1, 3, ch, gm, V_init=V0)
            out = unfolded.du_forward(net, ch, gm, V_init=V0)
            ref = mm.bca_mm_solve(V0, ch, gm, max_iters=1, inner_iters=3)
            for a, b in zip(out.vs, ref.V.vs):
                assert np.abs(a - b).max() < 1e-6

    def test_anchored_plain_layer_with_multipliers_reproduces_iteration(self):
        for seed in range(4):
            config, gm, ch = make_instance(seed + 20, K=2, J=2, rank=2,
                                           sigma=0.8)
            V0 = bca.random_feasible_precoder(ch, gm, seed)
            net = unfolded.init_anchored("du-bca", 1, 1, ch, gm, V_init=V0,
                                         lambda_mode="bisection")
            out = unfolded.du_forward(net, ch, gm, V_init=V0)
            ref = bca.bca_solve(V0, ch, gm, max_iters=1)
            for a, b in zip(out.vs, ref.V.vs):
                assert np.abs(a - b).max() < 1e-6

    def test_anchored_stack_tracks_solver(self):
        config, gm, ch = make_instance(30, K=1, J=2, D_per=4, N_t_per=4,
                                       N_r=4, rank=1, sigma=1.0)
        V0 = bca.random_feasible_precoder(ch, gm, 31)
        net = unfolded.init_anchored("du-bca-mm", 4, 2, ch, gm, V_init=V0)
        out = unfolded.du_forward(net, ch, gm, V_init=V0)
        ref = mm.bca_mm_solve(V0, ch, gm, max_iters=4, inner_iters=2)
        a = mcr2.channel_mcr2(out, ch, gm)
        b = ref.objective_trace[-1]
        assert abs(a - b) < 1e-6 * max(1.0, abs(b))


class TestSerialization:
    @pytest.mark.parametrize("variant,subs", [("du-bca", 1), ("du-bca-mm", 2)])
    def test_roundtrip(self, variant, subs, tmp_path):
        config, gm, ch = make_instance(10, K=2)
        net = unfolded.init_anchored(variant, 2, subs, ch, gm)
        path = tmp_path / "net.json"
        model.save_json(path, unfolded.net_to_dict(net))
        back = unfolded.net_from_dict(model.load_json(path))
        assert back.variant == net.variant
        assert back.mm_sublayers == net.mm_sublayers
        assert back.config == net.config
        np.testing.assert_array_equal(unfolded.net_to_vector(back),
                                      unfolded.net_to_vector(net))

    def test_schema_checked(self):
        with pytest.raises(ValueError):
            unfolded.net_from_dict({"schema": "nope"})


class TestSpsa:
    def test_quadratic_self_test(self):
        # minimize ||x - target||^2 under genuinely noisy evaluations (the
        # noise is keyed on the evaluation point, so the antithetic pair
        # does not cancel it)
        rng = model.child_rng(77)
        target = np.array([1.0, -2.0, 0.5, 3.0])

        def objective(x, t):
            key = int.from_bytes(np.asarray(x).tobytes()[:8], "little")
            noise = 1e-4 * float(model.child_rng(t, key).standard_normal())
            return float(np.sum((x - target) ** 2)) + noise

        cfg = unfolded.TrainerConfig(steps=5000, step_scale=0.4,
                                     perturb_scale=0.05)
        x, _ = unfolded.spsa_extremize(objective, np.zeros(4), cfg, rng,
                                       maximize=False)
        assert float(np.linalg.norm(x - target)) < 1e-3


class TestTrainUnfolded:
    def test_zero_steps_unchanged(self):
        config, gm, ch = make_instance(11, rank=1)
        net = unfolded.init_anchored("du-bca-mm", 2, 1, ch, gm)
        tc = unfolded.TrainerConfig(steps=0)
        out = unfolded.train_unfolded(net, [ch], [ch.sigma], gm, trainer_cfg=tc)
        np.testing.assert_array_equal(unfolded.net_to_vector(out),
                                      unfolded.net_to_vector(net))

    def test_anchored_init_matches_solver_objective(self):
        # single-channel training set anchored on that channel: the initial
        # training objective equals the L-iteration solver objective
        config, gm, ch = make_instance(12, K=2, rank=1, sigma=0.6)
        L, I = 3, 2
        net = unfolded.init_anchored("du-bca-mm", L, I, ch, gm)
        V = unfolded.du_forward(net, ch, gm)
        got = mcr2.channel_mcr2(V, ch, gm)
        ref = mm.bca_mm_solve(None, ch, gm, max_iters=L, inner_iters=I)
        assert abs(got - ref.objective_trace[-1]) < 1e-6

    def test_training_improves_mean_objective(self):
        config, gm, _ = make_instance(13, K=1, J=2, D_per=2, N_t_per=2,
                                      N_r=2, rank=1, sigma=0.7)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
        channels = [model.sample_channel(rician, config, 40 + i, sigma=0.7)
                    for i in range(8)]
        net = unfolded.init_anchored("du-bca-mm", 1, 1, channels[0], gm)
        precs = [[unfolded.du_forward(net, ch, gm)] for ch in channels]
        before = mcr2.channel_mcr2_batch(precs, channels, [0.7], gm)
        tc = unfolded.TrainerConfig(steps=300, batch_channels=4, eval_every=50)
        out = unfolded.train_unfolded(net, channels, [0.7], gm, trainer_cfg=tc,
                                      rng_seed=5)
        precs = [[unfolded.du_forward(out, ch, gm)] for ch in channels]
        after = mcr2.channel_mcr2_batch(precs, channels, [0.7], gm)
        assert after >= before
        assert after > before + 1e-6


class TestE2eFinetune:
    def _setup(self, seed=14):
        config, gm, _ = make_instance(seed, K=1, J=2, D_per=2, N_t_per=2,
                                      N_r=2, rank=1, sigma=0.8)
        rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
        channels = [model.sample_channel(rician, config, 60 + i, sigma=0.8)
                    for i in range(6)]
        net = unfolded.init_anchored("du-bca-mm", 1, 1, channels[0], gm)
        return config, gm, channels, net

    def test_zero_steps_unchanged(self):
        _, gm, channels, net = self._setup()
        tc = unfolded.TrainerConfig(steps=0)
        out = unfolded.e2e_finetune(net, gm, channels, [0.8], trainer_cfg=tc)
        np.testing.assert_array_equal(unfolded.net_to_vector(out),
                                      unfolded.net_to_vector(net))

    def test_eval_loss_consistent_with_inference_loss(self):
        _, gm, channels, net = self._setup()
        seed = 9
        got = unfolded.finetune_eval_loss(net, gm, channels, [0.8], seed,
                                          n_pairs=len(channels))
        batch = model.sample_features(gm, len(channels), False,
                                      model.child_rng(seed, 19))
        precs = [[unfolded.du_forward(net, ch.with_sigma(0.8), gm)]
                 for ch in channels]
        want = inference.e2e_loss(batch, precs, channels, [0.8], gm,
                                  unfolded.child_rng_seed_int(seed, 23),
                                  pairing="indexed")
        assert abs(got - want) < 1e-12

    def test_selection_loss_never_worse(self):
        _, gm, channels, net = self._setup()
        tc = unfolded.TrainerConfig(steps=120, batch_channels=4, eval_every=30)
        before = unfolded.finetune_eval_loss(net, gm, channels, [0.8], 3)
        out = unfolded.e2e_finetune(net, gm, channels, [0.8], trainer_cfg=tc,
                                    rng_seed=3)
        after = unfolded.finetune_eval_loss(out, gm, channels, [0.8], 3)
        assert after <= before + 1e-12

    def test_feature_batch_source(self):
        _, gm, channels, net = self._setup()
        batch = model.sample_features(gm, 64, False, 70)
        tc = unfolded.TrainerConfig(steps=30, batch_channels=3, eval_every=15)
        out = unfolded.e2e_finetune(net, batch, channels, [0.8],
                                    trainer_cfg=tc, rng_seed=4)
        assert unfolded.net_to_vector(out).shape == unfolded.net_to_vector(net).shape

    def test_rejects_bad_source(self):
        _, gm, channels, net = self._setup()
        with pytest.raises(TypeError):
            unfolded.e2e_finetune(net, "features", channels, [0.8])
